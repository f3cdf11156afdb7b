"""Run orchestration with latency hiding.

Each candidate is posted to the store *before* its training starts and the
measurement is read back only *after* training ends, so the edge round
trip overlaps the training wall time instead of adding to it. The
coordinator owns no state outside the store; concurrent dispatches
serialize only through store transactions.
"""

from __future__ import annotations

import json
import logging
import random
import subprocess
import time
from dataclasses import dataclass
from enum import Enum
from typing import Protocol

from .cost_model import SurrogateConfig, synthetic_val_loss
from .optimizer import (
    EvalContext,
    EvaluationFailed,
    RunConfig,
    RunHistory,
    ScoreBreakdown,
    derive_seed,
    run_ea,
)
from .search_space import HyperparamSpec, default_config, encode, to_document_dict
from .store import ArchitectureRecord, BenchmarkResult, Role, RunMetadata, Store, utc_now

logger = logging.getLogger(__name__)

DEFAULT_POLL_INTERVAL_S = 0.25
BASELINE_RUN_ID = "baseline"


class TrainerError(Exception):
    pass


class TrainerBackend(Protocol):
    def train_and_validate(
        self, spec: HyperparamSpec, epochs: int, seed: int
    ) -> tuple[float, float | None]: ...


class SimulatedTrainer:
    """Surrogate-loss trainer with a configurable artificial duration."""

    def __init__(self, surrogate: SurrogateConfig | None = None, duration_s: float = 0.0):
        self.surrogate = surrogate if surrogate is not None else SurrogateConfig()
        self.duration_s = duration_s

    def train_and_validate(self, spec: HyperparamSpec, epochs: int, seed: int) -> tuple[float, float]:
        if self.duration_s > 0:
            time.sleep(self.duration_s)
        val_loss = synthetic_val_loss(spec, epochs, self.surrogate, random.Random(derive_seed(seed, "val")))
        test_loss = synthetic_val_loss(spec, epochs, self.surrogate, random.Random(derive_seed(seed, "test")))
        return val_loss, test_loss


class ExternalTrainer:
    """Trainer behind a command: spec document in, losses document out."""

    def __init__(self, command: list[str], timeout_s: float = 3600.0):
        if not command:
            raise ValueError("command must be non-empty")
        self.command = list(command)
        self.timeout_s = timeout_s

    def train_and_validate(self, spec: HyperparamSpec, epochs: int, seed: int) -> tuple[float, float | None]:
        payload = json.dumps({**to_document_dict(spec), "epochs": epochs, "seed": seed})
        try:
            proc = subprocess.run(
                self.command, input=payload, capture_output=True, text=True, timeout=self.timeout_s
            )
        except subprocess.TimeoutExpired as exc:
            raise TrainerError(f"trainer timed out after {self.timeout_s}s") from exc
        except OSError as exc:
            raise TrainerError(f"trainer failed to start: {exc}") from exc
        if proc.returncode != 0:
            raise TrainerError(f"trainer exited {proc.returncode}: {proc.stderr.strip()}")
        try:
            doc = json.loads(proc.stdout.strip())
            val_loss = float(doc["val_loss"])
            test_loss = float(doc["test_loss"]) if "test_loss" in doc else None
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise TrainerError(f"unparseable trainer output: {proc.stdout.strip()!r}") from exc
        return val_loss, test_loss


class CandidateStatus(Enum):
    OK = "ok"
    TRAINER_FAILED = "trainer_failed"
    MEASUREMENT_TIMEOUT = "measurement_timeout"


@dataclass(frozen=True)
class CandidateTimings:
    train_wall_ms: float
    measure_wait_ms: float
    total_wall_ms: float


@dataclass
class CandidateOutcome:
    architecture_id: int
    spec: HyperparamSpec
    breakdown: ScoreBreakdown | None
    timings: CandidateTimings
    status: CandidateStatus


@dataclass(frozen=True)
class DispatchSettings:
    """Store-facing knobs shared by every candidate of a run."""

    device_type: str = "sim-edge"
    batch_sizes: tuple[int, ...] = (1, 2, 4, 8)
    poll_interval_s: float = DEFAULT_POLL_INTERVAL_S


def dispatch_candidate(
    spec: HyperparamSpec,
    run_config: RunConfig,
    store: Store,
    trainer: TrainerBackend,
    run_id: str,
    lineage_id: int,
    candidate_seed: int,
    settings: DispatchSettings = DispatchSettings(),
) -> CandidateOutcome:
    """Post architecture, train, then read back the overlapped measurement.

    The measurement wait starts at the moment of posting: the agent works
    while the trainer runs, so total wall time tracks max(train, measure),
    not their sum.
    """
    if run_config.score_batch_size not in settings.batch_sizes:
        raise ValueError(
            f"score_batch_size {run_config.score_batch_size} not in measured batch sizes {settings.batch_sizes}"
        )
    started = time.perf_counter()
    architecture_id = store.insert_architecture(
        Role.OPTIMIZER,
        ArchitectureRecord(
            run_id=run_id,
            lineage_id=lineage_id,
            spec_document=encode(spec),
            device_targets=[settings.device_type],
        ),
    )
    try:
        val_loss, test_loss = trainer.train_and_validate(spec, run_config.epochs, candidate_seed)
    except Exception as exc:
        now = time.perf_counter()
        logger.warning("trainer failed for architecture %s: %s", architecture_id, exc)
        timings = CandidateTimings((now - started) * 1000.0, 0.0, (now - started) * 1000.0)
        return CandidateOutcome(architecture_id, spec, None, timings, CandidateStatus.TRAINER_FAILED)
    train_wall_ms = (time.perf_counter() - started) * 1000.0

    needed = set(settings.batch_sizes)
    deadline = started + run_config.measurement_timeout_s
    while True:
        measurements = store.get_measurements(architecture_id, settings.device_type)
        have = {m.batch_size for m in measurements}
        if needed <= have:
            break
        if time.perf_counter() >= deadline:
            now = time.perf_counter()
            logger.warning(
                "measurement timeout for architecture %s after %.1fs", architecture_id,
                run_config.measurement_timeout_s,
            )
            timings = CandidateTimings(train_wall_ms, (now - started) * 1000.0, (now - started) * 1000.0)
            return CandidateOutcome(architecture_id, spec, None, timings, CandidateStatus.MEASUREMENT_TIMEOUT)
        time.sleep(settings.poll_interval_s)
    measure_wait_ms = (time.perf_counter() - started) * 1000.0

    by_batch = {m.batch_size: m for m in measurements}
    inference_time_ms = by_batch[run_config.score_batch_size].latency_ms_mean
    breakdown = ScoreBreakdown.from_losses(val_loss, inference_time_ms, test_loss)
    store.insert_benchmark_result(
        Role.OPTIMIZER,
        BenchmarkResult(
            architecture_id=architecture_id,
            run_id=run_id,
            epoch=run_config.epochs,
            val_loss=val_loss,
            inference_time_ms=inference_time_ms,
            score=breakdown.score,
            split="validation",
        ),
    )
    if test_loss is not None:
        store.insert_benchmark_result(
            Role.OPTIMIZER,
            BenchmarkResult(
                architecture_id=architecture_id,
                run_id=run_id,
                epoch=run_config.epochs,
                val_loss=test_loss,
                inference_time_ms=inference_time_ms,
                score=breakdown.test_score,
                split="test",
            ),
        )
    total_wall_ms = (time.perf_counter() - started) * 1000.0
    timings = CandidateTimings(train_wall_ms, measure_wait_ms, total_wall_ms)
    return CandidateOutcome(architecture_id, spec, breakdown, timings, CandidateStatus.OK)


@dataclass
class RunSummary:
    run_id: str
    best_spec: HyperparamSpec | None
    best_breakdown: ScoreBreakdown | None
    ok_count: int
    failure_counts: dict[str, int]
    total_wall_ms: float
    history: RunHistory


def run_nas(
    run_config: RunConfig,
    store: Store,
    trainer: TrainerBackend,
    run_id: str | None = None,
    settings: DispatchSettings = DispatchSettings(),
    max_workers: int | None = None,
) -> RunSummary:
    """One full NAS run: EA driving dispatch_candidate, metadata persisted."""
    store.ping()
    run_id = run_id or default_run_id(run_config)
    started_at = utc_now()
    started = time.perf_counter()
    config_document = json.dumps(
        {
            "population_size": run_config.population_size,
            "total_evaluations": run_config.total_evaluations,
            "seed": run_config.seed,
            "epochs": run_config.epochs,
            "score_batch_size": run_config.score_batch_size,
            "device_type": settings.device_type,
            "batch_sizes": list(settings.batch_sizes),
        },
        sort_keys=True,
    )
    store.upsert_run_metadata(
        Role.OPTIMIZER,
        RunMetadata(run_id=run_id, config_document=config_document, seed=run_config.seed, started_at=started_at),
    )

    failure_counts: dict[str, int] = {}

    def evaluator(spec: HyperparamSpec, ctx: EvalContext) -> ScoreBreakdown:
        outcome = dispatch_candidate(
            spec, run_config, store, trainer,
            run_id=run_id, lineage_id=ctx.lineage_id, candidate_seed=ctx.seed, settings=settings,
        )
        if outcome.status is not CandidateStatus.OK:
            failure_counts[outcome.status.value] = failure_counts.get(outcome.status.value, 0) + 1
            raise EvaluationFailed(outcome.status.value)
        return outcome.breakdown

    history = run_ea(run_config, evaluator, max_workers=max_workers)
    best = history.best()
    total_wall_ms = (time.perf_counter() - started) * 1000.0
    summary_document = json.dumps(
        {
            "best_score": best.score if best else None,
            "ok_count": len(history.ok_records()),
            "failures": failure_counts,
            "total_wall_ms": total_wall_ms,
        },
        sort_keys=True,
    )
    store.upsert_run_metadata(
        Role.OPTIMIZER,
        RunMetadata(
            run_id=run_id,
            config_document=config_document,
            seed=run_config.seed,
            started_at=started_at,
            finished_at=utc_now(),
            summary_document=summary_document,
        ),
    )
    return RunSummary(
        run_id=run_id,
        best_spec=best.spec if best else None,
        best_breakdown=best.breakdown if best else None,
        ok_count=len(history.ok_records()),
        failure_counts=failure_counts,
        total_wall_ms=total_wall_ms,
        history=history,
    )


def default_run_id(run_config: RunConfig) -> str:
    return f"run-s{run_config.seed}-n{run_config.total_evaluations}-p{run_config.population_size}"


def evaluate_baseline(
    store: Store,
    trainer: TrainerBackend,
    run_config: RunConfig | None = None,
    settings: DispatchSettings = DispatchSettings(),
) -> CandidateOutcome:
    """Push the expert default through the identical pipeline (run id 'baseline')."""
    run_config = run_config or RunConfig(population_size=1, total_evaluations=1)
    store.ping()
    config_document = json.dumps(
        {"population_size": 0, "total_evaluations": 0, "seed": run_config.seed, "baseline": True},
        sort_keys=True,
    )
    store.upsert_run_metadata(
        Role.OPTIMIZER,
        RunMetadata(run_id=BASELINE_RUN_ID, config_document=config_document, seed=run_config.seed),
    )
    outcome = dispatch_candidate(
        default_config(), run_config, store, trainer,
        run_id=BASELINE_RUN_ID, lineage_id=0,
        candidate_seed=derive_seed(run_config.seed, "baseline"), settings=settings,
    )
    return outcome


def improvement_factor(baseline_time_ms: float, best_time_ms: float) -> float:
    """How many times faster the best model runs compared to the baseline."""
    if best_time_ms <= 0:
        raise ValueError("best_time_ms must be > 0")
    return baseline_time_ms / best_time_ms
