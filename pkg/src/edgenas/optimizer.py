"""(1+1) evolutionary search over lineages, scoring, and analysis ops.

The scalar objective weights validation loss against measured inference
time (loss * 1000 + latency ms). Each of the population's lineages runs an
independent parent/offspring chain with strict elitism; candidates of one
round may be evaluated concurrently, and the history is assembled by
(round, lineage) so results are order-independent and deterministic for a
given seed and a deterministic evaluator.
"""

from __future__ import annotations

import csv
import hashlib
import math
import random
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable

from .search_space import DEFAULT_SPACE, HyperparamSpec, SearchSpaceDef, mutate, sample

LOSS_WEIGHT = 1000.0

HISTORY_CSV_COLUMNS = (
    "run_id,lineage,round,patch_t,patch_h,patch_w,embed_dim,d0,d1,d2,d3,"
    "h0,h1,h2,h3,mlp_ratio,lr,lr_step,lr_gamma,val_loss,inference_ms,score,accepted"
)


class EvaluationFailed(Exception):
    """Raised by evaluators to mark a candidate as failed (budget still spent)."""


def score(val_loss: float, inference_time_ms: float) -> float:
    """Scalarized objective: val_loss * 1000 + inference time in ms."""
    if val_loss < 0 or inference_time_ms < 0:
        raise ValueError("score inputs must be non-negative")
    return val_loss * LOSS_WEIGHT + inference_time_ms


def select(parent_score: float, offspring_score: float) -> bool:
    """Strict elitism: the offspring replaces the parent only if strictly better."""
    return offspring_score < parent_score


@dataclass(frozen=True)
class ScoreBreakdown:
    val_loss: float
    inference_time_ms: float
    score: float
    test_loss: float | None = None
    test_score: float | None = None

    @classmethod
    def from_losses(
        cls, val_loss: float, inference_time_ms: float, test_loss: float | None = None
    ) -> "ScoreBreakdown":
        return cls(
            val_loss=val_loss,
            inference_time_ms=inference_time_ms,
            score=score(val_loss, inference_time_ms),
            test_loss=test_loss,
            test_score=None if test_loss is None else score(test_loss, inference_time_ms),
        )


@dataclass(frozen=True)
class EvalContext:
    """Identity of one evaluation; carries the derived per-candidate seed."""

    lineage_id: int
    round_index: int
    eval_index: int
    seed: int


Evaluator = Callable[[HyperparamSpec, EvalContext], ScoreBreakdown]


@dataclass
class EvalRecord:
    lineage_id: int
    round_index: int
    eval_index: int
    spec: HyperparamSpec
    breakdown: ScoreBreakdown | None
    accepted: bool
    failed: bool = False
    error: str | None = None

    @property
    def score(self) -> float:
        return self.breakdown.score if self.breakdown is not None else math.inf


@dataclass(frozen=True)
class RunConfig:
    population_size: int = 8
    total_evaluations: int = 16
    seed: int = 0
    epochs: int = 2
    score_batch_size: int = 1
    measurement_timeout_s: float = 600.0

    def __post_init__(self):
        if self.population_size < 1:
            raise ValueError("population_size must be >= 1")
        if self.total_evaluations < self.population_size:
            raise ValueError("total_evaluations must be >= population_size")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")


@dataclass
class Lineage:
    lineage_id: int
    parent_spec: HyperparamSpec
    parent_score: float


@dataclass
class RunHistory:
    config: RunConfig
    records: list[EvalRecord] = field(default_factory=list)

    def ok_records(self) -> list[EvalRecord]:
        return [r for r in self.records if not r.failed]

    def best(self) -> EvalRecord | None:
        candidates = self.ok_records()
        if not candidates:
            return None
        return min(candidates, key=lambda r: (r.score, r.eval_index))

    def lineage_trace(self, lineage_id: int) -> list[EvalRecord]:
        return [r for r in self.records if r.lineage_id == lineage_id]


def derive_seed(*parts: Any) -> int:
    """Stable 64-bit seed from arbitrary labels (never the salted hash())."""
    digest = hashlib.sha256(":".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(digest[:8], "big")


def run_ea(
    config: RunConfig,
    evaluator: Evaluator,
    space: SearchSpaceDef = DEFAULT_SPACE,
    max_workers: int | None = None,
) -> RunHistory:
    """Run the (1+1) EA until the evaluation budget is exhausted.

    The initial parents count toward the budget. Mutations are drawn
    sequentially from the run RNG before each round's candidates are
    evaluated (possibly concurrently), so identical seeds give identical
    runs. A failing evaluator consumes budget: the candidate is recorded
    with infinite score and the parent stays.
    """
    rng = random.Random(config.seed)
    history = RunHistory(config=config)
    pool_size = max_workers or config.population_size

    def evaluate_batch(batch: list[tuple[HyperparamSpec, EvalContext]]) -> list[EvalRecord]:
        def run_one(item: tuple[HyperparamSpec, EvalContext]) -> EvalRecord:
            spec, ctx = item
            try:
                breakdown = evaluator(spec, ctx)
                return EvalRecord(ctx.lineage_id, ctx.round_index, ctx.eval_index, spec, breakdown, False)
            except Exception as exc:
                return EvalRecord(
                    ctx.lineage_id, ctx.round_index, ctx.eval_index, spec, None,
                    accepted=False, failed=True, error=str(exc),
                )

        if len(batch) == 1:
            return [run_one(batch[0])]
        with ThreadPoolExecutor(max_workers=min(pool_size, len(batch))) as pool:
            return list(pool.map(run_one, batch))

    population = config.population_size
    initial = []
    for lineage_id in range(population):
        spec = sample(rng, space)
        ctx = EvalContext(lineage_id, 0, lineage_id, derive_seed(config.seed, lineage_id, 0))
        initial.append((spec, ctx))
    parents: list[Lineage] = []
    for record in evaluate_batch(initial):
        record.accepted = True  # initial parents define their lineage
        history.records.append(record)
        parents.append(Lineage(record.lineage_id, record.spec, record.score))

    evals_done = population
    round_index = 1
    while evals_done < config.total_evaluations:
        width = min(population, config.total_evaluations - evals_done)
        batch = []
        for lineage_id in range(width):  # final partial round covers the first lineages
            offspring = mutate(parents[lineage_id].parent_spec, rng, space)
            ctx = EvalContext(
                lineage_id, round_index, evals_done + lineage_id,
                derive_seed(config.seed, lineage_id, round_index),
            )
            batch.append((offspring, ctx))
        for record in evaluate_batch(batch):
            lineage = parents[record.lineage_id]
            if not record.failed and select(lineage.parent_score, record.score):
                record.accepted = True
                lineage.parent_spec = record.spec
                lineage.parent_score = record.score
            history.records.append(record)
        evals_done += width
        round_index += 1
    return history


def pareto_front(points: Iterable[tuple[float, float, Any]]) -> list[Any]:
    """Ids of points undominated in (val_loss, inference_time_ms), by time asc.

    A point is dominated when another is <= in both coordinates and < in
    at least one; exact duplicates are all kept.
    """
    items = list(points)
    for val_loss, time_ms, _ in items:
        if not (math.isfinite(val_loss) and math.isfinite(time_ms)):
            raise ValueError("pareto_front requires finite coordinates")
    items.sort(key=lambda p: (p[1], p[0]))
    front: list[Any] = []
    best_loss = math.inf
    i = 0
    while i < len(items):
        j = i
        while j < len(items) and items[j][1] == items[i][1]:
            j += 1
        group_min = min(p[0] for p in items[i:j])
        if group_min < best_loss:
            front.extend(p[2] for p in items[i:j] if p[0] == group_min)
            best_loss = group_min
        i = j
    return front


_MEDIAN_FIELDS_CATEGORICAL = ("embed_dim", "mlp_ratio", "lr_step_size")
_MEDIAN_FIELDS_VECTOR = ("patch_size", "depths", "heads")
_MEDIAN_FIELDS_CONTINUOUS = ("learning_rate", "lr_gamma")


@dataclass(frozen=True)
class MedianReport:
    patch_size: tuple[int, int, int]
    embed_dim: int
    depths: tuple[int, int, int, int]
    heads: tuple[int, int, int, int]
    mlp_ratio: int
    learning_rate: float
    lr_step_size: int
    lr_gamma: float
    sample_count: int


def _entries_from_history(source) -> list[tuple[HyperparamSpec, float]]:
    if isinstance(source, RunHistory):
        return [(r.spec, r.score) for r in source.ok_records()]
    source = list(source)
    if source and isinstance(source[0], RunHistory):
        entries: list[tuple[HyperparamSpec, float]] = []
        for history in source:
            entries.extend((r.spec, r.score) for r in history.ok_records())
        return entries
    return [(spec, float(value)) for spec, value in source]


def top_decile_medians(source) -> MedianReport:
    """Per-field medians of the ceil(n/10) lowest-score candidates.

    Accepts a RunHistory, an iterable of RunHistory (merged), or bare
    (spec, score) pairs. Vector fields report element-wise medians;
    categorical fields use the lower median on even counts.
    """
    entries = _entries_from_history(source)
    if len(entries) < 10:
        raise ValueError(f"need at least 10 evaluated candidates, got {len(entries)}")
    k = math.ceil(len(entries) / 10)
    top = sorted(entries, key=lambda e: e[1])[:k]
    specs = [spec for spec, _ in top]

    def vector_median(name: str, length: int) -> tuple[int, ...]:
        return tuple(
            statistics.median_low([getattr(s, name)[i] for s in specs]) for i in range(length)
        )

    return MedianReport(
        patch_size=vector_median("patch_size", 3),
        embed_dim=statistics.median_low([s.embed_dim for s in specs]),
        depths=vector_median("depths", 4),
        heads=vector_median("heads", 4),
        mlp_ratio=statistics.median_low([s.mlp_ratio for s in specs]),
        learning_rate=statistics.median([s.learning_rate for s in specs]),
        lr_step_size=statistics.median_low([s.lr_step_size for s in specs]),
        lr_gamma=statistics.median([s.lr_gamma for s in specs]),
        sample_count=k,
    )


def write_history_csv(history: RunHistory, run_id: str, path) -> None:
    """One row per evaluation, stable column contract, byte-deterministic."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(HISTORY_CSV_COLUMNS.split(","))
        for r in sorted(history.records, key=lambda r: r.eval_index):
            s = r.spec
            ok = r.breakdown is not None
            writer.writerow(
                [
                    run_id,
                    r.lineage_id,
                    r.round_index,
                    s.patch_size[0], s.patch_size[1], s.patch_size[2],
                    s.embed_dim,
                    s.depths[0], s.depths[1], s.depths[2], s.depths[3],
                    s.heads[0], s.heads[1], s.heads[2], s.heads[3],
                    s.mlp_ratio,
                    repr(s.learning_rate),
                    s.lr_step_size,
                    repr(s.lr_gamma),
                    repr(r.breakdown.val_loss) if ok else "",
                    repr(r.breakdown.inference_time_ms) if ok else "",
                    repr(r.breakdown.score) if ok else "inf",
                    "true" if r.accepted else "false",
                ]
            )
