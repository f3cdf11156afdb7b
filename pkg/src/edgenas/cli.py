"""Operator entry points: one binary, five subcommands.

    edgenas init-store                  create the schema
    edgenas run --samples 16 ...        one NAS search (Table-style row out)
    edgenas baseline                    push the expert default through the pipeline
    edgenas agent [--once]              the edge measurement daemon
    edgenas report summary|pareto|medians --run-ids ...

All numeric output uses fixed formats: scores and losses with 4 decimals,
latency with 2 decimals plus "ms".
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import threading

from . import coordinator, edge_agent, optimizer
from .config import CliConfig, ConfigError, load_config
from .coordinator import (
    BASELINE_RUN_ID,
    CandidateStatus,
    DispatchSettings,
    ExternalTrainer,
    SimulatedTrainer,
)
from .edge_agent import AgentConfig, ExternalBackend, SimulatedBackend
from .optimizer import RunConfig, pareto_front, top_decile_medians, write_history_csv
from .search_space import decode
from .store import Role, SchemaVersionError, Store, StoreError

logger = logging.getLogger(__name__)

SUMMARY_HEADER = ("samples", "val_score", "val_loss", "inference_time", "test_score", "test_loss")


def _fmt_score(value: float | None) -> str:
    return "-" if value is None else f"{value:.4f}"


def _fmt_latency(value: float | None) -> str:
    return "-" if value is None else f"{value:.2f}ms"


def _print_summary_rows(rows: list[tuple]) -> None:
    table = [SUMMARY_HEADER] + [
        (
            str(samples),
            _fmt_score(val_score),
            _fmt_score(val_loss),
            _fmt_latency(time_ms),
            _fmt_score(test_score),
            _fmt_score(test_loss),
        )
        for samples, val_score, val_loss, time_ms, test_score, test_loss in rows
    ]
    widths = [max(len(row[i]) for row in table) for i in range(len(SUMMARY_HEADER))]
    for row in table:
        print("  ".join(cell.ljust(width) for cell, width in zip(row, widths)).rstrip())


def _open_store(path: str) -> Store:
    try:
        return Store(path)
    except (StoreError, SchemaVersionError) as exc:
        raise SystemExit(f"error: {exc}")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="edgenas", description="Hardware-aware NAS at desk scale.")
    parser.add_argument("--config", help="YAML config file")
    parser.add_argument("--store", help="store path (overrides config file and EDGENAS_STORE)")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("init-store", help="create the store schema (idempotent)")

    run = sub.add_parser("run", help="execute one NAS search")
    run.add_argument("--samples", type=int, help="total evaluation budget")
    run.add_argument("--population", type=int, help="number of parallel lineages")
    run.add_argument("--seed", type=int, help="run seed")
    run.add_argument("--mode", choices=["simulate", "external"], default="simulate")
    run.add_argument("--run-id", help="explicit run id (default derived from seed/budget)")
    run.add_argument("--device-type", help="edge device type to target")
    run.add_argument("--epochs", type=int, help="training epochs per candidate")
    run.add_argument("--history-csv", help="write the evaluation trace CSV here")
    run.add_argument(
        "--no-embedded-agent", action="store_true",
        help="do not start the in-process agent; an external agent must serve measurements",
    )

    baseline = sub.add_parser("baseline", help="evaluate the expert default configuration")
    baseline.add_argument("--mode", choices=["simulate", "external"], default="simulate")
    baseline.add_argument("--device-type", help="edge device type to target")
    baseline.add_argument(
        "--no-embedded-agent", action="store_true",
        help="do not start the in-process agent",
    )

    report = sub.add_parser("report", help="summaries, Pareto CSVs, median analysis")
    report.add_argument("kind", choices=["summary", "pareto", "medians"])
    report.add_argument("--run-ids", nargs="+", required=True)
    report.add_argument("--out", help="output directory for CSV reports")

    agent = sub.add_parser("agent", help="run the edge measurement agent")
    agent.add_argument("--device-type", help="override the configured device type")
    agent.add_argument("--once", action="store_true", help="drain the current backlog and exit")
    return parser


def _store_path(args: argparse.Namespace, cfg: CliConfig) -> str:
    return args.store if args.store else cfg.store_path


def _cmd_init_store(args: argparse.Namespace, cfg: CliConfig) -> int:
    path = _store_path(args, cfg)
    try:
        with Store.initialize(path) as store:
            print(f"store at {path} ready (schema version {store.schema_version})")
    except (StoreError, SchemaVersionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


def _make_trainer(mode: str, cfg: CliConfig):
    if mode == "external":
        if not cfg.run.trainer_command:
            raise SystemExit("error: run.trainer_command must be configured for --mode external")
        return ExternalTrainer(cfg.run.trainer_command)
    return SimulatedTrainer(cfg.surrogate, duration_s=cfg.run.trainer_duration_s)


def _make_backend(cfg: CliConfig):
    if cfg.agent.measurement_command:
        return ExternalBackend(cfg.agent.measurement_command, timeout_s=cfg.agent.measurement_timeout_s)
    return SimulatedBackend(cfg.device_profile, seed=cfg.agent.config.seed, call_duration_s=cfg.agent.call_duration_s)


class _EmbeddedAgent:
    """In-process agent thread for single-command simulate runs."""

    def __init__(self, store: Store, agent_config: AgentConfig, backend):
        self._stop = threading.Event()
        self._thread = threading.Thread(
            target=edge_agent.run_agent_loop,
            args=(agent_config, store, self._stop, backend),
            name="embedded-agent",
            daemon=True,
        )

    def __enter__(self) -> "_EmbeddedAgent":
        self._thread.start()
        return self

    def __exit__(self, *exc) -> None:
        self._stop.set()
        self._thread.join(timeout=30.0)


def _agent_config(cfg: CliConfig, device_type: str | None) -> AgentConfig:
    base = cfg.agent.config
    if device_type and device_type != base.device_type:
        return AgentConfig(
            device_type=device_type,
            batch_sizes=base.batch_sizes,
            num_warmup=base.num_warmup,
            num_timed_runs=base.num_timed_runs,
            poll_interval_ms=base.poll_interval_ms,
            seed=base.seed,
        )
    return base


def _cmd_run(args: argparse.Namespace, cfg: CliConfig) -> int:
    samples = args.samples if args.samples is not None else cfg.run.samples
    population = args.population if args.population is not None else cfg.run.population
    seed = args.seed if args.seed is not None else cfg.run.seed
    epochs = args.epochs if args.epochs is not None else cfg.run.epochs
    try:
        run_config = RunConfig(
            population_size=population,
            total_evaluations=samples,
            seed=seed,
            epochs=epochs,
            score_batch_size=cfg.run.score_batch_size,
            measurement_timeout_s=cfg.run.measurement_timeout_s,
        )
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    agent_config = _agent_config(cfg, args.device_type)
    settings = DispatchSettings(
        device_type=agent_config.device_type,
        batch_sizes=agent_config.batch_sizes,
        poll_interval_s=cfg.run.poll_interval_ms / 1000.0,
    )
    trainer = _make_trainer(args.mode, cfg)
    with _open_store(_store_path(args, cfg)) as store:
        embed = args.mode == "simulate" and not args.no_embedded_agent
        agent_cm = _EmbeddedAgent(store, agent_config, _make_backend(cfg)) if embed else _NullContext()
        with agent_cm:
            try:
                summary = coordinator.run_nas(
                    run_config, store, trainer, run_id=args.run_id, settings=settings
                )
            except StoreError as exc:
                print(f"error: {exc}", file=sys.stderr)
                return 1
        history_csv = args.history_csv or cfg.report.history_csv
        if history_csv:
            write_history_csv(summary.history, summary.run_id, history_csv)
        best = summary.best_breakdown
        if best is None:
            print(f"run {summary.run_id}: no successful evaluations "
                  f"(failures: {summary.failure_counts})", file=sys.stderr)
            return 1
        _print_summary_rows(
            [(samples, best.score, best.val_loss, best.inference_time_ms, best.test_score, best.test_loss)]
        )
    return 0


class _NullContext:
    def __enter__(self):
        return self

    def __exit__(self, *exc):
        return None


def _cmd_baseline(args: argparse.Namespace, cfg: CliConfig) -> int:
    agent_config = _agent_config(cfg, args.device_type)
    settings = DispatchSettings(
        device_type=agent_config.device_type,
        batch_sizes=agent_config.batch_sizes,
        poll_interval_s=cfg.run.poll_interval_ms / 1000.0,
    )
    run_config = RunConfig(
        population_size=1,
        total_evaluations=1,
        seed=cfg.run.seed,
        epochs=cfg.run.epochs,
        score_batch_size=cfg.run.score_batch_size,
        measurement_timeout_s=cfg.run.measurement_timeout_s,
    )
    trainer = _make_trainer(args.mode, cfg)
    with _open_store(_store_path(args, cfg)) as store:
        embed = args.mode == "simulate" and not args.no_embedded_agent
        agent_cm = _EmbeddedAgent(store, agent_config, _make_backend(cfg)) if embed else _NullContext()
        with agent_cm:
            outcome = coordinator.evaluate_baseline(store, trainer, run_config, settings=settings)
    if outcome.status is not CandidateStatus.OK:
        print(f"baseline evaluation failed: {outcome.status.value}", file=sys.stderr)
        return 1
    b = outcome.breakdown
    _print_summary_rows([(0, b.score, b.val_loss, b.inference_time_ms, b.test_score, b.test_loss)])
    return 0


def _best_entries(store: Store, run_id: str):
    """(best validation row, matching test row or None) for one run."""
    rows = store.query_results(run_id)
    validation = [r for r, _ in rows if r.split == "validation"]
    if not validation:
        return None, None
    best = min(validation, key=lambda r: (r.score, r.id))
    tests = [r for r, _ in rows if r.split == "test" and r.architecture_id == best.architecture_id]
    best_test = min(tests, key=lambda r: (r.score, r.id)) if tests else None
    return best, best_test


def _require_runs(store: Store, run_ids: list[str]) -> None:
    known = store.list_run_ids()
    unknown = [r for r in run_ids if r not in known]
    if unknown:
        raise SystemExit(
            f"error: unknown run id(s) {', '.join(unknown)}; known runs: {', '.join(known) or '(none)'}"
        )


def _report_summary(store: Store, run_ids: list[str]) -> int:
    by_budget: dict[int, list[tuple]] = {}
    for run_id in run_ids:
        metadata = store.get_run_metadata(run_id)
        budget = json.loads(metadata.config_document).get("total_evaluations", 0)
        best, best_test = _best_entries(store, run_id)
        if best is None:
            print(f"warning: run {run_id} has no results, skipped", file=sys.stderr)
            continue
        by_budget.setdefault(budget, []).append(
            (
                best.score,
                best.val_loss,
                best.inference_time_ms,
                best_test.score if best_test else None,
                best_test.val_loss if best_test else None,
            )
        )
    if not by_budget:
        print("error: no results in the given runs", file=sys.stderr)
        return 1

    def mean_or_none(values):
        values = [v for v in values if v is not None]
        return sum(values) / len(values) if values else None

    rows = []
    for budget in sorted(by_budget):
        entries = by_budget[budget]
        rows.append(
            (
                budget,
                mean_or_none([e[0] for e in entries]),
                mean_or_none([e[1] for e in entries]),
                mean_or_none([e[2] for e in entries]),
                mean_or_none([e[3] for e in entries]),
                mean_or_none([e[4] for e in entries]),
            )
        )
    _print_summary_rows(rows)
    baseline_time = next((r[3] for r in rows if r[0] == 0), None)
    if baseline_time is not None:
        for budget, _, _, time_ms, _, _ in rows:
            if budget != 0 and time_ms:
                factor = coordinator.improvement_factor(baseline_time, time_ms)
                print(f"inference speedup vs baseline at {budget} samples: x{factor:.2f}")
    return 0


def _report_pareto(store: Store, run_ids: list[str], out_dir: str) -> int:
    os.makedirs(out_dir, exist_ok=True)
    for run_id in run_ids:
        rows = [r for r, _ in store.query_results(run_id) if r.split == "validation"]
        points = [(r.val_loss, r.inference_time_ms, r.id) for r in rows]
        front = set(pareto_front(points)) if points else set()
        path = os.path.join(out_dir, f"pareto_{run_id}.csv")
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["val_loss", "inference_time_ms", "dominated"])
            for r in rows:
                writer.writerow([repr(r.val_loss), repr(r.inference_time_ms),
                                 "false" if r.id in front else "true"])
        print(path)
    return 0


def _report_medians(store: Store, run_ids: list[str]) -> int:
    entries = []
    for run_id in run_ids:
        for result, architecture in store.query_results(run_id):
            if result.split == "validation":
                entries.append((decode(architecture.spec_document), result.score))
    try:
        report = top_decile_medians(entries)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"top-decile medians over {len(entries)} candidates ({report.sample_count} selected):")
    print(f"  patch_size     {list(report.patch_size)}")
    print(f"  embed_dim      {report.embed_dim}")
    print(f"  depths         {list(report.depths)}")
    print(f"  heads          {list(report.heads)}")
    print(f"  mlp_ratio      {report.mlp_ratio}")
    print(f"  learning_rate  {report.learning_rate:.4g}")
    print(f"  lr_step_size   {report.lr_step_size}")
    print(f"  lr_gamma       {report.lr_gamma:.4f}")
    return 0


def _cmd_report(args: argparse.Namespace, cfg: CliConfig) -> int:
    with _open_store(_store_path(args, cfg)) as store:
        _require_runs(store, args.run_ids)
        if args.kind == "summary":
            return _report_summary(store, args.run_ids)
        if args.kind == "pareto":
            return _report_pareto(store, args.run_ids, args.out or cfg.report.output_dir)
        return _report_medians(store, args.run_ids)


def _cmd_agent(args: argparse.Namespace, cfg: CliConfig) -> int:
    agent_config = _agent_config(cfg, args.device_type)
    backend = _make_backend(cfg)
    stop = threading.Event()
    with _open_store(_store_path(args, cfg)) as store:
        try:
            processed = edge_agent.run_agent_loop(agent_config, store, stop, backend, once=args.once)
        except KeyboardInterrupt:
            logger.info("agent interrupted; shutting down")
            return 0
    if args.once:
        print(f"processed {processed} architecture(s)")
    return 0


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=os.environ.get("EDGENAS_LOG", "WARNING"),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    handlers = {
        "init-store": _cmd_init_store,
        "run": _cmd_run,
        "baseline": _cmd_baseline,
        "report": _cmd_report,
        "agent": _cmd_agent,
    }
    try:
        return handlers[args.command](args, cfg)
    except SystemExit as exc:
        if isinstance(exc.code, str):
            print(exc.code, file=sys.stderr)
            return 1
        raise


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    sys.exit(main())
