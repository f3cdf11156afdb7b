"""Shared relational store: the only channel between optimizer and edge agent.

Backed by a single-file SQLite database so that desk-scale runs need zero
ops; the DDL in schema.sql is portable SQL, so a hosted relational server
is a drop-in alternative. Write permissions follow the deployment's grant
model: the optimizer account inserts architectures and benchmark results,
the edge account inserts measurements only, and everyone reads everything.
Every public operation executes as one transaction; a handle is safe to
share across threads.
"""

from __future__ import annotations

import enum
import json
import os
import sqlite3
import threading
from dataclasses import dataclass
from datetime import datetime, timezone
from importlib import resources

from .search_space import DocumentError, decode, validate

SCHEMA_VERSION = 1
SCORE_TOLERANCE = 1e-9


class StoreError(Exception):
    pass


class PermissionDeniedError(StoreError):
    pass


class ConsistencyError(StoreError):
    pass


class UnknownArchitectureError(StoreError):
    pass


class SchemaVersionError(StoreError):
    pass


class ValidationError(StoreError):
    pass


class Role(enum.Enum):
    OPTIMIZER = "optimizer"
    EDGE_AGENT = "edge_agent"
    READER = "reader"


def utc_now() -> str:
    """UTC timestamp, millisecond precision, lexicographically sortable."""
    return datetime.now(timezone.utc).isoformat(timespec="milliseconds")


@dataclass
class ArchitectureRecord:
    run_id: str
    lineage_id: int
    spec_document: str
    device_targets: list[str]
    created_at: str | None = None
    id: int | None = None


@dataclass
class EdgeMeasurement:
    architecture_id: int
    device_type: str
    batch_size: int
    latency_ms_mean: float
    latency_ms_std: float
    num_runs: int
    num_warmup: int
    memory_mb: float = 0.0
    cpu_util: float = 0.0
    gpu_util: float = 0.0
    measured_at: str | None = None
    id: int | None = None


@dataclass
class BenchmarkResult:
    architecture_id: int
    run_id: str
    epoch: int
    val_loss: float
    inference_time_ms: float
    score: float
    split: str = "validation"
    created_at: str | None = None
    id: int | None = None


@dataclass
class RunMetadata:
    run_id: str
    config_document: str
    seed: int | None = None
    started_at: str | None = None
    finished_at: str | None = None
    summary_document: str | None = None


def _schema_sql() -> str:
    return resources.files("edgenas").joinpath("schema.sql").read_text(encoding="utf-8")


class Store:
    """Thread-safe handle on one store; every operation is atomic."""

    def __init__(self, path: str, create: bool = False):
        if not create and path != ":memory:" and not os.path.exists(path):
            raise StoreError(f"store at {path} is not initialized; run init-store first")
        self.path = path
        self._lock = threading.RLock()
        self._conn = sqlite3.connect(path, check_same_thread=False, timeout=30.0)
        self._conn.row_factory = sqlite3.Row
        self._conn.execute("PRAGMA foreign_keys = ON")
        self._conn.execute("PRAGMA busy_timeout = 30000")
        self._conn.execute("PRAGMA journal_mode = WAL")
        version = self._conn.execute("PRAGMA user_version").fetchone()[0]
        if version > SCHEMA_VERSION:
            self._conn.close()
            raise SchemaVersionError(
                f"store at {path} has schema version {version}, newer than supported {SCHEMA_VERSION}"
            )
        if version < SCHEMA_VERSION:
            if not create:
                self._conn.close()
                if self._tables_exist(path):
                    raise SchemaVersionError(f"store at {path} has an unversioned, unrecognized schema")
                raise StoreError(f"store at {path} is not initialized; run init-store first")
            with self._lock, self._conn:
                self._conn.executescript(_schema_sql())
                self._conn.execute(f"PRAGMA user_version = {SCHEMA_VERSION}")

    @staticmethod
    def _tables_exist(path: str) -> bool:
        conn = sqlite3.connect(path)
        try:
            row = conn.execute("SELECT COUNT(*) FROM sqlite_master WHERE type = 'table'").fetchone()
            return row[0] > 0
        finally:
            conn.close()

    @classmethod
    def initialize(cls, path: str) -> "Store":
        """Create (or idempotently re-open) a store with the current schema."""
        return cls(path, create=True)

    @property
    def schema_version(self) -> int:
        with self._lock:
            return self._conn.execute("PRAGMA user_version").fetchone()[0]

    def close(self) -> None:
        with self._lock:
            self._conn.close()

    def __enter__(self) -> "Store":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def ping(self) -> None:
        """Raise StoreError if the store is unreachable or uninitialized."""
        try:
            with self._lock:
                self._conn.execute("SELECT 1 FROM network_architecture LIMIT 1").fetchone()
        except sqlite3.Error as exc:
            raise StoreError(f"store at {self.path} not reachable: {exc}") from exc

    @staticmethod
    def _require(role: Role, allowed: Role, table: str) -> None:
        if role != allowed:
            raise PermissionDeniedError(f"role {role.value!r} may not insert into {table}")

    # -- network_architecture ------------------------------------------------

    def insert_architecture(self, role: Role, record: ArchitectureRecord) -> int:
        self._require(role, Role.OPTIMIZER, "network_architecture")
        try:
            spec = decode(record.spec_document)
        except DocumentError as exc:
            raise ValidationError(f"spec_document undecodable: {exc}") from exc
        violations = validate(spec, "baseline")
        if violations:
            raise ValidationError("spec_document invalid: " + "; ".join(violations))
        if not record.device_targets:
            raise ValidationError("device_targets must be non-empty")
        created_at = record.created_at or utc_now()
        targets = json.dumps(sorted(record.device_targets))
        with self._lock, self._conn:
            self._conn.execute(
                "INSERT OR IGNORE INTO network_architecture"
                " (run_id, lineage_id, spec_document, device_targets, created_at)"
                " VALUES (?, ?, ?, ?, ?)",
                (record.run_id, record.lineage_id, record.spec_document, targets, created_at),
            )
            row = self._conn.execute(
                "SELECT id FROM network_architecture WHERE run_id = ? AND lineage_id = ? AND spec_document = ?",
                (record.run_id, record.lineage_id, record.spec_document),
            ).fetchone()
        return row["id"]

    def poll_unmeasured(
        self,
        role: Role,
        device_type: str,
        batch_sizes: tuple[int, ...] = (1, 2, 4, 8),
        limit: int | None = None,
    ) -> list[ArchitectureRecord]:
        """Architectures targeting device_type that miss any configured batch size."""
        del role  # every role may read
        placeholders = ",".join("?" for _ in batch_sizes)
        sql = (
            "SELECT a.* FROM network_architecture a"
            " WHERE EXISTS (SELECT 1 FROM json_each(a.device_targets) jt WHERE jt.value = ?)"
            " AND (SELECT COUNT(*) FROM edge_measurement m"
            "      WHERE m.architecture_id = a.id AND m.device_type = ?"
            f"        AND m.batch_size IN ({placeholders})) < ?"
            " ORDER BY a.created_at ASC, a.id ASC"
        )
        params: list = [device_type, device_type, *batch_sizes, len(batch_sizes)]
        if limit is not None:
            sql += " LIMIT ?"
            params.append(limit)
        with self._lock, self._conn:
            rows = self._conn.execute(sql, params).fetchall()
        return [self._architecture_from_row(r) for r in rows]

    @staticmethod
    def _architecture_from_row(row: sqlite3.Row) -> ArchitectureRecord:
        return ArchitectureRecord(
            run_id=row["run_id"],
            lineage_id=row["lineage_id"],
            spec_document=row["spec_document"],
            device_targets=json.loads(row["device_targets"]),
            created_at=row["created_at"],
            id=row["id"],
        )

    def get_architecture(self, architecture_id: int) -> ArchitectureRecord | None:
        with self._lock, self._conn:
            row = self._conn.execute(
                "SELECT * FROM network_architecture WHERE id = ?", (architecture_id,)
            ).fetchone()
        return self._architecture_from_row(row) if row else None

    # -- edge_measurement ----------------------------------------------------

    def insert_measurement(self, role: Role, measurement: EdgeMeasurement) -> int:
        self._require(role, Role.EDGE_AGENT, "edge_measurement")
        if measurement.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")
        if measurement.latency_ms_mean <= 0:
            raise ValidationError("latency_ms_mean must be > 0")
        if measurement.latency_ms_std < 0:
            raise ValidationError("latency_ms_std must be >= 0")
        measured_at = measurement.measured_at or utc_now()
        try:
            with self._lock, self._conn:
                self._conn.execute(
                    "INSERT INTO edge_measurement"
                    " (architecture_id, device_type, batch_size, latency_ms_mean, latency_ms_std,"
                    "  num_runs, num_warmup, memory_mb, cpu_util, gpu_util, measured_at)"
                    " VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?)"
                    " ON CONFLICT(architecture_id, device_type, batch_size) DO UPDATE SET"
                    "  latency_ms_mean = excluded.latency_ms_mean,"
                    "  latency_ms_std = excluded.latency_ms_std,"
                    "  num_runs = excluded.num_runs,"
                    "  num_warmup = excluded.num_warmup,"
                    "  memory_mb = excluded.memory_mb,"
                    "  cpu_util = excluded.cpu_util,"
                    "  gpu_util = excluded.gpu_util,"
                    "  measured_at = excluded.measured_at",
                    (
                        measurement.architecture_id,
                        measurement.device_type,
                        measurement.batch_size,
                        measurement.latency_ms_mean,
                        measurement.latency_ms_std,
                        measurement.num_runs,
                        measurement.num_warmup,
                        measurement.memory_mb,
                        measurement.cpu_util,
                        measurement.gpu_util,
                        measured_at,
                    ),
                )
                row = self._conn.execute(
                    "SELECT id FROM edge_measurement"
                    " WHERE architecture_id = ? AND device_type = ? AND batch_size = ?",
                    (measurement.architecture_id, measurement.device_type, measurement.batch_size),
                ).fetchone()
        except sqlite3.IntegrityError as exc:
            if "FOREIGN KEY" in str(exc):
                raise UnknownArchitectureError(
                    f"architecture {measurement.architecture_id} does not exist"
                ) from exc
            raise ValidationError(str(exc)) from exc
        return row["id"]

    def get_measurements(self, architecture_id: int, device_type: str) -> list[EdgeMeasurement]:
        with self._lock, self._conn:
            rows = self._conn.execute(
                "SELECT * FROM edge_measurement WHERE architecture_id = ? AND device_type = ?"
                " ORDER BY batch_size ASC",
                (architecture_id, device_type),
            ).fetchall()
        return [
            EdgeMeasurement(
                architecture_id=r["architecture_id"],
                device_type=r["device_type"],
                batch_size=r["batch_size"],
                latency_ms_mean=r["latency_ms_mean"],
                latency_ms_std=r["latency_ms_std"],
                num_runs=r["num_runs"],
                num_warmup=r["num_warmup"],
                memory_mb=r["memory_mb"],
                cpu_util=r["cpu_util"],
                gpu_util=r["gpu_util"],
                measured_at=r["measured_at"],
                id=r["id"],
            )
            for r in rows
        ]

    # -- benchmark_result ----------------------------------------------------

    def insert_benchmark_result(self, role: Role, result: BenchmarkResult) -> int:
        self._require(role, Role.OPTIMIZER, "benchmark_result")
        expected = result.val_loss * 1000.0 + result.inference_time_ms
        if abs(result.score - expected) > SCORE_TOLERANCE:
            raise ConsistencyError(
                f"score {result.score!r} != val_loss*1000 + inference_time_ms = {expected!r}"
            )
        if result.split not in ("validation", "test"):
            raise ValidationError(f"split must be 'validation' or 'test', got {result.split!r}")
        created_at = result.created_at or utc_now()
        try:
            with self._lock, self._conn:
                cur = self._conn.execute(
                    "INSERT INTO benchmark_result"
                    " (architecture_id, run_id, epoch, val_loss, inference_time_ms, score, split, created_at)"
                    " VALUES (?, ?, ?, ?, ?, ?, ?, ?)",
                    (
                        result.architecture_id,
                        result.run_id,
                        result.epoch,
                        result.val_loss,
                        result.inference_time_ms,
                        result.score,
                        result.split,
                        created_at,
                    ),
                )
        except sqlite3.IntegrityError as exc:
            if "FOREIGN KEY" in str(exc):
                raise UnknownArchitectureError(f"architecture {result.architecture_id} does not exist") from exc
            raise ValidationError(str(exc)) from exc
        return cur.lastrowid

    def query_results(self, run_id: str) -> list[tuple[BenchmarkResult, ArchitectureRecord]]:
        """Full evaluation trace of a run, joined with the architectures."""
        with self._lock, self._conn:
            rows = self._conn.execute(
                "SELECT b.id AS b_id, b.architecture_id, b.run_id AS b_run_id, b.epoch, b.val_loss,"
                "       b.inference_time_ms, b.score, b.split, b.created_at AS b_created_at, a.*"
                " FROM benchmark_result b JOIN network_architecture a ON b.architecture_id = a.id"
                " WHERE b.run_id = ? ORDER BY b.id ASC",
                (run_id,),
            ).fetchall()
        out = []
        for r in rows:
            result = BenchmarkResult(
                architecture_id=r["architecture_id"],
                run_id=r["b_run_id"],
                epoch=r["epoch"],
                val_loss=r["val_loss"],
                inference_time_ms=r["inference_time_ms"],
                score=r["score"],
                split=r["split"],
                created_at=r["b_created_at"],
                id=r["b_id"],
            )
            out.append((result, self._architecture_from_row(r)))
        return out

    # -- run_metadata ----------------------------------------------------------

    def upsert_run_metadata(self, role: Role, metadata: RunMetadata) -> None:
        self._require(role, Role.OPTIMIZER, "run_metadata")
        with self._lock, self._conn:
            self._conn.execute(
                "INSERT INTO run_metadata (run_id, config_document, seed, started_at, finished_at, summary_document)"
                " VALUES (?, ?, ?, ?, ?, ?)"
                " ON CONFLICT(run_id) DO UPDATE SET"
                "  config_document = excluded.config_document,"
                "  seed = excluded.seed,"
                "  started_at = excluded.started_at,"
                "  finished_at = excluded.finished_at,"
                "  summary_document = excluded.summary_document",
                (
                    metadata.run_id,
                    metadata.config_document,
                    metadata.seed,
                    metadata.started_at or utc_now(),
                    metadata.finished_at,
                    metadata.summary_document,
                ),
            )

    def get_run_metadata(self, run_id: str) -> RunMetadata | None:
        with self._lock, self._conn:
            row = self._conn.execute("SELECT * FROM run_metadata WHERE run_id = ?", (run_id,)).fetchone()
        if row is None:
            return None
        return RunMetadata(
            run_id=row["run_id"],
            config_document=row["config_document"],
            seed=row["seed"],
            started_at=row["started_at"],
            finished_at=row["finished_at"],
            summary_document=row["summary_document"],
        )

    def list_run_ids(self) -> list[str]:
        with self._lock, self._conn:
            rows = self._conn.execute("SELECT run_id FROM run_metadata ORDER BY run_id").fetchall()
        return [r["run_id"] for r in rows]
