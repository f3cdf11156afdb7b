"""Declarative run configuration: one YAML file, flags override values.

Unknown keys are rejected so typos fail loudly. The store path can also
come from the EDGENAS_STORE environment variable; precedence is
flag > environment > file > default.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import yaml

from .cost_model import DeviceProfile, SurrogateConfig
from .edge_agent import AgentConfig
from .search_space import decode as decode_spec

ENV_STORE = "EDGENAS_STORE"
DEFAULT_STORE_PATH = "edgenas.sqlite"


class ConfigError(ValueError):
    pass


@dataclass
class RunSection:
    population: int = 8
    samples: int = 16
    seed: int = 0
    epochs: int = 2
    score_batch_size: int = 1
    measurement_timeout_s: float = 600.0
    poll_interval_ms: int = 250
    trainer_duration_s: float = 0.0
    trainer_command: list[str] | None = None


@dataclass
class AgentSection:
    config: AgentConfig = field(default_factory=AgentConfig)
    measurement_command: list[str] | None = None
    measurement_timeout_s: float = 300.0
    call_duration_s: float = 0.0


@dataclass
class ReportSection:
    history_csv: str | None = None
    output_dir: str = "reports"


@dataclass
class CliConfig:
    store_path: str = DEFAULT_STORE_PATH
    run: RunSection = field(default_factory=RunSection)
    agent: AgentSection = field(default_factory=AgentSection)
    device_profile: DeviceProfile = field(default_factory=DeviceProfile)
    surrogate: SurrogateConfig = field(default_factory=SurrogateConfig)
    report: ReportSection = field(default_factory=ReportSection)


def _check_keys(section: str, doc: dict, allowed: set[str]) -> None:
    unknown = set(doc) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in {section}: {', '.join(sorted(unknown))}")


def _get(doc: dict, key: str, kind, default):
    if key not in doc or doc[key] is None:
        return default
    value = doc[key]
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if kind is list:
        if not isinstance(value, list):
            raise ConfigError(f"{key}: expected a list, got {value!r}")
        return value
    if not isinstance(value, kind) or isinstance(value, bool) and kind is not bool:
        raise ConfigError(f"{key}: expected {kind.__name__}, got {value!r}")
    return value


def _command(doc: dict, key: str) -> list[str] | None:
    value = doc.get(key)
    if value is None:
        return None
    if isinstance(value, str):
        return value.split()
    if isinstance(value, list) and all(isinstance(v, str) for v in value):
        return list(value)
    raise ConfigError(f"{key}: expected a command string or list of strings")


def _parse_run(doc: dict) -> RunSection:
    _check_keys(
        "run", doc,
        {"population", "samples", "seed", "epochs", "score_batch_size", "measurement_timeout_s",
         "poll_interval_ms", "trainer_duration_s", "trainer_command"},
    )
    d = RunSection()
    return RunSection(
        population=_get(doc, "population", int, d.population),
        samples=_get(doc, "samples", int, d.samples),
        seed=_get(doc, "seed", int, d.seed),
        epochs=_get(doc, "epochs", int, d.epochs),
        score_batch_size=_get(doc, "score_batch_size", int, d.score_batch_size),
        measurement_timeout_s=_get(doc, "measurement_timeout_s", float, d.measurement_timeout_s),
        poll_interval_ms=_get(doc, "poll_interval_ms", int, d.poll_interval_ms),
        trainer_duration_s=_get(doc, "trainer_duration_s", float, d.trainer_duration_s),
        trainer_command=_command(doc, "trainer_command"),
    )


def _parse_agent(doc: dict) -> AgentSection:
    _check_keys(
        "agent", doc,
        {"device_type", "batch_sizes", "num_warmup", "num_timed_runs", "poll_interval_ms", "seed",
         "measurement_command", "measurement_timeout_s", "call_duration_s"},
    )
    base = AgentConfig()
    try:
        config = AgentConfig(
            device_type=_get(doc, "device_type", str, base.device_type),
            batch_sizes=tuple(_get(doc, "batch_sizes", list, list(base.batch_sizes))),
            num_warmup=_get(doc, "num_warmup", int, base.num_warmup),
            num_timed_runs=_get(doc, "num_timed_runs", int, base.num_timed_runs),
            poll_interval_ms=_get(doc, "poll_interval_ms", int, base.poll_interval_ms),
            seed=_get(doc, "seed", int, base.seed),
        )
    except ValueError as exc:
        raise ConfigError(f"agent: {exc}") from exc
    return AgentSection(
        config=config,
        measurement_command=_command(doc, "measurement_command"),
        measurement_timeout_s=_get(doc, "measurement_timeout_s", float, 300.0),
        call_duration_s=_get(doc, "call_duration_s", float, 0.0),
    )


def _parse_device_profile(doc: dict) -> DeviceProfile:
    _check_keys(
        "device_profile", doc,
        {"name", "base_latency_ms", "ms_per_gflop", "batch_efficiency", "noise_std_ms"},
    )
    d = DeviceProfile()
    try:
        return DeviceProfile(
            name=_get(doc, "name", str, d.name),
            base_latency_ms=_get(doc, "base_latency_ms", float, d.base_latency_ms),
            ms_per_gflop=_get(doc, "ms_per_gflop", float, d.ms_per_gflop),
            batch_efficiency=_get(doc, "batch_efficiency", float, d.batch_efficiency),
            noise_std_ms=_get(doc, "noise_std_ms", float, d.noise_std_ms),
        )
    except ValueError as exc:
        raise ConfigError(f"device_profile: {exc}") from exc


def _parse_surrogate(doc: dict) -> SurrogateConfig:
    _check_keys(
        "surrogate", doc,
        {"planted_optimum", "capacity_weight", "distance_weight", "noise_std", "epochs_half_life"},
    )
    d = SurrogateConfig()
    planted = d.planted_optimum
    if doc.get("planted_optimum") is not None:
        try:
            planted = decode_spec(json.dumps(doc["planted_optimum"]))
        except ValueError as exc:
            raise ConfigError(f"surrogate.planted_optimum: {exc}") from exc
    try:
        return SurrogateConfig(
            planted_optimum=planted,
            capacity_weight=_get(doc, "capacity_weight", float, d.capacity_weight),
            distance_weight=_get(doc, "distance_weight", float, d.distance_weight),
            noise_std=_get(doc, "noise_std", float, d.noise_std),
            epochs_half_life=_get(doc, "epochs_half_life", float, d.epochs_half_life),
        )
    except ValueError as exc:
        raise ConfigError(f"surrogate: {exc}") from exc


def _parse_report(doc: dict) -> ReportSection:
    _check_keys("report", doc, {"history_csv", "output_dir"})
    d = ReportSection()
    return ReportSection(
        history_csv=_get(doc, "history_csv", str, d.history_csv),
        output_dir=_get(doc, "output_dir", str, d.output_dir),
    )


def load_config(path: str | None = None) -> CliConfig:
    """Parse the config file (all sections optional); env var may set the store."""
    doc: dict = {}
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                loaded = yaml.safe_load(fh)
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"config file {path} is not valid YAML: {exc}") from exc
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"config file {path} must contain a mapping")
        doc = loaded
    _check_keys("config", doc, {"store", "run", "agent", "device_profile", "surrogate", "report"})
    store_doc = doc.get("store") or {}
    _check_keys("store", store_doc, {"path"})
    store_path = _get(store_doc, "path", str, DEFAULT_STORE_PATH)
    if ENV_STORE in os.environ:
        store_path = os.environ[ENV_STORE]
    return CliConfig(
        store_path=store_path,
        run=_parse_run(doc.get("run") or {}),
        agent=_parse_agent(doc.get("agent") or {}),
        device_profile=_parse_device_profile(doc.get("device_profile") or {}),
        surrogate=_parse_surrogate(doc.get("surrogate") or {}),
        report=_parse_report(doc.get("report") or {}),
    )
