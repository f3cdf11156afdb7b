"""Hyperparameter domain: candidate specs, sampling, mutation, validation.

The domain covers the architectural knobs of a four-stage windowed video
transformer (patch size, embedding width, stage depths, head counts, MLP
ratio) plus three optimizer knobs (learning rate, scheduler step, decay
factor). All functions are pure; the caller owns the RNG.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, replace

PATCH_CHOICES = (2, 4)
EMBED_DIM_CHOICES = (24, 48)
DEPTH_CHOICES = (1, 2, 4)
HEAD_CHOICES = (3, 6, 12, 24)
MLP_RATIO_CHOICES = (1, 2, 3, 4)
LR_BOUNDS = (1e-5, 1.0)
LR_GAMMA_BOUNDS = (0.1, 0.9)
LR_STEP_CHOICES = (10, 20, 40)

GAMMA_EPS = 1e-6
MUTATION_RATE = 1.0 / 8.0
LR_MUTATION_SIGMA = 0.5  # std of the log10 multiplier
GAMMA_MUTATION_SIGMA = 0.1

#: Stable document field names; external trainers and the store rely on them.
FIELD_NAMES = (
    "patch_size",
    "embed_dim",
    "depths",
    "heads",
    "mlp_ratio",
    "learning_rate",
    "lr_step_size",
    "lr_gamma",
)

_VECTOR_LEN = {"patch_size": 3, "depths": 4, "heads": 4}


class DocumentError(ValueError):
    """A spec document is missing a field or has an ill-typed one."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass(frozen=True)
class HyperparamSpec:
    """One candidate: architecture plus optimizer hyperparameters."""

    patch_size: tuple[int, int, int]
    embed_dim: int
    depths: tuple[int, int, int, int]
    heads: tuple[int, int, int, int]
    mlp_ratio: int
    learning_rate: float
    lr_step_size: int
    lr_gamma: float


@dataclass(frozen=True)
class SearchSpaceDef:
    """Per-field range descriptors of the sampling domain."""

    patch_choices: tuple[int, ...] = PATCH_CHOICES
    embed_dim_choices: tuple[int, ...] = EMBED_DIM_CHOICES
    depth_choices: tuple[int, ...] = DEPTH_CHOICES
    head_choices: tuple[int, ...] = HEAD_CHOICES
    mlp_ratio_choices: tuple[int, ...] = MLP_RATIO_CHOICES
    lr_bounds: tuple[float, float] = LR_BOUNDS  # log-uniform, closed
    lr_gamma_bounds: tuple[float, float] = LR_GAMMA_BOUNDS  # uniform, open
    lr_step_choices: tuple[int, ...] = LR_STEP_CHOICES

    def __post_init__(self):
        for name in (
            "patch_choices",
            "embed_dim_choices",
            "depth_choices",
            "head_choices",
            "mlp_ratio_choices",
            "lr_step_choices",
        ):
            if not getattr(self, name):
                raise ValueError(f"{name} must be non-empty")
        if not self.lr_bounds[0] < self.lr_bounds[1]:
            raise ValueError("lr_bounds must be ordered")
        if not self.lr_gamma_bounds[0] < self.lr_gamma_bounds[1]:
            raise ValueError("lr_gamma_bounds must be ordered")


DEFAULT_SPACE = SearchSpaceDef()


def default_config() -> HyperparamSpec:
    """The expert-chosen baseline configuration."""
    return HyperparamSpec(
        patch_size=(2, 4, 4),
        embed_dim=96,
        depths=(2, 2, 6, 2),
        heads=(3, 6, 12, 24),
        mlp_ratio=4,
        learning_rate=1e-4,
        lr_step_size=10,
        lr_gamma=0.5,
    )


def _clamp_gamma(value: float, space: SearchSpaceDef) -> float:
    lo, hi = space.lr_gamma_bounds
    return min(max(value, lo + GAMMA_EPS), hi - GAMMA_EPS)


def sample(rng: random.Random, space: SearchSpaceDef = DEFAULT_SPACE) -> HyperparamSpec:
    """Draw one spec: categorical fields uniform, lr log-uniform, gamma uniform."""
    log_lo = math.log10(space.lr_bounds[0])
    log_hi = math.log10(space.lr_bounds[1])
    return HyperparamSpec(
        patch_size=tuple(rng.choice(space.patch_choices) for _ in range(3)),
        embed_dim=rng.choice(space.embed_dim_choices),
        depths=tuple(rng.choice(space.depth_choices) for _ in range(4)),
        heads=tuple(rng.choice(space.head_choices) for _ in range(4)),
        mlp_ratio=rng.choice(space.mlp_ratio_choices),
        learning_rate=10.0 ** rng.uniform(log_lo, log_hi),
        lr_step_size=rng.choice(space.lr_step_choices),
        lr_gamma=_clamp_gamma(rng.uniform(*space.lr_gamma_bounds), space),
    )


def _resample_excluding(rng: random.Random, choices: tuple[int, ...], current: int) -> int:
    pool = [c for c in choices if c != current]
    return rng.choice(pool) if pool else current


def _mutate_field(spec: HyperparamSpec, name: str, rng: random.Random, space: SearchSpaceDef) -> HyperparamSpec:
    if name == "patch_size":
        idx = rng.randrange(3)
        value = list(spec.patch_size)
        value[idx] = _resample_excluding(rng, space.patch_choices, value[idx])
        return replace(spec, patch_size=tuple(value))
    if name == "embed_dim":
        return replace(spec, embed_dim=_resample_excluding(rng, space.embed_dim_choices, spec.embed_dim))
    if name == "depths":
        idx = rng.randrange(4)
        value = list(spec.depths)
        value[idx] = _resample_excluding(rng, space.depth_choices, value[idx])
        return replace(spec, depths=tuple(value))
    if name == "heads":
        idx = rng.randrange(4)
        value = list(spec.heads)
        value[idx] = _resample_excluding(rng, space.head_choices, value[idx])
        return replace(spec, heads=tuple(value))
    if name == "mlp_ratio":
        return replace(spec, mlp_ratio=_resample_excluding(rng, space.mlp_ratio_choices, spec.mlp_ratio))
    if name == "learning_rate":
        lr = spec.learning_rate * 10.0 ** rng.gauss(0.0, LR_MUTATION_SIGMA)
        return replace(spec, learning_rate=min(max(lr, space.lr_bounds[0]), space.lr_bounds[1]))
    if name == "lr_step_size":
        return replace(spec, lr_step_size=_resample_excluding(rng, space.lr_step_choices, spec.lr_step_size))
    if name == "lr_gamma":
        return replace(spec, lr_gamma=_clamp_gamma(spec.lr_gamma + rng.gauss(0.0, GAMMA_MUTATION_SIGMA), space))
    raise KeyError(name)


def _project_strict(spec: HyperparamSpec, rng: random.Random, space: SearchSpaceDef) -> HyperparamSpec:
    """Resample any field still outside the strict ranges (baseline parents)."""
    if spec.embed_dim not in space.embed_dim_choices:
        spec = replace(spec, embed_dim=rng.choice(space.embed_dim_choices))
    if any(d not in space.depth_choices for d in spec.depths):
        spec = replace(
            spec,
            depths=tuple(
                d if d in space.depth_choices else rng.choice(space.depth_choices) for d in spec.depths
            ),
        )
    if any(p not in space.patch_choices for p in spec.patch_size):
        spec = replace(
            spec,
            patch_size=tuple(
                p if p in space.patch_choices else rng.choice(space.patch_choices) for p in spec.patch_size
            ),
        )
    if any(h not in space.head_choices for h in spec.heads):
        spec = replace(
            spec,
            heads=tuple(h if h in space.head_choices else rng.choice(space.head_choices) for h in spec.heads),
        )
    if spec.mlp_ratio not in space.mlp_ratio_choices:
        spec = replace(spec, mlp_ratio=rng.choice(space.mlp_ratio_choices))
    if spec.lr_step_size not in space.lr_step_choices:
        spec = replace(spec, lr_step_size=rng.choice(space.lr_step_choices))
    lr = min(max(spec.learning_rate, space.lr_bounds[0]), space.lr_bounds[1])
    if lr != spec.learning_rate:
        spec = replace(spec, learning_rate=lr)
    gamma = _clamp_gamma(spec.lr_gamma, space)
    if gamma != spec.lr_gamma:
        spec = replace(spec, lr_gamma=gamma)
    return spec


def mutate(parent: HyperparamSpec, rng: random.Random, space: SearchSpaceDef = DEFAULT_SPACE) -> HyperparamSpec:
    """One offspring: each field mutates with probability 1/8, at least one change.

    The mutation mask is drawn over the 8 fields and redrawn until non-empty.
    Vector fields mutate one stage entry at a time; categorical resampling
    excludes the current value; learning_rate takes a log-normal step and
    lr_gamma a Gaussian step, both clamped to their ranges. Offspring always
    satisfy the strict ranges, even for a baseline parent.
    """
    for _ in range(1000):
        mask = [rng.random() < MUTATION_RATE for _ in FIELD_NAMES]
        if not any(mask):
            continue
        offspring = parent
        for name, hit in zip(FIELD_NAMES, mask):
            if hit:
                offspring = _mutate_field(offspring, name, rng, space)
        offspring = _project_strict(offspring, rng, space)
        if offspring != parent:
            return offspring
    raise RuntimeError("mutation failed to produce a distinct offspring")


def _check_vector(name: str, value, choices, violations: list[str]) -> None:
    expected_len = _VECTOR_LEN[name]
    if not isinstance(value, tuple) or len(value) != expected_len:
        violations.append(f"{name}: expected {expected_len} entries, got {value!r}")
        return
    for i, entry in enumerate(value):
        if entry not in choices:
            violations.append(f"{name}[{i}]: {entry} not in {sorted(choices)}")


def validate(spec: HyperparamSpec, mode: str = "strict") -> list[str]:
    """Range-check every field; returns violations (empty means valid).

    In "baseline" mode a field also passes when it equals the default
    configuration's value, so the expert baseline flows through the same
    pipeline despite sitting outside the sampling ranges.
    """
    if mode not in ("strict", "baseline"):
        raise ValueError(f"unknown validation mode {mode!r}")
    space = DEFAULT_SPACE
    baseline = default_config() if mode == "baseline" else None
    violations: list[str] = []

    def admissible(name: str) -> bool:
        return baseline is not None and getattr(spec, name) == getattr(baseline, name)

    if not admissible("patch_size"):
        _check_vector("patch_size", spec.patch_size, space.patch_choices, violations)
    if not admissible("embed_dim") and spec.embed_dim not in space.embed_dim_choices:
        violations.append(f"embed_dim: {spec.embed_dim} not in {sorted(space.embed_dim_choices)}")
    if not admissible("depths"):
        _check_vector("depths", spec.depths, space.depth_choices, violations)
    if not admissible("heads"):
        _check_vector("heads", spec.heads, space.head_choices, violations)
    if not admissible("mlp_ratio") and spec.mlp_ratio not in space.mlp_ratio_choices:
        violations.append(f"mlp_ratio: {spec.mlp_ratio} not in {sorted(space.mlp_ratio_choices)}")
    if not admissible("learning_rate"):
        lo, hi = space.lr_bounds
        if not (isinstance(spec.learning_rate, float) and lo <= spec.learning_rate <= hi):
            violations.append(f"learning_rate: {spec.learning_rate!r} not in [{lo}, {hi}]")
    if not admissible("lr_step_size") and spec.lr_step_size not in space.lr_step_choices:
        violations.append(f"lr_step_size: {spec.lr_step_size} not in {sorted(space.lr_step_choices)}")
    if not admissible("lr_gamma"):
        lo, hi = space.lr_gamma_bounds
        if not (isinstance(spec.lr_gamma, float) and lo < spec.lr_gamma < hi):
            violations.append(f"lr_gamma: {spec.lr_gamma!r} not in open ({lo}, {hi})")
    return violations


def to_document_dict(spec: HyperparamSpec) -> dict:
    """Plain-dict form with the published field names (lists for vectors)."""
    return {
        "patch_size": list(spec.patch_size),
        "embed_dim": spec.embed_dim,
        "depths": list(spec.depths),
        "heads": list(spec.heads),
        "mlp_ratio": spec.mlp_ratio,
        "learning_rate": spec.learning_rate,
        "lr_step_size": spec.lr_step_size,
        "lr_gamma": spec.lr_gamma,
    }


def encode(spec: HyperparamSpec) -> str:
    """Portable JSON document; decode(encode(s)) == s bit-exactly."""
    return json.dumps(to_document_dict(spec), separators=(",", ":"))


def _require_int(doc: dict, field: str) -> int:
    value = doc[field]
    if isinstance(value, bool) or not isinstance(value, int):
        raise DocumentError(field, f"expected integer, got {value!r}")
    return value


def _require_int_vector(doc: dict, field: str) -> tuple[int, ...]:
    value = doc[field]
    expected_len = _VECTOR_LEN[field]
    if not isinstance(value, list) or len(value) != expected_len:
        raise DocumentError(field, f"expected list of {expected_len} integers, got {value!r}")
    for entry in value:
        if isinstance(entry, bool) or not isinstance(entry, int):
            raise DocumentError(field, f"expected integer entries, got {entry!r}")
    return tuple(value)


def _require_real(doc: dict, field: str) -> float:
    value = doc[field]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise DocumentError(field, f"expected real, got {value!r}")
    return float(value)


def decode(document: str) -> HyperparamSpec:
    """Parse a spec document; raises DocumentError naming the bad field."""
    try:
        doc = json.loads(document)
    except json.JSONDecodeError as exc:
        raise DocumentError("<document>", f"not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise DocumentError("<document>", "expected a JSON object")
    for field in FIELD_NAMES:
        if field not in doc:
            raise DocumentError(field, "missing")
    return HyperparamSpec(
        patch_size=_require_int_vector(doc, "patch_size"),
        embed_dim=_require_int(doc, "embed_dim"),
        depths=_require_int_vector(doc, "depths"),
        heads=_require_int_vector(doc, "heads"),
        mlp_ratio=_require_int(doc, "mlp_ratio"),
        learning_rate=_require_real(doc, "learning_rate"),
        lr_step_size=_require_int(doc, "lr_step_size"),
        lr_gamma=_require_real(doc, "lr_gamma"),
    )
