from __future__ import annotations

import random

import pytest

from edgenas.cost_model import DeviceProfile, SurrogateConfig, synthetic_latency, synthetic_val_loss
from edgenas.optimizer import ScoreBreakdown, derive_seed
from edgenas.store import Store


@pytest.fixture
def store(tmp_path):
    s = Store.initialize(str(tmp_path / "store.sqlite"))
    yield s
    s.close()


@pytest.fixture
def quiet_profile():
    return DeviceProfile(noise_std_ms=0.0)


@pytest.fixture
def quiet_surrogate():
    return SurrogateConfig(noise_std=0.0)


def make_sim_evaluator(profile=None, surrogate=None, epochs=2):
    """Store-free deterministic evaluator for exercising run_ea directly."""
    profile = profile or DeviceProfile(noise_std_ms=0.0)
    surrogate = surrogate or SurrogateConfig(noise_std=0.0)

    def evaluator(spec, ctx):
        val = synthetic_val_loss(spec, epochs, surrogate, random.Random(derive_seed(ctx.seed, "val")))
        latency = synthetic_latency(spec, 1, profile, random.Random(derive_seed(ctx.seed, "lat")))
        return ScoreBreakdown.from_losses(val, latency)

    return evaluator


def brute_force_front(points):
    """O(n^2) dominance filter used as the oracle for pareto_front."""
    front = []
    for i, (loss_i, time_i, pid_i) in enumerate(points):
        dominated = False
        for j, (loss_j, time_j, _) in enumerate(points):
            if i == j:
                continue
            if loss_j <= loss_i and time_j <= time_i and (loss_j < loss_i or time_j < time_i):
                dominated = True
                break
        if not dominated:
            front.append(pid_i)
    return front
