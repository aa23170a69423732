"""Replication-indexed random streams and sample pools.

Every (purpose, replication, stage) triple gets its own PCG64 stream
derived from the master seed through ``numpy.random.SeedSequence``'s
spawn keys, so a pool depends only on its indices and never on the order
or the process in which pools are drawn.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ModelError
from .model import NoiseSpec

SAA_POOLS = 0
TRAJECTORIES = 1


@dataclass(frozen=True)
class SeedPlan:
    seed: int
    horizon: int
    purpose: int = SAA_POOLS

    def __post_init__(self):
        if not 0 <= self.seed < 2**64:
            raise ConfigurationError("seed must be an unsigned 64-bit integer")
        if self.horizon < 1:
            raise ConfigurationError("horizon must be at least 1")

    def for_purpose(self, purpose: int) -> "SeedPlan":
        return SeedPlan(self.seed, self.horizon, purpose)


def derive_stream(plan: SeedPlan, replication: int, stage: int) -> np.random.Generator:
    if replication < 0:
        raise ConfigurationError(f"replication index must be >= 0, got {replication}")
    if not 1 <= stage <= plan.horizon:
        raise ConfigurationError(f"stage {stage} outside 1..{plan.horizon}")
    ss = np.random.SeedSequence(plan.seed, spawn_key=(plan.purpose, replication, stage))
    return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True, eq=False)
class SamplePool:
    """``samples[t-1]`` holds the (N, d) draws of xi_t for one replication."""

    replication: int
    samples: np.ndarray

    @property
    def horizon(self) -> int:
        return self.samples.shape[0]

    @property
    def size(self) -> int:
        return self.samples.shape[1]

    def stage(self, t: int) -> np.ndarray:
        """(N, d) draws for stage t."""
        return self.samples[t - 1]

    def scalar_stage(self, t: int) -> np.ndarray:
        return self.samples[t - 1, :, 0]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["stage", "index", "value"])
            for t in range(1, self.horizon + 1):
                for i, row in enumerate(self.stage(t)):
                    for v in row:
                        w.writerow([t, i, repr(float(v))])


def draw_pool(plan: SeedPlan, replication: int, N: int, noise: NoiseSpec) -> SamplePool:
    if N < 1:
        raise ConfigurationError(f"sample size must be >= 1, got {N}")
    if noise.horizon != plan.horizon:
        raise ConfigurationError("seed plan and noise disagree on the horizon")
    d = noise.dim
    out = np.empty((plan.horizon, N, d))
    for t in range(1, plan.horizon + 1):
        u = derive_stream(plan, replication, t).random((N, d))
        for j, comp in enumerate(noise.stage(t)):
            out[t - 1, :, j] = comp.ppf(u[:, j])
    out.setflags(write=False)
    return SamplePool(replication, out)


def noise_moments(noise: NoiseSpec) -> list[list[tuple[float, float, float]]]:
    """Central moments (mu2, mu3, mu4) of every component of every stage."""
    out = []
    for stage in noise.stages:
        for comp in stage:
            if getattr(comp, "kind", None) != "uniform":
                raise ModelError(f"no moment formulas for noise kind {getattr(comp, 'kind', None)!r}")
        out.append([comp.moments for comp in stage])
    return out
