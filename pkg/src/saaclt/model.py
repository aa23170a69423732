"""Problem data model and tabulated value functions on 1-D state grids.

Value functions and policies live on uniform grids and are evaluated by
piecewise-linear interpolation; outside the grid the nearest end segment
is extended linearly, which keeps convex functions convex.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, DomainError, ModelError


# --------------------------------------------------------------------------
# Noise
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class UniformNoise:
    """Uniform distribution on ``[low, high]``."""

    low: float
    high: float
    kind: str = field(default="uniform", init=False)

    def __post_init__(self):
        if not (math.isfinite(self.low) and math.isfinite(self.high)):
            raise ModelError("noise support must be bounded")
        if not self.low < self.high:
            raise ModelError(f"need low < high, got [{self.low}, {self.high}]")

    @property
    def mean(self) -> float:
        return 0.5 * (self.low + self.high)

    @property
    def moments(self) -> tuple[float, float, float]:
        """Central moments (mu2, mu3, mu4)."""
        w = self.high - self.low
        return w * w / 12.0, 0.0, w**4 / 80.0

    def ppf(self, u):
        """Inverse CDF, applied to uniforms on [0, 1)."""
        return self.low + (self.high - self.low) * np.asarray(u, dtype=float)


@dataclass(frozen=True)
class NoiseSpec:
    """Per-stage noise: ``stages[t-1]`` is the tuple of independent components of xi_t."""

    stages: tuple[tuple[UniformNoise, ...], ...]

    def __post_init__(self):
        if not self.stages:
            raise ModelError("noise needs at least one stage")
        dims = {len(s) for s in self.stages}
        if len(dims) != 1 or 0 in dims:
            raise ModelError("every stage must have the same, positive, number of components")

    @classmethod
    def iid(cls, components: UniformNoise | Sequence[UniformNoise], horizon: int) -> "NoiseSpec":
        if isinstance(components, UniformNoise):
            components = (components,)
        return cls(tuple(tuple(components) for _ in range(horizon)))

    @property
    def horizon(self) -> int:
        return len(self.stages)

    @property
    def dim(self) -> int:
        return len(self.stages[0])

    def stage(self, t: int) -> tuple[UniformNoise, ...]:
        if not 1 <= t <= self.horizon:
            raise ConfigurationError(f"stage {t} outside 1..{self.horizon}")
        return self.stages[t - 1]

    def scalar(self, t: int) -> UniformNoise:
        comps = self.stage(t)
        if len(comps) != 1:
            raise ModelError("grid engine supports scalar noise only")
        return comps[0]


# --------------------------------------------------------------------------
# Grids, value functions, policies
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class StateGrid:
    lo: float
    hi: float
    n: int

    def __post_init__(self):
        if not (math.isfinite(self.lo) and math.isfinite(self.hi)) or not self.lo < self.hi:
            raise ConfigurationError(f"grid needs finite lo < hi, got [{self.lo}, {self.hi}]")
        if self.n < 2:
            raise ConfigurationError(f"grid needs at least 2 nodes, got {self.n}")

    @property
    def h(self) -> float:
        return (self.hi - self.lo) / (self.n - 1)

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.n)

    def covers(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return (x >= self.lo) & (x <= self.hi)


def build_grid(lo: float, hi: float, n_nodes: int) -> StateGrid:
    return StateGrid(float(lo), float(hi), int(n_nodes))


def hat_weights(grid: StateGrid, x) -> tuple[np.ndarray, np.ndarray]:
    """Left segment index and fraction for linear inter/extrapolation.

    ``f(x) = (1 - frac) * f[idx] + frac * f[idx + 1]``; ``frac`` falls outside
    [0, 1] off the grid, which is the edge-slope extrapolation.
    """
    x = np.asarray(x, dtype=float)
    s = (x - grid.lo) / grid.h
    idx = np.clip(np.floor(s), 0, grid.n - 2).astype(np.intp)
    return idx, s - idx


def _interp(grid: StateGrid, values: np.ndarray, x):
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise DomainError("grid evaluation at a non-finite state")
    nodes = grid.nodes
    out = np.interp(x, nodes, values)
    lo = x < nodes[0]
    hi = x > nodes[-1]
    if lo.any():
        out[lo] = values[0] + (x[lo] - nodes[0]) * (values[1] - values[0]) / (nodes[1] - nodes[0])
    if hi.any():
        out[hi] = values[-1] + (x[hi] - nodes[-1]) * (values[-1] - values[-2]) / (nodes[-1] - nodes[-2])
    return out


@dataclass(frozen=True, eq=False)
class GridValueFunction:
    """Value function tabulated at the nodes of ``grid`` for stage ``stage``."""

    stage: int
    grid: StateGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.grid.n,):
            raise ModelError(f"expected {self.grid.n} values, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ModelError(f"non-finite value at stage {self.stage}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def nodes(self) -> np.ndarray:
        return self.grid.nodes

    def __call__(self, x):
        return grid_eval(self, x)


@dataclass(frozen=True, eq=False)
class GridPolicy:
    stage: int
    grid: StateGrid
    controls: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.controls, dtype=float)
        if u.shape != (self.grid.n,):
            raise ModelError(f"expected {self.grid.n} controls, got shape {u.shape}")
        u.setflags(write=False)
        object.__setattr__(self, "controls", u)

    @property
    def nodes(self) -> np.ndarray:
        return self.grid.nodes

    def __call__(self, x):
        return _interp(self.grid, self.controls, x)


def grid_eval(vf: GridValueFunction, x):
    """Evaluate a tabulated function; scalars in, scalars out."""
    out = _interp(vf.grid, vf.values, np.atleast_1d(x))
    return float(out[0]) if np.ndim(x) == 0 else out


# --------------------------------------------------------------------------
# Stages and problems
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class StageModel:
    """One stage of a scalar control problem.

    Dynamics ``F(x, u, xi) = a*x + b*u + g*xi``; cost
    ``q*x**2 + r*u**2 + c*u + shortage*[-F]_+ + holding*[F]_+``.
    The penalty terms act on the post-decision level, which covers
    backorder/holding costs of inventory models.
    """

    a: float = 1.0
    b: float = 1.0
    g: float = 1.0
    q: float = 0.0
    r: float = 0.0
    c: float = 0.0
    shortage: float = 0.0
    holding: float = 0.0
    u_lo: float = 0.0
    u_hi: float = 1.0
    convex: bool = True

    def __post_init__(self):
        vals = (self.a, self.b, self.g, self.q, self.r, self.c, self.shortage, self.holding)
        if not all(math.isfinite(v) for v in vals):
            raise ModelError("stage coefficients must be finite")
        if not (math.isfinite(self.u_lo) and math.isfinite(self.u_hi)) or self.u_lo > self.u_hi:
            raise ModelError(f"bad control interval [{self.u_lo}, {self.u_hi}]")
        if self.convex and min(self.q, self.r, self.shortage, self.holding) < 0:
            raise ModelError("convexity flag set but a quadratic/penalty weight is negative")

    def dynamics(self, x, u, xi):
        return self.a * np.asarray(x) + self.b * np.asarray(u) + self.g * np.asarray(xi)

    def cost(self, x, u, xi):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        y = self.dynamics(x, u, xi)
        return (self.q * x * x + self.r * u * u + self.c * u
                + self.shortage * np.maximum(-y, 0.0) + self.holding * np.maximum(y, 0.0))

    @property
    def params(self) -> tuple[float, ...]:
        return (self.a, self.b, self.g, self.q, self.r, self.c, self.shortage, self.holding)


@dataclass(frozen=True)
class QuadraticCost:
    """Terminal cost ``q2*x**2 + q1*x + q0``."""

    q2: float = 0.0
    q1: float = 0.0
    q0: float = 0.0

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return self.q2 * x * x + self.q1 * x + self.q0


@dataclass(frozen=True)
class ProblemInstance:
    """Finite-horizon scalar control problem; ``grids[t-1]`` is the grid of stage t (t = 1..T+1)."""

    stages: tuple[StageModel, ...]
    terminal: QuadraticCost
    x1: float
    grids: tuple[StateGrid, ...]
    noise: NoiseSpec

    def __post_init__(self):
        T = len(self.stages)
        if T < 1:
            raise ConfigurationError("horizon must be at least 1")
        if len(self.grids) != T + 1:
            raise ConfigurationError(f"need {T + 1} grids (stages 1..T+1), got {len(self.grids)}")
        if self.noise.horizon != T:
            raise ConfigurationError("noise horizon does not match the number of stages")
        if self.noise.dim != 1:
            raise ModelError("grid problems take scalar noise")

    @property
    def horizon(self) -> int:
        return len(self.stages)

    def stage(self, t: int) -> StageModel:
        if not 1 <= t <= self.horizon:
            raise ConfigurationError(f"stage {t} outside 1..{self.horizon}")
        return self.stages[t - 1]

    def grid(self, t: int) -> StateGrid:
        if not 1 <= t <= self.horizon + 1:
            raise ConfigurationError(f"grid index {t} outside 1..{self.horizon + 1}")
        return self.grids[t - 1]

    def coverage_gaps(self, controls=None) -> list[str]:
        """Report where F_t(grid_t corners, u, noise corners) leaves grid_{t+1}.

        ``controls`` maps t to a sequence of representative controls; the
        default probes the midpoint of the control interval.
        """
        gaps = []
        for t in range(1, self.horizon + 1):
            st = self.stage(t)
            g, gn = self.grid(t), self.grid(t + 1)
            us = controls.get(t) if controls else [0.5 * (st.u_lo + st.u_hi)]
            nz = self.noise.scalar(t)
            ys = [st.dynamics(x, u, xi) for x in (g.lo, g.hi) for u in us for xi in (nz.low, nz.high)]
            lo, hi = float(np.min(ys)), float(np.max(ys))
            if lo < gn.lo or hi > gn.hi:
                gaps.append(f"stage {t}: image [{lo:.4g}, {hi:.4g}] not inside grid [{gn.lo:.4g}, {gn.hi:.4g}]")
        return gaps


def terminal_value(problem: ProblemInstance) -> GridValueFunction:
    T = problem.horizon
    grid = problem.grid(T + 1)
    vals = np.asarray(problem.terminal(grid.nodes), dtype=float)
    if not np.all(np.isfinite(vals)):
        raise ModelError("terminal cost is not finite on the grid")
    return GridValueFunction(T + 1, grid, vals)
