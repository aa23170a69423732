"""Periodic-review inventory with backorders.

Stock evolves as ``x' = x + u - xi`` with order ``u >= 0`` and demand
``xi ~ Uniform(0, xi_max)``; each stage costs ``c*u + b*[xi - (x+u)]_+ +
h*[x + u - xi]_+``. Optimal policies order up to a level and are
recovered from tabulated policies by ``basestock_extract``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ModelError
from .model import (
    GridPolicy,
    GridValueFunction,
    NoiseSpec,
    ProblemInstance,
    QuadraticCost,
    StageModel,
    UniformNoise,
    build_grid,
    terminal_value,
)
from .sampling import SamplePool

log = logging.getLogger(__name__)


def _per_stage(val, T, name):
    arr = np.broadcast_to(np.asarray(val, dtype=float), (T,)).copy()
    if not np.all(np.isfinite(arr)):
        raise ModelError(f"{name} must be finite")
    return tuple(float(v) for v in arr)


@dataclass(frozen=True)
class InventoryParams:
    """Per-stage costs and demand bounds; scalars are broadcast over the horizon."""

    horizon: int = 5
    order_cost: tuple = 1.0
    backorder_cost: tuple = 3.0
    holding_cost: tuple = 1.0
    demand_max: tuple = 2.0
    x1: float = 1.0

    def __post_init__(self):
        T = self.horizon
        if T < 1:
            raise ConfigurationError("horizon must be at least 1")
        c = _per_stage(self.order_cost, T, "order_cost")
        b = _per_stage(self.backorder_cost, T, "backorder_cost")
        h = _per_stage(self.holding_cost, T, "holding_cost")
        d = _per_stage(self.demand_max, T, "demand_max")
        for t in range(T):
            if not b[t] > c[t] > 0:
                raise ModelError(f"stage {t + 1}: need backorder > order cost > 0")
            if h[t] < 0:
                raise ModelError(f"stage {t + 1}: holding cost must be >= 0")
            if d[t] <= 0:
                raise ModelError(f"stage {t + 1}: demand bound must be > 0")
        object.__setattr__(self, "order_cost", c)
        object.__setattr__(self, "backorder_cost", b)
        object.__setattr__(self, "holding_cost", h)
        object.__setattr__(self, "demand_max", d)

    @property
    def u_max(self) -> float:
        """Order cap: total maximal demand over the horizon."""
        return float(sum(self.demand_max))

    @property
    def noise(self) -> NoiseSpec:
        return NoiseSpec(tuple((UniformNoise(0.0, d),) for d in self.demand_max))


def inventory_stage_model(params: InventoryParams, t: int) -> StageModel:
    if not 1 <= t <= params.horizon:
        raise ConfigurationError(f"stage {t} outside 1..{params.horizon}")
    i = t - 1
    return StageModel(a=1.0, b=1.0, g=-1.0, c=params.order_cost[i],
                      shortage=params.backorder_cost[i], holding=params.holding_cost[i],
                      u_lo=0.0, u_hi=params.u_max, convex=True)


def stage_grid_bounds(params: InventoryParams, t: int) -> tuple[float, float]:
    """[x1 - demand bound of stages before t, x1 + total demand bound]."""
    lo = params.x1 - sum(params.demand_max[: t - 1])
    return lo, params.x1 + params.u_max


def inventory_problem(params: InventoryParams, spacing: float = 0.01,
                      terminal: QuadraticCost | None = None) -> ProblemInstance:
    """Grid problem with node spacing close to ``spacing``; zero terminal cost by default."""
    if spacing <= 0:
        raise ConfigurationError("grid spacing must be positive")
    T = params.horizon
    grids = []
    for t in range(1, T + 2):
        lo, hi = stage_grid_bounds(params, t)
        grids.append(build_grid(lo, hi, int(round((hi - lo) / spacing)) + 1))
    stages = tuple(inventory_stage_model(params, t) for t in range(1, T + 1))
    return ProblemInstance(stages, terminal or QuadraticCost(), params.x1, tuple(grids), params.noise)


# --------------------------------------------------------------------------
# Basestock structure
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Basestock:
    level: float
    conforms: bool
    spread: float


def basestock_extract(policy: GridPolicy, tolerance: float = 1e-6) -> Basestock:
    """Order-up-to level of a tabulated policy and whether the policy has that form.

    Conforming means ``x + u(x)`` is constant (within ``tolerance``) where the
    policy orders and ``u(x) <= tolerance`` above the last ordering node.
    """
    x = policy.nodes
    u = policy.controls
    ordering = u > tolerance
    if not ordering.any():
        return Basestock(float(x[0]), True, 0.0)
    last = int(np.flatnonzero(ordering)[-1])
    level = float(x[last] + u[last])
    ups = (x + u)[ordering]
    spread = float(ups.max() - ups.min())
    above_ok = bool(np.all(u[last + 1:] <= tolerance))
    contiguous = bool(np.all(ordering[: last + 1]))
    return Basestock(level, spread <= tolerance and above_ok and contiguous, spread)


def cap_warnings(policies, params: InventoryParams, tol: float = 1e-9) -> list[int]:
    """Stages whose tabulated policy hits the order cap somewhere."""
    out = []
    for t, pol in sorted(policies.items()):
        if np.any(pol.controls >= params.u_max - tol):
            out.append(t)
    if out:
        log.warning("order cap reached at stages %s", out)
    return out


# --------------------------------------------------------------------------
# Brute-force oracle
# --------------------------------------------------------------------------

def saa_objective(stage: StageModel, V_next: GridValueFunction, samples, x: float, u):
    """Sample-average stage cost plus cost-to-go for controls ``u`` (array)."""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    xi = np.asarray(samples, dtype=float).ravel()
    y = stage.dynamics(x, u[:, None], xi[None, :])
    total = stage.cost(x, u[:, None], xi[None, :]) + V_next(y.ravel()).reshape(y.shape)
    return total.mean(axis=1)


def brute_force_inner(stage: StageModel, V_next: GridValueFunction, samples, x: float,
                      control_grid_step: float) -> tuple[float, float]:
    """Minimize the sample-average objective by enumeration.

    Candidates: a uniform control grid, the interval ends, and every control
    at which some successor hits a penalty kink (zero stock) or a node of the
    cost-to-go grid. With no quadratic control cost the objective is linear
    between consecutive candidates, so the enumeration is exact.
    """
    if control_grid_step <= 0:
        raise ConfigurationError("control grid step must be positive")
    xi = np.asarray(samples, dtype=float).ravel()
    lo, hi = stage.u_lo, stage.u_hi
    cands = [np.arange(lo, hi, control_grid_step), [lo, hi]]
    if stage.b != 0:
        base = stage.a * x + stage.g * xi
        kinks = np.concatenate([np.zeros(1), V_next.nodes])
        cands.append(((kinks[None, :] - base[:, None]) / stage.b).ravel())
    u = np.concatenate([np.asarray(c, dtype=float).ravel() for c in cands])
    u = np.unique(u[(u >= lo) & (u <= hi)])
    f = saa_objective(stage, V_next, xi, x, u)
    i = int(np.argmin(f))
    return float(f[i]), float(u[i])


def brute_force_backward(problem: ProblemInstance, pool: SamplePool,
                         control_grid_step: float = 0.05) -> dict[int, GridValueFunction]:
    """SAA value functions computed node by node with ``brute_force_inner``."""
    if pool.horizon != problem.horizon:
        raise ConfigurationError("pool horizon does not match the problem")
    V = terminal_value(problem)
    out = {problem.horizon + 1: V}
    for t in range(problem.horizon, 0, -1):
        st = problem.stage(t)
        xi = pool.scalar_stage(t)
        vals = [brute_force_inner(st, V, xi, x, control_grid_step)[0] for x in problem.grid(t).nodes]
        V = GridValueFunction(t, problem.grid(t), np.array(vals))
        out[t] = V
    return out
