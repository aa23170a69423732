"""Bellman operators, backward induction and backward covariance propagation.

The true operator and its sample-average counterpart share one kernel: both
minimize a weighted sum over noise points, with Gauss-Legendre nodes and
weights for the exact expectation and the samples with weight 1/N for SAA.

Covariance functions live on (coarser) node lattices and are evaluated by
bilinear interpolation. Because bilinear interpolation is linear in the node
values, the double expectation over independent noise copies of
Gamma_{t+1}(F(x, pi(x), xi), F(x', pi(x'), xi')) collapses to H Gamma H^T,
where H[i, a] is the expected interpolation weight of node a at state x_i.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import _backend
from .errors import ConfigurationError, ModelError
from .model import (
    GridPolicy,
    GridValueFunction,
    ProblemInstance,
    StageModel,
    StateGrid,
    build_grid,
    hat_weights,
    terminal_value,
)
from .sampling import TRAJECTORIES, SamplePool, SeedPlan, draw_pool

log = logging.getLogger(__name__)

GOLDEN_TOL = 1e-10
DEFAULT_QUAD_NODES = 64
DEFAULT_COV_NODES = 401


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """Probability-weighted noise points: E[g(xi)] ~= sum_k weights[k] * g(nodes[k])."""

    nodes: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        nodes = np.ascontiguousarray(self.nodes, dtype=float).ravel()
        weights = np.ascontiguousarray(self.weights, dtype=float).ravel()
        if nodes.shape != weights.shape or nodes.size == 0:
            raise ConfigurationError("quadrature needs matching, non-empty nodes and weights")
        if np.any(weights <= 0):
            raise ConfigurationError("quadrature weights must be positive")
        weights = weights / weights.sum()
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)

    @property
    def size(self) -> int:
        return self.nodes.size

    def expect(self, values: np.ndarray, axis: int = -1) -> np.ndarray:
        return np.tensordot(values, self.weights, axes=([axis], [0]))


def gauss_legendre(a: float, b: float, n: int = DEFAULT_QUAD_NODES) -> QuadratureRule:
    """Gauss-Legendre rule for the uniform distribution on [a, b]."""
    if n < 1:
        raise ConfigurationError("need at least one quadrature node")
    x, w = np.polynomial.legendre.leggauss(n)
    return QuadratureRule(0.5 * (a + b) + 0.5 * (b - a) * x, w)


def composite_gauss_legendre(a: float, b: float, panels: int, order: int = 2) -> QuadratureRule:
    """Gauss-Legendre of the given order on each of ``panels`` equal panels of [a, b].

    Integrands built from piecewise-linear interpolants have a kink at every
    grid node; panels no wider than the grid spacing keep the rule from
    aliasing against them.
    """
    if panels < 1 or order < 1:
        raise ConfigurationError("need at least one panel and one node per panel")
    x, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(a, b, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    return QuadratureRule(nodes, (half[:, None] * w[None, :]).ravel())


def empirical_rule(samples) -> QuadratureRule:
    samples = np.asarray(samples, dtype=float).ravel()
    return QuadratureRule(samples, np.full(samples.size, 1.0 / samples.size))


def stage_quadrature(problem: ProblemInstance, t: int, n: int = DEFAULT_QUAD_NODES) -> QuadratureRule:
    nz = problem.noise.scalar(t)
    return gauss_legendre(nz.low, nz.high, n)


@dataclass(frozen=True)
class UniformExpectation:
    """Exact expectation under Uniform(low, high) of piecewise-linear integrands.

    Interpolated value functions and the penalty terms are piecewise linear,
    so their average over an interval is a difference of piecewise-quadratic
    antiderivatives. A fixed quadrature rule instead samples the
    interpolant's slope error at arbitrary phases, which shows up as an
    O(h) ripple in the computed policies.
    """

    low: float
    high: float

    def __post_init__(self):
        if not self.low < self.high:
            raise ConfigurationError(f"need low < high, got [{self.low}, {self.high}]")


def true_expectation(problem: ProblemInstance, t: int, method: str = "exact",
                     quad_nodes: int = DEFAULT_QUAD_NODES):
    """Expectation rule of the true operator at stage t: 'exact' or 'gauss'."""
    nz = problem.noise.scalar(t)
    if method == "exact":
        if getattr(nz, "kind", None) != "uniform":
            raise ModelError(f"no exact expectation for noise kind {getattr(nz, 'kind', None)!r}")
        return UniformExpectation(nz.low, nz.high)
    if method == "gauss":
        return gauss_legendre(nz.low, nz.high, quad_nodes)
    raise ConfigurationError(f"expectation must be 'exact' or 'gauss', got {method!r}")


# --------------------------------------------------------------------------
# Bellman operators
# --------------------------------------------------------------------------

def _bellman(V_next: GridValueFunction, stage: StageModel, rule,
             grid: StateGrid, t: int) -> tuple[GridValueFunction, GridPolicy, int]:
    if not stage.convex:
        raise ModelError("golden-section minimization requires the convexity flag")
    xs = np.ascontiguousarray(grid.nodes)
    v = np.ascontiguousarray(V_next.values)
    params = tuple(float(p) for p in stage.params)
    if isinstance(rule, UniformExpectation):
        vals, ctrl, n_out = _backend.kernels.bellman_uniform(
            xs, V_next.grid.lo, V_next.grid.h, v, rule.low, rule.high,
            params, float(stage.u_lo), float(stage.u_hi), GOLDEN_TOL)
    else:
        vals, ctrl, n_out = _backend.kernels.bellman_grid(
            xs, V_next.grid.lo, V_next.grid.h, v, rule.nodes, rule.weights,
            params, float(stage.u_lo), float(stage.u_hi), GOLDEN_TOL)
    if not np.all(np.isfinite(vals)):
        raise ModelError(f"non-finite Bellman objective at stage {t}")
    return GridValueFunction(t, grid, vals), GridPolicy(t, grid, ctrl), n_out


def bellman_true(V_next: GridValueFunction, stage: StageModel, quad: QuadratureRule | UniformExpectation,
                 grid: StateGrid) -> tuple[GridValueFunction, GridPolicy]:
    """Apply the exact dynamic programming operator at every node of ``grid``.

    ``quad`` is a quadrature rule for the noise or a ``UniformExpectation``.
    """
    v, p, _ = _bellman(V_next, stage, quad, grid, V_next.stage - 1)
    return v, p


def bellman_saa(V_next: GridValueFunction, stage: StageModel, samples,
                grid: StateGrid) -> tuple[GridValueFunction, GridPolicy]:
    """Apply the sample-average operator; ``samples`` is one stage of a pool."""
    v, p, _ = _bellman(V_next, stage, empirical_rule(samples), grid, V_next.stage - 1)
    return v, p


@dataclass
class DPSolution:
    """Value functions and policies indexed by stage (values for t = 1..T+1)."""

    values: dict[int, GridValueFunction]
    policies: dict[int, GridPolicy]
    extrapolated: dict[int, int] = field(default_factory=dict)

    @property
    def horizon(self) -> int:
        return len(self.policies)

    def value(self, t: int) -> GridValueFunction:
        return self.values[t]

    def policy(self, t: int) -> GridPolicy:
        try:
            return self.policies[t]
        except KeyError:
            raise ConfigurationError(f"no policy for stage {t}") from None


def backward_induction(problem: ProblemInstance, mode: str = "true", samples: SamplePool | None = None,
                       expectation: str = "exact", quad_nodes: int = DEFAULT_QUAD_NODES) -> DPSolution:
    """Run t = T..1 with the exact (``mode='true'``) or sample-average operator.

    ``expectation`` selects the true operator's integration: 'exact' for
    uniform noise, or 'gauss' with ``quad_nodes`` Gauss-Legendre points.
    """
    if mode not in ("true", "saa"):
        raise ConfigurationError(f"mode must be 'true' or 'saa', got {mode!r}")
    if mode == "saa":
        if samples is None:
            raise ConfigurationError("mode 'saa' needs a sample pool")
        if samples.horizon != problem.horizon:
            raise ConfigurationError("sample pool horizon does not match the problem")
    T = problem.horizon
    V = terminal_value(problem)
    values = {T + 1: V}
    policies = {}
    extrap = {}
    for t in range(T, 0, -1):
        if mode == "true":
            rule = true_expectation(problem, t, expectation, quad_nodes)
        else:
            rule = empirical_rule(samples.scalar_stage(t))
        V, pol, n_out = _bellman(V, problem.stage(t), rule, problem.grid(t), t)
        values[t] = V
        policies[t] = pol
        extrap[t] = n_out
    total = sum(extrap.values())
    if total:
        log.info("%s backward induction: %d successor evaluations fell outside the grids", mode, total)
    return DPSolution(values, policies, extrap)


# --------------------------------------------------------------------------
# Covariance propagation
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class CovarianceGrid:
    stage: int
    grid: StateGrid
    gamma: np.ndarray

    @property
    def nodes(self) -> np.ndarray:
        return self.grid.nodes

    def weights(self, x) -> np.ndarray:
        """Interpolation weight rows, shape (len(x), n)."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        idx, frac = hat_weights(self.grid, x)
        W = np.zeros((x.size, self.grid.n))
        rows = np.arange(x.size)
        np.add.at(W, (rows, idx), 1.0 - frac)
        np.add.at(W, (rows, idx + 1), frac)
        return W

    def __call__(self, x, y):
        """Bilinear interpolation of Gamma at (x, y)."""
        wx = self.weights(x)
        wy = self.weights(y)
        out = np.einsum("ia,ab,ib->i", wx, self.gamma, wy)
        return float(out[0]) if np.ndim(x) == 0 and np.ndim(y) == 0 else out

    def variance(self, x):
        return self(x, x)


def expected_weights(grid: StateGrid, points: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """H[i, a] = sum_k weights[k] * hat_a(points[i, k]) with edge-slope extrapolation."""
    points = np.atleast_2d(points)
    n_rows = points.shape[0]
    idx, frac = hat_weights(grid, points)
    H = np.zeros((n_rows, grid.n))
    rows = np.broadcast_to(np.arange(n_rows)[:, None], idx.shape)
    np.add.at(H, (rows, idx), (1.0 - frac) * weights)
    np.add.at(H, (rows, idx + 1), frac * weights)
    return H


def cov_grid_for(grid: StateGrid, n_nodes: int) -> StateGrid:
    return build_grid(grid.lo, grid.hi, min(n_nodes, grid.n))


def covariance_quadrature(problem: ProblemInstance, t: int, order: int = 2) -> QuadratureRule:
    """Composite rule whose panels, mapped through the dynamics, are no wider than the next grid spacing."""
    nz = problem.noise.scalar(t)
    width = abs(problem.stage(t).g) * (nz.high - nz.low)
    panels = max(1, int(np.ceil(width / problem.grid(t + 1).h - 1e-9)))
    return composite_gauss_legendre(nz.low, nz.high, panels, order)


def _stage_objects(problem: ProblemInstance, solution: DPSolution, t: int, x: np.ndarray,
                   quad: QuadratureRule):
    st = problem.stage(t)
    u = np.clip(solution.policy(t)(x), st.u_lo, st.u_hi)
    xi = quad.nodes
    y = st.dynamics(x[:, None], u[:, None], xi[None, :])
    phi = st.cost(x[:, None], u[:, None], xi[None, :]) + solution.value(t + 1)(y.ravel()).reshape(y.shape)
    if not np.all(np.isfinite(phi)):
        raise ModelError(f"non-finite stage objective at stage {t}")
    return y, phi


def propagate_covariance(problem: ProblemInstance, true_solution: DPSolution,
                         quad: dict[int, QuadratureRule] | None = None,
                         cov_nodes: int = DEFAULT_COV_NODES) -> dict[int, CovarianceGrid]:
    """Covariance functions of the limit processes, t = T+1 (zero) down to 1.

    ``quad`` maps stages to noise rules; the default is ``covariance_quadrature``.
    """
    T = problem.horizon
    for t in range(1, T + 1):
        if t not in true_solution.policies:
            raise ConfigurationError(f"true solution lacks the policy of stage {t}")
    g_next = cov_grid_for(problem.grid(T + 1), cov_nodes)
    out = {T + 1: CovarianceGrid(T + 1, g_next, np.zeros((g_next.n, g_next.n)))}
    for t in range(T, 0, -1):
        rule = quad[t] if quad else covariance_quadrature(problem, t)
        g = cov_grid_for(problem.grid(t), cov_nodes)
        x = g.nodes
        y, phi = _stage_objects(problem, true_solution, t, x, rule)
        centered = phi - rule.expect(phi)[:, None]
        current = (centered * rule.weights) @ centered.T
        H = expected_weights(out[t + 1].grid, y, rule.weights)
        propagated = H @ out[t + 1].gamma @ H.T
        gamma = propagated + current
        gamma = 0.5 * (gamma + gamma.T)
        out[t] = CovarianceGrid(t, g, gamma)
    return out


@dataclass(frozen=True)
class VarianceSplit:
    current: float
    propagated: float
    total: float
    extrapolated: bool = False


def variance_decompose(problem: ProblemInstance, true_solution: DPSolution, gamma_next: CovarianceGrid,
                       t: int, x: float, quad: QuadratureRule | None = None) -> VarianceSplit:
    """Current-stage and propagated parts of the asymptotic variance at state x."""
    if gamma_next.stage != t + 1:
        raise ConfigurationError(f"need the stage-{t + 1} covariance, got stage {gamma_next.stage}")
    quad = quad or covariance_quadrature(problem, t)
    xs = np.array([float(x)])
    y, phi = _stage_objects(problem, true_solution, t, xs, quad)
    centered = phi[0] - quad.expect(phi[0])
    current = float(np.dot(quad.weights, centered * centered))
    h = expected_weights(gamma_next.grid, y, quad.weights)[0]
    propagated = float(h @ gamma_next.gamma @ h)
    outside = not bool(problem.grid(t).covers(x)) or not bool(np.all(gamma_next.grid.covers(y)))
    return VarianceSplit(current, propagated, current + propagated, outside)


# --------------------------------------------------------------------------
# Optimal-value variance along trajectories
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class TrajectoryVariance:
    variance: float
    halfwidth: float
    mean: float
    paths: int


def optimal_value_variance(problem: ProblemInstance, true_solution: DPSolution, n_paths: int,
                           plan: SeedPlan, replication: int = 0) -> TrajectoryVariance:
    """Sample variance of the total cost along paths driven by the true policy.

    The half-width is a 95% normal-approximation interval for the variance,
    using the sample fourth central moment.
    """
    if n_paths < 2:
        raise ConfigurationError("need at least 2 paths")
    plan = plan.for_purpose(TRAJECTORIES)
    pool = draw_pool(plan, replication, n_paths, problem.noise)
    x = np.full(n_paths, float(problem.x1))
    total = np.zeros(n_paths)
    for t in range(1, problem.horizon + 1):
        st = problem.stage(t)
        u = np.clip(true_solution.policy(t)(x), st.u_lo, st.u_hi)
        xi = pool.scalar_stage(t)
        total += st.cost(x, u, xi)
        x = st.dynamics(x, u, xi)
    total += problem.terminal(x)
    mean = float(total.mean())
    dev = total - mean
    var = float(dev @ dev / (n_paths - 1))
    m4 = float(np.mean(dev**4))
    n = n_paths
    var_of_var = max(m4 - var * var * (n - 3) / (n - 1), 0.0) / n
    return TrajectoryVariance(var, 1.959963984540054 * np.sqrt(var_of_var), mean, n_paths)
