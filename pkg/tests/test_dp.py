import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.interpolate import RegularGridInterpolator

from saaclt import (
    ConfigurationError,
    GridValueFunction,
    ModelError,
    NoiseSpec,
    ProblemInstance,
    QuadraticCost,
    SeedPlan,
    StageModel,
    UniformNoise,
    build_grid,
    draw_pool,
    terminal_value,
)
from saaclt import dp, lqr

C = np.sqrt(3.0)


def lqr_stage(u=10.0):
    return StageModel(a=1, b=1, g=1, q=1, r=1, u_lo=-u, u_hi=u)


def dense_rule(a, b, panels=400):
    return dp.composite_gauss_legendre(a, b, panels, 4)


def convex_values(rng, grid, scale=1.0):
    slopes = np.sort(rng.normal(0, scale, grid.n - 1))
    return rng.normal() + np.concatenate([[0.0], np.cumsum(slopes * grid.h)])


def split_expectation(stage, V, x, u, low, high, order=4):
    """E over Uniform(low, high) of stage cost plus V, integrating piece by piece between kinks."""
    s = stage.a * x + stage.b * u
    lo, hi = sorted((s + stage.g * low, s + stage.g * high))
    cuts = np.concatenate([[lo], V.nodes[(V.nodes > lo) & (V.nodes < hi)], [hi]])
    if lo < 0 < hi:
        cuts = np.sort(np.append(cuts, 0.0))
    gx, gw = np.polynomial.legendre.leggauss(order)
    total = 0.0
    for a, b in zip(cuts[:-1], cuts[1:]):
        y = 0.5 * (a + b) + 0.5 * (b - a) * gx
        pen = np.where(y < 0, -stage.shortage * y, stage.holding * y)
        total += 0.5 * (b - a) * gw @ (V(y) + pen)
    return stage.q * x * x + stage.r * u * u + stage.c * u + total / (hi - lo)


# ---------------------------------------------------------------- quadrature

@pytest.mark.parametrize("n", [1, 3, 8, 64])
def test_gauss_legendre_polynomial_exactness(n):
    a, b = -0.7, 2.3
    rule = dp.gauss_legendre(a, b, n)
    assert np.all(rule.weights > 0) and rule.weights.sum() == pytest.approx(1.0, abs=1e-14)
    for k in range(2 * n):
        exact = (b ** (k + 1) - a ** (k + 1)) / ((k + 1) * (b - a))
        assert rule.expect(rule.nodes ** k) == pytest.approx(exact, rel=1e-11, abs=1e-12)


def test_composite_rule_exact_on_panels():
    rule = dp.composite_gauss_legendre(0.0, 1.0, 4, 2)
    assert rule.size == 8
    f = np.where(rule.nodes < 0.5, rule.nodes, 1 - rule.nodes) ** 3
    assert rule.expect(f) == pytest.approx(2 * 0.5 ** 4 / 4, abs=1e-14)


def test_quadrature_rule_validation():
    with pytest.raises(ConfigurationError):
        dp.QuadratureRule(np.zeros(2), np.ones(3))
    with pytest.raises(ConfigurationError):
        dp.QuadratureRule(np.zeros(2), np.array([1.0, 0.0]))
    with pytest.raises(ConfigurationError):
        dp.gauss_legendre(0, 1, 0)
    with pytest.raises(ConfigurationError):
        dp.UniformExpectation(1.0, 1.0)


def test_true_expectation_selector(bench_problem):
    assert isinstance(dp.true_expectation(bench_problem, 1), dp.UniformExpectation)
    assert dp.true_expectation(bench_problem, 1, "gauss", 16).size == 16
    with pytest.raises(ConfigurationError):
        dp.true_expectation(bench_problem, 1, "simpson")


# ---------------------------------------------------------------- Bellman operators

def test_bellman_true_last_stage_lqr():
    g = build_grid(-8, 8, 1601)
    V = GridValueFunction(21, g, g.nodes ** 2)
    for rule in (dp.UniformExpectation(-C, C), dp.gauss_legendre(-C, C, 64)):
        Vt, pol = dp.bellman_true(V, lqr_stage(), rule, g)
        assert Vt(1.0) == pytest.approx(2.5, abs=1e-3)
        assert pol(1.0) == pytest.approx(-0.5, abs=1e-3)


def test_bellman_zero_cost_to_go():
    g = build_grid(-2, 2, 41)
    V = GridValueFunction(2, g, np.zeros(g.n))
    st_ = StageModel(a=1, b=1, g=1, r=1, u_lo=-1, u_hi=1)
    Vt, pol = dp.bellman_true(V, st_, dp.gauss_legendre(-1, 1, 8), g)
    assert np.max(np.abs(Vt.values)) <= 1e-18
    assert np.max(np.abs(pol.controls)) <= 1e-9


def test_bellman_saa_single_zero_sample():
    g = build_grid(-8, 8, 1601)
    V = GridValueFunction(21, g, g.nodes ** 2)
    Vt, _ = dp.bellman_saa(V, lqr_stage(), np.zeros(1), g)
    inner = np.abs(g.nodes) <= 5
    # closed form with a zero sample: P_T x^2, k = q = 0
    np.testing.assert_allclose(Vt.values[inner], 1.5 * g.nodes[inner] ** 2, atol=1e-4)


def test_bellman_saa_collapsed_samples_match_point_rule():
    g = build_grid(-4, 4, 401)
    V = GridValueFunction(2, g, g.nodes ** 2 + 0.3 * np.abs(g.nodes))
    c = 0.37
    a = dp.bellman_saa(V, lqr_stage(), np.full(7, c), g)
    b = dp.bellman_true(V, lqr_stage(), dp.QuadratureRule(np.array([c]), np.array([1.0])), g)
    np.testing.assert_allclose(a[0].values, b[0].values, rtol=1e-12, atol=1e-11)
    np.testing.assert_allclose(a[1].controls, b[1].controls, atol=1e-9)


def test_bellman_saa_matches_closed_form(bench_model, bench_problem, bench_riccati):
    pool = draw_pool(SeedPlan(99, 20), 0, 1000, bench_model.noise)
    cf = lqr.saa_closed_form(bench_riccati, pool)
    g = bench_problem.grid(20)
    V = terminal_value(bench_problem)
    Vt, _ = dp.bellman_saa(V, bench_problem.stage(20), pool.scalar_stage(20), g)
    inner = np.abs(g.nodes) <= 5
    assert np.max(np.abs(Vt.values[inner] - cf.value(20, g.nodes[inner]))) <= 1e-3


def test_exact_expectation_matches_piecewise_oracle(rng):
    g = build_grid(-3, 3, 121)
    V = GridValueFunction(2, g, convex_values(rng, g, 3.0))
    st_ = StageModel(a=0.8, b=1.2, g=-1.0, q=0.5, r=0.7, c=0.1, shortage=2.0, holding=0.5, u_lo=-2, u_hi=2)
    Vt, pol = dp.bellman_true(V, st_, dp.UniformExpectation(-0.4, 0.9), g)
    for i in range(0, g.n, 7):
        x, u = g.nodes[i], pol.controls[i]
        assert Vt.values[i] == pytest.approx(split_expectation(st_, V, x, u, -0.4, 0.9), abs=1e-12)
        for du in (-1e-3, 1e-3):
            uu = np.clip(u + du, -2, 2)
            assert Vt.values[i] <= split_expectation(st_, V, x, uu, -0.4, 0.9) + 1e-12


def test_bellman_rejects_nonconvex_flag_and_nonfinite():
    g = build_grid(-1, 1, 5)
    V = GridValueFunction(2, g, np.zeros(5))
    with pytest.raises(ModelError):
        dp.bellman_true(V, StageModel(convex=False), dp.gauss_legendre(0, 1, 2), g)
    huge = GridValueFunction(2, g, np.full(5, 1e308))
    with pytest.raises(ModelError):
        dp.bellman_true(huge, StageModel(q=1e308, u_lo=-1, u_hi=1), dp.gauss_legendre(0, 1, 2), g)


@given(st.integers(0, 2**32 - 1), st.floats(-50, 50))
def test_bellman_translation(seed, kappa):
    rng = np.random.default_rng(seed)
    g = build_grid(-2, 2, 41)
    v = convex_values(rng, g)
    st_ = StageModel(a=1, b=1, g=1, q=0.3, r=0.5, u_lo=-2, u_hi=2)
    xi = rng.uniform(-0.5, 0.5, 5)
    base = dp.bellman_saa(GridValueFunction(2, g, v), st_, xi, g)[0].values
    shifted = dp.bellman_saa(GridValueFunction(2, g, v + kappa), st_, xi, g)[0].values
    np.testing.assert_allclose(shifted, base + kappa, atol=1e-9 * (1 + abs(kappa) + np.abs(base).max()))


@given(st.integers(0, 2**32 - 1))
def test_bellman_monotone(seed):
    rng = np.random.default_rng(seed)
    g = build_grid(-2, 2, 41)
    v = convex_values(rng, g)
    w = v + rng.uniform(0, 2) * (g.nodes - rng.uniform(-2, 2)) ** 2 + rng.uniform(0, 1)
    st_ = StageModel(a=1, b=0.7, g=1, q=0.3, r=0.5, shortage=1.0, holding=0.2, u_lo=-2, u_hi=2)
    xi = rng.uniform(-0.5, 0.5, 6)
    for rule in (dp.empirical_rule(xi), dp.UniformExpectation(-0.5, 0.5)):
        lo = dp.bellman_true(GridValueFunction(2, g, v), st_, rule, g)[0].values
        hi = dp.bellman_true(GridValueFunction(2, g, w), st_, rule, g)[0].values
        assert np.all(lo <= hi + 1e-9)


# ---------------------------------------------------------------- backward induction

def test_backward_induction_single_stage():
    model = lqr.benchmark_instance(T=1)
    p = lqr.lqr_problem(model)
    sol = dp.backward_induction(p, "true")
    V, _ = dp.bellman_true(terminal_value(p), p.stage(1), dp.true_expectation(p, 1), p.grid(1))
    np.testing.assert_array_equal(sol.value(1).values, V.values)
    assert sol.horizon == 1 and set(sol.values) == {1, 2}


def test_backward_induction_true_vs_riccati(bench_true, bench_riccati):
    assert bench_true.value(1)(1.0) == pytest.approx(bench_riccati.value(1, 1.0), abs=1e-3)
    xs = np.linspace(-3, 3, 13)
    for t in (1, 10, 20):
        exact = np.array([bench_riccati.value(t, x) for x in xs])
        np.testing.assert_allclose(bench_true.value(t)(xs), exact, atol=2e-3)
        np.testing.assert_allclose(bench_true.policy(t)(xs), bench_riccati.K[t - 1][0, 0] * xs, atol=1e-4)


def test_backward_induction_gauss_option(bench_problem, bench_riccati):
    sol = dp.backward_induction(bench_problem, "true", expectation="gauss", quad_nodes=64)
    assert sol.value(1)(1.0) == pytest.approx(bench_riccati.value(1, 1.0), abs=1e-3)


def test_backward_induction_errors(bench_problem, bench_model):
    with pytest.raises(ConfigurationError):
        dp.backward_induction(bench_problem, "mean")
    with pytest.raises(ConfigurationError):
        dp.backward_induction(bench_problem, "saa")
    short = draw_pool(SeedPlan(1, 3), 0, 5, NoiseSpec.iid(UniformNoise(-1, 1), 3))
    with pytest.raises(ConfigurationError):
        dp.backward_induction(bench_problem, "saa", short)
    sol = dp.DPSolution({}, {})
    with pytest.raises(ConfigurationError):
        sol.policy(1)


def test_extrapolation_counted():
    model = lqr.benchmark_instance(T=2)
    p = lqr.lqr_problem(model, lo=-2, hi=2, n_nodes=41, u_lo=-1, u_hi=1)
    sol = dp.backward_induction(p, "true")
    assert sol.extrapolated[2] > 0


# ---------------------------------------------------------------- covariance

def small_lqr_problem(T=3, n=21, half=C):
    model = lqr.scalar_lqr(T, half_width=half)
    return model, lqr.lqr_problem(model, lo=-4, hi=4, n_nodes=n, u_lo=-6, u_hi=6)


def tensor_oracle(problem, sol, quads):
    """Double sums over independent noise copies with scipy's bilinear interpolant."""
    T = problem.horizon
    nodes = problem.grid(T + 1).nodes
    gam = np.zeros((nodes.size, nodes.size))
    out = {T + 1: gam}
    for t in range(T, 0, -1):
        st_ = problem.stage(t)
        x = problem.grid(t).nodes
        rule = quads[t]
        u = sol.policy(t)(x)
        interp = RegularGridInterpolator((nodes, nodes), gam, method="linear",
                                         bounds_error=False, fill_value=None)
        y = st_.dynamics(x[:, None], u[:, None], rule.nodes[None, :])
        phi = st_.cost(x[:, None], u[:, None], rule.nodes[None, :]) + sol.value(t + 1)(y.ravel()).reshape(y.shape)
        new = np.empty_like(gam)
        w = rule.weights
        for i in range(x.size):
            for j in range(x.size):
                pts = np.stack(np.broadcast_arrays(y[i][:, None], y[j][None, :]), -1).reshape(-1, 2)
                prop = w @ interp(pts).reshape(w.size, w.size) @ w
                ci = phi[i] - w @ phi[i]
                cj = phi[j] - w @ phi[j]
                new[i, j] = prop + w @ (ci * cj)
        gam = new
        nodes = x
        out[t] = gam
    return out


def test_covariance_matches_tensor_oracle():
    _, p = small_lqr_problem()
    sol = dp.backward_induction(p, "true")
    quads = {t: dp.gauss_legendre(-C, C, 6) for t in range(1, 4)}
    got = dp.propagate_covariance(p, sol, quads, cov_nodes=p.grid(1).n)
    want = tensor_oracle(p, sol, quads)
    for t in range(1, 4):
        np.testing.assert_allclose(got[t].gamma, want[t], rtol=1e-11, atol=1e-10)


def test_last_stage_covariance_is_phi_variance(bench_problem, bench_true, bench_gamma):
    st_ = bench_problem.stage(20)
    rule = dense_rule(-C, C, 2000)
    for x in (-1.5, 0.0, 1.0):
        u = bench_true.policy(20)(np.array([x]))[0]
        phi = st_.cost(x, u, rule.nodes) + bench_true.value(21)(st_.dynamics(x, u, rule.nodes))
        var = rule.expect((phi - rule.expect(phi)) ** 2)
        assert bench_gamma[20].variance(x) == pytest.approx(var, rel=1e-5)


def test_gamma_benchmark_value(bench_gamma):
    assert bench_gamma[20].variance(1.0) == pytest.approx(1.8, abs=1e-3)
    assert bench_gamma[21].gamma.max() == 0.0


def test_gamma_symmetric_psd_diag(bench_gamma):
    for t in (1, 10, 20):
        G = bench_gamma[t].gamma
        np.testing.assert_array_equal(G, G.T)
        assert np.diag(G).min() >= -1e-9


def test_gamma_vanishes_without_noise():
    _, p = small_lqr_problem(half=1e-12)
    sol = dp.backward_induction(p, "true")
    gam = dp.propagate_covariance(p, sol)
    for t in range(1, 5):
        assert np.max(np.abs(gam[t].gamma)) <= 1e-18


def test_covariance_needs_policies(bench_problem):
    with pytest.raises(ConfigurationError):
        dp.propagate_covariance(bench_problem, dp.DPSolution({}, {}))


def test_covariance_grid_interpolation():
    g = build_grid(0, 2, 3)
    G = dp.CovarianceGrid(1, g, np.arange(9.0).reshape(3, 3))
    assert G(0.0, 1.0) == 1.0
    assert G(0.5, 0.0) == pytest.approx(1.5)
    assert G.variance(np.array([2.0]))[0] == 8.0


# ---------------------------------------------------------------- decomposition

def test_decomposition_additive_and_last_stage(bench_problem, bench_true, bench_gamma):
    for t, x in ((20, 0.5), (7, -1.2), (1, 1.0)):
        s = dp.variance_decompose(bench_problem, bench_true, bench_gamma[t + 1], t, x)
        assert s.total == s.current + s.propagated
        assert not s.extrapolated
    s = dp.variance_decompose(bench_problem, bench_true, bench_gamma[21], 20, 0.7)
    assert s.propagated == 0.0


def test_decomposition_vs_closed_form(bench_problem, bench_true, bench_gamma, bench_riccati, bench_law):
    s = dp.variance_decompose(bench_problem, bench_true, bench_gamma[20], 19, 0.5)
    prop, curr = lqr.variance_decomposition(bench_law, bench_riccati, 19, 0.5)
    assert s.propagated == pytest.approx(prop, abs=1e-3)
    assert s.current == pytest.approx(curr, abs=1e-3)


def test_decomposition_flags_and_stage_check(bench_problem, bench_true, bench_gamma):
    s = dp.variance_decompose(bench_problem, bench_true, bench_gamma[20], 19, 9.0)
    assert s.extrapolated
    with pytest.raises(ConfigurationError):
        dp.variance_decompose(bench_problem, bench_true, bench_gamma[19], 19, 0.0)


# ---------------------------------------------------------------- trajectories

def test_trajectory_variance_without_noise():
    _, p = small_lqr_problem(half=1e-12)
    sol = dp.backward_induction(p, "true")
    est = dp.optimal_value_variance(p, sol, 1000, SeedPlan(1, 3))
    assert est.variance <= 1e-18


def test_trajectory_variance_single_stage():
    model = lqr.benchmark_instance(T=1)
    p = lqr.lqr_problem(model)
    sol = dp.backward_induction(p, "true")
    st_ = p.stage(1)
    rule = dense_rule(-C, C, 2000)
    u = sol.policy(1)(np.array([p.x1]))[0]
    phi = st_.cost(p.x1, u, rule.nodes) + sol.value(2)(st_.dynamics(p.x1, u, rule.nodes))
    var = rule.expect((phi - rule.expect(phi)) ** 2)
    est = dp.optimal_value_variance(p, sol, 200_000, SeedPlan(4, 1))
    assert abs(est.variance - var) <= 2.0 * est.halfwidth
    # one stage: the trajectory variance is Gamma_1 itself
    gam = dp.propagate_covariance(p, sol)
    assert gam[1].variance(p.x1) == pytest.approx(var, rel=1e-5)


def test_trajectory_variance_matches_closed_loop_oracle(bench_problem, bench_true, bench_riccati, bench_law):
    est = dp.optimal_value_variance(bench_problem, bench_true, 1_000_000, SeedPlan(5, 20))
    exact = lqr.trajectory_cost_variance(bench_riccati, bench_law, 1.0)
    assert est.variance == pytest.approx(exact, rel=0.02)
    assert abs(est.mean - bench_riccati.value(1, 1.0)) <= 0.05


def test_trajectory_variance_errors(bench_problem, bench_true):
    with pytest.raises(ConfigurationError):
        dp.optimal_value_variance(bench_problem, bench_true, 1, SeedPlan(1, 20))
