"""Compiled kernels against the numpy fallback, and backend selection."""
import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from saaclt import _backend, _pykernels

compiled = _backend.available().get("cython")
needs_ext = pytest.mark.skipif(compiled is None, reason="compiled extension not built")
TOL = 1e-10


def value_at(kern_fn, xs, u, *args):
    """Objective at fixed controls: a degenerate interval [u, u] per node."""
    return np.array([kern_fn(xs[i:i + 1], *args, float(u[i]), float(u[i]), TOL)[0][0] for i in range(xs.size)])


def random_case(seed, n_nodes=61, penalties=False):
    rng = np.random.default_rng(seed)
    lo, h = -3.0, 6.0 / (n_nodes - 1)
    nodes = lo + h * np.arange(n_nodes)
    slopes = np.sort(rng.normal(0, 2, n_nodes - 1))
    v = rng.normal() + np.concatenate([[0.0], np.cumsum(slopes * h)])
    params = (rng.uniform(0.5, 1.2), rng.uniform(0.5, 1.5), rng.choice([-1.0, 1.0]),
              rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(-0.5, 0.5),
              rng.uniform(1, 3) if penalties else 0.0, rng.uniform(0, 1) if penalties else 0.0)
    xs = np.ascontiguousarray(nodes[::3])
    return rng, xs, lo, h, v, params


@needs_ext
@given(st.integers(0, 2**31), st.booleans(), st.integers(1, 40))
def test_weighted_sum_kernel_twins(seed, penalties, K):
    rng, xs, lo, h, v, params = random_case(seed, penalties=penalties)
    xi = rng.uniform(-0.8, 0.8, K)
    w = rng.uniform(0.1, 1, K)
    w /= w.sum()
    a = compiled.bellman_grid(xs, lo, h, v, xi, w, params, -2.0, 2.0, TOL)
    b = _pykernels.bellman_grid(xs, lo, h, v, xi, w, params, -2.0, 2.0, TOL)
    # at a kink minimum the search stops within TOL of it, so values may
    # differ by up to TOL times the objective's slope
    _, b_, _, _, r, c, short, hold = params
    slope = abs(b_) * (np.abs(np.diff(v)).max() / h + short + hold) + 4 * r + abs(c)
    atol = 1e-11 + TOL * slope
    np.testing.assert_allclose(a[0], b[0], rtol=1e-11, atol=atol)
    assert a[2] == b[2]
    # the compiled control is optimal for the fallback objective too
    cross = value_at(_pykernels.bellman_grid, xs, a[1], lo, h, v, xi, w, params)
    np.testing.assert_allclose(cross, b[0], rtol=1e-11, atol=atol)


@needs_ext
@given(st.integers(0, 2**31), st.booleans(), st.floats(1e-3, 2.0))
def test_uniform_kernel_twins(seed, penalties, width):
    _, xs, lo, h, v, params = random_case(seed, penalties=penalties)
    a = compiled.bellman_uniform(xs, lo, h, v, -0.3 * width, 0.7 * width, params, -2.0, 2.0, TOL)
    b = _pykernels.bellman_uniform(xs, lo, h, v, -0.3 * width, 0.7 * width, params, -2.0, 2.0, TOL)
    # differences of antiderivatives cancel, so rounding grows like 1/width
    scale = 1.0 + np.abs(v).max() * (v.size * h)
    np.testing.assert_allclose(a[0], b[0], rtol=1e-12, atol=1e-14 * scale / width)
    cross = value_at(_pykernels.bellman_uniform, xs, a[1], lo, h, v, -0.3 * width, 0.7 * width, params)
    np.testing.assert_allclose(cross, b[0], rtol=1e-12, atol=1e-14 * scale / width)
    assert a[2] == b[2]


@needs_ext
def test_uniform_kernel_point_mode_twins():
    _, xs, lo, h, v, params = random_case(3, penalties=True)
    a = compiled.bellman_uniform(xs, lo, h, v, 0.2, 0.2 + 1e-12, params, -2.0, 2.0, TOL)
    b = _pykernels.bellman_uniform(xs, lo, h, v, 0.2, 0.2 + 1e-12, params, -2.0, 2.0, TOL)
    np.testing.assert_allclose(a[0], b[0], rtol=1e-12, atol=1e-12)
    # the point value agrees with a one-node weighted sum
    c = compiled.bellman_grid(xs, lo, h, v, np.array([0.2 + 5e-13]), np.ones(1), params, -2.0, 2.0, TOL)
    np.testing.assert_allclose(a[0], c[0], atol=1e-10)


@needs_ext
def test_uniform_kernel_agrees_with_fine_weighted_sum():
    _, xs, lo, h, v, params = random_case(8, penalties=True)
    # midpoint rule with many nodes converges to the exact average
    m = 200_000
    xi = -0.5 + (np.arange(m) + 0.5) / m
    w = np.full(m, 1.0 / m)
    a = compiled.bellman_uniform(xs, lo, h, v, -0.5, 0.5, params, -2.0, 2.0, TOL)
    b = compiled.bellman_grid(xs, lo, h, v, xi, w, params, -2.0, 2.0, TOL)
    np.testing.assert_allclose(a[0], b[0], atol=1e-8)


@pytest.mark.parametrize("kern", [k for k in _backend.available().values()])
def test_kernel_argument_errors(kern):
    xs = np.zeros(3)
    params = (1.0,) * 8
    with pytest.raises(ValueError):
        kern.bellman_grid(xs, 0.0, 1.0, np.zeros(1), np.zeros(1), np.ones(1), params, 0.0, 1.0, TOL)
    with pytest.raises(ValueError):
        kern.bellman_grid(xs, 0.0, 1.0, np.zeros(3), np.zeros(2), np.ones(1), params, 0.0, 1.0, TOL)
    with pytest.raises(ValueError):
        kern.bellman_uniform(xs, 0.0, 1.0, np.zeros(3), 1.0, 1.0, params, 0.0, 1.0, TOL)


@pytest.mark.parametrize("kern", [k for k in _backend.available().values()])
def test_ties_resolve_to_smaller_control(kern):
    # flat objective in u: every control is optimal, the lower bound wins
    xs = np.array([0.0, 0.5])
    params = (1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    _, u, _ = kern.bellman_grid(xs, -1.0, 1.0, np.zeros(3), np.zeros(1), np.ones(1), params, -1.0, 1.0, TOL)
    np.testing.assert_array_equal(u, [-1.0, -1.0])


@pytest.mark.parametrize("kern", [k for k in _backend.available().values()])
def test_boundary_minimizer(kern):
    # minimizer of (u - 3)^2 on [0, 1] is the upper end
    xs = np.array([0.0])
    v = np.array([9.0, 4.0, 1.0, 0.0, 1.0])  # (y - 3)^2 on nodes 0..4
    params = (0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    f, u, _ = kern.bellman_grid(xs, 0.0, 1.0, v, np.zeros(1), np.ones(1), params, 0.0, 1.0, TOL)
    assert u[0] == 1.0 and f[0] == 4.0


def run_python(code, **env):
    full = dict(os.environ, **env)
    return subprocess.run([sys.executable, "-c", code], capture_output=True, text=True, env=full)


def test_backend_forced_python():
    r = run_python("import saaclt; print(saaclt.BACKEND)", SAACLT_BACKEND="python")
    assert r.returncode == 0 and r.stdout.strip() == "python"


def test_backend_unknown_rejected():
    r = run_python("import saaclt", SAACLT_BACKEND="fortran")
    assert r.returncode != 0 and "SAACLT_BACKEND" in r.stderr


@needs_ext
def test_backend_default_is_compiled():
    r = run_python("import saaclt; print(saaclt.BACKEND)", SAACLT_BACKEND="")
    assert r.stdout.strip() == "cython"


def test_fallback_backward_induction_matches(tmp_path):
    code = (
        "import numpy as np\n"
        "from saaclt import lqr, dp, SeedPlan, draw_pool\n"
        "m = lqr.benchmark_instance(T=3)\n"
        "p = lqr.lqr_problem(m, lo=-4, hi=4, n_nodes=81, u_lo=-5, u_hi=5)\n"
        "pool = draw_pool(SeedPlan(1, 3), 0, 20, m.noise)\n"
        "a = dp.backward_induction(p, 'true').value(1).values\n"
        "b = dp.backward_induction(p, 'saa', pool).value(1).values\n"
        f"np.save(r'{tmp_path}/' + __import__('saaclt').BACKEND + '.npy', np.concatenate([a, b]))\n"
    )
    for backend in ("python", "cython" if compiled is not None else "python"):
        r = run_python(code, SAACLT_BACKEND=backend)
        assert r.returncode == 0, r.stderr
    if compiled is not None:
        a = np.load(tmp_path / "python.npy")
        b = np.load(tmp_path / "cython.npy")
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)
