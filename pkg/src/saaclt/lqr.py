"""Closed-form oracle for linear-quadratic problems with additive noise.

Dynamics ``x' = A x + B u + xi``, stage cost ``x'Qx + u'Ru``, terminal cost
``x'Q_f x``. Everything here is exact: Riccati recursion, SAA value
functions for a given sample pool, and the recursions of the limiting
variance ``x'S_t x + 2c_t'x + v_t`` of the scaled SAA error.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .errors import ConfigurationError, ModelError, NumericalError
from .model import NoiseSpec, ProblemInstance, QuadraticCost, StageModel, UniformNoise, build_grid
from .sampling import SamplePool, noise_moments

SQRT3 = float(np.sqrt(3.0))


def _mat(a, shape=None, name="matrix"):
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if shape is not None and a.shape != shape:
        raise ModelError(f"{name} has shape {a.shape}, expected {shape}")
    if not np.all(np.isfinite(a)):
        raise ModelError(f"{name} has non-finite entries")
    return a


def _check_spd(a, name):
    if not np.allclose(a, a.T, rtol=1e-12, atol=1e-12):
        raise ModelError(f"{name} is not symmetric")
    if np.linalg.eigvalsh(a).min() <= 0:
        raise ModelError(f"{name} is not positive definite")


@dataclass(frozen=True, eq=False)
class LqrModel:
    """Per-stage matrices; ``A[t-1]`` etc. belong to stage t."""

    A: tuple
    B: tuple
    Q: tuple
    R: tuple
    Qf: np.ndarray
    noise: NoiseSpec

    def __post_init__(self):
        T = len(self.A)
        if T < 1 or not len(self.B) == len(self.Q) == len(self.R) == T:
            raise ModelError("A, B, Q, R need one entry per stage")
        n = _mat(self.A[0]).shape[0]
        m = _mat(self.B[0]).shape[1]
        A = tuple(_mat(a, (n, n), "A") for a in self.A)
        B = tuple(_mat(b, (n, m), "B") for b in self.B)
        Q = tuple(_mat(q, (n, n), "Q") for q in self.Q)
        R = tuple(_mat(r, (m, m), "R") for r in self.R)
        Qf = _mat(self.Qf, (n, n), "Qf")
        for q in Q:
            _check_spd(q, "Q")
        for r in R:
            _check_spd(r, "R")
        _check_spd(Qf, "Qf")
        if self.noise.horizon != T or self.noise.dim != n:
            raise ModelError(f"noise must have {T} stages of {n} components")
        for stage in self.noise.stages:
            for comp in stage:
                if abs(comp.mean) > 1e-12 * max(1.0, comp.high - comp.low):
                    raise ModelError("the LQR oracle needs zero-mean noise")
        for name, val in (("A", A), ("B", B), ("Q", Q), ("R", R), ("Qf", Qf)):
            object.__setattr__(self, name, val)

    @property
    def horizon(self) -> int:
        return len(self.A)

    @property
    def n(self) -> int:
        return self.A[0].shape[0]

    @property
    def m(self) -> int:
        return self.B[0].shape[1]


def scalar_lqr(T: int, a=1.0, b=1.0, q=1.0, r=1.0, qf=1.0, half_width=SQRT3) -> LqrModel:
    """Time-invariant scalar model with Uniform(-half_width, half_width) noise."""
    if T < 1:
        raise ConfigurationError("horizon must be at least 1")
    noise = NoiseSpec.iid(UniformNoise(-half_width, half_width), T)
    return LqrModel((a,) * T, (b,) * T, (q,) * T, (r,) * T, qf, noise)


def benchmark_instance(T: int = 20, r: float = 1.0) -> LqrModel:
    """The benchmark instance: A=B=Q=Q_f=1, R=r, unit-variance uniform noise."""
    return scalar_lqr(T, r=r)


# --------------------------------------------------------------------------
# Riccati recursion
# --------------------------------------------------------------------------

def _chol(G, t):
    try:
        return cho_factor(G, lower=True, check_finite=True)
    except LinAlgError as exc:
        raise NumericalError(f"R + B'PB is not positive definite at stage {t}") from exc


@dataclass(frozen=True, eq=False)
class RiccatiSolution:
    """``P[t-1]``, ``q[t-1]`` for t = 1..T+1; ``K[t-1]``, ``M[t-1]``, ``G[t-1]`` for t = 1..T.

    ``G_t = R_t + B_t'P_{t+1}B_t`` is kept for the SAA formulas.
    """

    P: tuple
    K: tuple
    M: tuple
    G: tuple
    q: np.ndarray
    model: LqrModel

    @property
    def horizon(self) -> int:
        return len(self.K)

    def value(self, t: int, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return float(x @ self.P[t - 1] @ x + self.q[t - 1])

    def policy(self, t: int, x):
        return self.K[t - 1] @ np.atleast_1d(np.asarray(x, dtype=float))


def riccati_backward(model: LqrModel) -> RiccatiSolution:
    T = model.horizon
    P = [None] * (T + 1)
    K = [None] * T
    M = [None] * T
    G = [None] * T
    q = np.zeros(T + 1)
    P[T] = model.Qf
    for t in range(T, 0, -1):
        A, B, Q, R = model.A[t - 1], model.B[t - 1], model.Q[t - 1], model.R[t - 1]
        Pn = P[t]
        Gt = R + B.T @ Pn @ B
        Gt = 0.5 * (Gt + Gt.T)
        fac = _chol(Gt, t)
        Kt = -cho_solve(fac, B.T @ Pn @ A)
        Pt = Q + A.T @ Pn @ A + A.T @ Pn @ B @ Kt
        P[t - 1] = 0.5 * (Pt + Pt.T)
        K[t - 1] = Kt
        M[t - 1] = A + B @ Kt
        G[t - 1] = Gt
        q[t - 1] = q[t] + quadratic_noise_moments(Pn, model.noise.stage(t))[0]
    return RiccatiSolution(tuple(P), tuple(K), tuple(M), tuple(G), q, model)


# --------------------------------------------------------------------------
# Moments of xi'P xi
# --------------------------------------------------------------------------

def quadratic_noise_moments(P, components) -> tuple[float, float, np.ndarray]:
    """(E[xi'P xi], Var(xi'P xi), E[(xi'P xi) xi]) for independent zero-mean components.

    ``components`` is one stage of a NoiseSpec, or a NoiseSpec with a single stage.
    """
    if isinstance(components, NoiseSpec):
        if components.horizon != 1:
            raise ModelError("pass one stage of components, not a multi-stage NoiseSpec")
        components = components.stage(1)
    components = tuple(components)
    P = _mat(P, (len(components), len(components)), "P")
    for comp in components:
        if abs(comp.mean) > 1e-12 * max(1.0, comp.high - comp.low):
            raise ModelError("quadratic-form moments need zero-mean components")
    mom = np.array(noise_moments(NoiseSpec((components,)))[0])
    mu2, mu3, mu4 = mom[:, 0], mom[:, 1], mom[:, 2]
    d = np.diag(P)
    mean = float(d @ mu2)
    Ps = 0.5 * (P + P.T)
    off = np.triu(Ps, 1)
    var = float(d * d @ (mu4 - mu2 * mu2) + 4.0 * np.sum(off * off * np.outer(mu2, mu2)))
    third = d * mu3
    return mean, var, third


# --------------------------------------------------------------------------
# SAA closed form
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SaaClosedForm:
    """``k[t-1]``, ``qhat[t-1]`` for t = 1..T+1; ``offset[t-1]``, ``xbar[t-1]``, ``quad_mean[t-1]`` for t = 1..T."""

    k: np.ndarray
    qhat: np.ndarray
    offset: np.ndarray
    xbar: np.ndarray
    quad_mean: np.ndarray
    riccati: RiccatiSolution

    def value(self, t: int, x):
        """SAA value function at one state (vector) or, for n = 1, at an array of scalars."""
        P = self.riccati.P[t - 1]
        x = np.asarray(x, dtype=float)
        if P.shape == (1, 1):
            return P[0, 0] * x * x + self.k[t - 1, 0] * x + self.qhat[t - 1]
        return float(x @ P @ x + self.k[t - 1] @ x + self.qhat[t - 1])

    def error(self, t: int, x):
        """V_hat - V, affine in x."""
        x = np.asarray(x, dtype=float)
        if self.k.shape[1] == 1:
            return self.k[t - 1, 0] * x + (self.qhat[t - 1] - self.riccati.q[t - 1])
        return float(self.k[t - 1] @ x + self.qhat[t - 1] - self.riccati.q[t - 1])

    def policy(self, t: int, x):
        return self.riccati.policy(t, x) - self.offset[t - 1]


def saa_closed_form(riccati: RiccatiSolution, pool: SamplePool) -> SaaClosedForm:
    model = riccati.model
    T, n, m = model.horizon, model.n, model.m
    if pool.horizon != T or pool.samples.shape[2] != n:
        raise ModelError(f"pool shape {pool.samples.shape} does not match T={T}, n={n}")
    k = np.zeros((T + 1, n))
    qh = np.zeros(T + 1)
    off = np.zeros((T, m))
    xbar = np.zeros((T, n))
    qm = np.zeros(T)
    for t in range(T, 0, -1):
        xi = pool.stage(t)
        Pn = riccati.P[t]
        B = model.B[t - 1]
        xb = xi.mean(axis=0)
        quad = float(np.mean(np.einsum("ij,jk,ik->i", xi, Pn, xi)))
        z = 2.0 * Pn @ xb + k[t]
        fac = _chol(riccati.G[t - 1], t)
        Bz = B.T @ z
        k[t - 1] = riccati.M[t - 1].T @ z
        qh[t - 1] = qh[t] + quad + k[t] @ xb - 0.25 * Bz @ cho_solve(fac, Bz)
        off[t - 1] = cho_solve(fac, B.T @ Pn @ xb + 0.5 * B.T @ k[t])
        xbar[t - 1] = xb
        qm[t - 1] = quad
    return SaaClosedForm(k, qh, off, xbar, qm, riccati)


def scalar_saa_errors(riccati: RiccatiSolution, xbar: np.ndarray, quad_mean: np.ndarray):
    """Vectorized scalar closed form over replications.

    ``xbar`` and ``quad_mean`` have shape (R, T) and hold, per replication and
    stage, the sample mean and the mean of xi^2. Returns (k, dq), both (R, T+1),
    with V_hat - V = k x + dq.
    """
    model = riccati.model
    if model.n != 1 or model.m != 1:
        raise ModelError("vectorized closed form needs a scalar model")
    R_, T = xbar.shape
    k = np.zeros((R_, T + 1))
    dq = np.zeros((R_, T + 1))
    for t in range(T, 0, -1):
        Pn = riccati.P[t][0, 0]
        b = model.B[t - 1][0, 0]
        g = riccati.G[t - 1][0, 0]
        z = 2.0 * Pn * xbar[:, t - 1] + k[:, t]
        k[:, t - 1] = riccati.M[t - 1][0, 0] * z
        mean_quad = Pn * quad_mean[:, t - 1]
        dq[:, t - 1] = (dq[:, t] + mean_quad - riccati.q[t - 1] + riccati.q[t]
                        + k[:, t] * xbar[:, t - 1] - 0.25 * b * b * z * z / g)
    return k, dq


# --------------------------------------------------------------------------
# Limiting variance
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class AsymptoticLaw:
    """``S[t-1]``, ``c[t-1]``, ``v[t-1]`` for t = 1..T+1; ``gamma``, ``Sigma``, ``quad_var`` for t = 1..T."""

    S: tuple
    c: np.ndarray
    v: np.ndarray
    gamma: np.ndarray
    Sigma: tuple
    quad_var: np.ndarray

    @property
    def horizon(self) -> int:
        return len(self.Sigma)


def _noise_cov(components) -> np.ndarray:
    return np.diag([comp.moments[0] for comp in components])


def asymptotic_recursion(riccati: RiccatiSolution, noise: NoiseSpec | None = None) -> AsymptoticLaw:
    noise = riccati.model.noise if noise is None else noise
    T, n = riccati.horizon, riccati.model.n
    if noise.horizon != T or noise.dim != n:
        raise ModelError("noise does not match the Riccati solution")
    S = [None] * (T + 1)
    c = np.zeros((T + 1, n))
    v = np.zeros(T + 1)
    gam = np.zeros((T, n))
    Sig = [None] * T
    qv = np.zeros(T)
    S[T] = np.zeros((n, n))
    for t in range(T, 0, -1):
        Pn = riccati.P[t]
        M = riccati.M[t - 1]
        comps = noise.stage(t)
        Sigma = _noise_cov(comps)
        _, var, third = quadratic_noise_moments(Pn, comps)
        gam[t - 1] = 2.0 * Pn @ third
        St = M.T @ (S[t] + 4.0 * Pn @ Sigma @ Pn) @ M
        S[t - 1] = 0.5 * (St + St.T)
        c[t - 1] = M.T @ (c[t] + gam[t - 1])
        v[t - 1] = v[t] + var
        Sig[t - 1] = Sigma
        qv[t - 1] = var
    return AsymptoticLaw(tuple(S), c, v, gam, tuple(Sig), qv)


def _vec(x, n):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (n,):
        raise ModelError(f"state must have {n} components")
    return x


def asym_variance_eval(law: AsymptoticLaw, t: int, x) -> float:
    T = law.horizon
    if not 1 <= t <= T + 1:
        raise ConfigurationError(f"stage {t} outside 1..{T + 1}")
    x = _vec(x, law.c.shape[1])
    return float(x @ law.S[t - 1] @ x + 2.0 * law.c[t - 1] @ x + law.v[t - 1])


def variance_decomposition(law: AsymptoticLaw, riccati: RiccatiSolution, t: int, x) -> tuple[float, float]:
    """(propagated, current) parts of the limiting variance at stage t."""
    T = law.horizon
    if not 1 <= t <= T + 1:
        raise ConfigurationError(f"stage {t} outside 1..{T + 1}")
    x = _vec(x, law.c.shape[1])
    if t == T + 1:
        return 0.0, 0.0
    y = riccati.M[t - 1] @ x
    Pn = riccati.P[t]
    prop = float(y @ law.S[t] @ y + law.v[t] + 2.0 * y @ law.c[t])
    curr = float(4.0 * y @ Pn @ law.Sigma[t - 1] @ Pn @ y + law.quad_var[t - 1] + 2.0 * y @ law.gamma[t - 1])
    return prop, curr


def saa_bias(riccati: RiccatiSolution, law: AsymptoticLaw, N: int, t: int) -> float:
    """Exact E[V_hat_t(x) - V_t(x)] at sample size N (the same for every x).

    The slope k_hat has mean zero, so the bias sits in q_hat: each stage s >= t
    contributes -(1/4) E[z' B G^-1 B' z] with z = 2P xi_bar + k_hat_{s+1},
    and E[z z'] = (4 P Sigma P + S_{s+1}) / N.
    """
    if N < 1:
        raise ConfigurationError("N must be >= 1")
    T = riccati.horizon
    if not 1 <= t <= T + 1:
        raise ConfigurationError(f"stage {t} outside 1..{T + 1}")
    total = 0.0
    for s in range(t, T + 1):
        B = riccati.model.B[s - 1]
        Pn = riccati.P[s]
        Ez = (4.0 * Pn @ law.Sigma[s - 1] @ Pn + law.S[s]) / N
        total -= 0.25 * float(np.trace(B @ cho_solve(_chol(riccati.G[s - 1], s), B.T) @ Ez))
    return total


def trajectory_cost_variance(riccati: RiccatiSolution, law: AsymptoticLaw, x1) -> float:
    """Exact variance of the total cost along the optimal closed loop from x1.

    The total cost minus V_1(x1) is a sum of martingale increments
    Phi_t - V_t(x_t), so its variance is the sum over t of the expected
    one-step variance 4 y'P Sigma P y + Var(xi'P xi) + 2 y'gamma_t at
    y = M_t x_t, with the first two moments of x_t propagated forward.
    """
    n = riccati.model.n
    mean = _vec(x1, n)
    second = np.outer(mean, mean)
    total = 0.0
    for t in range(1, riccati.horizon + 1):
        M = riccati.M[t - 1]
        Pn = riccati.P[t]
        Sigma = law.Sigma[t - 1]
        Y = M @ second @ M.T
        total += 4.0 * float(np.trace(Pn @ Sigma @ Pn @ Y)) + law.quad_var[t - 1]
        total += 2.0 * float((M @ mean) @ law.gamma[t - 1])
        mean = M @ mean
        second = Y + Sigma
    return total


# --------------------------------------------------------------------------
# Grid version of a scalar model
# --------------------------------------------------------------------------

def lqr_problem(model: LqrModel, lo: float = -8.0, hi: float = 8.0, n_nodes: int = 1601,
                u_lo: float = -10.0, u_hi: float = 10.0, x1: float = 1.0) -> ProblemInstance:
    """Grid-DP version of a scalar model (same grid at every stage)."""
    if model.n != 1 or model.m != 1:
        raise ModelError("the grid engine handles scalar models only")
    stages = tuple(
        StageModel(a=float(model.A[t][0, 0]), b=float(model.B[t][0, 0]), g=1.0,
                   q=float(model.Q[t][0, 0]), r=float(model.R[t][0, 0]), u_lo=u_lo, u_hi=u_hi)
        for t in range(model.horizon))
    grid = build_grid(lo, hi, n_nodes)
    return ProblemInstance(stages, QuadraticCost(q2=float(model.Qf[0, 0])), x1,
                           (grid,) * (model.horizon + 1), model.noise)
