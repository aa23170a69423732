"""Replicated Monte Carlo runs of SAA backward induction.

Each replication draws its own sample pool, solves the SAA recursion with
the selected engine and records sqrt(N) * (V_hat_t(x) - V_t(x)) at the
requested cells. Replications are split into contiguous chunks for worker
processes; every row depends only on its replication index, so the matrix
does not depend on the worker count.
"""
from __future__ import annotations

import csv
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr, ndtri

from . import dp, lqr
from .errors import ConfigurationError, DomainError
from .model import ProblemInstance
from .sampling import SeedPlan, draw_pool

log = logging.getLogger(__name__)

N_BINS = 50


@dataclass(frozen=True, eq=False)
class ReplicationConfig:
    """``engine`` is 'closed-form' (needs ``lqr_model``) or 'grid' (needs ``problem``)."""

    N: int
    R: int
    states: tuple
    stages: tuple
    plan: SeedPlan
    engine: str = "closed-form"
    lqr_model: lqr.LqrModel | None = None
    problem: ProblemInstance | None = None
    expectation: str = "exact"

    def __post_init__(self):
        if self.N < 1:
            raise ConfigurationError(f"N must be >= 1, got {self.N}")
        if self.R < 2:
            raise ConfigurationError(f"R must be >= 2, got {self.R}")
        object.__setattr__(self, "states", tuple(float(x) for x in self.states))
        object.__setattr__(self, "stages", tuple(int(t) for t in self.stages))
        if not self.states or not self.stages:
            raise ConfigurationError("need at least one evaluation state and stage")
        if self.engine == "closed-form":
            if self.lqr_model is None:
                raise ConfigurationError("closed-form engine needs an LQR model")
            T = self.lqr_model.horizon
            if self.lqr_model.n != 1:
                raise ConfigurationError("evaluation states are scalars; the model must have n = 1")
        elif self.engine == "grid":
            if self.problem is None:
                raise ConfigurationError("grid engine needs a grid problem")
            T = self.problem.horizon
        else:
            raise ConfigurationError(f"unknown engine {self.engine!r}")
        if T != self.plan.horizon:
            raise ConfigurationError("seed plan horizon does not match the problem")
        bad = [t for t in self.stages if not 1 <= t <= T]
        if bad:
            raise ConfigurationError(f"evaluation stages {bad} outside 1..{T}")

    @property
    def cells(self) -> list[tuple[int, float]]:
        return [(t, x) for t in self.stages for x in self.states]

    @property
    def noise(self):
        return self.lqr_model.noise if self.engine == "closed-form" else self.problem.noise


@dataclass(frozen=True, eq=False)
class ErrorSampleMatrix:
    """``data[r, j]`` is the scaled error of replication r at ``cells[j]``."""

    data: np.ndarray
    cells: tuple
    N: int

    def __post_init__(self):
        if self.data.ndim != 2 or self.data.shape[1] != len(self.cells):
            raise ConfigurationError("data must be (replications, cells)")
        if not np.all(np.isfinite(self.data)):
            raise ConfigurationError("non-finite scaled errors")

    @property
    def R(self) -> int:
        return self.data.shape[0]

    def column(self, t: int, x: float) -> np.ndarray:
        return self.data[:, self.cells.index((int(t), float(x)))]


# --------------------------------------------------------------------------
# Engines
# --------------------------------------------------------------------------

def _closed_form_rows(cfg: ReplicationConfig, reps: range) -> np.ndarray:
    ric = lqr.riccati_backward(cfg.lqr_model)
    T = cfg.lqr_model.horizon
    xbar = np.empty((len(reps), T))
    quad = np.empty((len(reps), T))
    for i, r in enumerate(reps):
        xi = draw_pool(cfg.plan, r, cfg.N, cfg.noise).samples[:, :, 0]
        xbar[i] = xi.mean(axis=1)
        quad[i] = (xi * xi).mean(axis=1)
    k, dq = lqr.scalar_saa_errors(ric, xbar, quad)
    cols = [k[:, t - 1] * x + dq[:, t - 1] for t, x in cfg.cells]
    return np.sqrt(cfg.N) * np.stack(cols, axis=1)


def _grid_rows(cfg: ReplicationConfig, reps: range, truth: dp.DPSolution) -> np.ndarray:
    out = np.empty((len(reps), len(cfg.cells)))
    ref = np.array([truth.value(t)(x) for t, x in cfg.cells])
    for i, r in enumerate(reps):
        pool = draw_pool(cfg.plan, r, cfg.N, cfg.noise)
        sol = dp.backward_induction(cfg.problem, "saa", pool)
        est = np.array([sol.value(t)(x) for t, x in cfg.cells])
        out[i] = np.sqrt(cfg.N) * (est - ref)
    return out


def true_solution(cfg: ReplicationConfig) -> dp.DPSolution:
    return dp.backward_induction(cfg.problem, "true", expectation=cfg.expectation)


def _run_chunk(args):
    cfg, start, stop, truth = args
    reps = range(start, stop)
    if cfg.engine == "closed-form":
        return start, _closed_form_rows(cfg, reps)
    return start, _grid_rows(cfg, reps, truth)


def _chunks(R: int, workers: int) -> list[tuple[int, int]]:
    n = max(1, min(R, workers * 4))
    edges = np.linspace(0, R, n + 1).round().astype(int)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def run_replications(cfg: ReplicationConfig, workers: int = 1) -> ErrorSampleMatrix:
    if workers < 1:
        raise ConfigurationError("workers must be >= 1")
    truth = true_solution(cfg) if cfg.engine == "grid" else None
    data = np.empty((cfg.R, len(cfg.cells)))
    tasks = [(cfg, a, b, truth) for a, b in _chunks(cfg.R, workers)]
    if workers == 1:
        results = map(_run_chunk, tasks)
        for start, rows in results:
            data[start:start + rows.shape[0]] = rows
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            for start, rows in ex.map(_run_chunk, tasks):
                data[start:start + rows.shape[0]] = rows
    return ErrorSampleMatrix(data, tuple(cfg.cells), cfg.N)


@dataclass(frozen=True)
class CrossCheck:
    max_abs_diff: float
    pools: int
    interior: tuple


def cross_check(model: lqr.LqrModel, problem: ProblemInstance, plan: SeedPlan, N: int, pools: int,
                interior: tuple = (-5.0, 5.0)) -> CrossCheck:
    """Largest |grid SAA - closed-form SAA| over interior nodes, all stages, shared pools."""
    ric = lqr.riccati_backward(model)
    worst = 0.0
    for r in range(pools):
        pool = draw_pool(plan, r, N, model.noise)
        cf = lqr.saa_closed_form(ric, pool)
        sol = dp.backward_induction(problem, "saa", pool)
        for t in range(1, problem.horizon + 1):
            x = problem.grid(t).nodes
            keep = (x >= interior[0]) & (x <= interior[1])
            diff = np.abs(sol.value(t).values[keep] - cf.value(t, x[keep]))
            worst = max(worst, float(diff.max()))
    return CrossCheck(worst, pools, tuple(interior))


# --------------------------------------------------------------------------
# Summaries
# --------------------------------------------------------------------------

def normal_quantile(p):
    """Inverse standard normal CDF."""
    arr = np.asarray(p, dtype=float)
    if not np.all((arr > 0) & (arr < 1)):
        raise DomainError("probability must lie in (0, 1)")
    out = ndtri(arr)
    return float(out) if np.ndim(p) == 0 else out


@dataclass(frozen=True, eq=False)
class CellSummary:
    t: int
    x: float
    mean: float
    variance: float
    var_ci_halfwidth: float
    ks_stat: float
    qq_corr: float
    hist_edges: np.ndarray
    hist_counts: np.ndarray
    qq_theoretical: np.ndarray
    qq_empirical: np.ndarray
    defined: bool = True


@dataclass(frozen=True, eq=False)
class StatsSummary:
    cells: tuple
    R: int
    by_cell: dict = field(default_factory=dict)

    def __getitem__(self, key) -> CellSummary:
        t, x = key
        return self.by_cell[(int(t), float(x))]


def ks_normal(sample: np.ndarray, mean: float, sd: float) -> float:
    """Sup distance between the empirical CDF and N(mean, sd^2)."""
    z = np.sort(sample)
    n = z.size
    F = ndtr((z - mean) / sd)
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - F), np.max(F - (i - 1) / n)))


def qq_points(sample: np.ndarray, mean: float, sd: float) -> tuple[np.ndarray, np.ndarray]:
    n = sample.size
    probs = (np.arange(1, n + 1) - 0.5) / n
    return mean + sd * normal_quantile(probs), np.sort(sample)


def summarize_column(col: np.ndarray, t: int, x: float) -> CellSummary:
    R = col.size
    if R < 2:
        raise ConfigurationError("need at least 2 replications")
    mean = float(col.mean())
    var = float(col.var(ddof=1))
    half = float(np.sqrt(2.0 / (R - 1)) * var)
    lo, hi = float(col.min()), float(col.max())
    if hi > lo:
        counts, edges = np.histogram(col, bins=N_BINS, range=(lo, hi))
    else:
        counts, edges = np.histogram(col, bins=N_BINS, range=(lo - 0.5, lo + 0.5))
    if var > 0 and hi > lo:
        sd = np.sqrt(var)
        ks = ks_normal(col, mean, sd)
        theo, emp = qq_points(col, mean, sd)
        qq = float(np.corrcoef(theo, emp)[0, 1])
        defined = True
    else:
        ks = qq = float("nan")
        theo = np.full(R, np.nan)
        emp = np.sort(col)
        defined = False
    return CellSummary(t, x, mean, var, half, ks, qq, edges, counts, theo, emp, defined)


def summarize(errors: ErrorSampleMatrix) -> StatsSummary:
    out = StatsSummary(errors.cells, errors.R)
    for j, (t, x) in enumerate(errors.cells):
        out.by_cell[(t, x)] = summarize_column(errors.data[:, j], t, x)
        if not out.by_cell[(t, x)].defined:
            log.warning("cell (t=%d, x=%g): zero variance, KS and QQ undefined", t, x)
    return out


# --------------------------------------------------------------------------
# CSV output
# --------------------------------------------------------------------------

def fmt_x(x: float) -> str:
    return f"{x:g}"


def _num(v) -> str:
    return repr(float(v))


def write_errors(errors: ErrorSampleMatrix, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["replication", "t", "x", "scaled_error"])
        for r in range(errors.R):
            for j, (t, x) in enumerate(errors.cells):
                w.writerow([r, t, _num(x), _num(errors.data[r, j])])


def write_summary(summary: StatsSummary, out_dir) -> list[str]:
    """summary.csv plus one histogram and one QQ file per cell."""
    written = []
    path = os.path.join(out_dir, "summary.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "x", "mean", "variance", "var_ci_halfwidth", "ks_stat", "qq_corr"])
        for cell in summary.cells:
            s = summary.by_cell[cell]
            w.writerow([s.t, _num(s.x), _num(s.mean), _num(s.variance), _num(s.var_ci_halfwidth),
                        _num(s.ks_stat), _num(s.qq_corr)])
    written.append(path)
    for cell in summary.cells:
        s = summary.by_cell[cell]
        tag = f"t{s.t}_x{fmt_x(s.x)}"
        path = os.path.join(out_dir, f"hist_{tag}.csv")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["bin_lo", "bin_hi", "count"])
            for lo, hi, c in zip(s.hist_edges[:-1], s.hist_edges[1:], s.hist_counts):
                w.writerow([_num(lo), _num(hi), int(c)])
        written.append(path)
        path = os.path.join(out_dir, f"qq_{tag}.csv")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["theoretical", "empirical"])
            for a, b in zip(s.qq_theoretical, s.qq_empirical):
                w.writerow([_num(a), _num(b)])
        written.append(path)
    return written
