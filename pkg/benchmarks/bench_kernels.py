"""Time the compiled and numpy Bellman kernels on one benchmark stage.

    python3 benchmarks/bench_kernels.py [--samples 1000] [--repeat 3]

The stage is the scalar LQR instance on the default grid (1601 nodes on
[-8, 8]) with the stage-20 value function as cost-to-go.
"""
import argparse
import time

import numpy as np

from saaclt import SeedPlan, _backend, draw_pool, lqr, terminal_value


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--samples", type=int, default=1000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    model = lqr.benchmark_instance()
    prob = lqr.lqr_problem(model)
    V = terminal_value(prob)
    grid = prob.grid(20)
    stage = prob.stage(20)
    xi = draw_pool(SeedPlan(1, 20), 0, args.samples, model.noise).scalar_stage(20)
    w = np.full(xi.size, 1.0 / xi.size)
    lo, hi = model.noise.scalar(20).low, model.noise.scalar(20).high
    common = (grid.nodes, V.grid.lo, V.grid.h, V.values)

    kernels = _backend.available()
    rows = []
    ref = {}
    for name, k in kernels.items():
        t_saa, saa = best_of(lambda: k.bellman_grid(*common, xi, w, stage.params, stage.u_lo, stage.u_hi, 1e-10),
                             args.repeat)
        t_exact, exact = best_of(lambda: k.bellman_uniform(*common, lo, hi, stage.params, stage.u_lo, stage.u_hi,
                                                           1e-10), args.repeat)
        rows.append((name, t_saa, t_exact))
        ref[name] = (saa[0], exact[0])

    print(f"nodes {grid.n}, samples {xi.size}, best of {args.repeat}")
    print(f"{'backend':<8} {'sample-average [s]':>19} {'exact uniform [s]':>18}")
    for name, a, b in rows:
        print(f"{name:<8} {a:>19.4f} {b:>18.4f}")
    if len(rows) == 2:
        t = {name: (a, b) for name, a, b in rows}
        (pa, pb), (ca, cb) = t["python"], t["cython"]
        print(f"{'speed-up':<8} {pa / ca:>18.1f}x {pb / cb:>17.1f}x")
        d_saa = np.abs(ref["cython"][0] - ref["python"][0]).max()
        d_ex = np.abs(ref["cython"][1] - ref["python"][1]).max()
        print(f"max |cython - python| value: sample-average {d_saa:.2e}, exact {d_ex:.2e}")
    else:
        print("compiled extension not available; only the numpy kernels were timed")


if __name__ == "__main__":
    main()
