"""Pure-numpy twin of the compiled kernels, used when the extension is not built.

``bellman_uniform`` runs golden section for all states at once, each state
stopping on its own bracket width. ``bellman_grid`` warm-starts each node
from the controls already found, so it walks the nodes in order like the compiled
loop.
"""
import numpy as np

INVPHI = (np.sqrt(5.0) - 1.0) / 2.0
WARM_FRAC = 1e-4


def _interp(v, vlo, vinv_h, y):
    s = (y - vlo) * vinv_h
    i = np.clip(np.floor(s), 0, v.shape[0] - 2).astype(np.intp)
    s -= i
    return v[i] + s * (v[i + 1] - v[i])


def _objective(xs, u, params, v, vlo, vinv_h, xi, w):
    a, b, g, q, r, c, shortage, holding = params
    y = (a * xs + b * u)[:, None] + g * xi[None, :]
    term = _interp(v, vlo, vinv_h, y)
    if shortage != 0.0 or holding != 0.0:
        term = term + np.where(y < 0.0, -shortage * y, holding * y)
    return q * xs * xs + r * u * u + c * u + term @ w


def _golden(obj, G, u_lo, u_hi, tol):
    a = np.full(G, float(u_lo))
    bb = np.full(G, float(u_hi))
    c = bb - INVPHI * (bb - a)
    d = a + INVPHI * (bb - a)
    fc, fd = obj(c), obj(d)
    active = bb - a > tol
    while active.any():
        left = active & (fc <= fd)
        right = active & ~(fc <= fd)
        bb = np.where(left, d, bb)
        a = np.where(right, c, a)
        new_c = np.where(left, bb - INVPHI * (bb - a), np.where(right, d, c))
        new_d = np.where(right, a + INVPHI * (bb - a), np.where(left, c, d))
        fp = obj(np.where(left, new_c, new_d))
        fc, fd = np.where(left, fp, np.where(right, fd, fc)), np.where(right, fp, np.where(left, fc, fd))
        c, d = new_c, new_d
        active = bb - a > tol
    # same candidate rule as the compiled kernel
    left = fc <= fd
    best_u = np.where(left, c, d)
    best_f = np.where(left, fc, fd)
    at_lo = a == u_lo
    if at_lo.any():
        ul = np.full(G, float(u_lo))
        fl = obj(ul)
        take = at_lo & (fl <= best_f)
        best_u = np.where(take, ul, best_u)
        best_f = np.where(take, fl, best_f)
    at_hi = bb == u_hi
    if at_hi.any():
        uh = np.full(G, float(u_hi))
        fh = obj(uh)
        take = at_hi & (fh < best_f)
        best_u = np.where(take, uh, best_u)
        best_f = np.where(take, fh, best_f)
    return best_f, best_u


def _golden_node(f, u_lo, u_hi, tol, a, bb):
    """Scalar golden section on [a, bb] inside [u_lo, u_hi]."""
    c = bb - INVPHI * (bb - a)
    d = a + INVPHI * (bb - a)
    fc, fd = f(c), f(d)
    while bb - a > tol:
        if fc <= fd:
            bb, d, fd = d, c, fc
            c = bb - INVPHI * (bb - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + INVPHI * (bb - a)
            fd = f(d)
    best_u, best_f = (c, fc) if fc <= fd else (d, fd)
    if a == u_lo:
        fl = f(u_lo)
        if fl <= best_f:
            best_u, best_f = u_lo, fl
    if bb == u_hi:
        fh = f(u_hi)
        if fh < best_f:
            best_u, best_f = u_hi, fh
    return best_f, best_u


def _warm_bracket(f, g0, delta, u_lo, u_hi):
    l, r = max(u_lo, g0 - delta), min(u_hi, g0 + delta)
    fg = f(g0)
    ok = True
    if l > u_lo:
        ok = f(l) > fg
    if ok and r < u_hi:
        ok = f(r) >= fg
    return (l, r) if ok and r > l else (u_lo, u_hi)


def bellman_grid(xs, vlo, vh, v, xi, w, params, u_lo, u_hi, tol):
    xs = np.ascontiguousarray(xs, dtype=float)
    v = np.ascontiguousarray(v, dtype=float)
    xi = np.ascontiguousarray(xi, dtype=float)
    w = np.ascontiguousarray(w, dtype=float)
    if v.shape[0] < 2:
        raise ValueError("cost-to-go grid needs at least 2 nodes")
    if xi.shape[0] < 1 or w.shape[0] != xi.shape[0]:
        raise ValueError("need matching, non-empty noise nodes and weights")
    vinv_h = 1.0 / vh
    u_lo, u_hi = float(u_lo), float(u_hi)
    n = xs.shape[0]
    best_f = np.empty(n)
    best_u = np.empty(n)
    for i in range(n):
        xi_ = xs[i:i + 1]

        def f(u):
            return float(_objective(xi_, np.array([u]), params, v, vlo, vinv_h, xi, w)[0])

        a, bb = u_lo, u_hi
        if i >= 2:
            step = float(best_u[i - 1] - best_u[i - 2])
            g0 = min(max(float(best_u[i - 1]) + step, u_lo), u_hi)
            delta = WARM_FRAC * (u_hi - u_lo) + 0.5 * abs(step)
            a, bb = _warm_bracket(f, g0, delta, u_lo, u_hi)
        best_f[i], best_u[i] = _golden_node(f, u_lo, u_hi, tol, a, bb)
    a_, b_, g_ = params[:3]
    y = (a_ * xs + b_ * best_u)[:, None] + g_ * xi[None, :]
    vhi = vlo + (v.shape[0] - 1) * vh
    n_extrap = int(np.count_nonzero((y < vlo) | (y > vhi)))
    return best_f, best_u, n_extrap


def _antider(v, C, vlo, vh, y):
    n = v.shape[0]
    t = (y - vlo) / vh
    i = np.clip(np.floor(t), 0, n - 2).astype(np.intp)
    d = (t - i) * vh
    out = C[i] + d * (v[i] + 0.5 * (v[i + 1] - v[i]) / vh * d)
    below = y <= vlo
    if below.any():
        d0 = y[below] - vlo
        out[below] = d0 * (v[0] + 0.5 * (v[1] - v[0]) / vh * d0)
    above = t >= n - 1
    if above.any():
        d1 = y[above] - (vlo + (n - 1) * vh)
        out[above] = C[-1] + d1 * (v[-1] + 0.5 * (v[-1] - v[-2]) / vh * d1)
    return out


def _penalty_antider(y, shortage, holding):
    return np.where(y < 0.0, -0.5 * shortage * y * y, 0.5 * holding * y * y)


def bellman_uniform(xs, vlo, vh, v, low, high, params, u_lo, u_hi, tol):
    xs = np.ascontiguousarray(xs, dtype=float)
    v = np.ascontiguousarray(v, dtype=float)
    if v.shape[0] < 2:
        raise ValueError("cost-to-go grid needs at least 2 nodes")
    if not low < high:
        raise ValueError("need low < high")
    a, b, g, q, r, c, shortage, holding = params
    C = np.concatenate(([0.0], np.cumsum(0.5 * vh * (v[:-1] + v[1:]))))
    zlo, zhi = sorted((g * low, g * high))
    point = (zhi - zlo) <= 1e-6 * vh
    vinv_h = 1.0 / vh

    def obj(u):
        s = a * xs + b * u
        if point:
            y = s + 0.5 * (zlo + zhi)
            e = _interp(v, vlo, vinv_h, y) + np.where(y < 0.0, -shortage * y, holding * y)
        else:
            ylo, yhi = s + zlo, s + zhi
            e = (_antider(v, C, vlo, vh, yhi) - _antider(v, C, vlo, vh, ylo)
                 + _penalty_antider(yhi, shortage, holding)
                 - _penalty_antider(ylo, shortage, holding)) / (zhi - zlo)
        return q * xs * xs + r * u * u + c * u + e

    best_f, best_u = _golden(obj, xs.shape[0], u_lo, u_hi, tol)
    y = a * xs + b * best_u
    vhi = vlo + (v.shape[0] - 1) * vh
    n_extrap = int(np.count_nonzero((y + zlo < vlo) | (y + zhi > vhi)))
    return best_f, best_u, n_extrap
