# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled Bellman kernel: per-node golden-section minimization of a
weighted expectation of stage cost plus interpolated cost-to-go.

The expectation term E(s) = sum_k w_k phi(s + g*xi_k) is piecewise linear in
the shift s = a*x + b*u. A full evaluation also returns the kink-free
window around s and the slope there, so later probes inside a cached
window are evaluated in O(1). Two windows are cached because minima tend
to sit on a kink with probes on both sides.

From the third node on, ``bellman_grid`` searches a short bracket around
the extrapolated control of the previous nodes whenever convexity certifies that the smallest
minimizer lies inside it, and the full interval otherwise.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs, INFINITY

cnp.import_array()

cdef double INVPHI = (sqrt(5.0) - 1.0) / 2.0
# warm bracket: centred on the linear extrapolation of the last two controls,
# half-width this fraction of the control range plus half the last step
cdef double WARM_FRAC = 1e-4


cdef struct Stage:
    double a, b, g, q, r, c, shortage, holding


cdef struct Grid:
    const double* v
    double lo, h, inv_h
    Py_ssize_t top      # n - 2, last segment index


cdef struct Window:
    double s, value, slope, lo, hi
    bint valid


cdef inline double interp(Grid* G, double y) nogil:
    cdef double s = (y - G.lo) * G.inv_h
    cdef Py_ssize_t i = 0
    if s > 0.0:
        i = <Py_ssize_t>s
        if i > G.top:
            i = G.top
    s -= i
    return G.v[i] + s * (G.v[i + 1] - G.v[i])


cdef void full_eval(Grid* G, Stage* st, double s, const double* xi, const double* w,
                    Py_ssize_t K, bint penalties, Window* out) nogil:
    cdef const double* v = G.v
    cdef double lo = G.lo, h = G.h, inv_h = G.inv_h, g = st.g
    cdef double shortage = st.shortage, holding = st.holding
    cdef Py_ssize_t top = G.top
    cdef double acc = 0.0, slope = 0.0, down = INFINITY, up = INFINITY
    cdef double y, t, frac, seg, term, sl
    cdef Py_ssize_t k, i
    for k in range(K):
        y = s + g * xi[k]
        t = (y - lo) * inv_h
        i = 0
        if t > 0.0:
            i = <Py_ssize_t>t
            if i > top:
                i = top
        frac = t - i
        seg = v[i + 1] - v[i]
        term = v[i] + frac * seg
        sl = seg * inv_h
        # interior kinks are nodes 1..top; the end segments extend linearly
        if i >= 1 and frac * h < down:
            down = frac * h
        if i < top and (1.0 - frac) * h < up:
            up = (1.0 - frac) * h
        if penalties:
            if y < 0.0:
                term -= shortage * y
                sl -= shortage
                if -y < up:
                    up = -y
            else:
                term += holding * y
                sl += holding
                if y < down:
                    down = y
        acc += w[k] * term
        slope += w[k] * sl
    out.s = s
    out.value = acc
    out.slope = slope
    out.lo = s - down
    out.hi = s + up
    out.valid = True


cdef inline double expect(Grid* G, Stage* st, double s, const double* xi, const double* w,
                          Py_ssize_t K, bint penalties, Window* w0, Window* w1, int* turn) nogil:
    if w0.valid and w0.lo <= s <= w0.hi:
        return w0.value + (s - w0.s) * w0.slope
    if w1.valid and w1.lo <= s <= w1.hi:
        return w1.value + (s - w1.s) * w1.slope
    if turn[0] == 0:
        full_eval(G, st, s, xi, w, K, penalties, w0)
        turn[0] = 1
        return w0.value
    full_eval(G, st, s, xi, w, K, penalties, w1)
    turn[0] = 0
    return w1.value


cdef inline double objective(Grid* G, Stage* st, double x, double u, const double* xi,
                             const double* w, Py_ssize_t K, bint penalties,
                             Window* w0, Window* w1, int* turn) nogil:
    return (st.q * x * x + st.r * u * u + st.c * u
            + expect(G, st, st.a * x + st.b * u, xi, w, K, penalties, w0, w1, turn))


def bellman_grid(const double[::1] xs, double vlo, double vh, const double[::1] v,
                 const double[::1] xi, const double[::1] w, tuple params,
                 double u_lo, double u_hi, double tol):
    """Minimize over [u_lo, u_hi] at every state in ``xs``.

    Returns (values, controls, n_extrapolated) where the last counts
    (node, noise) pairs whose successor state at the chosen control lies
    outside the cost-to-go grid.
    """
    cdef Stage st
    st.a, st.b, st.g, st.q, st.r, st.c, st.shortage, st.holding = params
    cdef Py_ssize_t n = xs.shape[0], K = xi.shape[0], nv = v.shape[0]
    if nv < 2:
        raise ValueError("cost-to-go grid needs at least 2 nodes")
    if K < 1 or w.shape[0] != K:
        raise ValueError("need matching, non-empty noise nodes and weights")
    cdef Grid G
    G.v = &v[0]
    G.lo = vlo
    G.h = vh
    G.inv_h = 1.0 / vh
    G.top = nv - 2
    cdef double vhi = vlo + (nv - 1) * vh
    cdef bint penalties = st.shortage != 0.0 or st.holding != 0.0
    out_v = np.empty(n)
    out_u = np.empty(n)
    cdef double[::1] ov = out_v, ou = out_u
    cdef const double* pxi = &xi[0]
    cdef const double* pw = &w[0]
    cdef Window w0, w1
    cdef int turn
    cdef Py_ssize_t i, k
    cdef long n_extrap = 0
    cdef double x, a, bb, c, d, fc, fd, best_u, best_f, f, y, g0, delta, l, r, fg
    cdef bint ok
    with nogil:
        for i in range(n):
            x = xs[i]
            w0.valid = False
            w1.valid = False
            turn = 0
            a = u_lo
            bb = u_hi
            if i >= 2:
                g0 = 2.0 * ou[i - 1] - ou[i - 2]
                if g0 < u_lo:
                    g0 = u_lo
                elif g0 > u_hi:
                    g0 = u_hi
                delta = WARM_FRAC * (u_hi - u_lo) + 0.5 * fabs(ou[i - 1] - ou[i - 2])
                l = g0 - delta
                if l < u_lo:
                    l = u_lo
                r = g0 + delta
                if r > u_hi:
                    r = u_hi
                fg = objective(&G, &st, x, g0, pxi, pw, K, penalties, &w0, &w1, &turn)
                # convexity: f(l) > f(g0) puts every minimizer right of l,
                # f(r) >= f(g0) keeps the smallest one at or left of g0
                ok = True
                if l > u_lo:
                    ok = objective(&G, &st, x, l, pxi, pw, K, penalties, &w0, &w1, &turn) > fg
                if ok and r < u_hi:
                    ok = objective(&G, &st, x, r, pxi, pw, K, penalties, &w0, &w1, &turn) >= fg
                if ok and r > l:
                    a = l
                    bb = r
            c = bb - INVPHI * (bb - a)
            d = a + INVPHI * (bb - a)
            fc = objective(&G, &st, x, c, pxi, pw, K, penalties, &w0, &w1, &turn)
            fd = objective(&G, &st, x, d, pxi, pw, K, penalties, &w0, &w1, &turn)
            while bb - a > tol:
                if fc <= fd:
                    bb = d
                    d = c
                    fd = fc
                    c = bb - INVPHI * (bb - a)
                    fc = objective(&G, &st, x, c, pxi, pw, K, penalties, &w0, &w1, &turn)
                else:
                    a = c
                    c = d
                    fc = fd
                    d = a + INVPHI * (bb - a)
                    fd = objective(&G, &st, x, d, pxi, pw, K, penalties, &w0, &w1, &turn)
            # Ascending candidates with strict improvement, so ties keep the
            # smaller control. An endpoint the bracket moved away from is
            # strictly worse (convexity) and is not re-evaluated.
            if fc <= fd:
                best_u = c
                best_f = fc
            else:
                best_u = d
                best_f = fd
            if a == u_lo:
                f = objective(&G, &st, x, u_lo, pxi, pw, K, penalties, &w0, &w1, &turn)
                if f <= best_f:
                    best_f = f
                    best_u = u_lo
            if bb == u_hi:
                f = objective(&G, &st, x, u_hi, pxi, pw, K, penalties, &w0, &w1, &turn)
                if f < best_f:
                    best_f = f
                    best_u = u_hi
            ov[i] = best_f
            ou[i] = best_u
            y = st.a * x + st.b * best_u
            for k in range(K):
                f = y + st.g * pxi[k]
                if f < vlo or f > vhi:
                    n_extrap += 1
    return out_v, out_u, int(n_extrap)


cdef struct Antider:
    const double* v
    const double* C     # integral of the interpolant from the first node to node i
    double lo, h, inv_h, s0, s1
    Py_ssize_t n


cdef inline double antider(Antider* A, double y) nogil:
    cdef double d, t
    cdef Py_ssize_t i
    if y <= A.lo:
        d = y - A.lo
        return d * (A.v[0] + 0.5 * A.s0 * d)
    t = (y - A.lo) * A.inv_h
    i = <Py_ssize_t>t
    if i >= A.n - 1:
        d = y - (A.lo + (A.n - 1) * A.h)
        return A.C[A.n - 1] + d * (A.v[A.n - 1] + 0.5 * A.s1 * d)
    d = (t - i) * A.h
    return A.C[i] + d * (A.v[i] + 0.5 * (A.v[i + 1] - A.v[i]) * A.inv_h * d)


cdef inline double penalty_antider(double y, double shortage, double holding) nogil:
    if y < 0.0:
        return -0.5 * shortage * y * y
    return 0.5 * holding * y * y


cdef inline double uniform_objective(Antider* A, Stage* st, double x, double u, double zlo,
                                     double zhi, double inv_span, bint point) nogil:
    cdef double s = st.a * x + st.b * u
    cdef double e, y, ylo, yhi, t, frac
    cdef Py_ssize_t i
    if point:
        y = s + 0.5 * (zlo + zhi)
        t = (y - A.lo) * A.inv_h
        i = 0
        if t > 0.0:
            i = <Py_ssize_t>t
            if i > A.n - 2:
                i = A.n - 2
        frac = t - i
        e = A.v[i] + frac * (A.v[i + 1] - A.v[i])
        if y < 0.0:
            e -= st.shortage * y
        else:
            e += st.holding * y
    else:
        ylo = s + zlo
        yhi = s + zhi
        e = (antider(A, yhi) - antider(A, ylo)
             + penalty_antider(yhi, st.shortage, st.holding)
             - penalty_antider(ylo, st.shortage, st.holding)) * inv_span
    return st.q * x * x + st.r * u * u + st.c * u + e


def bellman_uniform(const double[::1] xs, double vlo, double vh, const double[::1] v,
                    double low, double high, tuple params, double u_lo, double u_hi, double tol):
    """Same contract as ``bellman_grid`` for xi ~ Uniform(low, high).

    The expectation of the piecewise-linear cost-to-go (plus penalties) is
    integrated exactly through its piecewise-quadratic antiderivative, so
    the objective carries no quadrature error and is smooth in u.
    ``n_extrapolated`` counts nodes whose successor range leaves the grid.
    """
    cdef Stage st
    st.a, st.b, st.g, st.q, st.r, st.c, st.shortage, st.holding = params
    cdef Py_ssize_t n = xs.shape[0], nv = v.shape[0]
    if nv < 2:
        raise ValueError("cost-to-go grid needs at least 2 nodes")
    if not low < high:
        raise ValueError("need low < high")
    C_arr = np.empty(nv)
    cdef double[::1] C = C_arr
    cdef Py_ssize_t i
    C[0] = 0.0
    for i in range(nv - 1):
        C[i + 1] = C[i] + 0.5 * vh * (v[i] + v[i + 1])
    cdef Antider A
    A.v = &v[0]
    A.C = &C[0]
    A.lo = vlo
    A.h = vh
    A.inv_h = 1.0 / vh
    A.n = nv
    A.s0 = (v[1] - v[0]) / vh
    A.s1 = (v[nv - 1] - v[nv - 2]) / vh
    cdef double zlo = st.g * low, zhi = st.g * high
    if zlo > zhi:
        zlo, zhi = zhi, zlo
    # below this width the integral is replaced by the midpoint value to
    # avoid cancellation; the two differ by less than width * slope jump
    cdef bint point = (zhi - zlo) <= 1e-6 * vh
    cdef double inv_span = 1.0 / (zhi - zlo) if not point else 0.0
    cdef double vhi = vlo + (nv - 1) * vh
    out_v = np.empty(n)
    out_u = np.empty(n)
    cdef double[::1] ov = out_v, ou = out_u
    cdef long n_extrap = 0
    cdef double x, a, bb, c, d, fc, fd, best_u, best_f, f, y
    with nogil:
        for i in range(n):
            x = xs[i]
            a = u_lo
            bb = u_hi
            c = bb - INVPHI * (bb - a)
            d = a + INVPHI * (bb - a)
            fc = uniform_objective(&A, &st, x, c, zlo, zhi, inv_span, point)
            fd = uniform_objective(&A, &st, x, d, zlo, zhi, inv_span, point)
            while bb - a > tol:
                if fc <= fd:
                    bb = d
                    d = c
                    fd = fc
                    c = bb - INVPHI * (bb - a)
                    fc = uniform_objective(&A, &st, x, c, zlo, zhi, inv_span, point)
                else:
                    a = c
                    c = d
                    fc = fd
                    d = a + INVPHI * (bb - a)
                    fd = uniform_objective(&A, &st, x, d, zlo, zhi, inv_span, point)
            if fc <= fd:
                best_u = c
                best_f = fc
            else:
                best_u = d
                best_f = fd
            if a == u_lo:
                f = uniform_objective(&A, &st, x, u_lo, zlo, zhi, inv_span, point)
                if f <= best_f:
                    best_f = f
                    best_u = u_lo
            if bb == u_hi:
                f = uniform_objective(&A, &st, x, u_hi, zlo, zhi, inv_span, point)
                if f < best_f:
                    best_f = f
                    best_u = u_hi
            ov[i] = best_f
            ou[i] = best_u
            y = st.a * x + st.b * best_u
            if y + zlo < vlo or y + zhi > vhi:
                n_extrap += 1
    return out_v, out_u, int(n_extrap)
