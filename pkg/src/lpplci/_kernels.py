"""Compiled inner loops: basis evaluation, the slaved linear solve and Nelder-Mead.

Everything here assumes validated inputs (``t < tc`` for every sample). The
public wrappers in :mod:`lpplci.model` and :mod:`lpplci.calibration` do the
checking. Functions are compiled with ``cache=True`` and without fastmath so
results are bit-reproducible between processes.
"""

import types

import numpy as np
from numba import njit

# Scaled-pivot ratio below which the Gram matrix is treated as rank-deficient.
RANK_TOL = 1e-10


@njit(cache=True)
def basis(t, tc, beta, omega):
    n = t.shape[0]
    f = np.empty(n)
    g = np.empty(n)
    h = np.empty(n)
    for i in range(n):
        lg = np.log(tc - t[i])
        fi = np.exp(beta * lg)
        f[i] = fi
        g[i] = fi * np.cos(omega * lg)
        h[i] = fi * np.sin(omega * lg)
    return f, g, h


@njit(cache=True)
def solve4(gram, rhs):
    """Solve ``gram @ x = rhs`` by Gaussian elimination with partial pivoting.

    The system is first equilibrated to unit diagonal. Returns ``(x, rcond)``
    where ``rcond`` is the ratio of the smallest to the largest absolute pivot
    of the equilibrated system; ``rcond = 0`` flags an unusable matrix.
    """
    n = 4
    x = np.zeros(n)
    scale = np.empty(n)
    for i in range(n):
        d = gram[i, i]
        if not d > 0.0:
            return x, 0.0
        scale[i] = 1.0 / np.sqrt(d)
    m = np.empty((n, n + 1))
    for i in range(n):
        for j in range(n):
            m[i, j] = gram[i, j] * scale[i] * scale[j]
        m[i, n] = rhs[i] * scale[i]

    pmin = np.inf
    pmax = 0.0
    for k in range(n):
        p = k
        best = abs(m[k, k])
        for i in range(k + 1, n):
            if abs(m[i, k]) > best:
                best = abs(m[i, k])
                p = i
        if p != k:
            for j in range(n + 1):
                tmp = m[k, j]
                m[k, j] = m[p, j]
                m[p, j] = tmp
        piv = m[k, k]
        if abs(piv) < pmin:
            pmin = abs(piv)
        if abs(piv) > pmax:
            pmax = abs(piv)
        if piv == 0.0:
            return x, 0.0
        for i in range(k + 1, n):
            fac = m[i, k] / piv
            for j in range(k, n + 1):
                m[i, j] -= fac * m[k, j]

    z = np.empty(n)
    for i in range(n - 1, -1, -1):
        acc = m[i, n]
        for j in range(i + 1, n):
            acc -= m[i, j] * z[j]
        z[i] = acc / m[i, i]
    for i in range(n):
        x[i] = z[i] * scale[i]
    return x, pmin / pmax


@njit(cache=True)
def linear_fit(t, y, tc, beta, omega):
    """Slaved linear parameters ``(A, B, C1, C2)``, residual cost and rcond.

    The Gram matrix holds the sums over ``1, f, g, h`` exactly as in the
    normal equations of the reparametrized model. The cost is the explicit
    sum of squared residuals (not the quadratic-form shortcut) so a perfect
    fit returns a cost at round-off level.
    """
    n = t.shape[0]
    f, g, h = basis(t, tc, beta, omega)
    gram = np.zeros((4, 4))
    rhs = np.zeros(4)
    sf = sg = sh = 0.0
    sff = sfg = sfh = sgg = sgh = shh = 0.0
    sy = syf = syg = syh = 0.0
    for i in range(n):
        fi = f[i]
        gi = g[i]
        hi = h[i]
        yi = y[i]
        sf += fi
        sg += gi
        sh += hi
        sff += fi * fi
        sfg += fi * gi
        sfh += fi * hi
        sgg += gi * gi
        sgh += gi * hi
        shh += hi * hi
        sy += yi
        syf += yi * fi
        syg += yi * gi
        syh += yi * hi
    gram[0, 0] = n
    gram[0, 1] = gram[1, 0] = sf
    gram[0, 2] = gram[2, 0] = sg
    gram[0, 3] = gram[3, 0] = sh
    gram[1, 1] = sff
    gram[1, 2] = gram[2, 1] = sfg
    gram[1, 3] = gram[3, 1] = sfh
    gram[2, 2] = sgg
    gram[2, 3] = gram[3, 2] = sgh
    gram[3, 3] = shh
    rhs[0] = sy
    rhs[1] = syf
    rhs[2] = syg
    rhs[3] = syh

    coef, rcond = solve4(gram, rhs)
    if not rcond >= RANK_TOL:
        return coef, np.inf, rcond
    cost = 0.0
    for i in range(n):
        r = y[i] - coef[0] - coef[1] * f[i] - coef[2] * g[i] - coef[3] * h[i]
        cost += r * r
    return coef, cost, rcond


@njit(cache=True)
def box_point(u, lo, hi):
    """Map unit-box coordinates to (tc, beta, omega), clipping into the box.

    Returns the clipped physical point and the squared out-of-box distance
    in unit coordinates.
    """
    p = np.empty(3)
    excess = 0.0
    for k in range(3):
        v = u[k]
        if v < 0.0:
            excess += v * v
            v = 0.0
        elif v > 1.0:
            excess += (v - 1.0) * (v - 1.0)
            v = 1.0
        p[k] = lo[k] + v * (hi[k] - lo[k])
    return p, excess


# Weight of the quadratic out-of-box penalty, relative to (1 + cost).
PENALTY = 100.0


@njit(cache=True)
def penalized_cost(u, args):
    t, y, lo, hi = args
    p, excess = box_point(u, lo, hi)
    _, cost, _ = linear_fit(t, y, p[0], p[1], p[2])
    if excess > 0.0:
        cost += PENALTY * (1.0 + cost) * excess
    return cost


# The simplex kernel calls the module-level name ``objective``. Compiled, it is
# bound to the penalized LPPL cost (a plain global call, so the kernel caches);
# ``with_objective`` rebinds it for arbitrary Python callables.
objective = penalized_cost


@njit(cache=True)
def nelder_mead(args, x0, step, tol, max_iters):
    """Nelder-Mead with reflection 1, expansion 2, contraction 0.5, shrink 0.5.

    Stops when the spread of cost values across the simplex drops below
    ``tol`` or after ``max_iters`` iterations. NaN costs are treated as +inf.
    Returns ``(x_best, f_best, converged, iterations, evaluations)``.
    """
    n = x0.shape[0]
    sim = np.empty((n + 1, n))
    fs = np.empty(n + 1)
    for i in range(n + 1):
        for k in range(n):
            sim[i, k] = x0[k]
        if i > 0:
            sim[i, i - 1] += step[i - 1]
    nev = 0
    for i in range(n + 1):
        v = objective(sim[i], args)
        nev += 1
        fs[i] = v if v == v else np.inf

    order = np.argsort(fs, kind="mergesort")
    sim = sim[order]
    fs = fs[order]

    centroid = np.empty(n)
    xr = np.empty(n)
    xe = np.empty(n)
    xc = np.empty(n)
    it = 0
    converged = False
    while True:
        spread = fs[n] - fs[0]
        if spread < tol or (fs[n] == fs[0]):
            converged = True
            break
        if it >= max_iters:
            break
        it += 1

        for k in range(n):
            acc = 0.0
            for i in range(n):
                acc += sim[i, k]
            centroid[k] = acc / n

        for k in range(n):
            xr[k] = centroid[k] + (centroid[k] - sim[n, k])
        fr = objective(xr, args)
        nev += 1
        if fr != fr:
            fr = np.inf

        shrink = False
        if fr < fs[0]:
            for k in range(n):
                xe[k] = centroid[k] + 2.0 * (xr[k] - centroid[k])
            fe = objective(xe, args)
            nev += 1
            if fe != fe:
                fe = np.inf
            if fe < fr:
                sim[n] = xe
                fs[n] = fe
            else:
                sim[n] = xr
                fs[n] = fr
        elif fr < fs[n - 1]:
            sim[n] = xr
            fs[n] = fr
        elif fr < fs[n]:
            for k in range(n):
                xc[k] = centroid[k] + 0.5 * (xr[k] - centroid[k])
            fc = objective(xc, args)
            nev += 1
            if fc != fc:
                fc = np.inf
            if fc <= fr:
                sim[n] = xc
                fs[n] = fc
            else:
                shrink = True
        else:
            for k in range(n):
                xc[k] = centroid[k] + 0.5 * (sim[n, k] - centroid[k])
            fc = objective(xc, args)
            nev += 1
            if fc != fc:
                fc = np.inf
            if fc < fs[n]:
                sim[n] = xc
                fs[n] = fc
            else:
                shrink = True

        if shrink:
            for i in range(1, n + 1):
                for k in range(n):
                    sim[i, k] = sim[0, k] + 0.5 * (sim[i, k] - sim[0, k])
                v = objective(sim[i], args)
                nev += 1
                fs[i] = v if v == v else np.inf

        order = np.argsort(fs, kind="mergesort")
        sim = sim[order]
        fs = fs[order]

    return sim[0].copy(), fs[0], converged, it, nev



def with_objective(fn):
    """Pure-Python copy of :func:`nelder_mead` minimizing ``fn(x, args)``."""
    src = nelder_mead.py_func
    scope = dict(src.__globals__, objective=fn)
    return types.FunctionType(src.__code__, scope, src.__name__, src.__defaults__)
