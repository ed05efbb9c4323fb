"""numba kernels: per-probe damped Newton on log Z and grid-bucket radius queries."""

import numpy as np
from numba import njit

from ._common import (
    ARMIJO_C1,
    CONVERGED,
    LAMBDA_BLOWUP,
    MAX_HALVINGS,
    MAX_ITERS,
    MAX_STEP,
    OUTSIDE_HULL,
    SINGULAR_RTOL,
)

_jit = njit(cache=True, nogil=True)


@_jit
def _normalized_weights(D, sq, beta, lam, w):
    k, d = D.shape
    fmax = -np.inf
    for a in range(k):
        f = -beta * sq[a]
        for i in range(d):
            f += lam[i] * D[a, i]
        w[a] = f
        if f > fmax:
            fmax = f
    zs = 0.0
    for a in range(k):
        w[a] = np.exp(w[a] - fmax)
        zs += w[a]
    for a in range(k):
        w[a] /= zs
    return fmax + np.log(zs)


@_jit
def _moments(D, w, r, J):
    k, d = D.shape
    r[:] = 0.0
    J[:, :] = 0.0
    for a in range(k):
        wa = w[a]
        for i in range(d):
            r[i] += wa * D[a, i]
            for j in range(i + 1):
                J[i, j] += wa * D[a, i] * D[a, j]
    for i in range(d):
        for j in range(i + 1):
            J[i, j] -= r[i] * r[j]
            J[j, i] = J[i, j]


@_jit
def _norm(v):
    s = 0.0
    for i in range(v.shape[0]):
        s += v[i] * v[i]
    return np.sqrt(s)


@_jit
def _log_ratio(D, w, p, t):
    # log Z(lam + t p) - log Z(lam), free of cancellation for small steps
    k, d = D.shape
    smax = 0.0
    for a in range(k):
        s = 0.0
        for i in range(d):
            s += p[i] * D[a, i]
        s = abs(t * s)
        if s > smax:
            smax = s
    if smax < 0.5:
        acc = 0.0
        for a in range(k):
            s = 0.0
            for i in range(d):
                s += p[i] * D[a, i]
            acc += w[a] * np.expm1(t * s)
        return np.log1p(acc)
    m = -np.inf
    for a in range(k):
        if w[a] > 0.0:
            s = 0.0
            for i in range(d):
                s += p[i] * D[a, i]
            v = np.log(w[a]) + t * s
            if v > m:
                m = v
    acc = 0.0
    for a in range(k):
        if w[a] > 0.0:
            s = 0.0
            for i in range(d):
                s += p[i] * D[a, i]
            acc += np.exp(np.log(w[a]) + t * s - m)
    return m + np.log(acc)


@_jit
def _newton_direction(J, r, h, p):
    d = r.shape[0]
    evals = np.linalg.eigvalsh(J)
    emin = evals[0]
    emax = evals[d - 1]
    singular = emin <= SINGULAR_RTOL * max(emax, h * h)
    A = J.copy()
    if singular:
        shift = SINGULAR_RTOL * max(emax, h * h) - min(emin, 0.0)
        for i in range(d):
            A[i, i] += shift
    sol = np.linalg.solve(A, -r)
    for i in range(d):
        p[i] = sol[i]
    return singular


@_jit
def solve_point(D, beta, h, tol, max_iters, lam, w):
    """Minimize log Z over lam for offsets D = x - x_a; fills lam and w in place.

    Returns (log_Z, iterations, status).
    """
    k, d = D.shape
    sq = np.empty(k)
    for a in range(k):
        s = 0.0
        for i in range(d):
            s += D[a, i] * D[a, i]
        sq[a] = s
    r = np.empty(d)
    J = np.empty((d, d))
    p = np.empty(d)
    lam[:] = 0.0
    status = MAX_ITERS
    it = 0
    log_z = _normalized_weights(D, sq, beta, lam, w)
    while True:
        _moments(D, w, r, J)
        rn = _norm(r)
        if rn <= tol * h:
            status = CONVERGED
            break
        if it >= max_iters:
            break
        singular = _newton_direction(J, r, h, p)
        if singular and _norm(lam) * h > LAMBDA_BLOWUP:
            status = OUTSIDE_HULL
            break
        slope = 0.0
        for i in range(d):
            slope += r[i] * p[i]
        if not slope < 0.0:
            for i in range(d):
                p[i] = -r[i]
            slope = -rn * rn
        t = min(1.0, MAX_STEP / (_norm(p) * h))
        accepted = False
        for _ in range(MAX_HALVINGS + 1):
            if _log_ratio(D, w, p, t) <= ARMIJO_C1 * t * slope:
                accepted = True
                break
            t *= 0.5
        it += 1
        if not accepted:
            break
        for i in range(d):
            lam[i] += t * p[i]
        log_z = _normalized_weights(D, sq, beta, lam, w)

    if status == CONVERGED:
        # one undamped polishing step, kept only if the residual shrinks
        _newton_direction(J, r, h, p)
        trial = lam + p
        wt = np.empty(k)
        lz = _normalized_weights(D, sq, beta, trial, wt)
        rt = np.empty(d)
        Jt = np.empty((d, d))
        _moments(D, wt, rt, Jt)
        if _norm(rt) < _norm(r):
            lam[:] = trial
            w[:] = wt
            log_z = lz
    return log_z, it, status


@_jit
def _cholesky_solve_rows(Js, D, w, g):
    # g[a] = -w[a] * Js^{-1} D[a]; returns False if Js is not numerically SPD
    k, d = D.shape
    L = np.zeros((d, d))
    scale = 0.0
    for i in range(d):
        scale = max(scale, Js[i, i])
    for i in range(d):
        for j in range(i + 1):
            s = Js[i, j]
            for m in range(j):
                s -= L[i, m] * L[j, m]
            if i == j:
                if not s > SINGULAR_RTOL * scale:
                    return False
                L[i, i] = np.sqrt(s)
            else:
                L[i, j] = s / L[j, j]
    y = np.empty(d)
    z = np.empty(d)
    for a in range(k):
        for i in range(d):
            s = D[a, i]
            for m in range(i):
                s -= L[i, m] * y[m]
            y[i] = s / L[i, i]
        for i in range(d - 1, -1, -1):
            s = y[i]
            for m in range(i + 1, d):
                s -= L[m, i] * z[m]
            z[i] = s / L[i, i]
        for i in range(d):
            g[a, i] = -w[a] * z[i]
    return True


@_jit
def solve_batch(X, nodes, ptr, idx, beta, h, tol, max_iters, want_grad):
    m, d = X.shape
    nnz = ptr[m]
    lam = np.zeros((m, d))
    log_z = np.zeros(m)
    iters = np.zeros(m, dtype=np.int64)
    status = np.zeros(m, dtype=np.int64)
    weights = np.zeros(nnz)
    grads = np.zeros((nnz, d))
    jstar = np.zeros((m, d, d))
    j_ok = np.zeros(m, dtype=np.bool_)
    for q in range(m):
        lo = ptr[q]
        hi = ptr[q + 1]
        k = hi - lo
        D = np.empty((k, d))
        for a in range(k):
            for i in range(d):
                D[a, i] = X[q, i] - nodes[idx[lo + a], i]
        w = np.empty(k)
        lz, it, st = solve_point(D, beta, h, tol, max_iters, lam[q], w)
        log_z[q] = lz
        iters[q] = it
        status[q] = st
        weights[lo:hi] = w
        if want_grad:
            Js = jstar[q]
            for a in range(k):
                for i in range(d):
                    for j in range(d):
                        Js[i, j] += w[a] * D[a, i] * D[a, j]
            j_ok[q] = _cholesky_solve_rows(Js, D, w, grads[lo:hi])
    return lam, log_z, iters, status, weights, grads, jstar, j_ok


@_jit
def _cell_range(x, origin, cell, dims, reach, lo, hi):
    d = x.shape[0]
    for i in range(d):
        f = min(max(np.floor((x[i] - origin[i]) / cell), 0.0), dims[i] - 1.0)
        c = int(f)  # clipping into the grid never moves the base away from any node cell
        lo[i] = max(c - reach, 0)
        hi[i] = min(c + reach, dims[i] - 1)
        if lo[i] > hi[i]:
            return False
    return True


@_jit
def _scan(x, pts, origin, cell, dims, starts, order, reach, r2, out, fill):
    d = x.shape[0]
    lo = np.empty(d, dtype=np.int64)
    hi = np.empty(d, dtype=np.int64)
    cnt = 0
    if not _cell_range(x, origin, cell, dims, reach, lo, hi):
        return 0
    cur = lo.copy()
    while True:
        lin = 0
        for i in range(d):
            lin = lin * dims[i] + cur[i]
        for s in range(starts[lin], starts[lin + 1]):
            a = order[s]
            dist2 = 0.0
            for i in range(d):
                dd = x[i] - pts[a, i]
                dist2 += dd * dd
            if dist2 <= r2:
                if fill:
                    out[cnt] = a
                cnt += 1
        i = d - 1
        while i >= 0:
            cur[i] += 1
            if cur[i] <= hi[i]:
                break
            cur[i] = lo[i]
            i -= 1
        if i < 0:
            break
    return cnt


@_jit
def radius_query(X, pts, origin, cell, dims, starts, order, radius):
    """CSR (ptr, idx) of nodes within ``radius`` of each row of X, ascending per row."""
    m = X.shape[0]
    reach = int(np.ceil(radius / cell))
    big = 0
    for i in range(dims.shape[0]):
        big = max(big, dims[i])
    reach = min(reach, big)
    r2 = radius * radius
    ptr = np.zeros(m + 1, dtype=np.int64)
    dummy = np.empty(0, dtype=np.int64)
    for q in range(m):
        ptr[q + 1] = ptr[q] + _scan(X[q], pts, origin, cell, dims, starts, order, reach, r2, dummy, False)
    idx = np.empty(ptr[m], dtype=np.int64)
    for q in range(m):
        seg = idx[ptr[q]:ptr[q + 1]]
        _scan(X[q], pts, origin, cell, dims, starts, order, reach, r2, seg, True)
        seg.sort()
    return ptr, idx
