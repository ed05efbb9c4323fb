"""Pure-numpy kernels. Probes are padded to a common neighbor count and iterated together."""

import numpy as np

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


def _pad(X, nodes, ptr, idx):
    m, d = X.shape
    counts = np.diff(ptr)
    k = int(counts.max()) if m else 0
    mask = np.arange(k)[None, :] < counts[:, None]
    rows = np.repeat(np.arange(m), counts)
    cols = np.arange(ptr[-1]) - np.repeat(ptr[:-1], counts)
    nid = np.zeros((m, k), dtype=np.int64)
    nid[rows, cols] = idx
    D = X[:, None, :] - nodes[nid]
    D[~mask] = 0.0
    return D, mask, rows, cols


def _weights(D, sq, mask, beta, lam):
    f = -beta * sq + np.einsum("mkd,md->mk", D, lam)
    f = np.where(mask, f, -np.inf)
    fmax = f.max(axis=1)
    e = np.exp(f - fmax[:, None])
    zs = e.sum(axis=1)
    return e / zs[:, None], fmax + np.log(zs)


def _moments(D, w):
    r = np.einsum("mk,mki->mi", w, D)
    J = np.einsum("mk,mki,mkj->mij", w, D, D) - r[:, :, None] * r[:, None, :]
    return r, J


def _newton_direction(J, r, h):
    d = r.shape[1]
    ev = np.linalg.eigvalsh(J)
    floor = SINGULAR_RTOL * np.maximum(ev[:, -1], h * h)
    singular = ev[:, 0] <= floor
    shift = np.where(singular, floor - np.minimum(ev[:, 0], 0.0), 0.0)
    A = J + shift[:, None, None] * np.eye(d)
    return np.linalg.solve(A, -r[:, :, None])[:, :, 0], singular


def _log_ratio(D, w, p, t):
    s = t[:, None] * np.einsum("mkd,md->mk", D, p)
    out = np.empty(len(t))
    small = np.abs(s).max(axis=1) < 0.5
    if small.any():
        out[small] = np.log1p(np.sum(w[small] * np.expm1(s[small]), axis=1))
    big = ~small
    if big.any():
        with np.errstate(divide="ignore"):
            v = np.where(w[big] > 0.0, np.log(w[big]) + s[big], -np.inf)
        vmax = v.max(axis=1)
        out[big] = vmax + np.log(np.exp(v - vmax[:, None]).sum(axis=1))
    return out


def _solve_padded(D, mask, beta, h, tol, max_iters):
    m, k, d = D.shape
    sq = np.einsum("mkd,mkd->mk", D, D)
    lam = np.zeros((m, d))
    iters = np.zeros(m, dtype=np.int64)
    status = np.full(m, MAX_ITERS, dtype=np.int64)
    live = np.ones(m, dtype=bool)
    w, log_z = _weights(D, sq, mask, beta, lam)
    while live.any():
        a = np.flatnonzero(live)
        Da, wa = D[a], w[a]
        r, J = _moments(Da, wa)
        rn = np.linalg.norm(r, axis=1)

        conv = rn <= tol * h
        if conv.any():
            c = a[conv]
            status[c] = CONVERGED
            live[c] = False
            _polish(D[c], sq[c], mask[c], beta, h, J[conv], r[conv], rn[conv], lam, w, log_z, c)
        stop = ~conv & (iters[a] >= max_iters)
        live[a[stop]] = False
        go = ~conv & ~stop
        if not go.any():
            continue
        a, Da, wa, r, J, rn = a[go], Da[go], wa[go], r[go], J[go], rn[go]

        p, singular = _newton_direction(J, r, h)
        blown = singular & (np.linalg.norm(lam[a], axis=1) * h > LAMBDA_BLOWUP)
        status[a[blown]] = OUTSIDE_HULL
        live[a[blown]] = False
        keep = ~blown
        a, Da, wa, r, rn, p = a[keep], Da[keep], wa[keep], r[keep], rn[keep], p[keep]
        if not len(a):
            continue

        slope = np.einsum("mi,mi->m", r, p)
        bad = ~(slope < 0.0)
        p[bad] = -r[bad]
        slope[bad] = -rn[bad] ** 2

        t = np.minimum(1.0, MAX_STEP / (np.linalg.norm(p, axis=1) * h))
        accepted = np.zeros(len(a), dtype=bool)
        for _ in range(MAX_HALVINGS + 1):
            pend = np.flatnonzero(~accepted)
            if not len(pend):
                break
            ok = _log_ratio(Da[pend], wa[pend], p[pend], t[pend]) <= ARMIJO_C1 * t[pend] * slope[pend]
            accepted[pend[ok]] = True
            t[pend[~ok]] *= 0.5
        iters[a] += 1
        live[a[~accepted]] = False
        a, t, p = a[accepted], t[accepted], p[accepted]
        lam[a] += t[:, None] * p
        w[a], log_z[a] = _weights(D[a], sq[a], mask[a], beta, lam[a])
    return lam, w, log_z, iters, status


def _polish(D, sq, mask, beta, h, J, r, rn, lam, w, log_z, rows):
    p, _ = _newton_direction(J, r, h)
    trial = lam[rows] + p
    wt, lz = _weights(D, sq, mask, beta, trial)
    rt, _ = _moments(D, wt)
    better = np.linalg.norm(rt, axis=1) < rn
    rows = rows[better]
    lam[rows] = trial[better]
    w[rows] = wt[better]
    log_z[rows] = lz[better]


def solve_batch(X, nodes, ptr, idx, beta, h, tol, max_iters, want_grad):
    m, d = X.shape
    nnz = int(ptr[-1])
    if m == 0:
        return (np.zeros((0, d)), np.zeros(0), np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64),
                np.zeros(0), np.zeros((0, d)), np.zeros((0, d, d)), np.zeros(0, dtype=bool))
    D, mask, rows, cols = _pad(X, nodes, ptr, idx)
    lam, w, log_z, iters, status = _solve_padded(D, mask, beta, h, tol, max_iters)
    weights = w[rows, cols]
    grads = np.zeros((nnz, d))
    jstar = np.zeros((m, d, d))
    j_ok = np.zeros(m, dtype=bool)
    if want_grad:
        jstar = np.einsum("mk,mki,mkj->mij", w, D, D)
        scale = np.max(np.diagonal(jstar, axis1=1, axis2=2), axis=1)
        j_ok = np.linalg.eigvalsh(jstar)[:, 0] > SINGULAR_RTOL * scale
        good = np.flatnonzero(j_ok)
        if len(good):
            sol = np.linalg.solve(jstar[good], np.swapaxes(D[good], 1, 2))
            g = -w[good][:, :, None] * np.swapaxes(sol, 1, 2)
            full = np.zeros((m, D.shape[1], d))
            full[good] = g
            grads = full[rows, cols]
    return lam, log_z, iters, status, weights, grads, jstar, j_ok


def radius_query(X, pts, origin, cell, dims, starts, order, radius):
    m, d = X.shape
    if m == 0 or len(pts) == 0:
        return np.zeros(m + 1, dtype=np.int64), np.zeros(0, dtype=np.int64)
    reach = int(min(np.ceil(radius / cell), dims.max()))
    if (2 * reach + 1) ** d > 4 * len(pts):
        return _brute_query(X, pts, radius)
    # clipped bases stay within ``reach`` of every node cell a true match can occupy
    base = np.clip(np.floor((X - origin) / cell), 0, dims - 1).astype(np.int64)
    grids = np.meshgrid(*[np.arange(-reach, reach + 1)] * d, indexing="ij")
    offsets = np.stack([g.ravel() for g in grids], axis=1)
    strides = np.ones(d, dtype=np.int64)
    for i in range(d - 2, -1, -1):
        strides[i] = strides[i + 1] * dims[i + 1]

    probe_parts, node_parts = [], []
    r2 = radius * radius
    for off in offsets:
        c = base + off
        inside = np.all((c >= 0) & (c < dims), axis=1)
        q = np.flatnonzero(inside)
        if not len(q):
            continue
        lin = c[q] @ strides
        lo, hi = starts[lin], starts[lin + 1]
        cnt = hi - lo
        qq = np.repeat(q, cnt)
        pos = np.arange(cnt.sum()) - np.repeat(np.cumsum(cnt) - cnt, cnt) + np.repeat(lo, cnt)
        a = order[pos]
        diff = X[qq] - pts[a]
        dist2 = np.zeros(len(qq))
        for i in range(d):
            dist2 += diff[:, i] * diff[:, i]
        hit = dist2 <= r2
        probe_parts.append(qq[hit])
        node_parts.append(a[hit])
    if probe_parts:
        qq = np.concatenate(probe_parts)
        aa = np.concatenate(node_parts)
    else:
        qq = aa = np.zeros(0, dtype=np.int64)
    key = np.lexsort((aa, qq))
    qq, aa = qq[key], aa[key]
    ptr = np.zeros(m + 1, dtype=np.int64)
    np.cumsum(np.bincount(qq, minlength=m), out=ptr[1:])
    return ptr, aa.astype(np.int64)


def _brute_query(X, pts, radius, chunk=2048):
    r2 = radius * radius
    counts, hits = [], []
    for s in range(0, len(X), chunk):
        diff = X[s:s + chunk, None, :] - pts[None, :, :]
        dist2 = np.zeros(diff.shape[:2])
        for i in range(X.shape[1]):
            dist2 += diff[..., i] * diff[..., i]
        mask = dist2 <= r2
        counts.append(mask.sum(axis=1))
        hits.append(np.nonzero(mask)[1])
    ptr = np.zeros(len(X) + 1, dtype=np.int64)
    np.cumsum(np.concatenate(counts), out=ptr[1:])
    return ptr, np.concatenate(hits).astype(np.int64)
