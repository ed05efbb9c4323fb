"""Domains, point sets with a bucketed spatial index, and point-set regularity measures."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import HalfspaceIntersection, cKDTree

from . import kernels

MAX_DIM = 3
NORMAL_TOL = 1e-12
DUPLICATE_TOL = 1e-12
BARY_TOL = 1e-12


def _check_dim(d):
    if not 1 <= d <= MAX_DIM:
        raise ValueError(f"dimension {d} unsupported; need 1 <= d <= {MAX_DIM}")


@dataclass(frozen=True, eq=False)
class Domain:
    """A convex polytope ``{x : normals @ x <= offsets}`` with outward unit normals.

    Axis-aligned boxes are the special case built by :meth:`box`; they keep their
    corner coordinates so lattice generation can populate faces exactly.
    """

    normals: np.ndarray
    offsets: np.ndarray
    kind: str = "polytope"
    lower: np.ndarray = field(default=None)
    upper: np.ndarray = field(default=None)

    def __post_init__(self):
        n = np.atleast_2d(np.asarray(self.normals, dtype=float))
        b = np.asarray(self.offsets, dtype=float).ravel()
        if n.shape[0] != b.shape[0]:
            raise ValueError("normals and offsets disagree in length")
        _check_dim(n.shape[1])
        if not np.all(np.abs(np.linalg.norm(n, axis=1) - 1.0) <= NORMAL_TOL):
            raise ValueError("half-space normals must be unit length")
        object.__setattr__(self, "normals", n)
        object.__setattr__(self, "offsets", b)
        if self.lower is None or self.upper is None:
            lo, hi = _bounding_box(n, b)
            object.__setattr__(self, "lower", lo)
            object.__setattr__(self, "upper", hi)
        else:
            object.__setattr__(self, "lower", np.asarray(self.lower, dtype=float))
            object.__setattr__(self, "upper", np.asarray(self.upper, dtype=float))
        if self.inradius() <= 0.0:
            raise ValueError("polytope has empty interior")

    @classmethod
    def box(cls, lower, upper) -> Domain:
        lo = np.atleast_1d(np.asarray(lower, dtype=float))
        hi = np.atleast_1d(np.asarray(upper, dtype=float))
        if lo.shape != hi.shape or np.any(hi <= lo):
            raise ValueError("box needs lower < upper componentwise")
        d = lo.size
        _check_dim(d)
        eye = np.eye(d)
        return cls(np.vstack([-eye, eye]), np.concatenate([-lo, hi]), "box", lo, hi)

    @classmethod
    def unit_box(cls, d: int) -> Domain:
        return cls.box(np.zeros(d), np.ones(d))

    @classmethod
    def polytope(cls, normals, offsets) -> Domain:
        return cls(normals, offsets, "polytope")

    @property
    def dim(self) -> int:
        return self.normals.shape[1]

    @property
    def diameter(self) -> float:
        return float(np.max(np.linalg.norm(self.vertices()[:, None] - self.vertices()[None], axis=-1)))

    def inradius(self) -> float:
        return _chebyshev(self.normals, self.offsets)[1]

    def signed_distance(self, X) -> np.ndarray:
        """``min_i (b_i - n_i . x)``: distance to the boundary inside, negative outside."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.min(self.offsets[None, :] - X @ self.normals.T, axis=1)

    def contains(self, X, tol: float = 1e-12) -> np.ndarray:
        return self.signed_distance(X) >= -tol

    def vertices(self) -> np.ndarray:
        if self.kind == "box":
            return np.array(list(itertools.product(*zip(self.lower, self.upper))), dtype=float)
        if self.dim == 1:
            return np.array([[self.lower[0]], [self.upper[0]]])
        center, _ = _chebyshev(self.normals, self.offsets)
        hs = HalfspaceIntersection(np.hstack([self.normals, -self.offsets[:, None]]), center)
        return _dedupe(hs.intersections)

    def to_dict(self) -> dict:
        if self.kind == "box":
            return {"kind": "box", "lower": self.lower.tolist(), "upper": self.upper.tolist()}
        return {"kind": "polytope", "normals": self.normals.tolist(), "offsets": self.offsets.tolist()}


def _chebyshev(n, b):
    d = n.shape[1]
    c = np.zeros(d + 1)
    c[-1] = -1.0
    A = np.hstack([n, np.ones((n.shape[0], 1))])
    res = linprog(c, A_ub=A, b_ub=b, bounds=[(None, None)] * d + [(None, None)], method="highs")
    if res.status == 3:
        raise ValueError("polytope is unbounded")
    if not res.success:
        raise ValueError(f"polytope is infeasible: {res.message}")
    return res.x[:d], float(res.x[-1])


def _bounding_box(n, b):
    d = n.shape[1]
    lo, hi = np.empty(d), np.empty(d)
    for i in range(d):
        for sign, out in ((1.0, lo), (-1.0, hi)):
            c = np.zeros(d)
            c[i] = sign
            res = linprog(c, A_ub=n, b_ub=b, bounds=[(None, None)] * d, method="highs")
            if res.status == 3:
                raise ValueError("polytope is unbounded")
            if not res.success:
                raise ValueError(f"polytope is infeasible: {res.message}")
            out[i] = res.x[i]
    return lo, hi


def _dedupe(X, tol=DUPLICATE_TOL):
    X = np.asarray(X, dtype=float)
    if len(X) == 0:
        return X
    keep = []
    tree = cKDTree(X)
    seen = np.zeros(len(X), dtype=bool)
    for i in range(len(X)):
        if seen[i]:
            continue
        keep.append(i)
        seen[tree.query_ball_point(X[i], tol)] = True
    return X[np.sort(keep)]


class GridIndex:
    """Uniform-grid bucketing of a point cloud; nodes are stored sorted by cell."""

    MAX_CELLS_PER_POINT = 8

    def __init__(self, points: np.ndarray, cell: float | None = None):
        n, d = points.shape
        if n:
            origin = points.min(axis=0)
            extent = np.maximum(points.max(axis=0) - origin, 0.0)
        else:
            origin = np.zeros(d)
            extent = np.zeros(d)
        if cell is None or not cell > 0 or not math.isfinite(cell):
            vol = float(np.prod(np.maximum(extent, 1e-300))) if n > 1 else 1.0
            cell = 2.0 * (vol / max(n, 1)) ** (1.0 / d) if n > 1 else 1.0
            cell = max(cell, float(extent.max()) / 1e6 if n else 1.0)
        cell = float(cell)
        while np.prod(np.floor(extent / cell) + 1) > self.MAX_CELLS_PER_POINT * n + 64:
            cell *= 2.0
        dims = (np.floor(extent / cell) + 1).astype(np.int64)
        coords = np.minimum(np.floor((points - origin) / cell).astype(np.int64), dims - 1)
        strides = np.ones(d, dtype=np.int64)
        for i in range(d - 2, -1, -1):
            strides[i] = strides[i + 1] * dims[i + 1]
        lin = coords @ strides if n else np.zeros(0, dtype=np.int64)
        self.order = np.argsort(lin, kind="stable").astype(np.int64)
        counts = np.bincount(lin, minlength=int(np.prod(dims)))
        self.starts = np.zeros(counts.size + 1, dtype=np.int64)
        np.cumsum(counts, out=self.starts[1:])
        self.origin = origin
        self.cell = cell
        self.dims = dims
        self.points = points

    def query(self, X: np.ndarray, radius: float):
        """CSR ``(ptr, idx)``: indices within ``radius`` of each row of X, ascending."""
        X = np.ascontiguousarray(np.atleast_2d(X), dtype=float)
        n = len(self.points)
        if math.isinf(radius) or n == 0:
            m = len(X)
            ptr = np.arange(m + 1, dtype=np.int64) * n
            return ptr, np.tile(np.arange(n, dtype=np.int64), m)
        return kernels.radius_query(X, self.points, self.origin, self.cell, self.dims, self.starts,
                                    self.order, radius)


class PointSet:
    """Immutable ordered node set with a radius-query index."""

    def __init__(self, points, cell_hint: float | None = None):
        pts = np.array(points, dtype=float, copy=True)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2:
            raise ValueError("points must be an (n, d) array")
        _check_dim(pts.shape[1])
        if not np.all(np.isfinite(pts)):
            raise ValueError("point coordinates must be finite")
        pts.setflags(write=False)
        self._points = pts
        self._index = GridIndex(pts, cell_hint)
        if len(pts) > 1:
            ptr, _ = self._index.query(pts, DUPLICATE_TOL)
            if np.any(np.diff(ptr) > 1):
                bad = int(np.flatnonzero(np.diff(ptr) > 1)[0])
                raise ValueError(f"duplicate point at index {bad}")

    @property
    def points(self) -> np.ndarray:
        return self._points

    @property
    def dim(self) -> int:
        return self._points.shape[1]

    def __len__(self) -> int:
        return len(self._points)

    def query(self, X, radius: float):
        return self._index.query(X, radius)


def neighbors_within(P: PointSet, x, radius: float) -> np.ndarray:
    """Indices ``a`` with ``|x_a - x| <= radius``, ascending."""
    if not radius >= 0:
        raise ValueError("radius must be nonnegative")
    ptr, idx = P.query(np.atleast_2d(np.asarray(x, dtype=float)), radius)
    return idx[ptr[0]:ptr[1]]


def h_density_bound(P: PointSet, h: float, probes=None) -> int:
    """Largest node count in a closed h-ball centred at a probe or a node."""
    if not h > 0:
        raise ValueError("h must be positive")
    if len(P) == 0:
        return 0
    centres = P.points if probes is None else np.vstack([P.points, np.atleast_2d(probes)])
    ptr, _ = P.query(centres, h)
    return int(np.diff(ptr).max())


def ring_count(P: PointSet, x, h: float, t: int) -> int:
    """Nodes at distance in ``[(t-1)h, th)`` from x.

    Ratios are snapped by 1e-9 so lattice nodes at exact multiples of h land in
    the outer ring, independent of rounding in their coordinates.
    """
    if not h > 0 or t < 1:
        raise ValueError("need h > 0 and t >= 1")
    dist = np.sqrt(np.sum((P.points - np.asarray(x, dtype=float)) ** 2, axis=1))
    ring = np.floor(dist / h + 1e-9).astype(np.int64) + 1
    return int(np.count_nonzero(ring == t))


def lattice_probes(domain: Domain, spacing: float, margin: float = 0.0) -> np.ndarray:
    """Regular probe grid of the given spacing, kept where ``dist(x, boundary) >= margin``."""
    lo = domain.lower + margin
    hi = domain.upper - margin
    if np.any(hi < lo - 1e-14):
        return np.zeros((0, domain.dim))
    axes = []
    for a, b in zip(lo, hi):
        n = max(int(math.floor((b - a) / spacing + 1e-9)), 0)
        axes.append(a + spacing * np.arange(n + 1))
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, domain.dim)
    return grid[domain.signed_distance(grid) >= margin - 1e-12 * max(1.0, spacing)]


def generate_grid_points(domain: Domain, h: float, jitter: float = 0.0, seed: int = 0) -> PointSet:
    """Lattice of spacing at most h/sqrt(d) filling the closed domain, faces populated.

    Interior nodes are displaced by at most ``jitter * h / sqrt(d)`` and then kept
    at least ``h / (2 sqrt(d))`` away from the boundary, so no node sits in the
    open strip ``0 < dist < h / (2 sqrt(d))``. Lattice cells have diameter
    exactly h, so the set is an h'-covering for every h' > h.
    """
    if not h > 0:
        raise ValueError("h must be positive")
    if not 0.0 <= jitter < 0.5:
        raise ValueError("jitter must lie in [0, 0.5)")
    d = domain.dim
    spacing = h / math.sqrt(d)
    gap = 0.5 * spacing
    if h > domain.diameter:
        return PointSet(np.zeros((0, d)))

    if domain.kind == "box":
        axes = []
        for a, b in zip(domain.lower, domain.upper):
            n = max(int(math.ceil((b - a) / spacing - 1e-9)), 1)
            ax = np.linspace(a, b, n + 1)
            ax[0], ax[-1] = a, b
            axes.append(ax)
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    else:
        pts = _polytope_nodes(domain, spacing, gap)

    if jitter > 0:
        rng = np.random.default_rng(seed)
        interior = domain.signed_distance(pts) > 1e-12 * max(1.0, h)
        k = int(interior.sum())
        direction = rng.standard_normal((k, d))
        direction /= np.linalg.norm(direction, axis=1, keepdims=True)
        radius = jitter * spacing * rng.random(k) ** (1.0 / d)
        moved = pts[interior] + direction * radius[:, None]
        pts[interior] = _pull_inside(domain, moved, gap)
    return PointSet(pts, cell_hint=spacing)


def _pull_inside(domain, X, gap):
    # iterate projections onto {n.x <= b - gap}; exact for boxes, converges for polytopes
    X = X.copy()
    for _ in range(50):
        viol = X @ domain.normals.T - (domain.offsets - gap)
        if np.all(viol <= 1e-15):
            break
        viol = np.maximum(viol, 0.0)
        worst = np.argmax(viol, axis=1)
        amount = viol[np.arange(len(X)), worst]
        X -= amount[:, None] * domain.normals[worst]
    return X


def _polytope_nodes(domain, spacing, gap):
    d = domain.dim
    lo, hi = domain.lower, domain.upper
    axes = [lo[i] + spacing * np.arange(int(math.ceil((hi[i] - lo[i]) / spacing)) + 1) for i in range(d)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    sd = domain.signed_distance(grid)
    interior = grid[sd >= gap]
    verts = domain.vertices()
    parts = [verts]
    for n, b in zip(domain.normals, domain.offsets):
        on = verts[np.abs(verts @ n - b) <= 1e-9 * max(1.0, abs(b))]
        parts.append(_face_nodes(on, n, spacing, domain))
    boundary = _dedupe(np.vstack(parts))
    # lattice points cut off near the boundary are pulled onto the band dist = gap,
    # so the strip between the faces and the lattice stays one layer thin
    band = _pull_inside(domain, grid[(sd < gap) & (sd > -spacing)], gap)
    band = band[domain.signed_distance(band) >= gap - 1e-12 * max(1.0, spacing)]
    kept = [interior, boundary]
    for x in band[np.lexsort(band.T[::-1])]:
        ref = np.vstack(kept)
        if np.min(np.sum((ref - x) ** 2, axis=1)) >= (0.45 * spacing) ** 2:
            kept.append(x[None, :])
    return np.vstack(kept)


def _face_nodes(face_verts, normal, spacing, domain):
    d = domain.dim
    if len(face_verts) < 2:
        return np.zeros((0, d))
    if d == 2:
        a, b = face_verts[0], face_verts[-1]
        n = max(int(math.ceil(np.linalg.norm(b - a) / spacing - 1e-9)), 1)
        t = np.linspace(0.0, 1.0, n + 1)[:, None]
        return a + t * (b - a)
    # d == 3: polygon face; sample its edges, then an in-plane lattice clipped to the face
    basis = np.linalg.svd(normal[None, :])[2][1:]
    centre = face_verts.mean(axis=0)
    uv = (face_verts - centre) @ basis.T
    order = np.argsort(np.arctan2(uv[:, 1], uv[:, 0]))
    ring = face_verts[order]
    parts = []
    for a, b in zip(ring, np.roll(ring, -1, axis=0)):
        n = max(int(math.ceil(np.linalg.norm(b - a) / spacing - 1e-9)), 1)
        t = np.linspace(0.0, 1.0, n + 1)[:, None]
        parts.append(a + t * (b - a))
    uv = uv[order]
    lo, hi = uv.min(axis=0), uv.max(axis=0)
    gu = lo[0] + spacing * np.arange(int(math.ceil((hi[0] - lo[0]) / spacing)) + 1)
    gv = lo[1] + spacing * np.arange(int(math.ceil((hi[1] - lo[1]) / spacing)) + 1)
    G = np.stack(np.meshgrid(gu, gv, indexing="ij"), axis=-1).reshape(-1, 2)
    edge_n, edge_b = [], []
    for a, b in zip(uv, np.roll(uv, -1, axis=0)):
        e = b - a
        nrm = np.array([e[1], -e[0]]) / np.linalg.norm(e)
        if nrm @ (a - uv.mean(axis=0)) < 0:
            nrm = -nrm
        edge_n.append(nrm)
        edge_b.append(nrm @ a)
    inside = np.min(np.array(edge_b)[None, :] - G @ np.array(edge_n).T, axis=1) >= 0.5 * spacing
    parts.append(centre + G[inside] @ basis)
    return np.vstack(parts)


@dataclass
class RegularityReport:
    h: float
    tau_hat: int
    covering_ok: bool
    max_simplex_size: float
    eta_hat: float
    n_probes: int = 0
    first_failure: list | None = None

    def to_dict(self) -> dict:
        return {
            "h": self.h,
            "tau_hat": self.tau_hat,
            "covering_ok": self.covering_ok,
            "max_simplex_size": self.max_simplex_size,
            "eta_hat": self.eta_hat,
            "n_probes": self.n_probes,
            "first_failure": self.first_failure,
        }


def min_enclosing_diameter(V: np.ndarray) -> float:
    """Diameter of the smallest ball containing the rows of V (exact for up to d+1 points)."""
    V = np.asarray(V, dtype=float)
    best = math.inf
    m = len(V)
    if m == 1:
        return 0.0
    for size in range(2, m + 1):
        for sub in itertools.combinations(range(m), size):
            S = V[list(sub)]
            A = S[1:] - S[0]
            G = A @ A.T
            try:
                coef = np.linalg.solve(G, 0.5 * np.diag(G))
            except np.linalg.LinAlgError:
                continue
            c = S[0] + coef @ A
            rad = np.linalg.norm(S[0] - c)
            if rad * 2 < best and np.all(np.linalg.norm(V - c, axis=1) <= rad * (1 + 1e-12) + 1e-15):
                best = 2 * rad
    return best


def _barycentric(V, x):
    T = (V[1:] - V[0]).T
    lam = np.linalg.solve(T, x - V[0])
    return np.concatenate([[1.0 - lam.sum()], lam])


def verify_h_covering(P: PointSet, domain: Domain, h: float, probes=None, k: int | None = None) -> RegularityReport:
    """Probe-based h-covering check plus the density and boundary-gap measures.

    Probes default to a lattice of spacing h/4 over the domain together with the
    nodes themselves; the result is therefore an under-approximation of the
    "for every x" requirement.
    """
    d = P.dim
    pts = P.points
    if probes is None:
        probes = np.vstack([lattice_probes(domain, h / 4.0), pts])
    probes = np.atleast_2d(np.asarray(probes, dtype=float))
    tau = h_density_bound(P, h, probes)
    sd = domain.signed_distance(pts)
    inner = sd > 1e-12 * max(1.0, h)
    eta = float(sd[inner].min() / h) if inner.any() else math.inf

    if d == 1:
        # exact: every gap between consecutive nodes over the domain must be < h
        xs = np.sort(pts[:, 0])
        lo, hi = float(domain.lower[0]), float(domain.upper[0])
        tol = 1e-12 * max(1.0, hi - lo)
        if len(xs) < 2 or xs[0] > lo + tol or xs[-1] < hi - tol:
            edge = lo if len(xs) == 0 or xs[0] > lo + tol else hi
            return RegularityReport(h, tau, False, math.inf, eta, len(probes), [edge])
        gaps = np.diff(xs)
        span = (xs[1:] > lo) & (xs[:-1] < hi)
        gaps = np.where(span, gaps, 0.0)
        bad = np.flatnonzero(gaps >= h)
        fail = [float(0.5 * (xs[bad[0]] + xs[bad[0] + 1]))] if len(bad) else None
        return RegularityReport(h, tau, fail is None, float(gaps.max()), eta, len(probes), fail)

    k = k or (10 if d == 2 else 16)
    k = min(k, len(pts))
    tree = cKDTree(pts)
    _, nn = tree.query(probes, k=k)
    nn = np.atleast_2d(nn)
    combos = np.array(list(itertools.combinations(range(k), d + 1)))
    worst, fail = 0.0, None
    for x, near in zip(probes, nn):
        V = pts[near][combos]
        edges = np.max(np.linalg.norm(V[:, :, None] - V[:, None, :], axis=-1), axis=(1, 2))
        size = math.inf
        for c in np.argsort(edges, kind="stable"):
            if not edges[c] < h:
                break
            S = V[c]
            if abs(np.linalg.det(S[1:] - S[0])) <= 1e-12 * edges[c] ** d:
                continue
            if np.all(_barycentric(S, x) >= -BARY_TOL):
                s = min_enclosing_diameter(S)
                if s < h:
                    size = s
                    break
        worst = max(worst, size)
        if fail is None and not size < h:
            fail = x.tolist()
    return RegularityReport(h, tau, fail is None, worst, eta, len(probes), fail)


def boundary_gap_ok(P: PointSet, domain: Domain, eta: float, h: float) -> bool:
    """True when no node lies at distance strictly between 0 and eta*h from the boundary."""
    sd = domain.signed_distance(P.points)
    tol = 1e-12 * max(1.0, h)
    return not np.any((sd > tol) & (sd < eta * h - tol))


def random_probes(domain: Domain, n: int, margin: float = 0.0, seed: int = 0) -> np.ndarray:
    """``n`` uniform samples from ``{x in domain : dist(x, boundary) >= margin}`` (rejection sampling)."""
    rng = np.random.default_rng(seed)
    lo, hi = domain.lower + margin, domain.upper - margin
    if np.any(hi <= lo):
        raise ValueError("margin leaves no interior to sample")
    out = np.zeros((0, domain.dim))
    for _ in range(1000):
        if len(out) >= n:
            break
        cand = rng.uniform(lo, hi, size=(max(2 * (n - len(out)), 16), domain.dim))
        out = np.vstack([out, cand[domain.signed_distance(cand) >= margin]])
    if len(out) < n:
        raise ValueError("could not sample enough interior probes")
    return out[:n]
