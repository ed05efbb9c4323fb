"""Local maximum-entropy shape functions: dual solve, weights, gradients, J*.

The dual objective at a point x is

    log Z(x, lam) = log sum_a exp(-beta |x - x_a|^2 + <lam, x - x_a>),   beta = gamma / h^2,

minimized over lam by damped Newton from lam = 0. The optimal weights are the
normalized exponentials at lam*, and

    grad w_a = -w_a J*^{-1} (x - x_a),   J* = sum_a w_a (x - x_a)(x - x_a)^T.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .geometry import PointSet

STATUS_NAMES = kernels.STATUS_NAMES


class LmeError(Exception):
    """Base class for shape-function evaluation failures."""


class NoNodesInRange(LmeError):
    pass


class OutsideHullError(LmeError):
    pass


class NotConvergedError(LmeError):
    pass


class DegenerateJStarError(LmeError):
    pass


def default_cutoff(gamma: float) -> float:
    """Truncation radius in units of h: Gaussian factor below 1e-16, plus one h of slack."""
    return max(math.sqrt(math.log(1e16) / gamma), 1.0) + 1.0


@dataclass(frozen=True)
class LmeParams:
    h: float
    gamma: float = 1.8
    newton_tol: float = 1e-12
    max_iters: int = 100
    cutoff: float | None = None

    def __post_init__(self):
        if not (self.gamma > 0 and self.h > 0 and self.newton_tol > 0):
            raise ValueError("gamma, h and newton_tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.cutoff is None:
            object.__setattr__(self, "cutoff", default_cutoff(self.gamma))
        if not self.cutoff > 1:
            raise ValueError("cutoff multiplier must exceed 1")

    @property
    def beta(self) -> float:
        return self.gamma / self.h**2

    @property
    def radius(self) -> float:
        return self.cutoff * self.h

    def exact(self) -> LmeParams:
        """Same parameters without truncation (every node is active)."""
        return replace(self, cutoff=math.inf)


@dataclass
class DualSolution:
    lambda_star: np.ndarray
    log_Z: float
    iters: int
    status: str

    @property
    def converged(self) -> bool:
        return self.status == "converged"


@dataclass
class ShapeEval:
    node_ids: np.ndarray
    weights: np.ndarray
    gradients: np.ndarray | None = None
    j_star: np.ndarray | None = None
    dual: DualSolution | None = None


@dataclass
class BatchEval:
    """Shape functions at many points; per-point node lists in CSR layout."""

    X: np.ndarray
    ptr: np.ndarray
    node_ids: np.ndarray
    weights: np.ndarray
    gradients: np.ndarray | None
    lambda_star: np.ndarray
    log_Z: np.ndarray
    iters: np.ndarray
    status: np.ndarray
    j_star: np.ndarray | None
    j_star_ok: np.ndarray | None
    h: float = field(default=1.0)

    def __len__(self):
        return len(self.X)

    @property
    def converged(self) -> np.ndarray:
        return self.status == kernels.CONVERGED

    @property
    def rows(self) -> np.ndarray:
        """Point index of every (point, node) entry."""
        return np.repeat(np.arange(len(self.X)), np.diff(self.ptr))

    def offsets(self, nodes: np.ndarray) -> np.ndarray:
        """``x - x_a`` for every entry."""
        return self.X[self.rows] - nodes[self.node_ids]

    def point(self, q: int) -> ShapeEval:
        lo, hi = self.ptr[q], self.ptr[q + 1]
        dual = DualSolution(self.lambda_star[q].copy(), float(self.log_Z[q]), int(self.iters[q]),
                            STATUS_NAMES[int(self.status[q])])
        return ShapeEval(
            self.node_ids[lo:hi].copy(),
            self.weights[lo:hi].copy(),
            None if self.gradients is None else self.gradients[lo:hi].copy(),
            None if self.j_star is None else self.j_star[q].copy(),
            dual,
        )

    def segment_sum(self, values: np.ndarray) -> np.ndarray:
        """Sum per point of an entry-aligned array (leading axis = entries)."""
        out = np.zeros((len(self.X),) + values.shape[1:])
        np.add.at(out, self.rows, values)
        return out


def _as_points(X, d):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != d:
        raise ValueError(f"expected points of dimension {d}, got {X.shape[1]}")
    return np.ascontiguousarray(X)


def evaluate(X, P: PointSet, params: LmeParams, gradients: bool = True, neighbors=None) -> BatchEval:
    """Solve the dual and evaluate shape functions at every row of X.

    Per-point failures are reported through ``status`` / ``j_star_ok`` rather
    than raised. ``neighbors`` optionally fixes the CSR ``(ptr, idx)`` active
    sets instead of querying by radius.
    """
    X = _as_points(X, P.dim)
    ptr, idx = P.query(X, params.radius) if neighbors is None else neighbors
    if len(X) and np.any(np.diff(ptr) == 0):
        q = int(np.flatnonzero(np.diff(ptr) == 0)[0])
        raise NoNodesInRange(f"no nodes in range of point {X[q].tolist()}")
    lam, log_z, iters, status, w, g, js, ok = kernels.solve_batch(
        X, P.points, ptr, idx, params.beta, params.h, params.newton_tol, params.max_iters, gradients)
    return BatchEval(X, ptr, idx, w, g if gradients else None, lam, log_z, iters, status,
                     js if gradients else None, ok if gradients else None, params.h)


def log_partition(x, lam, P: PointSet, params: LmeParams):
    """``(log Z, r, J)`` at (x, lam) over the active set, exponent-shift stabilized."""
    x = _as_points(x, P.dim)[0]
    lam = np.asarray(lam, dtype=float).reshape(P.dim)
    ids = _active(x, P, params)
    D = x - P.points[ids]
    f = -params.beta * np.sum(D * D, axis=1) + D @ lam
    fmax = f.max()
    e = np.exp(f - fmax)
    zs = e.sum()
    w = e / zs
    r = w @ D
    J = (D * w[:, None]).T @ D - np.outer(r, r)
    return float(fmax + np.log(zs)), r, J


def _active(x, P, params):
    ptr, idx = P.query(x[None, :], params.radius)
    if ptr[1] == 0:
        raise NoNodesInRange(f"no nodes in range of point {x.tolist()}")
    return idx


def solve_dual(x, P: PointSet, params: LmeParams) -> DualSolution:
    return evaluate(x, P, params, gradients=False).point(0).dual


def _checked(ev: BatchEval, want_grad: bool) -> ShapeEval:
    out = ev.point(0)
    if out.dual.status == "outside_hull":
        raise OutsideHullError(f"point {ev.X[0].tolist()} is outside or on the boundary of the node hull")
    if out.dual.status != "converged":
        raise NotConvergedError(f"dual solve did not converge in {out.dual.iters} iterations")
    if want_grad and not ev.j_star_ok[0]:
        raise DegenerateJStarError("degenerate J*: the active nodes do not span the space")
    return out


def shape_values(x, P: PointSet, params: LmeParams) -> ShapeEval:
    out = _checked(evaluate(x, P, params, gradients=False), False)
    return out


def shape_gradients(x, P: PointSet, params: LmeParams) -> ShapeEval:
    return _checked(evaluate(x, P, params, gradients=True), True)


def primal_objective(x, weights, P: PointSet, params: LmeParams, node_ids=None) -> float:
    """``sum w_a |x - x_a|^2 + (1/beta) sum w_a log w_a`` with 0 log 0 = 0."""
    x = _as_points(x, P.dim)[0]
    w = np.asarray(weights, dtype=float)
    nodes = P.points if node_ids is None else P.points[np.asarray(node_ids)]
    if w.shape != (len(nodes),):
        raise ValueError("weights must align with the nodes")
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    width = float(np.sum(w * np.sum((nodes - x) ** 2, axis=1)))
    pos = w > 0
    entropy = float(np.sum(w[pos] * np.log(w[pos])))
    return width + entropy / params.beta
