"""Interpolants built from nodal samples, the multipoint Taylor identity, and h-refinement studies."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .fields import ScalarField
from .geometry import Domain, PointSet, generate_grid_points, lattice_probes
from .lme import LmeParams, _checked, evaluate

log = logging.getLogger(__name__)

# sup errors below this fraction of the field scale are treated as round-off
ROUNDOFF_RTOL = 1e-9


def _multi_index(alpha, d):
    alpha = tuple(int(a) for a in np.atleast_1d(alpha))
    if len(alpha) != d or any(a < 0 for a in alpha):
        raise ValueError(f"multi-index must have {d} nonnegative entries")
    if sum(alpha) > 1:
        raise ValueError("only |alpha| <= 1 is supported")
    return alpha


def interpolate_batch(samples, X, P: PointSet, params: LmeParams, gradients: bool = True):
    """``(u_I(X), grad u_I(X), batch)`` for nodal ``samples``; failed points come back as NaN."""
    samples = np.asarray(samples, dtype=float)
    if samples.shape != (len(P),):
        raise ValueError("samples must have one value per node")
    ev = evaluate(X, P, params, gradients=gradients)
    u = samples[ev.node_ids]
    values = ev.segment_sum(ev.weights * u)
    bad = ~ev.converged
    values[bad] = np.nan
    grads = None
    if gradients:
        grads = ev.segment_sum(ev.gradients * u[:, None])
        grads[bad | ~ev.j_star_ok] = np.nan
    return values, grads, ev


def interpolate(samples, x, P: PointSet, params: LmeParams) -> float:
    ev = evaluate(x, P, params, gradients=False)
    s = _checked(ev, False)
    return float(np.dot(np.asarray(samples, dtype=float)[s.node_ids], s.weights))


def interpolate_gradient(samples, x, P: PointSet, params: LmeParams) -> np.ndarray:
    ev = evaluate(x, P, params, gradients=True)
    s = _checked(ev, True)
    return np.asarray(samples, dtype=float)[s.node_ids] @ s.gradients


def taylor_remainder(field: ScalarField, x_a, x) -> float:
    """First-order Taylor remainder ``u(x_a) - u(x) - <grad u(x), x_a - x>``."""
    x_a = np.atleast_2d(np.asarray(x_a, dtype=float))
    x = np.atleast_2d(np.asarray(x, dtype=float))
    return float(field.value(x_a)[0] - field.value(x)[0] - field.gradient(x)[0] @ (x_a[0] - x[0]))


def _remainders(field, x, nodes):
    X = np.broadcast_to(x, nodes.shape)
    return field.value(nodes) - field.value(x[None, :])[0] - (nodes - X) @ field.gradient(x[None, :])[0]


def multipoint_identity_residual(field: ScalarField, x, P: PointSet, params: LmeParams, alpha) -> float:
    """``|D^a u_I(x) - D^a u(x) - sum_a R(x, x_a) D^a w_a(x)|`` for ``|alpha| <= 1``.

    Zero up to rounding for any C^1 field, because the shape functions are
    first-order consistent.
    """
    x = np.asarray(x, dtype=float).ravel()
    alpha = _multi_index(alpha, P.dim)
    order = sum(alpha)
    s = _checked(evaluate(x, P, params, gradients=order > 0), order > 0)
    nodes = P.points[s.node_ids]
    u = field.value(nodes)
    R = _remainders(field, x, nodes)
    if order == 0:
        dw = s.weights
        exact = field.value(x[None, :])[0]
    else:
        j = alpha.index(1)
        dw = s.gradients[:, j]
        exact = field.gradient(x[None, :])[0, j]
    return float(abs(u @ dw - exact - R @ dw))


def fit_rate(pairs) -> float:
    """Least-squares slope of log(err) against log(h); NaN when fewer than two errors are positive."""
    arr = np.asarray(list(pairs), dtype=float).reshape(-1, 2)
    keep = arr[:, 1] > 0
    if keep.sum() < 2:
        return math.nan
    lh, le = np.log(arr[keep, 0]), np.log(arr[keep, 1])
    return float(np.polyfit(lh, le, 1)[0])


@dataclass
class ErrorRow:
    h: float
    sup_err_value: float
    sup_err_grad: float
    n_points: int
    n_excluded: int = 0
    n_nodes: int = 0


@dataclass
class ErrorReport:
    rows: list[ErrorRow]
    fitted_rate_value: float
    fitted_rate_grad: float
    epsilon_margin: float
    gamma: float = 1.8
    dim: int = 1
    field_name: str = ""
    d2_sup_norm: float | None = None
    extra: dict = field(default_factory=dict)

    @property
    def rate_value_defined(self) -> bool:
        return math.isfinite(self.fitted_rate_value)

    @property
    def rate_grad_defined(self) -> bool:
        return math.isfinite(self.fitted_rate_grad)

    def value_constants(self) -> list[float]:
        """``err / (||D^2 u|| h^2)`` per row (NaN without a Hessian bound)."""
        if not self.d2_sup_norm:
            return [math.nan] * len(self.rows)
        return [r.sup_err_value / (self.d2_sup_norm * r.h**2) for r in self.rows]

    def grad_ratios(self) -> list[float]:
        """Consecutive-row ratios of sup gradient error."""
        g = [r.sup_err_grad for r in self.rows]
        return [a / b if b > 0 else math.inf for a, b in zip(g[:-1], g[1:])]

    def to_dict(self) -> dict:
        def num(v):
            return v if math.isfinite(v) else None

        return {
            "field": self.field_name,
            "dim": self.dim,
            "gamma": self.gamma,
            "epsilon": self.epsilon_margin,
            "rows": [
                {"h": r.h, "err_value": r.sup_err_value, "err_grad": r.sup_err_grad,
                 "n_points": r.n_points, "n_excluded": r.n_excluded, "n_nodes": r.n_nodes}
                for r in self.rows
            ],
            "rates": {"value": num(self.fitted_rate_value), "grad": num(self.fitted_rate_grad)},
            **self.extra,
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["h", "err_value", "err_grad"])
        for r in self.rows:
            w.writerow([repr(r.h), repr(r.sup_err_value), repr(r.sup_err_grad)])
        return buf.getvalue()


def error_study(field: ScalarField, domain: Domain, h_list, epsilon: float = 2.0, gamma: float = 1.8,
                probe_factor: float = 3.0, jitter: float = 0.0, seed: int = 0, **param_kw) -> ErrorReport:
    """Sup-norm interpolation errors on ``{x : dist(x, boundary) >= epsilon h}`` for each h.

    Probes form a lattice of spacing h / probe_factor, so the reported sups are
    lower bounds of the true ones. Non-converged probes are dropped and counted.
    """
    h_list = sorted((float(h) for h in h_list), reverse=True)
    if len(h_list) < 3 or h_list[0] / h_list[-1] < 4.0 - 1e-12:
        raise ValueError("h_list needs at least 3 values spanning a factor of 4")
    rows = []
    scale = 0.0
    for h in h_list:
        P = generate_grid_points(domain, h, jitter=jitter, seed=seed)
        params = LmeParams(h=h, gamma=gamma, **param_kw)
        X = lattice_probes(domain, h / probe_factor, epsilon * h)
        samples = field.value(P.points)
        scale = max(scale, float(np.abs(samples).max()))
        vals, grads, ev = interpolate_batch(samples, X, P, params)
        ok = np.isfinite(vals) & np.all(np.isfinite(grads), axis=1)
        n_bad = int((~ok).sum())
        if n_bad:
            log.warning("h=%g: %d of %d probes excluded (dual solve failed)", h, n_bad, len(X))
        ev_err = np.abs(vals[ok] - field.value(X[ok]))
        gr_err = np.linalg.norm(grads[ok] - field.gradient(X[ok]), axis=1)
        rows.append(ErrorRow(h, float(ev_err.max()), float(gr_err.max()), int(ok.sum()), n_bad, len(P)))

    def rate(col, unit):
        errs = [(r.h, getattr(r, col)) for r in rows]
        if all(e <= ROUNDOFF_RTOL * max(scale, 1e-300) / unit(h) for h, e in errs):
            return math.nan
        return fit_rate(errs)

    return ErrorReport(
        rows,
        rate("sup_err_value", lambda h: 1.0),
        rate("sup_err_grad", lambda h: h),
        epsilon,
        gamma,
        domain.dim,
        field.name,
        field.d2_sup_norm,
    )
