"""Numerical checks of the shape-function bounds.

Each check measures a quantity over a probe set and returns a report that
serializes to ``{"check", "params", "measured", "pass"}``. Claims of the form
"there is a constant C" are tested as uniformity across h-sweeps: a measured
ratio must stay within a stated band of its value at the coarsest h.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Domain, PointSet, boundary_gap_ok, generate_grid_points, lattice_probes
from .interpolation import fit_rate
from .lme import BatchEval, LmeParams, evaluate

log = logging.getLogger(__name__)

TOL_PARTITION = 1e-12
TOL_MOMENT = 1e-10  # times h
TOL_GRAD_SUM = 1e-8  # divided by h
TOL_GRAD_MOMENT = 1e-8
MU = 0.25
RHO_FLOOR = 1e-6  # times h


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else None
    return v


@dataclass
class CheckResult:
    check: str
    params: dict
    measured: dict
    passed: bool

    def to_dict(self) -> dict:
        return {"check": self.check, "params": _jsonable(self.params),
                "measured": _jsonable(self.measured), "pass": bool(self.passed)}


def within_band(values, lo: float, hi: float) -> bool:
    """True when every ``values[k] / values[0]`` lies in ``[lo, hi]``."""
    v = np.asarray(values, dtype=float)
    if len(v) == 0 or not np.all(np.isfinite(v)) or v[0] <= 0:
        return False
    r = v / v[0]
    return bool(np.all((r >= lo) & (r <= hi)))


def require_gap(P: PointSet, domain: Domain, h: float, eta: float | None = None):
    """Reject node sets with nodes in the open strip ``0 < dist < eta h`` of the boundary."""
    eta = 0.5 / math.sqrt(domain.dim) if eta is None else eta
    if not boundary_gap_ok(P, domain, eta, h):
        raise ValueError(f"node set violates the boundary gap condition: some node has "
                         f"0 < dist(x, boundary) < {eta:.6g} h")
    return eta


def _usable(ev: BatchEval, grads: bool) -> np.ndarray:
    ok = ev.converged.copy()
    if grads:
        ok &= ev.j_star_ok
    return ok


def _entry_mask(ev: BatchEval, ok: np.ndarray) -> np.ndarray:
    return ok[ev.rows]


# ---------------------------------------------------------------- consistency

def check_consistency_suite(P: PointSet, params: LmeParams, probes, fault: str | None = None) -> CheckResult:
    """Partition of unity, first moment, and the two gradient identities at every probe.

    ``fault="weights"`` adds 1e-6 to one weight per probe before
    the checks run; it exists to exercise the failure path.
    """
    h = params.h
    ev = evaluate(probes, P, params, gradients=True)
    w = ev.weights.copy()
    if fault == "weights":
        w[ev.ptr[:-1][np.diff(ev.ptr) > 0]] += 1e-6
    elif fault is not None:
        raise ValueError(f"unknown fault {fault!r}")
    conv = ev.converged
    spans = ev.j_star_ok & conv
    D = ev.offsets(P.points)  # x - x_a
    d = P.dim

    pu = np.abs(ev.segment_sum(w) - 1.0)
    moment = np.linalg.norm(ev.segment_sum(-w[:, None] * D), axis=1)
    gsum = np.linalg.norm(ev.segment_sum(ev.gradients), axis=1)
    M = ev.segment_sum(np.einsum("ei,ej->eij", -D, ev.gradients)) - np.eye(d)
    gmom = np.abs(M).reshape(len(M), -1).max(axis=1)

    def worst(a, mask):
        return float(a[mask].max()) if mask.any() else 0.0

    measured = {
        "partition_of_unity": worst(pu, conv),
        "first_moment_over_h": worst(moment, conv) / h,
        "grad_sum_times_h": worst(gsum, spans) * h,
        "grad_moment": worst(gmom, spans),
        "n_probes": len(ev),
        "n_not_converged": int((~conv).sum()),
        "n_degenerate_active_set": int((conv & ~ev.j_star_ok).sum()),
    }
    passed = (
        measured["n_not_converged"] == 0
        and measured["partition_of_unity"] <= TOL_PARTITION
        and measured["first_moment_over_h"] <= TOL_MOMENT
        and measured["grad_sum_times_h"] <= TOL_GRAD_SUM
        and measured["grad_moment"] <= TOL_GRAD_MOMENT
    )
    prm = {"h": h, "gamma": params.gamma, "dim": d, "n_nodes": len(P), "fault": fault}
    return CheckResult("consistency", prm, measured, passed)


# ---------------------------------------------------------------------- decay

@dataclass
class DecayReport:
    """Sup of ``(1 + |x - x_a|^2/h^2)^s h^|a| |D^a w_a(x)|`` over probes, nodes and ``|a| <= 1``."""

    s: float
    measured_c: float
    per_h: list = field(default_factory=list)
    band: float = 0.5

    @property
    def passed(self) -> bool:
        c = [v for _, v in self.per_h]
        return math.isfinite(self.measured_c) and within_band(c, 1 - self.band, 1 + self.band)

    def to_result(self) -> CheckResult:
        return CheckResult("decay", {"s": self.s, "band": self.band},
                           {"measured_c": self.measured_c, "per_h": [list(p) for p in self.per_h]},
                           self.passed)


def check_decay(P: PointSet, params: LmeParams, s: float, probes) -> DecayReport:
    h = params.h
    ev = evaluate(probes, P, params, gradients=True)
    e = _entry_mask(ev, _usable(ev, True))
    D = ev.offsets(P.points)[e]
    q = (1.0 + np.sum(D * D, axis=1) / h**2) ** s
    c0 = np.max(q * ev.weights[e], initial=0.0)
    c1 = np.max(q * h * np.linalg.norm(ev.gradients[e], axis=1), initial=0.0)
    c = float(max(c0, c1))
    return DecayReport(s, c, [(h, c)])


def _sweep_sets(domain, h_list, epsilon, probe_factor, jitter, seed):
    for h in sorted(h_list, reverse=True):
        P = generate_grid_points(domain, h, jitter=jitter, seed=seed)
        yield h, P, lattice_probes(domain, h / probe_factor, epsilon * h)


def decay_sweep(domain: Domain, h_list, s: float = 3.0, gamma: float = 1.8, epsilon: float = 2.0,
                probe_factor: float = 3.0, jitter: float = 0.0, seed: int = 0, band: float = 0.5) -> DecayReport:
    per_h = []
    for h, P, X in _sweep_sets(domain, h_list, epsilon, probe_factor, jitter, seed):
        per_h.append((h, check_decay(P, LmeParams(h=h, gamma=gamma), s, X).measured_c))
    return DecayReport(s, max(c for _, c in per_h), per_h, band)


# -------------------------------------------------------------- concentration

def check_concentration(P: PointSet, params: LmeParams, theta: float, probes) -> int:
    """Smallest integer c >= 1 with ``sum_{|x_a - x| > c h} w_a(x) <= theta`` at every probe."""
    if not theta > 0:
        raise ValueError("theta must be positive")
    h = params.h
    ev = evaluate(probes, P, params, gradients=False)
    ok = _usable(ev, False)
    if (~ok).any():
        log.warning("concentration: %d probes did not converge and are skipped", int((~ok).sum()))
    e = _entry_mask(ev, ok)
    rows = ev.rows[e]
    dist = np.linalg.norm(ev.offsets(P.points)[e], axis=1) / h
    w = ev.weights[e]
    c_max = int(math.ceil(dist.max(initial=0.0))) + 1
    for c in range(1, c_max + 1):
        tail = np.bincount(rows, weights=np.where(dist > c, w, 0.0), minlength=len(ev))
        if tail.max(initial=0.0) <= theta * (1.0 + 1e-12):
            return c
    return c_max


def concentration_sweep(domain: Domain, h_list, theta: float = 1e-8, gamma: float = 1.8,
                        epsilon: float = 2.0, probe_factor: float = 3.0, jitter: float = 0.0,
                        seed: int = 0) -> CheckResult:
    per_h = []
    for h, P, X in _sweep_sets(domain, h_list, epsilon, probe_factor, jitter, seed):
        per_h.append((h, check_concentration(P, LmeParams(h=h, gamma=gamma), theta, X)))
    c = [v for _, v in per_h]
    passed = all(abs(v - c[0]) <= 1 for v in c)
    return CheckResult("concentration", {"theta": theta, "gamma": gamma, "epsilon": epsilon},
                       {"c_theta": max(c), "per_h": [list(p) for p in per_h]}, passed)


# ---------------------------------------------------------------- dual bounds

@dataclass
class BoundReport:
    kind: str  # lambda | z_low | z_high | jinv
    measured: float
    normalization: float

    @property
    def normalized(self) -> float:
        return self.measured / self.normalization

    def to_dict(self) -> dict:
        return _jsonable({"kind": self.kind, "measured": self.measured,
                          "normalization": self.normalization, "normalized": self.normalized})


def check_dual_bounds(P: PointSet, params: LmeParams, epsilon: float, probes) -> list[BoundReport]:
    """``sup |lambda*|``, ``min Z``, ``max Z`` and ``sup ||J*^-1||`` over the probes.

    Normalizations are the predicted scales: ``1/(min(eps, 1) h)`` for lambda,
    1 for Z and ``h^-2`` for the inverse of J*.
    """
    h = params.h
    ev = evaluate(probes, P, params, gradients=True)
    ok = _usable(ev, True)
    if not ok.any():
        raise ValueError("no probe produced a usable dual solution")
    lam = float(np.linalg.norm(ev.lambda_star[ok], axis=1).max())
    z = np.exp(ev.log_Z[ok])
    jinv = float((1.0 / np.linalg.eigvalsh(ev.j_star[ok])[:, 0]).max())
    return [
        BoundReport("lambda", lam, 1.0 / (min(epsilon, 1.0) * h)),
        BoundReport("z_low", float(z.min()), 1.0),
        BoundReport("z_high", float(z.max()), 1.0),
        BoundReport("jinv", jinv, h**-2),
    ]


def z_at_zero_dominates(P: PointSet, params: LmeParams, probes) -> bool:
    """``Z(x, lambda*) <= Z(x, 0)`` at every converged probe (lambda* minimizes log Z)."""
    ev = evaluate(probes, P, params, gradients=False)
    ok = ev.converged
    D = ev.offsets(P.points)
    f = -params.beta * np.sum(D * D, axis=1)
    fmax = np.full(len(ev), -np.inf)
    np.maximum.at(fmax, ev.rows, f)
    z0 = fmax + np.log(np.bincount(ev.rows, weights=np.exp(f - fmax[ev.rows]), minlength=len(ev)))
    return bool(np.all(ev.log_Z[ok] <= z0[ok] + 1e-12 * np.maximum(1.0, np.abs(z0[ok]))))


def dual_bounds_sweep(domain: Domain, h_list, epsilon: float = 2.0, gamma: float = 1.8,
                      probe_factor: float = 3.0, jitter: float = 0.0, seed: int = 0,
                      band: tuple[float, float] = (0.5, 2.0)) -> CheckResult:
    table: dict[str, list] = {k: [] for k in ("lambda", "z_low", "z_high", "jinv")}
    minimizer = True
    for h, P, X in _sweep_sets(domain, h_list, epsilon, probe_factor, jitter, seed):
        params = LmeParams(h=h, gamma=gamma)
        for rep in check_dual_bounds(P, params, epsilon, X):
            table[rep.kind].append((h, rep.normalized))
        minimizer &= z_at_zero_dominates(P, params, X)
    ok = {k: within_band([v for _, v in rows], *band) for k, rows in table.items()}
    measured = {k: [list(r) for r in rows] for k, rows in table.items()}
    measured["uniform"] = ok
    measured["z_below_z_at_zero"] = minimizer
    return CheckResult("dual_bounds", {"epsilon": epsilon, "gamma": gamma, "band": list(band)},
                       measured, all(ok.values()) and minimizer)


# ---------------------------------------------------------------- 1D example

def closed_form_lambda_1d(x: float, a: float, h: float, gamma: float) -> float:
    """Dual variable for the two-node set ``{a, a + h}`` at ``a < x < a + h``."""
    if not a < x < a + h:
        raise ValueError("x must lie strictly between a and a + h")
    return (math.log(a + h - x) - math.log(x - a)) / h + gamma / h**2 * (2 * x - 2 * a - h)


def closed_form_check(a: float = 0.0, h: float = 0.1, gamma: float = 1.8, n: int = 20) -> CheckResult:
    """Newton solution on ``{a, a + h}`` against the closed form and the hat weights."""
    P = PointSet([[a], [a + h]])
    params = LmeParams(h=h, gamma=gamma)
    xs = a + h * np.arange(1, n + 1) / (n + 1)
    ev = evaluate(xs[:, None], P, params, gradients=False)
    exact = np.array([closed_form_lambda_1d(x, a, h, gamma) for x in xs])
    dlam = float(np.max(np.abs(ev.lambda_star[:, 0] - exact)) * h)
    hats = np.stack([(a + h - xs) / h, (xs - a) / h], axis=1).ravel()
    dw = float(np.max(np.abs(ev.weights - hats)))
    passed = bool(ev.converged.all()) and dlam <= 1e-8 and dw <= 1e-10
    return CheckResult("closed_form_1d", {"a": a, "h": h, "gamma": gamma, "n": n},
                       {"lambda_err_times_h": dlam, "weight_err": dw}, passed)


# ------------------------------------------------------------------- boundary

def householder_to_e1(v) -> np.ndarray:
    """Symmetric orthogonal H with ``H v = e_1`` for a unit vector v."""
    v = np.asarray(v, dtype=float)
    e1 = np.zeros_like(v)
    e1[0] = 1.0
    u = v - e1
    nu = float(u @ u)
    if nu < 1e-28:
        return np.eye(len(v))
    return np.eye(len(v)) - 2.0 * np.outer(u, u) / nu


def face_point(domain: Domain, face: int, h: float, shift: float = 0.3, delta: float = 1.0) -> np.ndarray:
    """Point on the face near its vertex centroid, shifted ``shift h`` along the first tangent.

    The shift moves the probe line off lattice symmetry lines so that the
    mixed entries of J* do not vanish identically.
    """
    n, b = domain.normals[face], domain.offsets[face]
    V = domain.vertices()
    on = np.abs(V @ n - b) <= 1e-9 * max(1.0, domain.diameter)
    x0 = V[on].mean(axis=0)
    H = householder_to_e1(-n)
    if domain.dim > 1:
        x0 = x0 + shift * h * H[:, 1]
    others = np.delete(np.arange(len(domain.offsets)), face)
    gaps = domain.offsets[others] - domain.normals[others] @ x0
    if len(gaps) and gaps.min() < delta * h:
        raise ValueError(f"probe line is only {gaps.min() / h:.3g} h from the face edges; need {delta} h")
    return x0


@dataclass
class BoundaryProbeReport:
    rho_list: list
    lambda1: list
    rho_lambda1: list
    j11: list
    j1j_max: list
    b_min_eig: list
    lambda_tangential: list
    grad_blowup: list
    j11_vs_rho: float
    j1j_vs_rho: float
    rotation: list
    h: float
    face: int
    excluded_rho: list = field(default_factory=list)
    smallest_converged_rho: float | None = None
    checks: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(self.checks) and all(self.checks.values())

    def to_result(self) -> CheckResult:
        measured = {k: getattr(self, k) for k in (
            "rho_list", "lambda1", "rho_lambda1", "j11", "j1j_max", "b_min_eig", "lambda_tangential",
            "grad_blowup", "j11_vs_rho", "j1j_vs_rho", "excluded_rho", "smallest_converged_rho")}
        measured["checks"] = self.checks
        return CheckResult("boundary_scaling", {"h": self.h, "face": self.face, "mu": MU,
                                                "rotation": self.rotation}, measured, self.passed)


def _halves(v):
    v = np.asarray(v, dtype=float)
    k = max(len(v) // 2, 1)
    return v[:k], v[k:] if len(v) > k else v[-1:]


def _not_growing(v) -> bool:
    head, tail = _halves(v)
    return bool(np.all(np.isfinite(v)) and tail.max() <= head.max())


def _not_collapsing(v) -> bool:
    head, tail = _halves(v)
    return bool(np.all(np.isfinite(v)) and tail.min() >= 0.5 * head.min())


def geometric_rhos(h: float, hi: float = 0.5, lo: float = 1e-3, n: int = 12) -> np.ndarray:
    return h * np.geomspace(hi, lo, n)


def boundary_scaling_probe(domain: Domain, face: int, P: PointSet, params: LmeParams, rho_list=None,
                           s: float = 2.0, shift: float = 0.3, delta: float = 1.0,
                           eta: float | None = None) -> BoundaryProbeReport:
    """Dual quantities along a line approaching the interior of one face.

    Coordinates are rotated so the inward face normal is axis 1; ``B`` is the
    tangential block of J*. Pass flags:

    * log-log slope of J*_11 against rho lies in [0.8, 1.2];
    * lambda_1 increases, and ``rho lambda_1`` decreases from its peak to below
      0.1 (near rho = h/2 the product still rises);
    * "bounded" sequences (``|J*_1j| rho^-mu`` and the weighted gradient
      ``h |grad w_a| (rho/h)^mu (1 + |x - x_a|^2/h^2)^s``) do not exceed, over the
      smaller half of rho_list, their max over the larger half;
    * "bounded below" sequences (``J*_11 / rho`` and min eig of B) stay above
      half their min over the larger half.
    """
    h = params.h
    require_gap(P, domain, h, eta)
    rho = np.asarray(geometric_rhos(h) if rho_list is None else rho_list, dtype=float)
    if np.any(np.diff(rho) >= 0):
        raise ValueError("rho_list must be strictly decreasing")
    excluded = rho[rho < RHO_FLOOR * h]
    if len(excluded):
        log.info("excluding %d rho values below %g h", len(excluded), RHO_FLOOR)
    rho = rho[rho >= RHO_FLOOR * h]

    nu = -domain.normals[face]
    H = householder_to_e1(nu)
    x0 = face_point(domain, face, h, shift, delta)
    X = x0 + rho[:, None] * nu
    ev = evaluate(X, P, params, gradients=True)
    ok = _usable(ev, True)
    if (~ok).any():
        log.warning("boundary probe: %d of %d solves failed", int((~ok).sum()), len(ok))
    good = np.flatnonzero(ok)
    # once a solve fails, smaller rho is not trusted
    if (~ok).any():
        good = good[good < np.flatnonzero(~ok)[0]]
    excluded = np.concatenate([excluded, rho[np.setdiff1d(np.arange(len(rho)), good)]])
    rho, X = rho[good], X[good]

    lam = ev.lambda_star[good] @ H.T
    J = H @ ev.j_star[good] @ H.T
    d = domain.dim
    lam1 = lam[:, 0]
    j11 = J[:, 0, 0]
    j1j = np.abs(J[:, 0, 1:]).max(axis=1) if d > 1 else np.zeros(len(good))
    bmin = np.linalg.eigvalsh(J[:, 1:, 1:])[:, 0] if d > 1 else np.full(len(good), np.nan)
    tang = np.linalg.norm(lam[:, 1:], axis=1) if d > 1 else np.zeros(len(good))

    Dall = ev.offsets(P.points)
    q = (1.0 + np.sum(Dall * Dall, axis=1) / h**2) ** s
    val = q * h * np.linalg.norm(ev.gradients, axis=1)
    per = np.full(len(ev), -np.inf)
    np.maximum.at(per, ev.rows, val)
    blow = per[good] * (rho / h) ** MU

    slope11 = fit_rate(zip(rho, j11))
    slope1j = fit_rate(zip(rho, j1j)) if np.all(j1j > 0) else math.nan
    checks = {}
    if len(rho) >= 2:
        rl = rho * lam1
        checks = {
            "j11_slope_in_window": bool(0.8 <= slope11 <= 1.2),
            "j11_over_rho_bounded_below": _not_collapsing(j11 / rho),
            "lambda1_increasing": bool(np.all(np.diff(lam1) > 0)),
            "rho_lambda1_decreasing_from_peak": bool(np.all(np.diff(rl[int(np.argmax(rl)):]) < 0)),
            "rho_lambda1_final_below_0.1": bool(rl[-1] < 0.1),
            "grad_blowup_bounded": _not_growing(blow),
        }
        if d > 1:
            checks["j1j_rho_mu_bounded"] = _not_growing(j1j * rho ** (-MU))
            checks["b_bounded_below"] = bool(bmin.min() > 0) and _not_collapsing(bmin)
    return BoundaryProbeReport(
        rho.tolist(), lam1.tolist(), (rho * lam1).tolist(), j11.tolist(), j1j.tolist(), bmin.tolist(),
        tang.tolist(), blow.tolist(), slope11, slope1j, H.tolist(), h, face, sorted(excluded.tolist(), reverse=True),
        float(rho[-1]) if len(rho) else None, checks,
    )


def edge_probes(domain: Domain, h: float, rhos=(0.5, 0.25, 0.1, 0.03, 0.01)) -> np.ndarray:
    """Probes at distances ``rho h`` from every vertex (toward the centroid) and every face centre."""
    V = domain.vertices()
    c = V.mean(axis=0)
    rhos = np.asarray(rhos, dtype=float) * h
    out = []
    for v in V:
        u = (c - v) / np.linalg.norm(c - v)
        out.append(v + rhos[:, None] * u)
    tol = 1e-9 * max(1.0, domain.diameter)
    for n, b in zip(domain.normals, domain.offsets):
        fc = V[np.abs(V @ n - b) <= tol].mean(axis=0)
        out.append(fc - rhos[:, None] * n)
    return np.vstack(out)


def far_node_gradient_check(domain: Domain, P: PointSet, params: LmeParams, R: float, probes,
                            s: float = 2.0, eta: float | None = None) -> float:
    """Sup of ``(1 + |x - x_a|^2/h^2)^s h |grad w_a(x)|`` over probes and nodes with ``dist(x_a) >= R h``.

    The sup over an empty node set is 0.
    """
    return float(_far_node_values(domain, P, params, [R], probes, s, eta)[0])


def _far_node_values(domain, P, params, R_list, probes, s, eta):
    h = params.h
    require_gap(P, domain, h, eta)
    ev = evaluate(probes, P, params, gradients=True)
    ok = _usable(ev, True)
    if (~ok).any():
        log.warning("far-node check: %d probes failed and are skipped", int((~ok).sum()))
    e = _entry_mask(ev, ok)
    D = ev.offsets(P.points)[e]
    val = (1.0 + np.sum(D * D, axis=1) / h**2) ** s * h * np.linalg.norm(ev.gradients[e], axis=1)
    node_dist = domain.signed_distance(P.points)[ev.node_ids[e]] / h
    return [float(np.max(val[node_dist >= R], initial=0.0)) for R in R_list]


def far_node_sweep(domain: Domain, P: PointSet, params: LmeParams, R_list=None, probes=None,
                   s: float = 2.0, eta: float | None = None) -> CheckResult:
    """Far-node values over an R sweep; ``R0`` is the smallest R from which all values are <= 1."""
    R_list = np.arange(0.0, 8.01, 0.5) if R_list is None else np.asarray(R_list, dtype=float)
    probes = edge_probes(domain, params.h) if probes is None else probes
    vals = _far_node_values(domain, P, params, R_list, probes, s, eta)
    R0 = None
    for k in range(len(R_list)):
        if all(v <= 1.0 for v in vals[k:]):
            R0 = float(R_list[k])
            break
    monotone = bool(np.all(np.diff(vals) <= 1e-12 * max(vals[0], 1.0)))
    return CheckResult("far_node", {"h": params.h, "s": s, "R_list": R_list},
                       {"values": vals, "R0": R0, "monotone_in_R": monotone}, R0 is not None and monotone)
