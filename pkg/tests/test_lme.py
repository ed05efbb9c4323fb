import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize
from scipy.spatial import Delaunay

from lmekit.geometry import Domain, PointSet, generate_grid_points, lattice_probes, random_probes
from lmekit.lme import (
    DegenerateJStarError,
    LmeParams,
    NoNodesInRange,
    NotConvergedError,
    OutsideHullError,
    default_cutoff,
    evaluate,
    log_partition,
    primal_objective,
    shape_gradients,
    shape_values,
    solve_dual,
)


def naive_log_z(x, lam, nodes, beta):
    D = x - nodes
    return math.log(np.sum(np.exp(-beta * np.sum(D * D, axis=1) + D @ lam)))


def closed_form_lambda(x, a, h, gamma):
    return (math.log(a + h - x) - math.log(x - a)) / h + gamma / h**2 * (2 * x - 2 * a - h)


def full_weights(ev, n):
    w = np.zeros(n)
    w[ev.node_ids] = ev.weights
    return w


# ---------------------------------------------------------------- params


def test_params_defaults():
    p = LmeParams(h=0.1)
    assert p.gamma == 1.8 and p.newton_tol == 1e-12 and p.max_iters == 100
    assert p.beta == pytest.approx(180.0)
    assert math.exp(-p.gamma * (p.cutoff - 1.0) ** 2) <= 1e-16 * (1 + 1e-9)
    assert p.radius == pytest.approx(p.cutoff * 0.1)
    assert math.isinf(p.exact().radius)


@pytest.mark.parametrize("kw", [dict(h=0.0), dict(h=1.0, gamma=-1.0), dict(h=1.0, newton_tol=0.0),
                                dict(h=1.0, max_iters=0), dict(h=1.0, cutoff=1.0)])
def test_params_validation(kw):
    with pytest.raises(ValueError):
        LmeParams(**kw)


def test_default_cutoff_monotone_in_gamma():
    assert default_cutoff(0.5) > default_cutoff(1.8) > default_cutoff(64.0) > 1.0


# ---------------------------------------------------------------- log_partition


def test_log_partition_single_node():
    P = PointSet(np.array([[0.3, 0.7]]))
    lz, r, J = log_partition([0.3, 0.7], [0.0, 0.0], P, LmeParams(h=1.0))
    assert lz == 0.0
    np.testing.assert_array_equal(r, 0.0)
    np.testing.assert_array_equal(J, 0.0)


def test_log_partition_symmetric_pair():
    a, h, gamma = 0.2, 0.1, 1.8
    P = PointSet(np.array([[a], [a + h]]))
    lz, r, J = log_partition([a + h / 2], [0.0], P, LmeParams(h=h, gamma=gamma))
    assert lz == pytest.approx(math.log(2.0) - gamma / 4, abs=1e-14)
    assert abs(r[0]) <= 1e-16
    assert J[0, 0] == pytest.approx(h**2 / 4, rel=1e-13)


def test_log_partition_matches_naive_sum(rng):
    for _ in range(20):
        nodes = rng.random((15, 2))
        x = rng.random(2) * 0.6 + 0.2
        lam = rng.normal(size=2) * 3.0
        params = LmeParams(h=0.3, cutoff=math.inf)
        lz, r, J = log_partition(x, lam, PointSet(nodes), params)
        ref = naive_log_z(x, lam, nodes, params.beta)
        assert abs(lz - ref) <= 1e-13 * max(1.0, abs(ref))
        D = x - nodes
        e = np.exp(-params.beta * np.sum(D * D, axis=1) + D @ lam)
        w = e / e.sum()
        np.testing.assert_allclose(r, w @ D, atol=1e-14)
        np.testing.assert_allclose(J, (D * w[:, None]).T @ D - np.outer(w @ D, w @ D), atol=1e-14)


def test_log_partition_stable_at_large_exponents():
    P = PointSet(np.array([[0.0], [1.0]]))
    lz, r, J = log_partition([0.5], [2000.0], P, LmeParams(h=1.0))
    assert math.isfinite(lz) and lz == pytest.approx(1000.0 - 1.8 / 4, rel=1e-14)
    assert r[0] == pytest.approx(0.5)


def test_log_partition_no_nodes():
    P = PointSet(np.array([[0.0, 0.0]]))
    with pytest.raises(NoNodesInRange, match="no nodes in range"):
        log_partition([10.0, 10.0], [0.0, 0.0], P, LmeParams(h=0.1))


# ---------------------------------------------------------------- solve_dual


def test_closed_form_1d(backend):
    a, h, gamma = 0.3, 0.1, 1.8
    P = PointSet(np.array([[a], [a + h]]))
    params = LmeParams(h=h, gamma=gamma)
    for x in np.linspace(a, a + h, 22)[1:-1]:
        sol = solve_dual([x], P, params)
        assert sol.converged
        assert abs(sol.lambda_star[0] - closed_form_lambda(x, a, h, gamma)) * h <= 1e-8


def test_symmetric_center_gives_zero_lambda(backend):
    P = generate_grid_points(Domain.unit_box(2), 0.1)
    sol = solve_dual([0.5, 0.5], P, LmeParams(h=0.1))
    assert sol.converged and sol.iters <= 1
    assert np.max(np.abs(sol.lambda_star)) * 0.1 <= 1e-12


def test_residual_below_tolerance_on_convergence(backend, rng):
    P = generate_grid_points(Domain.unit_box(2), 0.1, jitter=0.3, seed=1)
    params = LmeParams(h=0.1)
    for x in random_probes(Domain.unit_box(2), 20, margin=0.2, seed=2):
        sol = solve_dual(x, P, params)
        _, r, _ = log_partition(x, sol.lambda_star, P, params)
        assert sol.converged
        assert np.linalg.norm(r) <= 1e-12 * params.h * 10


def _grid_search_dual(x, nodes, beta, h):
    # coarse lattice search over lam * h, then quasi-Newton descent on the naive objective
    grid = np.linspace(-20, 20, 161) / h
    L1, L2 = np.meshgrid(grid, grid, indexing="ij")
    lams = np.stack([L1.ravel(), L2.ravel()], axis=1)
    D = x - nodes
    vals = np.log(np.sum(np.exp(-beta * np.sum(D * D, axis=1)[None, :] + lams @ D.T), axis=1))
    start = lams[np.argmin(vals)]

    def fun(lam):
        f = -beta * np.sum(D * D, axis=1) + D @ lam
        m = f.max()
        e = np.exp(f - m)
        return m + math.log(e.sum()), (e / e.sum()) @ D

    res = minimize(fun, start, jac=True, method="BFGS", options={"gtol": 1e-14 * h, "maxiter": 500})
    return start, res.x


def test_triangle_matches_grid_search_oracle(backend, rng):
    h = 0.5
    nodes = np.array([[0.0, 0.0], [1.0, 0.0], [0.2, 0.9]])
    params = LmeParams(h=h, cutoff=math.inf)
    P = PointSet(nodes)
    for _ in range(8):
        b = rng.dirichlet([2.0, 2.0, 2.0])
        x = b @ nodes
        coarse, fine = _grid_search_dual(x, nodes, params.beta, h)
        lam = solve_dual(x, P, params).lambda_star
        assert np.max(np.abs(lam - coarse)) * h <= 0.25 + 1e-12  # within one lattice cell
        assert np.max(np.abs(lam - fine)) * h <= 1e-8


# ---------------------------------------------------------------- shape values


def test_hat_weights_1d(backend):
    a, h = 1.0, 0.25
    P = PointSet(np.array([[a], [a + h]]))
    for x in np.linspace(a, a + h, 12)[1:-1]:
        ev = shape_gradients([x], P, LmeParams(h=h))
        np.testing.assert_allclose(ev.weights, [(a + h - x) / h, (x - a) / h], atol=1e-12)
        np.testing.assert_allclose(ev.gradients[:, 0], [-1 / h, 1 / h], rtol=1e-9)


def test_midpoint_of_symmetric_pair(backend):
    P = PointSet(np.array([[0.0, 0.0], [1.0, 1.0]]))
    ev = shape_values([0.5, 0.5], P, LmeParams(h=1.0))
    np.testing.assert_allclose(ev.weights, [0.5, 0.5], atol=1e-15)


def _primal_oracle(x, nodes, beta):
    n = len(nodes)

    def f(w):
        wc = np.clip(w, 1e-300, None)
        return np.sum(w * np.sum((nodes - x) ** 2, axis=1)) + np.sum(w * np.log(wc)) / beta

    cons = [{"type": "eq", "fun": lambda w: np.sum(w) - 1.0},
            {"type": "eq", "fun": lambda w: (w @ (nodes - x))}]
    res = minimize(f, np.full(n, 1.0 / n), method="SLSQP", bounds=[(0.0, 1.0)] * n, constraints=cons,
                   options={"ftol": 1e-16, "maxiter": 1000})
    return res.x


def test_weights_match_primal_oracle(backend, rng):
    nodes = rng.random((10, 2))
    hull = Delaunay(nodes)
    params = LmeParams(h=0.35, cutoff=math.inf)
    P = PointSet(nodes)
    done = 0
    while done < 6:
        x = rng.random(2)
        if hull.find_simplex(x) < 0 or np.min(hull.plane_distance(x)) > -0.05:
            continue
        ref = _primal_oracle(x, nodes, params.beta)
        ev = shape_values(x, P, params)
        np.testing.assert_allclose(full_weights(ev, len(nodes)), ref, atol=1e-7)
        done += 1


def test_rajan_limit_1d(backend):
    h = 0.1
    P = generate_grid_points(Domain.unit_box(1), h)
    params = LmeParams(h=h, gamma=64.0)
    nodes = P.points[:, 0]
    for x in np.linspace(0.31, 0.69, 15):
        ev = shape_values([x], P, params)
        w = full_weights(ev, len(P))
        k = int(np.searchsorted(nodes, x)) - 1
        hat = np.zeros(len(P))
        hat[k], hat[k + 1] = (nodes[k + 1] - x) / h, (x - nodes[k]) / h
        assert np.max(np.abs(w - hat)) <= 1e-3


def test_weights_nonnegative_and_consistent(backend):
    domain = Domain.unit_box(2)
    P = generate_grid_points(domain, 0.1, jitter=0.3, seed=5)
    ev = evaluate(random_probes(domain, 100, margin=0.2, seed=6), P, LmeParams(h=0.1))
    assert np.all(ev.converged)
    assert ev.weights.min() >= -1e-15
    assert np.max(np.abs(ev.segment_sum(ev.weights) - 1)) <= 1e-12
    moment = ev.segment_sum(ev.weights[:, None] * ev.offsets(P.points))
    assert np.max(np.abs(moment)) <= 1e-10 * 0.1


# ---------------------------------------------------------------- gradients


def test_gradients_match_finite_differences(backend):
    domain = Domain.unit_box(2)
    h = 0.1
    P = generate_grid_points(domain, h, jitter=0.3, seed=7)
    params = LmeParams(h=h).exact()
    step = 1e-6 * h
    for x in random_probes(domain, 50, margin=0.2, seed=8):
        ev = shape_gradients(x, P, params)
        fd = np.zeros_like(ev.gradients)
        for j in range(2):
            e = np.zeros(2)
            e[j] = step
            wp = shape_values(x + e, P, params).weights
            wm = shape_values(x - e, P, params).weights
            fd[:, j] = (wp - wm) / (2 * step)
        rel = np.max(np.abs(ev.gradients - fd)) / np.max(np.abs(ev.gradients))
        assert rel <= 1e-6


def test_gradients_sum_to_zero(backend):
    domain = Domain.unit_box(2)
    P = generate_grid_points(domain, 0.1, jitter=0.3, seed=9)
    ev = evaluate(random_probes(domain, 50, margin=0.2, seed=10), P, LmeParams(h=0.1))
    assert np.max(np.abs(ev.segment_sum(ev.gradients))) <= 1e-8 / 0.1


def test_j_star_is_weighted_second_moment(backend):
    P = generate_grid_points(Domain.unit_box(2), 0.1, jitter=0.2, seed=1)
    ev = shape_gradients([0.43, 0.61], P, LmeParams(h=0.1))
    D = np.array([0.43, 0.61]) - P.points[ev.node_ids]
    np.testing.assert_allclose(ev.j_star, (D * ev.weights[:, None]).T @ D, atol=1e-16)
    assert np.all(np.linalg.eigvalsh(ev.j_star) > 0)


@pytest.mark.parametrize("d, eps", [(1, 2.0), (2, 2.0)])
def test_j_star_min_eig_uniform_in_h(d, eps):
    domain = Domain.unit_box(d)
    consts = []
    for h in (0.2, 0.1, 0.05):
        P = generate_grid_points(domain, h)
        X = lattice_probes(domain, h / 3, eps * h)
        ev = evaluate(X, P, LmeParams(h=h))
        consts.append(np.min(np.linalg.eigvalsh(ev.j_star)) / h**2)
    assert max(consts) <= 1.2 * consts[0] and min(consts) >= 0.8 * consts[0]


# ---------------------------------------------------------------- primal objective


def test_primal_objective_examples():
    params = LmeParams(h=0.5)
    P = PointSet(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]))
    assert primal_objective([0.0, 0.0], [1.0, 0.0, 0.0], P, params) == 0.0
    rho, k = 0.3, 6
    ang = 2 * np.pi * np.arange(k) / k
    ring = PointSet(rho * np.stack([np.cos(ang), np.sin(ang)], axis=1))
    val = primal_objective([0.0, 0.0], np.full(k, 1.0 / k), ring, params)
    assert val == pytest.approx(rho**2 - math.log(k) / params.beta, rel=1e-14)


def test_primal_objective_rejects_negative_weights():
    P = PointSet(np.array([[0.0], [1.0]]))
    with pytest.raises(ValueError, match="nonnegative"):
        primal_objective([0.5], [1.5, -0.5], P, LmeParams(h=1.0))
    with pytest.raises(ValueError):
        primal_objective([0.5], [1.0], P, LmeParams(h=1.0))


def test_lme_beats_barycentric_competitor(backend, rng):
    nodes = rng.random((25, 2))
    tri = Delaunay(nodes)
    params = LmeParams(h=0.2, cutoff=math.inf)
    P = PointSet(nodes)
    checked = 0
    while checked < 20:
        x = rng.random(2)
        s = int(tri.find_simplex(x))
        if s < 0 or np.min(tri.plane_distance(x)) > -0.02:
            continue
        T = tri.transform[s]
        b = T[:2] @ (x - T[2])
        bary = np.zeros(len(nodes))
        bary[tri.simplices[s]] = np.append(b, 1 - b.sum())
        w = full_weights(shape_values(x, P, params), len(nodes))
        assert primal_objective(x, w, P, params) < primal_objective(x, bary, P, params)
        checked += 1


# ---------------------------------------------------------------- errors


def test_outside_hull_raises(backend):
    P = PointSet(np.array([[0.0], [1.0]]))
    with pytest.raises(OutsideHullError, match="outside"):
        shape_values([1.2], P, LmeParams(h=1.0))


def test_no_nodes_in_range(backend):
    P = PointSet(np.array([[0.0], [1.0]]))
    with pytest.raises(NoNodesInRange):
        evaluate([[50.0]], P, LmeParams(h=1.0))


def test_collinear_nodes_give_degenerate_j_star(backend):
    P = PointSet(np.array([[0.0, 0.0], [0.5, 0.5], [1.0, 1.0]]))
    ev = shape_values([0.3, 0.3], P, LmeParams(h=0.5))
    assert ev.dual.converged
    with pytest.raises(DegenerateJStarError, match="degenerate J"):
        shape_gradients([0.3, 0.3], P, LmeParams(h=0.5))


def test_max_iters_raises_not_converged(backend):
    P = PointSet(np.array([[0.0], [1.0]]))
    with pytest.raises(NotConvergedError):
        shape_values([0.01], P, LmeParams(h=1.0, max_iters=1))


def test_dimension_mismatch():
    P = PointSet(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]))
    with pytest.raises(ValueError, match="dimension"):
        evaluate([[0.2]], P, LmeParams(h=1.0))


def test_batch_point_roundtrip(backend):
    P = generate_grid_points(Domain.unit_box(2), 0.2)
    ev = evaluate([[0.3, 0.4], [0.55, 0.5]], P, LmeParams(h=0.2))
    single = shape_gradients([0.55, 0.5], P, LmeParams(h=0.2))
    q = ev.point(1)
    np.testing.assert_array_equal(q.node_ids, single.node_ids)
    np.testing.assert_allclose(q.weights, single.weights, atol=1e-15)
    assert q.dual.status == "converged" and len(ev) == 2


# ---------------------------------------------------------------- properties


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**16), jitter=st.floats(0.0, 0.4), gamma=st.floats(0.8, 4.0),
       u=st.tuples(st.floats(0.25, 0.75), st.floats(0.25, 0.75)))
def test_consistency_property(seed, jitter, gamma, u):
    h = 0.1
    P = generate_grid_points(Domain.unit_box(2), h, jitter=jitter, seed=seed)
    ev = shape_gradients(np.array(u), P, LmeParams(h=h, gamma=gamma))
    D = np.array(u) - P.points[ev.node_ids]
    assert abs(ev.weights.sum() - 1) <= 1e-12
    assert np.max(np.abs(ev.weights @ D)) <= 1e-10 * h
    assert np.max(np.abs(ev.gradients.sum(axis=0))) <= 1e-8 / h
    assert np.max(np.abs(-D.T @ ev.gradients - np.eye(2))) <= 1e-8
