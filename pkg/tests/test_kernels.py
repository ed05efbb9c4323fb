import os
import subprocess
import sys

import numpy as np
import pytest

from lmekit import kernels
from lmekit.geometry import Domain, GridIndex, PointSet, generate_grid_points, random_probes
from lmekit.lme import LmeParams, evaluate

needs_both = pytest.mark.skipif(len(kernels.available_backends()) < 2, reason="numba not installed")


def brute_neighbors(X, pts, radius):
    d2 = np.sum((X[:, None, :] - pts[None, :, :]) ** 2, axis=2)
    return [np.flatnonzero(row <= radius * radius) for row in d2]


def csr_rows(ptr, idx):
    return [idx[ptr[q]:ptr[q + 1]] for q in range(len(ptr) - 1)]


def test_set_backend_rejects_unknown():
    with pytest.raises(ValueError, match="unknown backend"):
        kernels.set_backend("fortran")


def test_set_backend_returns_previous():
    prev = kernels.get_backend()
    assert kernels.set_backend("numpy") == prev
    assert kernels.set_backend(prev) == "numpy"


@pytest.mark.parametrize("flag, expected", [("1", "numpy"), ("true", "numpy"), ("0", None), ("", None)])
def test_env_flag_selects_backend(flag, expected):
    env = dict(os.environ, LMEKIT_DISABLE_NUMBA=flag)
    out = subprocess.run([sys.executable, "-c", "from lmekit import kernels; print(kernels.get_backend())"],
                         env=env, capture_output=True, text=True, check=True).stdout.strip()
    if expected is None:
        expected = "numba" if "numba" in kernels.available_backends() else "numpy"
    assert out == expected


@pytest.mark.parametrize("d", [1, 2, 3])
@pytest.mark.parametrize("radius", [0.05, 0.17, 0.4, 3.0])
def test_radius_query_matches_brute_force(backend, d, radius, rng):
    pts = rng.random((150, d))
    X = rng.random((40, d)) * 1.6 - 0.3  # some probes fall outside the grid
    ptr, idx = GridIndex(pts).query(X, radius)
    for got, want in zip(csr_rows(ptr, idx), brute_neighbors(X, pts, radius)):
        np.testing.assert_array_equal(got, want)


def test_radius_query_far_probe_single_node(backend):
    pts = np.array([[0.0, 0.0]])
    ptr, idx = GridIndex(pts).query(np.array([[1.5, -1.2], [5.0, 5.0]]), 2.0)
    assert csr_rows(ptr, idx)[0].tolist() == [0]
    assert csr_rows(ptr, idx)[1].tolist() == []


def test_numpy_query_brute_fallback_branch(rng):
    # a radius spanning many cells takes the brute-force path
    pts = rng.random((20, 2))
    index = GridIndex(pts, cell=0.01)
    X = rng.random((10, 2))
    ptr, idx = kernels.radius_query(X, pts, index.origin, index.cell, index.dims, index.starts, index.order, 0.9,
                                    backend="numpy")
    for got, want in zip(csr_rows(ptr, idx), brute_neighbors(X, pts, 0.9)):
        np.testing.assert_array_equal(got, want)


@needs_both
@pytest.mark.parametrize("d", [1, 2, 3])
def test_backends_agree(d):
    domain = Domain.unit_box(d)
    h = {1: 0.05, 2: 0.1, 3: 0.2}[d]
    P = generate_grid_points(domain, h, jitter=0.2, seed=3)
    X = random_probes(domain, 30, margin=1.5 * h, seed=4)
    params = LmeParams(h=h)
    out = {}
    for name in ("numba", "numpy"):
        prev = kernels.set_backend(name)
        try:
            out[name] = evaluate(X, P, params)
        finally:
            kernels.set_backend(prev)
    a, b = out["numba"], out["numpy"]
    np.testing.assert_array_equal(a.ptr, b.ptr)
    np.testing.assert_array_equal(a.node_ids, b.node_ids)
    np.testing.assert_array_equal(a.status, b.status)
    np.testing.assert_allclose(a.weights, b.weights, rtol=0, atol=1e-13)
    np.testing.assert_allclose(a.gradients * h, b.gradients * h, rtol=0, atol=1e-10)
    np.testing.assert_allclose(a.lambda_star * h, b.lambda_star * h, rtol=0, atol=1e-9)
    np.testing.assert_allclose(a.j_star / h**2, b.j_star / h**2, rtol=0, atol=1e-12)


def test_solve_batch_status_codes(backend):
    P = PointSet(np.array([[0.0], [1.0]]))
    params = LmeParams(h=1.0)
    ev = evaluate(np.array([[0.5], [1.5]]), P, params)
    assert ev.status[0] == kernels.CONVERGED
    assert ev.status[1] == kernels.OUTSIDE_HULL
    assert kernels.STATUS_NAMES[kernels.MAX_ITERS] == "max_iters"


def test_max_iters_status(backend):
    P = PointSet(np.array([[0.0], [1.0]]))
    ev = evaluate(np.array([[0.01]]), P, LmeParams(h=1.0, max_iters=1))
    assert ev.status[0] == kernels.MAX_ITERS
