"""Scalar test fields with analytic derivatives, and the built-in registry."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

FD_RTOL = 1e-5


@dataclass
class ScalarField:
    """A scalar function with optional analytic gradient and Hessian.

    Callables take an ``(m, d)`` array and return ``(m,)``, ``(m, d)`` and
    ``(m, d, d)`` arrays respectively.
    """

    value: Callable[[np.ndarray], np.ndarray]
    dim: int
    gradient: Callable[[np.ndarray], np.ndarray] | None = None
    hessian: Callable[[np.ndarray], np.ndarray] | None = None
    d2_sup_norm: float | None = None
    name: str = "field"
    check: bool = True

    def __post_init__(self):
        if self.check:
            self.sanity_check()

    def sanity_check(self, n: int = 8, seed: int = 0):
        """Compare supplied derivatives with central differences of ``value``."""
        X = np.random.default_rng(seed).uniform(0.1, 0.9, (n, self.dim))
        step = 1e-5
        eye = np.eye(self.dim) * step
        if self.gradient is not None:
            fd = np.stack([(self.value(X + e) - self.value(X - e)) / (2 * step) for e in eye], axis=1)
            _assert_close(self.gradient(X), fd, "gradient")
        if self.hessian is not None and self.gradient is not None:
            fd = np.stack([(self.gradient(X + e) - self.gradient(X - e)) / (2 * step) for e in eye], axis=2)
            _assert_close(self.hessian(X), fd, "hessian")


def _assert_close(exact, approx, what):
    scale = max(float(np.abs(exact).max()), 1.0)
    if float(np.abs(exact - approx).max()) > FD_RTOL * scale:
        raise ValueError(f"{what} disagrees with finite differences of the value")


def affine(dim: int, c0: float = 0.3, c1=None) -> ScalarField:
    c1 = np.linspace(1.0, -0.5, dim) if c1 is None else np.asarray(c1, dtype=float)
    return ScalarField(
        value=lambda X: c0 + X @ c1,
        gradient=lambda X: np.broadcast_to(c1, X.shape).copy(),
        hessian=lambda X: np.zeros((len(X), dim, dim)),
        d2_sup_norm=0.0,
        dim=dim,
        name="affine",
    )


def quadratic(dim: int) -> ScalarField:
    # u = |x|^2 + 0.5 x_0 x_last
    A = 2.0 * np.eye(dim)
    A[0, -1] += 0.5
    A[-1, 0] += 0.5
    return ScalarField(
        value=lambda X: 0.5 * np.einsum("mi,ij,mj->m", X, A, X),
        gradient=lambda X: X @ A,
        hessian=lambda X: np.broadcast_to(A, (len(X), dim, dim)).copy(),
        d2_sup_norm=float(np.abs(np.linalg.eigvalsh(A)).max()),
        dim=dim,
        name="quadratic",
    )


def sinusoid(dim: int) -> ScalarField:
    """``sin(pi x_1)`` in 1D, ``sin(pi x_1) cos(pi x_2)`` in 2D (times ``cos(pi x_3)`` in 3D)."""
    pi = np.pi

    def factors(X):
        s = np.sin(pi * X[:, 0])
        c0 = np.cos(pi * X[:, 0])
        rest_c = np.cos(pi * X[:, 1:])
        rest_s = np.sin(pi * X[:, 1:])
        return s, c0, rest_c, rest_s

    def value(X):
        s, _, rc, _ = factors(X)
        return s * np.prod(rc, axis=1)

    def gradient(X):
        s, c0, rc, rs = factors(X)
        g = np.empty_like(X)
        g[:, 0] = pi * c0 * np.prod(rc, axis=1)
        for j in range(1, X.shape[1]):
            others = np.prod(np.delete(rc, j - 1, axis=1), axis=1)
            g[:, j] = -pi * s * rs[:, j - 1] * others
        return g

    def hessian(X):
        m, d = X.shape
        u = value(X)
        H = np.empty((m, d, d))
        for i in range(d):
            H[:, i, i] = -pi**2 * u
        # mixed partials: d/dx_i of the j-th factor
        trig = [np.sin(pi * X[:, 0])] + [np.cos(pi * X[:, k]) for k in range(1, d)]
        dtrig = [pi * np.cos(pi * X[:, 0])] + [-pi * np.sin(pi * X[:, k]) for k in range(1, d)]
        for i in range(d):
            for j in range(i + 1, d):
                prod = dtrig[i] * dtrig[j]
                for k in range(d):
                    if k not in (i, j):
                        prod = prod * trig[k]
                H[:, i, j] = H[:, j, i] = prod
        return H

    return ScalarField(value, dim, gradient, hessian, d2_sup_norm=float(pi**2 if dim <= 2 else dim * pi**2), name="sinusoid")


def gaussian_bump(dim: int, width: float = 0.3) -> ScalarField:
    c = np.full(dim, 0.5)
    s2 = width**2

    def value(X):
        return np.exp(-np.sum((X - c) ** 2, axis=1) / s2)

    def gradient(X):
        return (-2.0 / s2) * (X - c) * value(X)[:, None]

    def hessian(X):
        Y = X - c
        u = value(X)
        return (4.0 / s2**2) * np.einsum("mi,mj->mij", Y, Y) * u[:, None, None] - (2.0 / s2) * np.eye(dim) * u[:, None, None]

    return ScalarField(value, dim, gradient, hessian, d2_sup_norm=2.0 / s2, name="gaussian-bump")


REGISTRY = {
    "affine": affine,
    "quadratic": quadratic,
    "sinusoid": sinusoid,
    "gaussian-bump": gaussian_bump,
}


def get_field(name: str, dim: int) -> ScalarField:
    try:
        make = REGISTRY[name]
    except KeyError:
        raise ValueError(f"unknown field {name!r}; choose from {sorted(REGISTRY)}") from None
    return make(dim)
