"""Scaled and translated Hermite functions with matching Gauss-Hermite quadrature.

The basis functions are ``H_n(x) = sqrt(alpha) * psi_n(alpha * (x - beta))``
where ``psi_n`` are the L2-orthonormal Hermite functions

    psi_0(y)     = pi**(-1/4) exp(-y**2 / 2)
    psi_{n+1}(y) = y sqrt(2/(n+1)) psi_n(y) - sqrt(n/(n+1)) psi_{n-1}(y)

so that {H_n} is orthonormal in plain L2(R).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import roots_hermite

TAIL_WARN = 1e-3


class BasisError(ValueError):
    pass


def hermite_functions(n_order: int, y):
    """Values of psi_0..psi_N at ``y``; shape ``(N+1,) + y.shape``."""
    y = np.asarray(y, dtype=float)
    out = np.empty((n_order + 1,) + y.shape)
    out[0] = np.pi ** -0.25 * np.exp(-0.5 * y * y)
    if n_order >= 1:
        out[1] = np.sqrt(2.0) * y * out[0]
    for n in range(1, n_order):
        out[n + 1] = np.sqrt(2.0 / (n + 1)) * y * out[n] - np.sqrt(n / (n + 1)) * out[n - 1]
    return out


def hermite_function_derivatives(psi):
    """d/dy psi_n from the values psi_0..psi_{N+1} (one extra row needed)."""
    n_order = psi.shape[0] - 2
    n = np.arange(n_order + 1).reshape((-1,) + (1,) * (psi.ndim - 1))
    lower = np.concatenate([np.zeros_like(psi[:1]), psi[:n_order]])
    return np.sqrt(n / 2.0) * lower - np.sqrt((n + 1) / 2.0) * psi[1 : n_order + 2]


def _log_christoffel_sum(m: int, y):
    """log of sum_{n<m} psi_n(y)**2, rescaling the recurrence to avoid underflow."""
    y = np.asarray(y, dtype=float)
    # Scaled values: psi_n = cur * exp(log_scale).
    log_scale = -0.5 * y * y
    prev = np.zeros_like(y)
    cur = np.full_like(y, np.pi**-0.25)
    total = cur * cur
    for n in range(m - 1):
        prev, cur = cur, np.sqrt(2.0 / (n + 1)) * y * cur - np.sqrt(n / (n + 1)) * prev
        total = total + cur * cur
        big = np.abs(cur) > 1e100
        if np.any(big):
            r = np.where(big, 1e-100, 1.0)
            prev, cur, total = prev * r, cur * r, total * r * r
            log_scale = log_scale - np.log(r)
    return np.log(total) + 2.0 * log_scale


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes in physical x and weights with the Gaussian factor absorbed.

    ``sum(weights * p(nodes))`` approximates ``integral p(x) dx``.
    """

    nodes: np.ndarray
    weights: np.ndarray
    std_nodes: np.ndarray
    gauss_weights: np.ndarray

    def integrate(self, values):
        return np.dot(self.weights, values)


def gauss_hermite(m: int, alpha: float = 1.0, beta: float = 0.0) -> QuadratureRule:
    """m-point Gauss-Hermite rule mapped through x = beta + y / alpha.

    The absorbed weights are computed from the Christoffel function
    ``1 / sum_n psi_n(y_j)**2`` which does not underflow for large m.
    """
    if m < 1:
        raise BasisError("quadrature needs at least one point")
    y, w = roots_hermite(m)
    modified = np.exp(-_log_christoffel_sum(m, y))
    return QuadratureRule(
        nodes=beta + y / alpha,
        weights=modified / alpha,
        std_nodes=y,
        gauss_weights=w,
    )


@dataclass(frozen=True)
class HermiteBasis:
    alpha: float
    beta: float
    n_order: int
    quad: QuadratureRule = field(repr=False)
    # Basis values / x-derivatives at the quadrature nodes, shape (N+1, m).
    values: np.ndarray = field(repr=False)
    derivs: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        return self.n_order + 1

    @property
    def nodes(self) -> np.ndarray:
        return self.quad.nodes

    @property
    def weights(self) -> np.ndarray:
        return self.quad.weights

    @property
    def analysis(self) -> np.ndarray:
        """Matrix taking node values to coefficients: ``coeffs = analysis @ f(nodes)``."""
        return self.values * self.weights

    def eval_at(self, x):
        """Basis values and x-derivatives at ``x``; each shaped ``(N+1,) + x.shape``."""
        x = np.asarray(x, dtype=float)
        y = self.alpha * (x - self.beta)
        psi = hermite_functions(self.n_order + 1, y)
        scale = np.sqrt(self.alpha)
        return scale * psi[:-1], scale * self.alpha * hermite_function_derivatives(psi)

    def project(self, func) -> np.ndarray:
        """Quadrature projection of a pointwise function onto the basis."""
        vals = np.asarray(func(self.nodes), dtype=float)
        vals = np.broadcast_to(vals, self.nodes.shape)
        if not np.all(np.isfinite(vals)):
            bad = self.nodes[~np.isfinite(vals)][0]
            raise BasisError(f"non-finite function value at quadrature node x={bad:.6g}")
        return self.analysis @ vals

    def project_values(self, vals) -> np.ndarray:
        return self.analysis @ vals

    def synthesize(self, coeffs, x=None):
        """Evaluate the expansion at ``x`` (defaults to the quadrature nodes)."""
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape[0] != self.size:
            raise BasisError(f"expected {self.size} coefficients, got {coeffs.shape[0]}")
        if x is None:
            return coeffs @ self.values
        vals, _ = self.eval_at(x)
        return np.tensordot(coeffs, vals, axes=1)

    def moment(self, coeffs, order: int) -> float:
        """Quadrature value of the integral of x**order times the expansion."""
        if order not in (0, 1, 2):
            raise BasisError("moment order must be 0, 1 or 2")
        return float(np.dot(self.weights * self.nodes**order, self.synthesize(coeffs)))

    def moment_vectors(self) -> np.ndarray:
        """Rows r_k with ``moment(c, k) == r_k @ c`` for k = 0, 1, 2."""
        x = self.nodes
        w = self.weights
        return np.stack([self.values @ (w * x**k) for k in range(3)])

    def tail_ratio(self, coeffs) -> float:
        """|c_N| / max |c_n|: values above ~1e-3 mean the basis is too small."""
        coeffs = np.abs(np.asarray(coeffs, dtype=float))
        peak = coeffs.max()
        return float(coeffs[-1] / peak) if peak > 0 else 0.0

    def gram(self) -> np.ndarray:
        return (self.values * self.weights) @ self.values.T

    def header(self) -> tuple[float, float, int]:
        return (self.alpha, self.beta, self.n_order)


def build_basis(alpha: float, beta: float, n_order: int, quad_points: int | None = None) -> HermiteBasis:
    """Hermite basis of order ``n_order`` (``n_order + 1`` functions).

    ``quad_points`` defaults to ``2 * n_order + 2``.
    """
    if not alpha > 0:
        raise BasisError("alpha must be positive")
    if n_order < 0:
        raise BasisError("n_order must be non-negative")
    if quad_points is None:
        quad_points = 2 * n_order + 2
    if quad_points < 2 * n_order + 1:
        raise BasisError(f"quad_points={quad_points} is below 2*n_order+1={2 * n_order + 1}")
    quad = gauss_hermite(quad_points, alpha, beta)
    basis = HermiteBasis(alpha, beta, n_order, quad, np.empty(0), np.empty(0))
    values, derivs = basis.eval_at(quad.nodes)
    object.__setattr__(basis, "values", values)
    object.__setattr__(basis, "derivs", derivs)
    return basis
