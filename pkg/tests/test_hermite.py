import math

import numpy as np
import pytest
from scipy.special import gamma

from dmzfilter.hermite import BasisError, build_basis, gauss_hermite


def test_ground_state_value():
    basis = build_basis(1.0, 0.0, 0)
    values, _ = basis.eval_at(0.0)
    assert values[0] == pytest.approx(np.pi**-0.25, abs=1e-15)
    assert values[0] == pytest.approx(0.7511255, abs=1e-7)


def test_two_point_rule():
    rule = gauss_hermite(2)
    np.testing.assert_allclose(rule.std_nodes, [-1 / np.sqrt(2), 1 / np.sqrt(2)], atol=1e-15)


@pytest.mark.parametrize("alpha, beta, n", [(2.0, 1.0, 8), (1.0, 0.0, 40), (0.5, -1.0, 64), (3.0, 2.5, 20), (1.0, 0.0, 0)])
def test_orthonormality(alpha, beta, n):
    gram = build_basis(alpha, beta, n).gram()
    assert np.abs(gram - np.eye(n + 1)).max() < 1e-10


def test_rule_shape_invariants():
    basis = build_basis(1.3, 0.2, 30)
    assert basis.nodes.size == 62
    assert np.all(np.diff(basis.nodes) > 0) and np.all(basis.weights > 0)


def _gaussian_moment(k):
    """Integral of y^k exp(-y^2)."""
    return 0.0 if k % 2 else gamma((k + 1) / 2)


@pytest.mark.parametrize("m", [2, 5, 10, 41, 82])
def test_quadrature_exactness(m):
    rule = gauss_hermite(m)
    y, w = rule.std_nodes, rule.gauss_weights
    for k in range(2 * m):
        terms = w * y**k
        got = terms.sum()
        exact = _gaussian_moment(k)
        if k % 2:
            assert abs(got) <= 1e-12 * np.abs(terms).sum()
        else:
            assert abs(got - exact) <= 1e-12 * exact, (m, k)


def test_odd_function_vanishes_at_center():
    basis = build_basis(1.7, 0.4, 10)
    values, derivs = basis.eval_at(0.4)
    assert abs(values[1]) < 1e-15 and abs(derivs[0]) < 1e-15


def test_derivatives_match_finite_differences(rng):
    alpha, beta = 1.4, 0.3
    basis = build_basis(alpha, beta, 20)
    xs = rng.uniform(beta - 4 / alpha, beta + 4 / alpha, 50)
    h = 1e-5
    _, d = basis.eval_at(xs)
    fd = (basis.eval_at(xs + h)[0] - basis.eval_at(xs - h)[0]) / (2 * h)
    scale = np.abs(d).max(axis=0)
    assert np.all(np.abs(d - fd) <= 1e-7 * scale)


def test_project_basis_function():
    basis = build_basis(1.2, -0.5, 12)
    coeffs = basis.project(lambda x: basis.eval_at(x)[0][3])
    expected = np.zeros(13)
    expected[3] = 1.0
    assert np.abs(coeffs - expected).max() < 1e-10


def test_project_zero():
    basis = build_basis(1.0, 0.0, 10)
    assert not np.any(basis.project(lambda x: 0.0 * x))


def test_quartic_initial_density_reconstruction():
    # alpha = 2 concentrates the 41 functions on the width of exp(-x^4/4).
    basis = build_basis(2.0, 0.0, 40)
    coeffs = basis.project(lambda x: np.exp(-(x**4) / 4))
    x = np.linspace(-3, 3, 601)
    assert np.abs(basis.synthesize(coeffs, x) - np.exp(-(x**4) / 4)).max() < 1e-6


def test_synthesize_ground_state():
    alpha, beta = 2.0, 1.5
    basis = build_basis(alpha, beta, 5)
    e0 = np.eye(6)[0]
    assert basis.synthesize(e0, np.array(beta)) == pytest.approx(np.sqrt(alpha) * np.pi**-0.25, rel=1e-15)


def test_synthesis_projection_identity_on_span(rng):
    basis = build_basis(1.0, 0.0, 30)
    coeffs = rng.standard_normal(31)
    again = basis.project(lambda x: basis.synthesize(coeffs, x))
    assert np.abs(again - coeffs).max() < 1e-10


def test_linearity(rng):
    basis = build_basis(1.0, 0.0, 20)
    a, b = rng.standard_normal(21), rng.standard_normal(21)
    x = np.linspace(-4, 4, 33)
    lhs = basis.synthesize(a + b, x)
    rhs = basis.synthesize(a, x) + basis.synthesize(b, x)
    assert np.abs(lhs - rhs).max() <= 8 * np.finfo(float).eps * np.abs(lhs).max()


def test_projection_idempotent():
    basis = build_basis(1.0, 0.0, 40)
    first = basis.project(lambda x: np.exp(-np.abs(x) ** 3) * np.cos(x))
    second = basis.project(lambda x: basis.synthesize(first, x))
    assert np.abs(second - first).max() < 1e-12


def test_gaussian_moments():
    basis = build_basis(1.0, 0.0, 40)
    coeffs = basis.project(lambda x: np.exp(-(x**2) / 2))
    m0, m1, m2 = (basis.moment(coeffs, k) for k in range(3))
    assert abs(m1) < 1e-10
    assert m0 == pytest.approx(math.sqrt(2 * math.pi), abs=1e-8)
    assert m2 / m0 == pytest.approx(1.0, abs=1e-8)
    np.testing.assert_allclose(basis.moment_vectors() @ coeffs, [m0, m1, m2], rtol=1e-13, atol=1e-14)


def test_tail_ratio():
    basis = build_basis(1.0, 0.0, 40)
    assert basis.tail_ratio(basis.project(lambda x: np.exp(-(x**2) / 2))) < 1e-12
    assert basis.tail_ratio(np.ones(41)) == 1.0
    assert basis.tail_ratio(np.zeros(41)) == 0.0


@pytest.mark.parametrize("args", [(0.0, 0.0, 4), (-1.0, 0.0, 4), (1.0, 0.0, -1)])
def test_bad_parameters(args):
    with pytest.raises(BasisError):
        build_basis(*args)


def test_too_few_quadrature_points():
    with pytest.raises(BasisError):
        build_basis(1.0, 0.0, 10, quad_points=20)
    assert build_basis(1.0, 0.0, 10, quad_points=21).nodes.size == 21


def test_length_mismatch():
    with pytest.raises(BasisError):
        build_basis(1.0, 0.0, 4).synthesize(np.ones(3))


def test_non_finite_projection():
    with pytest.raises(BasisError, match="non-finite"):
        build_basis(1.0, 0.0, 4).project(lambda x: 1.0 / x * 0 + np.where(x > 0, np.inf, 1.0))


def test_large_order_weights_finite():
    basis = build_basis(1.0, 0.0, 400)
    assert np.all(np.isfinite(basis.weights)) and np.all(basis.weights > 0)
    assert np.abs(basis.gram() - np.eye(401)).max() < 1e-10
