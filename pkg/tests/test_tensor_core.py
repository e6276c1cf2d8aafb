import numpy as np
import pytest
from hypothesis import given, settings

from conftest import directions, matrices, random_rotation, strains
from dilute_viscosity.tensor_core import (
    BASIS,
    IDENTITY5,
    as_strain,
    ball_quadrature,
    from_coords,
    is_strain,
    rotation_action,
    rotation_to,
    sphere_quadrature,
    sym_trace_free_project,
    to_coords,
    visc_apply,
    visc_quadratic,
)


def test_projection_examples():
    assert np.allclose(sym_trace_free_project(np.eye(3)), 0.0)
    assert np.allclose(sym_trace_free_project(np.diag([1.0, 0, 0])), np.diag([2, -1, -1]) / 3)


@given(matrices)
def test_projection_idempotent(M):
    P = sym_trace_free_project(M)
    assert is_strain(P, tol=1e-11)
    assert np.allclose(sym_trace_free_project(P), P, atol=1e-13)


def test_basis_orthonormal():
    gram = np.einsum("aij,bij->ab", BASIS, BASIS)
    assert np.abs(gram - np.eye(5)).max() < 1e-13
    assert all(is_strain(b) for b in BASIS)


def test_basis_is_read_only():
    with pytest.raises(ValueError):
        BASIS[0, 0, 0] = 2.0


@given(strains)
def test_coords_roundtrip(S):
    assert np.allclose(from_coords(to_coords(S)), S, atol=1e-12)
    assert np.isclose(np.sum(S * S), np.sum(to_coords(S) ** 2))


def test_visc_apply_examples(rng):
    S = sym_trace_free_project(rng.standard_normal((3, 3)))
    assert np.allclose(visc_apply(IDENTITY5, S), S)
    assert np.allclose(visc_apply(np.zeros((5, 5)), S), 0.0)
    for k, b in enumerate(BASIS):
        T = np.outer(np.eye(5)[k], np.eye(5)[k])
        assert np.allclose(visc_apply(T, b), b)


@given(strains, strains)
def test_visc_apply_linear_and_in_space(S, U):
    T = np.arange(25.0).reshape(5, 5) / 10.0
    out = visc_apply(T, 2.0 * S - U)
    assert np.allclose(out, 2.0 * visc_apply(T, S) - visc_apply(T, U), atol=1e-9)
    assert is_strain(out, tol=1e-9)


def test_as_strain_rejects():
    with pytest.raises(ValueError):
        as_strain(np.eye(3))
    with pytest.raises(ValueError):
        as_strain(np.array([[0, 1, 0], [0, 0, 0], [0, 0, 0]]))


@given(strains, directions)
@settings(max_examples=50)
def test_rotation_action_conjugates(S, n):
    R = rotation_to(n)
    assert np.allclose(R @ [0, 0, 1], n)
    assert np.allclose(R.T @ R, np.eye(3), atol=1e-12)
    R5 = rotation_action(R)
    assert np.allclose(R5 @ R5.T, np.eye(5), atol=1e-12)
    assert np.allclose(from_coords(R5 @ to_coords(S)), R @ S @ R.T, atol=1e-10)


def test_rotation_action_homomorphism(rng):
    A, B = random_rotation(rng), random_rotation(rng)
    assert np.allclose(rotation_action(A @ B), rotation_action(A) @ rotation_action(B))


def test_visc_quadratic(rng):
    S = sym_trace_free_project(rng.standard_normal((3, 3)))
    assert np.isclose(visc_quadratic(IDENTITY5, S), np.sum(S * S))


def test_quadrature_examples(rng):
    q = sphere_quadrature(8)
    assert np.all(q.weights > 0)
    assert abs(q.weights.sum() - 4 * np.pi) < 1e-12
    xx = q.integrate(q.nodes[:, :, None] * q.nodes[:, None, :])
    assert np.abs(xx - 4 * np.pi / 3 * np.eye(3)).max() < 1e-10
    S = sym_trace_free_project(rng.standard_normal((3, 3)))
    assert abs(q.integrate(np.einsum("qi,ij,qj->q", q.nodes, S, q.nodes))) < 1e-10


def _monomial_integral(a, b, c):
    """Exact surface integral of x^a y^b z^c over the unit sphere."""
    from math import gamma

    if a % 2 or b % 2 or c % 2:
        return 0.0
    beta = [(k + 1) / 2 for k in (a, b, c)]
    return 2 * gamma(beta[0]) * gamma(beta[1]) * gamma(beta[2]) / gamma(sum(beta))


@pytest.mark.parametrize("order", [2, 5, 10])
def test_quadrature_degree(order):
    q = sphere_quadrature(order)
    x, y, z = q.nodes.T
    deg = q.degree
    for a in range(deg + 1):
        for b in range(deg + 1 - a):
            for c in range(deg + 1 - a - b):
                val = q.integrate(x**a * y**b * z**c)
                assert abs(val - _monomial_integral(a, b, c)) < 1e-10


def test_quadrature_errors():
    with pytest.raises(ValueError):
        sphere_quadrature(1)
    with pytest.raises(ValueError):
        sphere_quadrature(4, degree=8)
    assert sphere_quadrature(4, degree=7).degree == 7


def test_ball_quadrature_volume_and_moment():
    nodes, w = ball_quadrature(6, radius=2.0)
    assert np.isclose(w.sum(), 4 / 3 * np.pi * 8)
    assert np.isclose(w @ np.sum(nodes**2, axis=1), 4 * np.pi * 2**5 / 5)
