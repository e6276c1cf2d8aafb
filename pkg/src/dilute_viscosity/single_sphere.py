"""Closed-form Stokes flow around one rigid unit sphere in a linear strain.

The disturbance ``phi0_velocity(x, E)`` solves the exterior Stokes problem
with ``D(phi0) = -E`` on the unit ball, zero force and torque, and decay at
infinity, so that ``E x + phi0(x, E)`` is the flow past a sphere at the
origin in the background strain ``E``.
"""

import numpy as np

from .tensor_core import as_strain, sphere_quadrature, visc_from_map

EINSTEIN_FUNCTIONAL = 20.0 * np.pi / 3.0


def _radius(x, what="x"):
    x = np.asarray(x, dtype=float)
    r = np.linalg.norm(x, axis=-1)
    if np.any(r == 0.0):
        raise ValueError(f"{what} = 0 is a singular point of the sphere solution")
    return x, r


def _parts(x, E):
    x, r = _radius(x)
    E = np.asarray(E, dtype=float)
    Ex = np.einsum("...ij,...j->...i", E, x)
    q = np.einsum("...i,...i->...", x, Ex)
    return x, r, Ex, q


def phi0_velocity(x, E):
    """Disturbance velocity at ``x`` (relative to the sphere center)."""
    x, r, Ex, q = _parts(x, E)
    coef = (-2.5 / r**5 + 2.5 / r**7) * q
    return coef[..., None] * x - Ex / r[..., None] ** 5


def phi0_pressure(x, E):
    """Pressure ``-5 (E : x x) / |x|^5``."""
    x, r, Ex, q = _parts(x, E)
    return -5.0 * q / r**5


def _strain_terms(x, E, a_xx, a_sym, a_id, a_e):
    x, r, Ex, q = _parts(x, E)
    xx = x[..., :, None] * x[..., None, :]
    sym = x[..., :, None] * Ex[..., None, :] + Ex[..., :, None] * x[..., None, :]
    out = (a_xx(r) * q)[..., None, None] * xx
    out = out + a_sym(r)[..., None, None] * sym
    out = out + (a_id(r) * q)[..., None, None] * np.eye(3)
    if a_e is not None:
        out = out + a_e(r)[..., None, None] * E
    return out


def m0_apply(x, E):
    """Symmetric gradient ``D phi0(x, E) = M0(x) E``."""
    return _strain_terms(
        x,
        E,
        lambda r: 12.5 / r**7 - 17.5 / r**9,
        lambda r: -2.5 / r**5 + 5.0 / r**7,
        lambda r: -2.5 / r**5 + 2.5 / r**7,
        lambda r: -1.0 / r**5,
    )


def m_homogeneous_apply(x, E):
    """Degree -3 part of ``M0(x) E`` (gradient of the stresslet term)."""
    return _strain_terms(
        x, E, lambda r: 12.5 / r**7, lambda r: -2.5 / r**5, lambda r: -2.5 / r**5, None
    )


def m_remainder_apply(x, E):
    """Degree -5 part of ``M0(x) E``."""
    return _strain_terms(
        x,
        E,
        lambda r: -17.5 / r**9,
        lambda r: 5.0 / r**7,
        lambda r: 2.5 / r**7,
        lambda r: -1.0 / r**5,
    )


def pressure_hessian_apply(x, E):
    """Hessian of ``phi0_pressure(., E)`` at ``x``; symmetric and trace-free."""
    return _strain_terms(
        x,
        E,
        lambda r: -175.0 / r**9,
        lambda r: 50.0 / r**7,
        lambda r: 25.0 / r**7,
        lambda r: -10.0 / r**5,
    )


def ball_average_apply(x, E):
    """Mean of ``M0(. ) E`` over the unit ball centered at ``x``.

    Exact for ``|x| > 2``: components of ``D phi0`` are biharmonic and
    ``Laplacian(D phi0) = Hess(P0)``, so the ball mean is the center value
    plus a tenth of the pressure Hessian.
    """
    return m0_apply(x, E) + 0.1 * pressure_hessian_apply(x, E)


def m0_kernel(x):
    """``M0(x)`` as a ``(..., 5, 5)`` visc tensor."""
    return visc_from_map(lambda b: m0_apply(x, b))


def m_homogeneous_kernel(x):
    return visc_from_map(lambda b: m_homogeneous_apply(x, b))


def m_remainder_kernel(x):
    return visc_from_map(lambda b: m_remainder_apply(x, b))


def ball_average_kernel(x):
    return visc_from_map(lambda b: ball_average_apply(x, b))


def boundary_stress(x, E, tol=1e-12):
    """Traction ``sigma(phi0, P0) n`` on the unit sphere; equals ``3 E x``."""
    x = np.asarray(x, dtype=float)
    r = np.linalg.norm(x, axis=-1)
    if np.any(np.abs(r - 1.0) >= tol):
        raise ValueError("boundary_stress needs points on the unit sphere")
    return 3.0 * np.einsum("...ij,...j->...i", np.asarray(E, dtype=float), x)


def stress_from_fields(x, E):
    """``(2 D phi0 - P0 Id) x``; the derivative route to :func:`boundary_stress`."""
    x = np.asarray(x, dtype=float)
    sigma = 2.0 * m0_apply(x, E) - phi0_pressure(x, E)[..., None, None] * np.eye(3)
    return np.einsum("...ij,...j->...i", sigma, x)


def surface_functional(velocity, strain, pressure, center, S, radius=1.0, quad=None):
    """``int_{|x-c|=r} sigma(u,p) n . S(x-c) - 2 u . S n``.

    The three callables take absolute positions of shape ``(n, 3)``. For a
    Stokes solution in an annulus the value does not depend on ``radius``;
    on the unit sphere it is the surface functional of the sphere.
    """
    quad = quad or sphere_quadrature(16)
    S = np.asarray(S, dtype=float)
    n = quad.nodes
    pts = np.asarray(center, dtype=float) + radius * n
    sigma = 2.0 * strain(pts) - pressure(pts)[:, None, None] * np.eye(3)
    traction = np.einsum("qij,qj->qi", sigma, n)
    Sn = n @ S.T
    integrand = radius * np.einsum("qi,qi->q", traction, Sn)
    integrand -= 2.0 * np.einsum("qi,qi->q", velocity(pts), Sn)
    return radius**2 * quad.integrate(integrand)


def single_sphere_functional(S, quad=None):
    """Surface functional of the single-sphere solution; ``(20 pi / 3) |S|^2``."""
    S = as_strain(S)
    quad = quad or sphere_quadrature(20)
    n = quad.nodes
    Sn = n @ S.T
    integrand = np.einsum("qi,qi->q", boundary_stress(n, S) - 2.0 * phi0_velocity(n, S), Sn)
    return quad.integrate(integrand)


def einstein_coefficient(S=None, quad=None):
    """``(3 / 8 pi) * single_sphere_functional(S) / |S|^2``; equals 5/2."""
    if S is None:
        S = np.diag([1.0, -0.5, -0.5])
    S = as_strain(S)
    norm2 = np.sum(S * S)
    if norm2 == 0.0:
        raise ValueError("S must be nonzero")
    return 3.0 / (8.0 * np.pi) * single_sphere_functional(S, quad) / norm2
