"""Small-tensor algebra on symmetric trace-free 3x3 matrices and sphere quadrature.

Strain tensors are plain ``(3, 3)`` float arrays (batched as ``(..., 3, 3)``).
Linear maps on the five-dimensional space of symmetric trace-free matrices
("visc tensors") are ``(5, 5)`` arrays expressed in the fixed orthonormal
basis ``BASIS`` (Frobenius inner product ``A:B = sum_ij A_ij B_ij``)::

    b0 = (e1e1 - e2e2) / sqrt(2)
    b1 = (e1e1 + e2e2 - 2 e3e3) / sqrt(6)
    b2 = (e1e2 + e2e1) / sqrt(2)
    b3 = (e1e3 + e3e1) / sqrt(2)
    b4 = (e2e3 + e3e2) / sqrt(2)

A visc tensor ``T`` acts on ``S`` through coordinates: ``c_k = b_k:S``,
``T S = sum_j (T c)_j b_j``.
"""

from dataclasses import dataclass

import numpy as np

STRUCTURAL_TOL = 1e-12

_r2 = np.sqrt(2.0)
_r6 = np.sqrt(6.0)

BASIS = np.array(
    [
        [[1, 0, 0], [0, -1, 0], [0, 0, 0]],
        [[1, 0, 0], [0, 1, 0], [0, 0, -2]],
        [[0, 1, 0], [1, 0, 0], [0, 0, 0]],
        [[0, 0, 1], [0, 0, 0], [1, 0, 0]],
        [[0, 0, 0], [0, 0, 1], [0, 1, 0]],
    ],
    dtype=float,
)
BASIS /= np.array([_r2, _r6, _r2, _r2, _r2])[:, None, None]
BASIS.setflags(write=False)

IDENTITY5 = np.eye(5)
IDENTITY5.setflags(write=False)


def sym_trace_free_project(M):
    """Return ``(M + M^T)/2 - tr(M)/3 Id`` (works on stacks of matrices)."""
    M = np.asarray(M, dtype=float)
    sym = 0.5 * (M + np.swapaxes(M, -1, -2))
    tr = np.trace(sym, axis1=-2, axis2=-1)
    return sym - tr[..., None, None] / 3.0 * np.eye(3)


def is_strain(S, tol=STRUCTURAL_TOL):
    S = np.asarray(S, dtype=float)
    if S.shape[-2:] != (3, 3) or not np.all(np.isfinite(S)):
        return False
    asym = np.max(np.abs(S - np.swapaxes(S, -1, -2)), initial=0.0)
    tr = np.max(np.abs(np.trace(S, axis1=-2, axis2=-1)), initial=0.0)
    return asym <= tol and tr <= tol


def as_strain(S):
    """Validate and return ``S`` as a float array in Sym_3,sigma."""
    S = np.asarray(S, dtype=float)
    if not is_strain(S):
        raise ValueError("expected a symmetric trace-free 3x3 matrix")
    return S


def to_coords(S):
    """Coordinates of strain tensor(s) in ``BASIS``; shape ``(..., 5)``."""
    return np.einsum("kij,...ij->...k", BASIS, np.asarray(S, dtype=float))


def from_coords(c):
    """Inverse of :func:`to_coords`."""
    return np.einsum("...k,kij->...ij", np.asarray(c, dtype=float), BASIS)


def visc_apply(T, S):
    """Apply visc tensor(s) ``T`` (``(..., 5, 5)``) to strain(s) ``S``."""
    return from_coords(np.einsum("...jk,...k->...j", T, to_coords(S)))


def visc_from_map(linear_map):
    """Assemble the ``(..., 5, 5)`` matrix of ``linear_map`` column by column.

    ``linear_map`` takes a ``(3, 3)`` strain and returns ``(..., 3, 3)``.
    """
    cols = [to_coords(linear_map(BASIS[k])) for k in range(5)]
    return np.stack(cols, axis=-1)


def visc_quadratic(T, S):
    """``T S : S``."""
    c = to_coords(S)
    return np.einsum("...j,...jk,...k->...", c, T, c)


def rotation_action(R):
    """5x5 matrix of ``S -> R S R^T`` in ``BASIS`` (orthogonal for rotations)."""
    R = np.asarray(R, dtype=float)
    rotated = np.einsum("...ia,kab,...jb->...kij", R, BASIS, R)
    return np.einsum("lij,...kij->...lk", BASIS, rotated)


def rotation_to(direction):
    """Rotation matrices taking ``e3`` to the unit vector(s) ``direction``."""
    n = np.asarray(direction, dtype=float)
    n = n / np.linalg.norm(n, axis=-1, keepdims=True)
    # pick a helper axis not parallel to n
    helper = np.where(np.abs(n[..., :1]) < 0.9, [1.0, 0.0, 0.0], [0.0, 1.0, 0.0])
    e1 = helper - np.sum(helper * n, axis=-1, keepdims=True) * n
    e1 /= np.linalg.norm(e1, axis=-1, keepdims=True)
    e2 = np.cross(n, e1)
    return np.stack([e1, e2, n], axis=-1)


@dataclass(frozen=True)
class SphereQuadrature:
    """Product rule on the unit sphere.

    Gauss-Legendre with ``order`` nodes in ``cos(theta)`` times the
    trapezoidal rule with ``2 * order`` nodes in azimuth. Integrates every
    polynomial of total degree ``<= 2 * order - 1`` exactly.
    """

    nodes: np.ndarray
    weights: np.ndarray
    order: int

    @property
    def degree(self):
        return 2 * self.order - 1

    def integrate(self, values):
        """Sum ``weights * values`` over the node axis (axis 0)."""
        return np.tensordot(self.weights, values, axes=(0, 0))


def sphere_quadrature(order, degree=None):
    """Build the product Gauss-Legendre x trapezoid rule of the given order.

    Raises ``ValueError`` if ``order < 2`` or if a requested exactness
    ``degree`` exceeds ``2 * order - 1``.
    """
    order = int(order)
    if order < 2:
        raise ValueError("sphere quadrature order must be >= 2")
    if degree is not None and degree > 2 * order - 1:
        raise ValueError(
            f"order {order} is exact only up to degree {2 * order - 1}, "
            f"requested {degree}"
        )
    mu, wmu = np.polynomial.legendre.leggauss(order)
    n_phi = 2 * order
    phi = 2.0 * np.pi * np.arange(n_phi) / n_phi
    sin_t = np.sqrt(1.0 - mu**2)
    nodes = np.stack(
        [
            np.outer(sin_t, np.cos(phi)).ravel(),
            np.outer(sin_t, np.sin(phi)).ravel(),
            np.repeat(mu, n_phi),
        ],
        axis=-1,
    )
    weights = np.repeat(wmu, n_phi) * (2.0 * np.pi / n_phi)
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return SphereQuadrature(nodes=nodes, weights=weights, order=order)


def ball_quadrature(order, radius=1.0):
    """Nodes and weights for the ball ``|x| <= radius``.

    Gauss-Legendre in the radius (``order`` nodes, with the ``r^2`` Jacobian
    folded in) times :func:`sphere_quadrature` of the same order.
    """
    sq = sphere_quadrature(order)
    t, wt = np.polynomial.legendre.leggauss(order)
    r = 0.5 * radius * (t + 1.0)
    wr = 0.5 * radius * wt * r**2
    nodes = (r[:, None, None] * sq.nodes[None]).reshape(-1, 3)
    weights = (wr[:, None] * sq.weights[None]).ravel()
    return nodes, weights
