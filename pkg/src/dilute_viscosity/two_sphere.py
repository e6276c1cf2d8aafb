"""Two rigid spheres in a linear strain, solved by the method of reflections.

Dipole convention: a sphere with dipole ``E`` (a strain tensor) carries the
disturbance ``phi0_velocity(x - c, -E)``, i.e. ``E`` is the strain that the
disturbance imposes inside its own ball. An isolated sphere in the
background strain ``S`` has ``E = -S``. Equivalently ``-E`` is the ambient
strain the sphere responds to.

Reflections keep only strain dipoles. The ambient strain seen by a sphere is
the exact mean of the incoming strain over its ball (see
:func:`~dilute_viscosity.single_sphere.ball_average_apply`).
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from .single_sphere import (
    ball_average_apply,
    ball_average_kernel,
    m0_apply,
    m0_kernel,
    phi0_pressure,
    phi0_velocity,
)
from .tensor_core import (
    BASIS,
    IDENTITY5,
    as_strain,
    from_coords,
    rotation_action,
    rotation_to,
    to_coords,
)

R0_DEFAULT = 2.5
R1_DEFAULT = 5.0
R2_DEFAULT = 2 * R1_DEFAULT + R0_DEFAULT + 1.0
CLOSE_PAIR = 2.5


class OverlapError(ValueError):
    """Two spheres, or a sphere and an evaluation ball, intersect."""


@dataclass(frozen=True)
class FlowExpansion:
    """Background strain plus strain dipoles at sphere centers.

    velocity(x) = background x + sum_i phi0_velocity(x - c_i, -E_i)
    """

    background: np.ndarray
    centers: np.ndarray
    dipoles: np.ndarray

    def __post_init__(self):
        centers = np.asarray(self.centers, dtype=float).reshape(-1, 3)
        dipoles = np.asarray(self.dipoles, dtype=float).reshape(-1, 3, 3)
        if len(centers) != len(dipoles):
            raise ValueError("centers and dipoles must have the same length")
        object.__setattr__(self, "background", np.asarray(self.background, dtype=float))
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "dipoles", dipoles)

    @classmethod
    def single(cls, S, center=(0.0, 0.0, 0.0)):
        S = as_strain(S)
        return cls(S, np.asarray(center, dtype=float)[None], -S[None])

    def __len__(self):
        return len(self.centers)

    def _rel(self, x):
        x = np.asarray(x, dtype=float)
        return x[..., None, :] - self.centers, x

    def velocity(self, x):
        rel, x = self._rel(x)
        u = np.einsum("...ij,...j->...i", self.background, x)
        if len(self):
            u = u + phi0_velocity(rel, -self.dipoles).sum(axis=-2)
        return u

    def strain(self, x):
        rel, x = self._rel(x)
        out = np.broadcast_to(self.background, x.shape[:-1] + (3, 3)).copy()
        if len(self):
            out += m0_apply(rel, -self.dipoles).sum(axis=-3)
        return out

    def pressure(self, x):
        rel, x = self._rel(x)
        if not len(self):
            return np.zeros(x.shape[:-1])
        return phi0_pressure(rel, -self.dipoles).sum(axis=-1)

    def ambient_strain(self, target, exclude=None):
        """Mean strain of this field over the unit ball at ``target``."""
        target = np.asarray(target, dtype=float)
        keep = np.ones(len(self), dtype=bool)
        if exclude is not None:
            keep[exclude] = False
        out = np.array(self.background, dtype=float)
        if keep.any():
            rel = target - self.centers[keep]
            out = out + ball_average_apply(rel, -self.dipoles[keep]).sum(axis=0)
        return out


def reflect_dipole(source, target_center, min_separation=2.0, warn_below=CLOSE_PAIR):
    """Dipole induced at ``target_center`` by the flow ``source``.

    Returns minus the mean strain of ``source`` over the unit ball at the
    target. Raises :class:`OverlapError` if the target ball meets a source
    sphere (center distance ``<= min_separation``).
    """
    t = np.asarray(target_center, dtype=float)
    if len(source):
        dist = np.linalg.norm(source.centers - t, axis=-1)
        if np.any(dist <= min_separation):
            raise OverlapError(f"target at distance {dist.min():.6g} from a source sphere")
        if np.any(dist < warn_below):
            warnings.warn(
                f"close pair (distance {dist.min():.4g}); lubrication is not modeled",
                stacklevel=2,
            )
    return -source.ambient_strain(t)


@dataclass(frozen=True)
class TwoSphereSolution:
    y: np.ndarray
    z: np.ndarray
    S: np.ndarray
    E_y: np.ndarray
    E_z: np.ndarray
    reflections: int
    converged: bool
    residual: float
    increments: tuple = field(default=())
    averaging: str = "ball"
    close_pair: bool = False

    @property
    def separation(self):
        return float(np.linalg.norm(self.y - self.z))

    @property
    def contraction_ratio(self):
        """Geometric-mean ratio of successive dipole increments."""
        inc = np.array([v for v in self.increments if v > 0.0])
        if len(inc) < 2:
            return 0.0
        return float(np.exp(np.mean(np.diff(np.log(inc)))))

    def boundary_residual(self):
        """Largest mismatch ``|-S + W(y - z) E_z - E_y| / |S|`` over the two spheres.

        ``S - W(y - z) E_z`` is the mean strain imposed on ``B_y`` by the
        background and the other sphere; rigidity requires the dipole to
        cancel it exactly.
        """
        scale = max(np.linalg.norm(self.S), 1e-300)
        ry = -self.S + ball_average_apply(self.y - self.z, self.E_z) - self.E_y
        rz = -self.S + ball_average_apply(self.z - self.y, self.E_y) - self.E_z
        return float(max(np.linalg.norm(ry), np.linalg.norm(rz)) / scale)

    def expansion(self):
        """Full disturbance plus background (``u - S x`` is ``Phi_{y,z}``)."""
        return FlowExpansion(self.S, np.stack([self.y, self.z]), np.stack([self.E_y, self.E_z]))

    def interaction(self):
        """Interaction field ``Phi_{y,z} - Phi_y - Phi_z`` as an expansion."""
        return FlowExpansion(
            np.zeros((3, 3)),
            np.stack([self.y, self.z]),
            np.stack([self.E_y + self.S, self.E_z + self.S]),
        )


def _check_pair(y, z):
    d = np.linalg.norm(y - z)
    if d <= 2.0:
        raise OverlapError(f"spheres overlap (center distance {d:.6g} <= 2)")
    return d


def two_sphere_solve(y, z, S, max_reflections=200, tol=1e-13, averaging="ball"):
    """Iterate reflections between the spheres at ``y`` and ``z``.

    Starting from the isolated-sphere dipoles ``-S``, each sweep updates
    ``E_y <- -S - <D u_z>_{B_y}`` and symmetrically for ``z`` (Jacobi
    sweeps). Stops when the largest dipole increment drops below ``tol``
    (relative to ``|S|``). ``converged`` is False if the increments grow for
    three consecutive sweeps or the budget runs out first.

    ``averaging="ball"`` uses the exact ball mean; ``"center"`` evaluates the
    incoming strain at the center only.
    """
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    S = as_strain(S)
    d = _check_pair(y, z)
    if averaging == "ball":
        kernel = ball_average_apply
    elif averaging == "center":
        kernel = m0_apply
    else:
        raise ValueError(f"unknown averaging {averaging!r}")
    scale = max(np.linalg.norm(S), 1e-300)
    E_y = -S.copy()
    E_z = -S.copy()
    increments = []
    growth = 0
    converged = np.linalg.norm(S) == 0.0
    k = 0
    while not converged and k < max_reflections:
        new_y = -S + kernel(y - z, E_z)
        new_z = -S + kernel(z - y, E_y)
        inc = max(np.linalg.norm(new_y - E_y), np.linalg.norm(new_z - E_z)) / scale
        E_y, E_z = new_y, new_z
        k += 1
        if increments and inc > increments[-1]:
            growth += 1
        else:
            growth = 0
        increments.append(float(inc))
        if not np.all(np.isfinite(E_y)) or growth >= 3:
            break
        converged = inc < tol
    return TwoSphereSolution(
        y=y,
        z=z,
        S=S,
        E_y=E_y,
        E_z=E_z,
        reflections=k,
        converged=bool(converged),
        residual=increments[-1] if increments else 0.0,
        increments=tuple(increments),
        averaging=averaging,
        close_pair=bool(d < CLOSE_PAIR),
    )


def psi_strain(sol, x):
    """Strain of the interaction field ``Psi_{y,z}`` at ``x`` (outside both balls)."""
    x = np.asarray(x, dtype=float)
    for c in (sol.y, sol.z):
        if np.any(np.linalg.norm(x - c, axis=-1) < 1.0):
            raise ValueError("psi_strain evaluated inside a sphere")
    return sol.interaction().strain(x)


def pair_tensor(d):
    """Converged far-field tensor ``M_l(d)`` in closed form; ``(..., 5, 5)``.

    The symmetric reflection fixed point is ``A = S + W(d) A`` with ``W``
    the ball-averaged kernel, so ``M_l = (I - W)^{-1} - I``.
    """
    d = np.asarray(d, dtype=float)
    if np.any(np.linalg.norm(d, axis=-1) <= 2.0):
        raise OverlapError("pair_tensor needs separations > 2")
    W = ball_average_kernel(d)
    return np.linalg.solve(IDENTITY5 - W, np.broadcast_to(IDENTITY5, W.shape)) - IDENTITY5


def far_field_tensor(d, r1=R1_DEFAULT, max_reflections=500, tol=1e-14):
    """``M_l(d)`` read off converged two-sphere solves, one per basis strain.

    Sphere ``y = d`` responds to ``A_y = S + M_l(d) S`` where ``A_y = -E_y``;
    the columns are symmetrized over ``d -> -d`` (the two spheres).
    """
    d = np.asarray(d, dtype=float)
    if np.linalg.norm(d) < r1:
        raise ValueError(f"|d| = {np.linalg.norm(d):.4g} is below the threshold R1 = {r1}")
    cols = []
    for b in BASIS:
        sol = two_sphere_solve(d, np.zeros(3), b, max_reflections=max_reflections, tol=tol)
        if not sol.converged:
            raise RuntimeError(f"reflections did not converge at |d| = {np.linalg.norm(d):.4g}")
        cols.append(to_coords(-0.5 * (sol.E_y + sol.E_z) - b))
    return np.stack(cols, axis=-1)


def stresslet_extract(sol):
    """Total stresslet ``S_f`` of the pair.

    Normalized so that far away ``D u(x) = -(3 / 20 pi) M0(x - m) S_f +
    O(|x - m|^-4)``, with ``m`` the midpoint and ``u`` the disturbance.
    """
    if not sol.converged:
        raise ValueError("stresslet_extract needs a converged solution")
    return 20.0 * np.pi / 3.0 * (sol.E_y + sol.E_z)


def near_field_tensor(d, max_reflections=500, tol=1e-14):
    """``M_s(d)``: the pair's total dipole excess per sphere.

    Defined through the stresslet, ``M_s S = -(3 / 40 pi) S_f - S``, so that
    ``D Psi(x) ~ (M0(x - y) + M0(x - z)) M_s S`` far from the pair.
    """
    d = np.asarray(d, dtype=float)
    cols = []
    for b in BASIS:
        sol = two_sphere_solve(d, np.zeros(3), b, max_reflections=max_reflections, tol=tol)
        cols.append(to_coords(-3.0 / (40.0 * np.pi) * stresslet_extract(sol) - b))
    return np.stack(cols, axis=-1)


def chi0(r, r0=R0_DEFAULT):
    """Radial cutoff: 0 for ``r <= (2 + r0)/4``, 1 for ``r >= r0``.

    Quintic ``10 t^3 - 15 t^4 + 6 t^5`` in between (C^2 at both ends).
    """
    a = (2.0 + r0) / 4.0
    t = np.clip((np.asarray(r, dtype=float) - a) / (r0 - a), 0.0, 1.0)
    return t**3 * (10.0 - 15.0 * t + 6.0 * t**2)


def _pair_dipole_excess(y, z, S):
    """``A_y - S`` for the converged symmetric pair (batched over y, z)."""
    return from_coords(np.einsum("...jk,k->...j", pair_tensor(y - z), to_coords(S)))


def cutoff_kernel(x, y, z, S, r0=R0_DEFAULT):
    """``chi0(x-y) chi0(x-z) chi0(y-z) D Psi_{y,z}(x)``, batched over points.

    Pairs with ``|y - z| <= 2`` (overlapping, not admissible under a
    hardcore condition ``r0 > 2``) contribute zero.
    """
    x, y, z = (np.asarray(v, dtype=float) for v in (x, y, z))
    S = as_strain(S)
    x, y, z = np.broadcast_arrays(x, y, z)
    dxy = np.linalg.norm(x - y, axis=-1)
    dxz = np.linalg.norm(x - z, axis=-1)
    dyz = np.linalg.norm(y - z, axis=-1)
    weight = chi0(dxy, r0) * chi0(dxz, r0) * chi0(dyz, r0)
    out = np.zeros(x.shape[:-1] + (3, 3))
    live = (weight > 0.0) & (dyz > 2.0)
    if np.any(live):
        xl, yl, zl = x[live], y[live], z[live]
        ex_y = _pair_dipole_excess(yl, zl, S)
        ex_z = _pair_dipole_excess(zl, yl, S)
        # D Psi = M0(x - y)(A_y - S) + M0(x - z)(A_z - S)
        strain = m0_apply(xl - yl, ex_y) + m0_apply(xl - zl, ex_z)
        out[live] = weight[live][:, None, None] * strain
    return out


def crude_bound_ratio(x, y, z, S, r0=R0_DEFAULT):
    """``|S_{y,z}(x)| / ((<x-y>^-3 + <x-z>^-3) <y-z>^-3)``, batched."""

    def bracket(v):
        return np.sqrt(1.0 + np.sum(np.asarray(v) ** 2, axis=-1))

    x, y, z = (np.asarray(v, dtype=float) for v in (x, y, z))
    val = np.linalg.norm(cutoff_kernel(x, y, z, S, r0), axis=(-2, -1))
    bound = (bracket(x - y) ** -3 + bracket(x - z) ** -3) * bracket(y - z) ** -3
    return val / bound


class PairTable:
    """``M_l`` tabulated on a log-spaced grid of separations along ``e3``.

    Arbitrary directions are obtained by rotation; ``r^3 M_l(r e3)`` is
    interpolated with cubic splines in ``log r``. Separations outside the
    grid are computed directly.
    """

    def __init__(self, r_min=2.05, r_max=400.0, n=241, values=None):
        self.r_min = float(r_min)
        self.r_max = float(r_max)
        self.radii = np.geomspace(self.r_min, self.r_max, int(n))
        if values is None:
            d = self.radii[:, None] * np.array([0.0, 0.0, 1.0])
            values = pair_tensor(d)
        self.values = np.asarray(values, dtype=float)
        scaled = self.values * self.radii[:, None, None] ** 3
        self._spline = CubicSpline(np.log(self.radii), scaled, axis=0)

    def axial(self, r):
        r = np.asarray(r, dtype=float)
        inside = (r >= self.r_min) & (r <= self.r_max)
        out = np.empty(r.shape + (5, 5))
        if np.any(inside):
            out[inside] = self._spline(np.log(r[inside])) / r[inside][:, None, None] ** 3
        if np.any(~inside):
            d = r[~inside][:, None] * np.array([0.0, 0.0, 1.0])
            out[~inside] = pair_tensor(d)
        return out

    def __call__(self, d):
        d = np.asarray(d, dtype=float)
        r = np.linalg.norm(d, axis=-1)
        flat = d.reshape(-1, 3)
        rot = rotation_action(rotation_to(flat))
        axial = self.axial(r.reshape(-1))
        out = np.einsum("nab,nbc,ndc->nad", rot, axial, rot)
        return out.reshape(d.shape[:-1] + (5, 5))

    def save(self, path):
        """Text cache: ``#`` header lines then one row ``r m00 m01 ... m44`` per radius."""
        with open(path, "w") as fh:
            fh.write("# dilute_viscosity pair table v1\n")
            fh.write("# quantity = M_l(r e3), basis = Sym3 trace-free orthonormal, row-major 5x5\n")
            fh.write(f"# r_min = {self.r_min!r}\n# r_max = {self.r_max!r}\n")
            fh.write(f"# n = {len(self.radii)}\n# grid = log\n")
            for r, block in zip(self.radii, self.values):
                fh.write(" ".join(repr(float(v)) for v in (r, *block.ravel())) + "\n")

    @classmethod
    def load(cls, path):
        header = {}
        rows = []
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if line.startswith("#"):
                    if "=" in line:
                        key, val = line[1:].split("=", 1)
                        header[key.strip()] = val.strip()
                elif line:
                    rows.append([float(v) for v in line.split()])
        data = np.array(rows)
        if data.shape[1] != 26 or header.get("grid") != "log":
            raise ValueError(f"{path}: not a pair table")
        return cls(
            float(header["r_min"]),
            float(header["r_max"]),
            int(header["n"]),
            values=data[:, 1:].reshape(-1, 5, 5),
        )


def m0_far_field(d):
    """Shorthand for :func:`m0_kernel` (leading term of ``M_l``)."""
    return m0_kernel(d)
