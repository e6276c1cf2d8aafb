"""Effective-viscosity coefficients of a dilute suspension of unit spheres.

Normalization. For a point process of unit spheres with number density
``rho1 = 3 phi / 4 pi`` and pair density ``rho2 = rho1^2 g2``, the viscosity
quadratic form expands as ``|S|^2 + (5/2) phi |S|^2 + phi^2 mu2 S:S``.
The pair integral is evaluated on the ball ``B_L``, ``L = N^(1/3)``, through
its set covariance ``gamma_N(r) = 1 - 3 r / 4L + r^3 / 16 L^3`` (``r < 2L``)::

    (1 / 2|B_L|) int_{B_L} int_{B_L} f(x - y) dx dy = (1/2) int f(d) gamma_N(d) dd

``mu2 = (3 / 4 pi)^2 (I + J + K)`` with

* ``I``: mean-field part. The degree -3 kernel ``M`` has zero mean on every
  sphere, so its radial principal-value integral vanishes; what remains is
  the point mass at the origin carried by the distributional gradient of the
  dipole field, ``(1/2)(20 pi / 3)(4 pi / 3) Id``. The shell integral of
  ``chi0 M`` is computed anyway and reported.
* ``J = (1/2) int chi0 (I_pair - (20 pi / 3) M) gamma_N``: near-field
  correction, absolutely convergent.
* ``K = (1/2) int chi0 I_pair (g2 - 1) gamma_N``: correlation part.

``I_pair(d) = (20 pi / 3) M_l(d)`` is the surface functional of the pair
interaction field, extended by ``(20 pi / 3) M(d)`` inside the hardcore
radius (where ``g2 = 0`` and the pair never occurs).
"""

import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from ._parallel import ordered_map
from .point_process import (
    CorrelationEstimate,
    Domain,
    intensity_to_volume_fraction,
    matern1_pair_correlation,
    matern1_parent_intensity,
    matern1_sample,
    member_seed,
    volume_fraction_to_intensity,
)
from .single_sphere import (
    EINSTEIN_FUNCTIONAL,
    ball_average_kernel,
    m0_apply,
    m_homogeneous_kernel,
    surface_functional,
)
from .tensor_core import (
    IDENTITY5,
    as_strain,
    ball_quadrature,
    from_coords,
    rotation_action,
    rotation_to,
    sphere_quadrature,
    to_coords,
    visc_quadratic,
)
from .two_sphere import (
    R0_DEFAULT,
    FlowExpansion,
    OverlapError,
    PairTable,
    chi0,
    pair_tensor,
    two_sphere_solve,
)

SCHEMA_VERSION = 1
PAIR_NORMALIZATION = (3.0 / (4.0 * np.pi)) ** 2
MEAN_FIELD = 0.5 * EINSTEIN_FUNCTIONAL * (4.0 * np.pi / 3.0)

_TABLES = {}


def default_pair_table():
    if "default" not in _TABLES:
        _TABLES["default"] = PairTable()
    return _TABLES["default"]


# ---------------------------------------------------------------------------
# pair functional


def pair_functional(y, z, S, mode="a", radius=None, quad=None, r0=R0_DEFAULT, tol=1e-13):
    """Surface functional of the pair interaction field about sphere ``y``.

    mode ``"a"``: quadrature of ``(sigma n) . S(x - y) - 2 u . S n`` on the
    sphere of radius ``radius`` about ``y`` (default midway in
    ``((2 + r0)/4, r0/2)``), using the reflection solution.
    mode ``"b"``: leading-order closed form ``(20 pi / 3) M0(y - z) S : S``.

    Returns ``(value, converged)``; in mode ``"b"`` ``converged`` is True.
    """
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    S = as_strain(S)
    if np.linalg.norm(y - z) <= 2.0:
        raise OverlapError("pair_functional needs |y - z| > 2")
    if mode == "b":
        val = EINSTEIN_FUNCTIONAL * float(np.sum(m0_apply(y - z, S) * S))
        return val, True
    if mode != "a":
        raise ValueError(f"unknown mode {mode!r}")
    if radius is None:
        radius = 0.5 * ((2.0 + r0) / 4.0 + r0 / 2.0)
    sol = two_sphere_solve(y, z, S, tol=tol)
    field_ = sol.interaction()
    val = surface_functional(
        field_.velocity, field_.strain, field_.pressure, y, S, radius=radius,
        quad=quad or sphere_quadrature(24),
    )
    return float(val), sol.converged


def symmetrized_pair_functional(y, z, S, **kw):
    a, ca = pair_functional(y, z, S, **kw)
    b, cb = pair_functional(z, y, S, **kw)
    return 0.5 * (a + b), ca and cb


# ---------------------------------------------------------------------------
# mu2 quadrature


def ball_covariance(r, L):
    """``|B_L cap (B_L + d)| / |B_L|`` for ``|d| = r``."""
    s = np.asarray(r, dtype=float) / L
    return np.where(s < 2.0, 1.0 - 0.75 * s + s**3 / 16.0, 0.0)


class _AngularAverage:
    """``T -> int_{S^2} R(n) T R(n)^T dn`` for axial tensors ``T``."""

    def __init__(self, order=6):
        quad = sphere_quadrature(order)
        self.rot = rotation_action(rotation_to(quad.nodes))
        self.weights = quad.weights

    def __call__(self, T):
        return np.einsum("q,qab,...bc,qdc->...ad", self.weights, self.rot, T, self.rot)


_E3 = np.array([0.0, 0.0, 1.0])


def _axial_pair(r, r0, table):
    """``I_pair(r e3)`` as ``(n, 5, 5)``."""
    r = np.atleast_1d(np.asarray(r, dtype=float))
    out = EINSTEIN_FUNCTIONAL * m_homogeneous_kernel(r[:, None] * _E3)
    far = r >= r0
    if np.any(far):
        vals = table.axial(r[far]) if table is not None else pair_tensor(r[far, None] * _E3)
        out[far] = EINSTEIN_FUNCTIONAL * vals
    return out


def _axial_homogeneous(r):
    r = np.atleast_1d(np.asarray(r, dtype=float))
    return EINSTEIN_FUNCTIONAL * m_homogeneous_kernel(r[:, None] * _E3)


def _panels(a, b, breaks, ratio):
    pts = sorted({a, b, *[x for x in breaks if a < x < b]})
    edges = [pts[0]]
    for lo, hi in zip(pts[:-1], pts[1:]):
        n = max(1, math.ceil(math.log(hi / lo) / math.log(ratio)))
        edges.extend(np.geomspace(lo, hi, n + 1)[1:])
    return np.array(edges)


def _radial_integral(f, a, b, breaks=(), order=8, tol=1e-3, scale=1.0, max_levels=8):
    """``int_a^b f(r) r^2 dr`` for matrix-valued ``f`` by refined Gauss panels.

    Returns ``(value, error_estimate, converged)``; the error is the change
    under halving the panel ratio (in ``log r``).
    """
    t, w = np.polynomial.legendre.leggauss(order)

    def rule(ratio):
        e = _panels(a, b, breaks, ratio)
        lo, hi = e[:-1, None], e[1:, None]
        r = (0.5 * (hi - lo) * (t + 1.0) + lo).ravel()
        wr = (0.5 * (hi - lo) * w).ravel() * r**2
        return np.tensordot(wr, f(r), axes=(0, 0))

    ratio = 2.0
    prev = rule(ratio)
    err = np.inf
    for _ in range(max_levels):
        ratio = math.sqrt(ratio)
        cur = rule(ratio)
        err = float(np.max(np.abs(cur - prev)))
        prev = cur
        if err <= tol * scale:
            return cur, err, True
    return prev, err, False


@dataclass
class Mu2Result:
    """``mu2`` (or ``nu2``) as a 5x5 quadratic form with its I/J/K breakdown."""

    value: np.ndarray
    breakdown: dict
    errors: dict
    N: float
    r0: float
    functional: str = "mu2"
    converged: bool = True
    meta: dict = field(default_factory=dict)

    @property
    def error(self):
        return float(sum(self.errors.values()))

    def quadratic(self, S):
        return float(visc_quadratic(self.value, as_strain(S)))

    def to_dict(self):
        return {
            "functional": self.functional,
            "N": self.N,
            "r0": self.r0,
            "value": self.value.tolist(),
            "breakdown": {k: v.tolist() for k, v in self.breakdown.items()},
            "errors": dict(self.errors),
            "converged": self.converged,
            "meta": self.meta,
        }

    def csv_rows(self):
        """Long-format rows ``(quantity, i, j, value, error)``."""
        rows = []
        parts = [(self.functional, self.value, self.error)]
        parts += [(f"{self.functional}.{k}", v, self.errors.get(k, 0.0))
                  for k, v in self.breakdown.items()]
        for name, mat, err in parts:
            for i in range(5):
                for j in range(5):
                    rows.append((name, i, j, float(mat[i, j]), float(err)))
        return rows


def _g2_callable(g2, r0):
    """Normalize a g2 input to ``(callable, breakpoints, binned_estimate_or_None)``."""
    if isinstance(g2, CorrelationEstimate):
        est = g2
        if np.any(~np.isfinite(est.g2)):
            raise ValueError("g2 estimate has undefined bins")
        edges, vals = est.edges, est.g2

        def f(r):
            k = np.searchsorted(edges, r, side="right") - 1
            inside = (k >= 0) & (k < len(vals))
            return np.where(inside, vals[np.clip(k, 0, len(vals) - 1)], 1.0)

        return f, tuple(edges), est
    if callable(g2):
        return g2, (), None
    raise TypeError("g2 must be a callable of r or a CorrelationEstimate")


def hardcore_uniform_g2(r0):
    """``g2 = 0`` below ``r0`` and 1 above."""
    return lambda r: np.where(np.asarray(r) < r0, 0.0, 1.0)


def hardcore_exponential_g2(r0, amplitude=0.5, length=0.5):
    """``g2 = 1 + amplitude exp(-(r - r0) / length)`` above ``r0``, 0 below."""
    def g(r):
        r = np.asarray(r, dtype=float)
        return np.where(r < r0, 0.0, 1.0 + amplitude * np.exp(-(r - r0) / length))
    return g


def matern1_g2(intensity, r0):
    return lambda r: matern1_pair_correlation(r, intensity, r0)


def mu2_evaluate(g2, N, r0=R0_DEFAULT, functional="mu2", tol=1e-3, order=8,
                 angular_order=6, table=None, check_hardcore=True):
    """Assemble ``mu2`` (``functional="mu2"``) or ``nu2`` (``"nu2"``).

    ``g2`` is a callable of the radius or a binned :class:`CorrelationEstimate`
    (piecewise constant, 1 beyond the last bin). Bin standard errors are
    propagated linearly into the ``K`` error. ``g2`` must vanish below
    ``r0``; set ``check_hardcore=False`` to skip that check.
    """
    if functional not in ("mu2", "nu2"):
        raise ValueError(f"unknown functional {functional!r}")
    t0 = time.perf_counter()
    g2f, gbreaks, est = _g2_callable(g2, r0)
    inner = (2.0 + r0) / 4.0
    if check_hardcore:
        probe = np.linspace(0.0, r0, 64, endpoint=False)
        if np.any(np.abs(g2f(probe)) > 0):
            raise ValueError("g2 must vanish below the hardcore radius r0")
    L = float(N) ** (1.0 / 3.0)
    outer = 2.0 * L
    if outer <= r0:
        raise ValueError("N too small: the domain does not contain a pair at distance r0")
    if table is None and functional == "mu2":
        table = default_pair_table()
    ang = _AngularAverage(angular_order)
    scale = MEAN_FIELD
    breaks = (r0, 2.0 * r0, *gbreaks)

    if functional == "mu2":
        def pair(r):
            return _axial_pair(r, r0, table)
    else:
        pair = _axial_homogeneous

    def f_shell(r):
        return 0.5 * ang(chi0(r, r0)[:, None, None] * _axial_homogeneous(r)) * ball_covariance(r, L)[:, None, None]

    def f_near(r):
        d = pair(r) - _axial_homogeneous(r)
        return 0.5 * ang(chi0(r, r0)[:, None, None] * d) * ball_covariance(r, L)[:, None, None]

    def f_corr(r):
        w = chi0(r, r0) * (g2f(r) - 1.0) * ball_covariance(r, L)
        return 0.5 * ang(w[:, None, None] * pair(r))

    shells, e_shell, c1 = _radial_integral(f_shell, inner, outer, breaks, order, tol, scale)
    if functional == "mu2":
        near, e_near, c2 = _radial_integral(f_near, r0, outer, breaks, order, tol, scale)
    else:
        near, e_near, c2 = np.zeros((5, 5)), 0.0, True
    corr, e_corr, c3 = _radial_integral(f_corr, inner, outer, breaks, order, tol, scale)

    stat = 0.0
    if est is not None:
        # linear propagation of independent bin errors
        var = np.zeros((5, 5))
        for a, b, s in zip(est.edges[:-1], est.edges[1:], est.stderr):
            if b <= inner or a >= outer or not s > 0:
                continue

            def f_bin(r):
                w = chi0(r, r0) * ball_covariance(r, L)
                return 0.5 * ang(w[:, None, None] * pair(r))

            q, _, _ = _radial_integral(f_bin, max(a, inner), min(b, outer), (), order, tol, scale)
            var += (s * q) ** 2
        stat = float(np.sqrt(var.max()))

    mean_field = MEAN_FIELD * IDENTITY5 + shells
    parts = {
        "mean_field": PAIR_NORMALIZATION * mean_field,
        "near_field": PAIR_NORMALIZATION * near,
        "correlation": PAIR_NORMALIZATION * corr,
    }
    value = parts["mean_field"] + parts["near_field"] + parts["correlation"]
    value = 0.5 * (value + value.T)
    errors = {
        "mean_field": PAIR_NORMALIZATION * e_shell,
        "near_field": PAIR_NORMALIZATION * e_near,
        "correlation": PAIR_NORMALIZATION * (e_corr + stat),
    }
    return Mu2Result(
        value=value,
        breakdown=parts,
        errors=errors,
        N=float(N),
        r0=float(r0),
        functional=functional,
        converged=bool(c1 and c2 and c3),
        meta={
            "tol": tol,
            "radial_order": order,
            "angular_order": angular_order,
            "L": L,
            "runtime_s": time.perf_counter() - t0,
            "pv_shell_term": shells.tolist(),
            "correlation_stat_error": PAIR_NORMALIZATION * stat,
        },
    )


def nu2_evaluate(g2, N, r0=R0_DEFAULT, **kw):
    """Mean-field coefficient: :func:`mu2_evaluate` with the kernel-composition functional."""
    return mu2_evaluate(g2, N, r0=r0, functional="nu2", **kw)


# ---------------------------------------------------------------------------
# N-sphere dipole systems


def _separations(centers, floor=2.0):
    d = centers[:, None, :] - centers[None, :, :]
    dist = np.linalg.norm(d, axis=-1)
    n = len(centers)
    iu = np.triu_indices(n, 1)
    bad = [(int(i), int(j), float(dist[i, j])) for i, j in zip(*iu) if dist[i, j] <= floor]
    if bad:
        raise OverlapError(f"pairs below separation floor {floor}: {bad[:10]}")
    return d


def _pair_kernels(centers, kernel):
    """``(n, n, 5, 5)`` array of ``kernel(x_i - x_j)``, zero on the diagonal."""
    n = len(centers)
    d = _separations(centers)
    out = np.zeros((n, n, 5, 5))
    if n > 1:
        off = ~np.eye(n, dtype=bool)
        out[off] = kernel(d[off])
    return out


def _pair_tensors(centers, table=None):
    if table is None:
        return _pair_kernels(centers, pair_tensor)
    return _pair_kernels(centers, table)


@dataclass(frozen=True)
class ClusterExpansion:
    """Pair-cluster dipoles ``E_k = -S - sum_l M_l(x_k - x_l) S``."""

    expansion: FlowExpansion
    pair_excess: np.ndarray  # (n, n, 5): M_l(x_k - x_l) S in coordinates

    @property
    def dipoles(self):
        return self.expansion.dipoles


def cluster_expansion_build(config, S, table=None):
    """Superpose single-sphere and pairwise interaction dipoles.

    Sphere ``k`` carries ``-S + sum_{l != k} (E_k^{kl} + S)`` where
    ``E_k^{kl}`` is its dipole in the converged two-sphere problem with
    ``l``. Raises :class:`OverlapError` listing pairs at distance ``<= 2``.
    """
    S = as_strain(S)
    centers = np.asarray(getattr(config, "centers", config), dtype=float).reshape(-1, 3)
    T = _pair_tensors(centers, table)
    excess = np.einsum("klab,b->kla", T, to_coords(S))
    A = to_coords(S) + excess.sum(axis=1)
    return ClusterExpansion(FlowExpansion(S, centers, -from_coords(A)), excess)


@dataclass(frozen=True)
class NBodySolution:
    expansion: FlowExpansion
    iterations: int
    converged: bool
    residual: float


def nbody_solve(config, S, tol=1e-13, max_iter=1000):
    """Fully iterated dipole reflections for all spheres (Jacobi sweeps).

    Solves ``A_i = S + sum_{j != i} W(x_i - x_j) A_j`` for the ambient strains
    ``A_i = -E_i``, with ``W`` the ball-averaged dipole kernel. Divergence
    (increments growing three sweeps in a row) is flagged, not raised.
    """
    S = as_strain(S)
    centers = np.asarray(getattr(config, "centers", config), dtype=float).reshape(-1, 3)
    s = to_coords(S)
    n = len(centers)
    W = _pair_kernels(centers, ball_average_kernel)
    A = np.tile(s, (n, 1))
    scale = max(np.linalg.norm(s), 1e-300)
    prev_inc = np.inf
    growth = 0
    inc = 0.0
    converged = n <= 1
    k = 0
    while not converged and k < max_iter:
        new = s + np.einsum("ijab,jb->ia", W, A)
        inc = float(np.max(np.linalg.norm(new - A, axis=1))) / scale
        A = new
        k += 1
        growth = growth + 1 if inc > prev_inc else 0
        prev_inc = inc
        if growth >= 3 or not np.all(np.isfinite(A)):
            break
        converged = inc < tol
    return NBodySolution(FlowExpansion(S, centers, -from_coords(A)), k, bool(converged), inc)


def cluster_residual(config, S, table=None):
    """Per-sphere self-consistency residual of the pair-cluster dipoles.

    ``|S + sum_j W(x_i - x_j) A_j - A_i| / |S|`` with ``A = -E``; zero for
    one or two spheres, and of triplet order ``d^-6`` otherwise.
    """
    S = as_strain(S)
    cl = cluster_expansion_build(config, S, table)
    centers = cl.expansion.centers
    A = to_coords(-cl.dipoles)
    W = _pair_kernels(centers, ball_average_kernel)
    r = to_coords(S) + np.einsum("ijab,jb->ia", W, A) - A
    return np.linalg.norm(r, axis=1) / np.linalg.norm(S)


def triplet_scale(config, S):
    """Leading triplet term ``|sum_j W_ij sum_{k != i, j} W_jk S|`` per sphere."""
    S = as_strain(S)
    centers = np.asarray(getattr(config, "centers", config), dtype=float).reshape(-1, 3)
    W = _pair_kernels(centers, ball_average_kernel)
    s = to_coords(S)
    WS = np.einsum("jkab,b->jka", W, s)  # W_jk S
    n = len(centers)
    out = np.zeros((n, 5))
    for i in range(n):
        inner = WS.sum(axis=1) - WS[:, i]  # sum over k != i (and k != j by zero diagonal)
        out[i] = np.einsum("jab,jb->a", W[i], inner)
    return np.linalg.norm(out, axis=1) / np.linalg.norm(S)


# ---------------------------------------------------------------------------
# finite-N functional


def container_volume(config):
    """Volume of the container ``B_L``; centers live in ``B_{L-1}``."""
    return config.domain.dilate(1.0).volume


def finite_n_viscosity(config, S, method="quadrature", quad_order=12, tol=1e-13,
                       max_iter=1000, volume=None):
    """``|S|^2 + (1 / 2|B_L|) sum_i int_{dB_i} (sigma n - 2u) . S n``.

    The field is the fully iterated N-body dipole solution. With
    ``method="quadrature"`` every sphere surface is integrated numerically;
    ``method="dipole"`` uses the closed form ``(20 pi / 3) A_i : S``
    (fields regular inside ``B_i`` contribute nothing).

    Returns ``(value, solution)``; ``solution.converged`` flags divergence.
    """
    S = as_strain(S)
    sol = nbody_solve(config, S, tol=tol, max_iter=max_iter)
    if volume is None:
        volume = container_volume(config)
    ex = sol.expansion
    if method == "dipole":
        total = EINSTEIN_FUNCTIONAL * float(np.sum(-ex.dipoles * S))
    elif method == "quadrature":
        quad = sphere_quadrature(quad_order)
        total = 0.0
        for c in ex.centers:
            total += surface_functional(ex.velocity, ex.strain, ex.pressure, c, S, quad=quad)
    else:
        raise ValueError(f"unknown method {method!r}")
    return float(np.sum(S * S)) + total / (2.0 * volume), sol


@dataclass
class FiniteNResult:
    phi: float
    phi_realized: float
    L: float
    values: np.ndarray
    phis: np.ndarray
    counts: np.ndarray
    diverged: int
    below_background: int

    @property
    def mean(self):
        return float(np.mean(self.values))

    @property
    def stderr(self):
        n = len(self.values)
        return float(np.std(self.values, ddof=1) / np.sqrt(n)) if n > 1 else float("nan")


def sample_spheres(phi, L, r0, seed, index):
    """Matern-I centers in ``B_{L-1}`` at target volume fraction ``phi`` of ``B_L``.

    The retained intensity is ``rho1 = 3 phi / 4 pi`` (bulk), so the
    realized fraction of ``B_L`` is slightly smaller.
    """
    lam = matern1_parent_intensity(volume_fraction_to_intensity(phi), r0)
    return matern1_sample(lam, Domain.ball(L - 1.0), r0, member_seed(seed, index))


def finite_n_study(phis, L, S, r0=R0_DEFAULT, n_configs=20, seed=0, method="quadrature",
                   quad_order=12, threads=1):
    """Ensemble means of :func:`finite_n_viscosity` over a grid of ``phi``.

    Member ``k`` at grid index ``m`` uses seed stream ``(seed + m, k)``.
    """
    S = as_strain(S)
    s2 = float(np.sum(S * S))
    out = []
    for m, phi in enumerate(phis):
        def one(k, phi=phi, m=m):
            cfg = sample_spheres(phi, L, r0, seed + m, k)
            val, sol = finite_n_viscosity(cfg, S, method=method, quad_order=quad_order)
            vol = container_volume(cfg)
            return val, len(cfg) * 4.0 * np.pi / 3.0 / vol, len(cfg), sol.converged

        res = ordered_map(one, range(n_configs), threads)
        vals = np.array([r[0] for r in res])
        ph = np.array([r[1] for r in res])
        out.append(
            FiniteNResult(
                phi=float(phi),
                phi_realized=float(ph.mean()),
                L=float(L),
                values=vals,
                phis=ph,
                counts=np.array([r[2] for r in res]),
                diverged=sum(not r[3] for r in res),
                below_background=int(np.sum(vals < s2 - 1e-12)),
            )
        )
    return out


def einstein_slope(results, S):
    """Least-squares slope of ``(value - |S|^2) / |S|^2`` against realized ``phi``.

    Pools all configurations; returns ``(slope, stderr)``.
    """
    s2 = float(np.sum(np.asarray(S) ** 2))
    x = np.concatenate([r.phis for r in results])
    y = np.concatenate([r.values for r in results]) / s2 - 1.0
    A = np.stack([np.ones_like(x), x], axis=1)
    coef, res, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    dof = max(len(x) - 2, 1)
    cov = np.linalg.inv(A.T @ A) * (resid @ resid) / dof
    return float(coef[1]), float(np.sqrt(cov[1, 1]))


# ---------------------------------------------------------------------------
# residual diagnostics


def residual_proxies(config, S, ball_order=4, table=None):
    """``(u_err proxy, Phi-sum proxy)`` for one configuration, divided by ``|B|``.

    u_err: ``sum_i int_{B_i} |sum_{k != i} M0(x - x_k) D_k^(i)|^2`` with
    ``D_k^(i) = sum_{l != k, i} M_l(x_k - x_l) S`` the pair-interaction dipole
    excess of sphere ``k`` from pairs not involving ``i`` (triplet strain seen
    by sphere ``i``).

    Phi-sum: ``sum_i int_{B_i} |sum_{k != i} M0(x - x_k) S|^2``.
    """
    S = as_strain(S)
    centers = np.asarray(config.centers, dtype=float)
    n = len(centers)
    vol = config.domain.dilate(1.0).volume
    if n < 2:
        return 0.0, 0.0
    cl = cluster_expansion_build(centers, S, table)
    excess = cl.pair_excess  # (k, l, 5)
    total = excess.sum(axis=1)
    nodes, weights = ball_quadrature(ball_order)
    u_err = 0.0
    phi_sum = 0.0
    for i in range(n):
        others = np.delete(np.arange(n), i)
        D = from_coords(total[others] - excess[others, i])  # (n-1, 3, 3)
        pts = centers[i] + nodes  # (q, 3)
        rel = pts[:, None, :] - centers[others][None]
        strain_err = m0_apply(rel, D[None]).sum(axis=1)
        strain_phi = m0_apply(rel, S).sum(axis=1)
        u_err += float(weights @ np.sum(strain_err**2, axis=(1, 2)))
        phi_sum += float(weights @ np.sum(strain_phi**2, axis=(1, 2)))
    return u_err / vol, phi_sum / vol


@dataclass
class ResidualReport:
    phis: np.ndarray
    u_err: np.ndarray
    u_err_stderr: np.ndarray
    phi_sum: np.ndarray
    phi_sum_stderr: np.ndarray
    mean_counts: np.ndarray
    u_err_slope: float
    phi_sum_slope: float


def _loglog_slope(x, y):
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def residual_diagnostics(phis, S, n_spheres=200, n_configs=50, r0=2.05, seed=0,
                         ball_order=4, threads=1):
    """Scaling of the residual proxies with ``phi`` on Matern-I ensembles.

    For each ``phi`` the container radius is chosen so that about
    ``n_spheres`` spheres are present. Slopes are fitted in log-log against
    the realized ensemble-mean volume fraction.
    """
    phis = np.asarray(phis, dtype=float)
    if len(phis) < 3:
        raise ValueError("residual_diagnostics needs at least 3 values of phi")
    S = as_strain(S)
    rows = []
    for m, phi in enumerate(phis):
        # expected count in B_{L-1} is phi (L - 1)^3
        L = 1.0 + (n_spheres / phi) ** (1.0 / 3.0)

        def one(k, phi=phi, m=m, L=L):
            cfg = sample_spheres(phi, L, r0, seed + m, k)
            u, p = residual_proxies(cfg, S, ball_order)
            return u, p, len(cfg) * 4.0 * np.pi / 3.0 / container_volume(cfg), len(cfg)

        res = np.array(ordered_map(one, range(n_configs), threads))
        rows.append(res)
    u = np.array([r[:, 0].mean() for r in rows])
    p = np.array([r[:, 1].mean() for r in rows])
    ph = np.array([r[:, 2].mean() for r in rows])
    se = lambda v: np.std(v, ddof=1) / np.sqrt(len(v))  # noqa: E731
    return ResidualReport(
        phis=ph,
        u_err=u,
        u_err_stderr=np.array([se(r[:, 0]) for r in rows]),
        phi_sum=p,
        phi_sum_stderr=np.array([se(r[:, 1]) for r in rows]),
        mean_counts=np.array([r[:, 3].mean() for r in rows]),
        u_err_slope=_loglog_slope(ph, u),
        phi_sum_slope=_loglog_slope(ph, p),
    )


# ---------------------------------------------------------------------------
# export


def write_long_csv(path, rows, header=("quantity", "i", "j", "value", "error"), echo=None):
    """Long-format CSV with ``# key = value`` echo lines; floats via ``repr``."""
    with open(path, "w") as fh:
        for key, val in (echo or {}).items():
            fh.write(f"# {key} = {val}\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(repr(v) if isinstance(v, float) else str(v) for v in row) + "\n")


def write_json(path, payload, config=None):
    doc = {"schema_version": SCHEMA_VERSION, "config": config or {}, **payload}
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


__all__ = [
    "Mu2Result",
    "FiniteNResult",
    "ResidualReport",
    "ClusterExpansion",
    "NBodySolution",
    "pair_functional",
    "symmetrized_pair_functional",
    "ball_covariance",
    "mu2_evaluate",
    "nu2_evaluate",
    "hardcore_uniform_g2",
    "hardcore_exponential_g2",
    "matern1_g2",
    "cluster_expansion_build",
    "cluster_residual",
    "triplet_scale",
    "nbody_solve",
    "finite_n_viscosity",
    "finite_n_study",
    "einstein_slope",
    "sample_spheres",
    "residual_proxies",
    "residual_diagnostics",
    "write_long_csv",
    "write_json",
    "intensity_to_volume_fraction",
]
