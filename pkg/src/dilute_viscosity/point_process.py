"""Poisson and Matern type-I hardcore point processes and pair statistics.

Random streams: a configuration with master seed ``s`` and ensemble index
``k`` uses ``PCG64(SeedSequence([s, k]))``; see :func:`member_seed`.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import lambertw

from ._parallel import ordered_map


def volume_fraction_to_intensity(phi):
    """Number density of unit spheres at volume fraction ``phi``: ``3 phi / 4 pi``."""
    return 3.0 * phi / (4.0 * np.pi)


def intensity_to_volume_fraction(intensity):
    return 4.0 * np.pi * intensity / 3.0


def member_seed(seed, index):
    """64-bit seed for ensemble member ``index`` of master ``seed``."""
    state = np.random.SeedSequence([int(seed), int(index)]).generate_state(2, np.uint32)
    return int(state[0]) | (int(state[1]) << 32)


def make_rng(seed):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))


@dataclass(frozen=True)
class Domain:
    """A centered ball of radius ``size`` or the cube ``[-size, size]^3``."""

    kind: str
    size: float

    def __post_init__(self):
        if self.kind not in ("ball", "box"):
            raise ValueError(f"unknown domain kind {self.kind!r}")
        if not self.size > 0:
            raise ValueError("domain size must be positive")

    @classmethod
    def ball(cls, radius):
        return cls("ball", float(radius))

    @classmethod
    def box(cls, half_width):
        return cls("box", float(half_width))

    @classmethod
    def for_spheres(cls, n):
        """The ball ``B(0, n^(1/3))`` of the finite-N problem."""
        return cls.ball(n ** (1.0 / 3.0))

    @property
    def volume(self):
        if self.kind == "ball":
            return 4.0 / 3.0 * np.pi * self.size**3
        return (2.0 * self.size) ** 3

    def dilate(self, r):
        return Domain(self.kind, self.size + r)

    def eroded_volume(self, r):
        s = self.size - r
        if s <= 0:
            return 0.0
        return Domain(self.kind, s).volume

    def boundary_distance(self, points):
        """Distance of each point to the boundary (negative outside)."""
        p = np.asarray(points, dtype=float).reshape(-1, 3)
        if self.kind == "ball":
            return self.size - np.linalg.norm(p, axis=1)
        return self.size - np.max(np.abs(p), axis=1)

    def contains(self, points):
        return self.boundary_distance(points) >= 0.0

    def sample_uniform(self, rng, n):
        if self.kind == "box":
            return rng.uniform(-self.size, self.size, size=(n, 3))
        direction = rng.standard_normal((n, 3))
        direction /= np.linalg.norm(direction, axis=1, keepdims=True)
        radius = self.size * rng.random(n) ** (1.0 / 3.0)
        return direction * radius[:, None]


@dataclass(frozen=True)
class PointConfiguration:
    centers: np.ndarray
    domain: Domain
    r0: float | None = None
    seed: int | None = None

    def __post_init__(self):
        c = np.asarray(self.centers, dtype=float).reshape(-1, 3)
        c.setflags(write=False)
        object.__setattr__(self, "centers", c)
        if len(c) and not np.all(self.domain.contains(c)):
            raise ValueError("configuration has centers outside its domain")

    def __len__(self):
        return len(self.centers)

    @property
    def hardcore_valid(self):
        return self.r0 is not None and check_h1(self, self.r0)[0]

    @property
    def volume_fraction(self):
        """Realized solid fraction ``n (4 pi / 3) / |domain|``."""
        return intensity_to_volume_fraction(len(self) / self.domain.volume)

    def with_centers(self, centers, r0=None):
        return PointConfiguration(centers, self.domain, self.r0 if r0 is None else r0, self.seed)


def poisson_sample(intensity, domain, seed):
    """Homogeneous Poisson process of the given intensity in ``domain``."""
    if not intensity > 0:
        raise ValueError("intensity must be positive")
    rng = make_rng(seed)
    n = rng.poisson(intensity * domain.volume)
    return PointConfiguration(domain.sample_uniform(rng, n), domain, None, seed)


def _close_pairs(centers, r):
    if len(centers) < 2:
        return np.empty((0, 2), dtype=int), np.empty(0)
    pairs = cKDTree(centers).query_pairs(r, output_type="ndarray")
    d = np.linalg.norm(centers[pairs[:, 0]] - centers[pairs[:, 1]], axis=1)
    return pairs, d


def matern1_thin(points, r0):
    """Delete every point that has another point at distance ``< r0``."""
    pairs, d = _close_pairs(points.centers, r0)
    pairs = pairs[d < r0]
    keep = np.ones(len(points), dtype=bool)
    keep[pairs.ravel()] = False
    return PointConfiguration(points.centers[keep], points.domain, float(r0), points.seed)


def matern1_sample(intensity, domain, r0, seed):
    """Matern-I process with parent intensity ``intensity``, observed in ``domain``.

    The parent Poisson process lives on ``domain`` dilated by ``r0`` so that
    thinning near the boundary sees the same neighborhood as in the bulk.
    """
    parent = poisson_sample(intensity, domain.dilate(r0), seed)
    thinned = matern1_thin(parent, r0)
    inside = domain.contains(thinned.centers)
    return PointConfiguration(thinned.centers[inside], domain, float(r0), seed)


def matern1_intensity(intensity, r0):
    """Retained intensity ``lambda exp(-lambda 4 pi r0^3 / 3)``."""
    return intensity * math.exp(-intensity * 4.0 / 3.0 * math.pi * r0**3)


def matern1_parent_intensity(target, r0):
    """Parent intensity giving retained intensity ``target`` (lower branch).

    Raises ``ValueError`` above the Matern-I maximum ``1 / (e V)``,
    ``V = 4 pi r0^3 / 3``.
    """
    v = 4.0 / 3.0 * math.pi * r0**3
    if target * v > 1.0 / math.e:
        raise ValueError(
            f"Matern-I cannot reach intensity {target:.4g} at r0 = {r0}: "
            f"maximum is {1.0 / (math.e * v):.4g}"
        )
    return float(-lambertw(-target * v, 0).real / v)


def matern1_pair_correlation(r, intensity, r0):
    """Exact Matern-I ``g2(r)``: 0 below ``r0``, ``exp(lambda V_cap(r))`` up to ``2 r0``, then 1."""
    r = np.asarray(r, dtype=float)
    lens = np.pi / 12.0 * (4.0 * r0 + r) * np.clip(2.0 * r0 - r, 0.0, None) ** 2
    return np.where(r < r0, 0.0, np.exp(intensity * lens))


def sample_ensemble(kind, intensity, domain, seed, n_configs, r0=None, threads=1):
    """``n_configs`` independent configurations, member ``k`` seeded by ``member_seed(seed, k)``."""
    if kind == "poisson":
        def one(k):
            return poisson_sample(intensity, domain, member_seed(seed, k))
    elif kind == "matern1":
        if r0 is None:
            raise ValueError("matern1 needs r0")
        def one(k):
            return matern1_sample(intensity, domain, r0, member_seed(seed, k))
    else:
        raise ValueError(f"unknown process {kind!r}")
    return ordered_map(one, range(int(n_configs)), threads)


def check_h1(config, r0):
    """``(ok, pairs)``: ``ok`` iff all pairwise distances are ``>= r0``.

    ``pairs`` lists offending ``(i, j, distance)`` triples. Neighbor search
    uses a k-d tree (expected ``O(n log n)``).
    """
    pairs, d = _close_pairs(config.centers, r0)
    bad = d < r0
    found = [(int(i), int(j), float(dist)) for (i, j), dist in zip(pairs[bad], d[bad])]
    return not found, found


@dataclass
class CorrelationEstimate:
    edges: np.ndarray
    g2: np.ndarray
    stderr: np.ndarray
    counts: np.ndarray
    n_configs: int
    intensity: float
    r0: float | None = None
    meta: dict = field(default_factory=dict)

    @property
    def centers(self):
        return 0.5 * (self.edges[1:] + self.edges[:-1])

    def rows(self):
        return [
            (float(c), float(g), float(s), int(n))
            for c, g, s, n in zip(self.centers, self.g2, self.stderr, self.counts)
        ]

    def to_csv(self, path, echo=None):
        with open(path, "w") as fh:
            for key, val in (echo or {}).items():
                fh.write(f"# {key} = {val}\n")
            fh.write("# bin_edges = " + " ".join(repr(float(e)) for e in self.edges) + "\n")
            fh.write("bin_center,g2,stderr,count\n")
            for c, g, s, n in self.rows():
                fh.write(f"{c!r},{g!r},{s!r},{n}\n")


def _pair_hist(config, edges):
    """Minus-sampling pair counts and reference counts for one configuration."""
    x = config.centers
    nb = len(edges) - 1
    bdist = config.domain.boundary_distance(x) if len(x) else np.empty(0)
    # reference points allowed in bin k: boundary distance > outer edge
    refs = np.array([np.count_nonzero(bdist > edges[k + 1]) for k in range(nb)], dtype=float)
    counts = np.zeros(nb)
    pairs, d = _close_pairs(x, edges[-1])
    if len(d):
        k = np.searchsorted(edges, d, side="right") - 1
        ok = (k >= 0) & (k < nb)
        k, pairs = k[ok], pairs[ok]
        outer = edges[k + 1]
        for side in (0, 1):
            hit = bdist[pairs[:, side]] > outer
            counts += np.bincount(k[hit], minlength=nb)
    return counts, refs, len(x), config.domain.volume


def estimate_g2(configs, edges, threads=1):
    """Pair correlation by minus sampling, pooled over an ensemble.

    For bin ``[a, b)`` only reference points farther than ``b`` from the
    boundary count, so every neighbor shell lies in the window. With ``M``
    configurations, ``g2 = sum(count) / (sum(refs) * lambda * shell volume)``
    and the standard error is the delta-method error of this ratio across
    configurations; for ``M = 1`` it is Poisson, ``g2 / sqrt(count)``.
    """
    configs = list(configs)
    if not configs:
        raise ValueError("empty ensemble")
    edges = np.asarray(edges, dtype=float)
    if edges.ndim != 1 or len(edges) < 2 or np.any(np.diff(edges) <= 0) or edges[0] < 0:
        raise ValueError("bin edges must be increasing and non-negative")
    parts = ordered_map(lambda c: _pair_hist(c, edges), configs, threads)
    counts = np.array([p[0] for p in parts])
    refs = np.array([p[1] for p in parts])
    n_pts = sum(p[2] for p in parts)
    vol = sum(p[3] for p in parts)
    lam = n_pts / vol
    shell = 4.0 / 3.0 * np.pi * (edges[1:] ** 3 - edges[:-1] ** 3)
    denom = refs * lam * shell
    tot_c = counts.sum(axis=0)
    tot_d = denom.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        g = np.where(tot_d > 0, tot_c / tot_d, np.nan)
        m = len(configs)
        if m > 1:
            resid = counts - g * denom
            var = m / (m - 1) * np.sum(resid**2, axis=0) / tot_d**2
            err = np.sqrt(var)
        else:
            err = np.where(tot_c > 0, g / np.sqrt(tot_c), 1.0 / tot_d)
    r0 = configs[0].r0
    if r0 is not None:
        below = edges[1:] <= r0
        g[below] = 0.0
    return CorrelationEstimate(edges, g, err, tot_c.astype(int), m, lam, r0)


def _equilateral_measure(a, b, order=48):
    """Lebesgue measure of ``{(y, z): |y|, |z|, |y - z| in [a, b)}``."""
    t, w = np.polynomial.legendre.leggauss(order)
    s = 0.5 * (b - a) * (t + 1.0) + a
    ws = 0.5 * (b - a) * w
    S, T = np.meshgrid(s, s, indexing="ij")
    lo = np.clip((S**2 + T**2 - b**2) / (2 * S * T), -1.0, 1.0)
    hi = np.clip((S**2 + T**2 - a**2) / (2 * S * T), -1.0, 1.0)
    inner = 2.0 * np.pi * T**2 * (hi - lo)
    return float(4.0 * np.pi * np.sum(ws[:, None] * ws[None, :] * S**2 * inner))


def estimate_g3_equilateral(configs, edges):
    """``g3`` on near-equilateral triangles with all sides in each bin.

    Minus sampling on the first vertex; normalized by ``lambda^3``.
    Returns ``(g3, count)`` arrays over bins.
    """
    configs = list(configs)
    if not configs:
        raise ValueError("empty ensemble")
    edges = np.asarray(edges, dtype=float)
    nb = len(edges) - 1
    counts = np.zeros(nb)
    refs = np.zeros(nb)
    n_pts = 0
    vol = 0.0
    for cfg in configs:
        x = cfg.centers
        n_pts += len(x)
        vol += cfg.domain.volume
        if len(x) < 3:
            continue
        bd = cfg.domain.boundary_distance(x)
        tree = cKDTree(x)
        for k in range(nb):
            a, b = edges[k], edges[k + 1]
            refs[k] += np.count_nonzero(bd > b)
            for i in np.nonzero(bd > b)[0]:
                nbr = [j for j in tree.query_ball_point(x[i], b) if j != i]
                nbr = [j for j in nbr if np.linalg.norm(x[j] - x[i]) >= a]
                for p in range(len(nbr)):
                    for q in range(len(nbr)):
                        if p != q:
                            dd = np.linalg.norm(x[nbr[p]] - x[nbr[q]])
                            counts[k] += a <= dd < b
    lam = n_pts / vol
    meas = np.array([_equilateral_measure(edges[k], edges[k + 1]) for k in range(nb)])
    with np.errstate(invalid="ignore", divide="ignore"):
        g3 = counts / (refs * lam**2 * meas)
    return g3, counts.astype(int)


@dataclass
class DecorrelationReport:
    envelope: str
    params: dict
    lq_partial_sums: np.ndarray
    lq_converges: bool
    below_noise: bool
    support_radius: float | None
    message: str = ""


def check_decorrelation(est, envelope="compact", q=2.0, r_min=None, noise_sigma=3.0):
    """Fit the tail of ``|g2 - 1|`` against an envelope family.

    envelope: ``"compact"``, ``"exponential"`` (``A exp(-r / xi)``) or
    ``"power"`` (``A r^-p``). Bins with ``center < r_min`` are ignored
    (default: beyond the hardcore radius). The L^q proxy is the running sum
    of ``e^q r^2 dr`` with ``e`` the excess of ``|g2 - 1|`` over
    ``noise_sigma`` standard errors; it is declared convergent when the last
    half of the tail adds less than 10% of the total (or the tail is pure
    noise). For the power family convergence is ``p q > 3``.
    Problems are reported in ``message``, never raised.
    """
    r = est.centers
    dr = np.diff(est.edges)
    if r_min is None:
        r_min = est.r0 if est.r0 is not None else 0.0
    tail = (r >= r_min) & np.isfinite(est.g2)
    dev = np.abs(est.g2 - 1.0)
    sig = np.where(est.stderr > 0, est.stderr, np.inf)
    significant = tail & (dev > noise_sigma * sig)
    excess = np.clip(dev - noise_sigma * np.where(np.isfinite(sig), sig, 0.0), 0.0, None)
    partial = np.cumsum(np.where(tail, excess**q * r**2 * dr, 0.0))
    report = DecorrelationReport(envelope, {}, partial, False, not significant.any(), None)
    if tail.sum() < 4:
        report.message = "insufficient tail data"
        return report
    if significant.any():
        report.support_radius = float(est.edges[1:][significant].max())
    idx = np.nonzero(tail)[0]
    half = idx[len(idx) // 2]
    total = partial[idx[-1]]
    late = total - partial[half]
    report.lq_converges = bool(report.below_noise or (total > 0 and late < 0.1 * total))

    if envelope == "compact":
        beyond = tail & (r > (report.support_radius or r_min))
        report.params = {"support_radius": report.support_radius, "bins_beyond": int(beyond.sum())}
        if beyond.sum() < 3:
            report.message = "too few bins beyond the fitted support"
        return report
    if envelope not in ("exponential", "power"):
        raise ValueError(f"unknown envelope {envelope!r}")
    use = significant & (dev > 0)
    if use.sum() < 3:
        report.message = "fewer than 3 significant tail bins; envelope not fitted"
        return report
    y = np.log(dev[use])
    w = (dev[use] / sig[use]) ** 2
    xcol = r[use] if envelope == "exponential" else np.log(r[use])
    A = np.stack([np.ones_like(xcol), xcol], axis=1)
    coef = np.linalg.lstsq(A * np.sqrt(w)[:, None], y * np.sqrt(w), rcond=None)[0]
    if envelope == "exponential":
        report.params = {"amplitude": float(np.exp(coef[0])), "length": float(-1.0 / coef[1])}
        report.lq_converges = report.lq_converges or coef[1] < 0
    else:
        p = float(-coef[1])
        report.params = {"amplitude": float(np.exp(coef[0])), "exponent": p}
        report.lq_converges = bool(p * q > 3.0)
    return report


def write_config(config, path):
    """Text export: ``# key = value`` header lines then ``x y z`` per center."""
    with open(path, "w") as fh:
        fh.write(f"# domain = {config.domain.kind}\n")
        fh.write(f"# L = {config.domain.size!r}\n")
        fh.write(f"# R0 = {config.r0!r}\n")
        fh.write(f"# seed = {config.seed!r}\n")
        for x, y, z in config.centers:
            fh.write(f"{float(x)!r} {float(y)!r} {float(z)!r}\n")


def read_config(path):
    header = {}
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line.startswith("#"):
                key, _, val = line[1:].partition("=")
                header[key.strip()] = val.strip()
            elif line:
                rows.append([float(v) for v in line.split()])
    domain = Domain(header.get("domain", "ball"), float(header["L"]))
    r0 = None if header.get("R0", "None") == "None" else float(header["R0"])
    seed = None if header.get("seed", "None") == "None" else int(header["seed"])
    return PointConfiguration(np.array(rows).reshape(-1, 3), domain, r0, seed)
