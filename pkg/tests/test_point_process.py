import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dilute_viscosity.point_process import (
    CorrelationEstimate,
    Domain,
    PointConfiguration,
    check_decorrelation,
    check_h1,
    estimate_g2,
    estimate_g3_equilateral,
    intensity_to_volume_fraction,
    matern1_intensity,
    matern1_pair_correlation,
    matern1_parent_intensity,
    matern1_sample,
    matern1_thin,
    member_seed,
    poisson_sample,
    read_config,
    sample_ensemble,
    volume_fraction_to_intensity,
    write_config,
)


def brute_thin(x, r0):
    d = np.linalg.norm(x[:, None] - x[None], axis=-1)
    np.fill_diagonal(d, np.inf)
    return x[d.min(axis=1) >= r0] if len(x) > 1 else x


def pair_retention_oracle(r, lam, r0, trials, rng):
    """Monte Carlo g2 of Matern-I at distance r from retention frequencies.

    Two marked points at distance r sit in a Poisson(lam) background on the
    box [-a, a]^3 that contains both exclusion balls. g2 = P(both kept) / p^2
    with p = P(one kept), all frequencies from the same simulation.
    """
    a = r / 2 + r0 + 0.1
    vol = (2 * a) ** 3
    p1 = np.array([-r / 2, 0, 0])
    p2 = np.array([r / 2, 0, 0])
    both = single = 0
    for _ in range(trials):
        n = rng.poisson(lam * vol)
        pts = rng.uniform(-a, a, (n, 3))
        k1 = not np.any(np.linalg.norm(pts - p1, axis=1) < r0)
        k2 = not np.any(np.linalg.norm(pts - p2, axis=1) < r0)
        both += k1 and k2
        single += k1
    p = single / trials
    pb = both / trials
    g = pb / p**2
    # delta method, treating the two frequencies as independent (conservative)
    err = g * math.sqrt((1 - pb) / (pb * trials) + 4 * (1 - p) / (p * trials))
    return g, err


def test_phi_intensity_roundtrip():
    assert np.isclose(volume_fraction_to_intensity(0.1), 0.3 / (4 * np.pi))
    assert np.isclose(intensity_to_volume_fraction(volume_fraction_to_intensity(0.03)), 0.03)


def test_domain_geometry(rng):
    ball = Domain.ball(3.0)
    box = Domain.box(2.0)
    assert np.isclose(ball.volume, 36 * np.pi)
    assert box.volume == 64.0
    assert np.isclose(Domain.for_spheres(1000).size, 10.0)
    for dom in (ball, box):
        pts = dom.sample_uniform(rng, 500)
        assert np.all(dom.contains(pts))
        assert np.isclose(dom.eroded_volume(0.5), Domain(dom.kind, dom.size - 0.5).volume)
    assert ball.eroded_volume(5.0) == 0.0
    with pytest.raises(ValueError):
        Domain("torus", 1.0)
    with pytest.raises(ValueError):
        PointConfiguration([[10.0, 0, 0]], ball)


def test_poisson_counts():
    dom = Domain.box(3.0)
    lam = 0.5
    counts = np.array([len(poisson_sample(lam, dom, s)) for s in range(1000)])
    mean = lam * dom.volume
    assert abs(counts.mean() - mean) < 3 * math.sqrt(mean / 1000)
    assert 0.9 <= counts.var(ddof=1) / counts.mean() <= 1.1


def test_poisson_errors_and_low_intensity():
    with pytest.raises(ValueError):
        poisson_sample(0.0, Domain.box(1.0), 0)
    empty = sum(len(poisson_sample(1e-9, Domain.box(1.0), s)) == 0 for s in range(200))
    assert empty == 200


def test_poisson_uniform_in_ball():
    cfg = poisson_sample(2.0, Domain.ball(4.0), 11)
    r = np.linalg.norm(cfg.centers, axis=1)
    # radial CDF of uniform points in a ball is (r / R)^3
    u = np.sort((r / 4.0) ** 3)
    ks = np.max(np.abs(u - np.arange(1, len(u) + 1) / len(u)))
    assert ks < 1.63 / math.sqrt(len(u))


def test_determinism():
    a = matern1_sample(0.02, Domain.box(10.0), 2.5, 1234)
    b = matern1_sample(0.02, Domain.box(10.0), 2.5, 1234)
    assert a.centers.tobytes() == b.centers.tobytes()
    c = matern1_sample(0.02, Domain.box(10.0), 2.5, 1235)
    assert a.centers.tobytes() != c.centers.tobytes()
    assert member_seed(5, 0) != member_seed(5, 1)
    ens1 = sample_ensemble("poisson", 0.01, Domain.box(5.0), 3, 4)
    ens2 = sample_ensemble("poisson", 0.01, Domain.box(5.0), 3, 4, threads=2)
    assert all(x.centers.tobytes() == y.centers.tobytes() for x, y in zip(ens1, ens2))


def test_matern_examples():
    dom = Domain.box(10.0)
    pair = PointConfiguration([[0, 0, 0], [0.9 * 2.5, 0, 0], [6.0, 6.0, 6.0]], dom)
    out = matern1_thin(pair, 2.5)
    assert np.allclose(out.centers, [[6.0, 6.0, 6.0]])
    assert out.hardcore_valid


@given(st.integers(0, 2**32), st.floats(0.01, 0.2))
@settings(max_examples=20, deadline=None)
def test_thinning_matches_brute_force(seed, lam):
    cfg = poisson_sample(lam, Domain.box(6.0), seed)
    thinned = matern1_thin(cfg, 1.5)
    ref = brute_thin(cfg.centers, 1.5)
    assert np.array_equal(thinned.centers, ref)
    # subset of the input
    assert set(map(tuple, thinned.centers)) <= set(map(tuple, cfg.centers))
    assert check_h1(thinned, 1.5)[0]


def test_check_h1_examples():
    dom = Domain.box(10.0)
    assert check_h1(PointConfiguration(np.empty((0, 3)), dom), 2.5) == (True, [])
    assert check_h1(PointConfiguration([[0, 0, 0]], dom), 2.5) == (True, [])
    cfg = PointConfiguration([[0, 0, 0], [2.5 - 1e-6, 0, 0], [7, 7, 7]], dom)
    ok, bad = check_h1(cfg, 2.5)
    assert not ok
    assert [(i, j) for i, j, _ in bad] == [(0, 1)]
    assert np.isclose(bad[0][2], 2.5 - 1e-6)


def test_matern_parent_intensity():
    lam = matern1_parent_intensity(0.005, 2.5)
    assert np.isclose(matern1_intensity(lam, 2.5), 0.005)
    assert lam < 1 / (4 / 3 * np.pi * 2.5**3)  # lower branch
    with pytest.raises(ValueError):
        matern1_parent_intensity(volume_fraction_to_intensity(0.04), 2.5)


def test_matern_pair_correlation_oracle(rng):
    lam, r0 = 0.02, 2.0
    for r in (2.2, 3.0):
        g_mc, err = pair_retention_oracle(r, lam, r0, 40_000, rng)
        assert abs(g_mc - matern1_pair_correlation(r, lam, r0)) < 3 * err
    assert matern1_pair_correlation(1.9, lam, r0) == 0.0
    assert matern1_pair_correlation(4.5, lam, r0) == 1.0


def test_g2_estimate_matern_vs_oracle(rng):
    lam, r0 = 0.02, 2.0
    ens = sample_ensemble("matern1", lam, Domain.box(10.0), 17, 300, r0=r0)
    edges = np.array([0.0, 1.0, 2.0, 2.4, 3.0])
    est = estimate_g2(ens, edges)
    assert est.g2[0] == 0.0 and est.g2[1] == 0.0
    g_mc, err = pair_retention_oracle(2.2, lam, r0, 40_000, rng)
    assert abs(est.g2[2] - g_mc) < 3 * math.hypot(est.stderr[2], err)


def test_g2_poisson_flat():
    ens = sample_ensemble("poisson", 0.02, Domain.box(12.0), 5, 200)
    est = estimate_g2(ens, np.arange(1.0, 10.0, 1.0))
    assert np.all(np.abs(est.g2 - 1) < 3 * est.stderr)


def test_g2_stderr_scaling():
    dom = Domain.box(10.0)
    edges = np.arange(2.0, 8.0, 1.0)
    a = estimate_g2(sample_ensemble("poisson", 0.02, dom, 8, 200), edges)
    b = estimate_g2(sample_ensemble("poisson", 0.02, dom, 9, 400), edges)
    ratio = np.mean(a.stderr / b.stderr)
    assert 1.2 < ratio < 1.7


def test_g2_translation_invariance():
    ens = sample_ensemble("poisson", 0.03, Domain.box(16.0), 21, 60)
    edges = np.arange(1.0, 6.0, 1.0)
    halves = []
    for shift in (-8.0, 8.0):
        sub = []
        for cfg in ens:
            x = cfg.centers - [shift, 0, 0]
            keep = np.all(np.abs(x) <= 8.0, axis=1)
            sub.append(PointConfiguration(x[keep], Domain.box(8.0)))
        halves.append(estimate_g2(sub, edges))
    a, b = halves
    assert np.all(np.abs(a.g2 - b.g2) < 3 * np.hypot(a.stderr, b.stderr))


def test_g2_single_config_and_errors():
    cfg = poisson_sample(0.05, Domain.box(8.0), 4)
    est = estimate_g2([cfg], [1.0, 2.0, 3.0])
    assert est.n_configs == 1 and np.all(est.stderr > 0)
    with pytest.raises(ValueError):
        estimate_g2([], [1.0, 2.0])
    with pytest.raises(ValueError):
        estimate_g2([cfg], [2.0, 1.0])


def test_g2_csv(tmp_path):
    cfg = poisson_sample(0.05, Domain.box(8.0), 4)
    est = estimate_g2([cfg, cfg], [1.0, 2.0, 3.0])
    path = tmp_path / "g2.csv"
    est.to_csv(path, echo={"seed": 4})
    lines = path.read_text().splitlines()
    assert lines[0] == "# seed = 4"
    assert lines[1] == "# bin_edges = 1.0 2.0 3.0"
    assert lines[2] == "bin_center,g2,stderr,count"
    assert float(lines[3].split(",")[0]) == 1.5


def test_decorrelation_matern_compact():
    lam, r0 = 0.02, 2.0
    ens = sample_ensemble("matern1", lam, Domain.box(12.0), 2, 150, r0=r0)
    est = estimate_g2(ens, np.arange(r0, 10.0, 0.5))
    rep = check_decorrelation(est, "compact")
    assert rep.support_radius is not None
    assert rep.support_radius <= 2 * r0 + 1.0
    assert rep.params["bins_beyond"] >= 3
    assert rep.lq_converges


def test_decorrelation_poisson_noise():
    ens = sample_ensemble("poisson", 0.02, Domain.box(12.0), 6, 100)
    est = estimate_g2(ens, np.arange(1.0, 10.0, 0.5))
    rep = check_decorrelation(est, "compact", r_min=1.0)
    assert rep.below_noise
    assert rep.lq_converges


def test_decorrelation_power_law_synthetic():
    edges = np.linspace(2.0, 40.0, 77)
    c = 0.5 * (edges[1:] + edges[:-1])
    rng = np.random.default_rng(3)
    noise = 1e-4
    g = 1.0 + 3.0 * c**-2 + rng.normal(0, noise, c.size)
    est = CorrelationEstimate(edges, g, np.full(c.size, noise), np.zeros(c.size, int), 1, 1.0)
    rep = check_decorrelation(est, "power", r_min=2.0)
    assert abs(rep.params["exponent"] - 2.0) < 0.3
    assert rep.lq_converges  # p q = 4 > 3
    rep1 = check_decorrelation(est, "power", q=1.0, r_min=2.0)
    assert not rep1.lq_converges  # p q = 2 < 3


def test_decorrelation_exponential_and_short_tail():
    edges = np.linspace(2.0, 20.0, 37)
    c = 0.5 * (edges[1:] + edges[:-1])
    g = 1.0 + 0.8 * np.exp(-c / 1.5)
    est = CorrelationEstimate(edges, g, np.full(c.size, 1e-6), np.zeros(c.size, int), 1, 1.0)
    rep = check_decorrelation(est, "exponential", r_min=2.0)
    assert np.isclose(rep.params["length"], 1.5, rtol=0.05)
    short = CorrelationEstimate(edges[:3], g[:2], np.ones(2), np.zeros(2, int), 1, 1.0)
    assert "insufficient" in check_decorrelation(short).message


def test_g3_equilateral_poisson():
    ens = sample_ensemble("poisson", 0.1, Domain.box(5.0), 7, 40)
    g3, counts = estimate_g3_equilateral(ens, [1.0, 2.0])
    assert counts[0] > 100
    assert abs(g3[0] - 1.0) < 4 / math.sqrt(counts[0])


def test_config_roundtrip(tmp_path):
    cfg = matern1_sample(0.02, Domain.ball(8.0), 2.5, 99)
    path = tmp_path / "cfg.txt"
    write_config(cfg, path)
    text = path.read_text().splitlines()
    assert text[1].startswith("# L = ") and text[2].startswith("# R0 = ")
    back = read_config(path)
    assert np.array_equal(back.centers, cfg.centers)
    assert back.r0 == 2.5 and back.seed == 99 and back.domain == cfg.domain
