import numpy as np
import pytest

from needlefield.geometry import PointCloud, cube_domain
from needlefield.needles import (NeedleSet, SigmaRule, audit_needles,
                                 sample_crossing_needles,
                                 sample_same_side_needles)
from needlefield.shapes import box_mesh, icosphere


def ring_cloud(n=2000, radius=1.0):
    # even spacing: every point's nearest-neighbor distance is one chord
    th = 2 * np.pi * np.arange(n) / n
    pts = np.stack([radius * np.cos(th), radius * np.sin(th),
                    np.zeros(n)], axis=1)
    return PointCloud(pts), 2 * radius * np.sin(np.pi / n)


def test_sigma_rule_values():
    cloud = PointCloud(np.array([[0.0, 0, 0], [0.3, 0, 0], [1.0, 0, 0]]))
    # nn distances: 0.3, 0.3, 0.7
    s = SigmaRule(2.0).sigma(cloud)
    assert np.allclose(s, [0.2, 0.2, 0.7 * 2 / 3], atol=1e-15)


def test_sigma_rule_validation():
    with pytest.raises(ValueError):
        SigmaRule(0.0)
    with pytest.raises(ValueError):
        SigmaRule(-1.0)
    dup = PointCloud(np.array([[1.0, 2, 3], [1.0, 2, 3], [4.0, 5, 6]]))
    with pytest.raises(ValueError):
        SigmaRule(1.0).sigma(dup)


def test_crossing_needles_shape_and_midpoints(rng):
    cloud, _ = ring_cloud(100)
    ns = sample_crossing_needles(cloud, SigmaRule(1.0), rng)
    assert len(ns) == 100
    assert ns.provenance == "opp"
    assert np.all(ns.target == 0.0)
    assert np.abs(ns.midpoints - cloud.points).max() < 1e-12
    assert np.all(np.any(ns.a != ns.b, axis=1))


def test_crossing_needle_scale_tracks_density():
    # even ring: all sigmas equal chord/3, so per-axis offsets should
    # have that std within sampling error
    cloud, chord = ring_cloud(2000)
    ns = sample_crossing_needles(cloud, SigmaRule(1.0),
                                 np.random.default_rng(42))
    h = 0.5 * (ns.a - ns.b)
    assert abs(h.std() / (chord / 3.0) - 1.0) < 0.02


def test_crossing_needles_scale_linearly_in_multiplier():
    cloud, _ = ring_cloud(300)
    n1 = sample_crossing_needles(cloud, SigmaRule(1.0),
                                 np.random.default_rng(7))
    n2 = sample_crossing_needles(cloud, SigmaRule(2.0),
                                 np.random.default_rng(7))
    # same seed, doubled multiplier: same direction draws, twice the reach
    assert np.allclose(n2.a - n2.b, 2.0 * (n1.a - n1.b), rtol=1e-12, atol=0)


def test_crossing_needles_deterministic():
    cloud, _ = ring_cloud(50)
    a = sample_crossing_needles(cloud, SigmaRule(1.0),
                                np.random.default_rng(3))
    b = sample_crossing_needles(cloud, SigmaRule(1.0),
                                np.random.default_rng(3))
    assert np.array_equal(a.a, b.a) and np.array_equal(a.b, b.b)


def test_crossing_needles_need_two_points(rng):
    with pytest.raises(ValueError):
        sample_crossing_needles(PointCloud(np.zeros((1, 3))), SigmaRule(1.0),
                                rng)


def nearest_excluding_self(pool, queries, self_ids):
    # exhaustive scan with lowest-index tie break
    out = np.empty(len(queries), dtype=np.int64)
    for i, q in enumerate(queries):
        d2 = np.sum((pool - q) ** 2, axis=1)
        d2[self_ids[i]] = np.inf
        out[i] = int(np.argmin(d2))
    return out


def test_same_side_needles_match_exhaustive_pairing(rng):
    cloud, _ = ring_cloud(40)
    crossing = sample_crossing_needles(cloud, SigmaRule(1.0), rng)
    dom = cube_domain(1.2)
    pair_rng = np.random.default_rng(99)
    ns = sample_same_side_needles(cloud, crossing.endpoints, 200, dom,
                                  pair_rng)
    assert len(ns) == 200
    assert ns.provenance == "same"
    assert np.all(ns.target == 1.0)
    assert np.all(dom.contains(ns.a))

    # reconstruct the sampler's pool from the same stream
    space = dom.sample(np.random.default_rng(99), 200)
    assert np.array_equal(space, ns.a)
    pool = np.vstack([crossing.endpoints, space])
    want = nearest_excluding_self(pool, space,
                                  len(crossing.endpoints) + np.arange(200))
    assert np.array_equal(ns.b, pool[want])
    assert np.all(np.any(ns.a != ns.b, axis=1))


def test_same_side_needles_validation(rng):
    cloud, _ = ring_cloud(10)
    with pytest.raises(ValueError):
        sample_same_side_needles(cloud, np.zeros((0, 3)), 5, None, rng)
    with pytest.raises(ValueError):
        sample_same_side_needles(cloud, np.zeros((4, 3)), 0, None, rng)
    with pytest.raises(ValueError):
        sample_same_side_needles(cloud, np.zeros((4, 2)), 5, None, rng)


def test_needle_set_endpoints_and_concat():
    a = np.arange(6, dtype=np.float64).reshape(2, 3)
    b = a + 10
    ns = NeedleSet(a, b, np.zeros(2), provenance="opp")
    assert np.array_equal(ns.endpoints, np.vstack([a, b]))
    assert np.array_equal(ns.midpoints, a + 5)
    other = NeedleSet(b, a, np.ones(2), provenance="same")
    both = ns.concat(other)
    assert len(both) == 4
    assert both.provenance == "mixed"
    assert np.array_equal(both.target, [0, 0, 1, 1])
    assert ns.concat(ns).provenance == "opp"
    with pytest.raises(ValueError):
        NeedleSet(a, b[:1], np.zeros(2))
    with pytest.raises(ValueError):
        NeedleSet(a, b, np.zeros(3))


def test_audit_parity_on_box():
    box = box_mesh([-1, -1, -1], [1, 1, 1])
    a = np.array([
        [0.1, 0.2, 0.3],     # inside -> outside: one crossing
        [-1.7, 0.3, 0.2],    # outside -> outside through: two crossings
        [0.2, -0.3, 0.1],    # inside -> inside: zero crossings
        [1.4, 1.3, 0.2],     # outside, disjoint: zero crossings
    ])
    b = np.array([
        [1.9, 0.4, 0.2],
        [1.8, 0.35, 0.25],
        [-0.4, 0.6, -0.2],
        [1.9, 1.6, 0.3],
    ])
    target = np.array([0.0, 0.0, 1.0, 1.0])
    report = audit_needles(NeedleSet(a, b, target), box)
    assert np.array_equal(report.crossings, [1, 2, 0, 0])
    # crossing needle through-and-through has even parity: bad
    assert np.array_equal(report.good, [True, False, True, True])
    assert report.opp_good_rate == 0.5
    assert report.same_good_rate == 1.0
    assert report.good_rate() == 0.75
    assert np.array_equal(report.midpoints, 0.5 * (a + b))


def test_audit_matches_convex_side_test(rng):
    # icosphere is convex: a point is inside iff it is behind every face
    # plane, an independent route to the straddle truth
    mesh = icosphere(subdivisions=2, radius=0.4)
    v0 = mesh.vertices[mesh.faces[:, 0]]
    normals = np.cross(mesh.vertices[mesh.faces[:, 1]] - v0,
                       mesh.vertices[mesh.faces[:, 2]] - v0)

    def inside(pts):
        side = np.einsum('fk,nfk->nf', normals, pts[:, None, :] - v0[None])
        return np.all(side <= 0, axis=1)

    a = rng.uniform(-0.6, 0.6, (500, 3))
    b = a + rng.normal(scale=0.2, size=(500, 3))
    t = rng.integers(0, 2, 500).astype(np.float64)
    report = audit_needles(NeedleSet(a, b, t), mesh)
    straddle = inside(a) != inside(b)
    assert np.array_equal(report.crossings % 2 == 1, straddle)
    assert np.array_equal(report.good,
                          np.where(t == 0.0, straddle, ~straddle))


def test_good_rate_requires_matching_target():
    box = box_mesh([-1, -1, -1], [1, 1, 1])
    ns = NeedleSet(np.zeros((2, 3)), np.full((2, 3), 2.0), np.zeros(2))
    report = audit_needles(ns, box)
    with pytest.raises(ValueError):
        report.same_good_rate
