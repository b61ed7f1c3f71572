import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from brownexit.geometry import (
    Annulus,
    Ball,
    ClosedBall,
    ComplementOfCompact,
    Excised,
    FiniteUnion,
    GeometryError,
    GridMask,
    HalfSpace,
    Lens,
    Punctured,
    Sector,
    Segment,
    Singleton,
    Strip,
    compact_from_config,
    d_regular,
    domain_from_config,
)

coord = st.floats(-3, 3, allow_nan=False)
points2 = st.lists(st.tuples(coord, coord), min_size=1, max_size=20).map(np.array)

DOMAINS = [
    Ball([0.0, 0.0], 1.0),
    Ball([0.2, -0.1], 1.5),
    HalfSpace([-1.0, 0.0], 0.5),
    Strip(math.pi / 4),
    Sector(math.pi / 2),
    Annulus(0.5, 2.0, [0.0, 1.0]),
    ComplementOfCompact(ClosedBall([0.5, 0.0], 0.1)),
    ComplementOfCompact(Segment([-3.0, 0.0], [-0.25, 0.0])),
    Punctured(Ball([0.0, 0.0], 1.0), ([0.0, 0.0],)),
    Excised(Ball([0.0, 0.0], 2.0), ClosedBall([1.0, 0.0], 0.25)),
]


def test_ball_membership_and_distance():
    b = Ball([0.0, 0.0], 1.0)
    assert b.query([0.5, 0.0]) == (True, 0.5)
    inside, d = b.query([2.0, 0.0])
    assert not inside and d == pytest.approx(1.0)
    assert d_regular(b) == (1.0, 1.0)


def test_ball_must_contain_origin():
    with pytest.raises(GeometryError):
        Ball([2.0, 0.0], 1.0)
    with pytest.raises(GeometryError):
        Ball([0.0, 0.0], -1.0)


def test_halfspace_distance_is_affine():
    h = HalfSpace([-2.0, 0.0], 1.0)  # x > -1/2 after normalization
    assert h.offset == pytest.approx(0.5)
    assert h.distance([1.0, 3.0]) == pytest.approx(1.5)
    assert not h.contains([-0.6, 0.0])


def test_sector_pi_is_the_halfplane():
    s = Sector(math.pi)
    h = HalfSpace([-1.0, 0.0], 0.5)
    X = np.random.default_rng(1).uniform(-3, 3, size=(500, 2))
    assert np.array_equal(s.contains(X), h.contains(X))
    assert np.allclose(s.distance(X[h.contains(X)]), h.distance(X[h.contains(X)]))


def test_sector_default_apex():
    s = Sector(math.pi / 2)
    assert np.allclose(s.apex, [-1.0, 0.0])
    assert s.distance([0.0, 0.0]) == pytest.approx(math.sqrt(0.5))


def test_punctured_distance_flags_irregular_point():
    p = Punctured(Ball([0.0, 0.0], 1.0), ([0.3, 0.0],))
    assert p.has_irregular
    assert p.distance([0.3, 0.1]) == pytest.approx(0.1)
    assert p.regular_distance([0.3, 0.1]) == pytest.approx(1 - math.hypot(0.3, 0.1))
    assert not p.contains([0.3, 0.0])
    assert p.admits_start([0.3, 0.0])


def test_punctured_origin_start_is_allowed():
    p = Punctured(Ball([0.0, 0.0], 1.0), ([0.0, 0.0],))
    assert d_regular(p) == (0.0, 1.0)


def test_complement_distance():
    c = ComplementOfCompact(ClosedBall([0.5, 0.0], 0.1))
    assert c.distance([0.0, 0.0]) == pytest.approx(0.4)
    assert not c.bounded
    with pytest.raises(GeometryError):
        ComplementOfCompact(ClosedBall([0.0, 0.0], 0.1))


def test_strip_and_annulus():
    s = Strip(0.5)
    assert s.distance([10.0, 0.2]) == pytest.approx(0.3)
    a = Annulus(0.5, 2.0, [0.0, 1.0])
    assert a.contains([0.0, 0.0])
    assert a.distance([0.0, 0.0]) == pytest.approx(0.5)


@pytest.mark.parametrize("dom", DOMAINS, ids=lambda d: type(d).__name__)
def test_config_round_trip(dom):
    again = domain_from_config(dom.to_config())
    X = np.random.default_rng(2).uniform(-3, 3, size=(300, 2))
    assert np.array_equal(again.contains(X), dom.contains(X))
    assert np.allclose(again.distance(X), dom.distance(X))


def test_config_rejects_unknown_keys():
    with pytest.raises(GeometryError):
        domain_from_config({"type": "ball", "center": [0, 0], "radius": 1, "colour": "red"})
    with pytest.raises(GeometryError):
        domain_from_config({"type": "torus"})
    with pytest.raises(GeometryError):
        compact_from_config({"type": "segment"})


def test_schlicht_config():
    d = domain_from_config({"type": "schlicht", "id": "sector", "angle": math.pi / 2})
    assert isinstance(d, Sector)


@pytest.mark.parametrize("dom", DOMAINS, ids=lambda d: type(d).__name__)
@given(X=points2)
def test_distance_scales_linearly(dom, X):
    a = 1.7
    assert np.allclose(dom.scaled(a).distance(a * X), a * dom.distance(X), atol=1e-9)


@pytest.mark.parametrize("dom", DOMAINS, ids=lambda d: type(d).__name__)
@given(X=points2)
def test_nearest_regular_lies_on_boundary(dom, X):
    P, _ = dom.nearest_regular(X)
    assert np.allclose(dom.regular_distance(P), 0.0, atol=1e-9)
    assert np.allclose(np.linalg.norm(P - X, axis=1), dom.regular_distance(X), atol=1e-9)


@given(X=points2)
def test_first_crossing_hits_boundary(X):
    dom = Ball([0.0, 0.0], 1.0)
    X = X[dom.contains(X)]
    d = np.array([0.6, 0.8])
    s = dom.first_crossing(X, d)
    assert np.allclose(np.linalg.norm(X + s[:, None] * d, axis=1), 1.0)


def test_compact_sets():
    seg = Segment([-2.0, 0.0], [2.0, 0.0])
    assert seg.distance([0.0, 1.0]) == pytest.approx(1.0)
    nodes, sizes = seg.boundary_nodes(64)
    assert sizes.sum() == pytest.approx(4.0)
    assert Singleton([1.0, 1.0]).polar
    u = FiniteUnion((ClosedBall([1.0, 0.0], 0.1), Singleton([0.0, 1.0])))
    assert not u.polar
    lens = ClosedBall([0.5, 0.0], 0.1).intersect_ball([0.4, 0.0], 0.02)
    assert isinstance(lens, Lens)
    assert lens.contains([0.41, 0.0]) and not lens.contains([0.38, 0.0])
    assert ClosedBall([0.5, 0.0], 0.1).intersect_ball([2.0, 0.0], 0.1) is None


def test_lens_boundary_nodes_lie_on_both_arcs():
    lens = Lens(ClosedBall([0.5, 0.0], 0.1), ClosedBall([0.4, 0.0], 0.02))
    nodes, sizes = lens.boundary_nodes(200)
    ra = np.linalg.norm(nodes - [0.5, 0.0], axis=1)
    rb = np.linalg.norm(nodes - [0.4, 0.0], axis=1)
    assert np.all(np.isclose(ra, 0.1) | np.isclose(rb, 0.02))
    assert np.all(ra <= 0.1 + 1e-12) and np.all(rb <= 0.02 + 1e-12)


def test_grid_mask_square():
    h = 0.1
    m = np.ones((20, 20), dtype=bool)
    g = GridMask(h, m, [-1.0, -1.0])
    assert g.contains([0.0, 0.0])
    assert not g.contains([1.5, 0.0])
    with pytest.raises(GeometryError):
        g.first_crossing([0.0, 0.0], [1.0, 0.0])
