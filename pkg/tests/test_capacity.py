import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from brownexit.capacity import (
    CONDENSER_DIRICHLET,
    CONDENSER_EQUILIBRIUM,
    LOGARITHMIC,
    NEWTONIAN,
    dirichlet_condenser,
    energy_capacity,
    equilibrium_mass,
    equilibrium_measure,
    equilibrium_potential,
    polarity_check,
)
from brownexit.geometry import Ball, ClosedBall, FiniteUnion, GeometryError, Segment, Singleton
from brownexit.sampler import hit_before_exit

E = math.e


def test_disk_capacity_is_radius():
    r = energy_capacity(ClosedBall([0.1, -0.2], 0.25), 2)
    assert r.kind == LOGARITHMIC
    assert r.value == pytest.approx(0.25, rel=0.01)
    assert r.error_estimate is not None and r.extrapolated is not None


def test_segment_capacity_quarter_length():
    assert energy_capacity(Segment([-2.0, 0.0], [2.0, 0.0]), 2).value == pytest.approx(1.0, rel=0.02)


def test_unit_ball_newtonian_capacity():
    r = energy_capacity(ClosedBall([0.0, 0.0, 0.0], 1.0), 3)
    assert r.kind == NEWTONIAN
    assert r.value == pytest.approx(1.0, rel=0.02)


def test_capacity_refinement_converges():
    seg = Segment([0.0, 0.0], [1.0, 0.0])
    errs = [abs(energy_capacity(seg, 2, points=p).value - 0.25) for p in (64, 256)]
    assert errs[1] < errs[0]


@settings(max_examples=10)
@given(a=st.floats(0.2, 5.0))
def test_capacity_scales_linearly(a):
    seg = Segment([-0.5, 0.3], [0.5, 0.1])
    scaled = Segment([-0.5 * a, 0.3 * a], [0.5 * a, 0.1 * a])
    assert energy_capacity(scaled, 2).value == pytest.approx(a * energy_capacity(seg, 2).value, rel=0.01)


def test_capacity_monotone_under_inclusion():
    short = energy_capacity(Segment([0.0, 0.0], [1.0, 0.0]), 2).value
    long = energy_capacity(Segment([0.0, 0.0], [2.0, 0.0]), 2).value
    assert short < long
    small = energy_capacity(ClosedBall([0.0, 0.0], 0.2), 2).value
    union = energy_capacity(FiniteUnion((ClosedBall([0.0, 0.0], 0.2), ClosedBall([1.0, 0.0], 0.1))), 2).value
    assert small < union


def test_energy_capacity_errors():
    with pytest.raises((GeometryError, ValueError)):
        energy_capacity(Singleton([0.0, 0.0]), 2)


def test_polarity():
    assert polarity_check(Singleton([1.0, 0.0])) == "polar"
    assert polarity_check(FiniteUnion((Singleton([1.0, 0.0]), Singleton([0.0, 1.0])))) == "polar"
    assert polarity_check(Segment([0.0, 0.0], [1.0, 0.0])) == "nonpolar"
    assert polarity_check(ClosedBall([0.0, 0.0], 0.1)) == "nonpolar"
    assert polarity_check(FiniteUnion((Singleton([1.0, 0.0]), ClosedBall([0.0, 0.0], 0.1)))) == "nonpolar"


def test_condenser_dirichlet_concentric():
    r = dirichlet_condenser(Ball([0.0, 0.0], E), ClosedBall([0.0, 0.0], 1.0))
    assert r.kind == CONDENSER_DIRICHLET and r.convention_constant == 2.0
    assert r.value == pytest.approx(2 * math.pi, rel=0.01)


def test_condenser_scaling_and_monotonicity():
    base = dirichlet_condenser(Ball([0.0, 0.0], 2.0), ClosedBall([0.3, 0.0], 0.4), resolution=1 / 40)
    scaled = dirichlet_condenser(Ball([0.0, 0.0], 4.0), ClosedBall([0.6, 0.0], 0.8), resolution=1 / 20)
    assert scaled.value == pytest.approx(base.value, rel=1e-9)
    bigger = dirichlet_condenser(Ball([0.0, 0.0], 2.0), ClosedBall([0.3, 0.0], 0.5), resolution=1 / 40)
    assert bigger.value > base.value


def test_condenser_rejects_touching_boundary():
    with pytest.raises(GeometryError):
        dirichlet_condenser(Ball([0.0, 0.0], 1.0), ClosedBall([0.5, 0.0], 0.5))


def test_equilibrium_measure_concentric():
    m = equilibrium_measure(Ball([0.0, 0.0], E), ClosedBall([0.0, 0.0], 1.0))
    assert np.ptp(m.weights) / m.weights.mean() < 0.01
    assert m.total_mass == pytest.approx(math.pi, rel=0.02)
    assert np.allclose(np.linalg.norm(m.points, axis=1), 1.0)
    assert m.total_mass == pytest.approx(m.weights.sum())
    d = json.loads(m.to_json())
    assert len(d["weights"]) == len(m.weights)


def test_equilibrium_potential_and_hitting():
    D, K = Ball([0.0, 0.0], E), ClosedBall([0.0, 0.0], 1.0)
    x = [math.sqrt(E), 0.0]
    u = equilibrium_potential(equilibrium_measure(D, K), D, x)
    assert u == pytest.approx(0.5, rel=0.02)
    h = hit_before_exit(D, K, x, 100_000, 31)
    assert abs(h.p - u) < 3 * h.stderr


def test_dirichlet_is_twice_equilibrium_mass():
    cases = [
        (Ball([0.0, 0.0], E), ClosedBall([0.0, 0.0], 1.0)),
        (Ball([0.0, 0.0], 2.0), ClosedBall([0.5, 0.0], 0.3)),
    ]
    for D, K in cases:
        I = dirichlet_condenser(D, K).value
        M = equilibrium_mass(D, K)
        assert M.kind == CONDENSER_EQUILIBRIUM
        assert I == pytest.approx(2 * M.value, rel=0.03)


def test_mass_times_log_ratio_constant():
    R = 1.0
    vals = [equilibrium_mass(Ball([0.0, 0.0], R), ClosedBall([0.0, 0.0], r)).value * math.log(R / r) for r in (0.01, 0.05, 0.2, 0.5)]
    assert np.ptp(vals) / np.mean(vals) < 0.02
    assert np.mean(vals) == pytest.approx(math.pi, rel=0.02)


def test_kakutani_cross_check():
    outer = Ball([0.0, 0.0], 2.0)
    for K in (Segment([0.3, 0.0], [0.7, 0.0]), ClosedBall([0.5, 0.0], 0.1)):
        assert polarity_check(K) == "nonpolar"
        assert hit_before_exit(outer, K, [0.0, 0.0], 5000, 32).ci[0] > 0
    pt = Singleton([0.5, 0.0])
    assert polarity_check(pt) == "polar"
    assert hit_before_exit(outer, pt, [0.0, 0.0], 5000, 33, engine="em", dt=1e-2).hits == 0


def test_report_json():
    r = energy_capacity(ClosedBall([0.0, 0.0], 0.5), 2)
    d = json.loads(r.to_json())
    assert d["kind"] == LOGARITHMIC and d["value"] == pytest.approx(0.5, rel=0.01)
