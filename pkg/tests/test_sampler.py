import math

import numpy as np
import pytest
from scipy.special import jn_zeros

from brownexit.capacity import equilibrium_measure, equilibrium_potential
from brownexit.geometry import Ball, ClosedBall, GeometryError, GridMask, HalfSpace, Punctured, Segment, Singleton, Strip
from brownexit.kernels import ball_exit_cdf, ball_hit_prob, ball_survival
from brownexit.pde import survival_curve
from brownexit.sampler import (
    CHUNK,
    ExitSampleBatch,
    dkw_halfwidth,
    em_exit,
    empirical_cdf,
    fit_lambda,
    fit_tail_exponent,
    hit_before_exit,
    ks_two_sample,
    shell_bias_bound,
    wos_exit,
)


DISK = Ball([0.0, 0.0], 1.0)
J01_SQ = jn_zeros(0, 1)[0] ** 2


def _same(a: ExitSampleBatch, b: ExitSampleBatch):
    assert np.array_equal(a.times, b.times)
    assert np.array_equal(a.points, b.points)
    assert np.array_equal(a.censored, b.censored)


def test_wos_bit_identical_across_threads():
    n = 2 * CHUNK + 17
    _same(wos_exit(DISK, [0.3, 0.1], 1e-4, n, 7, threads=1), wos_exit(DISK, [0.3, 0.1], 1e-4, n, 7, threads=3))


def test_em_bit_identical_across_threads():
    n = CHUNK + 5
    a = em_exit(DISK, [0.2, 0.0], 1e-2, n, 11, threads=1)
    b = em_exit(DISK, [0.2, 0.0], 1e-2, n, 11, threads=2)
    _same(a, b)


def test_seed_changes_samples():
    a = wos_exit(DISK, [0.0, 0.0], 1e-4, 100, 1)
    b = wos_exit(DISK, [0.0, 0.0], 1e-4, 100, 2)
    assert not np.array_equal(a.times, b.times)


def test_wos_disk_from_centre_within_dkw_band():
    b = wos_exit(DISK, [0.0, 0.0], 1e-4, 100_000, 3)
    assert np.all(b.steps == 1)
    t = np.linspace(0.05, 2.0, 60)
    est = empirical_cdf(b, t, alpha=0.01)
    assert np.all(est.contains(ball_exit_cdf(t)))


def test_dkw_coverage_over_seeds():
    t = np.linspace(0.05, 2.0, 40)
    truth = ball_exit_cdf(t)
    covered = []
    for seed in range(50):
        est = empirical_cdf(wos_exit(DISK, [0.0, 0.0], 1e-4, 2000, 1000 + seed), t, alpha=0.01)
        covered.append(np.mean(est.contains(truth)))
    assert np.mean(covered) >= 0.99


def test_dkw_halfwidth_value():
    assert dkw_halfwidth(10_000, 0.01) == pytest.approx(math.sqrt(math.log(200) / 20000))
    assert dkw_halfwidth(10_000, 0.01) == pytest.approx(0.016277, abs=1e-6)


def test_empirical_cdf_contract():
    b = wos_exit(DISK, [0.5, 0.0], 1e-4, 500, 4)
    est = empirical_cdf(b, np.linspace(0, 3, 50))
    assert est.cdf[0] == 0.0
    assert np.all(np.diff(est.cdf) >= 0)
    empty = ExitSampleBatch({}, "wos", {}, 0, np.zeros(0), np.zeros((0, 2)), np.zeros(0, bool), np.zeros(0, int))
    with pytest.raises(ValueError):
        empirical_cdf(empty, [0.1])


def test_punctured_disk_matches_disk():
    a = wos_exit(Punctured(DISK, ([0.0, 0.0],)), [0.0, 0.0], 1e-4, 100_000, 5)
    b = wos_exit(DISK, [0.0, 0.0], 1e-4, 100_000, 6)
    _, p = ks_two_sample(a, b)
    assert p > 0.01


def test_punctured_off_centre_matches_disk():
    # the puncture is off the start point, so walks pass near it without stopping
    a = wos_exit(Punctured(DISK, ([0.2, 0.0],)), [0.0, 0.0], 1e-4, 20_000, 8)
    b = wos_exit(DISK, [0.0, 0.0], 1e-4, 20_000, 9)
    assert ks_two_sample(a, b)[1] > 0.01


def test_eps_halving_within_shell_bias():
    x0 = [0.3, 0.4]
    a = wos_exit(DISK, x0, 1e-3, 50_000, 12)
    b = wos_exit(DISK, x0, 5e-4, 50_000, 12)
    assert abs(a.times.mean() - b.times.mean()) < 3 * shell_bias_bound(DISK, 1e-3)


def test_wos_mean_exit_time():
    # E T = (1 - |x|^2) / 2 in the unit disk
    b = wos_exit(DISK, [0.3, 0.4], 1e-5, 50_000, 13)
    se = b.times.std() / math.sqrt(len(b))
    assert abs(b.times.mean() - 0.375) < 3 * se + shell_bias_bound(DISK, 1e-5)


def test_em_bias_slope_without_bridge():
    dts = np.array([1e-2, 1e-3, 1e-4])
    err = [abs(em_exit(DISK, [0.0, 0.0], dt, 20_000, 14, bridge=False).times.mean() - 0.5) for dt in dts]
    slope = np.polyfit(np.log(dts), np.log(err), 1)[0]
    assert 0.25 <= slope <= 1.0


def test_bridge_reduces_bias():
    plain = em_exit(DISK, [0.0, 0.0], 1e-2, 20_000, 15, bridge=False).times.mean()
    bridged = em_exit(DISK, [0.0, 0.0], 1e-2, 20_000, 15, bridge=True).times.mean()
    assert abs(bridged - 0.5) < abs(plain - 0.5) / 3


def test_wos_and_em_agree():
    w = wos_exit(DISK, [0.0, 0.0], 1e-4, 20_000, 16)
    e = em_exit(DISK, [0.0, 0.0], 1e-5, 2000, 17)
    assert ks_two_sample(w, e)[1] > 0.01


def test_em_censoring():
    b = em_exit(Strip(0.5), [0.0, 0.0], 1e-3, 2000, 18, t_max=0.2)
    assert np.all(b.times[b.censored] == pytest.approx(0.2))
    S = np.mean(b.censored)
    exact = survival_curve(Strip(0.5), [0.0, 0.0], [0.2])[0]
    assert abs(S - exact) < 4 * math.sqrt(exact * (1 - exact) / 2000) + 0.02


def test_sampler_errors():
    with pytest.raises(ValueError):
        wos_exit(DISK, [0.0, 0.0], 0.0, 10, 0)
    with pytest.raises(ValueError):
        em_exit(DISK, [0.0, 0.0], -1e-3, 10, 0)
    mask = GridMask(0.1, np.ones((20, 20), bool), [-1.0, -1.0])
    with pytest.raises(GeometryError):
        wos_exit(mask, [0.0, 0.0], 1e-4, 10, 0)
    with pytest.raises(GeometryError):
        wos_exit(DISK, [2.0, 0.0], 1e-4, 10, 0)


def test_batch_round_trip(tmp_path):
    b = em_exit(Strip(0.5), [0.0, 0.0], 1e-3, 300, 19, t_max=0.1)
    path = tmp_path / "batch.csv"
    b.write(path)
    assert path.read_text().splitlines()[0] == "index,exit_time,exit_x,exit_y"
    again = ExitSampleBatch.read(path)
    _same(b, again)
    assert again.seed == 19 and again.sampler == b.sampler and again.params == b.params


def test_halfplane_tail_exponent():
    b = wos_exit(HalfSpace([-1.0, 0.0], 0.5), [0.0, 0.0], 1e-4, 100_000, 20, t_max=100.0)
    fit = fit_tail_exponent(b, (10.0, 100.0 * (1 - 1e-9)))
    assert fit.exponent == pytest.approx(0.5, rel=0.10)
    assert not fit.super_polynomial


def test_disk_tail_flagged_super_polynomial():
    b = wos_exit(DISK, [0.0, 0.0], 1e-4, 100_000, 21)
    fit = fit_tail_exponent(b, (0.5, 2.0))
    assert fit.super_polynomial
    curve = fit_tail_exponent((np.linspace(0.2, 3, 200), ball_survival(np.linspace(0.2, 3, 200))), (0.5, 3.0))
    assert curve.super_polynomial


def test_tail_fit_needs_exceedances():
    b = wos_exit(DISK, [0.0, 0.0], 1e-4, 1000, 22)
    with pytest.raises(ValueError):
        fit_tail_exponent(b, (2.0, 3.0))


def test_fit_lambda_oracles():
    t = np.linspace(0.5, 4.0, 60)
    disk = fit_lambda((t, survival_curve(DISK, [0.0, 0.0], t)), (1.0, 4.0))
    assert disk.lam == pytest.approx(J01_SQ, rel=0.02)
    big = fit_lambda((4 * t, survival_curve(Ball([0.0, 0.0], 2.0), [0.0, 0.0], 4 * t)), (4.0, 16.0))
    assert big.lam == pytest.approx(disk.lam / 4, rel=1e-3)
    strip = fit_lambda((t, survival_curve(Strip(math.pi / 4), [0.0, 0.0], t)), (1.0, 4.0))
    assert strip.lam == pytest.approx(4.0, rel=0.05)
    with pytest.raises(ValueError):
        fit_lambda((t, survival_curve(DISK, [0.0, 0.0], t)), (0.5, 1.0))


def test_fit_lambda_from_batch():
    b = wos_exit(DISK, [0.0, 0.0], 1e-4, 100_000, 23)
    fit = fit_lambda(b, (0.8, 1.6))
    assert abs(fit.lam - J01_SQ) < 3 * fit.stderr + 0.05 * J01_SQ


def test_hit_concentric_matches_harmonic_and_equilibrium_potential():
    outer, K = Ball([0.0, 0.0], 2.0), ClosedBall([0.0, 0.0], 1.0)
    x0 = [math.sqrt(2), 0.0]
    h = hit_before_exit(outer, K, x0, 100_000, 24)
    assert abs(h.p - 0.5) < 3 * h.stderr
    u = equilibrium_potential(equilibrium_measure(outer, K), outer, x0)
    assert abs(h.p - u) < 3 * h.stderr


def test_hit_trivial_cases():
    outer, K = Ball([0.0, 0.0], 2.0), ClosedBall([0.0, 0.0], 1.0)
    assert hit_before_exit(outer, K, [0.5, 0.0], 10, 0).p == 1.0
    assert hit_before_exit(outer, K, [2.0, 0.0], 10, 0).p == 0.0
    with pytest.raises(GeometryError):
        hit_before_exit(outer, K, [3.0, 0.0], 10, 0)


def test_hit_ball_in_3d():
    outer = Ball([0.0, 0.0, 0.0], 64.0)
    h = hit_before_exit(outer, ClosedBall([0.0, 0.0, 0.0], 1.0), [2.0, 0.0, 0.0], 100_000, 25)
    exact = (1 / 2 - 1 / 64) / (1 - 1 / 64)  # harmonic measure with the outer sphere at 64
    assert abs(h.p - exact) < 3 * h.stderr
    assert abs(h.p - ball_hit_prob(1.0, [2.0, 0.0, 0.0], 3)) <= 0.01


def test_points_never_hit_segments_are():
    outer = Ball([0.0, 0.0], 2.0)
    pt = hit_before_exit(outer, Singleton([0.5, 0.0]), [0.0, 0.0], 10_000, 26, engine="em", dt=1e-2)
    assert pt.hits == 0
    seg = hit_before_exit(outer, Segment([0.3, 0.0], [0.7, 0.0]), [0.0, 0.0], 10_000, 27)
    assert seg.ci[0] > 0
