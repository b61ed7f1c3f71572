"""Acceptance criteria 1-10.

Each test prints one ``criterion N: PASS|FAIL`` line (visible under ``-v``)
and then asserts.  Run alone with ``pytest tests/test_acceptance.py -v``.
"""

import json
import math
import time
from pathlib import Path

import numpy as np
import pytest
from scipy.special import jn_zeros

from brownexit.capacity import dirichlet_condenser, energy_capacity, equilibrium_mass
from brownexit.geometry import Ball, ClosedBall, Punctured, Segment, Singleton, Strip
from brownexit.harness.cli import manifest_path, run_cli
from brownexit.harness.experiments import richardson_limit, verify_fast_exit, verify_hardy_tails, verify_long_stay
from brownexit.harness.lemma import check_lemma1, lemma1_bound
from brownexit.harness.schlicht import schlicht_entry
from brownexit.kernels import ball_exit_cdf, ball_survival, mcconnell_rate
from brownexit.pde import exit_cdf_flux, solve_killed_density, survival_curve
from brownexit.sampler import empirical_cdf, fit_lambda, hit_before_exit, ks_two_sample, wos_exit

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
DISK = Ball([0.0, 0.0], 1.0)
J01_SQ = float(jn_zeros(0, 1)[0] ** 2)


@pytest.fixture
def report(capsys):
    def emit(n: int, ok: bool, detail: str):
        with capsys.disabled():
            print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'} ({detail})")

    return emit


def test_criterion_01_disk_exit_law(report):
    start = time.perf_counter()
    t = np.geomspace(0.05, 4.0, 40)
    series = ball_exit_cdf(t)
    pde = exit_cdf_flux(DISK, [0.0, 0.0], t).cdf
    pde_err = float(np.max(np.abs(pde - series)))
    est = empirical_cdf(wos_exit(DISK, [0.0, 0.0], 1e-4, 100_000, 101), t, alpha=0.01)
    inside = bool(np.all(est.contains(series)))
    elapsed = time.perf_counter() - start
    ok = pde_err <= 1e-3 and inside and elapsed < 120
    report(1, ok, f"PDE-series {pde_err:.2e} <= 1e-3, WOS in 99% DKW band: {inside}, {elapsed:.0f}s < 120s")
    assert ok


def test_criterion_02_fundamental_frequency(report):
    t = np.linspace(0.5, 4.0, 60)
    lam_disk = fit_lambda((t, survival_curve(DISK, [0.0, 0.0], t)), (1.0, 4.0)).lam
    lam_strip = fit_lambda((t, survival_curve(Strip(math.pi / 4), [0.0, 0.0], t)), (1.0, 4.0)).lam
    orders = {}
    for name in ("strip", "halfplane"):
        res = verify_long_stay(schlicht_entry(name), np.linspace(1, 10, 19))
        orders[name] = res.verdict("lambda_order").passed
    ok = abs(lam_disk / J01_SQ - 1) <= 0.02 and abs(lam_strip / 4 - 1) <= 0.05 and all(orders.values())
    report(2, ok, f"lambda(disk) {lam_disk:.5f}, lambda(strip) {lam_strip:.5f}, orderings {orders}")
    assert ok


def test_criterion_03_long_stays(report):
    start = time.perf_counter()
    t = np.linspace(1, 10, 19)
    hp = verify_long_stay(schlicht_entry("halfplane"), t)
    holds_hp = bool(np.all(hp.column("difference") > 0))
    strip = verify_long_stay(schlicht_entry("strip"), t)
    holds_strip = bool(np.all(strip.column("difference") > 0))
    at1 = hp.table[0]
    elapsed = time.perf_counter() - start
    ok = holds_hp and holds_strip and hp.passed and strip.passed and elapsed < 300
    report(
        3,
        ok,
        f"halfplane holds on [1,10]: {holds_hp} (t=1: {at1[1]:.4f} vs {at1[2]:.4f}), strip: {holds_strip}, {elapsed:.0f}s < 300s",
    )
    assert ok


def test_criterion_04_fast_exits(report):
    balls = verify_fast_exit(Ball([0.0, 0.0], 0.5), DISK, [0.2, 0.1, 0.05])
    limit = balls.summary["limit"]
    a = wos_exit(Punctured(DISK, ([0.0, 0.0],)), [0.0, 0.0], 1e-4, 100_000, 401)
    b = wos_exit(DISK, [0.0, 0.0], 1e-4, 100_000, 402)
    _, p = ks_two_sample(a, b)
    ok = abs(limit / 0.75 - 1) <= 0.15 and p >= 0.01
    report(4, ok, f"extrapolated limit {limit:.5f} vs 0.75 +/- 15%, punctured KS p = {p:.3f} >= 0.01")
    assert ok


def test_criterion_05_lemma(report):
    start = time.perf_counter()
    c = lemma1_bound(ClosedBall([0.5, 0.0], 0.1), [0.4, 0.0], 0.1)
    chk = check_lemma1(c, points=20)
    elapsed = time.perf_counter() - start
    worst = float(np.min(chk.probability / chk.bound))
    ok = chk.passed and len(chk.t) == 20 and c.exponent == pytest.approx(0.125) and elapsed < 300
    report(5, ok, f"C {c.C:.5f}, T {c.T:.5g}, min P/bound {worst:.3g} over 20 t, {elapsed:.0f}s < 300s")
    assert ok


def test_criterion_06_mcconnell_rate(report):
    t = np.array([0.2, 0.1, 0.05])
    rate_pde, _ = richardson_limit(t, -2 * t * np.log(exit_cdf_flux(DISK, [0.0, 0.0], t).cdf))
    rate_series, _ = richardson_limit(t, -2 * t * np.log(ball_exit_cdf(t)))
    r = np.array([mcconnell_rate(m) for m in range(3, 1000)])
    mono = bool(np.all(np.diff(r) > 0) and np.all(r < 0.5))
    ok = 0.9 <= rate_pde <= 1.1 and 0.9 <= rate_series <= 1.1 and mono
    report(6, ok, f"rate PDE {rate_pde:.4f}, series {rate_series:.4f} in [0.9, 1.1], mcconnell_rate monotone < 1/2: {mono}")
    assert ok


def test_criterion_07_capacity(report):
    checks = {}
    checks["c2 disk"] = energy_capacity(ClosedBall([0.0, 0.0], 0.25), 2).value / 0.25 - 1, 0.01
    checks["c2 segment"] = energy_capacity(Segment([-2.0, 0.0], [2.0, 0.0]), 2).value - 1, 0.02
    checks["c3 ball"] = energy_capacity(ClosedBall([0.0, 0.0, 0.0], 1.0), 3).value - 1, 0.02
    D, K = Ball([0.0, 0.0], math.e), ClosedBall([0.0, 0.0], 1.0)
    I = dirichlet_condenser(D, K).value
    M = equilibrium_mass(D, K).value
    checks["condenser"] = I / (2 * math.pi) - 1, 0.01
    checks["mass"] = M / math.pi - 1, 0.02
    checks["I = 2M"] = I / (2 * M) - 1, 0.03
    outer = Ball([0.0, 0.0], 2.0)
    point = hit_before_exit(outer, Singleton([0.5, 0.0]), [0.0, 0.0], 1_000_000, 701, engine="em", dt=1e-2)
    seg = hit_before_exit(outer, Segment([0.3, 0.0], [0.7, 0.0]), [0.0, 0.0], 10_000, 702)
    bad = [k for k, (err, tol) in checks.items() if abs(err) > tol]
    ok = not bad and point.hits == 0 and point.count == 1_000_000 and seg.ci[0] > 0
    errs = ", ".join(f"{k} {err:+.2e}" for k, (err, _) in checks.items())
    report(7, ok, f"{errs}; point hits {point.hits}/1e6, segment CI low {seg.ci[0]:.3f}")
    assert ok


def test_criterion_08_radial_monotonicity(report):
    times = np.geomspace(0.005, 2.0, 40)
    counts = {}
    for n in (2, 3):
        f = solve_killed_density(Ball(np.zeros(n), 1.0), np.zeros(n), 2.0, times=times)
        tol = 2 * f.h**2
        counts[n] = sum(int(np.sum(np.diff(p) > tol)) for p in f.snapshots), sum(int(np.sum(np.diff(p) >= 0)) for p in f.snapshots)
    ok = all(c[0] == 0 for c in counts.values())
    report(8, ok, "violations above 2h^2 / non-strict steps: " + ", ".join(f"n={n}: {a}/{b}" for n, (a, b) in counts.items()))
    assert ok


def test_criterion_09_tail_exponents(report):
    res = verify_hardy_tails(schlicht_entry("sector", math.pi / 2), schlicht_entry("halfplane"), window=(10.0, 100.0), samples=100_000, seed=901)
    v = {x.name: x for x in res.verdicts}
    ok = all(x.passed for x in v.values())
    report(
        9,
        ok,
        f"H(sector) {v['H_U'].value:.4f} [{v['H_U'].passed}], H(halfplane) {v['H_W'].value:.4f} [{v['H_W'].passed}], "
        f"CIs disjoint [{v['ordering'].passed}], ratio growth {v['ratio_growth'].value:.3f} >= 5 [{v['ratio_growth'].passed}]",
    )
    assert ok


COMMANDS = {
    "simulate_disk.json": "simulate",
    "pde_disk.json": "pde",
    "capacity_segment.json": "capacity",
    "lambda_disk.json": "lambda",
    "tails_halfplane.json": "tails",
    "fast_exit_balls.json": "verify-fast-exit",
    "fast_exit_punctured.json": "verify-fast-exit",
    "halfplane.json": "verify-long-stay",
    "strip.json": "verify-long-stay",
    "lemma1.json": "verify-lemma1",
    "hardy.json": "verify-hardy",
}


def test_criterion_10_reproducibility(report, tmp_path):
    assert sorted(COMMANDS) == sorted(p.name for p in CONFIGS.glob("*.json"))
    differ = []
    for name, cmd in COMMANDS.items():
        blobs = []
        for threads in (1, 4):
            out = tmp_path / f"{Path(name).stem}-{threads}.csv"
            code = run_cli([cmd, "--config", str(CONFIGS / name), "--seed", "12345", "--out", str(out), "--threads", str(threads)])
            assert code in (0, 1), (name, code)
            m = json.loads(manifest_path(out).read_text())
            m.pop("runtime")
            m.pop("csv")
            blobs.append((out.read_bytes(), m))
        if blobs[0] != blobs[1]:
            differ.append(name)
    tables = [tmp_path / "t1.json", tmp_path / "t2.json"]
    for p in tables:
        assert run_cli(["dump-tables", "--out", str(p)]) == 0
    if tables[0].read_bytes() != tables[1].read_bytes():
        differ.append("dump-tables")
    ok = not differ
    report(10, ok, f"{len(COMMANDS) + 1} runs byte-identical across --threads 1/4" if ok else f"differ: {differ}")
    assert ok
