"""Verification experiments: fast exits, long stays and polynomial tail ordering.

Each experiment returns an :class:`ExperimentResult`: a table of plot-ready
columns, a list of verdicts (each carrying the tolerance it used) and the
provenance needed to replay the run from its :class:`ExperimentSpec`.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from brownexit import __version__
from brownexit.geometry import Domain, GeometryError, Strip, d_regular
from brownexit.harness.schlicht import SchlichtEntry
from brownexit.kernels import ball_survival, halfspace_survival
from brownexit.pde import exit_cdf_flux, survival_curve
from brownexit.sampler import fit_lambda, fit_tail_exponent, ks_two_sample, wos_exit

#: Smallest exit probability the flux engine is trusted to resolve.
FLUX_FLOOR = 1e-12
_SEED_MIX = 0x9E3779B97F4A7C15


def derived_seed(seed: int, k: int) -> int:
    """Independent 64-bit seed for the ``k``-th sampled domain of an experiment."""
    return (int(seed) + k * _SEED_MIX) % 2**64


@dataclass
class Verdict:
    name: str
    passed: bool
    value: float
    tolerance: str
    detail: str = ""

    def __post_init__(self):
        self.passed = bool(self.passed)
        self.value = float(self.value)


@dataclass
class ExperimentSpec:
    theorem: str
    params: dict
    seed: int | None = None
    tolerances: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    columns: list[str]
    table: np.ndarray
    verdicts: list[Verdict]
    summary: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(v.passed for v in self.verdicts)

    def verdict(self, name: str) -> Verdict:
        return next(v for v in self.verdicts if v.name == name)

    def column(self, name: str) -> np.ndarray:
        return self.table[:, self.columns.index(name)]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.columns)
            for row in self.table:
                w.writerow([f"{v:.17g}" for v in row])

    def to_dict(self) -> dict:
        return {
            "spec": asdict(self.spec),
            "columns": self.columns,
            "verdicts": [asdict(v) for v in self.verdicts],
            "summary": self.summary,
            "provenance": self.provenance,
            "passed": self.passed,
        }


def _provenance(**extra) -> dict:
    return {"package_version": __version__, **extra}


def _survival_from_batch(batch, t: np.ndarray) -> np.ndarray:
    alive = np.asarray(batch.censored)[:, None] | (batch.times[:, None] > t[None, :])
    return alive.mean(axis=0)


# ---------------------------------------------------------------------------
# fast exits
# ---------------------------------------------------------------------------


def richardson_limit(t, y) -> tuple[float, np.ndarray]:
    """Value at ``t = 0`` of the fit ``y = c0 + c1 t + c2 t log t`` (exact for three points)."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(t) < 3:
        raise ValueError("need at least three times")
    A = np.column_stack([np.ones_like(t), t, t * np.log(t)])
    coef = np.linalg.solve(A, y) if len(t) == 3 else np.linalg.lstsq(A, y, rcond=None)[0]
    return float(coef[0]), coef


def verify_fast_exit(
    U: Domain,
    W: Domain,
    t_grid,
    resolution: float | None = None,
    margin: float = 0.25,
    ks_samples: int = 100_000,
    seed: int = 0,
    eps: float = 1e-4,
    threads: int = 1,
) -> ExperimentResult:
    """Small-time behaviour of ``r(t) = P(T_U < t) / P(T_W < t)``.

    The limit of ``2 t log r(t)`` is extrapolated from the grid.  A positive
    limit means ``r`` blows up like ``exp(c / 2t)``.  When either domain has
    irregular boundary points the flux solve sees only the regular part, so
    the exit laws are additionally compared by a two-sample KS test on
    walk-on-spheres samples.
    """
    t = np.asarray(t_grid, dtype=float)
    if U.dim != W.dim:
        raise GeometryError("dimension mismatch")
    # with d_regular(U) > d_regular(W) the limit is negative and r(t) -> 0
    dU, dW = d_regular(U)[1], d_regular(W)[1]
    FU = exit_cdf_flux(U, np.zeros(U.dim), t, resolution=resolution)
    FW = exit_cdf_flux(W, np.zeros(W.dim), t, resolution=resolution)
    if np.any(FU.cdf < FLUX_FLOOR) or np.any(FW.cdf < FLUX_FLOOR):
        raise ValueError(f"t grid outside the resolvable range (exit probability below {FLUX_FLOOR:g})")
    y = 2 * t * (np.log(FU.cdf) - np.log(FW.cdf))
    limit, coef = richardson_limit(t, y)
    diverges = limit >= margin
    expect = dU < dW
    verdicts = [
        Verdict(
            "divergence",
            diverges == expect,
            limit,
            f"diverges iff limit >= {margin:g}",
            "diverges" if diverges else "no divergence",
        )
    ]
    summary = {"limit": limit, "coefficients": coef.tolist(), "d_regular": [dU, dW], "verdict": verdicts[0].detail}
    if U.has_irregular or W.has_irregular:
        a = wos_exit(U, np.zeros(U.dim), eps, ks_samples, derived_seed(seed, 0), threads=threads)
        b = wos_exit(W, np.zeros(W.dim), eps, ks_samples, derived_seed(seed, 1), threads=threads)
        stat, p = ks_two_sample(a, b)
        verdicts.append(Verdict("ks_equal_laws", p >= 0.01, p, "KS p-value >= 0.01", f"D = {stat:.6g}"))
        summary["ks"] = {"statistic": stat, "pvalue": p, "samples": ks_samples}
    table = np.column_stack([t, FU.cdf, FW.cdf, np.exp(y / (2 * t)), y])
    spec = ExperimentSpec(
        "fast-exit",
        {"U": U.to_config(), "W": W.to_config(), "t": t.tolist(), "resolution": resolution, "ks_samples": ks_samples, "eps": eps},
        seed,
        {"margin": margin, "ks_level": 0.01},
    )
    prov = _provenance(h_U=FU.h, h_W=FW.h, engine="exit_cdf_flux")
    return ExperimentResult(spec, ["t", "F_U", "F_W", "ratio", "two_t_log_ratio"], table, verdicts, summary, prov)


# ---------------------------------------------------------------------------
# long stays
# ---------------------------------------------------------------------------


class _Survival:
    """``P(T_D > t)`` from the cheapest available engine for a catalog entry."""

    def __init__(self, entry: SchlichtEntry, t_max: float, samples: int, seed: int, eps: float, threads: int, resolution):
        self.entry = entry
        self.t_max = t_max
        self.resolution = resolution
        self.batch = None
        dom = entry.domain
        if entry.id == "halfplane":
            self.method = "closed-form"
        elif entry.id == "disk":
            self.method = "series"
        elif isinstance(dom, Strip) or dom.bounded:
            self.method = "pde"
        else:
            self.method = "monte-carlo"
            self.batch = wos_exit(dom, np.zeros(2), eps, samples, seed, t_max=t_max, threads=threads)

    def __call__(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if self.method == "closed-form":
            return halfspace_survival(t, float(self.entry.domain.offset))
        if self.method == "series":
            return np.asarray(ball_survival(t), dtype=float)
        if self.method == "pde":
            return survival_curve(self.entry.domain, np.zeros(2), t, self.resolution)
        return _survival_from_batch(self.batch, t)


def _crossover(diff_at, t: np.ndarray, d: np.ndarray, rtol: float = 1e-6, max_halvings: int = 20):
    """Smallest ``t0`` with ``diff > 0`` on ``[t0, t_max]``; ``None`` when ``diff(t_max) <= 0``.

    A grid node with ``diff == 0`` does not count as holding, so ties move
    ``t0`` to the right.  The bracket found on the grid is refined by
    bisection; if the inequality already holds at the first node the search
    walks left by halving.
    """
    bad = np.nonzero(d <= 0)[0]
    if bad.size and bad[-1] == len(t) - 1:
        return None, False
    if bad.size:
        lo, hi = float(t[bad[-1]]), float(t[bad[-1] + 1])
    else:
        hi = float(t[0])
        lo = hi / 2
        k = 0
        while float(diff_at(lo)[0]) > 0:
            hi, lo = lo, lo / 2
            k += 1
            if k >= max_halvings:
                return hi, True
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        if float(diff_at(mid)[0]) > 0:
            hi = mid
        else:
            lo = mid
    return hi, False


def _fitted_lambda(curve_t, curve_S, lam_ref):
    """Fit on the last half of the curve; falls back to the reference when the
    survival has not decayed below 0.2 there."""
    t_hi = float(curve_t[-1])
    try:
        fit = fit_lambda((curve_t, curve_S), (t_hi / 2, t_hi))
        return fit.lam, "fit"
    except ValueError:
        return lam_ref, "reference"


def verify_long_stay(
    entry: SchlichtEntry,
    t_grid,
    samples: int = 20_000,
    seed: int = 0,
    eps: float = 1e-4,
    threads: int = 1,
    resolution: float | None = None,
) -> ExperimentResult:
    """Check ``P(T_D > t) > P(T_disk > t)`` for every grid ``t`` past the crossover."""
    if entry.id == "disk":
        raise GeometryError("the comparison needs a catalog domain other than the disk")
    t = np.sort(np.asarray(t_grid, dtype=float))
    if t[0] <= 0:
        raise ValueError("times must be positive")
    SD = _Survival(entry, float(t[-1]), samples, derived_seed(seed, 0), eps, threads, resolution)

    def diff_at(s):
        return SD(s) - np.asarray(ball_survival(np.atleast_1d(s)), dtype=float)

    sD = SD(t)
    sB = np.asarray(ball_survival(t), dtype=float)
    d = sD - sB
    t0, below_scan = _crossover(diff_at, t, d)
    holds = d > 0
    lam_disk, _ = _fitted_lambda(t, sB, entry.lambda_ref)
    lam_D, lam_how = _fitted_lambda(t, sD, entry.lambda_ref) if SD.method != "monte-carlo" else (entry.lambda_ref, "reference")
    verdicts = []
    if t0 is None:
        ratio = sD / sB
        verdicts.append(
            Verdict("crossover", False, float(np.max(ratio)), "P(T_D > t) > P(T_disk > t) on [t0, t_max]", "inconclusive")
        )
    else:
        tail = t >= t0
        verdicts.append(
            Verdict(
                "crossover",
                bool(np.all(holds[tail])),
                t0,
                "P(T_D > t) > P(T_disk > t) on [t0, t_max]",
                "t0 below the halving scan" if below_scan else "",
            )
        )
    verdicts.append(Verdict("lambda_order", lam_D < lam_disk, lam_D, f"lambda(D) < lambda(disk) = {lam_disk:.6g}", lam_how))
    table = np.column_stack([t, sD, sB, d])
    spec = ExperimentSpec(
        "long-stay",
        {"entry": entry.to_config(), "t": t.tolist(), "samples": samples, "eps": eps, "resolution": resolution},
        seed,
        {"strict": "difference > 0"},
    )
    summary = {"t0": t0, "method": SD.method, "lambda_D": lam_D, "lambda_disk": lam_disk, "lambda_source": lam_how}
    return ExperimentResult(spec, ["t", "survival_D", "survival_disk", "difference"], table, verdicts, summary, _provenance(method=SD.method))


# ---------------------------------------------------------------------------
# polynomial tails
# ---------------------------------------------------------------------------


def verify_hardy_tails(
    U: SchlichtEntry,
    W: SchlichtEntry,
    window=(10.0, 100.0),
    samples: int = 100_000,
    seed: int = 0,
    eps: float = 1e-4,
    threads: int = 1,
    points: int = 16,
    growth: float = 5.0,
    rel_tol: float = 0.10,
) -> ExperimentResult:
    """Tail exponents of two polynomial-tail entries and the growth of their tail ratio.

    This is a finite-window proxy: a ratio ``P(T_W > t) / P(T_U > t)`` that
    grows by at least ``growth`` across the window stands in for an unbounded
    limsup, which no finite computation can certify.
    """
    for e in (U, W):
        if e.exponential_tail:
            raise GeometryError(f"entry {e.id!r} has an exponential tail")
    a, b = map(float, window)
    bU = wos_exit(U.domain, np.zeros(2), eps, samples, derived_seed(seed, 0), t_max=b, threads=threads)
    bW = wos_exit(W.domain, np.zeros(2), eps, samples, derived_seed(seed, 1), t_max=b, threads=threads)
    # fits stop just short of the censoring time
    fw = (a, b * (1 - 1e-9))
    fU = fit_tail_exponent(bU, fw, points)
    fW = fit_tail_exponent(bW, fw, points)
    grid = np.geomspace(a, fw[1], points)
    sU = _survival_from_batch(bU, grid)
    sW = _survival_from_batch(bW, grid)
    ratio = sW / sU
    factor = float(ratio[-1] / ratio[0])
    slope = fU.exponent - fW.exponent
    slope_se = math.hypot(fU.stderr, fW.stderr)
    verdicts = []
    for name, e, f in (("H_U", U, fU), ("H_W", W, fW)):
        verdicts.append(
            Verdict(name, abs(f.exponent - e.H_ref) <= rel_tol * e.H_ref, f.exponent, f"{e.H_ref:g} +/- {rel_tol:.0%}", f"stderr {f.stderr:.3g}")
        )
    if U.to_config() == W.to_config():
        verdicts.append(Verdict("ratio_bounded", abs(slope) <= 3 * slope_se, slope, "|log-ratio slope| <= 3 stderr", f"growth {factor:.4g}"))
    else:
        loU, hiU = fU.ci()
        loW, hiW = fW.ci()
        verdicts.append(Verdict("ordering", loU > hiW, slope, "95% CIs disjoint with H(U) > H(W)", f"CI U [{loU:.4g}, {hiU:.4g}], W [{loW:.4g}, {hiW:.4g}]"))
        verdicts.append(Verdict("ratio_growth", factor >= growth, factor, f"ratio growth >= {growth:g}x over the window", ""))
    table = np.column_stack([grid, sU, sW, ratio])
    spec = ExperimentSpec(
        "hardy-tails",
        {"U": U.to_config(), "W": W.to_config(), "window": [a, b], "samples": samples, "eps": eps, "points": points},
        seed,
        {"growth": growth, "rel_tol": rel_tol, "ci_level": 0.95},
    )
    summary = {
        "H_U": float(fU.exponent),
        "H_W": float(fW.exponent),
        "stderr_U": fU.stderr,
        "stderr_W": fW.stderr,
        "growth": factor,
        "proxy": "finite-window ratio growth, not a limsup",
    }
    return ExperimentResult(spec, ["t", "survival_U", "survival_W", "ratio"], table, verdicts, summary, _provenance(engine="wos"))
