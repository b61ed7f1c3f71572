"""Monte Carlo exit times: Euler-Maruyama with bridge correction and walk on spheres.

All randomness comes from :class:`brownexit.rng.CounterStream`, addressed by
``(sample index, step, slot)``.  Samples are processed in fixed chunks of
``CHUNK`` indices, so the output is bit-identical for any number of threads.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from brownexit.geometry import Domain, Excised, GeometryError, GridMask, Punctured, as_point
from brownexit.kernels import ball_exit_quantile
from brownexit.rng import CounterStream

CHUNK = 8192

# slots inside one (sample, step) counter
_SLOT_NORMAL = 0  # uses slots 0 and 1
_SLOT_BRIDGE = 2


@dataclass
class ExitSampleBatch:
    """Exit times and exit points with enough provenance to replay them."""

    domain: dict
    sampler: str
    params: dict
    seed: int
    times: np.ndarray
    points: np.ndarray
    censored: np.ndarray
    steps: np.ndarray
    tags: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.times)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def sidecar(self) -> dict:
        return {
            "domain": self.domain,
            "sampler": self.sampler,
            "params": self.params,
            "seed": self.seed,
            "count": len(self),
            "censored": np.nonzero(self.censored)[0].tolist(),
        }

    def write(self, path) -> None:
        """CSV (index, exit_time, exit_x, exit_y[, exit_z]) plus a ``.json`` sidecar."""
        path = Path(path)
        cols = ["index", "exit_time", "exit_x", "exit_y", "exit_z"][: 2 + self.dim]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for i, (t, x) in enumerate(zip(self.times, self.points)):
                w.writerow([i, f"{t:.17g}"] + [f"{c:.17g}" for c in x])
        path.with_suffix(".json").write_text(json.dumps(self.sidecar(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def read(cls, path) -> "ExitSampleBatch":
        path = Path(path)
        side = json.loads(path.with_suffix(".json").read_text())
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        censored = np.zeros(len(data), dtype=bool)
        censored[side["censored"]] = True
        return cls(
            domain=side["domain"],
            sampler=side["sampler"],
            params=side["params"],
            seed=side["seed"],
            times=data[:, 1],
            points=data[:, 2:],
            censored=censored,
            steps=np.zeros(len(data), dtype=np.int64),
        )


def _exit_region(domain: Domain):
    """Membership ignoring punctures: an isolated point is never hit."""
    return domain.base if isinstance(domain, Punctured) else domain


def _domain_id(domain: Domain) -> dict:
    try:
        return domain.to_config()
    except NotImplementedError:
        return {"type": type(domain).__name__}


def _run_chunks(fn, n: int, threads: int):
    starts = list(range(0, n, CHUNK))
    ranges = [np.arange(s, min(s + CHUNK, n), dtype=np.uint64) for s in starts]
    if threads > 1 and len(ranges) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(fn, ranges))
    else:
        parts = [fn(r) for r in ranges]
    return [np.concatenate(p) for p in zip(*parts)]


def _check_start(domain: Domain, x0):
    x0 = as_point(x0, domain.dim)
    if not domain.admits_start(x0):
        raise GeometryError("x0 must lie inside the domain")
    return x0


def em_exit(
    domain: Domain,
    x0,
    dt: float,
    n: int,
    seed: int,
    t_max: float | None = None,
    bridge: bool = True,
    threads: int = 1,
    max_steps: int = 10**8,
) -> ExitSampleBatch:
    """Euler-Maruyama exit times of ``n`` paths from ``x0``.

    After each step the path exits if it left the domain or, with ``bridge``,
    with the Brownian-bridge crossing probability ``exp(-2 d1 d2 / dt)`` of the
    nearest boundary plane, ``d1, d2`` being the regular-boundary distances at
    both ends.  The exit time is the end of the step and the exit point the
    nearest regular boundary point.  Paths alive at ``t_max`` are censored.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    x0 = _check_start(domain, x0)
    if not domain.regular_primitives and not isinstance(domain, GridMask) and t_max is None:
        raise GeometryError("no regular boundary: a finite t_max is required")
    stream = CounterStream(seed)
    region = _exit_region(domain)
    dim = domain.dim
    sq = math.sqrt(dt)
    step_cap = max_steps if t_max is None else min(max_steps, int(math.ceil(t_max / dt - 1e-9)))

    def chunk(idx):
        m = len(idx)
        X = np.tile(x0, (m, 1))
        T = np.zeros(m)
        P = np.zeros((m, dim))
        S = np.zeros(m, dtype=np.int64)
        cens = np.zeros(m, dtype=bool)
        live = np.arange(m)
        d_old = domain.regular_distance(X) if bridge else None
        k = 0
        while live.size and k < step_cap:
            Z = stream.normal(idx[live], k, _SLOT_NORMAL, dim)
            Xn = X[live] + sq * Z
            out = ~region.contains(Xn)
            d_new = None
            if bridge:
                d_new = domain.regular_distance(Xn)
                u = stream.uniform(idx[live], k, _SLOT_BRIDGE, 1)[:, 0]
                with np.errstate(over="ignore"):
                    pc = np.exp(-2.0 * d_old[live] * d_new / dt)
                out |= u < pc
            k += 1
            if np.any(out):
                done = live[out]
                T[done] = k * dt
                S[done] = k
                P[done] = domain.nearest_regular(Xn[out])[0] if domain.regular_primitives or isinstance(domain, GridMask) else Xn[out]
            X[live] = Xn
            if bridge:
                d_old[live] = d_new
            live = live[~out]
        if live.size:
            T[live] = k * dt
            S[live] = k
            P[live] = X[live]
            cens[live] = True
        return T, P, S, cens

    T, P, S, C = _run_chunks(chunk, n, threads)
    return ExitSampleBatch(
        domain=_domain_id(domain),
        sampler="EM",
        params={"dt": dt, "bridge": bridge, "t_max": t_max, "x0": x0.tolist()},
        seed=int(seed),
        times=T,
        points=P.reshape(-1, dim),
        censored=C.astype(bool),
        steps=S,
    )


def _sphere_directions(u: np.ndarray, dim: int) -> np.ndarray:
    if dim == 2:
        a = 2 * math.pi * u[:, 0]
        return np.column_stack([np.cos(a), np.sin(a)])
    z = 2 * u[:, 0] - 1
    a = 2 * math.pi * u[:, 1]
    r = np.sqrt(np.maximum(0.0, 1 - z * z))
    return np.column_stack([r * np.cos(a), r * np.sin(a), z])


def shell_bias_bound(domain: Domain, eps: float) -> float:
    """Bound on the mean time left when a walk stops in the ``eps`` shell.

    From distance ``eps`` the remaining time is dominated by the exit time of
    the ball of radius ``rho`` enclosing the domain, started ``eps`` inside it:
    ``(rho**2 - (rho - eps)**2) / n <= 2 rho eps / n``.  Unbounded domains have
    no such bound and return ``inf``.
    """
    box = domain.bbox()
    if box is None:
        return math.inf
    rho = 0.5 * float(np.linalg.norm(box[1] - box[0]))
    return 2 * rho * eps / domain.dim


def wos_exit(
    domain: Domain,
    x0,
    eps: float,
    n: int,
    seed: int,
    t_max: float | None = None,
    threads: int = 1,
    max_steps: int = 10**6,
) -> ExitSampleBatch:
    """Walk on spheres with exact ball exit-time draws.

    Each jump goes to a uniform point on the largest sphere around the walker
    that avoids the regular boundary, and adds ``R**2`` times a unit-ball exit
    time (position and time are independent for a ball started at its centre).
    Walks stop inside the ``eps`` shell and are projected onto the boundary.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    if isinstance(domain, GridMask):
        raise GeometryError("walk on spheres needs exact boundary distances; masks are rejected")
    x0 = _check_start(domain, x0)
    if not domain.regular_primitives:
        raise GeometryError("no regular boundary to exit through")
    stream = CounterStream(seed)
    dim = domain.dim
    prims = domain.regular_primitives

    def chunk(idx):
        m = len(idx)
        X = np.tile(x0, (m, 1))
        T = np.zeros(m)
        P = np.zeros((m, dim))
        S = np.zeros(m, dtype=np.int64)
        tag = np.zeros(m, dtype=np.int64)
        cens = np.zeros(m, dtype=bool)
        live = np.arange(m)
        k = 0
        while live.size:
            R = domain.regular_distance(X[live])
            stop = R < eps
            if np.any(stop):
                done = live[stop]
                proj, which = domain.nearest_regular(X[done])
                P[done] = proj
                tag[done] = which
                S[done] = k
            live = live[~stop]
            R = R[~stop]
            if not live.size or k >= max_steps:
                break
            u = stream.uniform(idx[live], k, 0, 3)
            T[live] += R * R * ball_exit_quantile(u[:, 0], dim)
            X[live] += R[:, None] * _sphere_directions(u[:, 1:], dim)
            k += 1
            if t_max is not None:
                over = T[live] >= t_max
                if np.any(over):
                    c = live[over]
                    cens[c] = True
                    P[c] = X[c]
                    S[c] = k
                    live = live[~over]
        if live.size:
            cens[live] = True
            P[live] = X[live]
        if t_max is not None:
            T[cens] = t_max
        return T, P, S, cens, tag

    T, P, S, C, G = _run_chunks(chunk, n, threads)
    tags = np.array([prims[i].tag for i in G.astype(int)])
    return ExitSampleBatch(
        domain=_domain_id(domain),
        sampler="WOS",
        params={"eps": eps, "t_max": t_max, "x0": x0.tolist()},
        seed=int(seed),
        times=T,
        points=P.reshape(-1, dim),
        censored=C.astype(bool),
        steps=S,
        tags=tags,
        meta={"shell_bias_bound": shell_bias_bound(domain, eps)},
    )


# ---------------------------------------------------------------------------
# estimators
# ---------------------------------------------------------------------------


def dkw_halfwidth(n: int, alpha: float) -> float:
    return math.sqrt(math.log(2 / alpha) / (2 * n))


@dataclass
class CdfEstimate:
    t: np.ndarray
    cdf: np.ndarray
    dkw_halfwidth: float
    count: int
    alpha: float

    @property
    def lower(self):
        return np.clip(self.cdf - self.dkw_halfwidth, 0, 1)

    @property
    def upper(self):
        return np.clip(self.cdf + self.dkw_halfwidth, 0, 1)

    def contains(self, truth) -> np.ndarray:
        return np.abs(np.asarray(truth) - self.cdf) <= self.dkw_halfwidth


def _uncensored_horizon(batch: ExitSampleBatch) -> float:
    return float(batch.times[batch.censored].min()) if np.any(batch.censored) else math.inf


def empirical_cdf(batch: ExitSampleBatch, t_grid, alpha: float = 0.01) -> CdfEstimate:
    """Step-function CDF with the two-sided DKW band at confidence ``1 - alpha``."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    t = np.asarray(t_grid, dtype=float)
    if np.any(t > _uncensored_horizon(batch)):
        raise ValueError("grid extends past the censoring time")
    ts = np.sort(batch.times[~batch.censored])
    F = np.searchsorted(ts, t, side="right") / len(batch)
    return CdfEstimate(t, F, dkw_halfwidth(len(batch), alpha), len(batch), alpha)


def ks_two_sample(a: ExitSampleBatch | np.ndarray, b: ExitSampleBatch | np.ndarray):
    """Two-sample Kolmogorov-Smirnov statistic and p-value."""
    ta = a.times if isinstance(a, ExitSampleBatch) else np.asarray(a)
    tb = b.times if isinstance(b, ExitSampleBatch) else np.asarray(b)
    r = stats.ks_2samp(ta, tb)
    return float(r.statistic), float(r.pvalue)


@dataclass
class TailFit:
    exponent: float
    stderr: float
    curvature: float
    curvature_stderr: float
    super_polynomial: bool
    window: tuple[float, float]
    points: int

    def ci(self, level: float = 0.95) -> tuple[float, float]:
        z = stats.norm.ppf(0.5 + level / 2)
        return self.exponent - z * self.stderr, self.exponent + z * self.stderr


def _survival_points(times: np.ndarray, grid: np.ndarray, n: int) -> np.ndarray:
    ts = np.sort(times)
    return (n - np.searchsorted(ts, grid, side="right")) / n


def _loglog_fit(lt, ls):
    A = np.column_stack([np.ones_like(lt), lt - lt.mean(), (lt - lt.mean()) ** 2])
    lin = np.linalg.lstsq(A[:, :2], ls, rcond=None)[0]
    quad = np.linalg.lstsq(A, ls, rcond=None)[0]
    return lin[1], quad[2], float(np.max(np.abs(A[:, :2] @ lin - ls)))


def fit_tail_exponent(data, t_window, points: int = 16, blocks: int = 20) -> TailFit:
    """Slope of ``log P(T > t)`` against ``log t`` on a log-spaced window.

    ``data`` is an :class:`ExitSampleBatch` or a pair ``(t, survival)``.  For
    batches the standard errors come from a delete-one-block jackknife over
    ``blocks`` contiguous index blocks.  The fit is flagged super-polynomial
    when the log-log curvature is significantly negative (batches) or the
    linear fit misses by more than 0.05 in log units (curves).
    """
    a, b = map(float, t_window)
    if not 0 < a < b:
        raise ValueError("window must satisfy 0 < t_start < t_end")
    grid = np.geomspace(a, b, points)
    lt = np.log(grid)
    if isinstance(data, ExitSampleBatch):
        if b > _uncensored_horizon(data):
            raise ValueError("window extends past the censoring time")
        n = len(data)
        exceed = int(np.sum(data.times > a))
        if exceed < 100:
            raise ValueError(f"only {exceed} exceedances at the window start (need 100)")
        S = _survival_points(data.times, grid, n)
        if np.any(S <= 0):
            raise ValueError("no exceedances at the window end")
        slope, curv, _ = _loglog_fit(lt, np.log(S))
        edges = np.linspace(0, n, blocks + 1).astype(int)
        reps = []
        for j in range(blocks):
            keep = np.concatenate([data.times[: edges[j]], data.times[edges[j + 1] :]])
            Sj = _survival_points(keep, grid, len(keep))
            if np.any(Sj <= 0):
                raise ValueError("window end too sparse for the jackknife")
            reps.append(_loglog_fit(lt, np.log(Sj))[:2])
        reps = np.array(reps)
        scale = (blocks - 1) / blocks
        se = np.sqrt(scale * np.sum((reps - reps.mean(axis=0)) ** 2, axis=0))
        flag = bool(curv < 0 and abs(curv) > 3 * se[1])
        return TailFit(-slope, float(se[0]), curv, float(se[1]), flag, (a, b), points)
    t, S = (np.asarray(v, dtype=float) for v in data)
    Sg = np.exp(np.interp(lt, np.log(t), np.log(S)))
    slope, curv, miss = _loglog_fit(lt, np.log(Sg))
    return TailFit(-slope, 0.0, curv, 0.0, bool(miss > 0.05), (a, b), points)


@dataclass
class LambdaFit:
    lam: float
    stderr: float
    window: tuple[float, float]
    nonlinear: bool


def fit_lambda(data, t_window, points: int = 16) -> LambdaFit:
    """``lambda`` from the slope of ``-2 log P(T > t)`` against ``t`` (large-``t`` window)."""
    a, b = map(float, t_window)
    grid = np.linspace(a, b, points)
    if isinstance(data, ExitSampleBatch):
        n = len(data)
        S = _survival_points(data.times, grid, n)
        if np.any(S <= 0):
            raise ValueError("no exceedances at the window end")
        w = S * n / np.maximum(1 - S, 1e-12)  # inverse delta-method variance of log S
    else:
        t, Sc = (np.asarray(v, dtype=float) for v in data)
        S = np.exp(np.interp(grid, t, np.log(Sc)))
        w = np.ones_like(S)
    if S[0] > 0.2:
        raise ValueError("window too early: survival above 0.2 at its start")
    y = -2 * np.log(S)
    A = np.column_stack([np.ones_like(grid), grid])
    sw = np.sqrt(w)
    coef, *_ = np.linalg.lstsq(A * sw[:, None], y * sw, rcond=None)
    resid = y - A @ coef
    dof = max(points - 2, 1)
    cov = np.linalg.inv((A * w[:, None]).T @ A) * float(np.sum(w * resid**2) / dof)
    quad = np.polyfit(grid - grid.mean(), y, 2)
    nonlinear = bool(abs(quad[0]) * (b - a) ** 2 > 0.05 * abs(coef[1]) * (b - a))
    return LambdaFit(float(coef[1]), float(math.sqrt(max(cov[1, 1], 0.0))), (a, b), nonlinear)


@dataclass
class HitEstimate:
    p: float
    stderr: float
    ci: tuple[float, float]
    hits: int
    count: int


def hit_before_exit(
    outer: Domain,
    K,
    x0,
    n: int,
    seed: int,
    eps: float = 1e-4,
    engine: str = "wos",
    dt: float = 1e-3,
    t_max: float | None = None,
    threads: int = 1,
    level: float = 0.95,
) -> HitEstimate:
    """Probability that Brownian motion from ``x0`` reaches ``K`` before leaving ``outer``.

    Paths run in ``outer`` minus ``K``; a walk is a hit when it ends on a piece
    of ``K`` (tag ``inner``).  Point compacts are never reached because they
    are not regular boundary.
    """
    x0 = as_point(x0, outer.dim)
    if K.dim != outer.dim:
        raise GeometryError("dimension mismatch")
    if bool(K.contains(x0)):
        return HitEstimate(1.0, 0.0, (1.0, 1.0), n, n)
    if not outer.contains(x0):
        if float(outer.distance(x0)) <= 1e-12:
            return HitEstimate(0.0, 0.0, (0.0, 0.0), 0, n)
        raise GeometryError("x0 must lie in the outer domain")
    dom = Excised(outer, K)
    if engine == "wos":
        batch = wos_exit(dom, x0, eps, n, seed, t_max=t_max, threads=threads)
        hit = (batch.tags == "inner") & ~batch.censored
    elif engine == "em":
        batch = em_exit(dom, x0, dt, n, seed, t_max=t_max, threads=threads)
        near = np.asarray(K.distance(batch.points)) <= np.asarray(outer.distance(batch.points))
        hit = near & ~batch.censored
    else:
        raise ValueError("engine must be 'wos' or 'em'")
    k = int(hit.sum())
    ci = stats.binomtest(k, n).proportion_ci(confidence_level=level, method="exact")
    p = k / n
    return HitEstimate(p, math.sqrt(max(p * (1 - p), 0.0) / n), (float(ci.low), float(ci.high)), k, n)
