"""Closed-form and series formulas for Brownian exit problems.

Conventions: Brownian motion has generator ``Delta/2``; Green's functions are
occupation densities ``G_D(x, y) = int_0^inf p_D(s, x, y) ds``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.special import erf, erfc, jv

from brownexit.geometry import Ball, Domain, GeometryError, HalfSpace, as_point

#: Below ``t / R**2 = SERIES_SWITCH`` the eigenfunction series loses exit
#: probabilities to cancellation; the radial flux engine takes over.
SERIES_SWITCH = 0.2

BESSEL_ORDERS = {2: 0.0, 3: 0.5}


def heat_kernel(t: float, x, y, n: int | None = None) -> float:
    """Free transition density ``(2 pi t)^(-n/2) exp(-|x-y|^2 / 2t)``."""
    if not t > 0:
        raise ValueError("heat kernel needs t > 0")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = x.shape[-1] if n is None else n
    d2 = np.sum((x - y) ** 2, axis=-1)
    return (2 * math.pi * t) ** (-n / 2) * np.exp(-d2 / (2 * t))


# ---------------------------------------------------------------------------
# Bessel zeros
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BesselTable:
    """Positive zeros ``j_{nu,k}`` of ``J_nu`` and ``|J_{nu+1}(j_{nu,k})|``."""

    nu: float
    zeros: np.ndarray
    jnext: np.ndarray

    @classmethod
    def compute(cls, nu: float, count: int = 64) -> "BesselTable":
        # For 0 <= nu <= 1/2 consecutive zeros are at least ~3.1 apart and
        # j_{nu,k} lies in ((k + nu/2 - 3/4) pi, (k + nu/2 + 1/4) pi).
        zeros = np.empty(count)
        for k in range(1, count + 1):
            a = (k + nu / 2 - 0.75) * math.pi
            b = (k + nu / 2 + 0.25) * math.pi
            zeros[k - 1] = _bisect(lambda x: float(jv(nu, x)), max(a, 1e-6), b)
        return cls(nu, zeros, np.abs(jv(nu + 1, zeros)))

    def to_dict(self) -> dict:
        return {"nu": self.nu, "zeros": self.zeros.tolist(), "abs_J_nu_plus_1": self.jnext.tolist()}


def _bisect(f, a: float, b: float) -> float:
    fa, fb = f(a), f(b)
    if fa == 0:
        return a
    if fa * fb > 0:
        raise RuntimeError(f"no sign change on [{a}, {b}]")
    while True:
        m = 0.5 * (a + b)
        if m <= a or m >= b:
            return m
        fm = f(m)
        if fm == 0:
            return m
        if fa * fm < 0:
            b = m
        else:
            a, fa = m, fm


@lru_cache(maxsize=None)
def bessel_table(n: int) -> BesselTable:
    if n not in BESSEL_ORDERS:
        raise ValueError("dimension must be 2 or 3")
    return BesselTable.compute(BESSEL_ORDERS[n])


def dump_tables() -> str:
    return json.dumps({f"n={n}": bessel_table(n).to_dict() for n in (2, 3)}, indent=2)


@lru_cache(maxsize=None)
def _series_coefficients(n: int) -> tuple[np.ndarray, np.ndarray]:
    tab = bessel_table(n)
    nu, j = tab.nu, tab.zeros
    sign = np.sign(jv(nu + 1, j))
    c = 2 ** (1 - nu) * j ** (nu - 1) / (math.gamma(nu + 1) * sign * tab.jnext)
    return j, c


# ---------------------------------------------------------------------------
# exit time of a ball, started at its center
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SeriesTail:
    terms_used: int
    truncation_bound: float


def ball_survival_series(t: float, R: float = 1.0, n: int = 2) -> tuple[float, SeriesTail]:
    """Eigenfunction series for ``P^0(T_B(0,R) > t)`` with a tail bound.

    The coefficients satisfy ``|c_k| <= 2`` and consecutive zeros are more than
    3 apart, which bounds the omitted terms by a geometric series.
    """
    if not R > 0:
        raise ValueError("radius must be positive")
    if not t > 0:
        raise ValueError("the series needs t > 0")
    s = t / R**2
    j, c = _series_coefficients(n)
    terms = np.exp(-0.5 * j * j * s)
    used = len(j)
    for k in range(len(j)):
        jn = j[k] if k < len(j) else j[-1]
        bound = 2 * math.exp(-0.5 * jn * jn * s) / (1 - math.exp(-3 * jn * s))
        if bound < 1e-18:
            used = k
            break
    if used == len(j):
        jn = j[-1] + 3.0
        bound = 2 * math.exp(-0.5 * jn * jn * s) / (1 - math.exp(-3 * jn * s))
    return float(np.dot(c[:used], terms[:used])), SeriesTail(used, bound)


def _series_s(s: np.ndarray, n: int, derivative: bool = False) -> np.ndarray:
    j, c = _series_coefficients(n)
    # terms below exp(-40) relative to |c_k| <= 2 cannot affect a double
    k = max(1, int(np.searchsorted(j * j, 80.0 / max(float(np.min(s)), 1e-300))))
    j, c = j[:k], c[:k]
    e = np.exp(-0.5 * np.outer(s, j * j))
    if derivative:
        return e @ (c * 0.5 * j * j)
    return e @ c


class _SmallTimeExitLaw:
    """Exit CDF of the unit ball for ``s < SERIES_SWITCH`` from the radial flux engine.

    Two resolutions are combined by Richardson extrapolation of ``log F``; the
    result is splined in ``log s`` after removing the ``-1/(2s)`` singular part.
    """

    S_LO = 0.008
    H = 1.0 / 400

    def __init__(self, n: int):
        from brownexit.pde.line import line_operator, march_line

        s = np.geomspace(self.S_LO, SERIES_SWITCH * 1.05, 400)
        logs = []
        for h in (self.H, self.H / 2):
            run = march_line(line_operator(1.0, n, h), s[-1], times=s)
            logs.append(np.log(run.snap_absorbed))
        logF = (4 * logs[1] - logs[0]) / 3
        self.n = n
        self.spline = CubicSpline(np.log(s), logF + 0.5 / s)

    def log_cdf(self, s):
        s = np.asarray(s, dtype=float)
        ls = np.log(s)
        lo = math.log(self.S_LO)
        y = np.where(ls >= lo, self.spline(np.maximum(ls, lo)), self.spline(lo) + self.spline(lo, 1) * (ls - lo))
        return y - 0.5 / s

    def dlog_cdf(self, s):
        s = np.asarray(s, dtype=float)
        ls = np.maximum(np.log(s), math.log(self.S_LO))
        return self.spline(ls, 1) / s + 0.5 / (s * s)


@lru_cache(maxsize=None)
def _small_time(n: int) -> _SmallTimeExitLaw:
    return _SmallTimeExitLaw(n)


def _unit_log_cdf(s: np.ndarray, n: int) -> np.ndarray:
    out = np.empty_like(s)
    small = s < SERIES_SWITCH
    if np.any(small):
        out[small] = _small_time(n).log_cdf(s[small])
    if np.any(~small):
        out[~small] = np.log1p(-_series_s(s[~small], n))
    return out


def _unit_survival(s: np.ndarray, n: int) -> np.ndarray:
    out = np.ones_like(s)
    small = (s > 0) & (s < SERIES_SWITCH)
    if np.any(small):
        out[small] = -np.expm1(_small_time(n).log_cdf(s[small]))
    big = s >= SERIES_SWITCH
    if np.any(big):
        out[big] = _series_s(s[big], n)
    return out


def _check_dim(n):
    if n not in (2, 3):
        raise ValueError("dimension must be 2 or 3")


def ball_survival(t, R: float = 1.0, n: int = 2):
    """``P^0(T_B(0,R) > t)`` for Brownian motion started at the center."""
    if not R > 0:
        raise ValueError("radius must be positive")
    _check_dim(n)
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0):
        raise ValueError("t must be nonnegative")
    out = _unit_survival(np.atleast_1d(t_arr / R**2), n)
    return float(out[0]) if t_arr.ndim == 0 else out.reshape(t_arr.shape)


def ball_exit_cdf(t, R: float = 1.0, n: int = 2):
    """``P^0(T_B(0,R) <= t)``, accurate in relative terms for small ``t``."""
    if not R > 0:
        raise ValueError("radius must be positive")
    _check_dim(n)
    t_arr = np.asarray(t, dtype=float)
    s = np.atleast_1d(t_arr / R**2)
    out = np.zeros_like(s)
    pos = s > 0
    out[pos] = np.exp(_unit_log_cdf(s[pos], n))
    return float(out[0]) if t_arr.ndim == 0 else out.reshape(t_arr.shape)


class _QuantileTable:
    """Inverse exit-time CDF of the unit ball: 2048 bracketing nodes + Newton."""

    SIZE = 2048

    def __init__(self, n: int):
        j, c = _series_coefficients(n)
        lam = j[0] ** 2
        t_hi = 2.0 / lam * (700 + math.log(abs(c[0])))
        t = np.unique(
            np.concatenate(
                [np.geomspace(_SmallTimeExitLaw.S_LO, 1.0, self.SIZE // 2), np.linspace(1.0, t_hi, self.SIZE // 2)]
            )
        )
        self.n = n
        self.t = t
        self.logF = _unit_log_cdf(t, n)
        self.logS = np.log(np.maximum(_unit_survival(t, n), 1e-320))

    def _phi(self, t, logu, log1mu, upper):
        """Increasing residual in log-CDF (lower half) or minus log-survival (upper half)."""
        small = t < SERIES_SWITCH
        res = np.empty_like(t)
        der = np.empty_like(t)
        st = _small_time(self.n) if np.any(small) else None
        if np.any(small):
            lf = st.log_cdf(t[small])
            dlf = st.dlog_cdf(t[small])
            F = np.exp(lf)
            up = upper[small]
            res[small] = np.where(up, log1mu[small] - np.log1p(-F), lf - logu[small])
            der[small] = np.where(up, F * dlf / (1 - F), dlf)
        big = ~small
        if np.any(big):
            S = _series_s(t[big], self.n)
            f = _series_s(t[big], self.n, derivative=True)
            up = upper[big]
            res[big] = np.where(up, log1mu[big] - np.log(S), np.log1p(-S) - logu[big])
            der[big] = np.where(up, f / S, f / (1 - S))
        return res, der

    def __call__(self, u: np.ndarray) -> np.ndarray:
        logu = np.log(u)
        log1mu = np.log1p(-u)
        upper = u > 0.5
        k = np.searchsorted(self.logF, logu)
        k = np.clip(k, 1, len(self.t) - 1)
        lo, hi = self.t[k - 1].copy(), self.t[k].copy()
        below = logu <= self.logF[0]
        lo[below] = 1e-6
        above = log1mu <= self.logS[-1]
        hi[above] = self.t[-1] * 2
        # start from log-linear interpolation inside the bracket
        f0, f1 = self.logF[k - 1], self.logF[k]
        w = np.clip((logu - f0) / np.where(f1 > f0, f1 - f0, 1.0), 0, 1)
        t = lo + w * (hi - lo)
        act = np.arange(len(t))
        for _ in range(100):
            res, der = self._phi(t[act], logu[act], log1mu[act], upper[act])
            # keep a valid bracket: the residual increases with t
            neg = res < 0
            lo[act] = np.where(neg, t[act], lo[act])
            hi[act] = np.where(neg, hi[act], t[act])
            with np.errstate(divide="ignore", invalid="ignore"):
                step = t[act] - res / der
            bad = ~np.isfinite(step) | (step <= lo[act]) | (step >= hi[act])
            exact = np.abs(res) <= 1e-15
            new = np.where(exact, t[act], np.where(bad, 0.5 * (lo[act] + hi[act]), step))
            done = exact | (np.abs(new - t[act]) <= 1e-14 * new) | (hi[act] - lo[act] <= 4e-16 * hi[act])
            t[act] = new
            act = act[~done]
            if not act.size:
                break
        return t


@lru_cache(maxsize=None)
def _quantile_table(n: int) -> _QuantileTable:
    return _QuantileTable(n)


def ball_exit_quantile(u, n: int = 2):
    """Exit time ``t`` of the unit ball from its center with ``P(T <= t) = u``."""
    _check_dim(n)
    u_arr = np.asarray(u, dtype=float)
    if np.any(~((u_arr > 0) & (u_arr < 1))):
        raise ValueError("u must lie in (0, 1)")
    out = _quantile_table(n)(np.atleast_1d(u_arr).astype(float))
    return float(out[0]) if u_arr.ndim == 0 else out.reshape(u_arr.shape)


# ---------------------------------------------------------------------------
# half-space, ball hitting, Green's functions, McConnell's rate
# ---------------------------------------------------------------------------


def halfspace_exit_cdf(t, d):
    """``P(T <= t)`` for the half-space at distance ``d``: ``2 (1 - Phi(d / sqrt t))``."""
    t = np.asarray(t, dtype=float)
    d = np.asarray(d, dtype=float)
    if np.any(t <= 0) or np.any(d <= 0):
        raise ValueError("t and d must be positive")
    out = erfc(d / np.sqrt(2 * t))
    return float(out) if out.ndim == 0 else out


def halfspace_survival(t, d):
    """``P(T > t) = 2 Phi(d / sqrt t) - 1``."""
    t = np.asarray(t, dtype=float)
    out = erf(np.asarray(d, dtype=float) / np.sqrt(2 * t))
    return float(out) if out.ndim == 0 else out


def ball_hit_prob(r: float, x, n: int) -> float:
    """Probability that Brownian motion from ``x`` ever hits ``B(0, r)`` (n >= 3)."""
    if n < 3:
        raise ValueError("hitting probabilities below 1 need n >= 3")
    ax = float(np.linalg.norm(np.asarray(x, dtype=float)))
    if ax < r:
        raise ValueError("starting point must lie outside the ball")
    return (r / ax) ** (n - 2)


def green_closed_form(domain: Domain, x, y) -> float:
    """``G_D(x, y)`` for balls and half-spaces in two and three dimensions."""
    n = domain.dim
    x = as_point(x, n)
    y = as_point(y, n)
    if np.array_equal(x, y):
        raise ValueError("Green's function has a pole at x = y")
    tol = 1e-12
    for p in (x, y):
        if not domain.contains(p):
            if domain.distance(p) <= tol * max(1.0, float(np.linalg.norm(p))):
                return 0.0
            raise GeometryError("points must lie in the closure of the domain")
    r = float(np.linalg.norm(x - y))
    if isinstance(domain, Ball):
        z, w, R = x - domain.center, y - domain.center, domain.radius
        image = math.sqrt(max(R * R - 2 * z @ w + (z @ z) * (w @ w) / (R * R), 0.0))
    elif isinstance(domain, HalfSpace):
        nv = domain.normal
        y_ref = y - 2 * (y @ nv - domain.offset) * nv
        image = float(np.linalg.norm(x - y_ref))
    else:
        raise TypeError("closed forms exist only for Ball and HalfSpace")
    if n == 2:
        return math.log(image / r) / math.pi
    return (1.0 / r - 1.0 / image) / (2 * math.pi)


def green_free_singular(r, n: int):
    """Singular part of G: ``ln(1/r)/pi`` (n=2) or ``1/(2 pi r)`` (n=3)."""
    r = np.asarray(r, dtype=float)
    return -np.log(r) / math.pi if n == 2 else 1.0 / (2 * math.pi * r)


def mcconnell_rate(m: int) -> float:
    """Rate coefficient ``cos^2(pi/m) / 2`` in the disk's small-time exit bound.

    The multiplicative constant of that bound is not known in closed form and
    is deliberately not produced.
    """
    if int(m) != m or m < 3:
        raise ValueError("m must be an integer >= 3")
    return math.cos(math.pi / m) ** 2 / 2
