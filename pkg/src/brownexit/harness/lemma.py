"""Explicit constants of the small-time hitting lower bound for a planar compact set.

For ``0`` outside ``K``, a regular point ``a`` of ``K`` and ``delta > 0``::

    P^0(tau_K < t) >= C exp(-(|a| + delta)^2 / (2 t)),   0 < t < T.

The constants come from a chain of elementary comparisons:

* ``L = K`` intersected with the closed ball of radius ``delta/5`` around ``a``,
  ``Omega = B(0, 3|a| + delta)``;
* ``M`` is the equilibrium mass of the condenser ``(Omega, L)``;
* ``T1`` is the first time the killed kernel ``p_Omega(s, 0, x*)`` drops below
  half the free kernel at ``|x*| = |a| + delta/5``;
* ``T <= T1`` is the end of the initial interval on which
  ``int_0^t (2 pi s)^-1 exp(-r*^2/(2s)) ds >= exp(-(|a|+delta)^2/(2t)) / 2``;
* ``C = M / 4``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq
from scipy.special import exp1

from brownexit.capacity import equilibrium_mass
from brownexit.geometry import Ball, CompactSet, Excised, GeometryError, as_point
from brownexit.kernels import heat_kernel
from brownexit.pde import exit_cdf_flux, solve_killed_density

#: Radial cells per unit radius for the T1 scan.
T1_CELLS = 200


@dataclass
class Lemma1Constants:
    K: CompactSet
    a: np.ndarray
    delta: float
    L: CompactSet
    Omega: Ball
    M: float
    T1: float
    T: float
    C: float
    exponent: float
    diagnostics: dict = field(default_factory=dict)

    def bound(self, t):
        """``C exp(-exponent / t)``."""
        t = np.asarray(t, dtype=float)
        return self.C * np.exp(-self.exponent / t)


def _check_regular(K: CompactSet, a: np.ndarray):
    if K.dim != 2:
        raise GeometryError("the constant chain is planar")
    if K.contains(np.zeros(2)):
        raise GeometryError("0 must lie outside K")
    if K.polar:
        raise GeometryError("K is polar (zero capacity)")
    if not float(K.distance(a)) <= 1e-12:
        raise GeometryError("a must belong to K")
    prims = K.primitives()
    near = min(prims, key=lambda p: float(p.distance(a[None])[0]))
    if not near.regular or float(near.distance(a[None])[0]) > 1e-12:
        raise GeometryError("a must be a regular boundary point of K")


def _t1_scan(R: float, r_star: float, cells: int = T1_CELLS):
    """First time with ``p_Omega(s, 0, r*) < p(s, 0, r*) / 2`` on the radial engine."""
    h = R / cells
    # below s_lo the free kernel is under exp(-30) and the ratio is pure rounding;
    # there p_Omega / p = 1 - O(exp(-(R - r*)^2 / s)) anyway
    s_lo = max(8 * h * h, r_star**2 / 60)
    s_hi = R * R
    while True:
        s = np.geomspace(s_lo, s_hi, 400)
        f = solve_killed_density(Ball([0.0, 0.0], R), [0.0, 0.0], s_hi, h, times=s)
        r = f.nodes[:, 0]
        ratio = np.array(
            [np.interp(r_star, r, p) / heat_kernel(t, [0.0, 0.0], [r_star, 0.0]) for t, p in zip(s, f.snapshots)]
        )
        below = np.nonzero(ratio < 0.5)[0]
        if below.size:
            k = below[0]
            if k == 0:
                raise GeometryError("killed kernel below half the free kernel from the start")
            # interpolate the crossing in log s
            w = (ratio[k - 1] - 0.5) / (ratio[k - 1] - ratio[k])
            T1 = float(np.exp(np.log(s[k - 1]) + w * np.log(s[k] / s[k - 1])))
            return T1, {"h": h, "scan_points": len(s), "ratio_at_first_sample": float(ratio[0])}
        s_hi *= 4


def _log_lhs(t, r_star):
    # int_0^t (2 pi s)^-1 exp(-r^2/(2s)) ds = E1(r^2/(2t)) / (2 pi)
    return np.log(exp1(r_star**2 / (2 * t)) / (2 * math.pi))


def _horizon(r_star: float, b: float, T1: float) -> float:
    """End of the initial interval where the integral beats half the target exponential."""

    def phi(t):
        return _log_lhs(t, r_star) - math.log(0.5) + b * b / (2 * t)

    lo = r_star**2 / 1200  # E1 still representable, phi hugely positive
    hi = lo
    while phi(hi) > 0:
        if hi >= T1:
            return T1
        hi = min(2 * hi, T1)
    return float(brentq(phi, lo, hi, xtol=1e-14, rtol=1e-12))


def lemma1_bound(K: CompactSet, a, delta: float, resolution: int = 256) -> Lemma1Constants:
    """Constants ``(C, T)`` with ``P^0(tau_K < t) >= C exp(-(|a|+delta)^2/(2t))`` on ``(0, T)``."""
    a = as_point(a, 2)
    delta = float(delta)
    if not delta > 0:
        raise ValueError("delta must be positive")
    _check_regular(K, a)
    na = float(np.linalg.norm(a))
    if delta / 5 >= na:
        raise GeometryError("delta too large: the ball around a reaches the starting point")
    L = K.intersect_ball(a, delta / 5)
    Omega = Ball([0.0, 0.0], 3 * na + delta)
    mass = equilibrium_mass(Omega, L, resolution)
    r_star = na + delta / 5
    b = na + delta
    T1, scan = _t1_scan(Omega.radius, r_star)
    T = _horizon(r_star, b, T1)
    M = mass.value
    return Lemma1Constants(
        K=K,
        a=a,
        delta=delta,
        L=L,
        Omega=Omega,
        M=M,
        T1=T1,
        T=T,
        C=M / 4,
        exponent=b * b / 2,
        diagnostics={"mass_error": mass.error_estimate, "r_star": r_star, "t1_scan": scan},
    )


@dataclass
class LemmaCheck:
    constants: Lemma1Constants
    t: np.ndarray
    probability: np.ndarray
    bound: np.ndarray
    h: float

    @property
    def holds(self) -> np.ndarray:
        return self.probability >= self.bound

    @property
    def passed(self) -> bool:
        return bool(np.all(self.holds))


def check_lemma1(consts: Lemma1Constants, points: int = 20, resolution: float = 1 / 160, t_lo_fraction: float = 0.05) -> LemmaCheck:
    """Compare the bound with ``P^0(tau_K < t)`` from boundary flux into ``K`` inside ``Omega``.

    Stopping at ``Omega`` only lowers the hitting probability, so the check is
    conservative.  Times are log-spaced in ``[t_lo_fraction T, 0.99 T]``.
    """
    t = np.geomspace(t_lo_fraction * consts.T, 0.99 * consts.T, points)
    t0 = 4 * resolution * resolution
    if t[0] < t0:
        raise ValueError("resolution too coarse for the requested time window")
    F = exit_cdf_flux(Excised(consts.Omega, consts.K), [0.0, 0.0], t, resolution=resolution, tags=["inner"])
    return LemmaCheck(consts, t, F.cdf, consts.bound(t), resolution)
