"""Killed heat equation on one-dimensional grids: radial balls and slabs.

The operator is finite-volume: cell ``i`` has volume ``V_i`` and neighbouring
cells exchange probability at rate ``g * (p_i - p_j)``; the outermost cell
leaks into the absorbing boundary at rate ``g_out * p_last``.  The generator is
one half of the Laplacian.

Crank-Nicolson with ``dt = h**2 / 2`` keeps both half-step matrices
nonnegative, so every update (matrix-vector product and Thomas solve) is a sum
of nonnegative terms.  That is what lets exit probabilities of order 1e-15 be
accumulated from boundary flux without cancellation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba as nb
import numpy as np
from scipy.special import erf, erfc, gammaincc

_SPHERE_AREA = {1: 2.0, 2: 2.0 * math.pi, 3: 4.0 * math.pi}


@dataclass(frozen=True)
class LineOperator:
    """Symmetric tridiagonal FV operator on ``[0, R]`` with symmetry at 0.

    ``n`` is the geometric dimension: 1 for a symmetric slab ``|y| < R``,
    2 for a disk and 3 for a ball.
    """

    R: float
    n: int
    h: float
    centers: np.ndarray
    volumes: np.ndarray
    g_int: np.ndarray
    g_out: float

    @property
    def cells(self) -> int:
        return self.centers.size

    def stiffness(self, factor: float = 1.0):
        """Tridiagonal ``(diag, off)`` of ``factor * K``."""
        diag = np.zeros(self.cells)
        diag[:-1] += self.g_int
        diag[1:] += self.g_int
        diag[-1] += self.g_out
        return factor * diag, -factor * self.g_int


def line_operator(R: float, n: int, h: float) -> LineOperator:
    cells = int(round(R / h))
    if cells < 4:
        raise ValueError("resolution too coarse: fewer than 4 cells across the radius")
    h = R / cells
    w = _SPHERE_AREA[n]
    faces = h * np.arange(cells + 1)
    volumes = w / n * (faces[1:] ** n - faces[:-1] ** n)
    areas = w * faces ** (n - 1)
    g_int = 0.5 * areas[1:-1] / h
    g_out = 0.5 * areas[-1] / (0.5 * h)
    centers = 0.5 * (faces[1:] + faces[:-1])
    return LineOperator(R, n, h, centers, volumes, g_int, float(g_out))


def free_radial_survival(r: np.ndarray, t: float, n: int) -> np.ndarray:
    """``P(|B_t| > r)`` for Brownian motion from the origin in R^n."""
    r = np.asarray(r, dtype=float)
    if n == 1:
        return erfc(r / math.sqrt(2 * t))
    return gammaincc(n / 2.0, r * r / (2 * t))


def free_cell_masses(op: LineOperator, t: float) -> tuple[np.ndarray, float]:
    faces = op.h * np.arange(op.cells + 1)
    tail = free_radial_survival(faces, t, op.n)
    return tail[:-1] - tail[1:], float(tail[-1])


@nb.njit(cache=True)
def _thomas_factor(diag, off):
    n = diag.size
    cp = np.empty(n)
    den = np.empty(n)
    den[0] = diag[0]
    cp[0] = off[0] / den[0] if n > 1 else 0.0
    for i in range(1, n):
        den[i] = diag[i] - off[i - 1] * cp[i - 1]
        cp[i] = off[i] / den[i] if i < n - 1 else 0.0
    return cp, den


@nb.njit(cache=True)
def _thomas_solve(off, cp, den, rhs, out):
    n = rhs.size
    out[0] = rhs[0] / den[0]
    for i in range(1, n):
        out[i] = (rhs[i] - off[i - 1] * out[i - 1]) / den[i]
    for i in range(n - 2, -1, -1):
        out[i] = out[i] - cp[i] * out[i + 1]


@nb.njit(cache=True)
def _apply_b(vol, kd, ko, p, out):
    # out = (V - dt/2 K) p with kd/ko the diagonal/off-diagonal of dt/2 K
    n = p.size
    for i in range(n):
        s = (vol[i] - kd[i]) * p[i]
        if i > 0:
            s -= ko[i - 1] * p[i - 1]
        if i < n - 1:
            s -= ko[i] * p[i + 1]
        out[i] = s


@nb.njit(cache=True)
def _march(vol, g_int, g_out, p0, dt, nsteps, stride, req_step, req_tau):
    n = vol.size
    kd = np.zeros(n)
    for i in range(n - 1):
        kd[i] += g_int[i]
        kd[i + 1] += g_int[i]
    kd[n - 1] += g_out
    half = 0.5 * dt
    kd_h = half * kd
    ko_h = -half * g_int
    cp, den = _thomas_factor(vol + kd_h, ko_h)

    nrec = nsteps // stride + 1
    flux_rec = np.zeros(nrec)
    mass_rec = np.zeros(nrec)
    nreq = req_step.size
    snap = np.zeros((nreq, n))
    snap_flux = np.zeros(nreq)

    p = p0.copy()
    q = np.empty(n)
    rhs = np.empty(n)
    cum = 0.0
    k = 0
    mass_rec[0] = np.sum(vol * p)
    for step in range(nsteps + 1):
        while k < nreq and req_step[k] == step:
            tau = req_tau[k]
            if tau == 0.0:
                snap[k] = p
                snap_flux[k] = cum
            else:
                th = 0.5 * tau
                cq, dq = _thomas_factor(vol + th * kd, -th * g_int)
                _apply_b(vol, th * kd, -th * g_int, p, rhs)
                _thomas_solve(-th * g_int, cq, dq, rhs, q)
                snap[k] = q
                snap_flux[k] = cum + th * g_out * (p[n - 1] + q[n - 1])
            k += 1
        if step == nsteps:
            break
        _apply_b(vol, kd_h, ko_h, p, rhs)
        _thomas_solve(ko_h, cp, den, rhs, q)
        cum += half * g_out * (p[n - 1] + q[n - 1])
        p, q = q, p
        if (step + 1) % stride == 0:
            j = (step + 1) // stride
            flux_rec[j] = cum
            mass_rec[j] = np.sum(vol * p)
    return flux_rec, mass_rec, snap, snap_flux, p


@dataclass
class LineRun:
    op: LineOperator
    dt: float
    t0: float
    initial_loss: float
    step_times: np.ndarray
    absorbed: np.ndarray
    mass: np.ndarray
    snap_times: np.ndarray
    snap_density: np.ndarray
    snap_absorbed: np.ndarray

    @property
    def exit_rate(self) -> np.ndarray:
        """Exit-time density at the snapshot times (boundary flux rate)."""
        return self.op.g_out * self.snap_density[:, -1]


def march_line(op: LineOperator, t_max: float, times=(), stride: int = 1, dt: float | None = None) -> LineRun:
    """Evolve a point mass at the origin up to ``t_max``.

    The point mass is replaced by the exact free heat kernel at ``t0 = 4 h**2``;
    mass that is already beyond the boundary at ``t0`` is counted as absorbed.
    Snapshots at ``times`` are exact (a partial Crank-Nicolson step from the
    last full step).
    """
    dt = op.h**2 / 2 if dt is None else dt
    t0 = 4 * op.h**2
    masses, lost = free_cell_masses(op, t0)
    p0 = masses / op.volumes
    times = np.sort(np.asarray(times, dtype=float))
    if np.any(times < t0):
        raise ValueError(f"requested times below the initialization time t0={t0:g}")
    t_end = max(t_max, float(times[-1]) if times.size else 0.0)
    nsteps = int(math.ceil((t_end - t0) / dt))
    rel = (times - t0) / dt
    req_step = np.minimum(np.floor(rel).astype(np.int64), nsteps)
    req_tau = times - (t0 + req_step * dt)
    req_tau[req_tau < 1e-15 * dt] = 0.0
    flux, mass, snap, snap_flux, _ = _march(
        op.volumes, op.g_int, op.g_out, p0, dt, nsteps, stride, req_step, req_tau
    )
    step_times = t0 + dt * stride * np.arange(flux.size)
    return LineRun(
        op=op,
        dt=dt,
        t0=t0,
        initial_loss=lost,
        step_times=step_times,
        absorbed=flux + lost,
        mass=mass,
        snap_times=times,
        snap_density=snap,
        snap_absorbed=snap_flux + lost,
    )


def free_density(r, t: float, n: int):
    return (2 * math.pi * t) ** (-n / 2) * np.exp(-np.asarray(r) ** 2 / (2 * t))


def free_cdf_ball(r: float, t: float, n: int) -> float:
    """``P(|B_t| <= r)`` (used only for sanity checks)."""
    if n == 1:
        return float(erf(r / math.sqrt(2 * t)))
    return 1.0 - float(gammaincc(n / 2.0, r * r / (2 * t)))
