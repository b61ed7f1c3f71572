"""Deterministic killed-heat-equation engine.

Radial balls (centre start) and slabs run on the one-dimensional engine in
:mod:`brownexit.pde.line`; everything else planar runs on the masked grid in
:mod:`brownexit.pde.grid`.  Unbounded domains are clipped to a ball around the
start and the mass lost through the artificial sphere is reported separately.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.linalg import eigh_tridiagonal
from scipy.sparse.linalg import splu
from scipy.special import erfc, exp1

from brownexit.geometry import (
    Ball,
    Domain,
    GeometryError,
    GridMask,
    Punctured,
    Strip,
    as_point,
)
from brownexit.kernels import halfspace_exit_cdf
from brownexit.pde.grid import TRUNCATION, Clipped, build_grid, march_grid
from brownexit.pde.grid import free_cell_masses as _grid_free_masses
from brownexit.pde.line import free_radial_survival, line_operator, march_line

__all__ = [
    "KilledHeatField",
    "ExitCdf",
    "EigenResult",
    "solve_killed_density",
    "exit_cdf_flux",
    "survival_curve",
    "eigen_lambda",
    "green_radial",
    "truncation_radius",
]

#: Unbounded domains are clipped at ``|x0| + TRUNCATION_FACTOR * d_reg(x0)``.
TRUNCATION_FACTOR = 3.25


@dataclass
class KilledHeatField:
    """Grid approximation of ``p_D(t, x0, .)`` with mass and flux bookkeeping.

    ``absorbed`` is the cumulative exit probability at ``step_times`` obtained
    from boundary flux (truncation losses excluded, see ``truncated``).
    """

    kind: str
    h: float
    dt: float
    t0: float
    x0: np.ndarray
    nodes: np.ndarray
    volumes: np.ndarray
    snap_times: np.ndarray
    snapshots: list
    step_times: np.ndarray
    absorbed: np.ndarray
    mass: np.ndarray
    truncated: np.ndarray
    snap_absorbed: np.ndarray
    snap_absorbed_by_tag: dict
    truncation_radius: float | None = None
    meta: dict = field(default_factory=dict)

    def interior_mass(self, k: int = -1) -> float:
        return float(np.dot(self.volumes, self.snapshots[k]))

    def density(self, t: float) -> np.ndarray:
        k = int(np.argmin(np.abs(self.snap_times - t)))
        if not math.isclose(self.snap_times[k], t, rel_tol=1e-12, abs_tol=1e-15):
            raise KeyError(f"no snapshot at t={t}")
        return self.snapshots[k]

    def truncation_bound(self, t) -> np.ndarray:
        """Upper bound on the probability of reaching the clipping sphere by ``t``."""
        t = np.asarray(t, dtype=float)
        if self.truncation_radius is None:
            return np.zeros_like(t)
        n = self.nodes.shape[1]
        reach = self.truncation_radius - float(np.linalg.norm(self.x0))
        return np.minimum(1.0, 2 * n * halfspace_exit_cdf(t, reach / math.sqrt(n)))

    def write_csv(self, path) -> None:
        dim = self.nodes.shape[1]
        header = ["t", "node_x", "node_y", "node_z"][: dim + 1] + ["density"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for t, p in zip(self.snap_times, self.snapshots):
                for x, v in zip(self.nodes, p):
                    w.writerow([f"{t:.17g}"] + [f"{c:.17g}" for c in x] + [f"{v:.17g}"])


def truncation_radius(domain: Domain, x0) -> float | None:
    if domain.bounded:
        return None
    x0 = as_point(x0, domain.dim)
    d = float(domain.regular_distance(x0))
    if not np.isfinite(d):
        raise GeometryError("domain has no regular boundary; nothing to solve")
    return float(np.linalg.norm(x0)) + TRUNCATION_FACTOR * d


def _plan(domain: Domain, x0):
    """Pick the engine: ('radial', R, n), ('slab', w) or ('grid', domain)."""
    if isinstance(domain, Punctured):
        domain = domain.base
    if isinstance(domain, Ball) and np.allclose(x0, domain.center, atol=1e-14, rtol=0):
        return ("radial", domain.radius, domain.dim)
    if isinstance(domain, Strip) and abs(x0[1]) < 1e-14:
        return ("slab", domain.halfwidth)
    if domain.dim != 2:
        raise GeometryError("3D solves are available only for balls started at the centre")
    if isinstance(domain, Strip):
        raise GeometryError("strips are solved through their centred 1D cross-section")
    return ("grid", domain)


def _check_start(domain: Domain, x0, h: float):
    if not domain.admits_start(x0):
        raise GeometryError("x0 must lie inside the domain")
    if not float(domain.regular_distance(x0)) > 2 * h:
        raise GeometryError("resolution too coarse to separate x0 from the boundary")


def _default_h(domain, plan, x0):
    if plan[0] == "radial":
        return plan[1] / 400
    if plan[0] == "slab":
        return plan[1] / 400
    return float(domain.regular_distance(x0)) / 32


def solve_killed_density(
    domain: Domain,
    x0,
    t_max: float,
    resolution: float | None = None,
    times=None,
    keep_density: bool = True,
    truncate: float | None = None,
) -> KilledHeatField:
    """Crank-Nicolson solution of ``dp/dt = Delta p / 2`` killed on the boundary.

    ``resolution`` is the grid spacing ``h``; ``times`` are snapshot times
    (default ``[t_max]``); ``truncate`` overrides the clipping radius used for
    unbounded domains.
    """
    x0 = as_point(x0, domain.dim)
    plan = _plan(domain, x0)
    h = resolution if resolution is not None else _default_h(domain, plan, x0)
    _check_start(domain, x0, h)
    times = np.sort(np.atleast_1d(np.asarray([t_max] if times is None else times, dtype=float)))
    if plan[0] in ("radial", "slab"):
        R = plan[1]
        n = plan[2] if plan[0] == "radial" else 1
        op = line_operator(R, n, h)
        run = march_line(op, t_max, times=times)
        nodes = np.zeros((op.cells, domain.dim))
        nodes[:, 0 if n > 1 else 1] = op.centers
        field_ = KilledHeatField(
            kind=plan[0],
            h=op.h,
            dt=run.dt,
            t0=run.t0,
            x0=x0,
            nodes=nodes,
            volumes=op.volumes,
            snap_times=times,
            snapshots=list(run.snap_density) if keep_density else [],
            step_times=run.step_times,
            absorbed=run.absorbed,
            mass=run.mass,
            truncated=np.zeros_like(run.absorbed),
            snap_absorbed=run.snap_absorbed,
            snap_absorbed_by_tag={"outer": run.snap_absorbed},
            meta={"engine": "line", "dimension": n, "cells": op.cells},
        )
        return field_
    target = plan[1]
    rad = truncate if truncate is not None else truncation_radius(target, x0)
    if rad is not None:
        target = Clipped(target, rad)
    op = build_grid(target, h)
    if not op.cells:
        raise GeometryError("no active cells at this resolution")
    run = march_grid(op, x0, t_max, times=times, keep_density=keep_density)
    keep = np.array([t != TRUNCATION for t in op.tags])
    trunc = np.array([t == TRUNCATION for t in op.tags])
    by_tag = {tag: run.snap_absorbed_by_tag[:, i] for i, tag in enumerate(op.tags)}
    return KilledHeatField(
        kind="grid",
        h=h,
        dt=run.dt,
        t0=run.t0,
        x0=x0,
        nodes=op.centers,
        volumes=np.full(op.cells, op.volume),
        snap_times=times,
        snapshots=run.snap_density,
        step_times=run.step_times,
        absorbed=run.absorbed_by_tag[:, keep].sum(axis=1) + run.initial_loss,
        mass=run.mass,
        truncated=run.absorbed_by_tag[:, trunc].sum(axis=1),
        snap_absorbed=run.snap_absorbed_by_tag[:, keep].sum(axis=1) + run.initial_loss,
        snap_absorbed_by_tag=by_tag,
        truncation_radius=rad,
        meta={"engine": "grid", "cells": op.cells, "tags": list(op.tags)},
    )


@dataclass
class ExitCdf:
    t: np.ndarray
    cdf: np.ndarray
    h: float
    error: np.ndarray | None = None
    truncation_bound: np.ndarray | None = None


def _free_exit(domain, x0, plan, h, t):
    """Exit probability for ``0 < t < t0`` from the free Gaussian (mass off the grid)."""
    if plan[0] in ("radial", "slab"):
        n = plan[2] if plan[0] == "radial" else 1
        return free_radial_survival(plan[1], t, n)
    target = plan[1]
    rad = truncation_radius(target, x0)
    op = build_grid(Clipped(target, rad) if rad else target, h)
    return np.array([1.0 - _grid_free_masses(op, x0, s).sum() for s in np.atleast_1d(t)])


def _exit_once(domain, x0, t, h, tags, truncate):
    plan = _plan(domain, as_point(x0, domain.dim))
    out = np.zeros_like(t)
    pos = t > 0
    if not np.any(pos):
        return out, np.zeros_like(t)
    tp = t[pos]
    order = np.argsort(tp)
    f = solve_killed_density(domain, x0, float(t.max()), h, times=tp, keep_density=False, truncate=truncate)
    if tags is None:
        vals = f.snap_absorbed
    else:
        vals = sum(f.snap_absorbed_by_tag[k] for k in tags)
    sorted_vals = np.empty_like(tp)
    sorted_vals[order] = vals
    out[pos] = sorted_vals
    return out, np.where(pos, f.truncation_bound(np.where(pos, t, 1.0)), 0.0)


def exit_cdf_flux(
    domain: Domain,
    x0,
    t_grid,
    resolution: float | None = None,
    error_estimate: bool = False,
    tags=None,
    truncate: float | None = None,
) -> ExitCdf:
    """``P(T_D <= t)`` on ``t_grid`` accumulated from absorbing-boundary flux.

    ``tags`` restricts the flux to boundary pieces with those tags (e.g.
    ``["inner"]`` for hitting an excised compact before leaving the outer
    domain).  With ``error_estimate`` a second solve at ``2h`` gives the usual
    second-order estimate ``|F_h - F_2h| / 3``.
    """
    x0 = as_point(x0, domain.dim)
    t = np.asarray(t_grid, dtype=float)
    if np.any(t < 0):
        raise ValueError("times must be nonnegative")
    plan = _plan(domain, x0)
    h = resolution if resolution is not None else _default_h(domain, plan, x0)
    _check_start(domain, x0, h)
    t0 = 4 * h * h
    early = (t > 0) & (t < t0)
    late = t >= t0
    cdf = np.zeros_like(t)
    bound = np.zeros_like(t)
    if np.any(early):
        cdf[early] = _free_exit(domain, x0, plan, h, t[early])
    if np.any(late):
        cdf[late], bound[late] = _exit_once(domain, x0, t[late], h, tags, truncate)
    err = None
    if error_estimate:
        coarse = np.zeros_like(t)
        coarse[late] = _exit_once(domain, x0, t[late], 2 * h, tags, truncate)[0]
        err = np.abs(cdf - coarse) / 3
    return ExitCdf(t=t, cdf=cdf, h=h, error=err, truncation_bound=bound)


def survival_curve(domain: Domain, x0, t_grid, resolution: float | None = None) -> np.ndarray:
    """``P(T_D > t)`` as interior mass (the right quantity for large ``t``)."""
    t = np.asarray(t_grid, dtype=float)
    order = np.argsort(t)
    f = solve_killed_density(domain, x0, float(np.max(t)), resolution, times=t)
    out = np.empty_like(t)
    out[order] = [np.dot(f.volumes, p) for p in f.snapshots]
    return out


@dataclass
class EigenResult:
    """Smallest Dirichlet eigenvalue of ``-Delta`` (``lambda`` in ``exp(-lambda t / 2)``)."""

    lam: float
    eigenvector: np.ndarray
    residual: float
    h: float
    nodes: np.ndarray | None = None
    flag: str | None = None


def _line_eigen(R, n, h):
    op = line_operator(R, n, h)
    diag, off = op.stiffness()
    s = 1 / np.sqrt(op.volumes)
    d = diag * s * s
    e = off * s[:-1] * s[1:]
    w, v = eigh_tridiagonal(d, e, select="i", select_range=(0, 0))
    mu = float(w[0])
    u = v[:, 0] * s
    u *= np.sign(u.sum())
    Ku = diag * u
    Ku[:-1] += off * u[1:]
    Ku[1:] += off * u[:-1]
    res = float(np.linalg.norm(Ku - mu * op.volumes * u) / np.linalg.norm(op.volumes * u))
    return EigenResult(2 * mu, u, 2 * res, op.h, op.centers)


def _inverse_power(K: sp.csc_matrix, vol: float, tol: float = 1e-12, maxit: int = 500):
    lu = splu(K.tocsc(), permc_spec="MMD_AT_PLUS_A")
    u = np.ones(K.shape[0])
    mu = 0.0
    for _ in range(maxit):
        w = lu.solve(u)
        w /= np.linalg.norm(w)
        Kw = K @ w
        mu_new = float(w @ Kw) / vol
        res = float(np.linalg.norm(Kw / vol - mu_new * w))
        u = w
        if abs(mu_new - mu) <= tol * mu_new and res < 1e-8 * mu_new:
            mu = mu_new
            break
        mu = mu_new
    return mu, u * np.sign(u.sum()), res


def eigen_lambda(domain: Domain, resolution: float | None = None) -> EigenResult:
    """Fundamental frequency: infimum of the Rayleigh quotient of ``|grad u|^2``."""
    if isinstance(domain, Punctured):
        domain = domain.base
    if isinstance(domain, Ball):
        h = resolution if resolution is not None else domain.radius / 400
        return _line_eigen(domain.radius, domain.dim, h)
    if isinstance(domain, Strip):
        h = resolution if resolution is not None else domain.halfwidth / 400
        return _line_eigen(domain.halfwidth, 1, h)
    if not domain.bounded:
        return EigenResult(0.0, np.zeros(0), 0.0, float("nan"), flag="unbounded")
    if domain.dim != 2:
        raise GeometryError("eigenvalues of non-ball 3D domains are not supported")
    if isinstance(domain, GridMask):
        h = domain.h
    else:
        h = resolution if resolution is not None else float(domain.regular_distance(np.zeros(2))) / 64
    op = build_grid(domain, h)
    mu, u, res = _inverse_power(op.stiffness, op.volume)
    return EigenResult(2 * mu, u, 2 * res, h, op.centers)


def green_radial(R: float, r, n: int = 2, resolution: float | None = None) -> np.ndarray:
    """``G_{B(0,R)}(0, x)`` at ``|x| = r`` by time-integrating the radial killed density.

    The Crank-Nicolson trapezoid sum over all steps telescopes to
    ``K^{-1} m(t0)``; the free density covers ``[0, t0]``.
    """
    h = resolution if resolution is not None else R / 2000
    op = line_operator(R, n, h)
    t0 = 4 * op.h**2
    faces = op.h * np.arange(op.cells + 1)
    tail = free_radial_survival(faces, t0, n)
    m0 = tail[:-1] - tail[1:]
    diag, off = op.stiffness()
    K = sp.diags([off, diag, off], [-1, 0, 1], format="csc")
    integral = splu(K).solve(m0)
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0) or np.any(r >= R):
        raise ValueError("radius must lie in (0, R)")
    val = np.interp(r, op.centers, integral)
    if n == 2:
        early = exp1(r * r / (2 * t0)) / (2 * math.pi)
    else:
        early = erfc(r / math.sqrt(2 * t0)) / (2 * math.pi * r)
    return val + early
