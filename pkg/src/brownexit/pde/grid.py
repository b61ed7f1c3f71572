"""Killed heat equation on planar masked grids.

Cells are squares of side ``h`` centred on ``h * (i, j)``.  A cell is active
when its centre lies in the domain and every axis ray from the centre runs at
least ``h/2`` before meeting the regular boundary.  Neighbouring active cells
exchange mass with conductance ``1/2``; a face towards an inactive cell drains
into the boundary with conductance ``h / (2 s)``, ``s`` being the axis distance
to the boundary (clipped to ``[h/2, 3h/2]``).  Every conductance is at most 1,
so with ``dt = h**2 / 2`` both Crank-Nicolson matrices are nonnegative and the
sparse LU (no pivoting) of the implicit matrix, an M-matrix, is subtraction
free.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu
from scipy.special import ndtr

from brownexit.geometry import (
    Domain,
    GeometryError,
    GridMask,
    Primitive,
    SpherePiece,
    _batch,
    _unbatch,
)

TRUNCATION = "truncation"
_DIRS = ((1, 0), (-1, 0), (0, 1), (0, -1))


@dataclass(frozen=True, eq=False)
class Clipped(Domain):
    """``base`` intersected with a ball; the ball's sphere is tagged ``truncation``."""

    base: Domain
    radius: float

    @property
    def dim(self):
        return self.base.dim

    def contains(self, X):
        arr, single = _batch(X, self.dim)
        inside = self.base.contains(arr) & (np.linalg.norm(arr, axis=-1) < self.radius)
        return _unbatch(inside, single)

    def primitives(self):
        cut = SpherePiece(center=np.zeros(self.dim), radius=self.radius, tag=TRUNCATION)
        return tuple(self.base.primitives()) + (cut,)

    def bbox(self):
        r = np.full(self.dim, self.radius)
        return -r, r

    def scaled(self, a):
        return Clipped(self.base.scaled(a), a * self.radius)

    def to_config(self):
        return {"type": "clipped", "base": self.base.to_config(), "radius": self.radius}


@dataclass
class GridOperator:
    h: float
    lower: np.ndarray
    shape: tuple[int, int]
    index: np.ndarray  # (N, 2) integer cell indices of active cells
    centers: np.ndarray  # (N, 2)
    stiffness: sp.csc_matrix  # K with V dp/dt = -K p
    bnd_cell: np.ndarray
    bnd_g: np.ndarray
    bnd_tag: np.ndarray
    tags: tuple[str, ...]

    @property
    def cells(self) -> int:
        return len(self.centers)

    @property
    def volume(self) -> float:
        return self.h * self.h

    def cell_edges(self):
        lo = self.centers - 0.5 * self.h
        return lo, lo + self.h


def _crossings(prims: tuple[Primitive, ...], X: np.ndarray, d: np.ndarray):
    D = np.broadcast_to(d, X.shape)
    if not prims:
        return np.full(len(X), np.inf), np.zeros(len(X), dtype=int)
    hits = np.array([p.ray_hit(X, D) for p in prims])
    k = np.argmin(hits, axis=0)
    return hits[k, np.arange(len(X))], k


def _assemble(h, ij, centers, face_pairs, bnd, tags, lower, shape) -> GridOperator:
    n = len(centers)
    rows, cols, vals = [], [], []
    diag = np.zeros(n)
    a, b = face_pairs
    g = np.full(len(a), 0.5)
    rows += [a, b]
    cols += [b, a]
    vals += [-g, -g]
    np.add.at(diag, a, g)
    np.add.at(diag, b, g)
    bc, bg, bt = bnd
    np.add.at(diag, bc, bg)
    rows.append(np.arange(n))
    cols.append(np.arange(n))
    vals.append(diag)
    K = sp.csc_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )
    return GridOperator(h, lower, shape, ij, centers, K, bc, bg, bt, tags)


def build_grid(domain: Domain, h: float) -> GridOperator:
    """Finite-volume operator of ``domain`` on the origin-aligned grid of spacing ``h``."""
    if isinstance(domain, GridMask):
        return _mask_grid(domain)
    if domain.dim != 2:
        raise GeometryError("general grids are planar; 3D solves are radial only")
    box = domain.bbox()
    if box is None:
        raise GeometryError("grid solves need a bounded (or truncated) domain")
    lo = np.floor(box[0] / h).astype(int) - 1
    hi = np.ceil(box[1] / h).astype(int) + 1
    ii, jj = np.meshgrid(np.arange(lo[0], hi[0] + 1), np.arange(lo[1], hi[1] + 1), indexing="ij")
    ij = np.column_stack([ii.ravel(), jj.ravel()])
    X = h * ij.astype(float)
    prims = domain.regular_primitives
    tags = tuple(sorted({p.tag for p in prims}))
    tag_of = np.array([tags.index(p.tag) for p in prims], dtype=int)

    inside = domain.contains(X)
    cand = np.nonzero(inside)[0]
    Xc = X[cand]
    s_dir, t_dir = [], []
    for d in _DIRS:
        s, k = _crossings(prims, Xc, np.array(d, dtype=float))
        s_dir.append(s)
        t_dir.append(tag_of[k] if prims else np.zeros(len(Xc), dtype=int))
    s_dir = np.array(s_dir)
    active_c = np.all(s_dir >= 0.5 * h * (1 - 1e-12), axis=0)

    shape = tuple(hi - lo + 1)
    lin = np.full(shape, -1, dtype=np.int64)
    act_idx = cand[active_c]
    loc = ij[act_idx] - lo
    lin[loc[:, 0], loc[:, 1]] = np.arange(len(act_idx))
    centers = X[act_idx]
    s_act = s_dir[:, active_c]
    t_act = np.array(t_dir)[:, active_c]

    fa, fb, bc, bg, bt = [], [], [], [], []
    n = len(act_idx)
    for k, d in enumerate(_DIRS):
        nb_loc = loc + np.array(d)
        nb = lin[nb_loc[:, 0], nb_loc[:, 1]]
        own = np.arange(n)
        has = nb >= 0
        if d[0] + d[1] > 0:  # count each interior face once
            fa.append(own[has])
            fb.append(nb[has])
        miss = ~has
        s_raw = s_act[k, miss]
        tag = t_act[k, miss].copy()
        far = s_raw > 1.5 * h
        if np.any(far):
            # neighbour dropped for a crossing along another axis: take the tag
            # of the boundary piece nearest to it
            _, which = domain.nearest_regular(h * (nb_loc[miss][far] + lo).astype(float))
            tag[far] = tag_of[which]
        bc.append(own[miss])
        bg.append(0.5 * h / np.clip(s_raw, 0.5 * h, 1.5 * h))
        bt.append(tag)
    bnd = (np.concatenate(bc), np.concatenate(bg), np.concatenate(bt))
    return _assemble(h, ij[act_idx], centers, (np.concatenate(fa), np.concatenate(fb)), bnd, tags, lo * h, shape)


def _mask_grid(domain: GridMask) -> GridOperator:
    h = domain.h
    m = domain.mask
    nx, ny = m.shape
    lin = np.full((nx + 2, ny + 2), -1, dtype=np.int64)
    ii, jj = np.nonzero(m)
    lin[ii + 1, jj + 1] = np.arange(len(ii))
    loc = np.column_stack([ii, jj])
    centers = domain.lower + (loc + 0.5) * h
    fa, fb, bc = [], [], []
    own = np.arange(len(ii))
    for d in _DIRS:
        nb = lin[ii + 1 + d[0], jj + 1 + d[1]]
        has = nb >= 0
        if d[0] + d[1] > 0:
            fa.append(own[has])
            fb.append(nb[has])
        bc.append(own[~has])
    bc = np.concatenate(bc)
    # the boundary sits at the centre of the outside cell
    bnd = (bc, np.full(len(bc), 0.5), np.zeros(len(bc), dtype=int))
    return _assemble(h, loc, centers, (np.concatenate(fa), np.concatenate(fb)), bnd, ("outer",), domain.lower, m.shape)


def free_cell_masses(op: GridOperator, x0: np.ndarray, t: float) -> np.ndarray:
    """Mass of the free Gaussian ``N(x0, t I)`` in each active cell."""
    lo, hi = op.cell_edges()
    sd = math.sqrt(t)
    m = np.ones(op.cells)
    for c in range(2):
        m *= ndtr((hi[:, c] - x0[c]) / sd) - ndtr((lo[:, c] - x0[c]) / sd)
    return m


@dataclass
class GridRun:
    op: GridOperator
    dt: float
    t0: float
    initial_loss: float
    step_times: np.ndarray
    absorbed_by_tag: np.ndarray  # (steps, tags), cumulative
    mass: np.ndarray
    snap_times: np.ndarray
    snap_density: list
    snap_absorbed_by_tag: np.ndarray  # (snaps, tags)


def _factor(K, theta):
    A = (sp.identity(K.shape[0], format="csc") + theta * K).tocsc()
    return splu(A, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0, options={"SymmetricMode": True})


def march_grid(op: GridOperator, x0, t_max: float, times=(), keep_density: bool = True, stride: int = 1) -> GridRun:
    """Evolve the killed density from ``x0`` up to ``t_max`` (snapshots exact at ``times``)."""
    x0 = np.asarray(x0, dtype=float)
    h = op.h
    dt = h * h / 2
    t0 = 4 * h * h
    m = free_cell_masses(op, x0, t0)
    lost = max(0.0, 1.0 - float(m.sum()))
    times = np.sort(np.asarray(times, dtype=float))
    if np.any(times < t0):
        raise ValueError(f"requested times below the initialization time t0={t0:g}")
    t_end = max(t_max, float(times[-1]) if times.size else 0.0)
    nsteps = int(math.ceil((t_end - t0) / dt - 1e-12))
    K = op.stiffness
    theta = dt / (2 * op.volume)
    lu = _factor(K, theta)
    B = (sp.identity(op.cells, format="csr") - theta * K.tocsr()).tocsr()
    ntag = len(op.tags)
    g_rate = op.bnd_g / op.volume  # flux = g * p = g * m / V
    cum = np.zeros(ntag)

    def flux(m_a, m_b, tau):
        f = 0.5 * tau * g_rate * (m_a[op.bnd_cell] + m_b[op.bnd_cell])
        return np.bincount(op.bnd_tag, weights=f, minlength=ntag)

    nrec = nsteps // stride + 1
    rec_abs = np.zeros((nrec, ntag))
    rec_mass = np.zeros(nrec)
    rec_mass[0] = m.sum()
    snaps, snap_abs = [], np.zeros((len(times), ntag))
    rel = (times - t0) / dt
    req_step = np.minimum(np.floor(rel + 1e-9).astype(np.int64), nsteps)
    req_tau = times - (t0 + req_step * dt)
    req_tau[np.abs(req_tau) < 1e-12 * dt] = 0.0
    k = 0
    for step in range(nsteps + 1):
        while k < len(times) and req_step[k] == step:
            tau = req_tau[k]
            if tau <= 0:
                q = m
                snap_abs[k] = cum
            else:
                th = tau / (2 * op.volume)
                q = _factor(K, th).solve(m - th * (K @ m))
                snap_abs[k] = cum + flux(m, q, tau)
            if keep_density:
                snaps.append(q / op.volume)
            k += 1
        if step == nsteps:
            break
        new = lu.solve(B @ m)
        cum = cum + flux(m, new, dt)
        m = new
        if (step + 1) % stride == 0:
            j = (step + 1) // stride
            rec_abs[j] = cum
            rec_mass[j] = m.sum()
    return GridRun(
        op=op,
        dt=dt,
        t0=t0,
        initial_loss=lost,
        step_times=t0 + dt * stride * np.arange(nrec),
        absorbed_by_tag=rec_abs,
        mass=rec_mass,
        snap_times=times,
        snap_density=snaps,
        snap_absorbed_by_tag=snap_abs,
    )
