"""Potential theory: energy capacities, condenser capacities, equilibrium measures.

Green's functions follow the occupation-density convention
``G_D = int_0^inf p_D ds`` (generator ``Delta/2``), so for concentric circles
the equilibrium mass is ``pi / log(R/r)`` while the Dirichlet integral of the
capacitary potential is ``2 pi / log(R/r)``.  The ratio 2 is checked
numerically rather than assumed.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.sparse.linalg import splu

from brownexit.geometry import Ball, CompactSet, Domain, Excised, GeometryError, as_point
from brownexit.kernels import green_closed_form
from brownexit.pde.grid import build_grid

LOGARITHMIC = "logarithmic"
NEWTONIAN = "newtonian"
CONDENSER_DIRICHLET = "condenser-dirichlet"
CONDENSER_EQUILIBRIUM = "condenser-equilibrium"


@dataclass
class CapacityReport:
    """A capacity value with its discretization diagnostics.

    ``convention_constant`` is the factor relating the value to the
    equilibrium-mass normalization: 1 for energy capacities and equilibrium
    masses, 2 for Dirichlet integrals (``I = 2 M``).
    """

    value: float
    kind: str
    convention_constant: float
    points: int | None = None
    h: float | None = None
    extrapolated: float | None = None
    error_estimate: float | None = None
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class DiscretizedMeasure:
    points: np.ndarray
    weights: np.ndarray
    total_mass: float
    kind: str = CONDENSER_EQUILIBRIUM
    regularized: bool = False
    residual: float = 0.0
    domain: dict | None = None

    def to_json(self) -> str:
        return json.dumps(
            {
                "points": self.points.tolist(),
                "weights": self.weights.tolist(),
                "total_mass": self.total_mass,
                "kind": self.kind,
                "regularized": self.regularized,
                "residual": self.residual,
                "domain": self.domain,
            },
            sort_keys=True,
        )


def polarity_check(K: CompactSet) -> str:
    """``"polar"`` for sets made of points only, ``"nonpolar"`` otherwise."""
    return "polar" if K.polar else "nonpolar"


# ---------------------------------------------------------------------------
# energy capacity
# ---------------------------------------------------------------------------


def _energy_matrix(nodes: np.ndarray, sizes: np.ndarray, n: int) -> np.ndarray:
    diff = nodes[:, None, :] - nodes[None, :, :]
    r = np.linalg.norm(diff, axis=-1)
    off = ~np.eye(len(nodes), dtype=bool)
    if np.any(r[off] <= 0):
        raise GeometryError("coincident discretization nodes")
    A = np.empty_like(r)
    if n == 2:
        A[off] = -np.log(r[off])
        # self-energy of a piece = minus log of its own capacity (length / 4)
        np.fill_diagonal(A, -np.log(sizes / 4))
    else:
        A[off] = r[off] ** (2.0 - n)
        # a surface patch of area a is treated as a disc of radius sqrt(a/pi),
        # whose Newtonian capacity is 2 rho / pi
        rho = np.sqrt(sizes / math.pi)
        np.fill_diagonal(A, math.pi / (2 * rho))
    return A


def _minimize_energy(A: np.ndarray) -> tuple[np.ndarray, float]:
    """Probability weights minimizing ``mu^T A mu`` (constant potential on the support)."""
    m = len(A)
    act = np.arange(m)
    for _ in range(m):
        k = len(act)
        S = np.zeros((k + 1, k + 1))
        S[:k, :k] = A[np.ix_(act, act)]
        S[:k, k] = -1.0
        S[k, :k] = 1.0
        rhs = np.zeros(k + 1)
        rhs[k] = 1.0
        sol = np.linalg.solve(S, rhs)
        w, V = sol[:k], sol[k]
        if np.all(w >= 0):
            mu = np.zeros(m)
            mu[act] = w
            return mu, float(V)
        act = act[w > 0]
    raise RuntimeError("active-set pruning did not converge")


def _energy_value(K: CompactSet, n: int, points: int):
    nodes, sizes = K.boundary_nodes(points)
    mu, V = _minimize_energy(_energy_matrix(nodes, sizes, n))
    cap = math.exp(-V) if n == 2 else 1.0 / V
    return cap, V, mu, nodes


def energy_capacity(K: CompactSet, n: int | None = None, points: int | None = None) -> CapacityReport:
    """Logarithmic (n=2) or Newtonian (n>=3) capacity by discrete energy minimization.

    The self-energy error decays like ``points**-1`` on curves and
    ``points**-1/2`` on surfaces; the report extrapolates from ``points`` and
    ``points // 2`` with that order.
    """
    n = K.dim if n is None else n
    if n != K.dim:
        raise GeometryError("dimension mismatch")
    if K.polar:
        raise GeometryError("polar set: every measure has infinite energy")
    points = points if points is not None else (256 if n == 2 else 1024)
    cap, V, mu, nodes = _energy_value(K, n, points)
    cap2, *_ = _energy_value(K, n, max(points // 2, 4))
    gain = 2.0 if n == 2 else math.sqrt(2.0)
    return CapacityReport(
        value=cap,
        kind=LOGARITHMIC if n == 2 else NEWTONIAN,
        convention_constant=1.0,
        points=len(nodes),
        extrapolated=cap + (cap - cap2) / (gain - 1),
        error_estimate=abs(cap - cap2) / (gain - 1),
        extra={"robin_constant": V, "support": int(np.count_nonzero(mu))},
    )


# ---------------------------------------------------------------------------
# condenser capacity from the Dirichlet problem
# ---------------------------------------------------------------------------


def _check_condenser(D: Domain, K: CompactSet):
    if K.polar:
        nodes, slack = np.atleast_2d(K.primitives()[0].location), 0.0
    else:
        # every boundary point of K is within half a piece of some node
        nodes, sizes = K.boundary_nodes(1024)
        slack = 0.5 * float(np.max(sizes))
    gap = float(np.min(D.distance(nodes)))
    if not np.all(D.contains(nodes)) or gap - slack <= 0:
        raise GeometryError("K must lie inside D without touching its boundary")
    return gap


def _dirichlet_integral(D: Domain, K: CompactSet, h: float):
    op = build_grid(Excised(D, K), h)
    inner = op.tags.index("inner")
    v = (op.bnd_tag == inner).astype(float)
    g = op.bnd_g
    b = np.bincount(op.bnd_cell, weights=g * v, minlength=op.cells)
    u = splu(op.stiffness.tocsc()).solve(b)
    Q = float(u @ (op.stiffness @ u) - 2 * u @ b + np.sum(g * v))
    # a face with conductance g carries 2 g (du)^2 of Dirichlet energy
    return 2 * Q, op.cells


def dirichlet_condenser(D: Domain, K: CompactSet, resolution: float | None = None) -> CapacityReport:
    """``inf int |grad u|^2`` over ``u = 1`` on ``K``, ``u = 0`` on the boundary of ``D`` (planar)."""
    if D.dim != 2:
        raise GeometryError("condenser solves are planar")
    gap = _check_condenser(D, K)
    h = resolution if resolution is not None else gap / 40
    I, cells = _dirichlet_integral(D, K, h)
    I2, _ = _dirichlet_integral(D, K, 2 * h)
    return CapacityReport(
        value=I,
        kind=CONDENSER_DIRICHLET,
        convention_constant=2.0,
        h=h,
        extrapolated=I + (I - I2) / 3,
        error_estimate=abs(I - I2) / 3,
        extra={"cells": cells},
    )


# ---------------------------------------------------------------------------
# equilibrium measure
# ---------------------------------------------------------------------------


def _green_matrix(D: Ball, nodes: np.ndarray, sizes: np.ndarray) -> np.ndarray:
    """Collocation matrix of ``G_D`` on a ball; the same closed form as
    :func:`brownexit.kernels.green_closed_form`, vectorized over node pairs."""
    n = D.dim
    m = len(nodes)
    z = nodes - D.center
    R = D.radius
    zz = np.sum(z * z, axis=1)
    r = np.linalg.norm(z[:, None, :] - z[None, :, :], axis=-1)
    image = np.sqrt(np.maximum(R * R - 2 * z @ z.T + np.outer(zz, zz) / (R * R), 0.0))
    np.fill_diagonal(r, 1.0)
    if n == 2:
        A = np.log(image / r) / math.pi
        # mean of -log|x - y| / pi over a piece of length l seen from its midpoint
        A[np.diag_indices(m)] = (1 - np.log(sizes / 2)) / math.pi + np.log(np.diag(image)) / math.pi
    else:
        A = (1 / r - 1 / image) / (2 * math.pi)
        rho = np.sqrt(sizes / math.pi)
        A[np.diag_indices(m)] = 1 / (math.pi * rho) - 1 / (2 * math.pi * np.diag(image))
    return A


def equilibrium_measure(D: Domain, K: CompactSet, resolution: int = 256) -> DiscretizedMeasure:
    """Weights ``mu_j`` on boundary nodes of ``K`` with ``sum_j G_D(x_i, y_j) mu_j = 1``."""
    if not isinstance(D, Ball):
        raise GeometryError("equilibrium measures need a ball (closed-form Green's function)")
    _check_condenser(D, K)
    nodes, sizes = K.boundary_nodes(resolution)
    A = _green_matrix(D, nodes, sizes)
    cond = np.linalg.cond(A)
    mu = np.linalg.solve(A, np.ones(len(nodes)))
    regularized = False
    if cond > 1e12 or np.any(mu < 0):
        # nodes too close: fall back to a nonnegative least-squares solution
        from scipy.optimize import nnls

        mu, _ = nnls(A, np.ones(len(nodes)))
        regularized = True
    residual = float(np.max(np.abs(A @ mu - 1)))
    return DiscretizedMeasure(nodes, mu, float(mu.sum()), regularized=regularized, residual=residual, domain=D.to_config())


def equilibrium_potential(measure: DiscretizedMeasure, D: Ball, x) -> float:
    """``sum_j G_D(x, y_j) mu_j``: the hitting probability of ``K`` before leaving ``D``."""
    x = as_point(x, D.dim)
    return float(sum(w * green_closed_form(D, x, y) for y, w in zip(measure.points, measure.weights)))


def equilibrium_mass(D: Domain, K: CompactSet, resolution: int = 256) -> CapacityReport:
    """Total equilibrium mass with a two-resolution Richardson estimate."""
    m1 = equilibrium_measure(D, K, resolution)
    m2 = equilibrium_measure(D, K, max(resolution // 2, 8))
    return CapacityReport(
        value=m1.total_mass,
        kind=CONDENSER_EQUILIBRIUM,
        convention_constant=1.0,
        points=len(m1.points),
        extrapolated=2 * m1.total_mass - m2.total_mass,
        error_estimate=abs(m1.total_mass - m2.total_mass),
        extra={"regularized": m1.regularized, "residual": m1.residual},
    )
