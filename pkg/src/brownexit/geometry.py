"""Domains, compact sets and boundary queries.

Every object here is immutable after construction.  Points are float arrays of
shape ``(n,)``; the batch queries also accept arrays of shape ``(m, n)``.

A domain's boundary is described by a tuple of *primitives* (sphere pieces,
planes, segments, rays, isolated points).  Each primitive carries a regularity
flag from a fixed catalog rule: isolated points are irregular, everything else
is regular.  Samplers and PDE masks only ever look at the regular primitives,
so punctures are invisible to them by construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import cached_property
from typing import Any, Sequence

import numpy as np
from scipy.spatial import cKDTree


class GeometryError(ValueError):
    """Invalid geometry or a query that does not match the domain."""


def as_point(x: Any, dim: int | None = None) -> np.ndarray:
    p = np.asarray(x, dtype=float).reshape(-1)
    if p.size not in (2, 3) and dim is None:
        raise GeometryError(f"points must have 2 or 3 coordinates, got {p.size}")
    if dim is not None and p.size != dim:
        raise GeometryError(f"dimension mismatch: expected {dim}, got {p.size}")
    if not np.all(np.isfinite(p)):
        raise GeometryError("point coordinates must be finite")
    return p


def _batch(X: Any, dim: int) -> tuple[np.ndarray, bool]:
    arr = np.asarray(X, dtype=float)
    single = arr.ndim == 1
    arr = np.atleast_2d(arr)
    if arr.shape[-1] != dim:
        raise GeometryError(f"dimension mismatch: expected {dim}, got {arr.shape[-1]}")
    return arr, single


def _unbatch(v: np.ndarray, single: bool):
    return v[0] if single else v


# ---------------------------------------------------------------------------
# boundary primitives
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Primitive:
    regular: bool = True
    tag: str = "outer"

    def distance(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def project(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def ray_hit(self, X: np.ndarray, D: np.ndarray) -> np.ndarray:
        """Smallest ``s > 0`` with ``X + s*D`` on the primitive (``inf`` if none)."""
        raise NotImplementedError

    def scaled(self, a: float) -> "Primitive":
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class SpherePiece(Primitive):
    center: np.ndarray = None
    radius: float = 1.0

    def distance(self, X):
        return np.abs(np.linalg.norm(X - self.center, axis=-1) - self.radius)

    def project(self, X):
        v = X - self.center
        # rescale first: squaring tiny offsets underflows into subnormals
        m = np.max(np.abs(v), axis=-1, keepdims=True)
        e1 = np.zeros_like(v)
        e1[..., 0] = 1.0
        v = np.where(m > 0, v / np.where(m > 0, m, 1.0), e1)
        return self.center + self.radius * v / np.linalg.norm(v, axis=-1, keepdims=True)

    def ray_hit(self, X, D):
        v = X - self.center
        a = np.einsum("ij,ij->i", D, D)
        b = 2.0 * np.einsum("ij,ij->i", D, v)
        c = np.einsum("ij,ij->i", v, v) - self.radius**2
        disc = b * b - 4 * a * c
        out = np.full(len(X), np.inf)
        ok = disc >= 0
        sq = np.sqrt(np.where(ok, disc, 0.0))
        for s in ((-b - sq) / (2 * a), (-b + sq) / (2 * a)):
            good = ok & (s > 1e-14) & (s < out)
            out = np.where(good, s, out)
        return out

    def scaled(self, a):
        return replace(self, center=a * self.center, radius=a * self.radius)


@dataclass(frozen=True, eq=False)
class PlanePiece(Primitive):
    """The hyperplane ``normal . x = offset`` (normal of unit length)."""

    normal: np.ndarray = None
    offset: float = 0.0

    def distance(self, X):
        return np.abs(X @ self.normal - self.offset)

    def project(self, X):
        return X - np.outer(X @ self.normal - self.offset, self.normal)

    def ray_hit(self, X, D):
        dn = D @ self.normal
        with np.errstate(divide="ignore", invalid="ignore"):
            s = (self.offset - X @ self.normal) / dn
        return np.where((dn != 0) & (s > 1e-14), s, np.inf)

    def scaled(self, a):
        return replace(self, offset=a * self.offset)


def _seg_param(X, p, d, upper):
    dd = float(d @ d)
    u = ((X - p) @ d) / dd
    return np.clip(u, 0.0, upper)


def _ray_segment_2d(X, D, p, d, upper):
    # solve X + s D = p + u d
    den = D[:, 0] * d[1] - D[:, 1] * d[0]
    w = p - X
    with np.errstate(divide="ignore", invalid="ignore"):
        s = (w[:, 0] * d[1] - w[:, 1] * d[0]) / den
        u = (w[:, 0] * D[:, 1] - w[:, 1] * D[:, 0]) / den
    ok = (den != 0) & (s > 1e-14) & (u >= 0) & (u <= upper)
    return np.where(ok, s, np.inf)


@dataclass(frozen=True, eq=False)
class SegmentPiece(Primitive):
    p: np.ndarray = None
    q: np.ndarray = None

    def _closest(self, X):
        d = self.q - self.p
        return self.p + _seg_param(X, self.p, d, 1.0)[:, None] * d

    def distance(self, X):
        return np.linalg.norm(X - self._closest(X), axis=-1)

    def project(self, X):
        return self._closest(X)

    def ray_hit(self, X, D):
        if X.shape[1] != 2:
            return np.full(len(X), np.inf)
        return _ray_segment_2d(X, D, self.p, self.q - self.p, 1.0)

    def scaled(self, a):
        return replace(self, p=a * self.p, q=a * self.q)


@dataclass(frozen=True, eq=False)
class RayPiece(Primitive):
    apex: np.ndarray = None
    direction: np.ndarray = None

    def _closest(self, X):
        return self.apex + _seg_param(X, self.apex, self.direction, np.inf)[:, None] * self.direction

    def distance(self, X):
        return np.linalg.norm(X - self._closest(X), axis=-1)

    def project(self, X):
        return self._closest(X)

    def ray_hit(self, X, D):
        return _ray_segment_2d(X, D, self.apex, self.direction, np.inf)

    def scaled(self, a):
        return replace(self, apex=a * self.apex)


@dataclass(frozen=True, eq=False)
class PointPiece(Primitive):
    location: np.ndarray = None
    regular: bool = False

    def distance(self, X):
        return np.linalg.norm(X - self.location, axis=-1)

    def project(self, X):
        return np.broadcast_to(self.location, X.shape).copy()

    def ray_hit(self, X, D):
        return np.full(len(X), np.inf)

    def scaled(self, a):
        return replace(self, location=a * self.location)


# ---------------------------------------------------------------------------
# compact sets
# ---------------------------------------------------------------------------


class CompactSet:
    dim: int

    def contains(self, X):
        raise NotImplementedError

    def primitives(self) -> tuple[Primitive, ...]:
        raise NotImplementedError

    def distance(self, X):
        """Euclidean distance from ``X`` to the set (zero inside)."""
        arr, single = _batch(X, self.dim)
        d = np.min([p.distance(arr) for p in self.primitives()], axis=0)
        d = np.where(self.contains(arr), 0.0, d)
        return _unbatch(d, single)

    @property
    def polar(self) -> bool:
        return False

    def size(self) -> float:
        """Boundary measure used to split discretization nodes among pieces."""
        raise NotImplementedError

    def boundary_nodes(self, count: int) -> tuple[np.ndarray, np.ndarray]:
        """Nodes on the outer boundary and the length (2D) or area (3D) of each cell."""
        raise NotImplementedError

    def intersect_ball(self, center, radius: float) -> "CompactSet | None":
        raise NotImplementedError

    def scaled(self, a: float) -> "CompactSet":
        raise NotImplementedError

    def to_config(self) -> dict:
        raise NotImplementedError


def _chebyshev_breaks(count: int) -> np.ndarray:
    return 0.5 * (1.0 - np.cos(np.pi * np.arange(count + 1) / count))


def _fibonacci_sphere(count: int) -> np.ndarray:
    k = np.arange(count) + 0.5
    z = 1.0 - 2.0 * k / count
    phi = np.pi * (3.0 - math.sqrt(5.0)) * k
    rho = np.sqrt(1.0 - z * z)
    return np.column_stack([rho * np.cos(phi), rho * np.sin(phi), z])


@dataclass(frozen=True, eq=False)
class ClosedBall(CompactSet):
    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", as_point(self.center))
        if not self.radius > 0:
            raise GeometryError("ball radius must be positive")
        object.__setattr__(self, "radius", float(self.radius))

    @property
    def dim(self):
        return self.center.size

    def contains(self, X):
        arr, single = _batch(X, self.dim)
        return _unbatch(np.linalg.norm(arr - self.center, axis=-1) <= self.radius, single)

    def primitives(self):
        return (SpherePiece(center=self.center, radius=self.radius),)

    def size(self):
        return 2 * math.pi * self.radius if self.dim == 2 else 4 * math.pi * self.radius**2

    def boundary_nodes(self, count):
        if self.dim == 2:
            ang = 2 * np.pi * (np.arange(count) + 0.5) / count
            nodes = self.center + self.radius * np.column_stack([np.cos(ang), np.sin(ang)])
            return nodes, np.full(count, 2 * np.pi * self.radius / count)
        nodes = self.center + self.radius * _fibonacci_sphere(count)
        return nodes, np.full(count, 4 * np.pi * self.radius**2 / count)

    def intersect_ball(self, center, radius):
        c = as_point(center, self.dim)
        d = float(np.linalg.norm(c - self.center))
        if d >= self.radius + radius:
            return None
        if d + self.radius <= radius:
            return self
        if d + radius <= self.radius:
            return ClosedBall(c, radius)
        return Lens(self, ClosedBall(c, radius))

    def scaled(self, a):
        return ClosedBall(a * self.center, a * self.radius)

    def to_config(self):
        return {"type": "closed_ball", "center": self.center.tolist(), "radius": self.radius}


@dataclass(frozen=True, eq=False)
class Segment(CompactSet):
    p: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "p", as_point(self.p))
        object.__setattr__(self, "q", as_point(self.q, self.p.size))
        if np.allclose(self.p, self.q, rtol=0, atol=1e-15):
            raise GeometryError("segment endpoints must be distinct")

    @property
    def dim(self):
        return self.p.size

    @property
    def length(self) -> float:
        return float(np.linalg.norm(self.q - self.p))

    def contains(self, X):
        arr, single = _batch(X, self.dim)
        prim = self.primitives()[0]
        return _unbatch(prim.distance(arr) <= 1e-12 * max(1.0, self.length), single)

    def primitives(self):
        return (SegmentPiece(p=self.p, q=self.q),)

    def size(self):
        return 2 * self.length

    def boundary_nodes(self, count):
        b = _chebyshev_breaks(count)
        mid = 0.5 * (b[1:] + b[:-1])
        nodes = self.p + mid[:, None] * (self.q - self.p)
        return nodes, np.diff(b) * self.length

    def intersect_ball(self, center, radius):
        c = as_point(center, self.dim)
        d = self.q - self.p
        w = self.p - c
        a, b, cc = d @ d, 2 * d @ w, w @ w - radius**2
        disc = b * b - 4 * a * cc
        if disc < 0:
            return None
        u0 = max(0.0, (-b - math.sqrt(disc)) / (2 * a))
        u1 = min(1.0, (-b + math.sqrt(disc)) / (2 * a))
        if u1 < u0:
            return None
        if u1 - u0 < 1e-14:
            return Singleton(self.p + u0 * d)
        return Segment(self.p + u0 * d, self.p + u1 * d)

    def scaled(self, a):
        return Segment(a * self.p, a * self.q)

    def to_config(self):
        return {"type": "segment", "endpoints": [self.p.tolist(), self.q.tolist()]}


@dataclass(frozen=True, eq=False)
class Singleton(CompactSet):
    """A single point; polar, and irregular as a boundary point."""

    location: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "location", as_point(self.location))

    @property
    def dim(self):
        return self.location.size

    @property
    def polar(self):
        return True

    def contains(self, X):
        arr, single = _batch(X, self.dim)
        return _unbatch(np.all(arr == self.location, axis=-1), single)

    def primitives(self):
        return (PointPiece(location=self.location),)

    def size(self):
        return 0.0

    def boundary_nodes(self, count):
        raise GeometryError("a single point is polar: its energy is infinite")

    def intersect_ball(self, center, radius):
        c = as_point(center, self.dim)
        return self if np.linalg.norm(self.location - c) <= radius else None

    def scaled(self, a):
        return Singleton(a * self.location)

    def to_config(self):
        return {"type": "point", "location": self.location.tolist()}


@dataclass(frozen=True, eq=False)
class FiniteUnion(CompactSet):
    parts: tuple

    def __post_init__(self):
        parts = tuple(self.parts)
        if not parts:
            raise GeometryError("a union needs at least one part")
        if len({p.dim for p in parts}) != 1:
            raise GeometryError("union parts must share a dimension")
        object.__setattr__(self, "parts", parts)

    @property
    def dim(self):
        return self.parts[0].dim

    @property
    def polar(self):
        return all(p.polar for p in self.parts)

    def contains(self, X):
        arr, single = _batch(X, self.dim)
        return _unbatch(np.any([p.contains(arr) for p in self.parts], axis=0), single)

    def primitives(self):
        return tuple(q for p in self.parts for q in p.primitives())

    def size(self):
        return sum(p.size() for p in self.parts)

    def boundary_nodes(self, count):
        live = [p for p in self.parts if not p.polar]
        if not live:
            raise GeometryError("every part is polar")
        total = sum(p.size() for p in live)
        nodes, sizes = [], []
        for p in live:
            k = max(4, int(round(count * p.size() / total)))
            x, s = p.boundary_nodes(k)
            nodes.append(x)
            sizes.append(s)
        return np.vstack(nodes), np.concatenate(sizes)

    def intersect_ball(self, center, radius):
        cut = [p.intersect_ball(center, radius) for p in self.parts]
        cut = [c for c in cut if c is not None]
        if not cut:
            return None
        return cut[0] if len(cut) == 1 else FiniteUnion(tuple(cut))

    def scaled(self, a):
        return FiniteUnion(tuple(p.scaled(a) for p in self.parts))

    def to_config(self):
        return {"type": "union", "parts": [p.to_config() for p in self.parts]}


@dataclass(frozen=True, eq=False)
class Lens(CompactSet):
    """Intersection of two overlapping closed disks (planar only)."""

    a: ClosedBall
    b: ClosedBall

    def __post_init__(self):
        if self.a.dim != 2 or self.b.dim != 2:
            raise GeometryError("lenses are planar")
        d = np.linalg.norm(self.a.center - self.b.center)
        if not (abs(self.a.radius - self.b.radius) < d < self.a.radius + self.b.radius):
            raise GeometryError("lens disks must overlap with crossing boundaries")

    dim = 2

    def contains(self, X):
        arr, single = _batch(X, 2)
        return _unbatch(self.a.contains(arr) & self.b.contains(arr), single)

    def _arc(self, own: ClosedBall, other: ClosedBall):
        v = other.center - own.center
        d = float(np.linalg.norm(v))
        half = math.acos((d * d + own.radius**2 - other.radius**2) / (2 * d * own.radius))
        return math.atan2(v[1], v[0]), half

    def size(self):
        return sum(c.radius * 2 * self._arc(c, o)[1] for c, o in ((self.a, self.b), (self.b, self.a)))

    def primitives(self):
        raise NotImplementedError("lens boundaries are only used for capacity discretization")

    def distance(self, X):
        raise NotImplementedError("lens boundaries are only used for capacity discretization")

    def boundary_nodes(self, count):
        nodes, sizes = [], []
        arcs = [(self.a, self.b), (self.b, self.a)]
        total = self.size()
        for own, other in arcs:
            mid, half = self._arc(own, other)
            k = max(4, int(round(count * own.radius * 2 * half / total)))
            b = mid - half + 2 * half * _chebyshev_breaks(k)
            ang = 0.5 * (b[1:] + b[:-1])
            nodes.append(own.center + own.radius * np.column_stack([np.cos(ang), np.sin(ang)]))
            sizes.append(own.radius * np.diff(b))
        return np.vstack(nodes), np.concatenate(sizes)

    def intersect_ball(self, center, radius):
        raise NotImplementedError

    def scaled(self, a):
        return Lens(self.a.scaled(a), self.b.scaled(a))

    def to_config(self):
        return {"type": "lens", "balls": [self.a.to_config(), self.b.to_config()]}


# ---------------------------------------------------------------------------
# domains
# ---------------------------------------------------------------------------


class Domain:
    """Open region in R^n.  Subclasses define membership and boundary primitives."""

    dim: int

    def contains(self, X):
        raise NotImplementedError

    def primitives(self) -> tuple[Primitive, ...]:
        raise NotImplementedError

    def scaled(self, a: float) -> "Domain":
        raise NotImplementedError

    def bbox(self) -> tuple[np.ndarray, np.ndarray] | None:
        """Axis-aligned bounding box, or ``None`` for unbounded domains."""
        return None

    def to_config(self) -> dict:
        raise NotImplementedError

    @property
    def bounded(self) -> bool:
        return self.bbox() is not None

    @cached_property
    def regular_primitives(self) -> tuple[Primitive, ...]:
        return tuple(p for p in self.primitives() if p.regular)

    @cached_property
    def has_irregular(self) -> bool:
        return any(not p.regular for p in self.primitives())

    def _min_over(self, prims, arr):
        if not prims:
            return np.full(len(arr), np.inf)
        return np.min([p.distance(arr) for p in prims], axis=0)

    def distance(self, X):
        """Distance to the whole boundary, punctures included."""
        arr, single = _batch(X, self.dim)
        return _unbatch(self._min_over(self.primitives(), arr), single)

    def regular_distance(self, X):
        """Distance to the regular part of the boundary."""
        arr, single = _batch(X, self.dim)
        return _unbatch(self._min_over(self.regular_primitives, arr), single)

    def nearest_regular(self, X) -> tuple[np.ndarray, np.ndarray]:
        """Nearest regular boundary point and the index of its primitive."""
        arr, _ = _batch(X, self.dim)
        prims = self.regular_primitives
        d = np.array([p.distance(arr) for p in prims])
        k = np.argmin(d, axis=0)
        out = np.empty_like(arr)
        for i, p in enumerate(prims):
            sel = k == i
            if np.any(sel):
                out[sel] = p.project(arr[sel])
        return out, k

    def first_crossing(self, X, D) -> np.ndarray:
        """Smallest ``s > 0`` where ``X + s*D`` meets the regular boundary."""
        arr, _ = _batch(X, self.dim)
        Dm = np.broadcast_to(np.asarray(D, dtype=float), arr.shape)
        prims = self.regular_primitives
        if not prims:
            return np.full(len(arr), np.inf)
        return np.min([p.ray_hit(arr, Dm) for p in prims], axis=0)

    def regular_tags(self) -> tuple[str, ...]:
        return tuple(p.tag for p in self.regular_primitives)

    def admits_start(self, x) -> bool:
        """True if ``x`` is interior or an (invisible) irregular boundary point."""
        p = as_point(x, self.dim)
        if self.contains(p):
            return True
        return bool(self.has_irregular and self.regular_distance(p) > 0 and self._in_closure_hull(p))

    def _in_closure_hull(self, p) -> bool:
        return False

    def query(self, x) -> tuple[bool, float]:
        p = as_point(x, self.dim)
        return bool(self.contains(p)), float(self.distance(p))


def query(domain: Domain, x) -> tuple[bool, float]:
    """Membership and Euclidean distance to the boundary."""
    return domain.query(x)


def d_regular(domain: Domain) -> tuple[float, float]:
    """Distances from the origin to the boundary and to its regular part."""
    o = np.zeros(domain.dim)
    return float(domain.distance(o)), float(domain.regular_distance(o))


def _check_origin(domain: Domain):
    o = np.zeros(domain.dim)
    if not domain.contains(o):
        raise GeometryError(f"{type(domain).__name__} must contain the origin")


@dataclass(frozen=True, eq=False)
class Ball(Domain):
    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", as_point(self.center))
        if not self.radius > 0:
            raise GeometryError("ball radius must be positive")
        object.__setattr__(self, "radius", float(self.radius))
        _check_origin(self)

    @property
    def dim(self):
        return self.center.size

    def contains(self, X):
        arr, single = _batch(X, self.dim)
        return _unbatch(np.linalg.norm(arr - self.center, axis=-1) < self.radius, single)

    def primitives(self):
        return (SpherePiece(center=self.center, radius=self.radius),)

    def scaled(self, a):
        return Ball(a * self.center, a * self.radius)

    def bbox(self):
        return self.center - self.radius, self.center + self.radius

    @property
    def centered(self) -> bool:
        return not np.any(self.center)

    def to_config(self):
        return {"type": "ball", "center": self.center.tolist(), "radius": self.radius}


@dataclass(frozen=True, eq=False)
class HalfSpace(Domain):
    """``{x : normal . x < offset}``."""

    normal: np.ndarray
    offset: float

    def __post_init__(self):
        n = as_point(self.normal)
        nn = np.linalg.norm(n)
        if nn == 0:
            raise GeometryError("half-space normal must be nonzero")
        object.__setattr__(self, "normal", n / nn)
        object.__setattr__(self, "offset", float(self.offset) / nn)
        _check_origin(self)

    @property
    def dim(self):
        return self.normal.size

    def contains(self, X):
        arr, single = _batch(X, self.dim)
        return _unbatch(arr @ self.normal < self.offset, single)

    def primitives(self):
        return (PlanePiece(normal=self.normal, offset=self.offset),)

    def scaled(self, a):
        return HalfSpace(self.normal, a * self.offset)

    def to_config(self):
        return {"type": "halfspace", "normal": self.normal.tolist(), "offset": self.offset}


@dataclass(frozen=True, eq=False)
class Strip(Domain):
    """Slab ``{|x_2| < halfwidth}`` (second coordinate)."""

    halfwidth: float
    dimension: int = 2

    def __post_init__(self):
        if not self.halfwidth > 0:
            raise GeometryError("strip halfwidth must be positive")
        if self.dimension not in (2, 3):
            raise GeometryError("dimension must be 2 or 3")
        object.__setattr__(self, "halfwidth", float(self.halfwidth))

    @property
    def dim(self):
        return self.dimension

    def contains(self, X):
        arr, single = _batch(X, self.dim)
        return _unbatch(np.abs(arr[:, 1]) < self.halfwidth, single)

    def primitives(self):
        e = np.zeros(self.dim)
        e[1] = 1.0
        return (PlanePiece(normal=e, offset=self.halfwidth), PlanePiece(normal=-e, offset=self.halfwidth))

    def scaled(self, a):
        return Strip(a * self.halfwidth, self.dimension)

    def to_config(self):
        return {"type": "strip", "halfwidth": self.halfwidth, "dim": self.dimension}


@dataclass(frozen=True, eq=False)
class Sector(Domain):
    """Planar wedge ``{|arg(x - apex)| < angle/2}`` opening along +x.

    The default apex ``(-pi/(2*angle), 0)`` is the image of the unit disk under
    the normalized power map, so ``Sector(pi)`` is the half-plane ``x > -1/2``.
    """

    angle: float
    apex: np.ndarray | None = None

    def __post_init__(self):
        if not 0 < self.angle < 2 * math.pi:
            raise GeometryError("sector angle must lie in (0, 2*pi)")
        apex = self.apex if self.apex is not None else (-math.pi / (2 * self.angle), 0.0)
        object.__setattr__(self, "apex", as_point(apex, 2))
        object.__setattr__(self, "angle", float(self.angle))
        _check_origin(self)

    dim = 2

    def contains(self, X):
        arr, single = _batch(X, 2)
        v = arr - self.apex
        inside = np.abs(np.arctan2(v[:, 1], v[:, 0])) < self.angle / 2
        return _unbatch(inside & np.any(v != 0, axis=1), single)

    def primitives(self):
        h = self.angle / 2
        return (
            RayPiece(apex=self.apex, direction=np.array([math.cos(h), math.sin(h)])),
            RayPiece(apex=self.apex, direction=np.array([math.cos(h), -math.sin(h)])),
        )

    def scaled(self, a):
        return Sector(self.angle, a * self.apex)

    def to_config(self):
        return {"type": "sector", "angle": self.angle, "apex": self.apex.tolist()}


@dataclass(frozen=True, eq=False)
class Annulus(Domain):
    r: float
    R: float
    center: np.ndarray

    def __post_init__(self):
        if not 0 < self.r < self.R:
            raise GeometryError("annulus needs 0 < r < R")
        object.__setattr__(self, "center", as_point(self.center))
        _check_origin(self)

    @property
    def dim(self):
        return self.center.size

    def contains(self, X):
        arr, single = _batch(X, self.dim)
        d = np.linalg.norm(arr - self.center, axis=-1)
        return _unbatch((d > self.r) & (d < self.R), single)

    def primitives(self):
        return (
            SpherePiece(center=self.center, radius=self.R),
            SpherePiece(center=self.center, radius=self.r, tag="inner"),
        )

    def scaled(self, a):
        return Annulus(a * self.r, a * self.R, a * self.center)

    def bbox(self):
        return self.center - self.R, self.center + self.R

    def to_config(self):
        return {"type": "annulus", "r": self.r, "R": self.R, "center": self.center.tolist()}


@dataclass(frozen=True, eq=False)
class ComplementOfCompact(Domain):
    compact: CompactSet

    def __post_init__(self):
        if self.compact.contains(np.zeros(self.compact.dim)):
            raise GeometryError("the compact set must not contain the origin")

    @property
    def dim(self):
        return self.compact.dim

    def contains(self, X):
        arr, single = _batch(X, self.dim)
        return _unbatch(~self.compact.contains(arr), single)

    def primitives(self):
        return tuple(replace(p, tag="inner") for p in self.compact.primitives())

    def scaled(self, a):
        return ComplementOfCompact(self.compact.scaled(a))

    def to_config(self):
        return {"type": "complement", "compact": self.compact.to_config()}


@dataclass(frozen=True, eq=False)
class Punctured(Domain):
    """``base`` minus finitely many points.  The punctures are irregular."""

    base: Domain
    points: tuple

    def __post_init__(self):
        pts = tuple(as_point(p, self.base.dim) for p in self.points)
        if not pts:
            raise GeometryError("at least one puncture is required")
        for p in pts:
            if not self.base.contains(p):
                raise GeometryError("punctures must lie in the interior of the base domain")
        object.__setattr__(self, "points", pts)

    @property
    def dim(self):
        return self.base.dim

    def contains(self, X):
        arr, single = _batch(X, self.dim)
        inside = self.base.contains(arr)
        for p in self.points:
            inside &= np.any(arr != p, axis=-1)
        return _unbatch(inside, single)

    def primitives(self):
        return self.base.primitives() + tuple(PointPiece(location=p) for p in self.points)

    def _in_closure_hull(self, p):
        return bool(self.base.contains(p))

    def scaled(self, a):
        return Punctured(self.base.scaled(a), tuple(a * p for p in self.points))

    def bbox(self):
        return self.base.bbox()

    def to_config(self):
        return {"type": "punctured", "base": self.base.to_config(), "points": [p.tolist() for p in self.points]}


@dataclass(frozen=True, eq=False)
class Excised(Domain):
    """``base`` minus a compact set; primitives of the compact are tagged ``inner``."""

    base: Domain
    compact: CompactSet

    def __post_init__(self):
        if self.compact.dim != self.base.dim:
            raise GeometryError("dimension mismatch between base and compact")

    @property
    def dim(self):
        return self.base.dim

    def contains(self, X):
        arr, single = _batch(X, self.dim)
        return _unbatch(self.base.contains(arr) & ~self.compact.contains(arr), single)

    def primitives(self):
        outer = tuple(replace(p, tag="outer") for p in self.base.primitives())
        return outer + tuple(replace(p, tag="inner") for p in self.compact.primitives())

    def _in_closure_hull(self, p):
        return bool(self.base.contains(p))

    def scaled(self, a):
        return Excised(self.base.scaled(a), self.compact.scaled(a))

    def bbox(self):
        return self.base.bbox()

    def to_config(self):
        return {"type": "excised", "base": self.base.to_config(), "compact": self.compact.to_config()}


@dataclass(frozen=True, eq=False)
class GridMask(Domain):
    """Union of open grid cells flagged in ``mask`` (planar).

    Cell ``(i, j)`` has center ``lower + (i + 1/2, j + 1/2) * h``.  Distances are
    measured to the nearest outside cell center (cells beyond the array count as
    outside), which is accurate to O(h).
    """

    h: float
    mask: np.ndarray
    lower: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.mask, dtype=bool)
        if m.ndim != 2:
            raise GeometryError("grid masks are planar")
        m.setflags(write=False)
        object.__setattr__(self, "mask", m)
        object.__setattr__(self, "lower", as_point(self.lower, 2))
        if not self.h > 0:
            raise GeometryError("grid spacing must be positive")
        _check_origin(self)

    dim = 2

    def _index(self, arr):
        ij = np.floor((arr - self.lower) / self.h).astype(np.int64)
        return ij

    def contains(self, X):
        arr, single = _batch(X, 2)
        ij = self._index(arr)
        nx, ny = self.mask.shape
        ok = (ij[:, 0] >= 0) & (ij[:, 0] < nx) & (ij[:, 1] >= 0) & (ij[:, 1] < ny)
        out = np.zeros(len(arr), dtype=bool)
        out[ok] = self.mask[ij[ok, 0], ij[ok, 1]]
        return _unbatch(out, single)

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        nx, ny = self.mask.shape
        xs = self.lower[0] + (np.arange(nx) + 0.5) * self.h
        ys = self.lower[1] + (np.arange(ny) + 0.5) * self.h
        return xs, ys

    @cached_property
    def _outside_tree(self) -> cKDTree:
        padded = np.pad(self.mask, 1, constant_values=False)
        ii, jj = np.nonzero(~padded)
        pts = self.lower + (np.column_stack([ii, jj]) - 1 + 0.5) * self.h
        return cKDTree(pts)

    def primitives(self):
        return ()

    @cached_property
    def regular_primitives(self):
        return ()

    @cached_property
    def has_irregular(self):
        return False

    def distance(self, X):
        arr, single = _batch(X, 2)
        d, _ = self._outside_tree.query(arr)
        return _unbatch(d, single)

    regular_distance = distance

    def nearest_regular(self, X):
        arr, _ = _batch(X, 2)
        _, k = self._outside_tree.query(arr)
        return self._outside_tree.data[k], np.zeros(len(arr), dtype=int)

    def first_crossing(self, X, D):
        raise GeometryError("grid masks have no exact boundary")

    def scaled(self, a):
        return GridMask(a * self.h, self.mask, a * self.lower)

    def bbox(self):
        return self.lower.copy(), self.lower + self.h * np.array(self.mask.shape)

    def to_config(self):
        return {
            "type": "grid_mask",
            "h": self.h,
            "lower": self.lower.tolist(),
            "mask": [[int(v) for v in row] for row in self.mask],
        }


# ---------------------------------------------------------------------------
# config parsing
# ---------------------------------------------------------------------------

_DOMAIN_KEYS = {
    "ball": {"type", "center", "radius"},
    "halfspace": {"type", "normal", "offset"},
    "strip": {"type", "halfwidth", "dim"},
    "sector": {"type", "angle", "apex"},
    "annulus": {"type", "r", "R", "center"},
    "complement": {"type", "compact"},
    "punctured": {"type", "base", "points"},
    "excised": {"type", "base", "compact"},
    "grid_mask": {"type", "h", "lower", "mask"},
    "schlicht": {"type", "id", "angle"},
}

_COMPACT_KEYS = {
    "closed_ball": {"type", "center", "radius"},
    "segment": {"type", "endpoints"},
    "point": {"type", "location"},
    "union": {"type", "parts"},
    "lens": {"type", "balls"},
}


def _check_keys(cfg: dict, table: dict, what: str) -> str:
    if not isinstance(cfg, dict) or "type" not in cfg:
        raise GeometryError(f"{what} config must be an object with a 'type'")
    kind = cfg["type"]
    if kind not in table:
        raise GeometryError(f"unknown {what} type {kind!r}")
    extra = set(cfg) - table[kind]
    if extra:
        raise GeometryError(f"unknown keys for {what} {kind!r}: {sorted(extra)}")
    return kind


def compact_from_config(cfg: dict) -> CompactSet:
    kind = _check_keys(cfg, _COMPACT_KEYS, "compact set")
    try:
        if kind == "closed_ball":
            return ClosedBall(cfg["center"], cfg["radius"])
        if kind == "segment":
            p, q = cfg["endpoints"]
            return Segment(p, q)
        if kind == "point":
            return Singleton(cfg["location"])
        if kind == "union":
            return FiniteUnion(tuple(compact_from_config(c) for c in cfg["parts"]))
        a, b = cfg["balls"]
        return Lens(compact_from_config(a), compact_from_config(b))
    except KeyError as exc:
        raise GeometryError(f"missing key {exc} for compact set {kind!r}") from None


def domain_from_config(cfg: dict) -> Domain:
    """Build a domain from its JSON description (unknown keys are rejected)."""
    kind = _check_keys(cfg, _DOMAIN_KEYS, "domain")
    try:
        if kind == "ball":
            return Ball(cfg["center"], cfg["radius"])
        if kind == "halfspace":
            return HalfSpace(cfg["normal"], cfg["offset"])
        if kind == "strip":
            return Strip(cfg["halfwidth"], cfg.get("dim", 2))
        if kind == "sector":
            return Sector(cfg["angle"], cfg.get("apex"))
        if kind == "annulus":
            return Annulus(cfg["r"], cfg["R"], cfg["center"])
        if kind == "complement":
            return ComplementOfCompact(compact_from_config(cfg["compact"]))
        if kind == "punctured":
            return Punctured(domain_from_config(cfg["base"]), tuple(cfg["points"]))
        if kind == "excised":
            return Excised(domain_from_config(cfg["base"]), compact_from_config(cfg["compact"]))
        if kind == "grid_mask":
            return GridMask(cfg["h"], np.array(cfg["mask"], dtype=bool), cfg["lower"])
        from brownexit.harness.schlicht import schlicht_entry

        kwargs = {"angle": cfg["angle"]} if "angle" in cfg else {}
        return schlicht_entry(cfg["id"], **kwargs).domain
    except KeyError as exc:
        raise GeometryError(f"missing key {exc} for domain {kind!r}") from None
    except TypeError as exc:
        raise GeometryError(str(exc)) from None


def points_array(points: Sequence) -> np.ndarray:
    return np.array([as_point(p) for p in points])
