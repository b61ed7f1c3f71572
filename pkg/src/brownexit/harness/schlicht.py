"""Catalog of closed-form univalent maps ``f`` of the unit disk with ``f(0)=0, f'(0)=1``.

Each entry records the map as a sympy-parsable expression in ``z`` (tests check
the normalization symbolically), the image domain, the fundamental frequency
``lambda_ref`` (0 when the exit time has a polynomial tail) and the tail
exponent ``H_ref`` (``inf`` for exponential tails).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from brownexit.geometry import Ball, ComplementOfCompact, Domain, GeometryError, HalfSpace, Sector, Segment, Strip

#: The slit of the Koebe image is cut at this distance from the origin.
KOEBE_SLIT_RADIUS = 3.0

J01_SQUARED = 2.404825557695773**2


@dataclass(frozen=True)
class SchlichtEntry:
    id: str
    map_expr: str
    domain: Domain
    lambda_ref: float
    H_ref: float
    angle: float | None = None

    @property
    def exponential_tail(self) -> bool:
        return self.lambda_ref > 0

    def to_config(self) -> dict:
        cfg = {"type": "schlicht", "id": self.id}
        if self.angle is not None:
            cfg["angle"] = self.angle
        return cfg


def schlicht_entry(entry_id: str, angle: float | None = None) -> SchlichtEntry:
    if entry_id != "sector" and angle is not None:
        raise GeometryError(f"entry {entry_id!r} takes no angle")
    if entry_id == "disk":
        return SchlichtEntry("disk", "z", Ball([0.0, 0.0], 1.0), J01_SQUARED, math.inf)
    if entry_id == "halfplane":
        return SchlichtEntry("halfplane", "z/(1 - z)", HalfSpace([-1.0, 0.0], 0.5), 0.0, 0.5)
    if entry_id == "strip":
        return SchlichtEntry("strip", "log((1 + z)/(1 - z))/2", Strip(math.pi / 4), 4.0, math.inf)
    if entry_id == "koebe":
        slit = Segment([-KOEBE_SLIT_RADIUS, 0.0], [-0.25, 0.0])
        return SchlichtEntry("koebe", "z/(1 - z)**2", ComplementOfCompact(slit), 0.0, 0.25)
    if entry_id == "sector":
        if angle is None:
            raise GeometryError("the sector entry needs an angle")
        angle = float(angle)
        if not 0 < angle < 2 * math.pi:
            raise GeometryError("sector angle must lie in (0, 2*pi)")
        expr = f"pi/(2*{angle!r})*(((1 + z)/(1 - z))**({angle!r}/pi) - 1)"
        return SchlichtEntry("sector", expr, Sector(angle), 0.0, math.pi / (2 * angle), angle)
    raise GeometryError(f"unknown Schlicht entry {entry_id!r}")


CATALOG_IDS = ("disk", "halfplane", "strip", "koebe", "sector")
