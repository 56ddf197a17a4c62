"""Planar geometry primitives: fin polylines, unit-cell and channel domains.

Polylines are closed, simple, counter-clockwise (N, 2) float arrays in meters;
the closing segment from the last vertex back to the first is implicit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import GeometryError

__all__ = [
    "polygon_area",
    "polygon_centroid",
    "polygon_perimeter",
    "ensure_ccw",
    "is_simple_polygon",
    "points_in_polygon",
    "distance_to_polyline",
    "subdivide_polyline",
    "resample_polyline",
    "circle_polyline",
    "GeometricBox",
    "UnitCellGeometry",
    "ChannelGeometry",
]


def polygon_area(poly: np.ndarray) -> float:
    """Signed area of a closed polyline (positive for counter-clockwise)."""
    x, y = poly[:, 0], poly[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    return 0.5 * float(np.sum(x * yn - xn * y))


def polygon_centroid(poly: np.ndarray) -> np.ndarray:
    """Area centroid of a closed polyline."""
    x, y = poly[:, 0], poly[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    a = 0.5 * np.sum(cross)
    if abs(a) < 1e-300:
        raise GeometryError("degenerate polygon: zero area")
    cx = np.sum((x + xn) * cross) / (6.0 * a)
    cy = np.sum((y + yn) * cross) / (6.0 * a)
    return np.array([cx, cy])


def polygon_perimeter(poly: np.ndarray) -> float:
    seg = np.roll(poly, -1, axis=0) - poly
    return float(np.sum(np.hypot(seg[:, 0], seg[:, 1])))


def ensure_ccw(poly: np.ndarray) -> np.ndarray:
    """Return the polyline oriented counter-clockwise."""
    return poly if polygon_area(poly) > 0 else poly[::-1].copy()


def _segments(poly: np.ndarray):
    return poly, np.roll(poly, -1, axis=0)


def is_simple_polygon(poly: np.ndarray, tol: float = 0.0) -> bool:
    """True if no two non-adjacent edges of the closed polyline intersect."""
    n = len(poly)
    if n < 3:
        return False
    a, b = _segments(poly)
    d = b - a
    lens = np.hypot(d[:, 0], d[:, 1])
    if np.any(lens <= tol):
        return False
    # all-pairs segment intersection test, vectorized over j for each i
    for i in range(n):
        j = np.arange(i + 2, n)
        # closing edge (n-1 -> 0) is adjacent to edge 0
        if i == 0:
            j = j[j != n - 1]
        if len(j) == 0:
            continue
        p, r = a[i], d[i]
        q, s = a[j], d[j]
        rxs = r[0] * s[:, 1] - r[1] * s[:, 0]
        qp = q - p
        qpxr = qp[:, 0] * r[1] - qp[:, 1] * r[0]
        qpxs = qp[:, 0] * s[:, 1] - qp[:, 1] * s[:, 0]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = qpxs / rxs
            u = qpxr / rxs
        crossing = (np.abs(rxs) > 1e-300) & (t > 0) & (t < 1) & (u > 0) & (u < 1)
        if np.any(crossing):
            return False
        # collinear overlap
        coll = (np.abs(rxs) <= 1e-300) & (np.abs(qpxr) <= 1e-300)
        if np.any(coll):
            return False
    return True


def points_in_polygon(pts: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Even-odd ray-casting test, vectorized over points."""
    x, y = pts[:, 0], pts[:, 1]
    inside = np.zeros(len(pts), dtype=bool)
    a, b = _segments(poly)
    for (x0, y0), (x1, y1) in zip(a, b):
        cond = (y0 > y) != (y1 > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            xin = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
        hit = cond & (x < xin)
        inside ^= hit
    return inside


def distance_to_polyline(pts: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Unsigned distance from each point to the closed polyline boundary."""
    a, b = _segments(poly)
    d = b - a
    len2 = np.maximum(d[:, 0] ** 2 + d[:, 1] ** 2, 1e-300)
    # (npts, nseg) projections, chunked to bound memory
    out = np.full(len(pts), np.inf)
    chunk = max(1, 2_000_000 // max(len(a), 1))
    for s in range(0, len(pts), chunk):
        p = pts[s : s + chunk]
        w = p[:, None, :] - a[None, :, :]
        t = np.clip((w[:, :, 0] * d[:, 0] + w[:, :, 1] * d[:, 1]) / len2, 0.0, 1.0)
        proj = a[None, :, :] + t[:, :, None] * d[None, :, :]
        dist = np.hypot(p[:, None, 0] - proj[:, :, 0], p[:, None, 1] - proj[:, :, 1])
        out[s : s + chunk] = dist.min(axis=1)
    return out


def subdivide_polyline(poly: np.ndarray, spacing: float) -> np.ndarray:
    """Split each segment into equal pieces no longer than `spacing`.

    Original vertices are preserved exactly, so the enclosed region (and its
    area) is unchanged.
    """
    pts = []
    a, b = _segments(poly)
    for p, q in zip(a, b):
        length = float(np.hypot(*(q - p)))
        n = max(1, int(np.ceil(length / spacing - 1e-12)))
        for k in range(n):
            pts.append(p + (q - p) * (k / n))
    return np.asarray(pts)


def resample_polyline(poly: np.ndarray, spacing: float) -> np.ndarray:
    """Uniform arclength resampling of a smooth closed loop.

    Samples a periodic cubic spline through the old vertices; vertex count =
    round(perimeter / spacing), at least 8. Because the spline interpolates
    rather than chords, convex regions keep their enclosed area to high order
    in the spacing. Sharp corners are rounded by about one spacing; use
    subdivide_polyline when vertices must be preserved exactly.
    """
    poly = np.asarray(poly, dtype=float)
    closed = np.vstack([poly, poly[:1]])
    seg = np.diff(closed, axis=0)
    seglen = np.hypot(seg[:, 0], seg[:, 1])
    per = float(seglen.sum())
    keep = seglen > 1e-12 * per  # drop duplicate vertices
    closed = np.vstack([closed[:-1][keep], closed[:1]])
    t = np.concatenate([[0.0], np.cumsum(seglen[keep])])
    n = max(8, int(round(per / spacing)))
    spline = CubicSpline(t, closed, bc_type="periodic", axis=0)
    return spline(np.arange(n) * (t[-1] / n))


def circle_polyline(center, diameter: float, spacing: float) -> np.ndarray:
    """Closed CCW polyline approximating a circle, vertex spacing ~ `spacing`."""
    r = 0.5 * diameter
    n = max(16, int(round(2 * np.pi * r / spacing)))
    ang = 2 * np.pi * np.arange(n) / n
    return np.column_stack([center[0] + r * np.cos(ang), center[1] + r * np.sin(ang)])


@dataclass(frozen=True)
class GeometricBox:
    """Axis-aligned bounds confining fin nodes during optimization."""

    xlo: float
    xhi: float
    ylo: float
    yhi: float

    def contains(self, pts: np.ndarray, tol: float = 0.0) -> np.ndarray:
        return (
            (pts[:, 0] >= self.xlo - tol)
            & (pts[:, 0] <= self.xhi + tol)
            & (pts[:, 1] >= self.ylo - tol)
            & (pts[:, 1] <= self.yhi + tol)
        )

    def as_array(self):
        return np.array([[self.xlo, self.ylo], [self.xhi, self.yhi]])


@dataclass(frozen=True)
class UnitCellGeometry:
    """Rectangular periodic unit cell [0, lx] x [0, ly] with an optional fin hole.

    The fin polyline is closed, simple, counter-clockwise, and must lie strictly
    inside the design box, which itself lies strictly inside the cell.
    """

    lx: float
    ly: float
    fin: np.ndarray | None = None
    box: GeometricBox | None = None

    def __post_init__(self):
        if not (self.lx > 0 and self.ly > 0):
            raise GeometryError("cell dimensions must be positive")
        box = self.box
        if box is None:
            box = GeometricBox(0.10 * self.lx, 0.90 * self.lx, 0.15 * self.ly, 0.85 * self.ly)
            object.__setattr__(self, "box", box)
        if not (0 < box.xlo < box.xhi < self.lx and 0 < box.ylo < box.yhi < self.ly):
            raise GeometryError("design box must lie strictly inside the cell with nonzero margin")
        if self.fin is not None:
            fin = np.asarray(self.fin, dtype=float)
            if fin.ndim != 2 or fin.shape[1] != 2 or len(fin) < 3:
                raise GeometryError("fin polyline must be an (N>=3, 2) array")
            fin = ensure_ccw(fin)
            if not is_simple_polygon(fin):
                raise GeometryError("fin polyline is self-intersecting or degenerate")
            if not np.all(box.contains(fin)):
                raise GeometryError("fin polyline must lie inside the design box")
            object.__setattr__(self, "fin", fin)

    @property
    def cell_area(self) -> float:
        return self.lx * self.ly

    @property
    def fin_area(self) -> float:
        return 0.0 if self.fin is None else polygon_area(self.fin)

    @property
    def fluid_area(self) -> float:
        return self.cell_area - self.fin_area

    @property
    def porosity(self) -> float:
        return self.fluid_area / self.cell_area

    @property
    def center(self) -> np.ndarray:
        return np.array([0.5 * self.lx, 0.5 * self.ly])


@dataclass(frozen=True)
class ChannelGeometry:
    """Laterally periodic channel [0, length] x [0, height] with fin holes.

    Used by the full-array verification: x is the through-flow direction with
    real inlet/outlet boundaries, y is periodic.
    """

    length: float
    height: float
    fins: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if not (self.length > 0 and self.height > 0):
            raise GeometryError("channel dimensions must be positive")
        fins = []
        for poly in self.fins:
            poly = ensure_ccw(np.asarray(poly, dtype=float))
            if not is_simple_polygon(poly):
                raise GeometryError("fin polyline is self-intersecting or degenerate")
            if np.any(poly[:, 0] <= 0) or np.any(poly[:, 0] >= self.length):
                raise GeometryError("fin polyline crosses the inlet/outlet boundary")
            if np.any(poly[:, 1] <= 0) or np.any(poly[:, 1] >= self.height):
                raise GeometryError("fin polyline crosses the lateral boundary")
            fins.append(poly)
        object.__setattr__(self, "fins", tuple(fins))

    @property
    def fluid_area(self) -> float:
        return self.length * self.height - sum(polygon_area(p) for p in self.fins)
