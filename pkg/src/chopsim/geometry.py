"""Planar geometry on the cutting board: polygons, raster masks and blade footprints.

Coordinates are millimeters in the board frame (origin at the lower-left
corner).  Raster cells are indexed ``cells[j, i]`` with ``i`` along x and
``j`` along y; cell ``(i, j)`` has its center at
``origin + ((i + 0.5) * resolution, (j + 0.5) * resolution)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, NamedTuple, Sequence

import numpy as np
import shapely
from scipy import ndimage
from shapely.geometry import Polygon as _ShapelyPolygon


class GeometryError(ValueError):
    """Raised when a geometric precondition does not hold."""


class Point2(NamedTuple):
    x: float
    y: float


def shoelace_area(coords) -> float:
    """Signed area of a closed ring (positive when counter-clockwise)."""
    xy = np.asarray(coords, dtype=float)
    x, y = xy[:, 0], xy[:, 1]
    return 0.5 * float(x[:-1] @ y[1:] - x[1:] @ y[:-1] + x[-1] * y[0] - x[0] * y[-1])


@dataclass(frozen=True, eq=False)
class Polygon:
    """Simple polygon with counter-clockwise vertices.

    Clockwise input is reversed on construction; fewer than three vertices or
    a (near) zero area raise :class:`GeometryError`.
    """

    coords: np.ndarray

    def __post_init__(self):
        xy = np.array(self.coords, dtype=float, copy=True)
        if xy.ndim != 2 or xy.shape[1] != 2 or len(xy) < 3:
            raise GeometryError("polygon needs at least 3 (x, y) vertices")
        if len(xy) > 3 and abs(xy[0, 0] - xy[-1, 0]) <= 1e-9 and abs(xy[0, 1] - xy[-1, 1]) <= 1e-9:
            xy = xy[:-1]
        if not np.isfinite(xy).all():
            raise GeometryError("polygon vertices must be finite")
        area = shoelace_area(xy)
        span = float(np.ptp(xy, axis=0).max())
        if abs(area) <= 1e-12 * max(span * span, 1e-300):
            raise GeometryError("degenerate polygon (zero area)")
        if area < 0:
            xy = xy[::-1].copy()
        xy.setflags(write=False)
        object.__setattr__(self, "coords", xy)

    @property
    def vertices(self) -> list[Point2]:
        return [Point2(float(x), float(y)) for x, y in self.coords]

    @property
    def area(self) -> float:
        return shoelace_area(self.coords)

    @property
    def centroid(self) -> Point2:
        xy = self.coords
        x, y = xy[:, 0], xy[:, 1]
        xn, yn = np.append(x[1:], x[0]), np.append(y[1:], y[0])
        cross = x * yn - xn * y
        a6 = 3.0 * cross.sum()
        return Point2(float(((x + xn) * cross).sum() / a6), float(((y + yn) * cross).sum() / a6))

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        lo = self.coords.min(axis=0)
        hi = self.coords.max(axis=0)
        return float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1])

    def translated(self, dx: float, dy: float) -> "Polygon":
        return Polygon(self.coords + np.array([dx, dy]))

    def rotated(self, angle: float, about: Point2 | None = None) -> "Polygon":
        cx, cy = about if about is not None else self.centroid
        c, s = math.cos(angle), math.sin(angle)
        rel = self.coords - (cx, cy)
        rot = rel @ np.array([[c, s], [-s, c]])
        return Polygon(rot + (cx, cy))

    def is_simple(self) -> bool:
        return bool(self.to_shapely().is_valid)

    def is_convex(self) -> bool:
        xy = self.coords
        d1 = np.roll(xy, -1, axis=0) - xy
        d2 = np.roll(d1, -1, axis=0)
        cross = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
        return bool(np.all(cross >= -1e-9 * float(np.abs(cross).max())))

    def contains(self, p: Point2) -> bool:
        return bool(self.to_shapely().covers(shapely.Point(p)))

    def distance(self, other: "Polygon") -> float:
        return float(self.to_shapely().distance(other.to_shapely()))

    def to_shapely(self) -> _ShapelyPolygon:
        return self._shapely

    @cached_property
    def _shapely(self) -> _ShapelyPolygon:
        return _ShapelyPolygon(self.coords)

    @classmethod
    def from_shapely(cls, geom) -> "Polygon":
        return cls(np.asarray(geom.exterior.coords)[:-1])

    def __eq__(self, other):
        if not isinstance(other, Polygon):
            return NotImplemented
        return self.coords.shape == other.coords.shape and bool(np.array_equal(self.coords, other.coords))

    def __hash__(self):
        return hash(self.coords.tobytes())

    def __repr__(self):
        return f"Polygon(n={len(self.coords)}, area={self.area:.3f})"


def regular_polygon(center: Point2, radius: float, n: int, phase: float = 0.0) -> Polygon:
    t = phase + 2.0 * math.pi * np.arange(n) / n
    return Polygon(np.column_stack([center[0] + radius * np.cos(t), center[1] + radius * np.sin(t)]))


def rectangle(center: Point2, width: float, height: float) -> Polygon:
    cx, cy = center
    hw, hh = width / 2.0, height / 2.0
    return Polygon([(cx - hw, cy - hh), (cx + hw, cy - hh), (cx + hw, cy + hh), (cx - hw, cy + hh)])


def convex_hull_indices(points: np.ndarray) -> np.ndarray:
    """Monotone-chain hull; returns row indices of strict hull vertices, CCW.

    Exact for integer input.  Collinear boundary points are dropped.
    """
    pts = np.asarray(points)
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    if len(order) < 3:
        return order

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    seq = [tuple(pts[k].tolist()) + (int(k),) for k in order]
    lower: list = []
    for p in seq:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list = []
    for p in reversed(seq):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    hull = lower[:-1] + upper[:-1]
    return np.array([p[2] for p in hull], dtype=int)


def convex_hull(points) -> Polygon:
    pts = np.asarray(points, dtype=float)
    return Polygon(pts[convex_hull_indices(pts)])


# ---------------------------------------------------------------------------
# raster masks


@dataclass(frozen=True, eq=False)
class RasterMask:
    origin: Point2
    resolution: float
    cells: np.ndarray

    def __post_init__(self):
        if not self.resolution > 0:
            raise GeometryError("resolution must be positive")
        cells = np.asarray(self.cells, dtype=bool)
        if cells.flags.writeable:
            cells = cells.copy()
        if cells.ndim != 2:
            raise GeometryError("cells must be a 2-D array")
        cells.setflags(write=False)
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "origin", Point2(float(self.origin[0]), float(self.origin[1])))

    @classmethod
    def empty(cls, origin: Point2, resolution: float, width: int, height: int) -> "RasterMask":
        return cls(origin, resolution, np.zeros((height, width), dtype=bool))

    @property
    def width(self) -> int:
        return self.cells.shape[1]

    @property
    def height(self) -> int:
        return self.cells.shape[0]

    @cached_property
    def count(self) -> int:
        return int(np.count_nonzero(self.cells))

    @property
    def area(self) -> float:
        return self.count * self.resolution**2

    def __bool__(self):
        return self.count > 0

    def same_grid(self, other: "RasterMask") -> bool:
        return (
            self.origin == other.origin
            and self.resolution == other.resolution
            and self.cells.shape == other.cells.shape
        )

    @cached_property
    def _indices(self) -> np.ndarray:
        jj, ii = np.nonzero(self.cells)
        out = np.column_stack([ii, jj])
        out.setflags(write=False)
        return out

    def indices(self) -> np.ndarray:
        """Set cells as an ``(N, 2)`` integer array of ``(i, j)``, row-major order."""
        return self._indices

    def centers(self) -> np.ndarray:
        return self.origin + (self.indices() + 0.5) * self.resolution

    @cached_property
    def _cell_bounds(self) -> tuple[int, int, int, int] | None:
        cols = np.flatnonzero(self.cells.any(axis=0))
        if len(cols) == 0:
            return None
        rows = np.flatnonzero(self.cells.any(axis=1))
        return int(cols[0]), int(rows[0]), int(cols[-1]), int(rows[-1])

    def cell_bounds(self) -> tuple[int, int, int, int] | None:
        """``(i0, j0, i1, j1)`` inclusive index extent of set cells."""
        return self._cell_bounds

    def bounds(self) -> tuple[float, float, float, float] | None:
        """Millimeter extent covered by the set cells' squares."""
        cb = self.cell_bounds()
        if cb is None:
            return None
        i0, j0, i1, j1 = cb
        r = self.resolution
        ox, oy = self.origin
        return ox + i0 * r, oy + j0 * r, ox + (i1 + 1) * r, oy + (j1 + 1) * r

    def reframe(self, origin: Point2, width: int, height: int) -> "RasterMask":
        """Copy onto another grid on the same lattice, cropping or padding."""
        r = self.resolution
        di = round((self.origin[0] - origin[0]) / r)
        dj = round((self.origin[1] - origin[1]) / r)
        if not (
            math.isclose(origin[0] + di * r, self.origin[0], abs_tol=1e-9 * max(1.0, r))
            and math.isclose(origin[1] + dj * r, self.origin[1], abs_tol=1e-9 * max(1.0, r))
        ):
            raise GeometryError("target grid is not on the same lattice")
        out = np.zeros((height, width), dtype=bool)
        si0, sj0 = max(0, -di), max(0, -dj)
        ti0, tj0 = max(0, di), max(0, dj)
        w = min(self.width - si0, width - ti0)
        h = min(self.height - sj0, height - tj0)
        if w > 0 and h > 0:
            out[tj0 : tj0 + h, ti0 : ti0 + w] = self.cells[sj0 : sj0 + h, si0 : si0 + w]
        return RasterMask(Point2(*origin), r, out)

    def with_cells(self, cells: np.ndarray) -> "RasterMask":
        return RasterMask(self.origin, self.resolution, cells)

    def __eq__(self, other):
        if not isinstance(other, RasterMask):
            return NotImplemented
        return self.same_grid(other) and bool(np.array_equal(self.cells, other.cells))

    def __repr__(self):
        return f"RasterMask(origin={tuple(self.origin)}, res={self.resolution}, {self.width}x{self.height}, set={self.count})"


def iou(a: RasterMask, b: RasterMask) -> float:
    if not a.same_grid(b):
        raise GeometryError("masks are on different grids")
    union = np.count_nonzero(a.cells | b.cells)
    if union == 0:
        return 1.0
    return np.count_nonzero(a.cells & b.cells) / union


def _fill_polygon(coords: np.ndarray, ox: float, oy: float, r: float, width: int, height: int) -> np.ndarray:
    """Scanline even-odd fill; a cell is set iff its center is inside."""
    out = np.zeros((height, width), dtype=bool)
    if width <= 0 or height <= 0:
        return out
    ys = oy + (np.arange(height) + 0.5) * r
    x1, y1 = coords[:, 0], coords[:, 1]
    x2, y2 = np.roll(x1, -1), np.roll(y1, -1)
    crosses = (y1[None, :] > ys[:, None]) != (y2[None, :] > ys[:, None])
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (ys[:, None] - y1[None, :]) / (y2 - y1)[None, :]
    xint = np.where(crosses, x1[None, :] + t * (x2 - x1)[None, :], np.inf)
    n_max = int(crosses.sum(axis=1).max())
    if n_max == 0:
        return out
    xint = np.sort(xint, axis=1)[:, :n_max]
    xs = ox + (np.arange(width) + 0.5) * r
    # even-odd rule: inside iff x_{2k} <= x < x_{2k+1}
    hits = (xint[:, None, :] <= xs[None, :, None]).sum(axis=2)
    out[:] = (hits & 1).astype(bool)
    return out


def rasterize(
    shape: Polygon,
    resolution: float = 1.0,
    grid: RasterMask | None = None,
) -> RasterMask:
    """Rasterize ``shape``: a cell is set iff its center lies inside.

    Without ``grid`` the mask covers the polygon's bounding box on the lattice
    anchored at (0, 0).  With ``grid`` the result uses that mask's origin,
    resolution and extent (the polygon is clipped to it).
    """
    if not isinstance(shape, Polygon):
        shape = Polygon(shape)
    if grid is not None:
        resolution = grid.resolution
    if not resolution > 0:
        raise GeometryError("resolution must be positive")
    r = resolution
    minx, miny, maxx, maxy = shape.bounds
    i0, j0 = math.floor(minx / r), math.floor(miny / r)
    i1, j1 = math.ceil(maxx / r), math.ceil(maxy / r)
    if grid is None:
        origin = Point2(i0 * r, j0 * r)
        cells = _fill_polygon(shape.coords, origin.x, origin.y, r, i1 - i0, j1 - j0)
        return RasterMask(origin, r, cells)
    gx, gy = grid.origin
    a0 = max(0, math.floor((minx - gx) / r))
    b0 = max(0, math.floor((miny - gy) / r))
    a1 = min(grid.width, math.ceil((maxx - gx) / r))
    b1 = min(grid.height, math.ceil((maxy - gy) / r))
    out = np.zeros((grid.height, grid.width), dtype=bool)
    if a1 > a0 and b1 > b0:
        out[b0:b1, a0:a1] = _fill_polygon(shape.coords, gx + a0 * r, gy + b0 * r, r, a1 - a0, b1 - b0)
    return RasterMask(grid.origin, r, out)


def mask_centroid(mask: RasterMask) -> Point2:
    """Mean of set-cell centers."""
    idx = mask.indices()
    if len(idx) == 0:
        raise GeometryError("centroid of an empty mask")
    mi, mj = idx.mean(axis=0)
    r = mask.resolution
    return Point2(float(mask.origin.x + (mi + 0.5) * r), float(mask.origin.y + (mj + 0.5) * r))


@dataclass(frozen=True)
class Chord:
    a: Point2
    b: Point2
    length: float

    @property
    def angle(self) -> float:
        """Direction of the chord in ``[0, pi)``."""
        return math.atan2(self.b.y - self.a.y, self.b.x - self.a.x) % math.pi


def _row_extremes(mask: RasterMask) -> np.ndarray:
    """Leftmost and rightmost set cell of every occupied row (a hull superset)."""
    i0, j0, i1, j1 = mask.cell_bounds()
    sub = mask.cells[j0 : j1 + 1, i0 : i1 + 1]
    occupied = np.flatnonzero(sub.any(axis=1))
    rows = sub[occupied]
    left = rows.argmax(axis=1)
    right = rows.shape[1] - 1 - rows[:, ::-1].argmax(axis=1)
    jj = occupied + j0
    pts = np.vstack([np.column_stack([left + i0, jj]), np.column_stack([right + i0, jj])])
    return np.unique(pts, axis=0)


def longest_diameter(mask: RasterMask) -> Chord:
    """Farthest pair of set-cell centers.

    The pair lies on the convex hull, so only hull vertices are compared
    (exactly, in integer cell units).  Among equally long chords the one with
    the lexicographically smallest ``(a.x, a.y, b.x, b.y)`` wins, with ``a``
    the lexicographically smaller endpoint.
    """
    if mask.count < 2:
        raise GeometryError("longest diameter needs at least two set cells")
    idx = _row_extremes(mask)
    hull = idx[convex_hull_indices(idx)]
    # sort hull vertices lexicographically so that row < col gives a <= b
    hull = hull[np.lexsort((hull[:, 1], hull[:, 0]))]
    d = hull[:, None, :] - hull[None, :, :]
    d2 = (d**2).sum(axis=-1)
    iu, ju = np.triu_indices(len(hull), k=1)
    sq = d2[iu, ju]
    best = sq.max()
    hits = np.flatnonzero(sq == best)
    # lexicographic (a, b) is lexicographic (row index, col index) on the sorted hull
    k = hits[np.lexsort((ju[hits], iu[hits]))[0]]
    pa, pb = hull[iu[k]], hull[ju[k]]
    r = mask.resolution
    ox, oy = mask.origin
    a = Point2(float(ox + (pa[0] + 0.5) * r), float(oy + (pa[1] + 0.5) * r))
    b = Point2(float(ox + (pb[0] + 0.5) * r), float(oy + (pb[1] + 0.5) * r))
    return Chord(a, b, math.sqrt(int(best)) * r)


def split_polygon(shape: Polygon, point: Point2, angle: float) -> list[Polygon]:
    """Cut ``shape`` by the infinite line through ``point`` at ``angle``.

    Returns every connected piece on either side of the line, ordered by
    side (right of the line direction first), then by centroid.  When the
    line does not cross the interior the input polygon is returned alone.
    """
    minx, miny, maxx, maxy = shape.bounds
    reach = 2.0 * (math.hypot(maxx - minx, maxy - miny) + math.hypot(point[0] - minx, point[1] - miny)) + 1.0
    ux, uy = math.cos(angle), math.sin(angle)
    px, py = point[0], point[1]
    a = (px - reach * ux, py - reach * uy)
    b = (px + reach * ux, py + reach * uy)
    geom = shape.to_shapely()
    parts = []
    # left then right half-plane as large rectangles sharing the cut line
    for sgn in (1.0, -1.0):
        nx, ny = -uy * reach * sgn, ux * reach * sgn
        half = _ShapelyPolygon([a, b, (b[0] + nx, b[1] + ny), (a[0] + nx, a[1] + ny)])
        piece = geom.intersection(half)
        parts.extend(g for g in getattr(piece, "geoms", [piece]) if g.geom_type == "Polygon" and g.area > 0)
    if len(parts) <= 1:
        return [shape]
    total = shape.area
    pieces = []
    for g in parts:
        if g.area <= 1e-12 * total:
            continue
        pieces.append(Polygon.from_shapely(g))
    if len(pieces) <= 1:
        return [shape]

    def key(p: Polygon):
        c = p.centroid
        side = (c.x - point[0]) * uy - (c.y - point[1]) * ux
        return (0 if side > 0 else 1, c.x, c.y)

    return sorted(pieces, key=key)


@dataclass(frozen=True)
class OrientedRect:
    """Rectangle of ``length`` along ``angle`` and ``width`` across it."""

    center: Point2
    length: float
    width: float
    angle: float

    def __post_init__(self):
        if not (self.length > 0 and self.width > 0):
            raise GeometryError("rectangle sides must be positive")
        object.__setattr__(self, "center", Point2(float(self.center[0]), float(self.center[1])))
        object.__setattr__(self, "angle", float(self.angle) % math.pi)

    @property
    def axis(self) -> tuple[float, float]:
        return math.cos(self.angle), math.sin(self.angle)

    def corners(self) -> np.ndarray:
        ux, uy = self.axis
        hl, hw = self.length / 2.0, self.width / 2.0
        c = np.array(self.center)
        u = np.array([ux, uy])
        v = np.array([-uy, ux])
        return np.array([c - hl * u - hw * v, c + hl * u - hw * v, c + hl * u + hw * v, c - hl * u + hw * v])

    def polygon(self) -> Polygon:
        return Polygon(self.corners())

    def inflated(self, margin: float) -> "OrientedRect":
        return OrientedRect(self.center, self.length + 2 * margin, self.width + 2 * margin, self.angle)

    def contains_points(self, pts: np.ndarray, tol: float = 1e-9) -> np.ndarray:
        """Boundary-inclusive containment test for an ``(N, 2)`` array."""
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        ux, uy = self.axis
        rel = pts - np.array(self.center)
        along = rel[:, 0] * ux + rel[:, 1] * uy
        across = -rel[:, 0] * uy + rel[:, 1] * ux
        return (np.abs(along) <= self.length / 2.0 + tol) & (np.abs(across) <= self.width / 2.0 + tol)


def blade_overlap(blade: OrientedRect, mask: RasterMask) -> bool:
    """True iff some set-cell center lies inside the blade rectangle."""
    return overlap_count(blade, mask) > 0


def overlap_count(blade: OrientedRect, mask: RasterMask) -> int:
    cb = mask.cell_bounds()
    if cb is None:
        return 0
    # cheap reject on the rectangle's bounding box
    corners = blade.corners()
    r = mask.resolution
    bx0, by0 = corners.min(axis=0) - r
    bx1, by1 = corners.max(axis=0) + r
    mb = mask.bounds()
    if mb[0] > bx1 or mb[2] < bx0 or mb[1] > by1 or mb[3] < by0:
        return 0
    return int(np.count_nonzero(blade.contains_points(mask.centers())))


def mask_union(parts: Sequence[RasterMask]) -> RasterMask:
    """Cell-wise OR of masks that share a grid."""
    parts = list(parts)
    if not parts:
        raise GeometryError("union of no masks")
    first = parts[0]
    for p in parts[1:]:
        if not p.same_grid(first):
            raise GeometryError("mask_union requires a common grid")
    cells = np.logical_or.reduce([p.cells for p in parts])
    return first.with_cells(cells)


_EIGHT = np.ones((3, 3), dtype=bool)


def connected_components(mask: RasterMask) -> list[RasterMask]:
    """8-connected components, largest first; ties by smallest ``(i, j)`` cell."""
    labels, n = ndimage.label(mask.cells, structure=_EIGHT)
    if n == 0:
        return []
    sizes = np.bincount(labels.ravel())[1:]
    # smallest (i, j) cell per label: scan in column-major order (i outer, j inner)
    flat = labels.T.ravel()
    nz = np.flatnonzero(flat)
    first = np.full(n, np.iinfo(np.int64).max)
    np.minimum.at(first, flat[nz] - 1, nz)
    order = sorted(range(n), key=lambda k: (-int(sizes[k]), int(first[k])))
    return [mask.with_cells(labels == k + 1) for k in order]


def disk_offsets(radius_cells: float) -> np.ndarray:
    """Boolean structuring element of cells within ``radius_cells`` of the center."""
    r = int(math.floor(radius_cells + 1e-9))
    g = np.arange(-r, r + 1)
    return (g[None, :] ** 2 + g[:, None] ** 2) <= radius_cells**2 + 1e-9


def points_bounds(points: Iterable[Point2]) -> tuple[float, float, float, float]:
    arr = np.asarray(list(points), dtype=float)
    lo, hi = arr.min(axis=0), arr.max(axis=0)
    return float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1])
