"""Simulated vision stack.

Detection, over-segmentation and per-segment labelling are stochastic stand-ins
for the neural models; the fusion step that rebuilds an instance mask from the
segments whose label matches the detection is exact.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage

from .geometry import Point2, Polygon, RasterMask, disk_offsets, mask_centroid, mask_union, rasterize
from .scene import FoodClass, Scene

BBOX_MARGIN_MM = 5.0


@dataclass(frozen=True)
class PerceptionConfig:
    """Oracle rates and raster settings for :func:`observe`.

    ``p_label`` applies per segment.  Its defaults are set so that the share
    of detected objects whose fused mask reaches IoU >= 0.8 matches the
    object-level segmentation rates (0.975 two-class, 0.90 three-class) under
    the default over-segmentation range.
    """

    p_detect: float = 0.934
    p_label: float = 0.9864
    partials_range: tuple[int, int] = (1, 4)
    background_range: tuple[int, int] = (1, 3)
    stuck_gap_mm: float = 2.0
    resolution: float = 1.0
    debug_dir: str | None = None

    def __post_init__(self):
        for name in ("p_detect", "p_label"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        lo, hi = self.partials_range
        if not 1 <= lo <= hi <= 8:
            raise ValueError("partials_range must lie within [1, 8]")
        blo, bhi = self.background_range
        if not 0 <= blo <= bhi:
            raise ValueError("background_range must be a non-negative interval")
        if self.stuck_gap_mm < 0:
            raise ValueError("stuck_gap_mm must be non-negative")
        if not self.resolution > 0:
            raise ValueError("resolution must be positive")
        object.__setattr__(self, "partials_range", (int(lo), int(hi)))
        object.__setattr__(self, "background_range", (int(blo), int(bhi)))

    @classmethod
    def two_class(cls, **kw) -> "PerceptionConfig":
        return cls(**kw)

    @classmethod
    def three_class(cls, **kw) -> "PerceptionConfig":
        kw.setdefault("p_detect", 0.929)
        kw.setdefault("p_label", 0.9470)
        return cls(**kw)

    @classmethod
    def perfect(cls, **kw) -> "PerceptionConfig":
        kw.setdefault("p_detect", 1.0)
        kw.setdefault("p_label", 1.0)
        return cls(**kw)


@dataclass(frozen=True)
class Detection:
    label: FoodClass
    bbox: tuple[float, float, float, float]
    true_ids: tuple[int, ...]
    blob_mask: RasterMask = field(repr=False, compare=False)


@dataclass(frozen=True)
class PartialMask:
    mask: RasterMask
    origin_object: int | None = None
    is_background: bool = False


@dataclass(frozen=True)
class FusedObject:
    label: FoodClass
    mask: RasterMask = field(repr=False)
    centroid: Point2
    area: float
    bbox: tuple[float, float, float, float]
    true_ids: tuple[int, ...] = ()


@dataclass(frozen=True)
class Observation:
    objects: tuple[FusedObject, ...]
    count_by_class: dict[FoodClass, int]
    target_class: FoodClass | None = None
    # every kept detection, including those whose fusion came back empty
    detections: tuple[Detection, ...] = field(default=(), compare=False, repr=False)

    def count(self, food_class: FoodClass) -> int:
        return self.count_by_class.get(food_class, 0)

    @property
    def n_obs(self) -> int:
        return self.count(self.target_class) if self.target_class is not None else len(self.objects)

    def indices_of(self, food_class: FoodClass) -> list[int]:
        return [k for k, o in enumerate(self.objects) if o.label == food_class]


def board_grid(scene: Scene, resolution: float) -> RasterMask:
    w = math.ceil(scene.board.width / resolution - 1e-9)
    h = math.ceil(scene.board.height / resolution - 1e-9)
    return RasterMask.empty(Point2(0.0, 0.0), resolution, w, h)


@lru_cache(maxsize=8192)
def object_mask(shape: Polygon, resolution: float = 1.0) -> RasterMask:
    """Compact mask of one shape on the board lattice (memoized; masks are read-only)."""
    return rasterize(shape, resolution)


def object_masks(scene: Scene, resolution: float = 1.0) -> dict[int, RasterMask]:
    """Rasterize every object; masks share the board lattice but not an extent."""
    return {o.id: object_mask(o.shape, resolution) for o in scene.objects}


def _global_bounds(mask: RasterMask) -> tuple[int, int, int, int]:
    r = mask.resolution
    oi, oj = round(mask.origin.x / r), round(mask.origin.y / r)
    i0, j0, i1, j1 = mask.cell_bounds()
    return i0 + oi, j0 + oj, i1 + oi, j1 + oj


def _on_window(mask: RasterMask, i0: int, j0: int, i1: int, j1: int) -> RasterMask:
    r = mask.resolution
    return mask.reframe(Point2(i0 * r, j0 * r), i1 - i0 + 1, j1 - j0 + 1)


def common_grid(masks) -> tuple[int, int, int, int]:
    bounds = [_global_bounds(m) for m in masks if m]
    return (
        min(b[0] for b in bounds),
        min(b[1] for b in bounds),
        max(b[2] for b in bounds),
        max(b[3] for b in bounds),
    )


def align(masks) -> list[RasterMask]:
    """Reframe lattice-sharing masks onto the window covering all of them."""
    masks = list(masks)
    window = common_grid(masks)
    return [_on_window(m, *window) for m in masks]


@dataclass(frozen=True)
class Blob:
    ids: tuple[int, ...]
    mask: RasterMask = field(repr=False)


def _find(parent: dict, a):
    while parent[a] != a:
        parent[a] = parent[parent[a]]
        a = parent[a]
    return a


def _blobs(scene: Scene, masks: dict[int, RasterMask], stuck_gap_mm: float) -> list[Blob]:
    ids = [o.id for o in scene.objects if masks[o.id]]
    if not ids:
        return []
    res = masks[ids[0]].resolution
    disk = disk_offsets(stuck_gap_mm / res)
    pad = disk.shape[0] // 2
    bounds = {i: _global_bounds(masks[i]) for i in ids}
    parent = {i: i for i in ids}
    for a_pos, a in enumerate(ids):
        ai0, aj0, ai1, aj1 = bounds[a]
        window = (ai0 - pad, aj0 - pad, ai1 + pad, aj1 + pad)
        dilated = None
        for b in ids[a_pos + 1 :]:
            bi0, bj0, bi1, bj1 = bounds[b]
            if bi0 > window[2] or bi1 < window[0] or bj0 > window[3] or bj1 < window[1]:
                continue
            if dilated is None:
                cells = _on_window(masks[a], *window).cells
                dilated = ndimage.binary_dilation(cells, structure=disk) if pad else cells
            other = _on_window(masks[b], *window).cells
            if np.any(dilated & other):
                ra, rb = _find(parent, a), _find(parent, b)
                if ra != rb:
                    parent[max(ra, rb)] = min(ra, rb)
    groups: dict[int, list[int]] = {}
    for i in ids:
        groups.setdefault(_find(parent, i), []).append(i)
    blobs = []
    for members in groups.values():
        members = sorted(members)
        mask = mask_union(align(masks[i] for i in members))
        blobs.append(Blob(tuple(members), mask))
    blobs.sort(key=lambda b: (-b.mask.count, b.ids[0]))
    return blobs


def merge_close_objects(scene: Scene, stuck_gap_mm: float, resolution: float = 1.0) -> list[list[int]]:
    """Group objects whose masks come within ``stuck_gap_mm`` of each other.

    Two masks are close when dilating one by a disk of radius
    ``stuck_gap_mm`` overlaps the other, i.e. some pair of set-cell centers
    is at most ``stuck_gap_mm`` apart.  Grouping is transitive; blobs are
    ordered by area, largest first.
    """
    masks = object_masks(scene, resolution)
    return [list(b.ids) for b in _blobs(scene, masks, stuck_gap_mm)]


def _blob_label(scene: Scene, blob: Blob, masks: dict[int, RasterMask]) -> FoodClass:
    best = min(blob.ids, key=lambda i: (-masks[i].count, i))
    return scene.get(best).food_class


def _bbox(scene: Scene, mask: RasterMask) -> tuple[float, float, float, float]:
    x0, y0, x1, y1 = mask.bounds()
    m = BBOX_MARGIN_MM
    return (max(0.0, x0 - m), max(0.0, y0 - m), min(scene.board.width, x1 + m), min(scene.board.height, y1 + m))


def _detect_blobs(scene, blobs, masks, config, rng) -> list[Detection]:
    dets = []
    for blob in blobs:
        if rng.random() < config.p_detect:
            dets.append(Detection(_blob_label(scene, blob, masks), _bbox(scene, blob.mask), blob.ids, blob.mask))
    return dets


def detect(scene: Scene, config: PerceptionConfig, rng: np.random.Generator) -> list[Detection]:
    """One candidate per blob, each kept with probability ``p_detect``."""
    masks = object_masks(scene, config.resolution)
    blobs = _blobs(scene, masks, config.stuck_gap_mm)
    return _detect_blobs(scene, blobs, masks, config, rng)


def _crop_to_bbox(mask: RasterMask, bbox) -> RasterMask:
    r = mask.resolution
    ox, oy = mask.origin
    i0 = math.floor((bbox[0] - ox) / r + 1e-9)
    j0 = math.floor((bbox[1] - oy) / r + 1e-9)
    i1 = math.ceil((bbox[2] - ox) / r - 1e-9)
    j1 = math.ceil((bbox[3] - oy) / r - 1e-9)
    return mask.reframe(Point2(ox + i0 * r, oy + j0 * r), max(i1 - i0, 1), max(j1 - j0, 1))


def _voronoi_labels(
    region: np.ndarray, k: int, rng: np.random.Generator, flat: np.ndarray | None = None
) -> np.ndarray:
    """Label the cells of ``region`` by nearest of ``k`` random distinct sites.

    Sites are drawn from the region's cells in row-major order (``flat`` may
    carry them precomputed); ties go to the lower site index.  Cells outside
    the region get -1.
    """
    if flat is None:
        flat = np.flatnonzero(region)
    h, w = region.shape
    sj, si = np.divmod(flat[rng.choice(len(flat), size=k, replace=False)], w)
    dx2 = (np.arange(w)[None, :] - si[:, None]) ** 2
    dy2 = (np.arange(h)[None, :] - sj[:, None]) ** 2
    labels = np.argmin(dy2[:, :, None] + dx2[:, None, :], axis=0)
    labels[~region] = -1
    return labels


def _owner_raster(base: RasterMask, members: dict[int, RasterMask] | None) -> tuple[tuple[int, ...], np.ndarray | None]:
    """Per-cell index into the sorted member ids (-1 where no member)."""
    if not members:
        return (), None
    ids = tuple(sorted(members))
    owner = np.full(base.cells.shape, -1, dtype=np.int64)
    # reverse order so the smallest id wins where member rasters touch
    for n in range(len(ids) - 1, -1, -1):
        owner[members[ids[n]].reframe(base.origin, base.width, base.height).cells] = n
    return ids, owner


def _segment(
    base: RasterMask,
    ids: tuple[int, ...],
    owner: np.ndarray | None,
    with_background: bool,
    config: PerceptionConfig,
    rng: np.random.Generator,
    k: int | None = None,
    flats: tuple[np.ndarray, np.ndarray] | None = None,
) -> list[PartialMask]:
    lo, hi = config.partials_range
    if k is None:
        k = int(rng.integers(lo, hi + 1))
    k = max(1, min(k, base.count))
    inner_flat, outer_flat = flats if flats is not None else (None, None)
    labels = _voronoi_labels(base.cells, k, rng, inner_flat)
    origins: list[int | None] = [None] * k
    if owner is not None:
        inside = (labels >= 0) & (owner >= 0)
        n = len(ids)
        tally = np.bincount(labels[inside] * n + owner[inside], minlength=k * n).reshape(k, n)
        # argmax returns the first maximum, i.e. the smallest id on ties
        origins = [ids[int(np.argmax(row))] if row.any() else None for row in tally]
    parts = [PartialMask(base.with_cells(labels == s), origins[s], False) for s in range(k)]
    blo, bhi = config.background_range
    m = int(rng.integers(blo, bhi + 1))
    if with_background and m > 0:
        outside = ~base.cells
        n_bg = len(outer_flat) if outer_flat is not None else int(np.count_nonzero(outside))
        if n_bg:
            m = min(m, n_bg)
            blabels = _voronoi_labels(outside, m, rng, outer_flat)
            parts.extend(PartialMask(base.with_cells(blabels == s), None, True) for s in range(m))
    return parts


def oversegment(
    blob_mask: RasterMask,
    config: PerceptionConfig,
    rng: np.random.Generator,
    bbox: tuple[float, float, float, float] | None = None,
    members: dict[int, RasterMask] | None = None,
    k: int | None = None,
) -> list[PartialMask]:
    """Split a blob into object segments plus a few background segments.

    Object segments partition the blob exactly.  With ``bbox`` the segments
    live on the bbox-cropped grid and background segments are carved from the
    bbox cells outside the blob; without it, no background is produced.
    ``members`` (ground-truth per-object masks) only annotates provenance.
    """
    if not blob_mask:
        raise ValueError("cannot over-segment an empty mask")
    base = _crop_to_bbox(blob_mask, bbox) if bbox is not None else blob_mask
    ids, owner = _owner_raster(base, members)
    return _segment(base, ids, owner, bbox is not None, config, rng, k)


def classify_partial(
    partial: PartialMask,
    true_label: FoodClass,
    config: PerceptionConfig,
    rng: np.random.Generator,
) -> FoodClass | None:
    """Label oracle for one segment.

    Two uniforms are drawn on every call so that runs with different
    ``p_label`` stay coupled draw-for-draw.
    """
    u, w = rng.random(), rng.random()
    if not partial.is_background:
        return true_label if u < config.p_label else None
    if u < config.p_label:
        return None
    wrong = [c for c in FoodClass if c != true_label]
    return wrong[min(int(w * len(wrong)), len(wrong) - 1)]


def fuse_masks(
    partials: Sequence[PartialMask],
    labels: Sequence[FoodClass | None],
    target: FoodClass,
) -> RasterMask | None:
    """Union of the segments labelled ``target``; ``None`` when none match."""
    chosen = [p.mask for p, lab in zip(partials, labels) if lab == target]
    if not chosen:
        return None
    return mask_union(chosen)


@dataclass(frozen=True)
class _Prepared:
    blob: Blob
    label: FoodClass
    bbox: tuple[float, float, float, float]
    base: RasterMask
    ids: tuple[int, ...]
    owner: np.ndarray
    flats: tuple[np.ndarray, np.ndarray]


@lru_cache(maxsize=1024)
def _prepare(board, objects, stuck_gap_mm: float, resolution: float) -> tuple[_Prepared, ...]:
    # everything here depends on the scene only, and the planner re-observes
    # unchanged scenes often
    scene = Scene(board, objects)
    masks = object_masks(scene, resolution)
    out = []
    for blob in _blobs(scene, masks, stuck_gap_mm):
        bbox = _bbox(scene, blob.mask)
        base = _crop_to_bbox(blob.mask, bbox)
        ids, owner = _owner_raster(base, {i: masks[i] for i in blob.ids})
        owner.setflags(write=False)
        flats = (np.flatnonzero(base.cells), np.flatnonzero(~base.cells))
        out.append(_Prepared(blob, _blob_label(scene, blob, masks), bbox, base, ids, owner, flats))
    return tuple(out)


def observe(
    scene: Scene,
    target_class: FoodClass | None,
    config: PerceptionConfig,
    rng: np.random.Generator,
) -> Observation:
    """Detect, over-segment, label and fuse every object on the board."""
    prepared = _prepare(scene.board, scene.objects, config.stuck_gap_mm, config.resolution)
    detected = [p for p in prepared if rng.random() < config.p_detect]
    classes = {o.id: o.food_class for o in scene.objects}
    objects = []
    for det in detected:
        partials = _segment(det.base, det.ids, det.owner, True, config, rng, flats=det.flats)
        labels = []
        for p in partials:
            truth = det.label if p.is_background else classes[p.origin_object]
            labels.append(classify_partial(p, truth, config, rng))
        fused = fuse_masks(partials, labels, det.label)
        if fused is None:
            continue
        objects.append(FusedObject(det.label, fused, mask_centroid(fused), fused.area, det.bbox, det.blob.ids))
    counts: dict[FoodClass, int] = {}
    for o in objects:
        counts[o.label] = counts.get(o.label, 0) + 1
    dets = tuple(Detection(d.label, d.bbox, d.blob.ids, d.blob.mask) for d in detected)
    obs = Observation(tuple(objects), counts, target_class, dets)
    if config.debug_dir:
        dump_observation(obs, config.debug_dir)
    return obs


# ---------------------------------------------------------------------------
# debug dumps


def write_pgm(mask: RasterMask, path: str | Path) -> None:
    """Binary PGM (P5), top row = highest y."""
    img = np.where(mask.cells[::-1], 255, 0).astype(np.uint8)
    header = f"P5\n{mask.width} {mask.height}\n255\n".encode()
    Path(path).write_bytes(header + img.tobytes())


def dump_observation(obs: Observation, directory: str | Path) -> Path:
    """Write one PGM per fused mask plus a JSON index; returns the index path."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    n = len(list(d.glob("observe_*.json")))
    stem = f"observe_{n:05d}"
    entries = []
    for k, o in enumerate(obs.objects):
        name = f"{stem}_{k:02d}.pgm"
        write_pgm(o.mask, d / name)
        entries.append(
            {
                "file": name,
                "label": o.label.value,
                "centroid_mm": [round(o.centroid.x, 6), round(o.centroid.y, 6)],
                "area_mm2": round(o.area, 6),
                "bbox_mm": [round(v, 6) for v in o.bbox],
            }
        )
    index = d / f"{stem}.json"
    index.write_text(json.dumps({"objects": entries}, sort_keys=True, indent=2) + "\n")
    return index
