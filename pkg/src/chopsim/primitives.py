"""Stochastic cut, disturb and push executors acting on ground-truth scenes.

Every executor is a pure ``Scene -> Scene`` transition given an RNG stream.
Moving objects travel in small steps and stop before leaving the board or
closing to within ``keep_out_mm`` of a stationary object, so pieces never
stack or overlap.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from shapely import Point

from .geometry import OrientedRect, Point2, Polygon, blade_overlap, split_polygon
from .perception import object_mask
from .scene import FoodClass, Scene, clamp_to_board, replace_object, roll_direction


class CutStyle(str, enum.Enum):
    EVEN = "even"
    LONG = "long"


class CutOutcome(str, enum.Enum):
    CLEAN = "clean"
    STUCK = "stuck"
    ROLLED = "rolled"
    MISSED = "missed"

    @property
    def separated(self) -> bool:
        return self in (CutOutcome.CLEAN, CutOutcome.STUCK)


# single-chop success rates per class and blade heuristic
DEFAULT_P_CUT: dict[tuple[FoodClass, CutStyle], float] = {
    (FoodClass.APPLE, CutStyle.EVEN): 1.00,
    (FoodClass.APPLE, CutStyle.LONG): 1.00,
    (FoodClass.CUCUMBER, CutStyle.EVEN): 1.00,
    (FoodClass.CUCUMBER, CutStyle.LONG): 0.80,
    (FoodClass.CARROT, CutStyle.EVEN): 0.80,
    (FoodClass.CARROT, CutStyle.LONG): 0.40,
}


@dataclass(frozen=True)
class CutPose:
    com: Point2
    angle: float

    def __post_init__(self):
        if not (math.isfinite(self.com[0]) and math.isfinite(self.com[1])):
            raise ValueError("cut position must be finite")
        object.__setattr__(self, "com", Point2(float(self.com[0]), float(self.com[1])))
        object.__setattr__(self, "angle", float(self.angle) % math.pi)

    @property
    def normal(self) -> tuple[float, float]:
        return -math.sin(self.angle), math.cos(self.angle)


@dataclass(frozen=True)
class BladeSpec:
    length: float = 200.0
    width: float = 5.0

    def __post_init__(self):
        if not (self.length > 0 and self.width > 0):
            raise ValueError("blade dimensions must be positive")

    def footprint(self, pose: CutPose) -> OrientedRect:
        return OrientedRect(pose.com, self.length, self.width, pose.angle)


@dataclass(frozen=True)
class ExecConfig:
    p_cut: dict[tuple[FoodClass, CutStyle], float] = field(default_factory=lambda: dict(DEFAULT_P_CUT))
    p_stuck_given_cut: dict[FoodClass, float] = field(default_factory=lambda: {FoodClass.APPLE: 0.1})
    p_push: float = 0.692
    p_disturb: float = 0.667
    separation_mm: float = 6.0
    roll_distance_range: tuple[float, float] = (20.0, 60.0)
    push_clearance_mm: float = 5.0
    push_step_mm: float = 5.0
    push_max_steps: int = 40
    stuck_gap_mm: float = 2.0
    keep_out_mm: float = 3.0
    resolution: float = 1.0

    def __post_init__(self):
        probs = [self.p_push, self.p_disturb, *self.p_cut.values(), *self.p_stuck_given_cut.values()]
        if any(not 0.0 <= p <= 1.0 for p in probs):
            raise ValueError("probabilities must be in [0, 1]")
        if not self.separation_mm > 0:
            raise ValueError("separation_mm must be positive")
        lo, hi = self.roll_distance_range
        if not 0 <= lo <= hi:
            raise ValueError("roll_distance_range must be a non-negative interval")

    def cut_probability(self, food_class: FoodClass, style: CutStyle) -> float:
        return self.p_cut.get((FoodClass(food_class), CutStyle(style)), 1.0)

    def stuck_probability(self, food_class: FoodClass) -> float:
        return self.p_stuck_given_cut.get(FoodClass(food_class), 0.0)

    @classmethod
    def perfect(cls, **kw) -> "ExecConfig":
        kw.setdefault("p_cut", {k: 1.0 for k in DEFAULT_P_CUT})
        kw.setdefault("p_stuck_given_cut", {})
        kw.setdefault("p_push", 1.0)
        kw.setdefault("p_disturb", 1.0)
        return cls(**kw)


# ---------------------------------------------------------------------------
# motion


_BOARD = -1


def _blockers(moved: dict[int, Polygon], before: dict[int, Polygon], others: dict[int, Polygon], scene: Scene, gap: float) -> set[int]:
    """Ids of stationary objects the step would crowd; ``_BOARD`` if it leaves the board."""
    hits: set[int] = set()
    for i, m in moved.items():
        if not scene.board.contains(m):
            return {_BOARD}
        minx, miny, maxx, maxy = m.bounds
        mg = None
        for oid, o in others.items():
            ominx, ominy, omaxx, omaxy = o.bounds
            if minx - gap > omaxx or ominx - gap > maxx or miny - gap > omaxy or ominy - gap > maxy:
                continue
            mg = mg if mg is not None else m.to_shapely()
            og = o.to_shapely()
            d = mg.distance(og)
            # allow motion that opens an already-tight gap
            if d < gap and d < before[i].to_shapely().distance(og) - 1e-12:
                hits.add(oid)
    return hits


def slide(
    scene: Scene,
    ids: Iterable[int],
    vector: tuple[float, float],
    config: ExecConfig,
    step_mm: float = 1.0,
    shove: bool = False,
) -> tuple[Scene, int]:
    """Translate ``ids`` rigidly along ``vector`` in equal steps of at most ``step_mm``.

    Motion stops before the first step that would leave the board or bring a
    moving object within ``keep_out_mm`` of a stationary one.  With
    ``shove`` a crowded object joins the moving group instead, so only the
    board edge stops the motion.  Returns the new scene and the number of
    steps taken.
    """
    ids = list(ids)
    dist = math.hypot(*vector)
    if dist == 0.0 or not ids:
        return scene, 0
    n = max(1, math.ceil(dist / step_mm - 1e-9))
    sx, sy = vector[0] / n, vector[1] / n
    current = {i: scene.get(i).shape for i in ids}
    others = {o.id: o.shape for o in scene.objects if o.id not in current}
    taken = 0
    while taken < n:
        nxt = {i: s.translated(sx, sy) for i, s in current.items()}
        hits = _blockers(nxt, current, others, scene, config.keep_out_mm)
        if not hits:
            current = nxt
            taken += 1
            continue
        if not shove or _BOARD in hits:
            break
        for h in hits:
            current[h] = others.pop(h)
    if taken == 0:
        return scene, 0
    return scene.with_shapes(current), taken


def _separate(scene: Scene, ids: Sequence[int], pose: "CutPose", config: ExecConfig) -> Scene:
    """Move each piece half of ``separation_mm`` off the cut line, shoving neighbours.

    A piece pinned against the board edge leaves its share to the pieces on
    the other side.
    """
    nx, ny = pose.normal
    half = config.separation_mm / 2.0
    sides = {}
    for cid in ids:
        c = scene.get(cid).shape.centroid
        sides[cid] = 1.0 if (c.x - pose.com.x) * nx + (c.y - pose.com.y) * ny >= 0 else -1.0
    step = 0.5
    shortfall = {1.0: 0.0, -1.0: 0.0}
    for cid in ids:
        sd = sides[cid]
        scene, taken = slide(scene, [cid], (sd * half * nx, sd * half * ny), config, step_mm=step, shove=True)
        need = math.ceil(half / step - 1e-9)
        shortfall[sd] = max(shortfall[sd], (need - taken) * (half / need))
    for cid in ids:
        extra = shortfall[-sides[cid]]
        if extra > 0:
            sd = sides[cid]
            scene, _ = slide(scene, [cid], (sd * extra * nx, sd * extra * ny), config, step_mm=step, shove=True)
    return scene


# ---------------------------------------------------------------------------
# executors


def execute_cut(
    scene: Scene,
    target_id: int,
    pose: CutPose,
    blade: BladeSpec,
    config: ExecConfig,
    rng: np.random.Generator,
    style: CutStyle = CutStyle.EVEN,
) -> tuple[Scene, CutOutcome]:
    """Chop ``target_id`` with the blade line through ``pose``.

    Missed when the line does not cross the object.  Otherwise the chop
    succeeds with ``p_cut[class, style]``: pieces either separate by
    ``separation_mm`` (clean) or stay in contact (stuck).  A failed chop rolls
    the object sideways, uncut.
    """
    if target_id not in scene:
        raise KeyError(f"no object with id {target_id}")
    obj = scene.get(target_id)
    u = rng.random()
    pieces = split_polygon(obj.shape, pose.com, pose.angle)
    if len(pieces) < 2:
        return scene, CutOutcome.MISSED
    if u < config.cut_probability(obj.food_class, style):
        stuck = rng.random() < config.stuck_probability(obj.food_class)
        cut = replace_object(scene, target_id, pieces)
        if stuck:
            return clamp_to_board(cut), CutOutcome.STUCK
        cut = _separate(cut, list(range(scene.next_id, cut.next_id)), pose, config)
        return clamp_to_board(cut), CutOutcome.CLEAN
    direction = roll_direction(obj)
    sign = 1.0 if rng.random() < 0.5 else -1.0
    theta = rng.uniform(0.0, 2.0 * math.pi)
    if direction is None:
        direction = (math.cos(theta), math.sin(theta))
    lo, hi = config.roll_distance_range
    dist = rng.uniform(lo, hi)
    rolled, _ = slide(scene, [target_id], (sign * dist * direction[0], sign * dist * direction[1]), config, step_mm=2.0)
    return clamp_to_board(rolled), CutOutcome.ROLLED


def execute_disturb(
    scene: Scene,
    last_pose: CutPose | None,
    config: ExecConfig,
    rng: np.random.Generator,
) -> tuple[Scene, bool]:
    """Jostle the pieces at the previous cut pose apart.

    With probability ``p_disturb`` every pair of pieces in contact (gap at
    most ``stuck_gap_mm``) near the cut point is pushed apart: each piece
    moves ``separation_mm`` in a random direction within 60 degrees of the
    cut-line normal on its own side.  Returns the scene and whether the
    perturbation took effect.
    """
    if last_pose is None:
        raise ValueError("disturb needs the pose of a previous cut")
    success = bool(rng.random() < config.p_disturb)
    if not success:
        return clamp_to_board(scene), False
    com = last_pose.com
    reach = 2.0 * config.stuck_gap_mm
    near = [o for o in scene.objects if o.shape.to_shapely().distance(Point(com)) <= reach]
    movers: set[int] = set()
    for a_pos, a in enumerate(near):
        for b in near[a_pos + 1 :]:
            if a.shape.distance(b.shape) <= config.stuck_gap_mm:
                movers.update((a.id, b.id))
    nx, ny = last_pose.normal
    for oid in sorted(movers):
        c = scene.get(oid).shape.centroid
        side = 1.0 if (c.x - com.x) * nx + (c.y - com.y) * ny >= 0 else -1.0
        phi = rng.uniform(-math.pi / 3, math.pi / 3)
        bx, by = side * nx, side * ny
        dx = bx * math.cos(phi) - by * math.sin(phi)
        dy = bx * math.sin(phi) + by * math.cos(phi)
        sep = config.separation_mm
        scene, _ = slide(scene, [oid], (sep * dx, sep * dy), config, step_mm=1.0, shove=True)
    return clamp_to_board(scene), True


def _centroid_of(scene: Scene, ids: Sequence[int]) -> Point2:
    areas = [scene.get(i).shape.area for i in ids]
    cs = [scene.get(i).shape.centroid for i in ids]
    total = sum(areas)
    return Point2(sum(a * c.x for a, c in zip(areas, cs)) / total, sum(a * c.y for a, c in zip(areas, cs)) / total)


def execute_push(
    scene: Scene,
    interferer_ids: int | Sequence[int],
    target_id: int,
    blade: OrientedRect,
    config: ExecConfig,
    rng: np.random.Generator,
    direction: tuple[float, float] | None = None,
) -> tuple[Scene, bool]:
    """Push the interferer away from the target until it clears ``blade``.

    The push runs along ``direction`` (default: target centroid towards
    interferer centroid) in ``push_step_mm`` steps until the interferer's
    mask is ``push_clearance_mm`` clear of the blade footprint, at most
    ``push_max_steps`` steps.  A failed push (probability ``1 - p_push``)
    travels one step only.  Returns the scene and the success draw.
    """
    ids = [interferer_ids] if isinstance(interferer_ids, int) else list(interferer_ids)
    if target_id in ids:
        raise ValueError("interferer and target must differ")
    for i in ids + [target_id]:
        if i not in scene:
            raise KeyError(f"no object with id {i}")
    if direction is None:
        ci = _centroid_of(scene, ids)
        ct = scene.get(target_id).shape.centroid
        direction = (ci.x - ct.x, ci.y - ct.y)
    norm = math.hypot(*direction)
    if norm == 0.0:
        direction = (-math.sin(blade.angle), math.cos(blade.angle))
    else:
        direction = (direction[0] / norm, direction[1] / norm)
    success = bool(rng.random() < config.p_push)
    clearance = blade.inflated(config.push_clearance_mm)
    step = config.push_step_mm
    vec = (direction[0] * step, direction[1] * step)

    def overlapping(sc: Scene) -> bool:
        return any(blade_overlap(clearance, object_mask(sc.get(i).shape, config.resolution)) for i in ids)

    steps = 1 if not success else config.push_max_steps
    for _ in range(steps):
        if success and not overlapping(scene):
            break
        scene, taken = slide(scene, ids, vec, config, step_mm=step)
        if taken == 0:
            break
    return clamp_to_board(scene), success
