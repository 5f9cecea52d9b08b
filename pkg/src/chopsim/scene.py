"""Ground-truth world model: food templates, the barriered board and scene generation."""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np
from shapely.geometry import Polygon as ShapelyPolygon

from .geometry import GeometryError, Point2, Polygon, convex_hull, regular_polygon, split_polygon


class SceneError(ValueError):
    pass


class PlacementError(SceneError):
    """No admissible pose was found for one of the generated objects."""

    def __init__(self, index: int, attempts: int):
        super().__init__(f"could not place object {index} after {attempts} attempts")
        self.index = index
        self.attempts = attempts


class FoodClass(str, enum.Enum):
    APPLE = "apple"
    CUCUMBER = "cucumber"
    CARROT = "carrot"

    @classmethod
    def parse(cls, text: str) -> "FoodClass":
        try:
            return cls(text.strip().lower())
        except ValueError:
            raise ValueError(f"unknown food class {text!r}") from None


@dataclass(frozen=True)
class ShapeTemplate:
    food_class: FoodClass
    base_polygon: Polygon
    rollable_axis: tuple[float, float] | None = None

    def __post_init__(self):
        minx, miny, maxx, maxy = self.base_polygon.bounds
        if maxx - minx > 200 or maxy - miny > 200:
            raise SceneError("template must fit in a 200 x 200 mm box")
        if self.base_polygon.area <= 400:
            raise SceneError("template area must exceed 400 mm^2")


def _capsule(length: float, r_left: float, r_right: float, segments: int = 16) -> Polygon:
    """Convex hull of two end circles, long axis on +x, centroid at the origin."""
    cl = -length / 2 + r_left
    cr = length / 2 - r_right
    t = np.linspace(0.0, 2 * math.pi, 4 * segments, endpoint=False)
    pts = np.vstack(
        [
            np.column_stack([cl + r_left * np.cos(t), r_left * np.sin(t)]),
            np.column_stack([cr + r_right * np.cos(t), r_right * np.sin(t)]),
        ]
    )
    hull = convex_hull(pts)
    c = hull.centroid
    return hull.translated(-c.x, -c.y)


def default_templates() -> dict[FoodClass, ShapeTemplate]:
    return {
        FoodClass.APPLE: ShapeTemplate(FoodClass.APPLE, regular_polygon(Point2(0.0, 0.0), 40.0, 64)),
        FoodClass.CUCUMBER: ShapeTemplate(FoodClass.CUCUMBER, _capsule(160.0, 17.5, 17.5), (1.0, 0.0)),
        FoodClass.CARROT: ShapeTemplate(FoodClass.CARROT, _capsule(150.0, 12.5, 4.0), (1.0, 0.0)),
    }


TEMPLATES: dict[FoodClass, ShapeTemplate] = default_templates()


def register_template(template: ShapeTemplate) -> None:
    TEMPLATES[template.food_class] = template


@dataclass(frozen=True)
class SceneObject:
    id: int
    food_class: FoodClass
    size_fraction: Fraction
    shape: Polygon
    parent_id: int | None = None

    @property
    def rollable(self) -> bool:
        return TEMPLATES[self.food_class].rollable_axis is not None


@dataclass(frozen=True)
class Board:
    width: float = 400.0
    height: float = 300.0

    def __post_init__(self):
        if not (self.width > 0 and self.height > 0):
            raise SceneError("board dimensions must be positive")

    def contains(self, shape: Polygon, tol: float = 1e-9) -> bool:
        minx, miny, maxx, maxy = shape.bounds
        return minx >= -tol and miny >= -tol and maxx <= self.width + tol and maxy <= self.height + tol


@dataclass(frozen=True)
class Scene:
    board: Board
    objects: tuple[SceneObject, ...] = ()
    next_id: int = 0

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))
        ids = [o.id for o in self.objects]
        if len(set(ids)) != len(ids):
            raise SceneError("object ids must be distinct")
        if ids and self.next_id <= max(ids):
            object.__setattr__(self, "next_id", max(ids) + 1)

    def get(self, obj_id: int) -> SceneObject:
        for o in self.objects:
            if o.id == obj_id:
                return o
        raise KeyError(f"no object with id {obj_id}")

    def __contains__(self, obj_id: int) -> bool:
        return any(o.id == obj_id for o in self.objects)

    def count(self, food_class: FoodClass | None = None) -> int:
        if food_class is None:
            return len(self.objects)
        return sum(1 for o in self.objects if o.food_class == food_class)

    def total_area(self) -> float:
        return sum(o.shape.area for o in self.objects)

    def with_shapes(self, shapes: dict[int, Polygon]) -> "Scene":
        objs = tuple(replace(o, shape=shapes[o.id]) if o.id in shapes else o for o in self.objects)
        return replace(self, objects=objs)


@dataclass(frozen=True)
class SceneGenConfig:
    n_objects_range: tuple[int, int] = (1, 10)
    classes: tuple[FoodClass, ...] = (FoodClass.APPLE, FoodClass.CUCUMBER, FoodClass.CARROT)
    size_fractions: tuple[Fraction, ...] = (Fraction(1), Fraction(1, 2), Fraction(1, 4), Fraction(1, 8))
    min_gap: float = 10.0
    max_placement_attempts: int = 2000
    placement_rounds: int = 5
    board: Board = field(default_factory=Board)

    def __post_init__(self):
        lo, hi = self.n_objects_range
        if not (0 <= lo <= hi):
            raise SceneError("n_objects_range must be a nonempty interval of non-negative counts")
        if not self.classes:
            raise SceneError("at least one food class is required")
        if self.min_gap < 0:
            raise SceneError("min_gap must be non-negative")
        if self.max_placement_attempts < 1 or self.placement_rounds < 1:
            raise SceneError("placement needs at least one attempt and one round")
        object.__setattr__(self, "classes", tuple(FoodClass(c) for c in self.classes))
        object.__setattr__(self, "size_fractions", tuple(Fraction(f) for f in self.size_fractions))
        for f in self.size_fractions:
            _split_depth(f)


def _split_depth(fraction: Fraction) -> int:
    fraction = Fraction(fraction)
    if fraction.numerator != 1 or fraction.denominator not in (1, 2, 4, 8):
        raise SceneError(f"unsupported size fraction {fraction}")
    return fraction.denominator.bit_length() - 1


def slice_shape(
    template: ShapeTemplate,
    size_fraction: Fraction,
    rng: np.random.Generator,
    trace: list | None = None,
) -> Polygon:
    """Outline of a pre-cut piece: ``log2(1/size_fraction)`` random centroid splits.

    Each split cuts the current piece through its centroid at a uniform angle
    and keeps one resulting piece at random.  ``trace`` (if given) receives
    one dict per split.
    """
    depth = _split_depth(size_fraction)
    shape = template.base_polygon
    for _ in range(depth):
        c = shape.centroid
        angle = float(rng.uniform(0.0, math.pi))
        pieces = split_polygon(shape, c, angle)
        keep = pieces[int(rng.integers(len(pieces)))]
        if trace is not None:
            trace.append({"angle": angle, "parent_area": shape.area, "piece_area": keep.area, "pieces": len(pieces)})
        shape = keep
    return shape


def place_shape(shape: Polygon, angle: float, at: Point2) -> Polygon:
    """Rotate ``shape`` about its centroid, then move the centroid to ``at``."""
    c = shape.centroid
    return shape.rotated(angle, c).translated(at[0] - c.x, at[1] - c.y)


def generate_scene(
    config: SceneGenConfig,
    seed: int | np.random.Generator,
    classes: Sequence[FoodClass] | None = None,
) -> Scene:
    """Random cluttered scene; a pure function of ``(config, seed, classes)``.

    ``classes`` fixes the object list (one object per entry, in order) instead
    of drawing the count and classes from ``config``.  Objects are placed in
    order by rejection sampling; when one cannot be placed within
    ``max_placement_attempts`` the whole layout is redrawn, up to
    ``placement_rounds`` times, before :class:`PlacementError` is raised.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if classes is None:
        lo, hi = config.n_objects_range
        n = int(rng.integers(lo, hi + 1))
        picked = [config.classes[int(rng.integers(len(config.classes)))] for _ in range(n)]
    else:
        picked = [FoodClass.parse(c) if isinstance(c, str) else FoodClass(c) for c in classes]
    kinds = []
    for cls in picked:
        frac = config.size_fractions[int(rng.integers(len(config.size_fractions)))]
        kinds.append((cls, frac, slice_shape(TEMPLATES[cls], frac, rng)))
    failed = 0
    for _round in range(config.placement_rounds):
        shapes = _layout([k[2] for k in kinds], config, rng)
        if isinstance(shapes, int):
            failed = shapes
            continue
        objs = tuple(SceneObject(i, cls, frac, shape, None) for i, ((cls, frac, _), shape) in enumerate(zip(kinds, shapes)))
        return Scene(config.board, objs, len(objs))
    raise PlacementError(failed, config.max_placement_attempts)


def _layout(bases: Sequence[Polygon], config: SceneGenConfig, rng: np.random.Generator) -> list[Polygon] | int:
    """Place every base shape, or return the index of the first that would not fit."""
    board = config.board
    placed: list[Polygon] = []
    for index, base in enumerate(bases):
        rel = base.coords - np.asarray(base.centroid)
        for _attempt in range(config.max_placement_attempts):
            angle = float(rng.uniform(0.0, 2.0 * math.pi))
            c, s = math.cos(angle), math.sin(angle)
            posed = rel @ np.array([[c, s], [-s, c]])
            minx, miny = posed.min(axis=0)
            maxx, maxy = posed.max(axis=0)
            if maxx - minx > board.width or maxy - miny > board.height:
                continue
            x = float(rng.uniform(-minx, board.width - maxx))
            y = float(rng.uniform(-miny, board.height - maxy))
            coords = posed + (x, y)
            if _clear_of(coords, (minx + x, miny + y, maxx + x, maxy + y), placed, config.min_gap):
                placed.append(Polygon(coords))
                break
        else:
            return index
    return placed


def _clear_of(coords: np.ndarray, bounds, others: Sequence[Polygon], gap: float) -> bool:
    cminx, cminy, cmaxx, cmaxy = bounds
    geom = None
    for other in others:
        ominx, ominy, omaxx, omaxy = other.bounds
        if cminx - gap > omaxx or ominx - gap > cmaxx or cminy - gap > omaxy or ominy - gap > cmaxy:
            continue
        if geom is None:
            geom = ShapelyPolygon(coords)
        if geom.distance(other.to_shapely()) < gap:
            return False
    return True


def clamp_shape(shape: Polygon, board: Board) -> Polygon:
    minx, miny, maxx, maxy = shape.bounds
    if maxx - minx > board.width or maxy - miny > board.height:
        raise SceneError("object is larger than the board")
    dx = max(0.0, -minx) - max(0.0, maxx - board.width)
    dy = max(0.0, -miny) - max(0.0, maxy - board.height)
    if dx == 0.0 and dy == 0.0:
        return shape
    return shape.translated(dx, dy)


def clamp_to_board(scene: Scene) -> Scene:
    """Translate protruding objects by the minimal vector back inside the board."""
    moved = {}
    for o in scene.objects:
        clamped = clamp_shape(o.shape, scene.board)
        if clamped is not o.shape:
            moved[o.id] = clamped
    return scene.with_shapes(moved) if moved else scene


def replace_object(scene: Scene, obj_id: int, pieces: Sequence[Polygon]) -> Scene:
    """Swap object ``obj_id`` for ``pieces``, each a half-size child with a fresh id."""
    parent = scene.get(obj_id)
    next_id = scene.next_id
    children = []
    for piece in pieces:
        children.append(SceneObject(next_id, parent.food_class, parent.size_fraction / 2, piece, parent.id))
        next_id += 1
    objs = tuple(o for o in scene.objects if o.id != obj_id) + tuple(children)
    return Scene(scene.board, objs, next_id)


def roll_direction(obj: SceneObject) -> tuple[float, float] | None:
    """Unit vector across the object's long axis, or ``None`` if it does not roll."""
    if not obj.rollable:
        return None
    xy = obj.shape.coords
    d = xy[:, None, :] - xy[None, :, :]
    d2 = (d**2).sum(axis=-1)
    i, j = np.unravel_index(int(np.argmax(d2)), d2.shape)
    ax = xy[j] - xy[i]
    ax = ax / np.hypot(*ax)
    return float(-ax[1]), float(ax[0])


# ---------------------------------------------------------------------------
# JSON scene files


def _num(v: float) -> float:
    return round(float(v), 6) + 0.0


def scene_to_dict(scene: Scene) -> dict:
    return {
        "board": {"width_mm": _num(scene.board.width), "height_mm": _num(scene.board.height)},
        "objects": [
            {
                "id": o.id,
                "class": o.food_class.value,
                "size_fraction": float(o.size_fraction),
                "vertices_mm": [[_num(x), _num(y)] for x, y in o.shape.coords],
                "parent_id": o.parent_id,
            }
            for o in scene.objects
        ],
    }


def scene_from_dict(data: dict) -> Scene:
    try:
        board = Board(float(data["board"]["width_mm"]), float(data["board"]["height_mm"]))
        objs = []
        for item in data["objects"]:
            objs.append(
                SceneObject(
                    int(item["id"]),
                    FoodClass.parse(item["class"]),
                    Fraction(item["size_fraction"]).limit_denominator(1 << 20),
                    Polygon(item["vertices_mm"]),
                    None if item.get("parent_id") is None else int(item["parent_id"]),
                )
            )
    except (KeyError, TypeError, GeometryError) as exc:
        raise SceneError(f"malformed scene data: {exc}") from exc
    next_id = max((o.id for o in objs), default=-1) + 1
    return Scene(board, tuple(objs), next_id)


def dumps_scene(scene: Scene) -> str:
    return json.dumps(scene_to_dict(scene), sort_keys=True, indent=2) + "\n"


def save_scene(scene: Scene, path: str | Path) -> None:
    Path(path).write_text(dumps_scene(scene))


def load_scene(path: str | Path) -> Scene:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SceneError(f"scene file is not valid JSON: {exc}") from exc
    return scene_from_dict(data)
