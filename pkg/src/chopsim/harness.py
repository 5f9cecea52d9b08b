"""Seeded experiment runner for the three evaluation families.

``exp1`` scores each pipeline component on random clutter, ``exp2`` chops a
single centered object per (class, style) cell, and ``exp3`` runs full
goal-driven episodes on the ten multi-object task configurations.
"""

from __future__ import annotations

import csv
import enum
import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from fractions import Fraction
from pathlib import Path
from typing import Any

import numpy as np

from .geometry import Point2, iou, mask_centroid, split_polygon
from .perception import FusedObject, Observation, PerceptionConfig, align, object_mask, observe
from .planner import (
    GoalEntry,
    GoalSpec,
    PlanningError,
    SimConfig,
    check_collisions,
    plan_cut,
    run_episode,
)
from .primitives import BladeSpec, CutOutcome, CutStyle, ExecConfig, execute_cut, execute_disturb, execute_push
from .scene import TEMPLATES, Board, FoodClass, PlacementError, Scene, SceneGenConfig, SceneObject, generate_scene, place_shape, slice_shape
from .seeding import derive_seed, make_rng

SEGMENTATION_IOU = 0.8
PLANNING_ANGLE_TOL = math.radians(15.0)
WILSON_Z = 1.959963984540054

# (apples, cucumbers) before -> (apples, cucumbers) target
TASKS = (
    ((4, 2), (8, 3)),
    ((2, 2), (3, 4)),
    ((1, 2), (3, 4)),
    ((3, 0), (8, 0)),
    ((0, 4), (0, 8)),
    ((0, 5), (0, 8)),
    ((2, 1), (4, 3)),
    ((0, 5), (0, 7)),
    ((2, 0), (6, 0)),
    ((2, 0), (7, 0)),
)

COMPONENTS = (
    "detection_object",
    "detection_scene",
    "segmentation",
    "cut_planning",
    "collision_prediction",
    "cut_execution",
    "push_execution",
    "disturb_execution",
    "episode",
)

CSV_COLUMNS = ("experiment", "component", "class", "style", "successes", "trials", "rate", "ci_low", "ci_high")

ALL = "all"


class ConfigError(ValueError):
    """Bad experiment or configuration input."""


class Family(str, enum.Enum):
    EXP1 = "exp1"
    EXP2 = "exp2"
    EXP3 = "exp3"


TWO_CLASS = (FoodClass.APPLE, FoodClass.CUCUMBER)
THREE_CLASS = (FoodClass.APPLE, FoodClass.CUCUMBER, FoodClass.CARROT)


@dataclass(frozen=True)
class ExperimentSpec:
    family: Family
    trials: int = 25
    scene: SceneGenConfig = field(default_factory=SceneGenConfig)
    perception: PerceptionConfig = field(default_factory=PerceptionConfig)
    execution: ExecConfig = field(default_factory=ExecConfig)
    blade: BladeSpec = field(default_factory=BladeSpec)
    # exp1 cuts the target with this heuristic; exp3 goals use goal_style
    cut_style: CutStyle = CutStyle.EVEN
    goal_style: str = "long"
    iterations_per_target: int = 8

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        object.__setattr__(self, "cut_style", CutStyle(self.cut_style))
        if self.trials < 0:
            raise ConfigError("trials must be non-negative")
        if self.goal_style not in ("even", "long", "random"):
            raise ConfigError("goal_style must be one of even, long, random")
        if self.iterations_per_target < 1:
            raise ConfigError("iterations_per_target must be >= 1")

    @classmethod
    def default(cls, family: Family | str, trials: int = 25, **kw) -> "ExperimentSpec":
        """Family defaults: two-class clutter for exp1/exp3, noiseless vision for exp2."""
        family = Family(family)
        if family is Family.EXP2:
            kw.setdefault("scene", SceneGenConfig(classes=THREE_CLASS))
            kw.setdefault("perception", PerceptionConfig.perfect())
        else:
            kw.setdefault("scene", SceneGenConfig(classes=TWO_CLASS))
            kw.setdefault("perception", PerceptionConfig.two_class())
        return cls(family, trials, **kw)

    def perfect(self) -> "ExperimentSpec":
        return replace(self, perception=PerceptionConfig.perfect(), execution=ExecConfig.perfect())

    @property
    def sim(self) -> SimConfig:
        return SimConfig(self.perception, self.execution, self.blade, self.iterations_per_target)


# ---------------------------------------------------------------------------
# metrics


def wilson_interval(successes: int, trials: int, z: float = WILSON_Z) -> tuple[float, float]:
    """Wilson score interval; ``(0, 1)`` when there are no trials."""
    if trials == 0:
        return 0.0, 1.0
    p = successes / trials
    z2 = z * z
    denom = 1.0 + z2 / trials
    center = (p + z2 / (2 * trials)) / denom
    half = z * math.sqrt(p * (1 - p) / trials + z2 / (4 * trials * trials)) / denom
    return max(0.0, center - half), min(1.0, center + half)


Key = tuple[str, str, str]


def _add(counts: dict, key: Key, ok: bool, n: int = 1) -> None:
    s, t = counts.get(key, (0, 0))
    counts[key] = (s + int(ok), t + n)


_CLASS_ORDER = {ALL: 0, **{c.value: k + 1 for k, c in enumerate(FoodClass)}}
_STYLE_ORDER = {ALL: 0, "even": 1, "long": 2, "random": 3}


def _row_key(key: Key):
    comp, cls, style = key
    base = comp.split(":")[0]
    return (COMPONENTS.index(base) if base in COMPONENTS else len(COMPONENTS), comp, _CLASS_ORDER.get(cls, 99), cls, _STYLE_ORDER.get(style, 99), style)


@dataclass
class Metrics:
    """Success counts keyed by ``(component, class, style)``.

    ``runtime_s`` is informational; it is left out of equality and of every
    report so that identical runs give identical files.
    """

    experiment: str
    seed: int = 0
    trials: int = 0
    counts: dict[Key, tuple[int, int]] = field(default_factory=dict)
    episode_successes: int = 0
    runtime_s: float = field(default=0.0, compare=False)

    def rate(self, component: str, cls: str = ALL, style: str = ALL) -> float:
        s, t = self.counts.get((component, cls, style), (0, 0))
        return s / t if t else float("nan")

    def get(self, component: str, cls: str = ALL, style: str = ALL) -> tuple[int, int]:
        return self.counts.get((component, cls, style), (0, 0))

    def rows(self) -> list[dict[str, Any]]:
        out = []
        for key in sorted(self.counts, key=_row_key):
            s, t = self.counts[key]
            if t == 0:
                continue
            lo, hi = wilson_interval(s, t)
            out.append(
                {
                    "experiment": self.experiment,
                    "component": key[0],
                    "class": key[1],
                    "style": key[2],
                    "successes": s,
                    "trials": t,
                    "rate": s / t,
                    "ci_low": lo,
                    "ci_high": hi,
                }
            )
        return out

    def to_dict(self) -> dict[str, Any]:
        return {
            "experiment": self.experiment,
            "seed": self.seed,
            "trials": self.trials,
            "episode_successes": self.episode_successes,
            "components": [
                {"component": r["component"], "class": r["class"], "style": r["style"], "successes": r["successes"], "trials": r["trials"]}
                for r in self.rows()
            ],
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Metrics":
        counts = {(c["component"], c["class"], c["style"]): (int(c["successes"]), int(c["trials"])) for c in data["components"]}
        return cls(data["experiment"], int(data["seed"]), int(data["trials"]), counts, int(data["episode_successes"]))


@dataclass
class TrialResult:
    index: int
    seed: int
    counts: dict[Key, tuple[int, int]]
    episode_success: bool | None = None
    trace: str = ""


@dataclass
class ExperimentResult:
    metrics: Metrics
    trials: list[TrialResult]

    def traces_jsonl(self) -> str:
        return "".join(t.trace for t in self.trials)


# ---------------------------------------------------------------------------
# ground truth helpers


def ground_truth_observation(scene: Scene, target_class: FoodClass | None, resolution: float = 1.0) -> Observation:
    """What a noiseless vision stack would report: one object per scene object."""
    objects = []
    counts: dict[FoodClass, int] = {}
    for o in scene.objects:
        m = object_mask(o.shape, resolution)
        if not m:
            continue
        objects.append(FusedObject(o.food_class, m, mask_centroid(m), m.area, m.bounds(), (o.id,)))
        counts[o.food_class] = counts.get(o.food_class, 0) + 1
    return Observation(tuple(objects), counts, target_class)


def _angle_gap(a: float, b: float) -> float:
    d = abs(a - b) % math.pi
    return min(d, math.pi - d)


def _sole(obs: Observation, obj: SceneObject) -> int | None:
    for k, o in enumerate(obs.objects):
        if o.true_ids == (obj.id,) and o.label == obj.food_class:
            return k
    return None


def detection_ok(obs: Observation, obj: SceneObject) -> bool:
    """The object was detected alone and with its own label."""
    return any(d.true_ids == (obj.id,) and d.label == obj.food_class for d in obs.detections)


def segmentation_ok(obs: Observation, obj: SceneObject, resolution: float = 1.0) -> bool:
    """The fused mask reported for ``obj`` reaches the IoU threshold."""
    k = _sole(obs, obj)
    if k is None:
        return False
    fused, truth = align([obs.objects[k].mask, object_mask(obj.shape, resolution)])
    return iou(fused, truth) >= SEGMENTATION_IOU


# ---------------------------------------------------------------------------
# trials

SCENE_REDRAWS = 20


def draw_scene(config: SceneGenConfig, rng: np.random.Generator, classes=None) -> Scene:
    """``generate_scene`` that redraws from the same stream when a layout cannot be packed."""
    for _ in range(SCENE_REDRAWS - 1):
        try:
            return generate_scene(config, rng, classes)
        except PlacementError:
            continue
    return generate_scene(config, rng, classes)



def _exp1_trial(spec: ExperimentSpec, rng: np.random.Generator) -> TrialResult:
    counts: dict[Key, tuple[int, int]] = {}
    scene = draw_scene(spec.scene, rng)
    res = spec.perception.resolution
    if not scene.objects:
        return TrialResult(0, 0, counts)
    target = scene.objects[int(rng.integers(len(scene.objects)))]
    obs = observe(scene, target.food_class, spec.perception, rng)

    detected = []
    for o in scene.objects:
        ok = detection_ok(obs, o)
        _add(counts, ("detection_object", ALL, ALL), ok)
        _add(counts, ("detection_object", o.food_class.value, ALL), ok)
        if ok:
            detected.append(o)
    _add(counts, ("detection_scene", ALL, ALL), len(detected) == len(scene.objects))

    for o in detected:
        ok = segmentation_ok(obs, o, res)
        _add(counts, ("segmentation", ALL, ALL), ok)
        _add(counts, ("segmentation", o.food_class.value, ALL), ok)

    k = _sole(obs, target)
    if k is None:
        return TrialResult(0, 0, counts)
    style = spec.cut_style
    try:
        plan = plan_cut(obs, k, style)
    except PlanningError:
        _add(counts, ("cut_planning", ALL, ALL), False)
        return TrialResult(0, 0, counts)
    gt = ground_truth_observation(scene, target.food_class, res)
    gt_index = next(i for i, g in enumerate(gt.objects) if g.true_ids == (target.id,))
    ideal = plan_cut(gt, gt_index, style)
    crosses = len(split_polygon(target.shape, plan.pose.com, plan.pose.angle)) >= 2
    ok = crosses and _angle_gap(plan.pose.angle, ideal.pose.angle) <= PLANNING_ANGLE_TOL
    _add(counts, ("cut_planning", ALL, ALL), ok)

    predicted = check_collisions(plan, obs, spec.blade)
    predicted_ids = {i for k2 in predicted for i in obs.objects[k2].true_ids} - {target.id}
    gt_plan = replace(plan, target=gt_index)
    true_ids = {gt.objects[k2].true_ids[0] for k2 in check_collisions(gt_plan, gt, spec.blade)}
    _add(counts, ("collision_prediction", ALL, ALL), predicted_ids == true_ids)

    rect = spec.blade.footprint(plan.pose)
    for k2 in predicted:
        ids = [i for i in obs.objects[k2].true_ids if i != target.id and i in scene]
        if not ids:
            continue
        c = obs.objects[k2].centroid
        direction = (c.x - plan.pose.com.x, c.y - plan.pose.com.y)
        scene, ok = execute_push(scene, ids, target.id, rect, spec.execution, rng, direction=direction)
        _add(counts, ("push_execution", ALL, ALL), ok)

    scene, outcome = execute_cut(scene, target.id, plan.pose, spec.blade, spec.execution, rng, style=style)
    _add(counts, ("cut_execution", ALL, ALL), outcome.separated)
    _add(counts, ("cut_execution", target.food_class.value, style.value), outcome.separated)
    if outcome.separated:
        scene, ok = execute_disturb(scene, plan.pose, spec.execution, rng)
        _add(counts, ("disturb_execution", ALL, ALL), ok)
    return TrialResult(0, 0, counts)


def _centered_object(spec: ExperimentSpec, cls: FoodClass, rng: np.random.Generator) -> Scene:
    board = spec.scene.board
    frac = spec.scene.size_fractions[int(rng.integers(len(spec.scene.size_fractions)))]
    base = slice_shape(TEMPLATES[cls], frac, rng)
    shape = place_shape(base, float(rng.uniform(0.0, 2.0 * math.pi)), Point2(board.width / 2, board.height / 2))
    return Scene(board, (SceneObject(0, cls, Fraction(frac), shape),), 1)


def _exp2_trial(spec: ExperimentSpec, rng_seed: int) -> TrialResult:
    counts: dict[Key, tuple[int, int]] = {}
    cell = 0
    for cls in spec.scene.classes:
        for style in CutStyle:
            rng = make_rng(rng_seed, cell)
            cell += 1
            scene = _centered_object(spec, cls, rng)
            obs = observe(scene, cls, spec.perception, rng)
            ok = False
            k = _sole(obs, scene.objects[0])
            if k is not None:
                try:
                    plan = plan_cut(obs, k, style)
                except PlanningError:
                    plan = None
                if plan is not None:
                    _, outcome = execute_cut(scene, 0, plan.pose, spec.blade, spec.execution, rng, style=style)
                    ok = outcome.separated
            _add(counts, ("cut_execution", cls.value, style.value), ok)
    return TrialResult(0, 0, counts)


def task_goal(row: int, style: str, rng: np.random.Generator) -> tuple[list[FoodClass], GoalSpec]:
    """Initial object classes and goal for task ``row`` (0-based)."""
    (a0, c0), (a1, c1) = TASKS[row]
    classes = [FoodClass.APPLE] * a0 + [FoodClass.CUCUMBER] * c0
    entries = []
    for cls, n in ((FoodClass.APPLE, a1), (FoodClass.CUCUMBER, c1)):
        if n < 1:
            continue
        st = style
        if style == "random":
            st = "even" if rng.random() < 0.5 else "long"
        entries.append(GoalEntry(cls, n, CutStyle(st)))
    return classes, GoalSpec(tuple(entries))


def _exp3_trial(spec: ExperimentSpec, index: int, seed: int, rng: np.random.Generator) -> TrialResult:
    counts: dict[Key, tuple[int, int]] = {}
    row = index % len(TASKS)
    classes, goal = task_goal(row, spec.goal_style, rng)
    scene = draw_scene(spec.scene, rng, classes)
    result = run_episode(scene, goal, spec.sim, rng, seed=seed)
    _add(counts, ("episode", ALL, spec.goal_style), result.success)
    _add(counts, (f"episode:task{row + 1:02d}", ALL, spec.goal_style), result.success)
    for e in result.trace.events:
        if e.kind == "push":
            _add(counts, ("push_execution", ALL, ALL), e.data["effective"])
        elif e.kind == "disturb":
            _add(counts, ("disturb_execution", ALL, ALL), e.data["effective"])
        elif e.kind == "cut":
            _add(counts, ("cut_execution", ALL, ALL), CutOutcome(e.data["outcome"]).separated)
    return TrialResult(index, seed, counts, result.success, result.trace.to_jsonl())


def run_trial(spec: ExperimentSpec, seed: int, index: int) -> TrialResult:
    child = derive_seed(seed, index)
    if spec.family is Family.EXP1:
        out = _exp1_trial(spec, np.random.default_rng(child))
    elif spec.family is Family.EXP2:
        out = _exp2_trial(spec, child)
    else:
        out = _exp3_trial(spec, index, child, np.random.default_rng(child))
    out.index, out.seed = index, child
    return out


def _run_chunk(args) -> list[TrialResult]:
    spec, seed, indices = args
    return [run_trial(spec, seed, i) for i in indices]


def aggregate(spec: ExperimentSpec, seed: int, trials: list[TrialResult]) -> Metrics:
    m = Metrics(spec.family.value, seed, len(trials))
    for t in sorted(trials, key=lambda t: t.index):
        for key, (s, n) in t.counts.items():
            cs, cn = m.counts.get(key, (0, 0))
            m.counts[key] = (cs + s, cn + n)
        m.episode_successes += bool(t.episode_success)
    return m


def run_experiment(spec: ExperimentSpec, seed: int, workers: int = 1, indices=None) -> ExperimentResult:
    """Run every trial; results are a pure function of ``(spec, seed)``.

    ``indices`` selects a subset (or reordering) of trial indices; with
    ``workers > 1`` trials run in a process pool and are merged by index.
    """
    start = time.perf_counter()
    indices = list(range(spec.trials)) if indices is None else list(indices)
    if workers > 1 and len(indices) > 1:
        chunks = [indices[k::workers] for k in range(workers)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            trials = [t for part in pool.map(_run_chunk, [(spec, seed, c) for c in chunks]) for t in part]
    else:
        trials = [run_trial(spec, seed, i) for i in indices]
    trials.sort(key=lambda t: t.index)
    metrics = aggregate(spec, seed, trials)
    metrics.runtime_s = time.perf_counter() - start
    return ExperimentResult(metrics, trials)


# ---------------------------------------------------------------------------
# reports


def _fmt(v: Any) -> str:
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def report_csv(metrics: Metrics) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in metrics.rows():
        w.writerow([_fmt(r[c]) for c in CSV_COLUMNS])
    return buf.getvalue()


def report_json(metrics: Metrics) -> str:
    return json.dumps(metrics.to_dict(), sort_keys=True, indent=2) + "\n"


def emit_report(metrics: Metrics, path: str | Path, fmt: str | None = None) -> Path:
    """Write ``metrics`` as CSV or JSON (chosen by ``fmt`` or the file suffix)."""
    path = Path(path)
    fmt = (fmt or path.suffix.lstrip(".") or "csv").lower()
    if fmt == "csv":
        text = report_csv(metrics)
    elif fmt == "json":
        text = report_json(metrics)
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    try:
        path.write_text(text)
    except OSError as e:
        raise OSError(f"cannot write report to {path}: {e}") from e
    return path


def load_metrics(path: str | Path) -> Metrics:
    return Metrics.from_dict(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------------------
# config files


def _check_keys(section: str, data: dict, allowed) -> None:
    if not isinstance(data, dict):
        raise ConfigError(f"{section} must be an object")
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown {section} keys: {', '.join(unknown)}")


def _names(cls) -> list[str]:
    return [f.name for f in fields(cls)]


def _perception_from(data: dict, base: PerceptionConfig) -> PerceptionConfig:
    _check_keys("perception", data, _names(PerceptionConfig))
    kw = dict(data)
    for k in ("partials_range", "background_range"):
        if k in kw:
            kw[k] = tuple(kw[k])
    return replace(base, **kw)


def _execution_from(data: dict, base: ExecConfig) -> ExecConfig:
    _check_keys("execution", data, _names(ExecConfig))
    kw = dict(data)
    if "p_cut" in kw:
        p_cut = dict(base.p_cut)
        _check_keys("p_cut", kw["p_cut"], [c.value for c in FoodClass])
        for cls, styles in kw["p_cut"].items():
            _check_keys(f"p_cut.{cls}", styles, [s.value for s in CutStyle])
            for st, p in styles.items():
                p_cut[(FoodClass(cls), CutStyle(st))] = float(p)
        kw["p_cut"] = p_cut
    if "p_stuck_given_cut" in kw:
        _check_keys("p_stuck_given_cut", kw["p_stuck_given_cut"], [c.value for c in FoodClass])
        kw["p_stuck_given_cut"] = {FoodClass(c): float(p) for c, p in kw["p_stuck_given_cut"].items()}
    if "roll_distance_range" in kw:
        kw["roll_distance_range"] = tuple(kw["roll_distance_range"])
    return replace(base, **kw)


def _scene_from(data: dict, base: SceneGenConfig) -> SceneGenConfig:
    _check_keys("scene", data, _names(SceneGenConfig))
    kw = dict(data)
    if "n_objects_range" in kw:
        kw["n_objects_range"] = tuple(kw["n_objects_range"])
    if "classes" in kw:
        kw["classes"] = tuple(FoodClass.parse(c) for c in kw["classes"])
    if "size_fractions" in kw:
        kw["size_fractions"] = tuple(Fraction(str(f)) for f in kw["size_fractions"])
    if "board" in kw:
        _check_keys("scene.board", kw["board"], ["width", "height"])
        kw["board"] = Board(**kw["board"])
    return replace(base, **kw)


def spec_from_config(
    family: Family | str,
    trials: int,
    data: dict | None = None,
    perfect: bool = False,
    base: ExperimentSpec | None = None,
) -> ExperimentSpec:
    """Family defaults (or ``base``) overlaid with a config mapping loaded from JSON.

    ``perfect`` forces every probability to 1 before the overlay.
    """
    spec = base if base is not None else ExperimentSpec.default(family, trials)
    if perfect:
        spec = spec.perfect()
    if not data:
        return spec
    try:
        _check_keys("config", data, ["perception", "execution", "scene", "blade", "experiment"])
        kw: dict[str, Any] = {}
        if "perception" in data:
            kw["perception"] = _perception_from(data["perception"], spec.perception)
        if "execution" in data:
            kw["execution"] = _execution_from(data["execution"], spec.execution)
        if "scene" in data:
            kw["scene"] = _scene_from(data["scene"], spec.scene)
        if "blade" in data:
            _check_keys("blade", data["blade"], _names(BladeSpec))
            kw["blade"] = replace(spec.blade, **data["blade"])
        if "experiment" in data:
            _check_keys("experiment", data["experiment"], ["cut_style", "goal_style", "iterations_per_target"])
            kw.update(data["experiment"])
        return replace(spec, **kw)
    except ConfigError:
        raise
    except (TypeError, ValueError, KeyError) as e:
        raise ConfigError(str(e)) from e


def load_config(path: str | Path) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    return data


__all__ = [
    "TASKS",
    "COMPONENTS",
    "CSV_COLUMNS",
    "ConfigError",
    "Family",
    "ExperimentSpec",
    "Metrics",
    "TrialResult",
    "ExperimentResult",
    "wilson_interval",
    "ground_truth_observation",
    "detection_ok",
    "segmentation_ok",
    "task_goal",
    "run_trial",
    "run_experiment",
    "aggregate",
    "report_csv",
    "report_json",
    "emit_report",
    "load_metrics",
    "spec_from_config",
    "load_config",
]
