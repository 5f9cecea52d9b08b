"""Goal parsing, cut planning and the observe / plan / push / cut / disturb loop."""

from __future__ import annotations

import hashlib
import json
import math
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
from shapely import Point

from .geometry import longest_diameter, overlap_count
from .perception import Observation, PerceptionConfig, observe
from .primitives import (
    BladeSpec,
    CutOutcome,
    CutPose,
    CutStyle,
    ExecConfig,
    execute_cut,
    execute_disturb,
    execute_push,
)
from .scene import FoodClass, Scene

__all__ = [
    "CutStyle",
    "GoalEntry",
    "GoalSpec",
    "GoalParseError",
    "PlanningError",
    "CutPlanRecord",
    "LoopState",
    "TraceEvent",
    "EpisodeTrace",
    "EpisodeResult",
    "SimConfig",
    "parse_goal",
    "select_target",
    "plan_cut",
    "check_collisions",
    "run_class_loop",
    "run_episode",
]


class GoalParseError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class PlanningError(RuntimeError):
    pass


@dataclass(frozen=True)
class GoalEntry:
    food_class: FoodClass
    target_count: int
    style: CutStyle

    def __str__(self):
        return f"{self.food_class.value}={self.target_count}:{self.style.value}"


@dataclass(frozen=True)
class GoalSpec:
    entries: tuple[GoalEntry, ...]

    def __str__(self):
        return "; ".join(str(e) for e in self.entries)

    @property
    def total_target(self) -> int:
        return sum(e.target_count for e in self.entries)


_ENTRY = re.compile(r"\s*([A-Za-z_]+)\s*=\s*([+-]?\d+)\s*:\s*([A-Za-z_]+)\s*\Z")


def parse_goal(text: str) -> GoalSpec:
    """Parse ``"class=COUNT:style; ..."`` (case-insensitive, whitespace ignored).

    >>> parse_goal("apple=3:even; cucumber=4:long").entries[1].style
    <CutStyle.LONG: 'long'>
    """
    if not text or not text.strip():
        raise GoalParseError("empty goal", 0)

    def byte_at(char_index: int) -> int:
        return len(text[:char_index].encode("utf-8"))

    entries: list[GoalEntry] = []
    seen: set[FoodClass] = set()
    pos = 0
    for chunk in text.split(";"):
        start = pos
        pos += len(chunk) + 1
        m = _ENTRY.match(chunk)
        if m is None:
            lead = len(chunk) - len(chunk.lstrip())
            raise GoalParseError(f"malformed goal entry {chunk.strip()!r}", byte_at(start + lead))
        name, count, style = m.groups()
        try:
            cls = FoodClass.parse(name)
        except ValueError:
            raise GoalParseError(f"unknown class {name!r}", byte_at(start + m.start(1))) from None
        if cls in seen:
            raise GoalParseError(f"duplicate class {name!r}", byte_at(start + m.start(1)))
        n = int(count)
        if n < 1:
            raise GoalParseError(f"target count must be >= 1, got {n}", byte_at(start + m.start(2)))
        try:
            st = CutStyle(style.lower())
        except ValueError:
            raise GoalParseError(f"unknown style {style!r}", byte_at(start + m.start(3))) from None
        seen.add(cls)
        entries.append(GoalEntry(cls, n, st))
    return GoalSpec(tuple(entries))


@dataclass(frozen=True)
class CutPlanRecord:
    target: int
    pose: CutPose
    style: CutStyle


@dataclass
class LoopState:
    count: int = 0
    n_obs: int = 0
    iterations: int = 0
    reason: str = ""


@dataclass(frozen=True)
class SimConfig:
    perception: PerceptionConfig = field(default_factory=PerceptionConfig)
    execution: ExecConfig = field(default_factory=ExecConfig)
    blade: BladeSpec = field(default_factory=BladeSpec)
    iterations_per_target: int = 8

    @classmethod
    def perfect(cls) -> "SimConfig":
        return cls(PerceptionConfig.perfect(), ExecConfig.perfect())

    def max_iterations(self, goal: GoalSpec) -> int:
        return self.iterations_per_target * goal.total_target

    def digest(self) -> str:
        blob = json.dumps(_jsonable(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _jsonable(obj: Any) -> Any:
    if hasattr(obj, "__dataclass_fields__"):
        return {k: _jsonable(v) for k, v in asdict(obj).items()}
    if isinstance(obj, dict):
        return {_key(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (FoodClass, CutStyle, CutOutcome)):
        return obj.value
    return obj


def _key(k: Any) -> str:
    if isinstance(k, tuple):
        return ":".join(_key(x) for x in k)
    if isinstance(k, (FoodClass, CutStyle)):
        return k.value
    return str(k)


def select_target(obs: Observation, food_class: FoodClass) -> int:
    """Index of the largest observed object of ``food_class`` (ties: smallest centroid)."""
    idx = obs.indices_of(food_class)
    if not idx:
        raise PlanningError(f"no observed {food_class.value}")
    return min(idx, key=lambda k: (-obs.objects[k].area, obs.objects[k].centroid.x, obs.objects[k].centroid.y))


def plan_cut(obs: Observation, target_index: int, style: CutStyle) -> CutPlanRecord:
    """Blade at the target centroid, across (even) or along (long) its longest diameter."""
    target = obs.objects[target_index]
    if target.mask.count < 2:
        raise PlanningError("target mask too small to plan a cut")
    theta = longest_diameter(target.mask).angle
    angle = theta + math.pi / 2 if CutStyle(style) == CutStyle.EVEN else theta
    return CutPlanRecord(target_index, CutPose(target.centroid, angle % math.pi), CutStyle(style))


def check_collisions(plan: CutPlanRecord, obs: Observation, blade: BladeSpec) -> list[int]:
    """Non-target objects touched by the blade footprint, most overlap first."""
    rect = blade.footprint(plan.pose)
    hits = []
    for k, o in enumerate(obs.objects):
        if k == plan.target:
            continue
        n = overlap_count(rect, o.mask)
        if n:
            hits.append((-n, k))
    return [k for _, k in sorted(hits)]


# ---------------------------------------------------------------------------
# traces


@dataclass(frozen=True)
class TraceEvent:
    kind: str
    data: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"event": self.kind, **self.data}


@dataclass
class EpisodeTrace:
    seed: int | None = None
    config_digest: str = ""
    goal: str = ""
    events: list[TraceEvent] = field(default_factory=list)

    def add(self, kind: str, **data) -> None:
        self.events.append(TraceEvent(kind, data))

    def kinds(self) -> list[str]:
        return [e.kind for e in self.events]

    def header(self) -> dict:
        return {"event": "header", "seed": self.seed, "config_digest": self.config_digest, "goal": self.goal}

    def to_jsonl(self) -> str:
        lines = [self.header()] + [e.to_json() for e in self.events]
        return "".join(json.dumps(line, sort_keys=True) + "\n" for line in lines)

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_jsonl())

    @classmethod
    def from_jsonl(cls, text: str) -> "EpisodeTrace":
        """Inverse of ``to_jsonl`` for a single episode."""
        lines = [json.loads(x) for x in text.splitlines() if x.strip()]
        if not lines or lines[0].get("event") != "header":
            raise ValueError("trace must start with a header line")
        head = lines[0]
        trace = cls(head.get("seed"), head.get("config_digest", ""), head.get("goal", ""))
        for line in lines[1:]:
            data = dict(line)
            trace.add(data.pop("event"), **data)
        return trace


def _r(v: float) -> float:
    return round(float(v), 6) + 0.0


def _obs_payload(obs: Observation, expected: int) -> dict:
    return {
        "n_obs": obs.n_obs,
        "count": expected,
        "objects": [
            {"label": o.label.value, "centroid": [_r(o.centroid.x), _r(o.centroid.y)], "area": _r(o.area)}
            for o in obs.objects
        ],
    }


def _pose_payload(pose: CutPose) -> dict:
    return {"com": [_r(pose.com.x), _r(pose.com.y)], "angle": _r(pose.angle)}


# ---------------------------------------------------------------------------
# the loop


def _resolve_target(scene: Scene, obs: Observation, plan: CutPlanRecord) -> int | None:
    """Ground-truth object under the planned cut point."""
    ids = [i for i in obs.objects[plan.target].true_ids if i in scene]
    if not ids:
        return None
    p = Point(plan.pose.com)
    return min(ids, key=lambda i: (scene.get(i).shape.to_shapely().distance(p), i))


@dataclass
class EpisodeResult:
    success: bool
    scene: Scene
    trace: EpisodeTrace
    outcomes: list[CutOutcome] = field(default_factory=list)


def run_class_loop(
    scene: Scene,
    food_class: FoodClass,
    n_target: int,
    style: CutStyle,
    config: SimConfig,
    rng: np.random.Generator,
    trace: EpisodeTrace,
    state: LoopState | None = None,
    max_iterations: int | None = None,
    outcomes: list | None = None,
    terminate: bool = True,
) -> tuple[Scene, bool]:
    """Observe, then cut (clearing colliders first) or disturb until ``n_target`` pieces are seen.

    ``state.iterations`` is shared across the class loops of one episode and
    bounded by ``max_iterations``.  The stop reason is left in
    ``state.reason``; with ``terminate`` it is also appended to the trace.
    """
    if n_target < 1:
        raise ValueError("n_target must be >= 1")
    state = state if state is not None else LoopState()
    if max_iterations is None:
        max_iterations = config.iterations_per_target * n_target
    pc, ec, blade = config.perception, config.execution, config.blade

    def look() -> Observation:
        o = observe(scene, food_class, pc, rng)
        state.n_obs = o.n_obs
        trace.add("observe", cls=food_class.value, **_obs_payload(o, state.count))
        return o

    def stop(reason: str, ok: bool) -> tuple[Scene, bool]:
        state.reason = reason
        if terminate:
            trace.add("terminate", reason=reason, cls=food_class.value)
        return scene, ok

    first = observe(scene, food_class, pc, rng)
    state.n_obs = state.count = first.n_obs
    trace.add("observe", cls=food_class.value, **_obs_payload(first, state.count))
    obs = first
    if state.n_obs == 0:
        return stop("no-target", False)
    last_pose: CutPose | None = None
    while state.n_obs < n_target:
        if state.iterations >= max_iterations:
            return stop("max-iterations", False)
        state.iterations += 1
        if state.count != state.n_obs:
            scene, ok = execute_disturb(scene, last_pose, ec, rng)
            trace.add("disturb", effective=ok, **_pose_payload(last_pose))
            obs = look()
            continue
        idx = select_target(obs, food_class)
        try:
            plan = plan_cut(obs, idx, style)
        except PlanningError:
            return stop("plan-failed", False)
        trace.add("plan_cut", target=idx, style=plan.style.value, **_pose_payload(plan.pose))
        colliders = check_collisions(plan, obs, blade)
        trace.add("collision_check", ids=colliders)
        target_gt = _resolve_target(scene, obs, plan)
        rect = blade.footprint(plan.pose)
        tc = obs.objects[plan.target].centroid
        for k in colliders:
            interferer = obs.objects[k]
            ids = [i for i in interferer.true_ids if i in scene and i != target_gt]
            ok = False
            if ids and target_gt is not None:
                ic = interferer.centroid
                scene, ok = execute_push(scene, ids, target_gt, rect, ec, rng, direction=(ic.x - tc.x, ic.y - tc.y))
            trace.add("push", id=k, effective=ok)
        obs = look()
        if target_gt is not None and target_gt in scene:
            scene, outcome = execute_cut(scene, target_gt, plan.pose, blade, ec, rng, style=plan.style)
        else:
            outcome = CutOutcome.MISSED
        if outcomes is not None:
            outcomes.append(outcome)
        state.count += 1
        trace.add("cut", outcome=outcome.value, **_pose_payload(plan.pose))
        last_pose = plan.pose
        obs = look()
    return stop("success", True)


def run_episode(
    scene: Scene,
    goal: GoalSpec,
    config: SimConfig,
    rng: np.random.Generator,
    seed: int | None = None,
) -> EpisodeResult:
    """Run one class loop per goal entry, in order; succeed iff all do."""
    trace = EpisodeTrace(seed=seed, config_digest=config.digest(), goal=str(goal))
    state = LoopState()
    budget = config.max_iterations(goal)
    outcomes: list[CutOutcome] = []
    success = True
    for entry in goal.entries:
        state.count = state.n_obs = 0
        scene, ok = run_class_loop(
            scene,
            entry.food_class,
            entry.target_count,
            entry.style,
            config,
            rng,
            trace,
            state,
            budget,
            outcomes,
            terminate=False,
        )
        if not ok:
            success = False
            trace.add("terminate", reason=state.reason, cls=entry.food_class.value)
            break
    if success:
        trace.add("terminate", reason="success")
    return EpisodeResult(success, scene, trace, outcomes)
