import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chopsim.geometry import Point2, blade_overlap, regular_polygon
from chopsim.perception import PerceptionConfig, merge_close_objects, object_mask, observe
from chopsim.primitives import (
    DEFAULT_P_CUT,
    BladeSpec,
    CutOutcome,
    CutPose,
    CutStyle,
    ExecConfig,
    execute_cut,
    execute_disturb,
    execute_push,
)
from chopsim.scene import TEMPLATES, Board, FoodClass, Scene, SceneGenConfig, SceneObject, generate_scene, place_shape

APPLE, CUKE, CARROT = FoodClass.APPLE, FoodClass.CUCUMBER, FoodClass.CARROT
BLADE = BladeSpec()


def whole(cls, at, angle=0.0, oid=0):
    return SceneObject(oid, cls, Fraction(1), place_shape(TEMPLATES[cls].base_polygon, angle, at))


def lone(cls, angle=0.0):
    return Scene(Board(), (whole(cls, Point2(200, 150), angle),))


def centered_pose(scene, oid=0, angle=math.pi / 2):
    return CutPose(scene.get(oid).shape.centroid, angle)


def test_pose_angle_normalized():
    assert CutPose(Point2(0, 0), math.pi + 0.25).angle == pytest.approx(0.25)
    assert CutPose(Point2(0, 0), -0.25).angle == pytest.approx(math.pi - 0.25)
    with pytest.raises(ValueError):
        CutPose(Point2(math.nan, 0), 0.0)


def test_forced_clean_cut():
    s = lone(APPLE)
    out, outcome = execute_cut(s, 0, centered_pose(s), BLADE, ExecConfig.perfect(), np.random.default_rng(0))
    assert outcome is CutOutcome.CLEAN
    a, b = out.objects
    assert a.parent_id == b.parent_id == 0
    assert a.shape.distance(b.shape) == pytest.approx(6.0, abs=1e-6)
    assert out.total_area() == pytest.approx(s.total_area(), rel=1e-9)
    assert merge_close_objects(out, 2.0) in ([[1], [2]], [[2], [1]])


def test_forced_stuck_cut_reads_as_one_blob():
    s = lone(APPLE)
    cfg = ExecConfig.perfect(p_stuck_given_cut={APPLE: 1.0})
    out, outcome = execute_cut(s, 0, centered_pose(s), BLADE, cfg, np.random.default_rng(0))
    assert outcome is CutOutcome.STUCK and out.count() == 2
    assert merge_close_objects(out, 2.0) == [[1, 2]]
    assert observe(out, APPLE, PerceptionConfig.perfect(), np.random.default_rng(0)).count(APPLE) == 1


def test_missed_cut_leaves_scene():
    s = lone(APPLE)
    pose = CutPose(Point2(20, 20), 0.0)
    out, outcome = execute_cut(s, 0, pose, BLADE, ExecConfig.perfect(), np.random.default_rng(0))
    assert outcome is CutOutcome.MISSED and out is s


def test_unknown_target():
    s = lone(APPLE)
    with pytest.raises(KeyError):
        execute_cut(s, 7, centered_pose(s), BLADE, ExecConfig(), np.random.default_rng(0))


def test_roll_moves_across_long_axis():
    s = lone(CARROT, angle=0.0)
    cfg = ExecConfig(p_cut={(CARROT, CutStyle.LONG): 0.0})
    before = s.get(0).shape.centroid
    out, outcome = execute_cut(s, 0, centered_pose(s), BLADE, cfg, np.random.default_rng(1), CutStyle.LONG)
    assert outcome is CutOutcome.ROLLED and out.count() == 1
    after = out.get(0).shape.centroid
    dx, dy = after.x - before.x, after.y - before.y
    assert abs(dx) < 1e-9 and 20 - 1e-9 <= abs(dy) <= 60 + 1e-9


@pytest.mark.parametrize("cls,style", list(DEFAULT_P_CUT))
def test_default_cut_rates(cls, style):
    rng = np.random.default_rng(list(DEFAULT_P_CUT).index((cls, style)))
    s = lone(cls)
    pose = centered_pose(s, angle=0.3)
    cfg = ExecConfig()
    n = 1000
    ok = sum(execute_cut(s, 0, pose, BLADE, cfg, rng, style)[1].separated for _ in range(n))
    assert abs(ok / n - DEFAULT_P_CUT[cls, style]) <= 0.03


def test_cut_mass_conservation_and_bounds():
    rng = np.random.default_rng(12)
    cfg = ExecConfig(p_cut={k: 0.5 for k in DEFAULT_P_CUT}, p_stuck_given_cut={APPLE: 0.5})
    seen = set()
    for seed in range(60):
        s = generate_scene(SceneGenConfig(), seed)
        o = s.objects[int(rng.integers(s.count()))]
        pose = CutPose(o.shape.centroid, rng.uniform(0, math.pi))
        out, outcome = execute_cut(s, o.id, pose, BLADE, cfg, rng, CutStyle.LONG)
        seen.add(outcome)
        assert out.total_area() == pytest.approx(s.total_area(), rel=1e-6)
        assert all(out.board.contains(x.shape) for x in out.objects)
        grew = out.count() - s.count()
        assert grew >= 1 if outcome.separated else grew == 0
    assert {CutOutcome.CLEAN, CutOutcome.ROLLED} <= seen


def test_clean_cut_against_board_edge_still_separates():
    # apple flush with the board corner; pieces cannot move outward
    s = Scene(Board(), (whole(APPLE, Point2(40.5, 40.5)),))
    out, outcome = execute_cut(s, 0, CutPose(Point2(40.5, 40.5), math.pi / 2), BLADE, ExecConfig.perfect(), np.random.default_rng(0))
    assert outcome is CutOutcome.CLEAN
    a, b = out.objects
    assert a.shape.distance(b.shape) > 2.0
    assert all(out.board.contains(x.shape) for x in out.objects)


# ---------------------------------------------------------------------------
# disturb


def stuck_pair():
    s = lone(APPLE)
    pose = centered_pose(s)
    cfg = ExecConfig.perfect(p_stuck_given_cut={APPLE: 1.0})
    out, _ = execute_cut(s, 0, pose, BLADE, cfg, np.random.default_rng(0))
    return out, pose


def test_disturb_separates_stuck_pair():
    s, pose = stuck_pair()
    for seed in range(20):
        out, ok = execute_disturb(s, pose, ExecConfig.perfect(), np.random.default_rng(seed))
        assert ok
        a, b = out.objects
        assert a.shape.distance(b.shape) > 2.0
        assert observe(out, APPLE, PerceptionConfig.perfect(), np.random.default_rng(0)).count(APPLE) == 2


def test_disturb_noop_when_disabled():
    s, pose = stuck_pair()
    out, ok = execute_disturb(s, pose, ExecConfig(p_disturb=0.0), np.random.default_rng(0))
    assert not ok and out == s


def test_disturb_needs_pose():
    s, _ = stuck_pair()
    with pytest.raises(ValueError):
        execute_disturb(s, None, ExecConfig(), np.random.default_rng(0))


def test_disturb_rate():
    s, pose = stuck_pair()
    rng = np.random.default_rng(21)
    cfg = ExecConfig()
    n = 1000
    ok = sum(execute_disturb(s, pose, cfg, rng)[1] for _ in range(n))
    assert abs(ok / n - 0.667) <= 0.03


def test_disturb_leaves_far_objects():
    s, pose = stuck_pair()
    far = whole(CUKE, Point2(300, 60), oid=9)
    s = Scene(s.board, s.objects + (far,), s.next_id)
    out, _ = execute_disturb(s, pose, ExecConfig.perfect(), np.random.default_rng(3))
    assert out.get(9).shape == far.shape


# ---------------------------------------------------------------------------
# push


def push_scene(dx=70.0):
    t = whole(APPLE, Point2(150, 150), oid=0)
    i = whole(CARROT, Point2(150 + dx, 150), angle=math.pi / 2, oid=1)
    return Scene(Board(), (t, i))


def blade_at(scene, angle=math.pi / 2):
    return BLADE.footprint(CutPose(scene.get(0).shape.centroid, angle))


def test_push_direction_and_clearance():
    s = push_scene(60.0)
    blade = BLADE.footprint(CutPose(Point2(205, 150), math.pi / 2))
    assert blade_overlap(blade, object_mask(s.get(1).shape))
    out, ok = execute_push(s, 1, 0, blade, ExecConfig.perfect(), np.random.default_rng(0))
    assert ok
    before, after = s.get(1).shape.centroid, out.get(1).shape.centroid
    assert after.x > before.x and after.y == pytest.approx(before.y, abs=1e-9)
    assert not blade_overlap(blade.inflated(5.0), object_mask(out.get(1).shape))
    assert out.get(0).shape == s.get(0).shape


def test_failed_push_is_one_step():
    s = push_scene(60.0)
    blade = BLADE.footprint(CutPose(Point2(205, 150), math.pi / 2))
    out, ok = execute_push(s, 1, 0, blade, ExecConfig(p_push=0.0), np.random.default_rng(0))
    assert not ok
    before, after = s.get(1).shape.centroid, out.get(1).shape.centroid
    assert math.hypot(after.x - before.x, after.y - before.y) == pytest.approx(5.0)


def test_push_rejects_same_ids():
    s = push_scene()
    with pytest.raises(ValueError):
        execute_push(s, 0, 0, blade_at(s), ExecConfig(), np.random.default_rng(0))


def test_push_rate():
    s = push_scene(60.0)
    blade = BLADE.footprint(CutPose(Point2(205, 150), math.pi / 2))
    rng = np.random.default_rng(5)
    cfg = ExecConfig()
    n = 1000
    ok = sum(execute_push(s, 1, 0, blade, cfg, rng)[1] for _ in range(n))
    assert abs(ok / n - 0.692) <= 0.03


@settings(max_examples=40, deadline=None)
@given(st.floats(0, 2 * math.pi), st.floats(55, 90), st.booleans())
def test_push_collinear_with_centroids(theta, dist, succeed):
    t = whole(APPLE, Point2(200, 150), oid=0)
    c = Point2(200 + dist * math.cos(theta), 150 + dist * math.sin(theta))
    i = SceneObject(1, APPLE, Fraction(1, 4), regular_polygon(c, 12, 16))
    s = Scene(Board(), (t, i))
    blade = BLADE.footprint(CutPose(Point2(200, 150), theta + math.pi / 2))
    cfg = ExecConfig(p_push=1.0 if succeed else 0.0)
    out, _ = execute_push(s, 1, 0, blade, cfg, np.random.default_rng(0))
    moved = np.subtract(out.get(1).shape.centroid, c)
    want = np.array([math.cos(theta), math.sin(theta)])
    cross = moved[0] * want[1] - moved[1] * want[0]
    assert abs(cross) < 1e-6
    assert moved @ want >= -1e-9
    assert all(out.board.contains(x.shape) for x in out.objects)


def test_config_validation():
    with pytest.raises(ValueError):
        ExecConfig(p_push=2.0)
    with pytest.raises(ValueError):
        ExecConfig(separation_mm=0.0)
    with pytest.raises(ValueError):
        BladeSpec(width=0)
    assert ExecConfig().stuck_probability(CUKE) == 0.0
    assert ExecConfig().cut_probability(CARROT, CutStyle.LONG) == 0.4
