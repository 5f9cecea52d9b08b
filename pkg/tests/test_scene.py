import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chisquare

from chopsim.geometry import Point2, rectangle, regular_polygon
from chopsim.scene import (
    TEMPLATES,
    Board,
    FoodClass,
    PlacementError,
    Scene,
    SceneError,
    SceneGenConfig,
    SceneObject,
    ShapeTemplate,
    clamp_to_board,
    dumps_scene,
    generate_scene,
    load_scene,
    replace_object,
    roll_direction,
    save_scene,
    scene_from_dict,
    slice_shape,
)
from chopsim.geometry import split_polygon
from chopsim.seeding import derive_seed, make_rng

APPLE = FoodClass.APPLE


def one(cls, shape, oid=0, frac=Fraction(1)):
    return SceneObject(oid, cls, frac, shape)


def test_single_whole_apple():
    cfg = SceneGenConfig(n_objects_range=(1, 1), classes=(APPLE,), size_fractions=(Fraction(1),))
    for seed in range(10):
        s = generate_scene(cfg, seed)
        assert s.count() == 1
        o = s.objects[0]
        assert o.food_class is APPLE and o.size_fraction == 1
        assert o.shape.area == pytest.approx(TEMPLATES[APPLE].base_polygon.area)


def test_generation_is_deterministic():
    cfg = SceneGenConfig()
    assert dumps_scene(generate_scene(cfg, 42)) == dumps_scene(generate_scene(cfg, 42))
    assert generate_scene(cfg, 42) == generate_scene(cfg, 42)
    assert dumps_scene(generate_scene(cfg, 42)) != dumps_scene(generate_scene(cfg, 43))


def test_object_count_uniform():
    # whole apples on a roomy board, so placement is cheap and never fails
    cfg = SceneGenConfig(classes=(APPLE,), size_fractions=(Fraction(1),), board=Board(2000, 2000))
    counts = np.zeros(10, dtype=int)
    for seed in range(10_000):
        counts[generate_scene(cfg, make_rng(1234, seed)).count() - 1] += 1
    assert chisquare(counts).pvalue > 0.01


def test_classes_and_fractions_cover_config():
    cfg = SceneGenConfig()
    seen = set()
    for seed in range(200):
        for o in generate_scene(cfg, seed).objects:
            seen.add((o.food_class, o.size_fraction))
    assert seen == set(itertools.product(cfg.classes, cfg.size_fractions))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**63 - 1))
def test_generated_scene_invariants(seed):
    cfg = SceneGenConfig()
    try:
        s = generate_scene(cfg, seed)
    except PlacementError:
        return
    assert 1 <= s.count() <= 10
    ids = [o.id for o in s.objects]
    assert len(set(ids)) == len(ids) and s.next_id > max(ids)
    for o in s.objects:
        assert s.board.contains(o.shape)
        assert 0 < o.size_fraction <= 1
    for a, b in itertools.combinations(s.objects, 2):
        assert a.shape.to_shapely().distance(b.shape.to_shapely()) >= cfg.min_gap - 1e-9


def test_fixed_classes():
    s = generate_scene(SceneGenConfig(), 5, classes=["carrot", "apple"])
    assert [o.food_class for o in s.objects] == [FoodClass.CARROT, APPLE]


def test_placement_failure_names_object():
    cfg = SceneGenConfig(size_fractions=(Fraction(1),), board=Board(100, 100), max_placement_attempts=50, placement_rounds=2)
    with pytest.raises(PlacementError) as info:
        generate_scene(cfg, 0, classes=[APPLE, APPLE, APPLE])
    assert info.value.index == 1 and info.value.attempts == 50


def test_config_validation():
    with pytest.raises(SceneError):
        SceneGenConfig(min_gap=-1)
    with pytest.raises(SceneError):
        SceneGenConfig(n_objects_range=(3, 2))
    with pytest.raises(SceneError):
        SceneGenConfig(size_fractions=(Fraction(1, 3),))
    with pytest.raises(SceneError):
        ShapeTemplate(APPLE, rectangle(Point2(0, 0), 10, 10))


# ---------------------------------------------------------------------------
# slicing


def test_whole_fraction_is_identity():
    t = TEMPLATES[FoodClass.CARROT]
    assert slice_shape(t, Fraction(1), np.random.default_rng(0)) is t.base_polygon


def test_half_of_symmetric_shape():
    sym = ShapeTemplate(APPLE, rectangle(Point2(0, 0), 60, 30))
    for seed in range(20):
        piece = slice_shape(sym, Fraction(1, 2), np.random.default_rng(seed))
        assert piece.area == pytest.approx(900, rel=1e-6)


def test_eighth_apple_trace():
    t = TEMPLATES[APPLE]
    base = t.base_polygon.area
    for seed in range(200):
        trace = []
        piece = slice_shape(t, Fraction(1, 8), np.random.default_rng(seed), trace)
        assert len(trace) == 3
        for step in trace:
            assert 0.25 <= step["piece_area"] / step["parent_area"] <= 0.75
        assert base / 16 <= piece.area <= base


def test_unsupported_fraction():
    with pytest.raises(SceneError):
        slice_shape(TEMPLATES[APPLE], Fraction(1, 3), np.random.default_rng(0))


# ---------------------------------------------------------------------------
# clamp / replace


def test_clamp_minimal_translation():
    board = Board()
    sq = rectangle(Point2(board.width, 150), 10, 10)  # 5 mm past x = width
    s = clamp_to_board(Scene(board, (one(APPLE, sq),)))
    minx, _, maxx, _ = s.objects[0].shape.bounds
    assert maxx == pytest.approx(board.width)
    assert minx == pytest.approx(board.width - 10)
    inside = Scene(board, (one(APPLE, rectangle(Point2(50, 50), 10, 10)),))
    assert clamp_to_board(inside) is inside


def test_clamp_rejects_oversized():
    with pytest.raises(SceneError):
        clamp_to_board(Scene(Board(), (one(APPLE, rectangle(Point2(0, 0), 500, 10)),)))


def test_clamp_random_displacements():
    rng = np.random.default_rng(4)
    for seed in range(50):
        s = generate_scene(SceneGenConfig(), seed)
        moved = {o.id: o.shape.translated(*rng.uniform(-200, 200, 2)) for o in s.objects}
        out = clamp_to_board(s.with_shapes(moved))
        assert all(out.board.contains(o.shape) for o in out.objects)
        for o in out.objects:
            assert o.shape.area == pytest.approx(moved[o.id].area)


def test_replace_object_ledger():
    disc = regular_polygon(Point2(100, 100), 40, 64)
    s = Scene(Board(), (one(APPLE, disc, 0), one(APPLE, regular_polygon(Point2(300, 100), 40, 64), 1)))
    halves = split_polygon(disc, Point2(100, 100), 0.3)
    two = replace_object(s, 0, halves)
    assert two.count() == 3
    kids = [o for o in two.objects if o.parent_id == 0]
    assert len(kids) == 2 and all(o.size_fraction == Fraction(1, 2) for o in kids)
    assert {o.id for o in kids} == {2, 3} and two.next_id == 4
    assert replace_object(s, 0, [disc]).count() == 2
    u = rectangle(Point2(100, 100), 30, 30)
    assert replace_object(s, 0, [u, u, u]).count() == 4
    with pytest.raises(KeyError):
        replace_object(s, 9, halves)


def test_lineage_terminates_and_area_bounded():
    rng = np.random.default_rng(1)
    s = generate_scene(SceneGenConfig(), 3)
    original = {o.id: o.shape.area for o in s.objects}
    lineage = {}
    for _ in range(20):
        o = s.objects[int(rng.integers(s.count()))]
        s = replace_object(s, o.id, split_polygon(o.shape, o.shape.centroid, rng.uniform(0, math.pi)))
        lineage.update({k.id: k.parent_id for k in s.objects if k.parent_id is not None})
    totals = dict.fromkeys(original, 0.0)
    for o in s.objects:
        oid, hops = o.id, 0
        while oid not in original:
            oid = lineage[oid]
            hops += 1
            assert hops <= 20
        totals[oid] += o.shape.area
    for root, area in totals.items():
        assert area <= original[root] * (1 + 1e-6)
    assert sum(totals.values()) == pytest.approx(sum(original.values()), rel=1e-9)


def test_roll_direction_perpendicular_to_long_axis():
    t = TEMPLATES[FoodClass.CUCUMBER]
    o = one(FoodClass.CUCUMBER, t.base_polygon.rotated(0.5, t.base_polygon.centroid).translated(200, 150))
    d = roll_direction(o)
    assert math.hypot(*d) == pytest.approx(1.0)
    assert abs(d[0] * math.cos(0.5) + d[1] * math.sin(0.5)) < 0.05
    assert roll_direction(one(APPLE, TEMPLATES[APPLE].base_polygon)) is None


# ---------------------------------------------------------------------------
# files and seeds


def test_json_round_trip(tmp_path):
    for seed in range(20):
        s = generate_scene(SceneGenConfig(), seed)
        text = dumps_scene(s)
        p = tmp_path / f"s{seed}.json"
        save_scene(s, p)
        again = load_scene(p)
        assert dumps_scene(again) == text
        assert [o.food_class for o in again.objects] == [o.food_class for o in s.objects]


def test_malformed_scene_rejected(tmp_path):
    with pytest.raises(SceneError):
        scene_from_dict({"board": {"width_mm": 10}, "objects": []})
    p = tmp_path / "bad.json"
    p.write_text("{nope")
    with pytest.raises(SceneError):
        load_scene(p)


def test_child_seeds_distinct():
    kids = {derive_seed(7, i) for i in range(100_000)}
    assert len(kids) == 100_000
    assert derive_seed(7, 1, 2) != derive_seed(7, 2, 1)
