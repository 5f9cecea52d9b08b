"""Find the per-segment label accuracy that gives a target object-level
segmentation success rate.

Every observation draws the same number of random values whatever
``p_label`` is, so with fixed seeds the success rate is monotone in
``p_label`` and plain bisection converges.

    python tools/calibrate_p_label.py --classes apple cucumber --target 0.975
"""

import argparse
from dataclasses import replace

from chopsim.harness import detection_ok, segmentation_ok
from chopsim.perception import PerceptionConfig, observe
from chopsim.scene import FoodClass, PlacementError, SceneGenConfig, generate_scene
from chopsim.seeding import make_rng


def success_rate(p_label, scenes, base, seed):
    cfg = replace(base, p_detect=1.0, p_label=p_label)
    ok = n = 0
    for k, scene in enumerate(scenes):
        obs = observe(scene, None, cfg, make_rng(seed, k, 1))
        for o in scene.objects:
            if detection_ok(obs, o):
                n += 1
                ok += segmentation_ok(obs, o)
    return ok / n, n


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--classes", nargs="+", default=["apple", "cucumber"])
    ap.add_argument("--target", type=float, default=0.975)
    ap.add_argument("--scenes", type=int, default=3000)
    ap.add_argument("--seed", type=int, default=2024)
    ap.add_argument("--steps", type=int, default=12)
    args = ap.parse_args()
    gen = SceneGenConfig(classes=tuple(FoodClass.parse(c) for c in args.classes))
    scenes = []
    k = 0
    while len(scenes) < args.scenes:
        try:
            scenes.append(generate_scene(gen, make_rng(args.seed, k, 0)))
        except PlacementError:
            pass
        k += 1
    base = PerceptionConfig()
    lo, hi = 0.8, 1.0
    for _ in range(args.steps):
        mid = (lo + hi) / 2
        rate, n = success_rate(mid, scenes, base, args.seed)
        print(f"p_label={mid:.6f} success={rate:.5f} objects={n}", flush=True)
        if rate < args.target:
            lo = mid
        else:
            hi = mid
    print(f"calibrated p_label ~ {(lo + hi) / 2:.4f}")


if __name__ == "__main__":
    main()
