"""Command line entry point: ``chopsim episode | experiment | gen-scene``.

Exit status is 0 on success, 1 when an episode or experiment fails and 2
for bad input (arguments, goal strings, scene or config files).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .harness import ConfigError, ExperimentSpec, Family, emit_report, load_config, report_csv, run_experiment, spec_from_config
from .perception import PerceptionConfig
from .planner import GoalParseError, SimConfig, parse_goal, run_episode
from .scene import PlacementError, SceneError, SceneGenConfig, generate_scene, load_scene, save_scene
from .seeding import make_rng

log = logging.getLogger("chopsim")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def _config(path: str | None) -> dict:
    return load_config(path) if path else {}


def _episode_spec(args) -> ExperimentSpec:
    # episodes reuse the experiment config format; three-class clutter by default
    base = ExperimentSpec.default(Family.EXP1, 1, scene=SceneGenConfig(), perception=PerceptionConfig.three_class())
    return spec_from_config(Family.EXP1, 1, _config(args.config), perfect=args.perfect, base=base)


def cmd_episode(args) -> int:
    try:
        goal = parse_goal(args.goal)
    except GoalParseError as e:
        print(f"error: bad goal: {e}", file=sys.stderr)
        return EXIT_CONFIG
    spec = _episode_spec(args)
    seed = args.seed if args.seed is not None else 0
    if args.random:
        try:
            scene = generate_scene(spec.scene, make_rng(seed, 0))
        except PlacementError as e:
            print(f"error: {e}", file=sys.stderr)
            return EXIT_FAIL
    else:
        try:
            scene = load_scene(args.scene)
        except (OSError, ValueError, KeyError, SceneError) as e:
            print(f"error: cannot load scene {args.scene}: {e}", file=sys.stderr)
            return EXIT_CONFIG
    sim = SimConfig(spec.perception, spec.execution, spec.blade, spec.iterations_per_target)
    result = run_episode(scene, goal, sim, make_rng(seed, 1), seed=seed)
    if args.trace:
        result.trace.write(args.trace)
    counts = ", ".join(f"{e.food_class.value}={result.scene.count(e.food_class)}" for e in goal.entries)
    reason = result.trace.events[-1].data.get("reason", "")
    print(f"{'success' if result.success else 'failure'} ({reason}); pieces: {counts}")
    return EXIT_OK if result.success else EXIT_FAIL


def cmd_experiment(args) -> int:
    spec = spec_from_config(args.family, args.trials, _config(args.config), perfect=args.perfect)
    try:
        result = run_experiment(spec, args.seed, workers=args.workers)
    except PlacementError as e:
        print(f"error: experiment aborted: {e}", file=sys.stderr)
        return EXIT_FAIL
    log.info("%d trials in %.2f s", spec.trials, result.metrics.runtime_s)
    try:
        if args.out:
            emit_report(result.metrics, args.out, "csv")
        else:
            sys.stdout.write(report_csv(result.metrics))
        if args.json:
            emit_report(result.metrics, args.json, "json")
        trace = args.trace
        if trace is None and args.out and spec.family is Family.EXP3:
            trace = str(Path(args.out).with_suffix(".jsonl"))
        if trace and spec.family is Family.EXP3:
            Path(trace).write_text(result.traces_jsonl())
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def cmd_gen_scene(args) -> int:
    spec = _episode_spec(args)
    try:
        scene = generate_scene(spec.scene, make_rng(args.seed, 0))
    except PlacementError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAIL
    try:
        save_scene(scene, args.out)
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="chopsim", description="Simulated vision-guided chopping.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    e = sub.add_parser("episode", help="run one goal-driven episode")
    src = e.add_mutually_exclusive_group(required=True)
    src.add_argument("--scene", help="scene JSON file")
    src.add_argument("--random", action="store_true", help="generate a random scene from --seed")
    e.add_argument("--seed", type=int, default=None)
    e.add_argument("--goal", required=True, help='e.g. "apple=4:even; cucumber=3:long"')
    e.add_argument("--trace", help="write the event trace as JSON Lines")
    e.add_argument("--config", help="JSON config file")
    e.add_argument("--perfect", action="store_true", help="set every probability to 1")
    e.set_defaults(func=cmd_episode)

    x = sub.add_parser("experiment", help="run a seeded experiment family")
    x.add_argument("--family", required=True, choices=[f.value for f in Family])
    x.add_argument("--trials", type=int, required=True)
    x.add_argument("--seed", type=int, default=0)
    x.add_argument("--config", help="JSON config file")
    x.add_argument("--out", help="CSV report path (stdout if omitted)")
    x.add_argument("--json", help="JSON report path")
    x.add_argument("--trace", help="JSON Lines episode traces (exp3; default: next to --out)")
    x.add_argument("--perfect", action="store_true")
    x.add_argument("--workers", type=int, default=1)
    x.set_defaults(func=cmd_experiment)

    g = sub.add_parser("gen-scene", help="write a random scene as JSON")
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--config", help="JSON config file (scene section)")
    g.set_defaults(func=cmd_gen_scene, perfect=False)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if getattr(args, "seed", None) is None and getattr(args, "random", False):
        print("error: --random needs --seed", file=sys.stderr)
        return EXIT_CONFIG
    if getattr(args, "trials", 1) < 0:
        print("error: --trials must be non-negative", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"error: config: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
