"""Command line front end.

Exit codes: 0 on success, 1 when a task or audit fails (the report is still
printed), 2 for usage errors. `momasim sim` reads an optional JSON config
whose path comes from --config or the MOMA_CONFIG environment variable;
explicit flags win over the file.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

from . import service
from .imitation import ImitationConfig, SkillModel, fit_skill, rollout
from .records import DemonstrationRecord
from .robot import preset, preset_names
from .scripting import load_script
from .serialization import canonical_dumps
from .simulator import replay, run_scripted
from .world import load_world

POLICY_FLAGS = {"ee-agent": "ee_plus_agent", "whole-body": "whole_body"}


def _jsonable(value):
    """Reports may carry inf clearances; JSON output maps those to null."""
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


def _print(doc: dict) -> None:
    print(canonical_dumps(_jsonable(doc)))


def _cmd_sim(args) -> int:
    doc: dict = {}
    config_path = args.config or os.environ.get("MOMA_CONFIG")
    if config_path:
        doc = json.loads(Path(config_path).read_text())
    for key in ("robot", "world", "tick_hz", "interface", "record_path", "host", "port"):
        value = getattr(args, key)
        if value is not None:
            doc[key] = value
    try:
        cfg = service.SessionConfig.from_json_dict(doc)
        service.serve(cfg)
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    return 0


def _cmd_replay(args) -> int:
    report = replay(args.record, tolerance=args.tolerance)
    ok = report.within(args.tolerance)
    _print(
        {
            "record": str(args.record),
            "rows": report.rows,
            "max_position_error": report.max_position_error,
            "max_angle_error": report.max_angle_error,
            "first_divergence": report.first_divergence,
            "tolerance": args.tolerance,
            "ok": ok,
        }
    )
    return 0 if ok else 1


def _cmd_run(args) -> int:
    world = load_world(args.world)
    script = load_script(args.script)
    _, report = run_scripted(world, preset(args.robot), script)
    _print(report)
    return 0 if report["success"] else 1


def _cmd_fit(args) -> int:
    if len(args.demos) < 2:
        print("error: >= 2 demos required", file=sys.stderr)
        return 2
    demos = [DemonstrationRecord.load(p) for p in args.demos]
    frames = None
    if args.task:
        task_world = load_world(args.task)
        frames = ["world"] + [f.name for f in task_world.frames]
    cfg = ImitationConfig(n_components=args.components, seed=args.seed)
    model = fit_skill(demos, cfg, frames=frames, fit_base=not args.no_base)
    model.save(args.output)
    _print(
        {
            "model": str(args.output),
            "robot": model.robot,
            "frames": model.frame_names,
            "segments": len(model.segments),
        }
    )
    return 0


def _cmd_rollout(args) -> int:
    model = SkillModel.load(args.model)
    world = load_world(args.world)
    report = rollout(POLICY_FLAGS[args.policy], model, world, preset(model.robot))
    _print(report)
    return 0 if report["success"] else 1


def _cmd_eval(args) -> int:
    suite_path = Path(args.suite)
    suite = json.loads(suite_path.read_text())
    root = suite_path.parent
    all_ok = True
    rows = []
    for case in suite["cases"]:
        world = load_world(root / case["world"])
        script = load_script(root / case["script"])
        _, report = run_scripted(world, preset(args.robot), script)
        ok = _meets(report, case.get("require", {}))
        all_ok &= ok
        rows.append((case["name"], ok, report))
    width = max(len(r[0]) for r in rows)
    print(f"{'case':<{width}}  result  rms      clearance  ticks")
    for name, ok, report in rows:
        clear = report["min_clearance"]
        print(
            f"{name:<{width}}  {'pass' if ok else 'FAIL':<6}  "
            f"{report['rms_error']:.5f}  {clear:>9.3f}  {report['completion_ticks']}"
        )
    return 0 if all_ok else 1


def _meets(report: dict, require: dict) -> bool:
    checks = {
        "success": lambda v: report["success"] is v,
        "max_rms": lambda v: report["rms_error"] <= v,
        "zero_collisions": lambda v: (report["collision_ticks"] == 0) is v,
        "min_clearance": lambda v: report["min_clearance"] >= v,
    }
    return all(checks[key](value) for key, value in require.items())


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="momasim", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("sim", help="serve an interactive teleoperation session")
    sim.add_argument("--world", help="world JSON path")
    sim.add_argument("--robot", choices=preset_names())
    sim.add_argument("--tick-hz", dest="tick_hz", type=float)
    sim.add_argument("--interface", choices=service.INTERFACES)
    sim.add_argument("--record", dest="record_path", help="write a demonstration record on exit")
    sim.add_argument("--host")
    sim.add_argument("--port", type=int)
    sim.add_argument("--config", help="JSON session config (default: $MOMA_CONFIG)")
    sim.set_defaults(handler=_cmd_sim)

    rep = sub.add_parser("replay", help="headless determinism audit of a record")
    rep.add_argument("record")
    rep.add_argument("--tolerance", type=float, default=1e-6)
    rep.set_defaults(handler=_cmd_replay)

    run = sub.add_parser("run", help="scripted rollout, prints the task report")
    run.add_argument("world")
    run.add_argument("script")
    run.add_argument("--robot", choices=preset_names(), default="hsr-like")
    run.set_defaults(handler=_cmd_run)

    fit = sub.add_parser("fit", help="fit a skill model from demonstration records")
    fit.add_argument("demos", nargs="+")
    fit.add_argument("--task", help="world JSON naming the candidate task frames")
    fit.add_argument("-o", "--output", required=True)
    fit.add_argument("--components", type=int, default=5)
    fit.add_argument("--seed", type=int, default=0)
    fit.add_argument("--no-base", action="store_true", help="skip the base-pose mixture")
    fit.set_defaults(handler=_cmd_fit)

    roll = sub.add_parser("rollout", help="roll out a fitted skill in a world")
    roll.add_argument("model")
    roll.add_argument("world")
    roll.add_argument("--policy", choices=sorted(POLICY_FLAGS), required=True)
    roll.set_defaults(handler=_cmd_rollout)

    ev = sub.add_parser("eval", help="run a suite of scripted cases, print a summary table")
    ev.add_argument("suite")
    ev.add_argument("--robot", choices=preset_names(), default="hsr-like")
    ev.set_defaults(handler=_cmd_eval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.handler(args)


if __name__ == "__main__":
    sys.exit(main())
