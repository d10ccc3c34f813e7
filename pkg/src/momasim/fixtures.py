"""Bundled worlds, scripts, records, and policy descriptors.

Everything under momasim/data is generated by rebuild() from the robot
presets, so the committed artifacts stay auditable: regenerating a fixture
must reproduce it byte for byte (the test suite spot-checks this). Tasks
anchor their first waypoint at the preset's neutral EE pose; orientations
stay at the start orientation because the arm presets have no independent
yaw wrist, so any other target would pin the tracking-error scale at its
floor and stall the virtual operator.
"""

from __future__ import annotations

import json
import math
from importlib import resources
from pathlib import Path

import numpy as np

from .agent import POLICY_SCHEMA_VERSION, AgentConfig
from .geometry import Pose, UnitQuaternion
from .inference import Gripper, OperatorSignal
from .records import DemonstrationRecord
from .robot import RobotDescription, forward_kinematics, fmm_like, hsr_like, neutral_state
from .scripting import load_script, record_demonstration, save_script
from .serialization import canonical_dumps
from .world import Obstacle, TaskFrameSpec, TaskSpec, World, load_world, save_world

SUITE_SCHEMA_VERSION = 1

# lateral task-frame offsets (m) used to record the wipe demonstrations
WIPE_JITTERS = (-0.25, -0.12, 0.0, 0.12, 0.25)


def data_root() -> Path:
    return Path(str(resources.files("momasim").joinpath("data")))


def data_path(rel: str) -> Path:
    return data_root() / rel


def bundled_world(name: str) -> World:
    return load_world(data_path(f"worlds/{name}.json"))


def bundled_script(name: str) -> list[OperatorSignal]:
    return load_script(data_path(f"scripts/{name}.jsonl"))


def bundled_record(name: str) -> DemonstrationRecord:
    return DemonstrationRecord.load(data_path(f"records/{name}.jsonl"))


def bundled_record_paths() -> list[Path]:
    return sorted(data_root().glob("records/*.jsonl"))


def wipe_demo_paths() -> list[Path]:
    return sorted(data_root().glob("records/wipe_demo_*.jsonl"))


def suite_path() -> Path:
    return data_path("suite.json")


def protocol_fixture_path() -> Path:
    return data_path("protocol/messages.jsonl")


# -- world builders -----------------------------------------------------------


def _box(name, cx, cy, half_x, half_y, z_lo, z_hi, attached_to=None) -> Obstacle:
    verts = np.array(
        [[-half_x, -half_y], [half_x, -half_y], [half_x, half_y], [-half_x, half_y]]
    )
    return Obstacle(name, verts, (z_lo, z_hi), position=(cx, cy), attached_to=attached_to)


def _line(start: Pose, step: float, count: int) -> list[Pose]:
    return [
        Pose(start.position + np.array([step * k, 0.0, 0.0]), start.orientation)
        for k in range(count)
    ]


def clean_table_world(desc: RobotDescription | None = None) -> World:
    """1.2 m wipe along a table edge; gripper closes on the cloth, opens at the end."""
    desc = desc or hsr_like()
    start = forward_kinematics(desc, neutral_state(desc))
    wps = _line(start, 0.12, 11)
    return World(
        "clean-table",
        (-2.0, -2.0, 4.0, 3.0),
        obstacles=[
            _box("table", 1.4, 0.775, 0.9, 0.375, 0.0, 0.75),
            _box("bin", -0.8, -0.6, 0.1, 0.1, 0.0, 0.5),
        ],
        task=TaskSpec(
            "follow_path", wps, gripper={0: Gripper.CLOSE, 10: Gripper.OPEN}
        ),
    )


def door_arc_world(desc: RobotDescription | None = None) -> World:
    """Quarter-circle pull around a hinge 0.6 m right of the start EE pose."""
    desc = desc or hsr_like()
    start = forward_kinematics(desc, neutral_state(desc))
    hinge = start.position + np.array([0.0, -0.6, 0.0])
    wps = [
        Pose(
            hinge
            + 0.6
            * np.array(
                [
                    math.cos(math.pi / 2 + math.pi / 2 * k / 8),
                    math.sin(math.pi / 2 + math.pi / 2 * k / 8),
                    0.0,
                ]
            ),
            start.orientation,
        )
        for k in range(9)
    ]
    hx, hy = float(hinge[0]), float(hinge[1])
    return World(
        "door",
        (-2.0, -3.0, 4.0, 2.0),
        obstacles=[
            # frame posts sit below the EE plane, outside the handle's sweep
            _box("latch-post", hx, hy + 0.79, 0.04, 0.04, 0.0, 0.78),
            _box("hinge-post", hx, hy - 0.09, 0.04, 0.04, 0.0, 0.78),
        ],
        task=TaskSpec("arc_pull", wps, gripper={0: Gripper.CLOSE, 8: Gripper.OPEN}),
    )


def corridor_world(desc: RobotDescription | None = None) -> World:
    """1.2 m wide, 4 m long passage; waypoints run along the centerline."""
    desc = desc or hsr_like()
    start = forward_kinematics(desc, neutral_state(desc))
    wps = _line(start, 0.35, 9)
    return World(
        "corridor",
        (-1.0, -2.0, 5.0, 2.0),
        obstacles=[
            _box("wall-left", 1.75, 0.75, 2.25, 0.15, 0.0, 1.5),
            _box("wall-right", 1.75, -0.75, 2.25, 0.15, 0.0, 1.5),
        ],
        task=TaskSpec("follow_path", wps),
    )


def wipe_table_world(desc: RobotDescription | None = None) -> World:
    """Wipe task expressed in a displaceable "table" frame, for imitation demos."""
    desc = desc or hsr_like()
    start = forward_kinematics(desc, neutral_state(desc))
    ex, ey, ez = (float(v) for v in start.position)
    frame = Pose(np.array([0.95, ey, 0.0]), UnitQuaternion.identity())
    wps = [
        Pose(np.array([ex - 0.95 + 0.12 * k, 0.0, ez]), start.orientation)
        for k in range(9)
    ]
    return World(
        "wipe-table",
        (-2.0, -2.0, 4.0, 3.0),
        obstacles=[_box("table", 1.25, ey + 0.9, 0.5, 0.35, 0.0, 0.75, attached_to="table")],
        frames=[TaskFrameSpec("table", frame)],
        task=TaskSpec(
            "follow_path", wps, path_frame="table", gripper={0: Gripper.CLOSE, 8: Gripper.OPEN}
        ),
    )


def wipe_demo_worlds(desc: RobotDescription | None = None) -> list[World]:
    base = wipe_table_world(desc)
    return [base.displaced("table", (0.0, j, 0.0)) for j in WIPE_JITTERS]


def reference_policy_descriptor(desc: RobotDescription) -> dict:
    n = AgentConfig().window_cells()
    return {
        "schema_version": POLICY_SCHEMA_VERSION,
        "kind": "reference",
        "observation": {
            "twist": 6,
            "subgoal": 7,
            "occupancy": [n, n],
            "joints": desc.n_driven,
            "precision": 1,
        },
        "command": {"v_base": 3, "v_torso": 1, "ee_scaling": 1},
        "parameters": {},
    }


# -- regeneration --------------------------------------------------------------


def _suite_doc() -> dict:
    common = {"success": True, "max_rms": 0.05, "zero_collisions": True}
    return {
        "schema_version": SUITE_SCHEMA_VERSION,
        "kind": "suite",
        "cases": [
            {
                "name": "clean_table",
                "world": "worlds/clean_table.json",
                "script": "scripts/clean_table.jsonl",
                "require": dict(common),
            },
            {
                "name": "door_arc",
                "world": "worlds/door_arc.json",
                "script": "scripts/door_arc.jsonl",
                "require": dict(common),
            },
            {
                "name": "corridor",
                "world": "worlds/corridor.json",
                "script": "scripts/corridor.jsonl",
                "require": {**common, "min_clearance": 0.1},
            },
        ],
    }


def protocol_messages(desc: RobotDescription | None = None) -> list[dict]:
    """Wire-message corpus for codec round-trip tests, one canonical doc per entry.

    Shared with the browser client: both sides must parse every line and
    re-serialize it byte for byte.
    """
    from . import service
    from .simulator import Simulator, SimulatorConfig

    desc = desc or hsr_like()
    world = clean_table_world(desc)
    tick_s = 0.02
    sim = Simulator(world, desc, config=SimulatorConfig(tick_s=tick_s))
    msgs = [service.world_message(world, desc, tick_s)]
    sim.step(OperatorSignal.inactive())
    msgs.append(service.state_message(sim))
    drive = OperatorSignal(
        v_signal=np.array([0.1, 0.0, 0.0]),
        q_signal=UnitQuaternion.identity(),
        gripper=Gripper.HOLD,
        precision=False,
        active=True,
    )
    for _ in range(3):
        sim.step(drive)
    msgs.append(service.state_message(sim))
    msgs.append(service.signal_message(7, 7 * tick_s, drive))
    twist = OperatorSignal(
        v_signal=np.array([0.03, -0.02, 0.01]),
        q_signal=UnitQuaternion.from_axis_angle([0.0, 0.0, 1.0], 0.05),
        gripper=Gripper.CLOSE,
        precision=True,
        active=True,
    )
    msgs.append(service.signal_message(8, 8 * tick_s, twist))
    msgs.append(service.signal_message(9, 9 * tick_s, OperatorSignal.inactive()))
    msgs.append(service.error_message("cannot parse message as JSON"))
    return msgs


def rebuild(root: Path | None = None, verbose: bool = False) -> list[Path]:
    """Regenerate every bundled artifact under root (default: the package data dir)."""
    root = Path(root) if root is not None else data_root()
    desc = hsr_like()
    written: list[Path] = []

    def emit(rel: str, data: bytes) -> None:
        p = root / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_bytes(data)
        written.append(p)
        if verbose:
            print(f"wrote {p}")

    for preset in (hsr_like, fmm_like):
        d = preset()
        emit(f"robots/{d.name.replace('-', '_')}.json", (canonical_dumps(d.to_json_dict()) + "\n").encode())

    scripted = {
        "clean_table": clean_table_world(desc),
        "door_arc": door_arc_world(desc),
        "corridor": corridor_world(desc),
    }
    for name, world in scripted.items():
        p = root / f"worlds/{name}.json"
        p.parent.mkdir(parents=True, exist_ok=True)
        save_world(world, p)
        written.append(p)
        script, record, report = record_demonstration(world, desc)
        if not report["success"]:
            raise RuntimeError(f"fixture rollout failed for {name}: {report}")
        sp = root / f"scripts/{name}.jsonl"
        sp.parent.mkdir(parents=True, exist_ok=True)
        save_script(sp, script, meta={"world": name, "robot": desc.name})
        written.append(sp)
        rp = root / f"records/{name}.jsonl"
        rp.parent.mkdir(parents=True, exist_ok=True)
        record.save(rp)
        written.append(rp)
        if verbose:
            print(f"{name}: {report}")

    base = wipe_table_world(desc)
    p = root / "worlds/wipe_table.json"
    p.parent.mkdir(parents=True, exist_ok=True)
    save_world(base, p)
    written.append(p)
    for i, world in enumerate(wipe_demo_worlds(desc)):
        _, record, report = record_demonstration(world, desc)
        if not report["success"]:
            raise RuntimeError(f"wipe demo {i} failed: {report}")
        rp = root / f"records/wipe_demo_{i}.jsonl"
        rp.parent.mkdir(parents=True, exist_ok=True)
        record.save(rp)
        written.append(rp)
        if verbose:
            print(f"wipe_demo_{i}: {report}")

    emit(
        "policies/reference_hsr.json",
        (canonical_dumps(reference_policy_descriptor(desc)) + "\n").encode(),
    )
    emit("suite.json", (canonical_dumps(_suite_doc()) + "\n").encode())
    emit(
        "protocol/messages.jsonl",
        "".join(canonical_dumps(m) + "\n" for m in protocol_messages(desc)).encode(),
    )
    return written
