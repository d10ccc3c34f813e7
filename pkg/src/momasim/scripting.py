"""Virtual operator: turns task waypoints into per-tick operator signals.

The operator runs closed loop against a simulator (pure pursuit over the
resolved waypoints), and the emitted signals form an open-loop script.
Because the simulator is deterministic, replaying that script reproduces
the original rollout bit for bit, which is how the bundled demonstration
fixtures are made.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import Pose
from .inference import Gripper, OperatorSignal
from .records import DemonstrationRecord, RecordFormatError, signal_from_doc, signal_to_doc
from .robot import JointState
from .serialization import canonical_dumps
from .simulator import Simulator

SCRIPT_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class OperatorConfig:
    switch_radius: float = 0.04  # m, advance to the next waypoint inside this
    switch_angle: float = 0.38  # rad, orientation gate for advancing
    full_speed_distance: float = 0.35  # m, error at which strength saturates
    min_strength: float = 0.3
    max_step_angle: float = 0.05  # rad of commanded rotation per plan step
    angle_gain: float = 0.4
    settle_ticks: int = 5  # trailing inactive ticks (deadman released)


def steer_signal(
    ee: Pose,
    target: Pose,
    cfg: OperatorConfig,
    *,
    gripper: Gripper = Gripper.HOLD,
    precision: bool = False,
) -> OperatorSignal:
    """Single pursuit step toward ``target``: proportional twist, capped rotation."""
    to_target = target.position - ee.position
    dist = float(np.linalg.norm(to_target))
    strength = min(max(dist / cfg.full_speed_distance, cfg.min_strength), 1.0)
    # |v_signal| encodes strength as a fraction of the 0.1 m plan step
    v = to_target / dist * strength * 0.1 if dist > 1e-12 else np.zeros(3)

    q_err = target.orientation * ee.orientation.inverse()
    angle = q_err.angle()
    if angle > 1e-9:
        step = min(cfg.angle_gain * angle, cfg.max_step_angle)
        q_step = q_err.power(step / angle)
    else:
        q_step = q_err.power(0.0)
    return OperatorSignal(v_signal=v, q_signal=q_step, gripper=gripper, precision=precision, active=True)


class VirtualOperator:
    """Pure-pursuit signal source over a fixed waypoint list."""

    def __init__(
        self,
        waypoints: list[Pose],
        gripper_schedule: dict[int, Gripper] | None = None,
        cfg: OperatorConfig | None = None,
        precision: bool = False,
    ):
        if not waypoints:
            raise ValueError("operator needs at least one waypoint")
        self.waypoints = waypoints
        self.schedule = dict(gripper_schedule or {})
        self.cfg = cfg or OperatorConfig()
        self.precision = precision
        self.index = 0
        self._pending_gripper: Gripper | None = self.schedule.get(0)

    @property
    def done(self) -> bool:
        return self.index >= len(self.waypoints)

    def signal(self, ee: Pose) -> OperatorSignal:
        cfg = self.cfg
        while not self.done:
            wp = self.waypoints[self.index]
            if (
                np.linalg.norm(ee.position - wp.position) <= cfg.switch_radius
                and ee.orientation.angle_to(wp.orientation) <= cfg.switch_angle
            ):
                self.index += 1
                if self.index in self.schedule:
                    self._pending_gripper = self.schedule[self.index]
            else:
                break
        if self.done:
            return OperatorSignal.inactive()

        gripper = self._pending_gripper or Gripper.HOLD
        self._pending_gripper = None
        return steer_signal(
            ee, self.waypoints[self.index], cfg, gripper=gripper, precision=self.precision
        )


def record_demonstration(
    world,
    desc,
    *,
    operator: OperatorConfig | None = None,
    precision: bool = False,
    max_ticks: int | None = None,
    **sim_kwargs,
):
    """One closed-loop operator session: returns (script, record, report).

    The captured record is identical to replaying the returned script with
    run_scripted, because the session is itself a deterministic rollout.
    """
    if world.task is None:
        raise ValueError("world has no task to script")
    cfg = operator or OperatorConfig()
    sim = Simulator(world, desc, **sim_kwargs)
    op = VirtualOperator(world.resolved_waypoints(), world.task.gripper, cfg, precision)
    limit = max_ticks if max_ticks is not None else world.task.timeout_ticks
    header = sim.header()
    script: list[OperatorSignal] = []
    rows: list[dict] = []

    def take(sig: OperatorSignal) -> None:
        _, cmd = sim.step(sig)
        script.append(sig)
        rows.append(sim.row(len(rows), sig, cmd))

    while len(script) < limit and not op.done:
        take(op.signal(sim.state.ee))
    for _ in range(cfg.settle_ticks):
        take(OperatorSignal.inactive())
    return script, DemonstrationRecord(header, rows), sim.report()


def generate_script(
    world,
    desc,
    *,
    operator: OperatorConfig | None = None,
    precision: bool = False,
    max_ticks: int | None = None,
    **sim_kwargs,
) -> list[OperatorSignal]:
    """Drive the virtual operator to task completion; return the signals."""
    script, _, _ = record_demonstration(
        world, desc, operator=operator, precision=precision, max_ticks=max_ticks, **sim_kwargs
    )
    return script


def perturbed_start(base_state: JointState, seed: int, pos_scale: float = 0.01, yaw_scale: float = 0.01) -> JointState:
    """Seeded copy of a start state with a small base-pose offset."""
    rng = np.random.default_rng(seed)
    out = base_state.copy()
    out.base[0] += rng.uniform(-pos_scale, pos_scale)
    out.base[1] += rng.uniform(-pos_scale, pos_scale)
    out.base[2] += rng.uniform(-yaw_scale, yaw_scale)
    return out


def save_script(path, script: list[OperatorSignal], meta: dict | None = None) -> None:
    header = {"schema_version": SCRIPT_SCHEMA_VERSION, "kind": "script", "ticks": len(script)}
    header.update(meta or {})
    lines = [canonical_dumps(header)]
    lines.extend(canonical_dumps(signal_to_doc(sig)) for sig in script)
    Path(path).write_bytes(("\n".join(lines) + "\n").encode("utf-8"))


def load_script(path) -> list[OperatorSignal]:
    p = Path(path)
    lines = [ln for ln in p.read_text(encoding="utf-8").split("\n") if ln.strip()]
    if not lines:
        raise RecordFormatError(f"{p.name}: empty script")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise RecordFormatError(f"{p.name}: header is not valid JSON: {exc.msg}") from exc
    if header.get("schema_version") != SCRIPT_SCHEMA_VERSION or header.get("kind") != "script":
        raise RecordFormatError(f"{p.name}: not a script file")
    signals = []
    for i, line in enumerate(lines[1:]):
        try:
            signals.append(signal_from_doc(json.loads(line)))
        except (json.JSONDecodeError, KeyError, ValueError) as exc:
            raise RecordFormatError(
                f"{p.name}: bad signal at line {i + 2} (last good row {i - 1}): {exc}"
            ) from exc
    return signals
