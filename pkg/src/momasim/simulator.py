"""Fixed-rate kinematic world loop.

Each tick consumes one operator signal: infer a plan, ask the base policy
for a command, solve differential IK for the driven joints, integrate, then
gate the result through the end-effector speed contract and the collision
check. Everything is pure float arithmetic with no hidden randomness, so a
rollout is a deterministic function of (world, robot, script, configs).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .agent import (
    AgentConfig,
    BaseCommand,
    ReferencePolicy,
    build_observation,
    load_external_policy,
    pause,
)
from .geometry import Pose, Twist
from .inference import Gripper, InferenceConfig, MotionPlan, OperatorSignal, extrapolate_plan, plan_to_agent_input
from .records import (
    RECORD_SCHEMA_VERSION,
    DemonstrationRecord,
    command_to_doc,
    joint_state_from_doc,
    joint_state_to_doc,
    pose_from_doc,
    pose_to_doc,
    signal_from_doc,
    signal_to_doc,
)
from .robot import (
    JointState,
    RobotDescription,
    clamp_state,
    diff_ik,
    forward_kinematics,
    link_points,
    neutral_state,
)
from .world import World, polygon_distance_2d, segment_prism_distance, world_from_doc, world_to_doc


@dataclass(frozen=True)
class SimulatorConfig:
    tick_s: float = 0.02
    capsule_radius: float = 0.05
    # slack on the per-tick EE displacement cap, absorbs integration rounding
    ee_step_slack: float = 1e-9
    backoff_iterations: int = 12


@dataclass
class TaskMetrics:
    rms_error: float = 0.0
    progress: float = 0.0


@dataclass
class SimState:
    tick: int
    joints: JointState
    ee: Pose  # cached forward kinematics of joints
    gripper: Gripper
    plan: MotionPlan
    collided: bool
    metrics: TaskMetrics = field(default_factory=TaskMetrics)


def world_clearance(
    world: World,
    desc: RobotDescription,
    state: JointState,
    tick: int = 0,
    capsule_radius: float = 0.05,
) -> float:
    """Minimum distance between the robot and all obstacles; +inf when clear.

    Base: disc of desc.base_radius against obstacles overlapping its height.
    Arm: consecutive link points as capsules against the extruded prisms.
    Negative values mean penetration depth of the base disc (the capsule
    terms are clamped at zero by the underlying distance).
    """
    if not world.obstacles:
        return math.inf
    base_xy = state.base[:2]
    pts = None
    reach = _arm_reach(desc)
    best = math.inf
    for obs in world.obstacles:
        poly = obs.polygon_at(tick)
        z_lo, z_hi = obs.z_range
        d2d = polygon_distance_2d(poly, base_xy)
        if z_lo < desc.base_height and z_hi > 0.0:
            best = min(best, d2d - desc.base_radius)
        # the whole arm lives within `reach` of the base center
        if d2d - reach - capsule_radius >= best:
            continue
        if pts is None:
            pts = link_points(desc, state)
        for a, b in zip(pts[:-1], pts[1:]):
            best = min(best, segment_prism_distance(a, b, poly, z_lo, z_hi) - capsule_radius)
    return best


def _arm_reach(desc: RobotDescription) -> float:
    cached = desc.__dict__.get("_arm_reach")
    if cached is None:
        spans = [np.linalg.norm(spec.origin) for spec in desc.driven_joints]
        spans.append(np.linalg.norm(desc.ee_offset))
        # prismatic travel extends the chain beyond the sum of link offsets
        travel = sum(
            spec.limits[1] - spec.limits[0]
            for spec in desc.driven_joints
            if spec.kind == "prismatic"
        )
        cached = float(sum(spans) + travel)
        object.__setattr__(desc, "_arm_reach", cached)
    return cached


class WaypointTracker:
    """Waypoint consumption plus polyline RMS for one rollout.

    Both gates (position and orientation) must hold to consume a waypoint,
    and consumption can cascade through several waypoints in one tick.
    """

    def __init__(self, waypoints: list[Pose], tolerance_pos: float, tolerance_rot: float):
        self.waypoints = waypoints
        self.tolerance_pos = tolerance_pos
        self.tolerance_rot = tolerance_rot
        self.index = 0
        self.completion_tick: int | None = None
        self._sq_err = 0.0
        self._ticks = 0
        pts = [wp.position for wp in waypoints]
        self._pts = pts
        self._segments = [
            (a, b - a, float((b - a) @ (b - a))) for a, b in zip(pts[:-1], pts[1:])
        ]

    @classmethod
    def for_world(cls, world: World) -> "WaypointTracker":
        task = world.task
        return cls(
            world.resolved_waypoints(),
            task.tolerance_pos if task else 0.0,
            task.tolerance_rot if task else 0.0,
        )

    @property
    def complete(self) -> bool:
        return bool(self.waypoints) and self.index == len(self.waypoints)

    def update(self, ee: Pose, tick: int) -> None:
        if not self.waypoints:
            return
        p = ee.position
        if len(self._pts) == 1:
            d = float(np.linalg.norm(p - self._pts[0]))
        else:
            d = math.inf
            for a, seg, den in self._segments:
                t = 0.0 if den == 0.0 else min(max(float((p - a) @ seg) / den, 0.0), 1.0)
                dist = float(np.linalg.norm(p - (a + t * seg)))
                if dist < d:
                    d = dist
        self._sq_err += d * d
        self._ticks += 1
        while self.index < len(self.waypoints):
            wp = self.waypoints[self.index]
            if (
                np.linalg.norm(ee.position - wp.position) <= self.tolerance_pos
                and ee.orientation.angle_to(wp.orientation) <= self.tolerance_rot
            ):
                self.index += 1
            else:
                break
        if self.complete and self.completion_tick is None:
            self.completion_tick = tick

    def rms_error(self) -> float:
        return math.sqrt(self._sq_err / self._ticks) if self._ticks else 0.0

    def progress(self) -> float:
        if not self.waypoints:
            return 0.0
        return self.index / len(self.waypoints)


class Simulator:
    """Owns one rollout's state; see step() for the per-tick pipeline."""

    def __init__(
        self,
        world: World,
        desc: RobotDescription,
        policy=None,
        *,
        inference: InferenceConfig | None = None,
        agent: AgentConfig | None = None,
        config: SimulatorConfig | None = None,
        start: JointState | None = None,
        start_gripper: Gripper = Gripper.OPEN,
        policy_doc: dict | None = None,
    ):
        self.world = world
        self.desc = desc
        self.inference = inference or InferenceConfig()
        self.agent = agent or AgentConfig()
        self.config = config or SimulatorConfig()
        self.policy = policy or ReferencePolicy(desc, self.agent)
        self.policy_doc = policy_doc or {"kind": "reference"}
        joints = clamp_state(desc, start.copy() if start is not None else neutral_state(desc))
        self.start = joints.copy()
        self.start_gripper = start_gripper
        self.state = SimState(
            tick=0,
            joints=joints,
            ee=forward_kinematics(desc, joints),
            gripper=start_gripper,
            plan=MotionPlan(),
            collided=False,
        )
        self._dynamic = any(o.schedule for o in world.obstacles)
        self._clearance = world_clearance(
            world, desc, joints, 0, self.config.capsule_radius
        )
        self._min_clearance = self._clearance
        self._tracker = WaypointTracker.for_world(world)
        self._collision_ticks = 0
        self._last_cmd: BaseCommand | None = None

    # -- per-tick pipeline ------------------------------------------------

    def step(self, signal: OperatorSignal) -> tuple[SimState, BaseCommand]:
        st = self.state
        cfg = self.config
        next_tick = st.tick + 1

        if not signal.active:
            cmd = pause(self._last_cmd)
            self._last_cmd = cmd
            st.tick = next_tick
            st.plan = MotionPlan()
            self._refresh_clearance(st, next_tick)
            self._update_metrics(st)
            return st, cmd

        plan = extrapolate_plan(st.ee, signal, self.inference)
        plan_input = plan_to_agent_input(
            plan, st.ee, st.joints.base_pose(), cfg.tick_s, self.inference
        )
        obs = build_observation(
            self.world, self.desc, st.joints, plan, signal.precision,
            cfg.tick_s, self.agent, self.inference, st.tick, plan_input,
        )
        cmd = self.policy.step(obs)
        self._last_cmd = cmd

        twist = plan_input[0]
        scaled = Twist(twist.linear * cmd.ee_scaling, twist.angular * cmd.ee_scaling)
        bias = np.zeros(self.desc.n_driven)
        bias[0] = float(np.clip(cmd.v_torso, -self.desc.torso.vel_limit, self.desc.torso.vel_limit))
        qdot = diff_ik(self.desc, st.joints, scaled, joint_bias=bias)
        v_base = self._clipped_base_velocity(cmd)

        cap = cmd.ee_scaling * self.inference.res_training + cfg.ee_step_slack
        cand, ee_new = self._integrate(st, v_base, qdot, 1.0)
        disp = float(np.linalg.norm(ee_new.position - st.ee.position))
        alpha = 1.0
        for _ in range(cfg.backoff_iterations):
            if disp <= cap:
                break
            # undershoot so rounding cannot leave disp a few ulp above cap
            alpha *= cap / disp * (1.0 - 1e-9)
            cand, ee_new = self._integrate(st, v_base, qdot, alpha)
            disp = float(np.linalg.norm(ee_new.position - st.ee.position))
        if disp > cap:  # pathological; the contract wins over motion
            cand, ee_new = st.joints, st.ee

        cur_clear = self._clearance
        if self._dynamic:
            cur_clear = world_clearance(
                self.world, self.desc, st.joints, next_tick, cfg.capsule_radius
            )
        cand_clear = world_clearance(
            self.world, self.desc, cand, next_tick, cfg.capsule_radius
        )

        if not st.collided:
            if cand_clear > 0.0:
                st.joints, st.ee, self._clearance = cand, ee_new, cand_clear
            else:
                st.collided = True  # freeze at the boundary, keep old state
                self._clearance = cur_clear
        else:
            if cand_clear > cur_clear:
                st.joints, st.ee, self._clearance = cand, ee_new, cand_clear
                if cand_clear > 0.0:
                    st.collided = False
            else:
                self._clearance = cur_clear

        if signal.gripper is not Gripper.HOLD:
            st.gripper = signal.gripper
        st.tick = next_tick
        st.plan = plan
        self._update_metrics(st)
        return st, cmd

    def _clipped_base_velocity(self, cmd: BaseCommand) -> np.ndarray:
        v = np.array(cmd.v_base, dtype=float)
        speed = float(np.linalg.norm(v[:2]))
        if speed > self.desc.base_v_max:
            v[:2] *= self.desc.base_v_max / speed
        v[2] = float(np.clip(v[2], -self.desc.base_omega_max, self.desc.base_omega_max))
        return v

    def _integrate(
        self, st: SimState, v_base: np.ndarray, qdot: np.ndarray, alpha: float
    ) -> tuple[JointState, Pose]:
        dt = self.config.tick_s * alpha
        theta = st.joints.base[2]
        c, s = math.cos(theta), math.sin(theta)
        base = np.array(
            [
                st.joints.base[0] + (c * v_base[0] - s * v_base[1]) * dt,
                st.joints.base[1] + (s * v_base[0] + c * v_base[1]) * dt,
                theta + v_base[2] * dt,
            ]
        )
        driven = st.joints.driven() + qdot * dt
        cand = clamp_state(
            self.desc, JointState(base=base, torso=driven[0], arm=driven[1:])
        )
        return cand, forward_kinematics(self.desc, cand)

    def _refresh_clearance(self, st: SimState, tick: int) -> None:
        if self._dynamic:
            self._clearance = world_clearance(
                self.world, self.desc, st.joints, tick, self.config.capsule_radius
            )
            if self._clearance <= 0.0:
                st.collided = True

    def _update_metrics(self, st: SimState) -> None:
        self._min_clearance = min(self._min_clearance, self._clearance)
        self._collision_ticks += int(st.collided)
        self._tracker.update(st.ee, st.tick)
        st.metrics = TaskMetrics(rms_error=self.rms_error(), progress=self.progress())

    # -- reporting ---------------------------------------------------------

    def rms_error(self) -> float:
        return self._tracker.rms_error()

    def progress(self) -> float:
        return self._tracker.progress()

    def min_clearance(self) -> float:
        return self._min_clearance

    @property
    def clearance(self) -> float:
        return self._clearance

    @property
    def last_command(self) -> BaseCommand | None:
        return self._last_cmd

    def report(self) -> dict:
        task = self.world.task
        tracker = self._tracker
        timed_out = (
            task is not None
            and tracker.completion_tick is not None
            and tracker.completion_tick > task.timeout_ticks
        )
        success = tracker.complete and self._collision_ticks == 0 and not timed_out
        return {
            "success": bool(success),
            "completion_ticks": tracker.completion_tick,
            "rms_error": self.rms_error(),
            "progress": self.progress(),
            "min_clearance": self._min_clearance,
            "collision_ticks": self._collision_ticks,
        }

    # -- recording ---------------------------------------------------------

    def header(self) -> dict:
        return {
            "schema_version": RECORD_SCHEMA_VERSION,
            "kind": "demonstration",
            "tick_s": self.config.tick_s,
            "robot": self.desc.to_json_dict(),
            "world": world_to_doc(self.world),
            "inference": asdict(self.inference),
            "agent": asdict(self.agent),
            "simulator": asdict(self.config),
            "policy": self.policy_doc,
            "start": {**joint_state_to_doc(self.start), "gripper": self.start_gripper.value},
        }

    def row(self, index: int, signal: OperatorSignal, cmd: BaseCommand) -> dict:
        st = self.state
        return {
            "tick": index,
            "t": index * self.config.tick_s,
            "base": [float(v) for v in st.joints.base],
            "torso": float(st.joints.torso),
            "arm": [float(v) for v in st.joints.arm],
            "ee": pose_to_doc(st.ee),
            "gripper": st.gripper.value,
            "signal": signal_to_doc(signal),
            "command": command_to_doc(cmd),
            "collided": bool(st.collided),
        }


def run_scripted(
    world: World,
    desc: RobotDescription,
    script: list[OperatorSignal],
    policy=None,
    **kwargs,
) -> tuple[DemonstrationRecord, dict]:
    """Deterministic rollout of a per-tick signal script; returns (record, report)."""
    if not script:
        raise ValueError("script must contain at least one signal")
    sim = Simulator(world, desc, policy, **kwargs)
    header = sim.header()
    rows = []
    for i, signal in enumerate(script):
        _, cmd = sim.step(signal)
        rows.append(sim.row(i, signal, cmd))
    return DemonstrationRecord(header, rows), sim.report()


@dataclass
class ReplayReport:
    rows: int
    max_position_error: float
    max_angle_error: float
    first_divergence: int | None  # first row outside tolerance, if any

    def within(self, tol: float) -> bool:
        return self.max_position_error <= tol and self.max_angle_error <= tol


def simulator_from_header(header: dict, policy=None) -> Simulator:
    desc = RobotDescription.from_json_dict(header["robot"])
    world = world_from_doc(header["world"])
    if policy is None:
        doc = header.get("policy", {"kind": "reference"})
        if doc.get("kind") == "external":
            policy = load_external_policy(Path(doc["descriptor"]), desc, AgentConfig(**header["agent"]))
        elif doc.get("kind") != "reference":
            raise ValueError(f"cannot rebuild policy of kind {doc.get('kind')!r}")
    return Simulator(
        world,
        desc,
        policy,
        inference=InferenceConfig(**header["inference"]),
        agent=AgentConfig(**header["agent"]),
        config=SimulatorConfig(**header["simulator"]),
        start=joint_state_from_doc(header["start"]),
        start_gripper=Gripper(header["start"].get("gripper", "open")),
        policy_doc=header.get("policy"),
    )


def replay(record: DemonstrationRecord | str | Path, tolerance: float = 1e-6) -> ReplayReport:
    """Re-run a record from its logged signals and compare EE poses per row."""
    if not isinstance(record, DemonstrationRecord):
        record = DemonstrationRecord.load(record)
    sim = simulator_from_header(record.header)
    max_pos = 0.0
    max_ang = 0.0
    first_bad: int | None = None
    for row in record.rows:
        state, _ = sim.step(signal_from_doc(row["signal"]))
        logged = pose_from_doc(row["ee"])
        dp = float(np.linalg.norm(state.ee.position - logged.position))
        da = state.ee.orientation.angle_to(logged.orientation)
        max_pos = max(max_pos, dp)
        max_ang = max(max_ang, da)
        if first_bad is None and (dp > tolerance or da > tolerance):
            first_bad = row["tick"]
    return ReplayReport(len(record.rows), max_pos, max_ang, first_bad)
