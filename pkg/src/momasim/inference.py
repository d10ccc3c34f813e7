"""Operator signal inference and end-effector plan extrapolation.

A teleoperation interface (hand guidance or joystick) is reduced every tick
to an OperatorSignal: a translation direction, a per-step rotation, gripper
and precision flags. The signal is then unrolled into a short sequence of
future end-effector poses spaced at the training resolution of the base
agent, which consumes the plan instead of the raw device state.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from momasim.geometry import Pose, Twist, UnitQuaternion, average_quaternions


class Gripper(str, Enum):
    OPEN = "open"
    CLOSE = "close"
    HOLD = "hold"


@dataclass(frozen=True)
class InferenceConfig:
    """Signal and plan parameters.

    res_training is the plan pose spacing the base agent was built around;
    d_g_normal / d_g_precision are the plan horizons (meters of arc), and
    v_trans_max the operator translation speed mapped to full signal
    magnitude. Angular steps are clamped per plan step, not per second.
    """

    res_training: float = 0.1
    d_g_normal: float = 1.5
    d_g_precision: float = 0.3
    v_trans_max: float = 0.125
    angular_step_max: float = 0.1875
    n_exponent: int = 3
    history_seconds: float = 1.0
    history_rate: float = 33.0
    min_plan_steps: int = 5
    curved_plans: bool = True

    def horizon(self, precision: bool) -> float:
        return self.d_g_precision if precision else self.d_g_normal

    def history_capacity(self) -> int:
        return int(math.ceil(self.history_seconds * self.history_rate))


@dataclass
class OperatorSignal:
    """Normalized operator intent for one tick.

    |v_signal| encodes the signal strength as a fraction of res_training
    (joystick input is binary: zero or full). q_signal is the rotation to
    apply per extrapolation step. An inactive signal carries no motion.
    """

    v_signal: np.ndarray = field(default_factory=lambda: np.zeros(3))
    q_signal: UnitQuaternion = field(default_factory=UnitQuaternion.identity)
    gripper: Gripper = Gripper.HOLD
    precision: bool = False
    active: bool = False

    def __post_init__(self):
        self.v_signal = np.asarray(self.v_signal, dtype=float).reshape(3)
        if not np.all(np.isfinite(self.v_signal)):
            raise ValueError("non-finite v_signal")
        if not self.active:
            self.v_signal = np.zeros(3)
            self.q_signal = UnitQuaternion.identity()

    @classmethod
    def inactive(cls) -> "OperatorSignal":
        return cls(active=False)


class SignalHistory:
    """Ring buffer of timestamped end-effector poses from a guidance device.

    Samples with non-increasing timestamps are dropped (late packets);
    pauses must clear the buffer so stale motion cannot leak into Eq-style
    weighted differences.
    """

    def __init__(self, capacity: int):
        if capacity < 2:
            raise ValueError("history needs capacity >= 2")
        self.capacity = capacity
        self._buf: deque[tuple[float, Pose]] = deque(maxlen=capacity)

    def append(self, t: float, pose: Pose) -> bool:
        if self._buf and t <= self._buf[-1][0]:
            return False
        self._buf.append((float(t), pose.copy()))
        return True

    def clear(self) -> None:
        self._buf.clear()

    def __len__(self) -> int:
        return len(self._buf)

    def poses(self) -> list[Pose]:
        """Oldest to newest."""
        return [p for _, p in self._buf]

    def timestamps(self) -> list[float]:
        return [t for t, _ in self._buf]


def weighted_position_delta(history: SignalHistory) -> np.ndarray:
    """Exponentially weighted sum of first differences, newest weighted 1.

    sum_{h=0}^{H-1} (1/2^h) (p_{t-h} - p_{t-h-1}) over the buffered poses.
    """
    poses = history.poses()
    if len(poses) < 2:
        return np.zeros(3)
    pos = np.array([p.position for p in poses])  # oldest .. newest
    diffs = pos[1:] - pos[:-1]  # diffs[-1] is the newest
    h = np.arange(len(diffs))[::-1]  # newest gets h = 0
    return np.asarray((diffs * (0.5**h)[:, None]).sum(axis=0))


def weighted_orientation_delta(history: SignalHistory) -> UnitQuaternion:
    """Weighted average of per-sample orientation deltas q_t * q_{t-1}^-1."""
    poses = history.poses()
    if len(poses) < 2:
        return UnitQuaternion.identity()
    deltas = [
        poses[i + 1].orientation * poses[i].orientation.inverse()
        for i in range(len(poses) - 1)
    ]
    weights = [0.5 ** (len(deltas) - 1 - i) for i in range(len(deltas))]
    return average_quaternions(deltas, weights)


def infer_hand_guidance(
    history: SignalHistory,
    cfg: InferenceConfig,
    gripper: Gripper = Gripper.HOLD,
    precision: bool = False,
) -> OperatorSignal:
    """Reduce a guided-pose history to an OperatorSignal.

    The translation aggregate is compared against the displacement an
    operator moving at v_trans_max produces in one history sample interval;
    the resulting fraction in [0, 1] becomes the signal strength. The
    orientation delta average is sharpened by raising it to n_exponent.
    """
    if len(history) < 2:
        return OperatorSignal.inactive()
    v_sum = weighted_position_delta(history)
    full = cfg.v_trans_max / cfg.history_rate
    mag = float(np.linalg.norm(v_sum))
    s = min(mag / full, 1.0) if full > 0 else 0.0
    v_signal = (v_sum / mag) * s * cfg.res_training if mag > 0 else np.zeros(3)
    q_signal = weighted_orientation_delta(history).power(cfg.n_exponent)
    return OperatorSignal(
        v_signal=v_signal,
        q_signal=q_signal,
        gripper=gripper,
        precision=precision,
        active=True,
    )


@dataclass(frozen=True)
class JoystickMapping:
    """Which input channel feeds which signal axis, with signs.

    translation / rotation are triples of (axis index, sign). Defaults wire
    axes 0..2 to camera-frame translation and 3..5 to rotation.
    """

    translation: tuple = ((0, 1.0), (1, 1.0), (2, 1.0))
    rotation: tuple = ((3, 1.0), (4, 1.0), (5, 1.0))

    def __post_init__(self):
        used = [i for i, _ in self.translation] + [i for i, _ in self.rotation]
        if len(set(used)) != 6:
            raise ValueError("joystick mapping must bind six distinct channels")


def infer_joystick(
    axes,
    buttons: dict,
    camera_frame: Pose,
    cfg: InferenceConfig,
    mapping: JoystickMapping = JoystickMapping(),
) -> OperatorSignal:
    """Map joystick deflections (clamped to [-1, 1]) into an OperatorSignal.

    Translation and rotation are commanded in the wrist-camera frame and
    rotated into the world. Any nonzero translation maps to full signal
    strength; the per-step rotation angle scales with deflection up to
    cfg.angular_step_max.
    """
    a = np.clip(np.asarray(axes, dtype=float).reshape(6), -1.0, 1.0)
    trans = np.array([sign * a[i] for i, sign in mapping.translation])
    rot = np.array([sign * a[i] for i, sign in mapping.rotation])

    gripper = Gripper.HOLD
    if buttons.get("gripper_open") and not buttons.get("gripper_close"):
        gripper = Gripper.OPEN
    elif buttons.get("gripper_close") and not buttons.get("gripper_open"):
        gripper = Gripper.CLOSE
    precision = bool(buttons.get("precision", False))

    engaged = bool(np.any(a != 0.0)) or any(bool(v) for v in buttons.values())
    if not engaged:
        return OperatorSignal.inactive()

    t_mag = float(np.linalg.norm(trans))
    if t_mag > 0.0:
        v_world = camera_frame.orientation.rotate(trans / t_mag)
        v_signal = v_world * cfg.res_training
    else:
        v_signal = np.zeros(3)

    r_mag = float(np.linalg.norm(rot))
    if r_mag > 0.0:
        angle = min(r_mag, 1.0) * cfg.angular_step_max
        axis_world = camera_frame.orientation.rotate(rot / r_mag)
        q_signal = UnitQuaternion.from_axis_angle(axis_world, angle)
    else:
        q_signal = UnitQuaternion.identity()

    return OperatorSignal(
        v_signal=v_signal,
        q_signal=q_signal,
        gripper=gripper,
        precision=precision,
        active=True,
    )


@dataclass
class MotionPlan:
    """Short-horizon end-effector pose sequence, first pose nearest in time.

    resolution is the position spacing actually used between consecutive
    poses; horizon the arc-length budget the plan was built against.
    """

    poses: list[Pose] = field(default_factory=list)
    resolution: float = 0.0
    horizon: float = 0.0

    def __len__(self) -> int:
        return len(self.poses)

    @property
    def empty(self) -> bool:
        return not self.poses


def extrapolate_plan(current: Pose, signal: OperatorSignal, cfg: InferenceConfig) -> MotionPlan:
    """Unroll an OperatorSignal into future end-effector poses.

    Step count T = clamp(round(s * d_g / res), min_steps, d_g / res), with
    s = |v_signal| / res the signal strength. Each step advances by a step
    vector of magnitude min(res, d_g / T) (so precision-mode plans never
    exceed their arc budget) and rotates the orientation by q_signal; with
    curved_plans the step vector itself is rotated too, tracing a constant-
    curvature arc. An inactive signal yields an empty plan.
    """
    if not signal.active:
        return MotionPlan([], 0.0, cfg.horizon(False))
    d_g = cfg.horizon(signal.precision)
    full_steps = int(round(d_g / cfg.res_training))
    mag = float(np.linalg.norm(signal.v_signal))
    s = min(mag / cfg.res_training, 1.0)
    steps = max(cfg.min_plan_steps, min(full_steps, int(round(s * full_steps))))

    step_len = min(cfg.res_training, d_g / steps) if mag > 0 else 0.0
    v = signal.v_signal / mag * step_len if mag > 0 else np.zeros(3)

    poses: list[Pose] = []
    pos = current.position.copy()
    q = current.orientation
    for _ in range(steps):
        pos = pos + v
        q = signal.q_signal * q
        poses.append(Pose(pos.copy(), q))
        if cfg.curved_plans:
            v = signal.q_signal.rotate(v)
    return MotionPlan(poses, step_len, d_g)


def plan_to_agent_input(
    plan: MotionPlan,
    ee_pose: Pose,
    base_frame: Pose,
    tick: float,
    cfg: InferenceConfig,
) -> tuple[Twist, Pose]:
    """Desired EE twist (world frame, at unit velocity scaling) and subgoal.

    The twist drives toward the first plan pose over one tick, with the
    linear displacement capped at res_training and the angular displacement
    at angular_step_max. The subgoal is the last plan pose expressed in the
    base frame. An empty plan yields a zero twist and the current pose as
    subgoal.
    """
    if tick <= 0:
        raise ValueError("tick must be positive")
    if plan.empty:
        sub = base_frame.inverse().compose(ee_pose)
        return Twist.zero(), sub

    first, last = plan.poses[0], plan.poses[-1]
    dp = first.position - ee_pose.position
    dist = float(np.linalg.norm(dp))
    lin = dp / dist * min(dist, cfg.res_training) / tick if dist > 0 else np.zeros(3)

    dq = first.orientation * ee_pose.orientation.inverse()
    axis, ang = dq.axis_angle()
    ang = min(ang, cfg.angular_step_max)
    angular = axis * ang / tick if ang > 0 else np.zeros(3)

    subgoal = base_frame.inverse().compose(last)
    return Twist(lin, angular), subgoal
