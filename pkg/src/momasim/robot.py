"""Kinematic robot model: chain description, FK, Jacobian, damped-least-squares IK.

A robot is an omnidirectional base (x, y, yaw; handled by the base agent,
never part of the Jacobian), one prismatic torso joint, and a serial arm.
Two presets approximate common holonomic mobile manipulators: a small
5-driven-joint platform ("hsr-like", 8 DoF total with the base) and a
larger 8-driven-joint one ("fmm-like", 11 DoF total).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from momasim.geometry import Pose, Twist, UnitQuaternion

ROBOT_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class JointSpec:
    name: str
    kind: str  # "revolute" | "prismatic"
    axis: tuple[float, float, float]
    origin: tuple[float, float, float]  # fixed translation before the joint moves
    limits: tuple[float, float]
    vel_limit: float

    def __post_init__(self):
        if self.kind not in ("revolute", "prismatic"):
            raise ValueError(f"unknown joint kind {self.kind!r}")
        if self.limits[0] >= self.limits[1]:
            raise ValueError(f"joint {self.name}: empty limit range")
        if self.vel_limit <= 0:
            raise ValueError(f"joint {self.name}: velocity limit must be positive")
        n = math.sqrt(sum(a * a for a in self.axis))
        if abs(n - 1.0) > 1e-9:
            raise ValueError(f"joint {self.name}: axis must be a unit vector")

    @property
    def mid(self) -> float:
        return 0.5 * (self.limits[0] + self.limits[1])

    @property
    def half_range(self) -> float:
        return 0.5 * (self.limits[1] - self.limits[0])


@dataclass(frozen=True)
class RobotDescription:
    name: str
    base_radius: float
    base_height: float
    base_v_max: float
    base_omega_max: float
    torso: JointSpec
    arm: tuple[JointSpec, ...]
    ee_offset: tuple[float, float, float]

    @property
    def driven_joints(self) -> tuple[JointSpec, ...]:
        """Torso first, then arm joints; the order of Jacobian columns."""
        return (self.torso, *self.arm)

    @property
    def n_driven(self) -> int:
        return 1 + len(self.arm)

    def to_json_dict(self) -> dict:
        def joint(j: JointSpec) -> dict:
            return {
                "name": j.name,
                "kind": j.kind,
                "axis": list(j.axis),
                "origin": list(j.origin),
                "limits": list(j.limits),
                "vel_limit": j.vel_limit,
            }

        return {
            "schema_version": ROBOT_SCHEMA_VERSION,
            "name": self.name,
            "base": {
                "radius": self.base_radius,
                "height": self.base_height,
                "v_max": self.base_v_max,
                "omega_max": self.base_omega_max,
            },
            "torso": joint(self.torso),
            "arm": [joint(j) for j in self.arm],
            "ee_offset": list(self.ee_offset),
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "RobotDescription":
        if doc.get("schema_version") != ROBOT_SCHEMA_VERSION:
            raise ValueError(
                f"unsupported robot schema_version {doc.get('schema_version')!r}"
            )

        def joint(d: dict) -> JointSpec:
            return JointSpec(
                name=d["name"],
                kind=d["kind"],
                axis=tuple(d["axis"]),
                origin=tuple(d["origin"]),
                limits=tuple(d["limits"]),
                vel_limit=d["vel_limit"],
            )

        base = doc["base"]
        return cls(
            name=doc["name"],
            base_radius=base["radius"],
            base_height=base["height"],
            base_v_max=base["v_max"],
            base_omega_max=base["omega_max"],
            torso=joint(doc["torso"]),
            arm=tuple(joint(j) for j in doc["arm"]),
            ee_offset=tuple(doc["ee_offset"]),
        )


def load_robot(path) -> RobotDescription:
    with open(path, encoding="utf-8") as f:
        return RobotDescription.from_json_dict(json.load(f))


@dataclass
class JointState:
    """Base (x, y, yaw) plus driven joint positions; arm length must match the model."""

    base: np.ndarray = field(default_factory=lambda: np.zeros(3))
    torso: float = 0.0
    arm: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        self.base = np.asarray(self.base, dtype=float).reshape(3)
        self.arm = np.asarray(self.arm, dtype=float).reshape(-1)
        self.torso = float(self.torso)
        if not (np.all(np.isfinite(self.base)) and np.all(np.isfinite(self.arm))):
            raise ValueError("non-finite joint state")

    def base_pose(self) -> Pose:
        return Pose(
            np.array([self.base[0], self.base[1], 0.0]),
            UnitQuaternion.from_yaw(self.base[2]),
        )

    def driven(self) -> np.ndarray:
        return np.concatenate([[self.torso], self.arm])

    def copy(self) -> "JointState":
        return JointState(self.base.copy(), self.torso, self.arm.copy())


def _spec_arrays(desc: RobotDescription) -> tuple:
    """Driven-joint limit arrays (lo, hi, vel, mid, half_range), cached on the
    description. Read-only by contract."""
    cached = desc.__dict__.get("_spec_arrays")
    if cached is None:
        specs = desc.driven_joints
        cached = (
            np.array([spec.limits[0] for spec in specs]),
            np.array([spec.limits[1] for spec in specs]),
            np.array([spec.vel_limit for spec in specs]),
            np.array([spec.mid for spec in specs]),
            np.array([spec.half_range for spec in specs]),
        )
        object.__setattr__(desc, "_spec_arrays", cached)
    return cached


def clamp_state(desc: RobotDescription, state: JointState) -> JointState:
    lo, hi = _spec_arrays(desc)[:2]
    torso = float(np.clip(state.torso, *desc.torso.limits))
    arm = np.clip(state.arm, lo[1:], hi[1:])
    return JointState(state.base.copy(), torso, arm)


def neutral_state(desc: RobotDescription) -> JointState:
    """A well-conditioned elbow-bent configuration, away from workspace boundaries."""
    if desc.name == "hsr-like":
        return JointState(np.zeros(3), 0.15, np.array([-0.45, 0.35, 0.85, 0.0]))
    if desc.name == "fmm-like":
        return JointState(
            np.zeros(3), 0.20, np.array([0.0, 0.35, 0.25, -0.85, 0.2, 0.55, 0.0])
        )
    arm = np.array([j.mid + 0.25 * j.half_range for j in desc.arm])
    return clamp_state(desc, JointState(np.zeros(3), desc.torso.mid, arm))


# one-slot memo: a simulator tick recomputes the same chain several times
# (observation, IK, integration, collision), so key on the state values
_chain_memo: dict = {"key": None, "frames": None}


def _chain_specs(desc: RobotDescription) -> tuple:
    """Per-joint scalars for the chain loop (kind, axis, axis norm, origin, spec)."""
    cached = desc.__dict__.get("_chain_specs")
    if cached is None:
        rows = []
        for j in desc.driven_joints:
            a = np.asarray(j.axis, dtype=float)
            rows.append((
                j.kind == "revolute",
                float(a[0]), float(a[1]), float(a[2]),
                float(np.linalg.norm(a)),
                float(j.origin[0]), float(j.origin[1]), float(j.origin[2]),
                j,
            ))
        cached = tuple(rows)
        object.__setattr__(desc, "_chain_specs", cached)
    return cached


def _chain_frames(desc: RobotDescription, state: JointState) -> list[tuple[Pose, JointSpec]]:
    """World pose of each driven joint's anchor frame (before its own motion), in order.

    Scalar unroll of the equivalent chain of Pose.compose calls; every
    expression, including the renormalization after each quaternion product
    and the multiplies by identity components, mirrors the composed form so
    the frames match it bit for bit.
    """
    key = (id(desc), state.base.tobytes(), state.torso, state.arm.tobytes())
    if _chain_memo["key"] == key:
        return _chain_memo["frames"]
    frames = []
    px, py, pz = state.base[0], state.base[1], 0.0
    h = 0.5 * state.base[2]
    w, x, y, z = math.cos(h), 0.0, 0.0, math.sin(h)
    n = math.sqrt(w * w + x * x + y * y + z * z)
    qw, qx, qy, qz = w / n, x / n, y / n, z / n
    for (revolute, ax, ay, az, an, ox, oy, oz, j), v in zip(
        _chain_specs(desc), state.driven()
    ):
        # fixed translation to the joint anchor, in the current frame
        tx = 2.0 * (qy * oz - qz * oy)
        ty = 2.0 * (qz * ox - qx * oz)
        tz = 2.0 * (qx * oy - qy * ox)
        px = px + (ox + qw * tx + qy * tz - qz * ty)
        py = py + (oy + qw * ty + qz * tx - qx * tz)
        pz = pz + (oz + qw * tz + qx * ty - qy * tx)
        w = qw * 1.0 - qx * 0.0 - qy * 0.0 - qz * 0.0
        x = qw * 0.0 + qx * 1.0 + qy * 0.0 - qz * 0.0
        y = qw * 0.0 - qx * 0.0 + qy * 1.0 + qz * 0.0
        z = qw * 0.0 + qx * 0.0 - qy * 0.0 + qz * 1.0
        n = math.sqrt(w * w + x * x + y * y + z * z)
        frames.append((Pose(np.array([px, py, pz]), UnitQuaternion(w, x, y, z)), j))
        qw, qx, qy, qz = w / n, x / n, y / n, z / n
        if revolute:
            hv = 0.5 * float(v)
            s = math.sin(hv) / an
            rw, rx, ry, rz = math.cos(hv), ax * s, ay * s, az * s
            m = math.sqrt(rw * rw + rx * rx + ry * ry + rz * rz)
            rw, rx, ry, rz = rw / m, rx / m, ry / m, rz / m
            # the motion has zero translation, but rotating the zero vector
            # still sets the signs of zero; keep the full expression
            tx = 2.0 * (qy * 0.0 - qz * 0.0)
            ty = 2.0 * (qz * 0.0 - qx * 0.0)
            tz = 2.0 * (qx * 0.0 - qy * 0.0)
            px = px + (0.0 + qw * tx + qy * tz - qz * ty)
            py = py + (0.0 + qw * ty + qz * tx - qx * tz)
            pz = pz + (0.0 + qw * tz + qx * ty - qy * tx)
            w = qw * rw - qx * rx - qy * ry - qz * rz
            x = qw * rx + qx * rw + qy * rz - qz * ry
            y = qw * ry - qx * rz + qy * rw + qz * rx
            z = qw * rz + qx * ry - qy * rx + qz * rw
        else:
            vx, vy, vz = ax * v, ay * v, az * v
            tx = 2.0 * (qy * vz - qz * vy)
            ty = 2.0 * (qz * vx - qx * vz)
            tz = 2.0 * (qx * vy - qy * vx)
            px = px + (vx + qw * tx + qy * tz - qz * ty)
            py = py + (vy + qw * ty + qz * tx - qx * tz)
            pz = pz + (vz + qw * tz + qx * ty - qy * tx)
            w = qw * 1.0 - qx * 0.0 - qy * 0.0 - qz * 0.0
            x = qw * 0.0 + qx * 1.0 + qy * 0.0 - qz * 0.0
            y = qw * 0.0 - qx * 0.0 + qy * 1.0 + qz * 0.0
            z = qw * 0.0 + qx * 0.0 - qy * 0.0 + qz * 1.0
        n = math.sqrt(w * w + x * x + y * y + z * z)
        qw, qx, qy, qz = w / n, x / n, y / n, z / n
    frames.append((Pose(np.array([px, py, pz]), UnitQuaternion(w, x, y, z)), None))
    _chain_memo["key"] = key
    _chain_memo["frames"] = frames
    return frames


def forward_kinematics(desc: RobotDescription, state: JointState) -> Pose:
    if len(state.arm) != len(desc.arm):
        raise ValueError(
            f"arm state has {len(state.arm)} joints, model has {len(desc.arm)}"
        )
    last = _chain_frames(desc, state)[-1][0]
    return last.compose(Pose(np.asarray(desc.ee_offset, dtype=float), UnitQuaternion.identity()))


def link_points(desc: RobotDescription, state: JointState) -> np.ndarray:
    """World positions along the kinematic chain (joint anchors plus the EE).

    Consecutive pairs bound the collision capsules of the arm.
    """
    frames = _chain_frames(desc, state)
    pts = [f.position for f, _ in frames]
    ee = frames[-1][0].compose(
        Pose(np.asarray(desc.ee_offset, dtype=float), UnitQuaternion.identity())
    )
    pts.append(ee.position)
    return np.array(pts)


# a tick asks for the same Jacobian from the observation, the IK solve and
# the tracking probe; memoized like the chain, and read-only for the same reason
_jac_memo: dict = {"key": None, "jac": None}

_EYE6 = np.eye(6)
_eye_cache: dict[int, np.ndarray] = {}


def _eye(n: int) -> np.ndarray:
    e = _eye_cache.get(n)
    if e is None:
        e = _eye_cache[n] = np.eye(n)
    return e


def jacobian(desc: RobotDescription, state: JointState) -> np.ndarray:
    """Geometric Jacobian (6 x n_driven) of the EE twist w.r.t. torso+arm rates.

    World frame, linear rows first. The base contributes no columns; its
    motion is commanded separately by the agent. The returned array is
    memoized on the state values; treat it as read-only.
    """
    if len(state.arm) != len(desc.arm):
        raise ValueError("joint state does not match description")
    key = (id(desc), state.base.tobytes(), state.torso, state.arm.tobytes())
    if _jac_memo["key"] == key:
        return _jac_memo["jac"]
    frames = _chain_frames(desc, state)
    ee = forward_kinematics(desc, state)
    ex, ey, ez = ee.position
    rows = np.zeros((len(frames) - 1, 6))
    for i, (anchor, j) in enumerate(frames[:-1]):
        axis_world = anchor.orientation.rotate(np.asarray(j.axis, dtype=float))
        if j.kind == "revolute":
            ax, ay, az = axis_world
            pos = anchor.position
            dx, dy, dz = ex - pos[0], ey - pos[1], ez - pos[2]
            rows[i, 0] = ay * dz - az * dy
            rows[i, 1] = az * dx - ax * dz
            rows[i, 2] = ax * dy - ay * dx
            rows[i, 3:] = axis_world
        else:
            rows[i, :3] = axis_world
    jac = rows.T
    _jac_memo["key"] = key
    _jac_memo["jac"] = jac
    return jac


def manipulability(desc: RobotDescription, state: JointState) -> float:
    """Yoshikawa measure sqrt(det(J J^T)).

    Invariant to base translation and yaw (the Jacobian has no base columns
    and the determinant is rotation-invariant). Arms with fewer than six
    driven joints use the translational block, where the full 6D Gram
    determinant would vanish identically.
    """
    j = jacobian(desc, state)
    if j.shape[1] < 6:
        j = j[:3, :]
    g = j @ j.T
    return math.sqrt(max(np.linalg.det(g), 0.0))


def diff_ik(
    desc: RobotDescription,
    state: JointState,
    desired: Twist,
    damping: float = 0.05,
    nullspace_gain: float = 0.1,
    joint_bias: np.ndarray | None = None,
) -> np.ndarray:
    """Damped-least-squares joint rates for a desired world-frame EE twist.

    qdot = J^T (J J^T + damping^2 I)^-1 xdot, plus a secondary task that
    pulls joints toward mid-range through the exact nullspace projector.
    joint_bias, when given, is a preferred joint-rate vector (e.g. a torso
    velocity requested by the base agent) added to the secondary task, so it
    is honored only as far as the EE task permits. When the solution exceeds
    a velocity limit the task part is scaled uniformly (direction-preserving);
    a final per-joint clip guarantees the limits regardless of the secondary
    task.
    """
    j = jacobian(desc, state)
    x = desired.as_array()
    values = state.driven()
    lo, hi, limits, mid, half = _spec_arrays(desc)

    # joints pinned at a position limit cannot contribute motion past it;
    # zero their columns and re-solve so the rest takes over the task
    active = np.ones(j.shape[1], dtype=bool)
    for _ in range(j.shape[1]):
        jm = j * active
        a = jm @ jm.T + (damping * damping) * _EYE6
        qdot = jm.T @ np.linalg.solve(a, x)
        pinned = active & (
            ((values <= lo + 1e-9) & (qdot < 0.0)) | ((values >= hi - 1e-9) & (qdot > 0.0))
        )
        if not pinned.any():
            break
        active &= ~pinned
    qdot[~active] = 0.0

    over = float(np.max(np.abs(qdot) / limits)) if qdot.size else 0.0
    if over > 1.0:
        qdot = qdot / over

    secondary = np.zeros(j.shape[1])
    if nullspace_gain > 0.0:
        secondary = nullspace_gain * (mid - values) / half
    if joint_bias is not None:
        secondary = secondary + np.asarray(joint_bias, dtype=float).reshape(j.shape[1])
    secondary[~active] = 0.0
    if np.any(secondary):
        jm = j * active
        pinv = np.linalg.pinv(jm)
        null_proj = _eye(j.shape[1]) - pinv @ jm
        qdot = qdot + null_proj @ secondary
        qdot[~active] = 0.0

    return np.clip(qdot, -limits, limits)


def hsr_like() -> RobotDescription:
    return RobotDescription(
        name="hsr-like",
        base_radius=0.25,
        base_height=0.40,
        base_v_max=0.30,
        base_omega_max=1.00,
        torso=JointSpec("torso_lift", "prismatic", (0, 0, 1), (0, 0, 0.30), (0.0, 0.35), 0.15),
        arm=(
            JointSpec("shoulder_pitch", "revolute", (0, 1, 0), (0.08, 0, 0.32), (-2.6, 1.0), 1.2),
            JointSpec("arm_roll", "revolute", (1, 0, 0), (0.25, 0, 0), (-2.0, 2.0), 1.5),
            JointSpec("wrist_pitch", "revolute", (0, 1, 0), (0.25, 0, 0), (-1.9, 1.2), 1.5),
            JointSpec("wrist_roll", "revolute", (1, 0, 0), (0.15, 0, 0), (-3.0, 3.0), 2.0),
        ),
        ee_offset=(0.12, 0, 0),
    )


def fmm_like() -> RobotDescription:
    return RobotDescription(
        name="fmm-like",
        base_radius=0.40,
        base_height=0.55,
        base_v_max=0.50,
        base_omega_max=1.20,
        torso=JointSpec("lift", "prismatic", (0, 0, 1), (0, 0, 0.30), (0.0, 0.50), 0.12),
        arm=(
            JointSpec("shoulder_yaw", "revolute", (0, 0, 1), (0.10, 0, 0.40), (-2.9, 2.9), 2.0),
            JointSpec("shoulder_pitch", "revolute", (0, 1, 0), (0, 0, 0), (-1.8, 1.8), 2.0),
            JointSpec("upper_roll", "revolute", (1, 0, 0), (0.20, 0, 0), (-2.9, 2.9), 2.0),
            JointSpec("elbow_pitch", "revolute", (0, 1, 0), (0.20, 0, 0), (-2.4, 2.4), 2.2),
            JointSpec("forearm_roll", "revolute", (1, 0, 0), (0.20, 0, 0), (-2.9, 2.9), 2.5),
            JointSpec("wrist_pitch", "revolute", (0, 1, 0), (0.15, 0, 0), (-1.7, 1.7), 2.5),
            JointSpec("wrist_roll", "revolute", (1, 0, 0), (0.10, 0, 0), (-2.9, 2.9), 2.5),
        ),
        ee_offset=(0.10, 0, 0),
    )


_PRESETS = {"hsr-like": hsr_like, "fmm-like": fmm_like}


def preset(name: str) -> RobotDescription:
    try:
        return _PRESETS[name]()
    except KeyError:
        raise ValueError(f"unknown robot preset {name!r}; have {sorted(_PRESETS)}") from None


def preset_names() -> list[str]:
    return sorted(_PRESETS)
