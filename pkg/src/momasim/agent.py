"""Base agent: observation building and the deterministic reference policy.

The agent stands in for a learned whole-body coordination policy. It sees
only contract-level inputs (desired EE twist, plan subgoal, an occupancy
window around the base, joint state, precision flag) and emits base/torso
velocities plus a scalar speed factor for EE execution, so a trained
policy can be dropped in behind the same interface via a JSON descriptor.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from momasim.geometry import Pose, Twist
from momasim.inference import InferenceConfig, MotionPlan, plan_to_agent_input
from momasim.robot import JointState, RobotDescription, diff_ik, forward_kinematics, jacobian

POLICY_SCHEMA_VERSION = 1

EE_SCALING_MIN = 0.01
EE_SCALING_MAX = 2.0


class PolicySchemaError(ValueError):
    """External policy descriptor does not match the runtime contract."""


@dataclass(frozen=True)
class AgentConfig:
    """Reference policy gains and occupancy window geometry."""

    annulus_min: float = 0.4
    annulus_max: float = 0.8
    attract_gain: float = 1.2
    yaw_gain: float = 1.5
    v_max: float = 0.6
    omega_max: float = 1.0
    repulse_radius: float = 1.0
    repulse_gain: float = 0.01
    inflation_margin: float = 0.1
    slow_distance: float = 0.5
    track_scale_max: float = 1.5
    torso_gain: float = 1.0
    subgoal_z_min: float = 0.3
    subgoal_z_max: float = 1.2
    cell_size: float = 0.05
    window_side: float = 4.0
    occupancy_z_max: float = 1.5

    def window_cells(self) -> int:
        """Odd cell count so the center cell sits on the base origin."""
        n = int(round(self.window_side / self.cell_size))
        return n + 1 if n % 2 == 0 else n


# center grids recur with identical geometry every tick; keyed by it, read-only
_centers_cache: dict[tuple[int, float], np.ndarray] = {}


@dataclass
class OccupancyWindow:
    """Boolean obstacle grid centered on and axis-aligned with the base frame.

    Fill the grid before querying occupied cells: the query result is
    computed once and reused.
    """

    grid: np.ndarray
    cell_size: float

    def __post_init__(self):
        if self.grid.ndim != 2 or self.grid.shape[0] != self.grid.shape[1]:
            raise ValueError("occupancy grid must be square")
        if self.grid.shape[0] % 2 != 1:
            raise ValueError("occupancy grid needs an odd cell count per side")
        self._occupied: np.ndarray | None = None

    @property
    def side_cells(self) -> int:
        return self.grid.shape[0]

    def cell_centers(self) -> np.ndarray:
        """(n*n, 2) base-frame xy coordinates, row-major over the grid. Shared
        across windows of the same geometry; treat as read-only."""
        key = (self.side_cells, self.cell_size)
        centers = _centers_cache.get(key)
        if centers is None:
            half = (self.side_cells - 1) // 2
            coords = np.arange(-half, half + 1) * self.cell_size
            xx, yy = np.meshgrid(coords, coords, indexing="ij")
            centers = np.column_stack([xx.ravel(), yy.ravel()])
            _centers_cache[key] = centers
        return centers

    def occupied_xy(self) -> np.ndarray:
        if self._occupied is None:
            self._occupied = self.cell_centers()[self.grid.ravel()]
        return self._occupied


@dataclass
class AgentObservation:
    ee_twist: Twist  # desired EE twist at unit scaling, base frame
    subgoal: Pose  # last plan pose, base frame
    window: OccupancyWindow
    joint_state: JointState
    precision: bool


@dataclass
class BaseCommand:
    """Agent output: base twist (base frame), torso rate, EE speed factor.

    ee_scaling must be emitted inside [0.01, 2]; construction enforces it
    so no producer can leak an out-of-contract command into the simulator.
    """

    v_base: np.ndarray = field(default_factory=lambda: np.zeros(3))  # vx, vy, omega
    v_torso: float = 0.0
    ee_scaling: float = 1.0

    def __post_init__(self):
        self.v_base = np.asarray(self.v_base, dtype=float).reshape(3)
        self.v_torso = float(self.v_torso)
        self.ee_scaling = float(self.ee_scaling)
        if not (np.all(np.isfinite(self.v_base)) and math.isfinite(self.v_torso)):
            raise ValueError("non-finite base command")
        if not EE_SCALING_MIN <= self.ee_scaling <= EE_SCALING_MAX:
            raise ValueError(
                f"ee_scaling {self.ee_scaling} outside [{EE_SCALING_MIN}, {EE_SCALING_MAX}]"
            )

    @classmethod
    def stationary(cls, ee_scaling: float = 1.0) -> "BaseCommand":
        return cls(np.zeros(3), 0.0, ee_scaling)


def pause(last: BaseCommand | None = None) -> BaseCommand:
    """Zero-velocity command; idempotent, keeps the last speed factor around."""
    return BaseCommand.stationary(last.ee_scaling if last is not None else 1.0)


def rasterize_occupancy(
    world, state: JointState, cfg: AgentConfig, tick: int = 0
) -> OccupancyWindow:
    """Mark window cells whose centers fall inside a ground-level obstacle.

    Obstacles entirely above occupancy_z_max or below the floor are
    ignored; the window is axis-aligned with the base frame.
    """
    n = cfg.window_cells()
    grid = np.zeros((n, n), dtype=bool)
    window = OccupancyWindow(grid, cfg.cell_size)
    centers = window.cell_centers()
    half = (n - 1) // 2
    yaw = state.base[2]
    c, s = math.cos(yaw), math.sin(yaw)
    rot_wb = np.array([[c, -s], [s, c]])  # base -> world
    half_extent = 0.5 * cfg.window_side * math.sqrt(2.0) + cfg.cell_size
    for obs in world.obstacles:
        if obs.z_range[0] >= cfg.occupancy_z_max or obs.z_range[1] <= 0.0:
            continue
        poly_world = obs.polygon_at(tick)
        # prune obstacles that cannot reach the window
        center_dist = np.linalg.norm(poly_world - state.base[:2], axis=1).min()
        vert_span = np.linalg.norm(poly_world.max(axis=0) - poly_world.min(axis=0))
        if center_dist - vert_span > half_extent:
            continue
        poly_base = (poly_world - state.base[:2]) @ rot_wb
        # test only the grid block under the polygon's padded bounding box;
        # one cell of padding dwarfs the edge-test tolerance band
        lo = poly_base.min(axis=0) - cfg.cell_size
        hi = poly_base.max(axis=0) + cfg.cell_size
        i0 = max(0, half + int(math.ceil(lo[0] / cfg.cell_size)))
        i1 = min(n, half + int(math.floor(hi[0] / cfg.cell_size)) + 1)
        j0 = max(0, half + int(math.ceil(lo[1] / cfg.cell_size)))
        j1 = min(n, half + int(math.floor(hi[1] / cfg.cell_size)) + 1)
        if i0 >= i1 or j0 >= j1:
            continue
        block = centers.reshape(n, n, 2)[i0:i1, j0:j1].reshape(-1, 2)
        mask = _points_in_convex_fast(poly_base, block)
        grid[i0:i1, j0:j1] |= mask.reshape(i1 - i0, j1 - j0)
    return window


def _points_in_convex_fast(poly: np.ndarray, points: np.ndarray) -> np.ndarray:
    inside = np.ones(len(points), dtype=bool)
    n = len(poly)
    for i in range(n):
        a = poly[i]
        e = poly[(i + 1) % n] - a
        inside &= e[0] * (points[:, 1] - a[1]) - e[1] * (points[:, 0] - a[0]) >= -1e-12
    return inside


def build_observation(
    world,
    desc: RobotDescription,
    state: JointState,
    plan: MotionPlan,
    precision: bool,
    tick_s: float,
    agent_cfg: AgentConfig,
    inf_cfg: InferenceConfig,
    tick: int = 0,
    plan_input: tuple[Twist, Pose] | None = None,
) -> AgentObservation:
    """Assemble the contract-level observation for one control tick.

    plan_input lets a caller that already ran plan_to_agent_input on this
    state hand over the (world twist, subgoal) pair instead of recomputing it.
    """
    base_frame = state.base_pose()
    if plan_input is None:
        ee_pose = forward_kinematics(desc, state)
        plan_input = plan_to_agent_input(plan, ee_pose, base_frame, tick_s, inf_cfg)
    twist_world, subgoal = plan_input
    rot_bw = base_frame.orientation.inverse()
    twist_base = Twist(rot_bw.rotate(twist_world.linear), rot_bw.rotate(twist_world.angular))
    window = rasterize_occupancy(world, state, agent_cfg, tick)
    return AgentObservation(twist_base, subgoal, window, state.copy(), precision)


def obstacle_speed_factor(window: OccupancyWindow, inflation: float, cfg: AgentConfig) -> float:
    """In [0, 1]; shrinks monotonically as the nearest occupied cell closes in."""
    occupied = window.occupied_xy()
    if len(occupied) == 0:
        return 1.0
    d_min = float(np.linalg.norm(occupied, axis=1).min())
    return float(np.clip((d_min - inflation) / cfg.slow_distance, 0.0, 1.0))


def tracking_speed_factor(
    desc: RobotDescription, state: JointState, twist_base: Twist, cfg: AgentConfig,
    probe_speed: float = 0.1,
) -> float:
    """In [0, track_scale_max]; shrinks with predicted IK tracking error.

    Probes the arm at a normalized speed along the desired direction and
    measures the fraction of the commanded velocity the damped solution
    actually achieves.
    """
    mag = float(np.linalg.norm(twist_base.linear))
    if mag == 0.0:
        return cfg.track_scale_max
    yaw_q = state.base_pose().orientation
    dir_world = yaw_q.rotate(twist_base.linear / mag)
    probe = Twist(dir_world * probe_speed, np.zeros(3))
    qdot = diff_ik(desc, state, probe, nullspace_gain=0.0)
    achieved = (jacobian(desc, state) @ qdot)[:3]
    err = float(np.linalg.norm(probe.linear - achieved)) / probe_speed
    return cfg.track_scale_max * float(np.clip(1.0 - err, 0.0, 1.0))


def reference_policy(
    obs: AgentObservation, desc: RobotDescription, cfg: AgentConfig = AgentConfig()
) -> BaseCommand:
    """Deterministic stand-in for a learned base policy.

    Attraction keeps the plan subgoal inside a preferred annulus of
    base-frame distance, inverse-square repulsion pushes away from nearby
    occupied cells, yaw servoes toward the subgoal azimuth, the torso
    servoes the EE height error, and the speed factor is the product of a
    tracking term and an obstacle term clamped into [0.01, 2].
    """
    sx, sy = obs.subgoal.position[0], obs.subgoal.position[1]
    d = math.hypot(sx, sy)

    v = np.zeros(2)
    if d > 1e-12:
        direction = np.array([sx, sy]) / d
        if d > cfg.annulus_max:
            v = direction * cfg.attract_gain * (d - cfg.annulus_max)
        elif d < cfg.annulus_min:
            v = -direction * cfg.attract_gain * (cfg.annulus_min - d)

    inflation = desc.base_radius + cfg.inflation_margin
    occupied = obs.window.occupied_xy()
    if len(occupied):
        dists = np.linalg.norm(occupied, axis=1)
        near = dists <= cfg.repulse_radius
        if near.any():
            cells = occupied[near]
            dn = dists[near]
            d_eff = np.maximum(dn - inflation, 0.02)
            mags = cfg.repulse_gain / (d_eff * d_eff)
            # a cell exactly under the base center has no direction; push +x
            away = -cells / np.maximum(dn, 1e-9)[:, None]
            away[dn < 1e-9] = (1.0, 0.0)
            v = v + (away * mags[:, None]).mean(axis=0)

    speed = np.linalg.norm(v)
    v_limit = min(cfg.v_max, desc.base_v_max)
    if speed > v_limit:
        v = v * (v_limit / speed)

    omega = 0.0
    if d > 1e-12:
        omega = float(
            np.clip(cfg.yaw_gain * math.atan2(sy, sx), -min(cfg.omega_max, desc.base_omega_max),
                    min(cfg.omega_max, desc.base_omega_max))
        )

    ee_z = forward_kinematics(desc, obs.joint_state).position[2]
    z_target = float(np.clip(obs.subgoal.position[2], cfg.subgoal_z_min, cfg.subgoal_z_max))
    v_torso = float(
        np.clip(cfg.torso_gain * (z_target - ee_z), -desc.torso.vel_limit, desc.torso.vel_limit)
    )

    sigma_track = tracking_speed_factor(desc, obs.joint_state, obs.ee_twist, cfg)
    sigma_obstacle = obstacle_speed_factor(obs.window, inflation, cfg)
    ee_scaling = float(np.clip(sigma_track * sigma_obstacle, EE_SCALING_MIN, EE_SCALING_MAX))
    if obs.precision:
        ee_scaling = min(ee_scaling, 1.0)

    return BaseCommand(np.array([v[0], v[1], omega]), v_torso, ee_scaling)


class ReferencePolicy:
    """Callable policy wrapper pairing a robot description with gains."""

    def __init__(self, desc: RobotDescription, cfg: AgentConfig = AgentConfig()):
        self.desc = desc
        self.cfg = cfg

    def step(self, obs: AgentObservation) -> BaseCommand:
        return reference_policy(obs, self.desc, self.cfg)


class LinearPolicy:
    """Minimal external-policy example: affine map over reduced features.

    Features: desired EE twist (6), subgoal position (3), nearest occupied
    cell distance (1), precision flag (1). Outputs vx, vy, omega, v_torso
    and a raw scaling squashed into [0.01, 2].
    """

    N_FEATURES = 11

    def __init__(self, desc: RobotDescription, weights: np.ndarray, bias: np.ndarray):
        if weights.shape != (5, self.N_FEATURES) or bias.shape != (5,):
            raise PolicySchemaError(
                f"parameters: expected weights (5, {self.N_FEATURES}) and bias (5,), "
                f"got {weights.shape} and {bias.shape}"
            )
        self.desc = desc
        self.weights = weights
        self.bias = bias

    def step(self, obs: AgentObservation) -> BaseCommand:
        occupied = obs.window.occupied_xy()
        nearest = (
            float(np.linalg.norm(occupied, axis=1).min()) if len(occupied) else 10.0
        )
        feats = np.concatenate(
            [
                obs.ee_twist.as_array(),
                obs.subgoal.position,
                [nearest, 1.0 if obs.precision else 0.0],
            ]
        )
        y = self.weights @ feats + self.bias
        v_limit = min(self.desc.base_v_max, 1.0)
        v = np.clip(y[:3], [-v_limit, -v_limit, -self.desc.base_omega_max],
                    [v_limit, v_limit, self.desc.base_omega_max])
        v_torso = float(np.clip(y[3], -self.desc.torso.vel_limit, self.desc.torso.vel_limit))
        scaling = float(np.clip(y[4], EE_SCALING_MIN, EE_SCALING_MAX))
        if obs.precision:
            scaling = min(scaling, 1.0)
        return BaseCommand(v, v_torso, scaling)


def _expected_layout(desc: RobotDescription, cfg: AgentConfig) -> dict:
    n = cfg.window_cells()
    return {
        "twist": 6,
        "subgoal": 7,
        "occupancy": [n, n],
        "joints": desc.n_driven,
        "precision": 1,
    }


def load_external_policy(
    path, desc: RobotDescription, cfg: AgentConfig = AgentConfig()
):
    """Instantiate a policy from a JSON descriptor, probing its I/O schema.

    The descriptor must declare the observation layout it was built for;
    any mismatch against the runtime layout fails fast with the offending
    field named, instead of silently feeding a policy garbage.
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise
    except json.JSONDecodeError as e:
        raise PolicySchemaError(f"policy descriptor is not valid JSON: {e}") from e

    if doc.get("schema_version") != POLICY_SCHEMA_VERSION:
        raise PolicySchemaError(
            f"schema_version: expected {POLICY_SCHEMA_VERSION}, got {doc.get('schema_version')!r}"
        )
    expected = _expected_layout(desc, cfg)
    declared = doc.get("observation", {})
    for key, want in expected.items():
        got = declared.get(key)
        if got != want:
            raise PolicySchemaError(f"observation.{key}: expected {want}, got {got!r}")
    command = doc.get("command", {})
    for key, want in (("v_base", 3), ("v_torso", 1), ("ee_scaling", 1)):
        if command.get(key) != want:
            raise PolicySchemaError(
                f"command.{key}: expected {want}, got {command.get(key)!r}"
            )

    kind = doc.get("kind")
    params = doc.get("parameters", {})
    if kind == "reference":
        overrides = {k: v for k, v in params.items() if hasattr(cfg, k)}
        unknown = sorted(set(params) - set(overrides))
        if unknown:
            raise PolicySchemaError(f"parameters: unknown gain(s) {unknown}")
        return ReferencePolicy(desc, replace(cfg, **overrides))
    if kind == "linear":
        blob_name = params.get("blob")
        if not blob_name:
            raise PolicySchemaError("parameters.blob: missing npz reference")
        blob = np.load(path.parent / blob_name)
        return LinearPolicy(desc, np.asarray(blob["weights"], dtype=float),
                            np.asarray(blob["bias"], dtype=float))
    raise PolicySchemaError(f"kind: unknown policy kind {kind!r}")
