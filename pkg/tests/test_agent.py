import json
import math

import numpy as np
import pytest

from momasim.agent import (
    AgentConfig,
    AgentObservation,
    BaseCommand,
    LinearPolicy,
    OccupancyWindow,
    PolicySchemaError,
    ReferencePolicy,
    build_observation,
    load_external_policy,
    obstacle_speed_factor,
    pause,
    rasterize_occupancy,
    reference_policy,
    tracking_speed_factor,
)
from momasim.geometry import Pose, Twist, UnitQuaternion
from momasim.inference import InferenceConfig, MotionPlan, OperatorSignal, extrapolate_plan
from momasim.robot import JointState, forward_kinematics, hsr_like, neutral_state
from momasim.world import Obstacle, World

CFG = AgentConfig()
INF = InferenceConfig()
DESC = hsr_like()
SQUARE = np.array([[-0.5, -0.5], [0.5, -0.5], [0.5, 0.5], [-0.5, 0.5]])


def empty_world():
    return World("empty", (-10, -10, 10, 10))


def world_with_block(x, y, z_hi=1.0, half=0.5):
    verts = np.array([[-half, -half], [half, -half], [half, half], [-half, half]])
    return World(
        "block", (-10, -10, 10, 10), [Obstacle("block", verts, (0.0, z_hi), position=(x, y))]
    )


def obs_with(subgoal_pos, world=None, state=None, twist=None, precision=False):
    state = state or neutral_state(DESC)
    window = rasterize_occupancy(world or empty_world(), state, CFG)
    return AgentObservation(
        ee_twist=twist or Twist.zero(),
        subgoal=Pose(np.asarray(subgoal_pos, dtype=float), UnitQuaternion.identity()),
        window=window,
        joint_state=state,
        precision=precision,
    )


def ee_z():
    return forward_kinematics(DESC, neutral_state(DESC)).position[2]


def test_window_is_odd_and_centered():
    assert CFG.window_cells() == 81
    window = rasterize_occupancy(empty_world(), neutral_state(DESC), CFG)
    assert window.grid.shape == (81, 81)
    centers = window.cell_centers()
    mid = (81 * 81 - 1) // 2
    assert np.allclose(centers[mid], [0.0, 0.0])
    assert not window.grid.any()


def test_obstacle_ahead_lands_ahead_in_window():
    # base at origin yawed 90 degrees; obstacle 1 m along world +y is base +x
    state = JointState(base=[0.0, 0.0, math.pi / 2], arm=np.zeros(4))
    window = rasterize_occupancy(world_with_block(0.0, 1.0), state, CFG)
    occ = window.occupied_xy()
    assert len(occ) > 0
    assert abs(np.mean(occ[:, 0]) - 1.0) < 0.1
    assert abs(np.mean(occ[:, 1])) < 0.1
    assert np.all(occ[:, 0] > 0.3)


def test_window_ignores_overhead_obstacles():
    w = world_with_block(1.0, 0.0)
    w.obstacles[0] = Obstacle("high", SQUARE, (2.0, 3.0), position=(1.0, 0.0))
    window = rasterize_occupancy(w, JointState(arm=np.zeros(4)), CFG)
    assert not window.grid.any()


def test_equilibrium_inside_annulus():
    cmd = reference_policy(obs_with([0.6, 0.0, ee_z()]), DESC, CFG)
    assert np.linalg.norm(cmd.v_base[:2]) < 0.01
    assert abs(cmd.v_base[2]) < 1e-9
    assert abs(cmd.v_torso) < 1e-6


def test_attraction_pulls_toward_far_subgoal():
    cmd = reference_policy(obs_with([2.5, 0.0, ee_z()]), DESC, CFG)
    assert cmd.v_base[0] > 0.1
    assert abs(cmd.v_base[1]) < 1e-9
    speed = np.linalg.norm(cmd.v_base[:2])
    assert speed <= min(CFG.v_max, DESC.base_v_max) + 1e-12


def test_attraction_backs_away_from_too_close_subgoal():
    cmd = reference_policy(obs_with([0.15, 0.0, ee_z()]), DESC, CFG)
    assert cmd.v_base[0] < -0.01


def test_repulsion_pushes_away_from_obstacle():
    world = world_with_block(0.8, 0.0)
    far = reference_policy(obs_with([0.6, 0.0, ee_z()]), DESC, CFG)
    near = reference_policy(obs_with([0.6, 0.0, ee_z()], world=world), DESC, CFG)
    assert near.v_base[0] < far.v_base[0] - 0.005


def test_yaw_servoes_toward_subgoal_azimuth():
    cmd = reference_policy(obs_with([0.0, 0.6, ee_z()]), DESC, CFG)
    assert cmd.v_base[2] > 0.1
    cmd = reference_policy(obs_with([0.0, -0.6, ee_z()]), DESC, CFG)
    assert cmd.v_base[2] < -0.1


def test_torso_servoes_ee_height():
    cmd = reference_policy(obs_with([0.6, 0.0, ee_z() + 0.3]), DESC, CFG)
    assert 0.0 < cmd.v_torso <= DESC.torso.vel_limit
    cmd = reference_policy(obs_with([0.6, 0.0, ee_z() - 0.3]), DESC, CFG)
    assert -DESC.torso.vel_limit <= cmd.v_torso < 0.0


def test_obstacle_speed_factor_monotone_in_distance():
    prev = None
    for x in np.linspace(3.0, 0.4, 40):
        window = rasterize_occupancy(world_with_block(x, 0.0), JointState(arm=np.zeros(4)), CFG)
        sigma = obstacle_speed_factor(window, DESC.base_radius + CFG.inflation_margin, CFG)
        assert 0.0 <= sigma <= 1.0
        if prev is not None:
            assert sigma <= prev + 1e-12
        prev = sigma
    assert prev < 0.2


def test_tracking_factor_high_in_good_posture():
    state = neutral_state(DESC)
    twist = Twist([0.1, 0.0, 0.0], [0.0, 0.0, 0.0])
    sigma = tracking_speed_factor(DESC, state, twist, CFG)
    assert 0.9 <= sigma <= CFG.track_scale_max
    assert tracking_speed_factor(DESC, state, Twist.zero(), CFG) == CFG.track_scale_max


def test_scaling_contract_on_randomized_observations():
    rng = np.random.default_rng(41)
    for _ in range(300):
        state = neutral_state(DESC)
        state.base[:] = rng.uniform([-1, -1, -math.pi], [1, 1, math.pi])
        world = world_with_block(*rng.uniform([-2, -2], [2, 2]))
        precision = bool(rng.integers(0, 2))
        sig = OperatorSignal(
            v_signal=rng.normal(size=3) * 0.05, precision=precision, active=True
        )
        plan = extrapolate_plan(forward_kinematics(DESC, state), sig, INF)
        obs = build_observation(world, DESC, state, plan, precision, 0.02, CFG, INF)
        cmd = reference_policy(obs, DESC, CFG)
        assert 0.01 <= cmd.ee_scaling <= 2.0
        if precision:
            assert cmd.ee_scaling <= 1.0


def test_base_command_rejects_out_of_contract_scaling():
    with pytest.raises(ValueError):
        BaseCommand(ee_scaling=2.5)
    with pytest.raises(ValueError):
        BaseCommand(ee_scaling=0.0)
    with pytest.raises(ValueError):
        BaseCommand(v_base=[math.nan, 0, 0])


def test_pause_is_zero_and_idempotent():
    p1 = pause()
    assert np.allclose(p1.v_base, 0.0) and p1.v_torso == 0.0
    p2 = pause(p1)
    assert np.allclose(p2.v_base, 0.0)
    assert p2.ee_scaling == p1.ee_scaling


def test_build_observation_transforms_to_base_frame():
    state = JointState(base=[1.0, 2.0, math.pi / 2], arm=np.zeros(4))
    ee = forward_kinematics(DESC, state)
    sig = OperatorSignal(v_signal=[0.1, 0.0, 0.0], active=True)  # world +x
    plan = extrapolate_plan(ee, sig, INF)
    obs = build_observation(empty_world(), DESC, state, plan, False, 0.02, CFG, INF)
    v = obs.ee_twist.linear
    # world +x seen from a base yawed +90 is -y
    assert v[1] < -1e-3 and abs(v[0]) < 1e-9
    # subgoal 1.5 m ahead of the EE along world x
    assert abs(obs.subgoal.position[1] - -1.5) < 1e-6


def test_inactive_plan_gives_zero_twist_subgoal_at_ee():
    state = neutral_state(DESC)
    obs = build_observation(empty_world(), DESC, state, MotionPlan(), False, 0.02, CFG, INF)
    assert np.allclose(obs.ee_twist.as_array(), 0.0)
    ee = forward_kinematics(DESC, state)
    assert np.allclose(obs.subgoal.position, ee.position, atol=1e-12)


def reference_descriptor(n_cells=81, joints=5, **overrides):
    doc = {
        "schema_version": 1,
        "kind": "reference",
        "observation": {
            "twist": 6,
            "subgoal": 7,
            "occupancy": [n_cells, n_cells],
            "joints": joints,
            "precision": 1,
        },
        "command": {"v_base": 3, "v_torso": 1, "ee_scaling": 1},
        "parameters": {},
    }
    doc.update(overrides)
    return doc


def test_load_reference_policy_descriptor(tmp_path):
    p = tmp_path / "policy.json"
    doc = reference_descriptor()
    doc["parameters"] = {"attract_gain": 0.9}
    p.write_text(json.dumps(doc))
    policy = load_external_policy(p, DESC, CFG)
    assert isinstance(policy, ReferencePolicy)
    assert policy.cfg.attract_gain == 0.9
    cmd = policy.step(obs_with([2.0, 0.0, ee_z()]))
    assert cmd.v_base[0] > 0.0


def test_policy_schema_mismatch_names_field(tmp_path):
    p = tmp_path / "policy.json"
    p.write_text(json.dumps(reference_descriptor(n_cells=64)))
    with pytest.raises(PolicySchemaError, match="observation.occupancy"):
        load_external_policy(p, DESC, CFG)
    p.write_text(json.dumps(reference_descriptor(joints=9)))
    with pytest.raises(PolicySchemaError, match="observation.joints"):
        load_external_policy(p, DESC, CFG)
    bad = reference_descriptor()
    bad["command"]["v_base"] = 2
    p.write_text(json.dumps(bad))
    with pytest.raises(PolicySchemaError, match="command.v_base"):
        load_external_policy(p, DESC, CFG)
    p.write_text(json.dumps(reference_descriptor(kind="transformer")))
    with pytest.raises(PolicySchemaError, match="unknown policy kind"):
        load_external_policy(p, DESC, CFG)
    p.write_text("{not json")
    with pytest.raises(PolicySchemaError, match="not valid JSON"):
        load_external_policy(p, DESC, CFG)
    with pytest.raises(FileNotFoundError):
        load_external_policy(tmp_path / "missing.json", DESC, CFG)


def test_linear_policy_blob_round_trip(tmp_path):
    rng = np.random.default_rng(43)
    weights = rng.normal(scale=0.01, size=(5, LinearPolicy.N_FEATURES))
    bias = np.array([0.0, 0.0, 0.0, 0.0, 1.0])
    np.savez(tmp_path / "weights.npz", weights=weights, bias=bias)
    doc = reference_descriptor(kind="linear")
    doc["parameters"] = {"blob": "weights.npz"}
    (tmp_path / "policy.json").write_text(json.dumps(doc))
    policy = load_external_policy(tmp_path / "policy.json", DESC, CFG)
    cmd = policy.step(obs_with([0.6, 0.0, ee_z()], precision=True))
    assert 0.01 <= cmd.ee_scaling <= 1.0
    assert np.all(np.abs(cmd.v_base[:2]) <= 1.0)


def test_occupancy_window_validation():
    with pytest.raises(ValueError, match="odd"):
        OccupancyWindow(np.zeros((80, 80), dtype=bool), 0.05)
    with pytest.raises(ValueError, match="square"):
        OccupancyWindow(np.zeros((81, 80), dtype=bool), 0.05)
