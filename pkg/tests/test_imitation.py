"""Skill fitting, frame product, GMR, and the two reproduction policies."""

import numpy as np
import pytest

from momasim.fixtures import wipe_demo_paths, wipe_table_world
from momasim.geometry import Pose, UnitQuaternion
from momasim.imitation import (
    FitError,
    FrameGaussians,
    ImitationConfig,
    SkillModel,
    TPGMM,
    WorldGMM,
    fit_skill,
    fit_tpgmm,
    frame_product,
    gmr,
    gmr_condition,
    rollout,
    rollout_ee_plus_agent,
    rollout_whole_body,
    segment_rows,
    skill_track,
)
from momasim.records import DemonstrationRecord, pose_from_doc, pose_to_doc
from momasim.robot import preset
from momasim.world import TaskFrameSpec, TaskSpec, World, world_from_doc, world_to_doc

REG = 1e-6


def synthetic_demo(
    n=240,
    start=(0.6, 0.0, 0.9),
    vel=(0.0012, 0.0, 0.0),
    switch=None,
    frame_name="goal",
    frame_pos=(1.0, 0.0, 0.0),
):
    """A record with a constant-velocity EE path; enough structure to fit."""
    start = np.array(start, dtype=float)
    vel = np.array(vel, dtype=float)
    q = UnitQuaternion.identity()
    world = World(
        name="synthetic",
        bounds=(-3.0, -3.0, 3.0, 3.0),
        obstacles=[],
        frames=[TaskFrameSpec(name=frame_name, pose=Pose(np.array(frame_pos, float), q))],
        task=TaskSpec(
            kind="follow_path",
            waypoints=[Pose(start.copy(), q), Pose(start + vel * (n - 1), q)],
        ),
    )
    header = {"robot": {"name": "hsr-like"}, "world": world_to_doc(world)}
    rows = []
    for j in range(n):
        p = start + vel * j
        state = "close" if switch is None or j < switch else "open"
        rows.append(
            {
                "tick": j,
                "t": j * 0.02,
                "base": [float(p[0]) - 0.6, 0.0, 0.0],
                "torso": 0.15,
                "arm": [0.0, 0.0, 0.0, 0.0],
                "ee": pose_to_doc(Pose(p, q)),
                "gripper": state,
                "signal": None,
                "command": None,
                "collided": False,
            }
        )
    return DemonstrationRecord(header, rows)


@pytest.fixture(scope="module")
def wipe_demos():
    return [DemonstrationRecord.load(p) for p in wipe_demo_paths()]


@pytest.fixture(scope="module")
def wipe_model(wipe_demos):
    return fit_skill(wipe_demos)


# -- segmentation -------------------------------------------------------------


def test_segment_rows_partitions_on_gripper_changes():
    rows = [{"gripper": g} for g in ["close"] * 4 + ["open"] * 3 + ["close"] * 2]
    spans = segment_rows(rows)
    assert spans == [(0, 4), (4, 7), (7, 9)]


def test_segment_rows_single_state_is_one_segment():
    rows = [{"gripper": "open"}] * 5
    assert segment_rows(rows) == [(0, 5)]
    assert segment_rows([]) == []


# -- EM core ------------------------------------------------------------------


def test_constant_pose_k1_recovers_mean_and_floor():
    t = np.linspace(0.0, 1.0, 60)
    p = np.array([0.4, -0.2, 0.9])
    x = np.column_stack([t, np.tile(p, (60, 1))])
    model, trace = fit_tpgmm({"world": x}, 1)
    mean = model.frames[0].means[0]
    cov = model.frames[0].covariances[0]
    assert np.allclose(mean[1:], p, atol=1e-12)
    # position block pinned at the regularization floor, time dim untouched
    pos_eigs = np.linalg.eigvalsh(cov[1:, 1:])
    assert np.all(pos_eigs >= REG * (1 - 1e-9))
    assert np.all(pos_eigs <= REG * (1 + 1e-6))
    assert cov[0, 0] > 1e-3
    assert all(b - a >= -1e-9 for a, b in zip(trace, trace[1:]))


def test_two_time_clusters_recovered_within_sampling_error():
    rng = np.random.default_rng(3)
    n = 400
    sigma = 0.02
    a = np.concatenate(
        [rng.normal(0.2, 0.05, (n, 1)), rng.normal(0.5, sigma, (n, 1))], axis=1
    )
    b = np.concatenate(
        [rng.normal(0.8, 0.05, (n, 1)), rng.normal(-0.3, sigma, (n, 1))], axis=1
    )
    model, _ = fit_tpgmm({"world": np.vstack([a, b])}, 2)
    centers = sorted(model.frames[0].means[:, 1], key=float)
    bound = 3 * sigma / np.sqrt(n)
    assert abs(centers[1] - 0.5) < bound
    assert abs(centers[0] - (-0.3)) < bound
    assert np.allclose(model.priors.sum(), 1.0, atol=1e-12)


def test_em_traces_nondecreasing_and_covariances_spd(wipe_model):
    assert wipe_model.training, "fit should record its traces"
    for entry in wipe_model.training:
        ll = entry["log_likelihood"]
        assert all(b - a >= -1e-9 for a, b in zip(ll, ll[1:])), entry["name"]
    for seg in wipe_model.segments:
        for m in [seg.ee] + ([seg.base] if seg.base else []):
            for fg in m.frames:
                for cov in fg.covariances:
                    assert np.allclose(cov, cov.T)
                    assert np.linalg.eigvalsh(cov).min() >= REG * (1 - 1e-9)


def test_singular_covariance_error_names_component():
    x = np.zeros((10, 2))  # no time spread at all: chunks are identical points
    x[:, 1] = 7.0
    model, _ = fit_tpgmm({"world": x}, 2)  # floor keeps this fittable
    assert model.n_components <= 2
    with pytest.raises(FitError, match="component"):
        fit_tpgmm({"world": x}, 2, ImitationConfig(regularization=0.0))


# -- fit_skill validation -------------------------------------------------------


def test_fit_requires_demos_and_consistent_robots():
    with pytest.raises(FitError, match="no demonstrations"):
        fit_skill([])
    a = synthetic_demo()
    b = synthetic_demo()
    b.header = dict(b.header, robot={"name": "fmm-like"})
    with pytest.raises(FitError, match="mix robots"):
        fit_skill([a, b])


def test_fit_rejects_mismatched_segmentation():
    a = synthetic_demo(switch=120)
    b = synthetic_demo(switch=None)
    with pytest.raises(FitError, match="segment counts differ"):
        fit_skill([a, b])


def test_fit_rejects_missing_frame():
    a = synthetic_demo(frame_name="goal")
    b = synthetic_demo(frame_name="other")
    with pytest.raises(FitError, match="missing frame 'goal'"):
        fit_skill([a, b])
    with pytest.raises(FitError, match="no frame 'nope'"):
        fit_skill([a], frames=["nope"])


def test_fit_keeps_low_variance_frames(wipe_model):
    # demos were jittered along the table frame, so only it survives the gate
    assert wipe_model.frame_names == ["table"]
    assert [seg.gripper.value for seg in wipe_model.segments] == ["close", "open"]


# -- frame product ---------------------------------------------------------------


def _toy_tpgmm(two_frames=False):
    means = np.array([[0.2, 0.1, -0.3, 0.5, 0.0, 0.0, 0.0], [0.8, 0.4, 0.2, 0.6, 0.0, 0.0, 0.0]])
    covs = np.stack([np.diag([0.01, 0.02, 0.03, 0.04, 0.001, 0.002, 0.003])] * 2)
    frames = [FrameGaussians("a", UnitQuaternion.identity(), means.copy(), covs.copy())]
    if two_frames:
        frames.append(FrameGaussians("b", UnitQuaternion.identity(), means.copy(), covs.copy()))
    return TPGMM(priors=np.array([0.5, 0.5]), frames=frames)


def test_product_single_identity_frame_is_the_stored_model():
    model = _toy_tpgmm()
    out = frame_product(model, {"a": Pose.identity()})
    assert np.allclose(out.means, model.frames[0].means, atol=1e-9)
    assert np.allclose(out.covariances, model.frames[0].covariances, atol=1e-9)


def test_product_of_equal_gaussians_halves_covariance():
    model = _toy_tpgmm(two_frames=True)
    out = frame_product(model, {"a": Pose.identity(), "b": Pose.identity()})
    assert np.allclose(out.means, model.frames[0].means, atol=1e-9)
    assert np.allclose(out.covariances, model.frames[0].covariances / 2.0, atol=1e-9)


def test_product_missing_frame_raises():
    model = _toy_tpgmm()
    with pytest.raises(KeyError, match="missing frame 'a'"):
        frame_product(model, {"world": Pose.identity()})


def test_product_translation_equivariance(wipe_model):
    rng = np.random.default_rng(11)
    delta = rng.uniform(-0.7, 0.7, 3)
    for seg in wipe_model.segments:
        frames0 = {fg.name: Pose.identity() for fg in seg.ee.frames}
        frames1 = {n: Pose(p.position + delta, p.orientation) for n, p in frames0.items()}
        p0 = frame_product(seg.ee, frames0)
        p1 = frame_product(seg.ee, frames1)
        for t in np.linspace(0.0, 1.0, 20):
            a, _ = gmr(p0, float(t))
            b, _ = gmr(p1, float(t))
            assert np.linalg.norm(b.position - (a.position + delta)) < 1e-6


def test_product_rotated_frame_rotates_positions():
    model = _toy_tpgmm()
    yaw = 0.7
    pose = Pose(np.array([0.1, 0.2, 0.0]), UnitQuaternion.from_yaw(yaw))
    out = frame_product(model, {"a": pose})
    rot = pose.orientation.rotation_matrix()
    for k in range(2):
        expect = rot @ model.frames[0].means[k, 1:4] + pose.position
        assert np.allclose(out.means[k, 1:4], expect, atol=1e-9)
    # world anchor carries the frame rotation
    assert out.anchor.angle_to(pose.orientation) < 1e-12


# -- GMR -----------------------------------------------------------------------


def test_gmr_endpoint_conditioning_tight_start():
    means = np.array([[0.0, 1.0, 2.0, 3.0, 0.0, 0.0, 0.0], [1.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0]])
    covs = np.stack([np.diag([1e-4, 1e-4, 1e-4, 1e-4, 1e-4, 1e-4, 1e-4])] * 2)
    gmm = WorldGMM(
        priors=np.array([0.5, 0.5]),
        means=means,
        covariances=covs,
        anchor=UnitQuaternion.identity(),
    )
    pose, point = gmr(gmm, 0.0)
    assert np.allclose(pose.position, [1.0, 2.0, 3.0], atol=1e-6)
    assert point.confidence > 0.999
    assert not point.fallback


def test_gmr_symmetric_components_average_on_the_plane():
    means = np.array([[0.5, 0.3, 1.0, 0.0, 0.0, 0.0, 0.0], [0.5, -0.3, 1.0, 0.0, 0.0, 0.0, 0.0]])
    covs = np.stack([np.diag([0.01, 0.02, 0.02, 0.02, 1e-4, 1e-4, 1e-4])] * 2)
    gmm = WorldGMM(
        priors=np.array([0.5, 0.5]),
        means=means,
        covariances=covs,
        anchor=UnitQuaternion.identity(),
    )
    pose, _ = gmr(gmm, 0.5)
    assert abs(pose.position[0]) < 1e-12
    assert abs(pose.position[1] - 1.0) < 1e-12


def test_gmr_underflow_falls_back_to_nearest_component():
    means = np.array([[0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0], [0.9, 5.0, 0.0, 0.0, 0.0, 0.0, 0.0]])
    covs = np.stack([np.diag([1e-320, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0])] * 2)
    gmm = WorldGMM(
        priors=np.array([0.5, 0.5]),
        means=means,
        covariances=covs,
        anchor=UnitQuaternion.identity(),
    )
    pose, point = gmr(gmm, 0.5)
    assert point.fallback
    assert point.confidence == 0.0
    # nearest component by time is the second one
    assert np.allclose(pose.position, [5.0, 0.0, 0.0], atol=1e-9)


def test_k1_linear_demo_reproduces_within_millimeter():
    demo = synthetic_demo(n=300)
    model = fit_skill([demo], ImitationConfig(n_components=1))
    world = world_from_doc(demo.header["world"])
    frames = {name: world.frame(name) for name in model.frame_names}
    prod = frame_product(model.segments[0].ee, frames)
    for j in range(0, 300, 30):
        t = j / 299
        pose, _ = gmr(prod, t)
        actual = pose_from_doc(demo.rows[j]["ee"])
        assert np.linalg.norm(pose.position - actual.position) < 1e-3


def test_single_demo_reproduction_rms(wipe_demos):
    demo = wipe_demos[0]
    model = fit_skill([demo])
    world = world_from_doc(demo.header["world"])
    frames = {name: world.frame(name) for name in model.frame_names}
    errors = []
    for s, (start, end) in enumerate(segment_rows(demo.rows)):
        prod = frame_product(model.segments[s].ee, frames)
        n = end - start
        for j in range(n):
            t = j / (n - 1) if n > 1 else 0.0
            pose, _ = gmr(prod, t)
            actual = pose_from_doc(demo.rows[start + j]["ee"])
            errors.append(np.linalg.norm(pose.position - actual.position))
    rms = float(np.sqrt(np.mean(np.square(errors))))
    assert rms < 1e-2


# -- serialization ---------------------------------------------------------------


def test_model_json_round_trip_is_byte_stable(wipe_model, tmp_path):
    path = tmp_path / "skill.json"
    wipe_model.save(path)
    first = path.read_bytes()
    again = SkillModel.load(path)
    again.save(path)
    assert path.read_bytes() == first
    assert again.frame_names == wipe_model.frame_names
    assert [s.gripper for s in again.segments] == [s.gripper for s in wipe_model.segments]


def test_model_loader_rejects_wrong_schema(tmp_path, wipe_model):
    doc = wipe_model.to_json_dict()
    doc["schema_version"] = 99
    import json

    path = tmp_path / "bad.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(ValueError, match="schema_version"):
        SkillModel.load(path)
    doc["schema_version"] = 1
    doc["kind"] = "other"
    path.write_text(json.dumps(doc))
    with pytest.raises(ValueError, match="kind"):
        SkillModel.load(path)


# -- rollouts --------------------------------------------------------------------


@pytest.fixture(scope="module")
def hsr():
    return preset("hsr-like")


@pytest.fixture(scope="module")
def wipe_world(hsr):
    return wipe_table_world(hsr)


def test_ee_plus_agent_succeeds_on_training_world(wipe_model, wipe_world, hsr):
    report = rollout_ee_plus_agent(wipe_model, wipe_world, hsr)
    assert report["success"]
    assert report["collision_ticks"] == 0
    assert report["track_progress"] == 1.0
    track = skill_track(wipe_model, wipe_world)
    # one index per tick at most: finishing takes at least len(track) ticks
    assert report["ticks"] >= len(track)


def test_whole_body_succeeds_on_training_world(wipe_model, wipe_world, hsr):
    report = rollout_whole_body(wipe_model, wipe_world, hsr)
    assert report["success"]
    assert report["collision_ticks"] == 0
    assert report["base_rms"] < 0.2
    track = skill_track(wipe_model, wipe_world, with_base=True)
    assert report["ticks"] >= len(track)


def test_displaced_frame_splits_the_policies(wipe_model, wipe_world, hsr):
    shifted = wipe_world.displaced("table", (0.0, 0.4, 0.0))
    assert rollout_ee_plus_agent(wipe_model, shifted, hsr)["success"]
    report = rollout_whole_body(wipe_model, shifted, hsr)
    assert not report["success"]


def test_whole_body_needs_base_fit(wipe_demos, wipe_world, hsr):
    model = fit_skill(wipe_demos, fit_base=False)
    with pytest.raises(FitError, match="base-pose"):
        rollout_whole_body(model, wipe_world, hsr)
    # the EE policy does not care
    assert rollout_ee_plus_agent(model, wipe_world, hsr)["success"]


def test_rollout_dispatch(wipe_model, wipe_world, hsr):
    assert rollout("ee_plus_agent", wipe_model, wipe_world, hsr)["success"]
    with pytest.raises(ValueError, match="unknown rollout policy"):
        rollout("teleport", wipe_model, wipe_world, hsr)


def test_rollout_stall_reports_timeout_failure(wipe_model, wipe_world, hsr):
    # an unreachable frame: the first commanded pose sits 3 m away
    far = wipe_world.displaced("table", (0.0, 3.0, 0.0))
    report = rollout_whole_body(wipe_model, far, hsr, config=ImitationConfig(stall_ticks=120))
    assert report["stalled"]
    assert not report["success"]
