import json

import numpy as np

from momasim.agent import AgentConfig, ReferencePolicy, load_external_policy
from momasim.fixtures import (
    WIPE_JITTERS,
    bundled_record,
    bundled_record_paths,
    bundled_script,
    bundled_world,
    data_path,
    suite_path,
    wipe_demo_paths,
    wipe_table_world,
)
from momasim.inference import OperatorSignal
from momasim.records import DemonstrationRecord
from momasim.robot import RobotDescription, forward_kinematics, hsr_like, load_robot, neutral_state
from momasim.scripting import record_demonstration, save_script
from momasim.simulator import Simulator, run_scripted
from momasim.world import load_world, world_from_doc

DESC = hsr_like()


def test_bundled_robots_match_presets():
    for name in ("hsr_like", "fmm_like"):
        loaded = load_robot(data_path(f"robots/{name}.json"))
        assert loaded.name == name.replace("_", "-")
        assert isinstance(loaded, RobotDescription)
    assert load_robot(data_path("robots/hsr_like.json")).to_json_dict() == DESC.to_json_dict()


def test_bundled_worlds_load():
    for name in ("clean_table", "door_arc", "corridor", "wipe_table"):
        world = bundled_world(name)
        assert world.task is not None
        assert world.resolved_waypoints()


def test_bundled_script_replays_to_bundled_record():
    script = bundled_script("door_arc")
    record, report = run_scripted(bundled_world("door_arc"), DESC, script)
    assert report["success"]
    assert record.to_bytes() == bundled_record("door_arc").to_bytes()


def test_regenerating_door_fixture_reproduces_bytes(tmp_path):
    script, record, report = record_demonstration(bundled_world("door_arc"), DESC)
    assert report["success"]
    p = tmp_path / "door.jsonl"
    save_script(p, script, meta={"world": "door_arc", "robot": DESC.name})
    assert p.read_bytes() == data_path("scripts/door_arc.jsonl").read_bytes()
    assert record.to_bytes() == data_path("records/door_arc.jsonl").read_bytes()


def test_bundled_descriptor_matches_reference_policy():
    policy = load_external_policy(data_path("policies/reference_hsr.json"), DESC)
    sim = Simulator(bundled_world("clean_table"), DESC, policy)
    ref = Simulator(bundled_world("clean_table"), DESC, ReferencePolicy(DESC, AgentConfig()))
    sig = OperatorSignal(
        v_signal=np.array([0.05, 0.02, 0.0]),
        q_signal=sim.state.ee.orientation.power(0.0),
        active=True,
    )
    for _ in range(25):
        _, cmd_a = sim.step(sig)
        _, cmd_b = ref.step(sig)
        assert np.array_equal(cmd_a.v_base, cmd_b.v_base)
        assert cmd_a.v_torso == cmd_b.v_torso and cmd_a.ee_scaling == cmd_b.ee_scaling


def test_wipe_demos_cover_the_jitter_grid():
    paths = wipe_demo_paths()
    assert len(paths) == len(WIPE_JITTERS)
    base_frame = wipe_table_world(DESC).frame("table")
    for path, jitter in zip(paths, WIPE_JITTERS):
        record = DemonstrationRecord.load(path)
        world = world_from_doc(record.header["world"])
        frame = world.frame("table")
        assert abs(frame.position[1] - (base_frame.position[1] + jitter)) < 1e-12
        assert record.rows[-1]["collided"] is False


def test_demo_waypoint_zero_anchors_neutral_ee():
    # the unjittered wipe world starts its path at the preset's neutral EE pose
    start = forward_kinematics(DESC, neutral_state(DESC))
    wp0 = wipe_table_world(DESC).resolved_waypoints()[0]
    assert np.allclose(wp0.position, start.position, atol=1e-12)


def test_suite_references_existing_fixtures():
    doc = json.loads(suite_path().read_text())
    assert doc["kind"] == "suite" and doc["cases"]
    for case in doc["cases"]:
        world = load_world(data_path(case["world"]))
        assert world.task is not None
        assert data_path(case["script"]).exists()
        assert case["require"]["success"] is True


def test_every_bundled_record_names_a_known_robot():
    for path in bundled_record_paths():
        record = DemonstrationRecord.load(path)
        assert record.header["robot"]["name"] in ("hsr-like", "fmm-like")
        assert record.header["schema_version"] == 1
