"""Acceptance gate: one test per release criterion, at the stated tolerance.

Each test is self-contained (its oracle is evaluated inline, not imported
from the module under test), asserts its runtime budget, and prints one
summary line with the measured numbers. Run with -v for the per-criterion
pass/fail listing.
"""

import time

import numpy as np
import pytest

from momasim import robot
from momasim.fixtures import (
    bundled_record,
    bundled_record_paths,
    bundled_script,
    bundled_world,
    wipe_demo_paths,
)
from momasim.geometry import Pose, UnitQuaternion, average_quaternions
from momasim.imitation import fit_skill, frame_product, gmr, rollout
from momasim.inference import (
    InferenceConfig,
    OperatorSignal,
    SignalHistory,
    extrapolate_plan,
    weighted_position_delta,
)
from momasim.records import DemonstrationRecord
from momasim.robot import JointState, forward_kinematics, jacobian, neutral_state
from momasim.scripting import perturbed_start, record_demonstration
from momasim.simulator import Gripper, Simulator, replay, run_scripted

HSR = robot.preset("hsr-like")
PRESETS = [robot.preset(name) for name in robot.preset_names()]


def _stamp(n: int, detail: str, t0: float, budget: float) -> None:
    elapsed = time.perf_counter() - t0
    assert elapsed < budget, f"criterion {n} exceeded budget: {elapsed:.1f}s >= {budget}s"
    print(f"criterion {n:02d} PASS  ({elapsed:.2f}s)  {detail}")


def random_pose(rng) -> Pose:
    q = UnitQuaternion(*rng.normal(size=4)).canonical()
    return Pose(rng.uniform(-1.0, 1.0, 3), q)


def random_quat(rng) -> UnitQuaternion:
    return UnitQuaternion(*rng.normal(size=4))


def test_criterion_01_weighted_sum_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    worst = 0.0
    for _ in range(200):
        n = int(rng.integers(2, 34))
        history = SignalHistory(capacity=34)
        for k in range(n):
            history.append(k / 33.0, random_pose(rng))
        out = weighted_position_delta(history)
        poses = history.poses()
        oracle = np.zeros(3)  # newest difference weighted 1, then halving
        for h in range(len(poses) - 1):
            newer = poses[len(poses) - 1 - h].position
            older = poses[len(poses) - 2 - h].position
            oracle += 0.5**h * (newer - older)
        worst = max(worst, np.linalg.norm(out - oracle) / max(np.linalg.norm(oracle), 1e-300))
    assert worst < 1e-12
    _stamp(1, f"max relative error {worst:.2e}", t0, 1.0)


def test_criterion_02_quaternion_averaging():
    t0 = time.perf_counter()
    rng = np.random.default_rng(202)
    worst = 0.0
    worst_flip = 0.0
    for _ in range(100):
        n = int(rng.integers(2, 12))
        quats = [random_quat(rng) for _ in range(n)]
        weights = rng.uniform(0.1, 2.0, n)
        avg = average_quaternions(quats, weights)
        acc = np.zeros((4, 4))  # attitude-matrix oracle: principal eigenvector
        for w, q in zip(weights, quats):
            v = np.array(q.wxyz)
            acc += w * np.outer(v, v)
        vals, vecs = np.linalg.eigh(acc)
        oracle = UnitQuaternion(*vecs[:, np.argmax(vals)])
        worst = max(worst, avg.angle_to(oracle))
        flips = rng.random(n) < 0.5
        flipped = [
            UnitQuaternion(*(-np.array(q.wxyz))) if f else q for q, f in zip(quats, flips)
        ]
        worst_flip = max(worst_flip, avg.angle_to(average_quaternions(flipped, weights)))
    assert worst < 1e-6
    assert worst_flip < 1e-9
    _stamp(2, f"eigen distance {worst:.2e}, sign-flip {worst_flip:.2e}", t0, 1.0)


def test_criterion_03_plan_geometry():
    t0 = time.perf_counter()
    rng = np.random.default_rng(303)
    cfg = InferenceConfig()
    lengths = set()
    for _ in range(80):
        v = rng.normal(size=3)
        v *= rng.uniform(0.0, 1.2) * cfg.res_training / np.linalg.norm(v)
        start = random_pose(rng)

        straight = OperatorSignal(
            v_signal=v, q_signal=UnitQuaternion.identity(), gripper=Gripper.HOLD,
            precision=False, active=True,
        )
        plan = extrapolate_plan(start, straight, cfg)
        lengths.add(len(plan))
        pts = np.array([p.position for p in plan.poses])
        steps = np.diff(np.vstack([start.position[None, :], pts]), axis=0)
        spacing = np.linalg.norm(steps, axis=1)
        assert np.all(np.abs(spacing - 0.1) < 1e-9)
        cross = np.cross(steps[:-1], steps[1:])
        assert np.max(np.abs(cross)) < 1e-12  # collinear

        axis = rng.normal(size=3)
        turning = OperatorSignal(
            v_signal=v,
            q_signal=UnitQuaternion.from_axis_angle(axis, rng.uniform(0.02, 0.15)),
            gripper=Gripper.HOLD, precision=False, active=True,
        )
        plan = extrapolate_plan(start, turning, cfg)
        pts = np.array([p.position for p in plan.poses])
        steps = np.diff(np.vstack([start.position[None, :], pts]), axis=0)
        angles = [
            np.arccos(np.clip(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)), -1, 1))
            for a, b in zip(steps[:-1], steps[1:])
        ]
        assert np.var(angles) < 1e-9  # constant curvature

        precise = OperatorSignal(
            v_signal=v, q_signal=turning.q_signal, gripper=Gripper.HOLD,
            precision=True, active=True,
        )
        plan = extrapolate_plan(start, precise, cfg)
        arc = len(plan) * plan.resolution
        assert arc <= 0.3 + 1e-12
    assert lengths <= set(range(5, 16)) and {5, 15} <= lengths
    _stamp(3, f"plan lengths {sorted(lengths)}, spacing 0.1 +/- 1e-9", t0, 1.0)


def test_criterion_04_scaling_contract():
    t0 = time.perf_counter()
    rng = np.random.default_rng(404)
    sim = Simulator(bundled_world("clean_table"), HSR)
    lo, hi, precise_hi = np.inf, 0.0, 0.0
    for _ in range(10_000):
        if rng.random() < 0.05:
            signal = OperatorSignal.inactive()
        else:
            v = rng.normal(size=3)
            v *= rng.uniform(0.0, 0.125) / np.linalg.norm(v)
            signal = OperatorSignal(
                v_signal=v,
                q_signal=UnitQuaternion.from_axis_angle(rng.normal(size=3), rng.uniform(0, 0.1)),
                gripper=Gripper.HOLD,
                precision=bool(rng.random() < 0.5),
                active=True,
            )
        _, cmd = sim.step(signal)
        assert 0.01 <= cmd.ee_scaling <= 2.0
        if signal.precision:
            assert cmd.ee_scaling <= 1.0
            precise_hi = max(precise_hi, cmd.ee_scaling)
        lo, hi = min(lo, cmd.ee_scaling), max(hi, cmd.ee_scaling)
    _stamp(4, f"scaling range [{lo:.3f}, {hi:.3f}], precision max {precise_hi:.3f}", t0, 10.0)


def _fd_jacobian(desc, state, h=1e-6):
    cols = []
    for k in range(desc.n_driven):
        def shifted(delta):
            v = state.driven().copy()
            v[k] += delta
            return JointState(state.base.copy(), v[0], v[1:])

        plus = forward_kinematics(desc, shifted(h))
        minus = forward_kinematics(desc, shifted(-h))
        lin = (plus.position - minus.position) / (2 * h)
        ang = (plus.orientation * minus.orientation.inverse()).rotvec() / (2 * h)
        cols.append(np.concatenate([lin, ang]))
    return np.array(cols).T


def test_criterion_05_jacobian_vs_finite_differences():
    t0 = time.perf_counter()
    rng = np.random.default_rng(505)
    worst = 0.0
    for desc in PRESETS:
        for _ in range(100):
            torso = rng.uniform(*desc.torso.limits)
            arm = np.array([rng.uniform(j.limits[0], j.limits[1]) for j in desc.arm])
            base = rng.uniform([-1, -1, -np.pi], [1, 1, np.pi])
            st = JointState(base, torso, arm)
            worst = max(worst, np.max(np.abs(jacobian(desc, st) - _fd_jacobian(desc, st))))
    assert worst < 1e-5
    _stamp(5, f"max |J - J_fd| = {worst:.2e} over {[d.name for d in PRESETS]}", t0, 5.0)


def test_criterion_06_corridor_avoidance_deterministic():
    t0 = time.perf_counter()
    world = bundled_world("corridor")
    script = bundled_script("corridor")
    record, report = run_scripted(world, HSR, script)
    assert report["success"] and report["collision_ticks"] == 0
    assert report["min_clearance"] > 0.1
    bundled = bundled_record_paths()
    path = [p for p in bundled if p.name == "corridor.jsonl"][0]
    assert record.to_bytes() == path.read_bytes()  # bit-identical rerun
    _stamp(
        6,
        f"clearance {report['min_clearance']:.3f} m, 0 collisions, record bit-identical",
        t0,
        10.0,
    )


def test_criterion_07_scripted_tasks_ten_seeded_runs():
    t0 = time.perf_counter()
    outcomes = {}
    for name in ("clean_table", "door_arc"):
        world = bundled_world(name)
        passed = 0
        worst_rms = 0.0
        for seed in range(10):
            start = perturbed_start(neutral_state(HSR), seed)
            _, _, report = record_demonstration(world, HSR, start=start)
            worst_rms = max(worst_rms, report["rms_error"])
            passed += bool(report["success"] and report["rms_error"] < 0.05)
        outcomes[name] = (passed, worst_rms)
        assert passed == 10, f"{name}: {passed}/10, worst rms {worst_rms:.4f}"
    detail = ", ".join(f"{k} 10/10 (rms <= {v[1]:.4f})" for k, v in outcomes.items())
    _stamp(7, detail, t0, 60.0)


def test_criterion_08_em_monotone_and_spd():
    t0 = time.perf_counter()
    demos = [DemonstrationRecord.load(p) for p in wipe_demo_paths()]
    model = fit_skill(demos)
    assert model.training, "fit produced no training traces"
    worst_drop = 0.0
    for trace in model.training:
        ll = np.asarray(trace["log_likelihood"])
        assert len(ll) >= 2
        worst_drop = max(worst_drop, float(np.max(ll[:-1] - ll[1:], initial=0.0)))
    assert worst_drop <= 1e-9, f"log-likelihood dropped by {worst_drop:.2e}"
    floor = 1e-6 * (1.0 - 1e-9)
    min_eig = np.inf
    for seg in model.segments:
        for tp in [seg.ee] + ([seg.base] if seg.base is not None else []):
            for fg in tp.frames:
                for cov in fg.covariances:
                    min_eig = min(min_eig, float(np.linalg.eigvalsh(cov)[0]))
    assert min_eig >= floor
    _stamp(8, f"max ll drop {worst_drop:.1e}, min eigenvalue {min_eig:.3e}", t0, 30.0)


def test_criterion_09_tpgmm_translation_equivariance():
    t0 = time.perf_counter()
    demos = [DemonstrationRecord.load(p) for p in wipe_demo_paths()]
    model = fit_skill(demos)
    rng = np.random.default_rng(909)
    worst = 0.0
    for _ in range(5):
        delta = rng.uniform(-0.7, 0.7, 3)
        for seg in model.segments:
            frames = {
                name: Pose(rng.uniform(-0.5, 0.5, 3), UnitQuaternion.identity())
                for name in model.frame_names
            }
            moved = {
                name: Pose(p.position + delta, p.orientation) for name, p in frames.items()
            }
            g0 = frame_product(seg.ee, frames)
            g1 = frame_product(seg.ee, moved)
            for t in np.linspace(0.0, 1.0, 9):
                p0, _ = gmr(g0, float(t))
                p1, _ = gmr(g1, float(t))
                worst = max(worst, float(np.max(np.abs(p1.position - (p0.position + delta)))))
    assert worst < 1e-6
    _stamp(9, f"max equivariance deviation {worst:.2e}", t0, 5.0)


def test_criterion_10_generalization_split():
    t0 = time.perf_counter()
    demos = [DemonstrationRecord.load(p) for p in wipe_demo_paths()]
    model = fit_skill(demos)
    base_world = bundled_world("wipe_table")
    shifted = base_world.displaced("table", (0.0, 0.4, 0.0))
    wins = {}
    for policy in ("ee_plus_agent", "whole_body"):
        for label, world in (("unchanged", base_world), ("displaced", shifted)):
            n = 0
            for seed in range(10):
                start = perturbed_start(neutral_state(HSR), seed)
                report = rollout(policy, model, world, HSR, start=start)
                n += bool(report["success"])
            wins[policy, label] = n
    assert wins["ee_plus_agent", "unchanged"] >= 9
    assert wins["whole_body", "unchanged"] >= 9
    assert wins["ee_plus_agent", "displaced"] >= 8
    assert wins["whole_body", "displaced"] <= 2
    detail = ", ".join(f"{p}/{l} {n}/10" for (p, l), n in wins.items())
    _stamp(10, detail, t0, 300.0)


def test_criterion_11_replay_every_bundled_record():
    t0 = time.perf_counter()
    paths = bundled_record_paths()
    assert len(paths) >= 8  # three scripted scenarios + five wipe demos
    worst = 0.0
    for path in paths:
        report = replay(path, tolerance=1e-6)
        assert report.within(1e-6), f"{path.name}: {report}"
        worst = max(worst, report.max_position_error, report.max_angle_error)
    _stamp(11, f"{len(paths)} records, max deviation {worst:.2e}", t0, 30.0)
