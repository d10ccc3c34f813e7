"""
Learning a wipe skill and the case for plan-based execution
===========================================================

Five bundled wipe demonstrations were recorded with the table at slightly
perturbed starts. fit_skill segments them on gripper changes, fits a
task-parameterized mixture per segment, and keeps only the frames whose
segment endpoints are consistent across demos (here: the table frame).

Executing the skill exposes the core trade-off. A whole-body clone servoes
the base on its recorded world-frame track, so moving the table breaks it.
Feeding the learned EE track through the plan interface leaves the base to
the agent, which re-positions from the observation, so the same model
transfers to the displaced table.
"""
import tempfile
from pathlib import Path

from momasim import DemonstrationRecord, fit_skill, preset, rollout
from momasim.fixtures import wipe_demo_paths, wipe_table_world

demos = [DemonstrationRecord.load(p) for p in wipe_demo_paths()]
print(f"loaded {len(demos)} demonstrations, {sum(len(d.rows) for d in demos)} rows total")

model = fit_skill(demos)
print(f"segments: {len(model.segments)}, gripper schedule: {model.gripper_schedule()}")
print(f"frames kept: {model.frame_names}")
for i, seg in enumerate(model.segments):
    kept = [fg.name for fg in seg.ee.frames]
    print(f"  segment {i}: {seg.duration_ticks} ticks, frames {kept}")

with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "wipe.skill.json"
    model.save(path)
    print(f"serialized model: {path.stat().st_size} bytes")
print()

desc = preset("hsr-like")
nominal = wipe_table_world()
displaced = nominal.displaced("table", (0.0, 0.4, 0.0))

print(f"{'policy':<15}{'world':<12}{'success':<9}{'progress':<10}{'rms':<8}")
for policy in ("whole_body", "ee_plus_agent"):
    for label, world in (("nominal", nominal), ("displaced", displaced)):
        rep = rollout(policy, model, world, desc)
        print(f"{policy:<15}{label:<12}{str(rep['success']):<9}"
              f"{rep['progress']:<10.2f}{rep['rms_error']:<8.3f}")
