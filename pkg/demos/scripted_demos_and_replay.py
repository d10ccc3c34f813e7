"""
Scripted demonstrations, canonical records, bit-exact replay
============================================================

A demonstration is a script of operator signals run through the simulator.
The record it produces is canonical JSONL: same script, same world, same
bytes. replay() re-runs the logged signals and compares the end-effector
pose row by row, which catches both nondeterminism and tampering.
"""
import copy
import tempfile
from pathlib import Path

from momasim import DemonstrationRecord, preset, replay, run_scripted
from momasim.fixtures import bundled_script, door_arc_world

world = door_arc_world()
desc = preset("hsr-like")
script = bundled_script("door_arc")
print(f"script: {len(script)} signals, world {world.name!r}, task {world.task.kind!r}")

record, report = run_scripted(world, desc, script)
print(f"success={report['success']} progress={report['progress']:.2f} "
      f"rms_error={report['rms_error']:.4f} min_clearance={report['min_clearance']:.3f}")
print()

with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "door_arc.jsonl"
    record.save(path)
    size = path.stat().st_size
    print(f"saved {len(record.rows)} rows, {size} bytes")

    again, _ = run_scripted(world, desc, script)
    print(f"re-run produces identical bytes: {again.to_bytes() == record.to_bytes()}")

    audit = replay(path)
    print(f"replay: rows={audit.rows} max_pos_err={audit.max_position_error:.2e} "
          f"max_ang_err={audit.max_angle_error:.2e} within 1e-6: {audit.within(1e-6)}")
print()

# replay is an audit: nudge one logged pose and it pinpoints the row
doctored = copy.deepcopy(record.rows)
doctored[200]["ee"]["p"][0] += 1e-3
bad = replay(DemonstrationRecord(record.header, doctored))
print(f"after doctoring row 200: first_divergence={bad.first_divergence} "
      f"max_pos_err={bad.max_position_error:.2e}")
