"""
From raw guidance poses to motion plans
=======================================

A hand-guidance device streams timestamped poses. The inference layer
turns the recent history into one normalized OperatorSignal per tick
(exponentially weighted position and orientation deltas), and the signal
unrolls into a short pose plan for the agent.
"""
import numpy as np

from momasim import InferenceConfig, Pose, SignalHistory, UnitQuaternion, extrapolate_plan
from momasim.inference import infer_hand_guidance

cfg = InferenceConfig()
history = SignalHistory(cfg.history_capacity())

# simulate a steady hand moving 3 mm per sample along +x while twisting
q = UnitQuaternion.identity()
for k in range(cfg.history_capacity()):
    q = UnitQuaternion.from_axis_angle([0, 0, 1], 0.004) * q
    history.append(k / cfg.history_rate, Pose(np.array([0.003 * k, 0.0, 0.8]), q))

signal = infer_hand_guidance(history, cfg)
strength = np.linalg.norm(signal.v_signal) / cfg.res_training
print(f"inferred strength {strength:.2f}, per-step twist {signal.q_signal.angle():.4f} rad")

# the plan is a constant-curvature arc when the signal carries rotation
start = Pose(np.array([0.0, 0.0, 0.8]), UnitQuaternion.identity())
plan = extrapolate_plan(start, signal, cfg)
print(f"plan: {len(plan)} poses, spacing {plan.resolution:.3f} m, horizon {plan.horizon} m")

# precision mode shrinks the arc budget five-fold; step spacing shrinks
# with it so the plan never overshoots the budget
precise = infer_hand_guidance(history, cfg, precision=True)
plan_p = extrapolate_plan(start, precise, cfg)
arc = len(plan_p) * plan_p.resolution
print(f"precision plan: {len(plan_p)} poses, arc {arc:.3f} m <= {cfg.d_g_precision} m")

# a pause must clear the buffer; stale motion would otherwise leak into
# the weighted deltas when guidance resumes
history.clear()
resumed = infer_hand_guidance(history, cfg)
print(f"after pause: active={resumed.active}")
