"""
Damped-least-squares IK under joint and velocity limits
=======================================================

diff_ik maps a desired end-effector twist to torso+arm rates. Three
behaviors matter in teleoperation: rates respect velocity limits, joints
pinned at a position limit stop contributing, and a secondary objective
(mid-range pull, or a torso rate requested by the base agent) acts only
through the nullspace of the task. The last one needs kinematic
redundancy, so the five-joint and seven-joint presets behave differently.
"""
import numpy as np

from momasim import JointState, Twist, diff_ik, forward_kinematics, jacobian, manipulability, neutral_state, preset

desc = preset("hsr-like")
state = neutral_state(desc)

twist = Twist(np.array([0.05, 0.0, 0.0]), np.zeros(3))
qdot = diff_ik(desc, state, twist)
limits = np.array([j.vel_limit for j in desc.driven_joints])
print("rates:", np.round(qdot, 3))
print("within velocity limits:", bool(np.all(np.abs(qdot) <= limits + 1e-12)))

achieved = jacobian(desc, state) @ qdot
print(f"achieved linear velocity: {np.round(achieved[:3], 3)} (damping trades accuracy for conditioning)")
print()

# pin the shoulder at its upper limit (arm pitched fully down) and ask for
# more downward motion; the solver must route the task elsewhere
pinned = JointState(state.base.copy(), state.torso, state.arm.copy())
pinned.arm[0] = desc.arm[0].limits[1]
qdot_pinned = diff_ik(desc, pinned, Twist(np.array([0.0, 0.0, -0.2]), np.zeros(3)))
print(f"shoulder at limit: its rate is {qdot_pinned[1]:+.4f}, torso takes {qdot_pinned[0]:+.4f}")
print()

# the joint bias acts through the nullspace projector, so on this arm
# (five driven joints, six task dimensions, no redundancy) it is inert;
# the redundant seven-joint arm actually absorbs it
bias = np.zeros(desc.n_driven)
bias[0] = 0.1
with_bias = diff_ik(desc, state, twist, joint_bias=bias)
print(f"hsr-like torso rate: {qdot[0]:+.4f} without bias, {with_bias[0]:+.4f} with")

rdesc = preset("fmm-like")
rstate = neutral_state(rdesc)
rbias = np.zeros(rdesc.n_driven)
rbias[0] = 0.1
r_plain = diff_ik(rdesc, rstate, twist)
r_biased = diff_ik(rdesc, rstate, twist, joint_bias=rbias)
task_change = np.linalg.norm(jacobian(rdesc, rstate) @ (r_biased - r_plain))
print(f"fmm-like torso rate: {r_plain[0]:+.4f} without bias, {r_biased[0]:+.4f} with")
print(f"change in the fmm-like EE task from the bias: {task_change:.2e}")
print()

# manipulability collapses toward workspace boundaries, which is what the
# agent's tracking factor reacts to by repositioning the base
stretched = JointState(np.zeros(3), 0.35, np.array([-0.05, 0.0, 0.0, 0.0]))
print(f"manipulability neutral   {manipulability(desc, state):.2e}")
print(f"manipulability stretched {manipulability(desc, stretched):.2e}")
print(f"ee height stretched: {forward_kinematics(desc, stretched).position[2]:.3f} m")
