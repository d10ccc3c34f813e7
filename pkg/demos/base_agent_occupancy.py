"""
What the base agent sees and does near furniture
================================================

The agent's observation is deliberately small: the desired EE twist in the
base frame, the plan subgoal, and a boolean occupancy window centered on
the base. This script rasterizes the window next to the clean-table
furniture, runs the reference policy once, and then walks the base toward
the table edge to show the speed factor collapsing.
"""
import numpy as np

from momasim import (
    AgentConfig,
    InferenceConfig,
    JointState,
    OperatorSignal,
    build_observation,
    extrapolate_plan,
    forward_kinematics,
    preset,
    reference_policy,
)
from momasim.agent import obstacle_speed_factor, rasterize_occupancy
from momasim.fixtures import clean_table_world

world = clean_table_world()
desc = preset("hsr-like")
agent_cfg = AgentConfig()
inf_cfg = InferenceConfig()

# stand half a meter from the table's long edge, facing it
state = JointState(np.array([1.4, 0.0, np.pi / 2]), 0.15, np.array([-0.45, 0.35, 0.85, 0.0]))

window = rasterize_occupancy(world, state, agent_cfg, tick=0)
occupied = window.occupied_xy()
print(f"window: {window.side_cells}x{window.side_cells} cells of {window.cell_size} m")
print(f"occupied cells: {len(occupied)}, nearest at {np.linalg.norm(occupied, axis=1).min():.3f} m")
print()

# coarse render, base frame: +x (toward the table) up, +y left
step = 4
marks = window.grid[::step, ::step]
half = marks.shape[0] // 2
for i in range(marks.shape[0] - 1, -1, -1):
    row = "".join(
        "R" if (i == half and j == half) else ("#" if marks[i, j] else ".")
        for j in range(marks.shape[1] - 1, -1, -1)
    )
    print(" " + row)
print()

# a forward guidance signal, extrapolated into a plan, closes the loop
ee = forward_kinematics(desc, state)
heading = np.array([np.cos(state.base[2]), np.sin(state.base[2]), 0.0])
signal = OperatorSignal(v_signal=0.1 * heading, active=True)
plan = extrapolate_plan(ee, signal, inf_cfg)
obs = build_observation(world, desc, state, plan, False, 0.02, agent_cfg, inf_cfg)
cmd = reference_policy(obs, desc, agent_cfg)
print(f"base twist  [{cmd.v_base[0]:+.3f} {cmd.v_base[1]:+.3f} {cmd.v_base[2]:+.3f}]")
print(f"torso rate  {cmd.v_torso:+.3f}")
print(f"ee scaling  {cmd.ee_scaling:.3f}")
print()

# the obstacle factor alone, as a function of standoff from the table edge
inflation = desc.base_radius + agent_cfg.inflation_margin
print("standoff -> obstacle speed factor")
for standoff in (1.2, 0.9, 0.7, 0.5, 0.4, 0.35):
    probe = JointState(np.array([1.4, 0.4 - standoff, np.pi / 2]), state.torso, state.arm.copy())
    w = rasterize_occupancy(world, probe, agent_cfg, tick=0)
    print(f"  {standoff:4.2f} m   {obstacle_speed_factor(w, inflation, agent_cfg):.3f}")
