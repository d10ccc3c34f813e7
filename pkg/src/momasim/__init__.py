"""momasim: deterministic kinematic simulation toolkit for whole-body
mobile-manipulator teleoperation, with operator-signal inference, a
pluggable base agent, and task-parameterized imitation."""

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
    reference_policy,
)
from momasim.geometry import (
    AmbiguousAverageError,
    Pose,
    Twist,
    UnitQuaternion,
    average_quaternions,
)
from momasim.imitation import (
    FitError,
    ImitationConfig,
    SkillModel,
    fit_skill,
    rollout,
)
from momasim.inference import (
    Gripper,
    InferenceConfig,
    MotionPlan,
    OperatorSignal,
    SignalHistory,
    extrapolate_plan,
    infer_hand_guidance,
    infer_joystick,
)
from momasim.records import DemonstrationRecord, RecordFormatError
from momasim.robot import (
    JointSpec,
    JointState,
    RobotDescription,
    diff_ik,
    forward_kinematics,
    jacobian,
    load_robot,
    manipulability,
    neutral_state,
    preset,
    preset_names,
)
from momasim.scripting import (
    VirtualOperator,
    load_script,
    perturbed_start,
    record_demonstration,
    save_script,
)
from momasim.serialization import canonical_dumps, format_float
from momasim.service import ProtocolError, SessionConfig, TeleopSession, serve
from momasim.simulator import (
    ReplayReport,
    SimState,
    Simulator,
    SimulatorConfig,
    replay,
    run_scripted,
    world_clearance,
)
from momasim.world import Obstacle, TaskFrameSpec, TaskSpec, World, load_world, save_world

__version__ = "0.1.0"

__all__ = [
    "AgentConfig",
    "AgentObservation",
    "AmbiguousAverageError",
    "BaseCommand",
    "DemonstrationRecord",
    "FitError",
    "Gripper",
    "ImitationConfig",
    "InferenceConfig",
    "JointSpec",
    "JointState",
    "LinearPolicy",
    "MotionPlan",
    "Obstacle",
    "OccupancyWindow",
    "OperatorSignal",
    "Pose",
    "PolicySchemaError",
    "ProtocolError",
    "RecordFormatError",
    "ReferencePolicy",
    "ReplayReport",
    "RobotDescription",
    "SessionConfig",
    "SignalHistory",
    "SimState",
    "SimulatorConfig",
    "Simulator",
    "SkillModel",
    "TaskFrameSpec",
    "TaskSpec",
    "TeleopSession",
    "Twist",
    "UnitQuaternion",
    "VirtualOperator",
    "World",
    "average_quaternions",
    "build_observation",
    "canonical_dumps",
    "diff_ik",
    "extrapolate_plan",
    "fit_skill",
    "format_float",
    "forward_kinematics",
    "infer_hand_guidance",
    "infer_joystick",
    "jacobian",
    "load_external_policy",
    "load_robot",
    "load_script",
    "load_world",
    "manipulability",
    "neutral_state",
    "perturbed_start",
    "preset",
    "preset_names",
    "record_demonstration",
    "reference_policy",
    "replay",
    "rollout",
    "run_scripted",
    "save_script",
    "save_world",
    "serve",
    "world_clearance",
    "__version__",
]
