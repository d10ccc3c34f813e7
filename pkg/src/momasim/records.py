"""Demonstration files: JSON lines, one header then one row per tick.

Every float is written with 17 significant digits through the canonical
serializer, so load -> save reproduces a file byte for byte. Readers report
the last row that parsed cleanly when a file is damaged.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .agent import BaseCommand
from .geometry import Pose, UnitQuaternion
from .inference import Gripper, OperatorSignal
from .robot import JointState
from .serialization import canonical_dumps

RECORD_SCHEMA_VERSION = 1

ROW_KEYS = ("tick", "t", "base", "torso", "arm", "ee", "gripper", "signal", "command", "collided")


class RecordFormatError(ValueError):
    pass


def pose_to_doc(pose: Pose) -> dict:
    return {
        "p": [float(v) for v in pose.position],
        "q": [float(v) for v in pose.orientation.wxyz],
    }


def pose_from_doc(doc: dict) -> Pose:
    return Pose(np.array(doc["p"], dtype=float), UnitQuaternion.from_wxyz(doc["q"]))


def signal_to_doc(sig: OperatorSignal) -> dict:
    return {
        "active": bool(sig.active),
        "precision": bool(sig.precision),
        "v": [float(v) for v in sig.v_signal],
        "q": [float(v) for v in sig.q_signal.wxyz],
        "gripper": sig.gripper.value,
    }


def signal_from_doc(doc: dict) -> OperatorSignal:
    return OperatorSignal(
        v_signal=np.array(doc["v"], dtype=float),
        q_signal=UnitQuaternion.from_wxyz(doc["q"]),
        gripper=Gripper(doc["gripper"]),
        precision=bool(doc["precision"]),
        active=bool(doc["active"]),
    )


def command_to_doc(cmd: BaseCommand) -> dict:
    return {
        "v_base": [float(v) for v in cmd.v_base],
        "v_torso": float(cmd.v_torso),
        "ee_scaling": float(cmd.ee_scaling),
    }


def command_from_doc(doc: dict) -> BaseCommand:
    return BaseCommand(
        v_base=np.array(doc["v_base"], dtype=float),
        v_torso=float(doc["v_torso"]),
        ee_scaling=float(doc["ee_scaling"]),
    )


def joint_state_to_doc(state: JointState) -> dict:
    return {
        "base": [float(v) for v in state.base],
        "torso": float(state.torso),
        "arm": [float(v) for v in state.arm],
    }


def joint_state_from_doc(doc: dict) -> JointState:
    return JointState(
        base=np.array(doc["base"], dtype=float),
        torso=float(doc["torso"]),
        arm=np.array(doc["arm"], dtype=float),
    )


@dataclass
class DemonstrationRecord:
    """One rollout: a header dict plus per-tick row dicts.

    The header inlines everything replay needs (robot, world, configs,
    policy, start state); rows carry t, robot state, EE pose, gripper,
    the operator signal, the agent command, and the collision flag.
    """

    header: dict
    rows: list[dict] = field(default_factory=list)

    def to_bytes(self) -> bytes:
        lines = [canonical_dumps(self.header)]
        lines.extend(canonical_dumps(row) for row in self.rows)
        return ("\n".join(lines) + "\n").encode("utf-8")

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def from_bytes(cls, data: bytes, source: str = "<bytes>") -> "DemonstrationRecord":
        text = data.decode("utf-8")
        lines = [ln for ln in text.split("\n") if ln.strip()]
        if not lines:
            raise RecordFormatError(f"{source}: empty record")
        header = _parse_line(lines[0], source, line_no=1, last_good=None)
        if header.get("schema_version") != RECORD_SCHEMA_VERSION:
            raise RecordFormatError(
                f"{source}: unsupported schema_version {header.get('schema_version')!r}"
            )
        if header.get("kind") != "demonstration":
            raise RecordFormatError(f"{source}: not a demonstration record")
        tick_s = float(header["tick_s"])
        rows: list[dict] = []
        for line_no, line in enumerate(lines[1:], start=2):
            row = _parse_line(line, source, line_no, last_good=len(rows) - 1)
            _validate_row(row, len(rows), tick_s, source)
            rows.append(row)
        return cls(header, rows)

    @classmethod
    def load(cls, path) -> "DemonstrationRecord":
        p = Path(path)
        return cls.from_bytes(p.read_bytes(), source=p.name)

    def __len__(self) -> int:
        return len(self.rows)


def _parse_line(line: str, source: str, line_no: int, last_good) -> dict:
    try:
        doc = json.loads(line)
    except json.JSONDecodeError as exc:
        where = "header" if last_good is None else f"last good row {last_good}"
        raise RecordFormatError(
            f"{source}: line {line_no} is not valid JSON ({where}): {exc.msg}"
        ) from exc
    if not isinstance(doc, dict):
        raise RecordFormatError(f"{source}: line {line_no} is not an object")
    return doc


def _validate_row(row: dict, index: int, tick_s: float, source: str) -> None:
    missing = [k for k in ROW_KEYS if k not in row]
    if missing:
        raise RecordFormatError(
            f"{source}: row {index} missing fields {missing} (last good row {index - 1})"
        )
    if row["tick"] != index:
        raise RecordFormatError(
            f"{source}: row {index} has tick {row['tick']} (last good row {index - 1})"
        )
    # ticks are equally spaced by construction: t must be exactly tick*tick_s
    if row["t"] != row["tick"] * tick_s:
        raise RecordFormatError(
            f"{source}: row {index} timestamp {row['t']!r} != tick*tick_s"
            f" (last good row {index - 1})"
        )
