"""Realtime session host: the WebSocket teleoperation endpoint.

One session owns one simulator. Signals arrive over the socket as JSON
text frames, land in a latest-wins mailbox, and the tick loop samples the
mailbox once per tick; a signal older than three ticks is treated as a
released deadman (inactive, pause semantics). The first connection is the
operator, later connections observe: they receive every state broadcast
but their signals are answered with an error and ignored.

Wire messages are JSON objects discriminated by "type" and always carry
schema_version. Construction order of the fields below is the canonical
key order for protocol fixtures; canonical_dumps preserves it, so a
parse/serialize cycle is byte-identical.
"""

from __future__ import annotations

import asyncio
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import UnitQuaternion
from .inference import Gripper, OperatorSignal
from .records import DemonstrationRecord
from .robot import preset, preset_names
from .serialization import canonical_dumps
from .simulator import Simulator, SimulatorConfig
from .world import World, load_world, world_to_doc

PROTOCOL_SCHEMA_VERSION = 1
DEFAULT_PORT = 8765
STALE_TICKS = 3  # a signal this many ticks old still counts; older pauses

INTERFACES = ("joystick", "hand_guidance", "scripted")


class ProtocolError(ValueError):
    pass


@dataclass
class SessionConfig:
    robot: str = "hsr-like"
    world: str | None = None
    tick_hz: float = 50.0
    interface: str = "joystick"
    precision_default: bool = False
    record_path: str | None = None
    host: str = "127.0.0.1"
    port: int = DEFAULT_PORT

    def __post_init__(self):
        if not (10.0 <= self.tick_hz <= 200.0):
            raise ValueError(f"tick_hz {self.tick_hz} outside [10, 200]")
        if self.interface not in INTERFACES:
            raise ValueError(f"unknown interface {self.interface!r}; expected one of {INTERFACES}")
        if self.robot not in preset_names():
            raise ValueError(f"unknown robot preset {self.robot!r}")

    @classmethod
    def from_json_dict(cls, doc: dict) -> "SessionConfig":
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in doc.items() if k in known})


# -- wire message codec -------------------------------------------------------


def encode_message(doc: dict) -> str:
    return canonical_dumps(doc)


def error_message(text: str) -> dict:
    return {"type": "error", "schema_version": PROTOCOL_SCHEMA_VERSION, "message": text}


def _pose_doc(pose) -> dict:
    return {
        "pos": [float(v) for v in pose.position],
        "quat": [float(v) for v in pose.orientation.wxyz],
    }


def world_message(world: World, desc, tick_s: float) -> dict:
    return {
        "type": "world",
        "schema_version": PROTOCOL_SCHEMA_VERSION,
        "tick_s": float(tick_s),
        "robot": desc.to_json_dict(),
        "world": world_to_doc(world),
    }


def state_message(sim: Simulator) -> dict:
    st = sim.state
    cmd = sim.last_command
    return {
        "type": "state",
        "schema_version": PROTOCOL_SCHEMA_VERSION,
        "tick": int(st.tick),
        "base": [float(v) for v in st.joints.base],
        "torso": float(st.joints.torso),
        "arm": [float(v) for v in st.joints.arm],
        "ee": _pose_doc(st.ee),
        "plan": [_pose_doc(p) for p in st.plan.poses],
        "gripper": st.gripper.value,
        "scaling": float(cmd.ee_scaling) if cmd is not None else 1.0,
        "clearance": _finite_or_null(sim.clearance),
        "collided": bool(st.collided),
        "task": {
            "progress": float(st.metrics.progress),
            "rms_error": float(st.metrics.rms_error),
            "success": bool(sim.report()["success"]),
        },
    }


def _finite_or_null(x: float):
    return float(x) if math.isfinite(x) else None


def signal_message(
    seq: int,
    t_client: float,
    signal: OperatorSignal,
    *,
    deadman: bool | None = None,
) -> dict:
    """Encode an OperatorSignal as the client would send it."""
    axis, angle = signal.q_signal.axis_angle()
    return {
        "type": "signal",
        "schema_version": PROTOCOL_SCHEMA_VERSION,
        "seq": int(seq),
        "t_client": float(t_client),
        "v": [float(v) for v in signal.v_signal],
        "rot": {"axis": [float(v) for v in axis], "angle": float(angle)},
        "gripper": signal.gripper.value,
        "precision": bool(signal.precision),
        "deadman": bool(signal.active if deadman is None else deadman),
    }


def _vec3(value, name: str) -> np.ndarray:
    try:
        arr = np.asarray(value, dtype=float).reshape(3)
    except Exception:
        raise ProtocolError(f"field {name!r} must be three numbers") from None
    if not np.all(np.isfinite(arr)):
        raise ProtocolError(f"field {name!r} must be finite")
    return arr


def decode_signal(doc: dict) -> tuple[int, OperatorSignal]:
    """Parse a "signal" message into (seq, OperatorSignal).

    Unknown fields are ignored. Releasing the deadman always yields an
    inactive signal, whatever the motion channels say.
    """
    if doc.get("schema_version") != PROTOCOL_SCHEMA_VERSION:
        raise ProtocolError(f"unsupported schema_version {doc.get('schema_version')!r}")
    seq = doc.get("seq")
    if not isinstance(seq, int):
        raise ProtocolError("field 'seq' must be an integer")
    deadman = bool(doc.get("deadman", False))
    if not deadman:
        return seq, OperatorSignal.inactive()

    v = _vec3(doc.get("v", (0.0, 0.0, 0.0)), "v")
    if "rot" in doc:
        rot = doc["rot"]
        if not isinstance(rot, dict) or "axis" not in rot or "angle" not in rot:
            raise ProtocolError("field 'rot' must carry 'axis' and 'angle'")
        axis = _vec3(rot["axis"], "rot.axis")
        try:
            angle = float(rot["angle"])
        except (TypeError, ValueError):
            raise ProtocolError("field 'rot.angle' must be a number") from None
        if float(np.linalg.norm(axis)) < 1e-12:
            q = UnitQuaternion.identity()
        else:
            q = UnitQuaternion.from_axis_angle(axis, angle)
    elif "axes" in doc:
        q = UnitQuaternion.from_rotvec(_vec3(doc["axes"], "axes"))
    else:
        q = UnitQuaternion.identity()

    gripper_raw = doc.get("gripper", "hold")
    try:
        gripper = Gripper(gripper_raw)
    except ValueError:
        raise ProtocolError(f"unknown gripper {gripper_raw!r}") from None
    return seq, OperatorSignal(
        v_signal=v,
        q_signal=q,
        gripper=gripper,
        precision=bool(doc.get("precision", False)),
        active=True,
    )


# -- session ------------------------------------------------------------------


class TeleopSession:
    """Latest-wins mailbox in front of one simulator.

    offer() ingests a decoded wire document and returns an error document
    for the sender when the message is unusable (the connection stays up);
    tick() advances the simulator one step using the freshest valid signal
    and returns the state broadcast.
    """

    def __init__(
        self,
        world: World,
        desc,
        *,
        config: SimulatorConfig | None = None,
        stale_ticks: int = STALE_TICKS,
        record: bool = False,
    ):
        self.sim = Simulator(world, desc, config=config)
        self.stale_ticks = stale_ticks
        self._signal: OperatorSignal | None = None
        self._signal_tick = -1
        self._last_seq = -1
        self.rows: list[dict] | None = [] if record else None
        self._header = self.sim.header() if record else None

    def offer(self, doc) -> dict | None:
        if not isinstance(doc, dict):
            return error_message("message must be a JSON object")
        kind = doc.get("type")
        if kind != "signal":
            return error_message(f"unknown type {kind!r}")
        try:
            seq, signal = decode_signal(doc)
        except ProtocolError as err:
            return error_message(str(err))
        if seq <= self._last_seq:
            return None  # out of order: freshness wins, silently drop
        self._last_seq = seq
        self._signal = signal
        self._signal_tick = self.sim.state.tick
        return None

    def sample(self) -> OperatorSignal:
        if self._signal is None:
            return OperatorSignal.inactive()
        if self.sim.state.tick - self._signal_tick >= self.stale_ticks:
            return OperatorSignal.inactive()  # deadman semantics on staleness
        return self._signal

    def tick(self) -> dict:
        signal = self.sample()
        _, cmd = self.sim.step(signal)
        if self.rows is not None:
            self.rows.append(self.sim.row(len(self.rows), signal, cmd))
        return state_message(self.sim)

    def record(self) -> DemonstrationRecord:
        if self.rows is None or self._header is None:
            raise ValueError("session was not recording")
        return DemonstrationRecord(self._header, self.rows)


# -- server -------------------------------------------------------------------


async def serve_session(
    session: TeleopSession,
    world_doc: dict,
    *,
    host: str = "127.0.0.1",
    port: int = DEFAULT_PORT,
    tick_hz: float = 50.0,
    ready: asyncio.Event | None = None,
    bound: list | None = None,
):
    """Run one session until cancelled. Ephemeral port via port=0."""
    from websockets.asyncio.server import broadcast, serve

    operator: list = []  # at most one connection object
    clients: set = set()
    world_text = encode_message(world_doc)

    async def handler(ws):
        clients.add(ws)
        is_operator = not operator
        if is_operator:
            operator.append(ws)
        try:
            await ws.send(world_text)
            async for raw in ws:
                try:
                    doc = json.loads(raw)
                except (json.JSONDecodeError, UnicodeDecodeError):
                    await ws.send(encode_message(error_message("cannot parse message as JSON")))
                    continue
                if not is_operator:
                    await ws.send(
                        encode_message(error_message("not the operator; signal ignored"))
                    )
                    continue
                reply = session.offer(doc)
                if reply is not None:
                    await ws.send(encode_message(reply))
        finally:
            clients.discard(ws)
            if is_operator:
                operator.clear()

    async def tick_loop():
        period = 1.0 / tick_hz
        loop = asyncio.get_running_loop()
        next_at = loop.time()
        while True:
            state = session.tick()
            if clients:
                broadcast(clients, encode_message(state))
            next_at += period
            await asyncio.sleep(max(0.0, next_at - loop.time()))

    async with serve(handler, host, port) as server:
        if bound is not None:
            bound.extend(sock.getsockname() for sock in server.sockets)
        if ready is not None:
            ready.set()
        ticker = asyncio.create_task(tick_loop())
        try:
            await server.serve_forever()
        finally:
            ticker.cancel()


def serve(cfg: SessionConfig) -> None:
    """Blocking entry point: load the world, host the session, tick forever."""
    if cfg.world is None:
        raise ValueError("a world file is required to serve a session")
    world = load_world(cfg.world)
    desc = preset(cfg.robot)
    tick_s = 1.0 / cfg.tick_hz
    session = TeleopSession(
        world,
        desc,
        config=SimulatorConfig(tick_s=tick_s),
        record=cfg.record_path is not None,
    )
    doc = world_message(world, desc, tick_s)
    try:
        asyncio.run(
            serve_session(
                session, doc, host=cfg.host, port=cfg.port, tick_hz=cfg.tick_hz
            )
        )
    except KeyboardInterrupt:
        pass
    finally:
        if cfg.record_path is not None and session.rows:
            session.record().save(cfg.record_path)
