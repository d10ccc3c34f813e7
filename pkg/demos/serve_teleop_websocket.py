"""
Hosting a live teleop session over a websocket
==============================================

serve_session runs one simulator at a fixed tick rate and broadcasts the
state to every connected client; the first connection is the operator, the
rest are viewers. This script starts a server on an ephemeral port, drives
it with a synthetic operator for a second of simulated time, releases the
deadman, and shows a second client being refused write access.
"""
import asyncio
import json

import websockets

from momasim import OperatorSignal, preset
from momasim.fixtures import clean_table_world
from momasim.service import TeleopSession, encode_message, serve_session, signal_message, world_message

TICK_HZ = 50.0


async def main():
    world = clean_table_world()
    desc = preset("hsr-like")
    session = TeleopSession(world, desc)

    ready = asyncio.Event()
    bound: list = []
    server = asyncio.create_task(
        serve_session(
            session,
            world_message(world, desc, 1.0 / TICK_HZ),
            host="127.0.0.1",
            port=0,
            tick_hz=TICK_HZ,
            ready=ready,
            bound=bound,
        )
    )
    await ready.wait()
    port = bound[0][1]
    uri = f"ws://127.0.0.1:{port}"
    print(f"serving on {uri}")

    async with websockets.connect(uri, close_timeout=0.2) as ws:
        hello = json.loads(await ws.recv())
        print(f"hello: type={hello['type']!r} robot={hello['robot']['name']!r} "
              f"tick_s={hello['tick_s']}")

        # hold the deadman and push forward; one signal per received state
        drive = OperatorSignal(v_signal=[0.05, 0.0, 0.0], active=True)
        seq = 0
        state = None
        for _ in range(50):
            seq += 1
            await ws.send(encode_message(signal_message(seq, seq / TICK_HZ, drive)))
            state = json.loads(await ws.recv())
        x_driving = state["ee"]["pos"][0]
        print(f"after 50 driven ticks: tick={state['tick']} ee_x={x_driving:.4f} "
              f"scaling={state['scaling']:.3f} plan={len(state['plan'])} poses")

        # release the deadman: the signal goes inactive and the plan clears
        seq += 1
        await ws.send(encode_message(signal_message(seq, seq / TICK_HZ, OperatorSignal.inactive())))
        for _ in range(10):
            state = json.loads(await ws.recv())
        print(f"after release: tick={state['tick']} ee_x={state['ee']['pos'][0]:.4f} "
              f"(moved {state['ee']['pos'][0] - x_driving:+.2e}), plan={len(state['plan'])} poses")

        # a second connection may watch but not steer
        async with websockets.connect(uri, close_timeout=0.2) as viewer:
            await viewer.recv()  # world hello
            await viewer.send(encode_message(signal_message(1, 0.0, drive)))
            while True:
                doc = json.loads(await viewer.recv())
                if doc["type"] == "error":
                    print(f"viewer write refused: {doc['message']!r}")
                    break

    server.cancel()
    try:
        await server
    except asyncio.CancelledError:
        pass


asyncio.run(main())
