/**
 * Browser entry point. Wires DOM events into the input tracker, the
 * websocket into the state mailbox, and a requestAnimationFrame loop into
 * the painter. Query parameter ?server=host:port picks the session
 * (default 127.0.0.1:8765, the server's documented default).
 */

import {
  DEFAULT_BINDINGS,
  InputTracker,
  PadSample,
  SignalStreamer,
  bindingsFromJson,
  bindingsToJson,
  loadStoredBindings,
  storeBindings,
} from "./input";
import { ViewState, defaultView, paintScene, sceneFromState } from "./render";
import { TeleopClient } from "./session";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function serverUrl(): string {
  const param = new URLSearchParams(window.location.search).get("server");
  return `ws://${param ?? "127.0.0.1:8765"}`;
}

function samplePad(): PadSample | null {
  if (!navigator.getGamepads) return null;
  for (const pad of navigator.getGamepads()) {
    if (pad && pad.connected) {
      return { axes: pad.axes, buttons: pad.buttons.map((b) => b.pressed) };
    }
  }
  return null;
}

function main(): void {
  const canvas = el<HTMLCanvasElement>("view");
  const status = el<HTMLDivElement>("status");
  const alertBox = el<HTMLDivElement>("alert");
  const ctx = canvas.getContext("2d");
  if (!ctx) throw new Error("canvas 2d context unavailable");

  const tracker = new InputTracker(loadStoredBindings(window.localStorage));
  const client = new TeleopClient(serverUrl(), {
    onOpen: () => {
      status.textContent = `connected to ${serverUrl()}`;
      streamer.resume();
      streamer.start();
    },
    onWorld: (world) => {
      view = defaultView(world, canvas.width, canvas.height);
      status.textContent = `${world.robotName} in a ${world.obstacles.length}-obstacle world`;
    },
    onServerError: (message) => {
      status.textContent = `server: ${message}`;
    },
    onDrop: () => {
      // input must never outlive the connection
      streamer.suppress();
      streamer.stop();
      alertBox.textContent = "connection lost; input suppressed";
      alertBox.style.display = "block";
    },
  });
  const streamer = new SignalStreamer(tracker, (text) => client.send(text));

  let view: ViewState | null = null;

  window.addEventListener("keydown", (ev) => {
    if (ev.repeat) return;
    streamer.handleKeyDown(ev.code);
    ev.preventDefault();
  });
  window.addEventListener("keyup", (ev) => {
    streamer.handleKeyUp(ev.code);
    ev.preventDefault();
  });
  window.addEventListener("blur", () => {
    // a tab switch must read as a deadman release
    tracker.clearKeys();
    streamer.emit();
  });

  el<HTMLButtonElement>("export-bindings").addEventListener("click", () => {
    const blob = new Blob([bindingsToJson(tracker.bindings)], { type: "application/json" });
    const link = document.createElement("a");
    link.href = URL.createObjectURL(blob);
    link.download = "teleop-bindings.json";
    link.click();
    URL.revokeObjectURL(link.href);
  });
  el<HTMLInputElement>("import-bindings").addEventListener("change", async (ev) => {
    const file = (ev.target as HTMLInputElement).files?.[0];
    if (!file) return;
    try {
      const bindings = bindingsFromJson(await file.text());
      storeBindings(window.localStorage, bindings);
      status.textContent = "bindings imported; reload to apply";
    } catch (err) {
      status.textContent = `bindings rejected: ${err}`;
    }
  });
  el<HTMLButtonElement>("reset-bindings").addEventListener("click", () => {
    storeBindings(window.localStorage, DEFAULT_BINDINGS);
    status.textContent = "bindings reset; reload to apply";
  });

  const frame = () => {
    tracker.setPad(samplePad());
    if (client.world && client.latest) {
      if (!view) view = defaultView(client.world, canvas.width, canvas.height);
      paintScene(ctx, sceneFromState(client.world, client.latest, view), view);
    }
    requestAnimationFrame(frame);
  };
  requestAnimationFrame(frame);
}

main();
