/**
 * WebSocket session: network callbacks only store the freshest state;
 * the render loop picks it up on its own schedule. One state slot, one
 * world slot, no queue.
 */

import { ServerMessage, StateMessage, WireError, WorldMessage, decodeServerMessage } from "./wire";

export interface SocketLike {
  send(data: string): void;
  close(): void;
  onopen: ((ev?: unknown) => void) | null;
  onmessage: ((ev: { data: unknown }) => void) | null;
  onclose: ((ev?: unknown) => void) | null;
  onerror: ((ev?: unknown) => void) | null;
}

export interface SessionEvents {
  onOpen?: () => void;
  onWorld?: (world: WorldMessage) => void;
  onServerError?: (message: string) => void;
  onDrop?: () => void;
  diagnostic?: (text: string) => void;
}

export class TeleopClient {
  world: WorldMessage | null = null;
  latest: StateMessage | null = null;
  open = false;
  framesSkipped = 0;

  private socket: SocketLike;

  constructor(
    url: string,
    readonly events: SessionEvents = {},
    connect: (url: string) => SocketLike = (u) => new WebSocket(u) as unknown as SocketLike,
  ) {
    this.socket = connect(url);
    this.socket.onopen = () => {
      this.open = true;
      this.events.onOpen?.();
    };
    this.socket.onmessage = (ev) => this.handleFrame(String(ev.data));
    let dropped = false;
    const drop = () => {
      if (dropped) return; // error and close both fire on a failed socket
      dropped = true;
      this.open = false;
      this.events.onDrop?.();
    };
    this.socket.onclose = drop;
    this.socket.onerror = drop;
  }

  handleFrame(text: string): void {
    let msg: ServerMessage;
    try {
      msg = decodeServerMessage(text);
    } catch (err) {
      // malformed frame: skip it, keep the session alive
      this.framesSkipped += 1;
      const reason = err instanceof WireError ? err.message : String(err);
      (this.events.diagnostic ?? console.warn)(`skipped frame: ${reason}`);
      return;
    }
    if (msg.kind === "world") {
      this.world = msg;
      this.events.onWorld?.(msg);
    } else if (msg.kind === "state") {
      this.latest = msg;
    } else {
      this.events.onServerError?.(msg.message);
    }
  }

  send(text: string): void {
    if (this.open) this.socket.send(text);
  }

  close(): void {
    this.socket.close();
  }
}
