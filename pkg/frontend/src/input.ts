/**
 * Input capture: keyboard (primary, CI-friendly) and gamepad, mapped to
 * the signal channels. The deadman is a held key; releasing it emits an
 * inactive signal synchronously from the keyup handler, before any timer
 * or frame gets a chance to run. Precision is a latch, gripper keys act
 * while held, everything else is a binary deflection.
 */

import {
  ANGULAR_STEP_MAX,
  INACTIVE_SIGNAL,
  RES_TRAINING,
  SignalFields,
  Vec3,
  encodeSignal,
} from "./wire";

export interface AxisBinding {
  axis: number;
  sign: 1 | -1;
}

export interface InputBindings {
  keys: {
    // [positive key, negative key] as KeyboardEvent.code values
    translation: { x: [string, string]; y: [string, string]; z: [string, string] };
    rotation: { x: [string, string]; y: [string, string]; z: [string, string] };
    gripperOpen: string;
    gripperClose: string;
    precision: string; // toggle latch
    deadman: string; // hold, never a toggle
  };
  pad: {
    translation: [AxisBinding, AxisBinding, AxisBinding];
    rotation: [AxisBinding, AxisBinding, AxisBinding];
    gripperOpen: number;
    gripperClose: number;
    precision: number;
    deadman: number; // shoulder button, held
    deadzone: number;
  };
}

export const DEFAULT_BINDINGS: InputBindings = {
  keys: {
    translation: { x: ["KeyW", "KeyS"], y: ["KeyA", "KeyD"], z: ["KeyQ", "KeyE"] },
    rotation: { x: ["KeyU", "KeyO"], y: ["KeyI", "KeyK"], z: ["KeyJ", "KeyL"] },
    gripperOpen: "KeyR",
    gripperClose: "KeyF",
    precision: "KeyC",
    deadman: "Space",
  },
  pad: {
    translation: [
      { axis: 1, sign: -1 }, // left stick up = +x
      { axis: 0, sign: -1 },
      { axis: 3, sign: -1 }, // right stick up = +z
    ],
    rotation: [
      { axis: 2, sign: 1 },
      { axis: 5, sign: 1 },
      { axis: 4, sign: -1 },
    ],
    gripperOpen: 2,
    gripperClose: 0,
    precision: 3,
    deadman: 4, // left shoulder
    deadzone: 0.15,
  },
};

function keyChannels(b: InputBindings): string[] {
  const k = b.keys;
  return [
    ...k.translation.x,
    ...k.translation.y,
    ...k.translation.z,
    ...k.rotation.x,
    ...k.rotation.y,
    ...k.rotation.z,
    k.gripperOpen,
    k.gripperClose,
    k.precision,
    k.deadman,
  ];
}

/** Every channel bound exactly once. Throws on overlaps or blanks. */
export function validateBindings(b: InputBindings): void {
  const keys = keyChannels(b);
  if (keys.some((k) => !k)) throw new Error("every channel needs a key");
  const seen = new Set<string>();
  for (const k of keys) {
    if (seen.has(k)) throw new Error(`key ${k} bound to more than one channel`);
    seen.add(k);
  }
  const axes = [...b.pad.translation, ...b.pad.rotation].map((a) => a.axis);
  if (new Set(axes).size !== axes.length) {
    throw new Error("gamepad axis bound to more than one channel");
  }
}

/** Minimal slice of the Gamepad API the tracker reads. */
export interface PadSample {
  axes: readonly number[];
  buttons: readonly boolean[];
}

export class InputTracker {
  private pressed = new Set<string>();
  private precisionLatch = false;
  private pad: PadSample | null = null;

  constructor(readonly bindings: InputBindings = DEFAULT_BINDINGS) {
    validateBindings(bindings);
  }

  /** Returns true when this keydown is fresh (not keyboard auto-repeat). */
  keyDown(code: string): boolean {
    if (this.pressed.has(code)) return false;
    this.pressed.add(code);
    if (code === this.bindings.keys.precision) {
      this.precisionLatch = !this.precisionLatch;
    }
    return true;
  }

  /** Returns true when the deadman was released by this event. */
  keyUp(code: string): boolean {
    this.pressed.delete(code);
    return code === this.bindings.keys.deadman;
  }

  clearKeys(): void {
    this.pressed.clear();
  }

  setPad(sample: PadSample | null): void {
    this.pad = sample;
  }

  get precision(): boolean {
    return this.precisionLatch;
  }

  private axis(pair: [string, string], pad: AxisBinding): number {
    let v = 0;
    if (this.pressed.has(pair[0])) v += 1;
    if (this.pressed.has(pair[1])) v -= 1;
    if (v === 0 && this.pad) {
      const raw = (this.pad.axes[pad.axis] ?? 0) * pad.sign;
      if (Math.abs(raw) > this.bindings.pad.deadzone) {
        v = Math.max(-1, Math.min(1, raw));
      }
    }
    return v;
  }

  private button(index: number): boolean {
    return this.pad ? Boolean(this.pad.buttons[index]) : false;
  }

  deadmanHeld(): boolean {
    return this.pressed.has(this.bindings.keys.deadman) || this.button(this.bindings.pad.deadman);
  }

  /** Current signal fields; inactive whenever the deadman is up. */
  snapshot(): SignalFields {
    if (!this.deadmanHeld()) return INACTIVE_SIGNAL;
    const kb = this.bindings.keys;
    const pd = this.bindings.pad;
    const t: Vec3 = [
      this.axis(kb.translation.x, pd.translation[0]),
      this.axis(kb.translation.y, pd.translation[1]),
      this.axis(kb.translation.z, pd.translation[2]),
    ];
    const r: Vec3 = [
      this.axis(kb.rotation.x, pd.rotation[0]),
      this.axis(kb.rotation.y, pd.rotation[1]),
      this.axis(kb.rotation.z, pd.rotation[2]),
    ];
    const tMag = Math.hypot(t[0], t[1], t[2]);
    const rMag = Math.hypot(r[0], r[1], r[2]);
    const open = this.pressed.has(kb.gripperOpen) || this.button(pd.gripperOpen);
    const close = this.pressed.has(kb.gripperClose) || this.button(pd.gripperClose);
    return {
      // any deflection commands full signal strength; direction only
      v: tMag > 0 ? (t.map((c) => (c / tMag) * RES_TRAINING) as Vec3) : [0, 0, 0],
      axis: rMag > 0 ? (r.map((c) => c / rMag) as Vec3) : [0, 0, 1],
      angle: rMag > 0 ? Math.min(rMag, 1) * ANGULAR_STEP_MAX : 0,
      gripper: open === close ? "hold" : open ? "open" : "close",
      precision: this.precisionLatch || this.button(pd.precision),
      deadman: true,
    };
  }
}

/**
 * capture_and_stream: samples the tracker at a fixed rate and pushes
 * encoded signal frames through `send` with strictly increasing seq.
 * Suppressed while the connection is down.
 */
export class SignalStreamer {
  private seq = 0;
  private timer: ReturnType<typeof setInterval> | null = null;
  suppressed = false;

  constructor(
    readonly tracker: InputTracker,
    readonly send: (text: string) => void,
    readonly now: () => number = () => Date.now() / 1000,
    readonly rateHz: number = 50,
  ) {}

  get lastSeq(): number {
    return this.seq;
  }

  /** Encode and send one signal from the current input state. */
  emit(): void {
    if (this.suppressed) return;
    this.seq += 1;
    this.send(encodeSignal(this.seq, this.now(), this.tracker.snapshot()));
  }

  /** Keyup path: emitting here keeps deadman release inside the same
   * event turn, ahead of any queued sample tick. */
  handleKeyUp(code: string): void {
    if (this.tracker.keyUp(code)) this.emit();
  }

  handleKeyDown(code: string): void {
    this.tracker.keyDown(code);
  }

  start(): void {
    if (this.timer !== null) return;
    this.timer = setInterval(() => this.emit(), 1000 / this.rateHz);
  }

  stop(): void {
    if (this.timer !== null) {
      clearInterval(this.timer);
      this.timer = null;
    }
  }

  suppress(): void {
    this.suppressed = true;
    this.tracker.clearKeys();
  }

  resume(): void {
    this.suppressed = false;
  }
}

// -- binding profiles -----------------------------------------------------

export function bindingsToJson(b: InputBindings): string {
  return JSON.stringify(b, null, 2);
}

export function bindingsFromJson(text: string): InputBindings {
  const doc = JSON.parse(text) as InputBindings;
  validateBindings(doc);
  return doc;
}

const STORAGE_KEY = "teleop_ui.bindings";

export function loadStoredBindings(storage: Pick<Storage, "getItem">): InputBindings {
  const raw = storage.getItem(STORAGE_KEY);
  if (raw === null) return DEFAULT_BINDINGS;
  try {
    return bindingsFromJson(raw);
  } catch {
    return DEFAULT_BINDINGS;
  }
}

export function storeBindings(storage: Pick<Storage, "setItem">, b: InputBindings): void {
  storage.setItem(STORAGE_KEY, bindingsToJson(b));
}
