/**
 * Canonical wire codec for the teleop protocol.
 *
 * The server writes canonical JSON: object keys in construction order,
 * compact separators, floats with 17 significant digits (integral floats
 * as "x.0"), ints bare. A parse/serialize cycle must give back the exact
 * bytes, so the parser remembers whether each number was written as an
 * int or a float and objects are kept as Maps (plain JS objects reorder
 * integer-like keys). JSON.parse handles the value-level decoding for the
 * app; this module owns conformance and outgoing messages.
 */

export const PROTOCOL_SCHEMA_VERSION = 1;

// server-side extrapolation defaults the client mirrors when mapping
// stick deflection to a signal
export const RES_TRAINING = 0.1;
export const ANGULAR_STEP_MAX = 0.1875;

export class WireError extends Error {}

export class WireNum {
  constructor(
    readonly value: number,
    readonly isInt: boolean,
  ) {}
}

export type WireValue = null | boolean | string | WireNum | WireValue[] | WireMap;
export type WireMap = Map<string, WireValue>;

// -- float formatting ---------------------------------------------------------

/** Mirror of the server's float writer: "x.0" for integral values below
 * 1e16, otherwise 17 significant digits in printf %g conventions
 * (scientific outside [1e-4, 1e17), trailing zeros stripped). */
export function formatFloat(x: number): string {
  if (!Number.isFinite(x)) {
    throw new WireError("non-finite floats are not serializable");
  }
  if (Number.isInteger(x) && Math.abs(x) < 1e16) {
    if (Object.is(x, -0)) return "-0.0";
    return x.toFixed(1);
  }
  return formatG17(x);
}

function formatG17(x: number): string {
  const neg = x < 0;
  const exp = Math.abs(x).toExponential(16); // "d.dddddddddddddddde±k"
  const eIdx = exp.indexOf("e");
  let digits = exp.slice(0, eIdx).replace(".", "");
  const e10 = parseInt(exp.slice(eIdx + 1), 10);
  digits = digits.replace(/0+$/, "");
  if (digits === "") digits = "0";

  let body: string;
  if (e10 < -4 || e10 >= 17) {
    const mantissa = digits.length > 1 ? `${digits[0]}.${digits.slice(1)}` : digits;
    const sign = e10 < 0 ? "-" : "+";
    const mag = String(Math.abs(e10)).padStart(2, "0");
    body = `${mantissa}e${sign}${mag}`;
  } else if (e10 >= digits.length - 1) {
    body = digits + "0".repeat(e10 - digits.length + 1);
  } else if (e10 >= 0) {
    body = `${digits.slice(0, e10 + 1)}.${digits.slice(e10 + 1)}`;
  } else {
    body = `0.${"0".repeat(-e10 - 1)}${digits}`;
  }
  return neg ? `-${body}` : body;
}

// -- serializer ---------------------------------------------------------------

const ESCAPES: Record<string, string> = {
  '"': '\\"',
  "\\": "\\\\",
  "\n": "\\n",
  "\r": "\\r",
  "\t": "\\t",
  "\b": "\\b",
  "\f": "\\f",
};

function escapeString(s: string): string {
  let out = '"';
  for (const ch of s) {
    const esc = ESCAPES[ch];
    if (esc !== undefined) {
      out += esc;
    } else if (ch < " ") {
      out += `\\u${ch.charCodeAt(0).toString(16).padStart(4, "0")}`;
    } else {
      out += ch;
    }
  }
  return out + '"';
}

export function serializeWire(value: WireValue): string {
  if (value === null) return "null";
  if (value === true) return "true";
  if (value === false) return "false";
  if (typeof value === "string") return escapeString(value);
  if (value instanceof WireNum) {
    if (!value.isInt) return formatFloat(value.value);
    if (!Number.isSafeInteger(value.value)) {
      throw new WireError(`integer ${value.value} exceeds exact range`);
    }
    return String(value.value);
  }
  if (Array.isArray(value)) {
    return `[${value.map(serializeWire).join(",")}]`;
  }
  const parts: string[] = [];
  for (const [k, v] of value) {
    parts.push(`${escapeString(k)}:${serializeWire(v)}`);
  }
  return `{${parts.join(",")}}`;
}

// -- parser -------------------------------------------------------------------

class Parser {
  pos = 0;
  constructor(readonly text: string) {}

  fail(msg: string): never {
    throw new WireError(`${msg} at offset ${this.pos}`);
  }

  ws(): void {
    while (this.pos < this.text.length && " \t\n\r".includes(this.text[this.pos])) {
      this.pos += 1;
    }
  }

  value(): WireValue {
    this.ws();
    const ch = this.text[this.pos];
    if (ch === undefined) this.fail("unexpected end of input");
    if (ch === "{") return this.object();
    if (ch === "[") return this.array();
    if (ch === '"') return this.string();
    if (this.text.startsWith("true", this.pos)) {
      this.pos += 4;
      return true;
    }
    if (this.text.startsWith("false", this.pos)) {
      this.pos += 5;
      return false;
    }
    if (this.text.startsWith("null", this.pos)) {
      this.pos += 4;
      return null;
    }
    return this.number();
  }

  object(): WireMap {
    this.pos += 1; // {
    const map: WireMap = new Map();
    this.ws();
    if (this.text[this.pos] === "}") {
      this.pos += 1;
      return map;
    }
    for (;;) {
      this.ws();
      if (this.text[this.pos] !== '"') this.fail("expected object key");
      const key = this.string();
      if (map.has(key)) this.fail(`duplicate key ${JSON.stringify(key)}`);
      this.ws();
      if (this.text[this.pos] !== ":") this.fail("expected ':'");
      this.pos += 1;
      map.set(key, this.value());
      this.ws();
      const ch = this.text[this.pos];
      if (ch === ",") {
        this.pos += 1;
      } else if (ch === "}") {
        this.pos += 1;
        return map;
      } else {
        this.fail("expected ',' or '}'");
      }
    }
  }

  array(): WireValue[] {
    this.pos += 1; // [
    const items: WireValue[] = [];
    this.ws();
    if (this.text[this.pos] === "]") {
      this.pos += 1;
      return items;
    }
    for (;;) {
      items.push(this.value());
      this.ws();
      const ch = this.text[this.pos];
      if (ch === ",") {
        this.pos += 1;
      } else if (ch === "]") {
        this.pos += 1;
        return items;
      } else {
        this.fail("expected ',' or ']'");
      }
    }
  }

  string(): string {
    this.pos += 1; // "
    let out = "";
    for (;;) {
      const ch = this.text[this.pos];
      if (ch === undefined) this.fail("unterminated string");
      if (ch === '"') {
        this.pos += 1;
        return out;
      }
      if (ch === "\\") {
        const esc = this.text[this.pos + 1];
        this.pos += 2;
        if (esc === "u") {
          const hex = this.text.slice(this.pos, this.pos + 4);
          if (!/^[0-9a-fA-F]{4}$/.test(hex)) this.fail("bad unicode escape");
          out += String.fromCharCode(parseInt(hex, 16));
          this.pos += 4;
        } else {
          const simple: Record<string, string> = {
            '"': '"',
            "\\": "\\",
            "/": "/",
            b: "\b",
            f: "\f",
            n: "\n",
            r: "\r",
            t: "\t",
          };
          const mapped = simple[esc];
          if (mapped === undefined) this.fail(`bad escape \\${esc}`);
          out += mapped;
        }
      } else {
        out += ch;
        this.pos += 1;
      }
    }
  }

  number(): WireNum {
    const match = /^-?(?:0|[1-9]\d*)(\.\d+)?([eE][+-]?\d+)?/.exec(this.text.slice(this.pos));
    if (!match || match[0] === "") this.fail("expected a value");
    const lexeme = match[0];
    this.pos += lexeme.length;
    const isInt = match[1] === undefined && match[2] === undefined;
    const value = Number(lexeme);
    if (isInt && !Number.isSafeInteger(value)) {
      this.fail(`integer ${lexeme} exceeds exact range`);
    }
    return new WireNum(value, isInt);
  }
}

export function parseWire(text: string): WireValue {
  const parser = new Parser(text);
  const value = parser.value();
  parser.ws();
  if (parser.pos !== text.length) parser.fail("trailing characters");
  return value;
}

// -- typed messages for the app ----------------------------------------------

export type Vec3 = [number, number, number];
export type Quat = [number, number, number, number]; // w, x, y, z

export interface PoseMsg {
  pos: Vec3;
  quat: Quat;
}

export interface ObstacleMsg {
  name: string;
  vertices: [number, number][];
  position: [number, number];
  yaw: number;
  zRange: [number, number];
}

export interface WorldMessage {
  kind: "world";
  tickS: number;
  robotName: string;
  baseRadius: number;
  baseHeight: number;
  torsoLimits: [number, number];
  bounds: [number, number, number, number];
  obstacles: ObstacleMsg[];
  taskPath: PoseMsg[];
}

export interface StateMessage {
  kind: "state";
  tick: number;
  base: Vec3; // x, y, yaw
  torso: number;
  arm: number[];
  ee: PoseMsg;
  plan: PoseMsg[];
  gripper: string;
  scaling: number;
  clearance: number | null;
  collided: boolean;
  task: { progress: number; rmsError: number; success: boolean } | null;
}

export interface ErrorMessage {
  kind: "error";
  message: string;
}

export type ServerMessage = WorldMessage | StateMessage | ErrorMessage;

function asNumber(v: unknown, what: string): number {
  if (typeof v !== "number" || !Number.isFinite(v)) {
    throw new WireError(`${what} must be a finite number`);
  }
  return v;
}

function asVec3(v: unknown, what: string): Vec3 {
  if (!Array.isArray(v) || v.length !== 3) throw new WireError(`${what} must have 3 entries`);
  return [asNumber(v[0], what), asNumber(v[1], what), asNumber(v[2], what)];
}

function asPose(v: unknown, what: string): PoseMsg {
  const doc = v as { pos?: unknown; quat?: unknown };
  if (typeof doc !== "object" || doc === null || !Array.isArray(doc.quat) || doc.quat.length !== 4) {
    throw new WireError(`${what} must carry pos and quat`);
  }
  const quat = doc.quat.map((q) => asNumber(q, `${what}.quat`)) as Quat;
  return { pos: asVec3(doc.pos, `${what}.pos`), quat };
}

/** Decode one text frame from the server. Throws WireError on anything
 * malformed; callers skip the frame and log. */
export function decodeServerMessage(text: string): ServerMessage {
  let doc: any;
  try {
    doc = JSON.parse(text);
  } catch {
    throw new WireError("frame is not valid JSON");
  }
  if (typeof doc !== "object" || doc === null) throw new WireError("frame is not an object");
  if (doc.schema_version !== PROTOCOL_SCHEMA_VERSION) {
    throw new WireError(`unsupported schema_version ${doc.schema_version}`);
  }
  if (doc.type === "error") {
    return { kind: "error", message: String(doc.message ?? "") };
  }
  if (doc.type === "world") {
    const robot = doc.robot ?? {};
    const world = doc.world ?? {};
    const obstacles: ObstacleMsg[] = (world.obstacles ?? []).map((o: any, i: number) => ({
      name: String(o.name ?? `obstacle ${i}`),
      vertices: (o.vertices ?? []).map((v: unknown[]) => [
        asNumber(v[0], "vertex"),
        asNumber(v[1], "vertex"),
      ]),
      position: [asNumber(o.position?.[0] ?? 0, "position"), asNumber(o.position?.[1] ?? 0, "position")],
      yaw: asNumber(o.yaw ?? 0, "yaw"),
      zRange: [asNumber(o.z_range?.[0] ?? 0, "z_range"), asNumber(o.z_range?.[1] ?? 0, "z_range")],
    }));
    const waypoints = doc.world?.task?.waypoints ?? [];
    return {
      kind: "world",
      tickS: asNumber(doc.tick_s, "tick_s"),
      robotName: String(robot.name ?? "robot"),
      baseRadius: asNumber(robot.base?.radius ?? 0.3, "base.radius"),
      baseHeight: asNumber(robot.base?.height ?? 0.4, "base.height"),
      torsoLimits: [
        asNumber(robot.torso?.limits?.[0] ?? 0, "torso.limits"),
        asNumber(robot.torso?.limits?.[1] ?? 0.3, "torso.limits"),
      ],
      bounds: [
        asNumber(world.bounds?.[0] ?? -2, "bounds"),
        asNumber(world.bounds?.[1] ?? -2, "bounds"),
        asNumber(world.bounds?.[2] ?? 2, "bounds"),
        asNumber(world.bounds?.[3] ?? 2, "bounds"),
      ],
      obstacles,
      taskPath: waypoints.map((w: any) => ({
        pos: asVec3(w.position, "waypoint"),
        quat: (w.orientation_wxyz ?? [1, 0, 0, 0]).map((q: unknown) =>
          asNumber(q, "waypoint quat"),
        ) as Quat,
      })),
    };
  }
  if (doc.type === "state") {
    const clearance = doc.clearance;
    return {
      kind: "state",
      tick: asNumber(doc.tick, "tick"),
      base: asVec3(doc.base, "base"),
      torso: asNumber(doc.torso, "torso"),
      arm: (doc.arm ?? []).map((v: unknown) => asNumber(v, "arm")),
      ee: asPose(doc.ee, "ee"),
      plan: (doc.plan ?? []).map((p: unknown, i: number) => asPose(p, `plan[${i}]`)),
      gripper: String(doc.gripper ?? "hold"),
      scaling: asNumber(doc.scaling, "scaling"),
      clearance: clearance === null || clearance === undefined ? null : asNumber(clearance, "clearance"),
      collided: Boolean(doc.collided),
      task:
        doc.task == null
          ? null
          : {
              progress: asNumber(doc.task.progress, "task.progress"),
              rmsError: asNumber(doc.task.rms_error, "task.rms_error"),
              success: Boolean(doc.task.success),
            },
    };
  }
  throw new WireError(`unknown message type ${JSON.stringify(doc.type)}`);
}

// -- outgoing signals ---------------------------------------------------------

export interface SignalFields {
  v: Vec3;
  axis: Vec3;
  angle: number;
  gripper: "open" | "close" | "hold";
  precision: boolean;
  deadman: boolean;
}

export const INACTIVE_SIGNAL: SignalFields = {
  v: [0, 0, 0],
  axis: [0, 0, 1],
  angle: 0,
  gripper: "hold",
  precision: false,
  deadman: false,
};

function floats(values: readonly number[]): WireValue[] {
  return values.map((v) => new WireNum(v, false));
}

/** Byte-compatible with the server's own signal encoder. */
export function encodeSignal(seq: number, tClient: number, s: SignalFields): string {
  const rot: WireMap = new Map<string, WireValue>([
    ["axis", floats(s.axis)],
    ["angle", new WireNum(s.angle, false)],
  ]);
  const doc: WireMap = new Map<string, WireValue>([
    ["type", "signal"],
    ["schema_version", new WireNum(PROTOCOL_SCHEMA_VERSION, true)],
    ["seq", new WireNum(seq, true)],
    ["t_client", new WireNum(tClient, false)],
    ["v", floats(s.v)],
    ["rot", rot],
    ["gripper", s.gripper],
    ["precision", s.precision],
    ["deadman", s.deadman],
  ]);
  return serializeWire(doc);
}
