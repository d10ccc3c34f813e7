/**
 * Rendering splits into a pure stage and a paint stage. sceneFromState
 * turns (world, state, view) into a flat list of primitives without
 * touching either input; paintScene walks that list against a 2D canvas
 * context. Tests exercise the pure stage, the browser gets both.
 */

import { PoseMsg, StateMessage, WorldMessage } from "./wire";

export interface ViewState {
  // top-down viewport: world meters -> canvas pixels
  centerX: number;
  centerY: number;
  pixelsPerMeter: number;
  canvasW: number;
  canvasH: number;
  stripH: number; // elevation strip height in pixels, drawn below the map
}

export function defaultView(world: WorldMessage, canvasW: number, canvasH: number): ViewState {
  const [xmin, ymin, xmax, ymax] = world.bounds;
  const stripH = Math.round(canvasH * 0.18);
  const mapH = canvasH - stripH;
  const scale = Math.min(canvasW / (xmax - xmin), mapH / (ymax - ymin)) * 0.92;
  return {
    centerX: (xmin + xmax) / 2,
    centerY: (ymin + ymax) / 2,
    pixelsPerMeter: scale,
    canvasW,
    canvasH,
    stripH,
  };
}

export type Primitive =
  | { kind: "polygon"; points: [number, number][]; fill: string; stroke?: string }
  | { kind: "polyline"; points: [number, number][]; stroke: string; width: number; dash?: number[] }
  | { kind: "circle"; x: number; y: number; r: number; fill?: string; stroke?: string }
  | { kind: "segment"; a: [number, number]; b: [number, number]; stroke: string; width: number }
  | { kind: "gauge"; x: number; y: number; w: number; h: number; fraction: number; label: string }
  | { kind: "banner"; text: string; color: string }
  | { kind: "label"; x: number; y: number; text: string; color: string };

export interface Scene {
  primitives: Primitive[];
  banner: Primitive | null;
}

const COLORS = {
  obstacle: "#4a4e57",
  obstacleEdge: "#6b7280",
  taskPath: "#3b82f6",
  plan: "#f59e0b",
  subgoal: "#ef4444",
  robot: "#10b981",
  ee: "#e5e7eb",
  collision: "#dc2626",
  caution: "#f59e0b",
};

function toScreen(view: ViewState, x: number, y: number): [number, number] {
  // +x right, +y up; map occupies the canvas above the strip
  const mapH = view.canvasH - view.stripH;
  return [
    view.canvasW / 2 + (x - view.centerX) * view.pixelsPerMeter,
    mapH / 2 - (y - view.centerY) * view.pixelsPerMeter,
  ];
}

function obstaclePolygon(view: ViewState, vertices: [number, number][], position: [number, number], yaw: number): [number, number][] {
  const c = Math.cos(yaw);
  const s = Math.sin(yaw);
  return vertices.map(([vx, vy]) =>
    toScreen(view, position[0] + c * vx - s * vy, position[1] + s * vx + c * vy),
  );
}

function headingTick(view: ViewState, pose: PoseMsg): [[number, number], [number, number]] {
  // project the pose's +x axis onto the ground plane
  const [w, x, y, z] = pose.quat;
  const hx = 1 - 2 * (y * y + z * z);
  const hy = 2 * (x * y + w * z);
  const norm = Math.hypot(hx, hy) || 1;
  const len = 0.06;
  const a = toScreen(view, pose.pos[0], pose.pos[1]);
  const b = toScreen(view, pose.pos[0] + (hx / norm) * len, pose.pos[1] + (hy / norm) * len);
  return [a, b];
}

export function sceneFromState(
  world: WorldMessage,
  state: StateMessage,
  view: ViewState,
): Scene {
  const prims: Primitive[] = [];

  for (const obs of world.obstacles) {
    prims.push({
      kind: "polygon",
      points: obstaclePolygon(view, obs.vertices, obs.position, obs.yaw),
      fill: COLORS.obstacle,
      stroke: COLORS.obstacleEdge,
    });
  }

  if (world.taskPath.length > 1) {
    prims.push({
      kind: "polyline",
      points: world.taskPath.map((p) => toScreen(view, p.pos[0], p.pos[1])),
      stroke: COLORS.taskPath,
      width: 1.5,
      dash: [6, 4],
    });
  }

  // plan poses with heading ticks; the last one doubles as the subgoal
  for (const pose of state.plan) {
    const [a, b] = headingTick(view, pose);
    prims.push({ kind: "circle", x: a[0], y: a[1], r: 2.5, fill: COLORS.plan });
    prims.push({ kind: "segment", a, b, stroke: COLORS.plan, width: 1 });
  }
  if (state.plan.length > 0) {
    const subgoal = state.plan[state.plan.length - 1];
    const [sx, sy] = toScreen(view, subgoal.pos[0], subgoal.pos[1]);
    prims.push({ kind: "circle", x: sx, y: sy, r: 6, stroke: COLORS.subgoal });
  }

  // robot footprint, heading, base->EE projection, EE marker
  const [bx, by, yaw] = state.base;
  const center = toScreen(view, bx, by);
  const radiusPx = world.baseRadius * view.pixelsPerMeter;
  prims.push({ kind: "circle", x: center[0], y: center[1], r: radiusPx, stroke: COLORS.robot });
  prims.push({
    kind: "segment",
    a: center,
    b: toScreen(view, bx + Math.cos(yaw) * world.baseRadius, by + Math.sin(yaw) * world.baseRadius),
    stroke: COLORS.robot,
    width: 2,
  });
  const ee = toScreen(view, state.ee.pos[0], state.ee.pos[1]);
  prims.push({ kind: "segment", a: center, b: ee, stroke: COLORS.ee, width: 1 });
  prims.push({ kind: "circle", x: ee[0], y: ee[1], r: 3.5, fill: COLORS.ee });

  prims.push(...elevationStrip(world, state, view));
  prims.push(...statusOverlays(state, view));

  const banner: Primitive | null = state.collided
    ? { kind: "banner", text: "COLLISION", color: COLORS.collision }
    : null;
  return { primitives: prims, banner };
}

function elevationStrip(world: WorldMessage, state: StateMessage, view: ViewState): Primitive[] {
  const top = view.canvasH - view.stripH;
  const h = view.stripH;
  const zMax = world.baseHeight + world.torsoLimits[1] + 0.8; // headroom above full lift
  const zToY = (z: number) => view.canvasH - 6 - (z / zMax) * (h - 12);
  const x0 = 14;
  const prims: Primitive[] = [
    { kind: "polyline", points: [[0, top], [view.canvasW, top]], stroke: "#374151", width: 1 },
    // base body and torso column
    {
      kind: "polygon",
      points: [
        [x0, zToY(0)],
        [x0 + 26, zToY(0)],
        [x0 + 26, zToY(world.baseHeight)],
        [x0, zToY(world.baseHeight)],
      ],
      fill: COLORS.robot,
    },
    {
      kind: "segment",
      a: [x0 + 13, zToY(world.baseHeight)],
      b: [x0 + 13, zToY(world.baseHeight + state.torso)],
      stroke: COLORS.robot,
      width: 4,
    },
    { kind: "circle", x: x0 + 46, y: zToY(state.ee.pos[2]), r: 3.5, fill: COLORS.ee },
    {
      kind: "label",
      x: x0 + 56,
      y: zToY(state.ee.pos[2]),
      text: `ee z ${state.ee.pos[2].toFixed(2)} m`,
      color: COLORS.ee,
    },
  ];
  return prims;
}

function statusOverlays(state: StateMessage, view: ViewState): Primitive[] {
  const prims: Primitive[] = [
    {
      kind: "gauge",
      x: view.canvasW - 150,
      y: view.canvasH - view.stripH + 10,
      w: 130,
      h: 10,
      fraction: Math.min(state.scaling / 2, 1), // scaling lives in [0.01, 2]
      label: `scaling ${state.scaling.toFixed(2)}`,
    },
  ];
  if (state.clearance !== null) {
    prims.push({
      kind: "label",
      x: view.canvasW - 150,
      y: view.canvasH - view.stripH + 46,
      text: `clearance ${state.clearance.toFixed(2)} m`,
      color: state.clearance < 0.15 ? COLORS.caution : "#9ca3af",
    });
  }
  if (state.task) {
    prims.push({
      kind: "label",
      x: view.canvasW - 150,
      y: view.canvasH - view.stripH + 64,
      text: `progress ${(state.task.progress * 100).toFixed(0)}%`,
      color: state.task.success ? COLORS.robot : "#9ca3af",
    });
  }
  return prims;
}

/** Structural subset of CanvasRenderingContext2D, stubbed in tests. */
export interface Canvas2D {
  fillStyle: string | CanvasGradient | CanvasPattern;
  strokeStyle: string | CanvasGradient | CanvasPattern;
  lineWidth: number;
  font: string;
  beginPath(): void;
  moveTo(x: number, y: number): void;
  lineTo(x: number, y: number): void;
  closePath(): void;
  arc(x: number, y: number, r: number, a0: number, a1: number): void;
  fill(): void;
  stroke(): void;
  fillRect(x: number, y: number, w: number, h: number): void;
  strokeRect(x: number, y: number, w: number, h: number): void;
  fillText(text: string, x: number, y: number): void;
  setLineDash(segments: number[]): void;
  clearRect(x: number, y: number, w: number, h: number): void;
}

export function paintScene(ctx: Canvas2D, scene: Scene, view: ViewState): void {
  ctx.clearRect(0, 0, view.canvasW, view.canvasH);
  for (const p of scene.primitives) {
    paintPrimitive(ctx, p);
  }
  if (scene.banner && scene.banner.kind === "banner") {
    ctx.fillStyle = scene.banner.color;
    ctx.fillRect(0, 0, view.canvasW, 34);
    ctx.fillStyle = "#ffffff";
    ctx.font = "bold 18px system-ui";
    ctx.fillText(scene.banner.text, 12, 24);
  }
}

function paintPrimitive(ctx: Canvas2D, p: Primitive): void {
  switch (p.kind) {
    case "polygon": {
      ctx.beginPath();
      p.points.forEach(([x, y], i) => (i === 0 ? ctx.moveTo(x, y) : ctx.lineTo(x, y)));
      ctx.closePath();
      ctx.fillStyle = p.fill;
      ctx.fill();
      if (p.stroke) {
        ctx.strokeStyle = p.stroke;
        ctx.lineWidth = 1;
        ctx.stroke();
      }
      break;
    }
    case "polyline": {
      ctx.beginPath();
      p.points.forEach(([x, y], i) => (i === 0 ? ctx.moveTo(x, y) : ctx.lineTo(x, y)));
      ctx.setLineDash(p.dash ?? []);
      ctx.strokeStyle = p.stroke;
      ctx.lineWidth = p.width;
      ctx.stroke();
      ctx.setLineDash([]);
      break;
    }
    case "circle": {
      ctx.beginPath();
      ctx.arc(p.x, p.y, p.r, 0, Math.PI * 2);
      if (p.fill) {
        ctx.fillStyle = p.fill;
        ctx.fill();
      }
      if (p.stroke) {
        ctx.strokeStyle = p.stroke;
        ctx.lineWidth = 1.5;
        ctx.stroke();
      }
      break;
    }
    case "segment": {
      ctx.beginPath();
      ctx.moveTo(p.a[0], p.a[1]);
      ctx.lineTo(p.b[0], p.b[1]);
      ctx.strokeStyle = p.stroke;
      ctx.lineWidth = p.width;
      ctx.stroke();
      break;
    }
    case "gauge": {
      ctx.strokeStyle = "#6b7280";
      ctx.lineWidth = 1;
      ctx.strokeRect(p.x, p.y, p.w, p.h);
      ctx.fillStyle = p.fraction > 0.5 ? "#10b981" : "#f59e0b";
      ctx.fillRect(p.x, p.y, p.w * p.fraction, p.h);
      ctx.fillStyle = "#9ca3af";
      ctx.font = "12px system-ui";
      ctx.fillText(p.label, p.x, p.y + p.h + 14);
      break;
    }
    case "label": {
      ctx.fillStyle = p.color;
      ctx.font = "12px system-ui";
      ctx.fillText(p.text, p.x, p.y);
      break;
    }
    case "banner":
      break; // painted by paintScene, outside the primitive list
  }
}
