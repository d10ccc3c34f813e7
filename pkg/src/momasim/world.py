"""Worlds: extruded convex obstacles, task frames, task definitions.

Obstacles are convex 2D polygons extruded over a z interval; that keeps
every robot-world distance query a product-set computation (exact in xy
times exact in z) and the whole simulator dependency-free of a collision
engine. Dynamic obstacles carry a per-tick pose schedule, applied
piecewise-constant.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from momasim.geometry import Pose, UnitQuaternion
from momasim.inference import Gripper
from momasim.serialization import canonical_dumps

WORLD_SCHEMA_VERSION = 1



# ---------------------------------------------------------------------------
# 2D / extruded geometry


def _ccw_convex(vertices: np.ndarray) -> np.ndarray:
    v = np.asarray(vertices, dtype=float)
    if v.ndim != 2 or v.shape[1] != 2 or len(v) < 3:
        raise ValueError("polygon needs at least 3 xy vertices")
    area2 = 0.0
    for i in range(len(v)):
        a, b = v[i], v[(i + 1) % len(v)]
        area2 += a[0] * b[1] - b[0] * a[1]
    if abs(area2) < 1e-9:
        raise ValueError("degenerate polygon (zero area)")
    if area2 < 0.0:
        v = v[::-1].copy()
    for i in range(len(v)):
        a = v[i]
        b = v[(i + 1) % len(v)]
        c = v[(i + 2) % len(v)]
        cross = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        if cross < -1e-9:
            raise ValueError("polygon is not convex")
    return v


def points_in_convex(poly: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Boolean mask: which xy points lie inside (or on) a CCW convex polygon."""
    pts = np.asarray(points, dtype=float)
    inside = np.ones(len(pts), dtype=bool)
    n = len(poly)
    for i in range(n):
        a = poly[i]
        e = poly[(i + 1) % n] - a
        rel = pts - a
        inside &= e[0] * rel[:, 1] - e[1] * rel[:, 0] >= -1e-12
    return inside


def _pt_seg_2d(px, py, ax, ay, bx, by) -> float:
    # scalar core: the clearance path calls this thousands of times per tick
    dx, dy = bx - ax, by - ay
    denom = dx * dx + dy * dy
    if denom == 0.0:
        t = 0.0
    else:
        t = ((px - ax) * dx + (py - ay) * dy) / denom
        t = 0.0 if t < 0.0 else (1.0 if t > 1.0 else t)
    gx = px - (ax + t * dx)
    gy = py - (ay + t * dy)
    return math.sqrt(gx * gx + gy * gy)


def _point_segment_distance_2d(p, a, b) -> float:
    return _pt_seg_2d(
        float(p[0]), float(p[1]), float(a[0]), float(a[1]), float(b[0]), float(b[1])
    )


def _inside_convex_2d(px: float, py: float, rows) -> bool:
    # same edge test and tolerance as points_in_convex, one point at a time
    n = len(rows)
    for i in range(n):
        ax, ay = rows[i]
        bx, by = rows[(i + 1) % n]
        if (bx - ax) * (py - ay) - (by - ay) * (px - ax) < -1e-12:
            return False
    return True


def polygon_distance_2d(poly: np.ndarray, point) -> float:
    """Distance from an xy point to a convex polygon; 0 inside or on it."""
    px, py = float(point[0]), float(point[1])
    rows = poly.tolist() if isinstance(poly, np.ndarray) else poly
    if _inside_convex_2d(px, py, rows):
        return 0.0
    n = len(rows)
    best = math.inf
    for i in range(n):
        ax, ay = rows[i]
        bx, by = rows[(i + 1) % n]
        d = _pt_seg_2d(px, py, ax, ay, bx, by)
        if d < best:
            best = d
    return best


def _orient_2d(ax, ay, bx, by, cx, cy) -> int:
    v = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
    return 0 if abs(v) < 1e-15 else (1 if v > 0 else -1)


def _on_segment_2d(ax, ay, bx, by, cx, cy) -> bool:
    return (
        _orient_2d(ax, ay, bx, by, cx, cy) == 0
        and min(ax, bx) - 1e-15 <= cx <= max(ax, bx) + 1e-15
        and min(ay, by) - 1e-15 <= cy <= max(ay, by) + 1e-15
    )


def _segments_intersect_2d(ax, ay, bx, by, cx, cy, ex, ey) -> bool:
    o1 = _orient_2d(ax, ay, bx, by, cx, cy)
    o2 = _orient_2d(ax, ay, bx, by, ex, ey)
    o3 = _orient_2d(cx, cy, ex, ey, ax, ay)
    o4 = _orient_2d(cx, cy, ex, ey, bx, by)
    if o1 != o2 and o3 != o4:
        return True
    return (
        _on_segment_2d(ax, ay, bx, by, cx, cy)
        or _on_segment_2d(ax, ay, bx, by, ex, ey)
        or _on_segment_2d(cx, cy, ex, ey, ax, ay)
        or _on_segment_2d(cx, cy, ex, ey, bx, by)
    )


def _segment_segment_distance_2d(ax, ay, bx, by, cx, cy, ex, ey) -> float:
    if _segments_intersect_2d(ax, ay, bx, by, cx, cy, ex, ey):
        return 0.0
    return min(
        _pt_seg_2d(ax, ay, cx, cy, ex, ey),
        _pt_seg_2d(bx, by, cx, cy, ex, ey),
        _pt_seg_2d(cx, cy, ax, ay, bx, by),
        _pt_seg_2d(ex, ey, ax, ay, bx, by),
    )


def segment_polygon_distance_2d(a, b, poly: np.ndarray) -> float:
    """Distance between an xy segment and a convex polygon; 0 on overlap."""
    ax, ay = float(a[0]), float(a[1])
    bx, by = float(b[0]), float(b[1])
    rows = poly.tolist() if isinstance(poly, np.ndarray) else poly
    if _inside_convex_2d(ax, ay, rows) or _inside_convex_2d(bx, by, rows):
        return 0.0
    n = len(rows)
    best = math.inf
    for i in range(n):
        cx, cy = rows[i]
        ex, ey = rows[(i + 1) % n]
        d = _segment_segment_distance_2d(ax, ay, bx, by, cx, cy, ex, ey)
        if d < best:
            best = d
            if best == 0.0:
                break
    return best


def point_prism_distance(p, poly: np.ndarray, z_lo: float, z_hi: float) -> float:
    """Exact distance from a 3D point to a convex polygon extruded over [z_lo, z_hi]."""
    p = np.asarray(p, dtype=float)
    dxy = polygon_distance_2d(poly, p[:2])
    dz = max(z_lo - p[2], p[2] - z_hi, 0.0)
    return math.hypot(dxy, dz)


def _segment_segment_distance_3d(
    ax, ay, az, bx, by, bz, cx, cy, cz, ex, ey, ez
) -> float:
    # closest-point parameterization of two 3D segments AB and CE
    d1x, d1y, d1z = bx - ax, by - ay, bz - az
    d2x, d2y, d2z = ex - cx, ey - cy, ez - cz
    rx, ry, rz = ax - cx, ay - cy, az - cz
    la = d1x * d1x + d1y * d1y + d1z * d1z
    le = d2x * d2x + d2y * d2y + d2z * d2z
    f = d2x * rx + d2y * ry + d2z * rz
    if la <= 1e-18 and le <= 1e-18:
        return math.sqrt(rx * rx + ry * ry + rz * rz)
    if la <= 1e-18:
        s = 0.0
        t = min(max(f / le, 0.0), 1.0)
    else:
        c = d1x * rx + d1y * ry + d1z * rz
        if le <= 1e-18:
            t = 0.0
            s = min(max(-c / la, 0.0), 1.0)
        else:
            b = d1x * d2x + d1y * d2y + d1z * d2z
            den = la * le - b * b
            s = min(max((b * f - c * le) / den, 0.0), 1.0) if den > 0.0 else 0.0
            t = b * s + f
            if t < 0.0:
                t = 0.0
                s = min(max(-c / la, 0.0), 1.0)
            elif t > le:
                t = 1.0
                s = min(max((b - c) / la, 0.0), 1.0)
            else:
                t /= le
    gx = ax + d1x * s - (cx + d2x * t)
    gy = ay + d1y * s - (cy + d2y * t)
    gz = az + d1z * s - (cz + d2z * t)
    return math.sqrt(gx * gx + gy * gy + gz * gz)


def _clip_segment_to_convex(ax, ay, bx, by, poly: np.ndarray):
    """Parameter interval of segment AB inside a CCW convex polygon, or None."""
    t0, t1 = 0.0, 1.0
    dx, dy = bx - ax, by - ay
    m = len(poly)
    for i in range(m):
        px, py = poly[i]
        qx, qy = poly[(i + 1) % m]
        edge_x, edge_y = qx - px, qy - py
        num = edge_x * (ay - py) - edge_y * (ax - px)  # >= 0 means inside this edge
        den = edge_x * dy - edge_y * dx
        if abs(den) < 1e-18:
            if num < 0.0:
                return None
            continue
        t = -num / den
        if den > 0.0:
            if t > t0:
                t0 = t
        elif t < t1:
            t1 = t
        if t0 > t1:
            return None
    return t0, t1


def _segment_face_distance(a: np.ndarray, b: np.ndarray, rows, zp: float) -> float:
    """Distance from a 3D segment to the planar region {xy in rows, z == zp}."""
    ax, ay, az = float(a[0]), float(a[1]), float(a[2])
    bx, by, bz = float(b[0]), float(b[1]), float(b[2])
    best = math.inf
    m = len(rows)
    for i in range(m):
        px, py = rows[i]
        qx, qy = rows[(i + 1) % m]
        d = _segment_segment_distance_3d(
            ax, ay, az, bx, by, bz, px, py, zp, qx, qy, zp
        )
        if d < best:
            best = d
    span = _clip_segment_to_convex(ax, ay, bx, by, rows)
    if span is not None:
        # over the clipped interval the offset is purely vertical and linear
        z0 = az + span[0] * (bz - az) - zp
        z1 = az + span[1] * (bz - az) - zp
        if z0 == 0.0 or z1 == 0.0 or (z0 > 0.0) != (z1 > 0.0):
            return 0.0
        best = min(best, abs(z0), abs(z1))
    return best


def segment_prism_distance(a, b, poly: np.ndarray, z_lo: float, z_hi: float) -> float:
    """Exact distance from a 3D segment to an extruded convex polygon.

    The segment is cut where it crosses the slab planes. A piece inside the
    slab reduces to the 2D segment-polygon problem; a piece above or below
    is closest to the top or bottom face, a planar convex region handled in
    closed form. No iteration, so results are exact and deterministic.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    rows = poly.tolist() if isinstance(poly, np.ndarray) else poly
    az, bz = float(a[2]), float(b[2])
    cuts = [0.0, 1.0]
    dz = bz - az
    if dz != 0.0:
        for zp in (z_lo, z_hi):
            t = (zp - az) / dz
            if 0.0 < t < 1.0:
                cuts.append(t)
        cuts.sort()
    best = math.inf
    for t0, t1 in zip(cuts[:-1], cuts[1:]):
        pa = a + t0 * (b - a)
        pb = a + t1 * (b - a)
        zm = 0.5 * (float(pa[2]) + float(pb[2]))
        if zm > z_hi:
            d = _segment_face_distance(pa, pb, rows, z_hi)
        elif zm < z_lo:
            d = _segment_face_distance(pa, pb, rows, z_lo)
        else:
            d = segment_polygon_distance_2d(pa[:2], pb[:2], rows)
        if d < best:
            best = d
            if best == 0.0:
                break
    return float(best)


# ---------------------------------------------------------------------------
# World model


@dataclass(frozen=True)
class ObstaclePose:
    tick: int
    position: tuple[float, float]
    yaw: float


@dataclass
class Obstacle:
    """Convex polygon (own frame, CCW) extruded over a z interval, with a pose.

    attached_to names a task frame the obstacle follows when the frame is
    displaced; schedule entries move it at runtime (piecewise-constant).
    """

    name: str
    vertices: np.ndarray
    z_range: tuple[float, float]
    position: tuple[float, float] = (0.0, 0.0)
    yaw: float = 0.0
    attached_to: str | None = None
    schedule: tuple[ObstaclePose, ...] = ()

    def __post_init__(self):
        self.vertices = _ccw_convex(self.vertices)
        if self.z_range[0] >= self.z_range[1]:
            raise ValueError(f"obstacle {self.name}: empty z range")
        self.schedule = tuple(sorted(self.schedule, key=lambda s: s.tick))
        self._polygon_cache: dict[int, np.ndarray] = {}

    def _schedule_index(self, tick: int) -> int:
        idx = -1
        for i, entry in enumerate(self.schedule):
            if entry.tick <= tick:
                idx = i
            else:
                break
        return idx

    def pose_at(self, tick: int) -> tuple[np.ndarray, float]:
        idx = self._schedule_index(tick)
        if idx < 0:
            return np.array(self.position, dtype=float), self.yaw
        entry = self.schedule[idx]
        return np.array(entry.position, dtype=float), entry.yaw

    def polygon_at(self, tick: int) -> np.ndarray:
        """World-frame vertices at a tick. Treat the returned array as read-only:
        it is cached per schedule state."""
        key = self._schedule_index(tick)
        cached = self._polygon_cache.get(key)
        if cached is None:
            pos, yaw = self.pose_at(tick)
            c, s = math.cos(yaw), math.sin(yaw)
            rot = np.array([[c, -s], [s, c]])
            cached = self.vertices @ rot.T + pos
            self._polygon_cache[key] = cached
        return cached

    def translated(self, delta_xy) -> "Obstacle":
        d = np.asarray(delta_xy, dtype=float)
        return Obstacle(
            name=self.name,
            vertices=self.vertices.copy(),
            z_range=self.z_range,
            position=(self.position[0] + d[0], self.position[1] + d[1]),
            yaw=self.yaw,
            attached_to=self.attached_to,
            schedule=tuple(
                ObstaclePose(s.tick, (s.position[0] + d[0], s.position[1] + d[1]), s.yaw)
                for s in self.schedule
            ),
        )


@dataclass(frozen=True)
class TaskFrameSpec:
    name: str
    pose: Pose


@dataclass
class TaskSpec:
    """Waypoint task: visit waypoints in order, matching gripper annotations.

    Waypoints are expressed in path_frame coordinates ("world" or a task
    frame name), so displacing a frame displaces the goals. gripper maps a
    waypoint index to the state required when that waypoint is reached.
    """

    kind: str  # follow_path | arc_pull | reach_place
    waypoints: list[Pose]
    path_frame: str = "world"
    tolerance_pos: float = 0.05
    tolerance_rot: float = 0.4
    gripper: dict[int, Gripper] = field(default_factory=dict)
    timeout_ticks: int = 3000

    def __post_init__(self):
        if self.kind not in ("follow_path", "arc_pull", "reach_place"):
            raise ValueError(f"unknown task kind {self.kind!r}")
        if not self.waypoints:
            raise ValueError("task needs at least one waypoint")
        for idx in self.gripper:
            if not 0 <= idx < len(self.waypoints):
                raise ValueError(f"gripper annotation for missing waypoint {idx}")


@dataclass
class World:
    name: str
    bounds: tuple[float, float, float, float]  # xmin, ymin, xmax, ymax
    obstacles: list[Obstacle] = field(default_factory=list)
    frames: list[TaskFrameSpec] = field(default_factory=list)
    task: TaskSpec | None = None

    def frame(self, name: str) -> Pose:
        if name == "world":
            return Pose.identity()
        for f in self.frames:
            if f.name == name:
                return f.pose
        raise KeyError(f"world has no frame {name!r}")

    def resolved_waypoints(self) -> list[Pose]:
        """Task waypoints in world coordinates under the current frame poses."""
        if self.task is None:
            return []
        origin = self.frame(self.task.path_frame)
        return [origin.compose(wp) for wp in self.task.waypoints]

    def displaced(self, frame_name: str, delta) -> "World":
        """Copy with a task frame (and its attached obstacles) translated."""
        d = np.asarray(delta, dtype=float).reshape(3)
        frames = [
            TaskFrameSpec(f.name, Pose(f.pose.position + d, f.pose.orientation))
            if f.name == frame_name
            else f
            for f in self.frames
        ]
        if not any(f.name == frame_name for f in self.frames):
            raise KeyError(f"world has no frame {frame_name!r}")
        obstacles = [
            o.translated(d[:2]) if o.attached_to == frame_name else o
            for o in self.obstacles
        ]
        return World(self.name, self.bounds, obstacles, frames, self.task)


# ---------------------------------------------------------------------------
# JSON


def _pose_doc(p: Pose) -> dict:
    return {
        "position": [float(x) for x in p.position],
        "orientation_wxyz": [float(x) for x in p.orientation.wxyz],
    }


def _pose_from_doc(d: dict) -> Pose:
    return Pose(d["position"], UnitQuaternion.from_wxyz(d["orientation_wxyz"]))


def world_to_doc(world: World) -> dict:
    doc = {
        "schema_version": WORLD_SCHEMA_VERSION,
        "name": world.name,
        "bounds": [float(b) for b in world.bounds],
        "frames": [
            {"name": f.name, **_pose_doc(f.pose)} for f in world.frames
        ],
        "obstacles": [],
        "task": None,
    }
    for o in world.obstacles:
        od = {
            "name": o.name,
            "vertices": [[float(x), float(y)] for x, y in o.vertices],
            "z_range": [float(o.z_range[0]), float(o.z_range[1])],
            "position": [float(o.position[0]), float(o.position[1])],
            "yaw": float(o.yaw),
        }
        if o.attached_to:
            od["attached_to"] = o.attached_to
        if o.schedule:
            od["schedule"] = [
                {"tick": s.tick, "position": list(s.position), "yaw": s.yaw}
                for s in o.schedule
            ]
        doc["obstacles"].append(od)
    if world.task is not None:
        t = world.task
        doc["task"] = {
            "kind": t.kind,
            "path_frame": t.path_frame,
            "waypoints": [_pose_doc(p) for p in t.waypoints],
            "tolerance": {"position": t.tolerance_pos, "orientation": t.tolerance_rot},
            "gripper": [[idx, t.gripper[idx].value] for idx in sorted(t.gripper)],
            "timeout_ticks": t.timeout_ticks,
        }
    return doc


def world_from_doc(doc: dict) -> World:
    version = doc.get("schema_version")
    if version != WORLD_SCHEMA_VERSION:
        raise ValueError(f"unsupported world schema_version {version!r}")
    obstacles = []
    for od in doc.get("obstacles", []):
        obstacles.append(
            Obstacle(
                name=od["name"],
                vertices=np.array(od["vertices"], dtype=float),
                z_range=tuple(od["z_range"]),
                position=tuple(od.get("position", (0.0, 0.0))),
                yaw=od.get("yaw", 0.0),
                attached_to=od.get("attached_to"),
                schedule=tuple(
                    ObstaclePose(s["tick"], tuple(s["position"]), s["yaw"])
                    for s in od.get("schedule", [])
                ),
            )
        )
    task = None
    if doc.get("task"):
        td = doc["task"]
        task = TaskSpec(
            kind=td["kind"],
            waypoints=[_pose_from_doc(w) for w in td["waypoints"]],
            path_frame=td.get("path_frame", "world"),
            tolerance_pos=td["tolerance"]["position"],
            tolerance_rot=td["tolerance"]["orientation"],
            gripper={int(i): Gripper(g) for i, g in td.get("gripper", [])},
            timeout_ticks=td.get("timeout_ticks", 3000),
        )
    return World(
        name=doc["name"],
        bounds=tuple(doc["bounds"]),
        obstacles=obstacles,
        frames=[
            TaskFrameSpec(f["name"], _pose_from_doc(f)) for f in doc.get("frames", [])
        ],
        task=task,
    )


def save_world(world: World, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(canonical_dumps(world_to_doc(world)))
        f.write("\n")


def load_world(path) -> World:
    with open(path, encoding="utf-8") as f:
        return world_from_doc(json.load(f))
