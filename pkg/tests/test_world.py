import json
import math

import numpy as np
import pytest

from momasim.geometry import Pose, UnitQuaternion
from momasim.inference import Gripper
from momasim.serialization import canonical_dumps, format_float
from momasim.world import (
    Obstacle,
    ObstaclePose,
    TaskFrameSpec,
    TaskSpec,
    World,
    load_world,
    point_prism_distance,
    points_in_convex,
    polygon_distance_2d,
    save_world,
    segment_polygon_distance_2d,
    segment_prism_distance,
    world_from_doc,
    world_to_doc,
)

SQUARE = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])


def sampled_segment_prism_distance(a, b, poly, z_lo, z_hi, n=20001):
    """Dense-sampling oracle, vectorized: min over t of point-to-prism distance."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    pts = a + np.linspace(0.0, 1.0, n)[:, None] * (b - a)
    xy = pts[:, :2]
    m = len(poly)
    inside = np.ones(n, dtype=bool)
    edge_d = np.full(n, np.inf)
    for i in range(m):
        p0, p1 = poly[i], poly[(i + 1) % m]
        e = p1 - p0
        rel = xy - p0
        inside &= e[0] * rel[:, 1] - e[1] * rel[:, 0] >= -1e-12
        t = np.clip(rel @ e / (e @ e), 0.0, 1.0)
        edge_d = np.minimum(edge_d, np.linalg.norm(rel - t[:, None] * e, axis=1))
    dxy = np.where(inside, 0.0, edge_d)
    dz = np.maximum(np.maximum(z_lo - pts[:, 2], pts[:, 2] - z_hi), 0.0)
    return float(np.hypot(dxy, dz).min())


def test_polygon_orientation_normalized_and_validated():
    cw = Obstacle("o", SQUARE[::-1], (0.0, 1.0))
    assert points_in_convex(cw.vertices, np.array([[0.5, 0.5]]))[0]
    with pytest.raises(ValueError, match="convex"):
        Obstacle("bad", np.array([[0, 0], [2, 0], [0.2, 0.2], [0, 2]]), (0, 1))
    with pytest.raises(ValueError, match="zero area"):
        Obstacle("flat", np.array([[0, 0], [1, 0], [2, 0]]), (0, 1))
    with pytest.raises(ValueError, match="z range"):
        Obstacle("z", SQUARE, (1.0, 1.0))


def test_point_distances():
    assert polygon_distance_2d(SQUARE, [0.5, 0.5]) == 0.0
    assert abs(polygon_distance_2d(SQUARE, [1.31, 0.5]) - 0.31) < 1e-12
    assert abs(polygon_distance_2d(SQUARE, [2.0, 2.0]) - math.sqrt(2.0)) < 1e-12
    # prism: directly above the top face
    assert abs(point_prism_distance([0.5, 0.5, 1.4], SQUARE, 0.0, 1.0) - 0.4) < 1e-12
    # diagonal gap in xy and z simultaneously
    d = point_prism_distance([1.3, 0.5, 1.4], SQUARE, 0.0, 1.0)
    assert abs(d - math.hypot(0.3, 0.4)) < 1e-12


def test_segment_polygon_distance_cases():
    assert segment_polygon_distance_2d([0.5, 0.5], [2.0, 0.5], SQUARE) == 0.0
    assert segment_polygon_distance_2d([-1, -1], [2, 2], SQUARE) == 0.0  # crosses
    assert abs(segment_polygon_distance_2d([1.5, 0], [1.5, 1], SQUARE) - 0.5) < 1e-12


def test_segment_prism_distance_matches_dense_sampling():
    rng = np.random.default_rng(31)
    for _ in range(40):
        verts = rng.uniform(-1, 1, size=(4, 2))
        hull = _convex_hull(verts)
        if hull is None:
            continue
        z_lo, z_hi = sorted(rng.uniform(0.0, 1.5, size=2))
        if z_hi - z_lo < 0.05:
            continue
        a = rng.uniform([-2, -2, 0], [2, 2, 2])
        b = rng.uniform([-2, -2, 0], [2, 2, 2])
        exact = segment_prism_distance(a, b, hull, z_lo, z_hi)
        sampled = sampled_segment_prism_distance(a, b, hull, z_lo, z_hi)
        assert exact <= sampled + 1e-9
        assert abs(exact - sampled) < 2e-4


def _convex_hull(points):
    pts = sorted(map(tuple, points))
    if len(pts) < 3:
        return None

    def half(seq):
        out = []
        for p in seq:
            while len(out) >= 2 and _cross(out[-2], out[-1], p) <= 0:
                out.pop()
            out.append(p)
        return out

    lower, upper = half(pts), half(reversed(pts))
    hull = np.array(lower[:-1] + upper[:-1], dtype=float)
    if len(hull) < 3:
        return None
    try:
        return Obstacle("h", hull, (0, 1)).vertices
    except ValueError:
        return None


def _cross(o, a, b):
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def test_obstacle_schedule_is_piecewise_constant():
    o = Obstacle(
        "mover",
        SQUARE,
        (0, 1),
        position=(0.0, 0.0),
        schedule=(ObstaclePose(10, (5.0, 0.0), 0.0), ObstaclePose(20, (9.0, 1.0), 0.5)),
    )
    assert np.allclose(o.pose_at(0)[0], [0, 0])
    assert np.allclose(o.pose_at(10)[0], [5, 0])
    assert np.allclose(o.pose_at(19)[0], [5, 0])
    pos, yaw = o.pose_at(99)
    assert np.allclose(pos, [9, 1]) and yaw == 0.5


def test_obstacle_yaw_rotates_polygon():
    o = Obstacle("r", SQUARE, (0, 1), position=(2.0, 0.0), yaw=math.pi / 2)
    poly = o.polygon_at(0)
    assert np.allclose(poly[1], [2.0, 1.0], atol=1e-12)  # (1,0) rotated to (0,1)


def make_world():
    task = TaskSpec(
        kind="follow_path",
        path_frame="goal",
        waypoints=[Pose([0.1 * i, 0.0, 0.8], UnitQuaternion.identity()) for i in range(3)],
        gripper={0: Gripper.CLOSE, 2: Gripper.OPEN},
        timeout_ticks=500,
    )
    return World(
        name="test-world",
        bounds=(-1.0, -1.0, 5.0, 5.0),
        obstacles=[
            Obstacle("block", SQUARE, (0.0, 0.75), position=(2.0, 1.0), attached_to="goal"),
            Obstacle("wall", SQUARE, (0.0, 1.5), position=(0.0, -3.0)),
        ],
        frames=[TaskFrameSpec("goal", Pose([2.0, 1.0, 0.0], UnitQuaternion.from_yaw(0.3)))],
        task=task,
    )


def test_world_json_round_trip_is_byte_stable(tmp_path):
    w = make_world()
    text = canonical_dumps(world_to_doc(w))
    again = world_to_doc(world_from_doc(json.loads(text)))
    assert canonical_dumps(again) == text
    p = tmp_path / "w.json"
    save_world(w, p)
    loaded = load_world(p)
    assert canonical_dumps(world_to_doc(loaded)) == text


def test_world_schema_version_enforced():
    doc = world_to_doc(make_world())
    doc["schema_version"] = 7
    with pytest.raises(ValueError, match="schema_version"):
        world_from_doc(doc)


def test_resolved_waypoints_follow_frame():
    w = make_world()
    wps = w.resolved_waypoints()
    frame = w.frame("goal")
    assert np.allclose(wps[0].position, frame.position + [0, 0, 0.8])
    d = w.displaced("goal", [0.4, 0.0, 0.0])
    wps2 = d.resolved_waypoints()
    assert np.allclose(wps2[0].position - wps[0].position, [0.4, 0, 0], atol=1e-12)
    # attached obstacle moved, detached one stayed
    assert np.allclose(
        d.obstacles[0].polygon_at(0) - w.obstacles[0].polygon_at(0), 0.4 * np.array([[1, 0]] * 4)
    )
    assert np.allclose(d.obstacles[1].polygon_at(0), w.obstacles[1].polygon_at(0))
    with pytest.raises(KeyError):
        w.displaced("nope", [1, 0, 0])


def test_task_validation():
    with pytest.raises(ValueError, match="kind"):
        TaskSpec(kind="juggle", waypoints=[Pose.identity()])
    with pytest.raises(ValueError, match="waypoint"):
        TaskSpec(kind="follow_path", waypoints=[])
    with pytest.raises(ValueError, match="missing waypoint"):
        TaskSpec(kind="follow_path", waypoints=[Pose.identity()], gripper={3: Gripper.OPEN})


def test_format_float_round_trips_exactly():
    rng = np.random.default_rng(37)
    for _ in range(1000):
        x = float(rng.normal(scale=10.0 ** rng.integers(-8, 8)))
        assert float(format_float(x)) == x
    assert float(format_float(0.1)) == 0.1
    with pytest.raises(ValueError):
        format_float(math.inf)
