"""SE(3) primitives: unit quaternions, poses, twists, weighted rotation averages.

Quaternions are Hamilton convention, scalar-first (w, x, y, z), right-handed.
q and -q denote the same rotation; functions that compare or average rotations
must be insensitive to that sign.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

_NORM_TOL = 1e-9


class AmbiguousAverageError(ValueError):
    """Raised when a rotation average has no unique solution (degenerate spectrum)."""


def _as_vec3(v) -> np.ndarray:
    if type(v) is np.ndarray and v.shape == (3,) and v.dtype == np.float64:
        a = v
    else:
        a = np.asarray(v, dtype=float).reshape(3)
    if not (math.isfinite(a[0]) and math.isfinite(a[1]) and math.isfinite(a[2])):
        raise ValueError("non-finite 3-vector")
    return a


class UnitQuaternion:
    """Unit quaternion, renormalized on construction (rejects near-zero norm).

    Components live in scalar slots: this type sits under every pose
    transform in the simulator, and small-array numpy overhead dominates
    the tick budget otherwise.
    """

    __slots__ = ("_w", "_x", "_y", "_z")

    def __init__(self, w: float, x: float, y: float, z: float):
        n = math.sqrt(w * w + x * x + y * y + z * z)
        if not math.isfinite(n) or n < _NORM_TOL:
            raise ValueError(f"cannot normalize quaternion with norm {n}")
        self._w = w / n
        self._x = x / n
        self._y = y / n
        self._z = z / n

    @classmethod
    def identity(cls) -> "UnitQuaternion":
        return cls(1.0, 0.0, 0.0, 0.0)

    @classmethod
    def from_wxyz(cls, wxyz) -> "UnitQuaternion":
        w, x, y, z = np.asarray(wxyz, dtype=float).reshape(4)
        return cls(w, x, y, z)

    @classmethod
    def from_axis_angle(cls, axis, angle: float) -> "UnitQuaternion":
        a = _as_vec3(axis)
        n = np.linalg.norm(a)
        if n < _NORM_TOL:
            raise ValueError("rotation axis must be nonzero")
        h = 0.5 * float(angle)
        s = math.sin(h) / n
        return cls(math.cos(h), a[0] * s, a[1] * s, a[2] * s)

    @classmethod
    def from_rotvec(cls, rotvec) -> "UnitQuaternion":
        """Exponential map: rotation vector (axis * angle) to quaternion."""
        r = _as_vec3(rotvec)
        angle = np.linalg.norm(r)
        if angle < 1e-12:
            # first-order expansion, exact limit at zero
            return cls(1.0, 0.5 * r[0], 0.5 * r[1], 0.5 * r[2])
        s = math.sin(0.5 * angle) / angle
        return cls(math.cos(0.5 * angle), r[0] * s, r[1] * s, r[2] * s)

    @classmethod
    def from_yaw(cls, yaw: float) -> "UnitQuaternion":
        return cls(math.cos(0.5 * yaw), 0.0, 0.0, math.sin(0.5 * yaw))

    @property
    def wxyz(self) -> np.ndarray:
        return np.array([self._w, self._x, self._y, self._z])

    @property
    def w(self) -> float:
        return self._w

    @property
    def vec(self) -> np.ndarray:
        return np.array([self._x, self._y, self._z])

    def __mul__(self, other: "UnitQuaternion") -> "UnitQuaternion":
        """Hamilton product self * other (apply `other` first, then self)."""
        w1, x1, y1, z1 = self._w, self._x, self._y, self._z
        w2, x2, y2, z2 = other._w, other._x, other._y, other._z
        return UnitQuaternion(
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        )

    def inverse(self) -> "UnitQuaternion":
        return UnitQuaternion(self._w, -self._x, -self._y, -self._z)

    def canonical(self) -> "UnitQuaternion":
        """Same rotation with nonnegative scalar part."""
        if self._w < 0.0:
            return UnitQuaternion(-self._w, -self._x, -self._y, -self._z)
        return UnitQuaternion(self._w, self._x, self._y, self._z)

    def rotate(self, v) -> np.ndarray:
        """Rotate a 3-vector: q v q^-1."""
        w, ux, uy, uz = self._w, self._x, self._y, self._z
        vx, vy, vz = float(v[0]), float(v[1]), float(v[2])
        # t = 2 u x v, result = v + w t + u x t (np.cross is slow on 3-vectors)
        tx = 2.0 * (uy * vz - uz * vy)
        ty = 2.0 * (uz * vx - ux * vz)
        tz = 2.0 * (ux * vy - uy * vx)
        return np.array(
            [
                vx + w * tx + uy * tz - uz * ty,
                vy + w * ty + uz * tx - ux * tz,
                vz + w * tz + ux * ty - uy * tx,
            ]
        )

    def axis_angle(self) -> tuple[np.ndarray, float]:
        """Shortest-arc axis and angle, angle in [0, pi]. Identity maps to angle 0, +z axis."""
        w, x, y, z = self._w, self._x, self._y, self._z
        if w < 0.0:
            w, x, y, z = -w, -x, -y, -z
        s = math.sqrt(x * x + y * y + z * z)
        angle = 2.0 * math.atan2(s, w)
        if s < 1e-12:
            return np.array([0.0, 0.0, 1.0]), 0.0
        return np.array([x / s, y / s, z / s]), angle

    def rotvec(self) -> np.ndarray:
        """Log map: rotation vector (axis * angle), shortest arc."""
        w, x, y, z = self._w, self._x, self._y, self._z
        if w < 0.0:
            w, x, y, z = -w, -x, -y, -z
        s = math.sqrt(x * x + y * y + z * z)
        if s < 1e-12:
            return np.array([2.0 * x / w, 2.0 * y / w, 2.0 * z / w])
        k = 2.0 * math.atan2(s, w) / s
        return np.array([x * k, y * k, z * k])

    def angle(self) -> float:
        """Shortest-arc rotation angle in [0, pi]."""
        return self.axis_angle()[1]

    def power(self, n: float) -> "UnitQuaternion":
        """Rotation with the same axis and angle scaled by n (shortest arc first)."""
        axis, ang = self.axis_angle()
        if ang == 0.0:
            return UnitQuaternion.identity()
        return UnitQuaternion.from_axis_angle(axis, n * ang)

    def angle_to(self, other: "UnitQuaternion") -> float:
        """Rotation angle between two orientations, sign-insensitive, in [0, pi]."""
        return (other * self.inverse()).angle()

    def rotation_matrix(self) -> np.ndarray:
        w, x, y, z = self._w, self._x, self._y, self._z
        return np.array(
            [
                [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
                [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
                [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
            ]
        )

    def yaw(self) -> float:
        """Heading of the rotated +x axis in the world xy plane."""
        w, x, y, z = self._w, self._x, self._y, self._z
        # first column of the rotation matrix
        ex_x = 1.0 - 2.0 * (y * y + z * z)
        ex_y = 2.0 * (x * y + w * z)
        return math.atan2(ex_y, ex_x)

    def __repr__(self) -> str:
        return (
            f"UnitQuaternion({self._w:.9g}, {self._x:.9g}, {self._y:.9g}, {self._z:.9g})"
        )


def symmetric_eigh4(m: np.ndarray, max_sweeps: int = 64, tol: float = 1e-12):
    """Eigen-decomposition of a symmetric 4x4 matrix by cyclic Jacobi sweeps.

    Fixed sweep cap and tolerance keep the result reproducible across
    platforms. Returns (eigenvalues, eigenvectors) sorted descending,
    eigenvectors in columns.
    """
    a = np.array(m, dtype=float)
    if a.shape != (4, 4):
        raise ValueError("expected 4x4 matrix")
    v = np.eye(4)
    scale = max(1.0, float(np.max(np.abs(a))))
    for _ in range(max_sweeps):
        off = math.sqrt(
            sum(a[p, q] ** 2 for p in range(4) for q in range(p + 1, 4))
        )
        if off <= tol * scale:
            break
        for p in range(3):
            for q in range(p + 1, 4):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                rot = np.eye(4)
                rot[p, p] = c
                rot[q, q] = c
                rot[p, q] = s
                rot[q, p] = -s
                a = rot.T @ a @ rot
                a = 0.5 * (a + a.T)
                v = v @ rot
    order = np.argsort(np.diag(a))[::-1]
    return np.diag(a)[order], v[:, order]


def average_quaternions(
    quats: list[UnitQuaternion], weights=None, degeneracy_tol: float = 1e-9
) -> UnitQuaternion:
    """Weighted rotation average via the principal eigenvector of sum w q q^T.

    Insensitive to per-input sign flips by construction. Raises
    AmbiguousAverageError when the top eigenvalue is (numerically) repeated,
    i.e. the average direction is not unique.
    """
    if not quats:
        raise ValueError("need at least one quaternion")
    if weights is None:
        w = np.ones(len(quats))
    else:
        w = np.asarray(weights, dtype=float).reshape(len(quats))
    if np.any(w < 0.0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and nonnegative")
    if w.sum() <= 0.0:
        raise ValueError("weights must not all be zero")
    acc = np.zeros((4, 4))
    for wi, q in zip(w, quats):
        col = q.wxyz
        acc += wi * np.outer(col, col)
    vals, vecs = symmetric_eigh4(acc)
    if vals[0] - vals[1] <= degeneracy_tol * max(1.0, abs(vals[0])):
        raise AmbiguousAverageError(
            f"rotation average is not unique (top eigenvalues {vals[0]:.12g}, {vals[1]:.12g})"
        )
    return UnitQuaternion.from_wxyz(vecs[:, 0]).canonical()


@dataclass
class Pose:
    """Rigid transform: position plus orientation."""

    position: np.ndarray
    orientation: UnitQuaternion

    def __post_init__(self):
        self.position = _as_vec3(self.position)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.zeros(3), UnitQuaternion.identity())

    def compose(self, other: "Pose") -> "Pose":
        """self * other: apply `other` in self's frame."""
        return Pose(
            self.position + self.orientation.rotate(other.position),
            self.orientation * other.orientation,
        )

    def inverse(self) -> "Pose":
        qi = self.orientation.inverse()
        return Pose(-qi.rotate(self.position), qi)

    def transform_point(self, p) -> np.ndarray:
        return self.position + self.orientation.rotate(p)

    def copy(self) -> "Pose":
        return Pose(self.position.copy(), UnitQuaternion.from_wxyz(self.orientation.wxyz))

    def __repr__(self) -> str:
        p = self.position
        return f"Pose(({p[0]:.6g}, {p[1]:.6g}, {p[2]:.6g}), {self.orientation!r})"


@dataclass
class Twist:
    """Spatial velocity: linear (m/s) and angular (rad/s) parts."""

    linear: np.ndarray = field(default_factory=lambda: np.zeros(3))
    angular: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.linear = _as_vec3(self.linear)
        self.angular = _as_vec3(self.angular)

    @classmethod
    def zero(cls) -> "Twist":
        return cls(np.zeros(3), np.zeros(3))

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.linear, self.angular])
