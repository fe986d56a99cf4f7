"""SE(3) poses, twists and rotation representations.

Conventions fixed across the whole package:

* quaternions are ordered (w, x, y, z) and kept unit-norm,
* quaternion sign is canonical: w >= 0, ties broken by the first nonzero
  component being positive,
* twists are ordered [x, y, z, roll, pitch, yaw] with linear parts in meters
  and angular parts in radians.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_QUAT_NORM_TOL = 1e-9


class DegenerateRotation(ValueError):
    """Raised when a 6D rotation cannot be orthonormalized."""


def _canonicalize_quat(q: np.ndarray) -> np.ndarray:
    q = q / np.linalg.norm(q)
    for c in q:
        if c > 0.0:
            return q
        if c < 0.0:
            return -q
    return q


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product of two (w, x, y, z) quaternions, canonicalized."""
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    out = np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])
    return _canonicalize_quat(out)


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def matrix_to_quat(R: np.ndarray) -> np.ndarray:
    """Rotation matrix to (w, x, y, z) quaternion (Shepperd's method)."""
    tr = np.trace(R)
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2
        q = np.array([0.25 * s,
                      (R[2, 1] - R[1, 2]) / s,
                      (R[0, 2] - R[2, 0]) / s,
                      (R[1, 0] - R[0, 1]) / s])
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2
        q = np.array([(R[2, 1] - R[1, 2]) / s,
                      0.25 * s,
                      (R[0, 1] + R[1, 0]) / s,
                      (R[0, 2] + R[2, 0]) / s])
    elif R[1, 1] > R[2, 2]:
        s = np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2
        q = np.array([(R[0, 2] - R[2, 0]) / s,
                      (R[0, 1] + R[1, 0]) / s,
                      0.25 * s,
                      (R[1, 2] + R[2, 1]) / s])
    else:
        s = np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2
        q = np.array([(R[1, 0] - R[0, 1]) / s,
                      (R[0, 2] + R[2, 0]) / s,
                      (R[1, 2] + R[2, 1]) / s,
                      0.25 * s])
    return _canonicalize_quat(q)


def quat_from_axis_angle(axis: np.ndarray, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    n = np.linalg.norm(axis)
    if n < 1e-300 or angle == 0.0:
        return np.array([1.0, 0.0, 0.0, 0.0])
    axis = axis / n
    half = 0.5 * angle
    return _canonicalize_quat(
        np.concatenate([[np.cos(half)], np.sin(half) * axis]))


def _skew(v: np.ndarray) -> np.ndarray:
    return np.array([[0.0, -v[2], v[1]],
                     [v[2], 0.0, -v[0]],
                     [-v[1], v[0], 0.0]])


@dataclass(frozen=True)
class Pose:
    """SE(3) element: position (m) plus unit quaternion (w, x, y, z)."""

    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    orientation: np.ndarray = field(
        default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))

    def __post_init__(self):
        p = np.asarray(self.position, dtype=float).reshape(3).copy()
        q = np.asarray(self.orientation, dtype=float).reshape(4).copy()
        n = np.linalg.norm(q)
        if not np.isfinite(p).all() or not np.isfinite(q).all():
            raise ValueError("non-finite pose components")
        if abs(n - 1.0) > 1e-6:
            raise ValueError(f"quaternion norm {n} too far from 1")
        q = _canonicalize_quat(q)
        p.flags.writeable = False
        q.flags.writeable = False
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "orientation", q)

    @staticmethod
    def identity() -> "Pose":
        return Pose()

    @staticmethod
    def from_parts(x, y, z, qw=1.0, qx=0.0, qy=0.0, qz=0.0) -> "Pose":
        return Pose(np.array([x, y, z], dtype=float),
                    np.array([qw, qx, qy, qz], dtype=float))

    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.orientation)

    def inverse(self) -> "Pose":
        R = self.rotation_matrix()
        qinv = _canonicalize_quat(self.orientation * np.array([1, -1, -1, -1]))
        return Pose(-R.T @ self.position, qinv)

    def yaw(self) -> float:
        """Z-axis rotation angle extracted from the orientation."""
        w, x, y, z = self.orientation
        return float(np.arctan2(2 * (w * z + x * y),
                                1 - 2 * (y * y + z * z)))

    def to_array(self) -> np.ndarray:
        """Serialize to 7 floats [px, py, pz, qw, qx, qy, qz]."""
        return np.concatenate([self.position, self.orientation])

    @staticmethod
    def from_array(a: np.ndarray) -> "Pose":
        a = np.asarray(a, dtype=float).reshape(7)
        return Pose(a[:3], a[3:])


@dataclass(frozen=True)
class Twist:
    """6D rigid motion [x, y, z, roll, pitch, yaw]; linear m, angular rad."""

    linear: np.ndarray = field(default_factory=lambda: np.zeros(3))
    angular: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        lin = np.asarray(self.linear, dtype=float).reshape(3).copy()
        ang = np.asarray(self.angular, dtype=float).reshape(3).copy()
        if not (np.isfinite(lin).all() and np.isfinite(ang).all()):
            raise ValueError("non-finite twist components")
        lin.flags.writeable = False
        ang.flags.writeable = False
        object.__setattr__(self, "linear", lin)
        object.__setattr__(self, "angular", ang)

    @staticmethod
    def zero() -> "Twist":
        return Twist()

    @staticmethod
    def from_array(a: np.ndarray) -> "Twist":
        a = np.asarray(a, dtype=float).reshape(6)
        return Twist(a[:3], a[3:])

    def to_array(self) -> np.ndarray:
        return np.concatenate([self.linear, self.angular])


def compose(base: Pose, delta: Pose) -> Pose:
    """base o delta: apply `delta` in the base (TCP) frame."""
    R = base.rotation_matrix()
    return Pose(base.position + R @ delta.position,
                quat_multiply(base.orientation, delta.orientation))


def twist_to_delta_pose(xi: Twist) -> Pose:
    """SE(3) exponential map from a twist to a delta pose.

    Uses the closed-form Rodrigues rotation plus the V matrix for the
    translation; falls back to Taylor expansions near zero angle.
    """
    v = xi.linear
    w = xi.angular
    theta = np.linalg.norm(w)
    if theta < 1e-12:
        # First order: rotation from the small-angle quaternion, position = v.
        q = np.array([1.0, 0.5 * w[0], 0.5 * w[1], 0.5 * w[2]])
        return Pose(v.copy(), _canonicalize_quat(q))
    axis = w / theta
    q = quat_from_axis_angle(axis, theta)
    W = _skew(w)
    if theta < 1e-4:
        A = 0.5 - theta ** 2 / 24.0
        B = 1.0 / 6.0 - theta ** 2 / 120.0
    else:
        A = (1.0 - np.cos(theta)) / theta ** 2
        B = (theta - np.sin(theta)) / theta ** 3
    V = np.eye(3) + A * W + B * (W @ W)
    return Pose(V @ v, q)


def clamp_twist(xi: Twist, lin_cap: float, ang_cap: float) -> Twist:
    """Scale the linear/angular parts down to the per-step magnitude caps."""
    lin = xi.linear
    ang = xi.angular
    ln = np.linalg.norm(lin)
    an = np.linalg.norm(ang)
    if ln > lin_cap:
        lin = lin * (lin_cap / ln)
    if an > ang_cap:
        ang = ang * (ang_cap / an)
    return Twist(lin, ang)


def interpolate_pose(a: Pose, b: Pose, alpha: float) -> Pose:
    """Linear position / slerp orientation interpolation, alpha in [0, 1]."""
    p = (1.0 - alpha) * a.position + alpha * b.position
    qa, qb = a.orientation, b.orientation
    dot = float(np.dot(qa, qb))
    if dot < 0.0:
        qb = -qb
        dot = -dot
    if dot > 1.0 - 1e-12:
        q = (1.0 - alpha) * qa + alpha * qb
    else:
        omega = np.arccos(np.clip(dot, -1.0, 1.0))
        so = np.sin(omega)
        q = (np.sin((1.0 - alpha) * omega) / so) * qa + \
            (np.sin(alpha * omega) / so) * qb
    return Pose(p, _canonicalize_quat(q))


def rot6d_encode(q: np.ndarray) -> np.ndarray:
    """Unit quaternion -> first two rotation-matrix columns (column-major)."""
    R = quat_to_matrix(np.asarray(q, dtype=float))
    return np.concatenate([R[:, 0], R[:, 1]])


def rot6d_decode(r: np.ndarray) -> np.ndarray:
    """6D rotation -> unit quaternion via Gram-Schmidt orthonormalization.

    Raises DegenerateRotation when the first column is (near) zero or the
    second column is (near) parallel to the first.
    """
    r = np.asarray(r, dtype=float).reshape(6)
    c1, c2 = r[:3], r[3:]
    n1 = np.linalg.norm(c1)
    if n1 < 1e-8:
        raise DegenerateRotation("first column norm below 1e-8")
    b1 = c1 / n1
    c2p = c2 - np.dot(b1, c2) * b1
    n2 = np.linalg.norm(c2p)
    if n2 < 1e-8:
        raise DegenerateRotation("second column degenerate after projection")
    b2 = c2p / n2
    b3 = np.cross(b1, b2)
    R = np.column_stack([b1, b2, b3])
    return matrix_to_quat(R)
