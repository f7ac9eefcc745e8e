"""Rotation, vector and spring math shared by the whole engine.

Conventions
-----------
- Quaternions are scalar-first ``(w, x, y, z)`` arrays of shape ``(..., 4)``.
- The world is left-handed, y-up, z-forward: up is ``(0, 1, 0)`` and the
  character's forward axis is ``(0, 0, 1)``.
- Rotation vectors encode the angle as the vector length (radians), shape
  ``(..., 3)``.
- All functions broadcast over leading dimensions and work on float64.

Every quaternion extraction path (matrix -> quat, quat -> rotation vector)
returns the canonical representative with ``w >= 0`` so that downstream
finite differences never straddle the double cover.
"""

from __future__ import annotations

import numpy as np

UP = np.array([0.0, 1.0, 0.0])
FORWARD = np.array([0.0, 0.0, 1.0])

QUAT_IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])

_EPS_NORM = 1e-9


def vec_length(v):
    """Euclidean length over the last axis."""
    return np.sqrt(np.sum(np.asarray(v, dtype=np.float64) ** 2, axis=-1))


def vec_normalize(v, eps=_EPS_NORM):
    """Unit vector along the last axis; raises on near-zero input."""
    v = np.asarray(v, dtype=np.float64)
    n = vec_length(v)
    if np.any(n < eps):
        raise ValueError("cannot normalize near-zero vector")
    return v / n[..., None]


def vec_cross(a, b):
    return np.cross(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64))


def vec_dot(a, b):
    return np.sum(np.asarray(a, dtype=np.float64) * np.asarray(b, dtype=np.float64), axis=-1)


def ground(v):
    """Project onto the ground plane (zero the vertical component)."""
    v = np.array(v, dtype=np.float64, copy=True)
    v[..., 1] = 0.0
    return v


def to_2d(v):
    """Drop the vertical component: (x, y, z) -> (x, z)."""
    v = np.asarray(v, dtype=np.float64)
    return v[..., [0, 2]]


def from_2d(v, y=0.0):
    """Lift a ground-plane 2D vector back to 3D."""
    v = np.asarray(v, dtype=np.float64)
    out = np.zeros(v.shape[:-1] + (3,))
    out[..., 0] = v[..., 0]
    out[..., 1] = y
    out[..., 2] = v[..., 1]
    return out


# ---------------------------------------------------------------------------
# Quaternions
# ---------------------------------------------------------------------------

def quat_mul(a, b):
    """Hamilton product a*b, scalar-first."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    aw, av = a[..., 0], a[..., 1:]
    bw, bv = b[..., 0], b[..., 1:]
    w = aw * bw - np.sum(av * bv, axis=-1)
    v = aw[..., None] * bv + bw[..., None] * av + np.cross(av, bv)
    return np.concatenate([w[..., None], v], axis=-1)


def quat_norm(q):
    return vec_length(q)


def quat_inverse(q):
    """Inverse; for unit quaternions this is the conjugate."""
    q = np.asarray(q, dtype=np.float64)
    n2 = np.sum(q * q, axis=-1)
    if np.any(n2 < _EPS_NORM**2):
        raise ValueError("cannot invert near-zero quaternion")
    out = q * np.array([1.0, -1.0, -1.0, -1.0])
    return out / n2[..., None]


def quat_conjugate(q):
    return np.asarray(q, dtype=np.float64) * np.array([1.0, -1.0, -1.0, -1.0])


def quat_normalize(q):
    q = np.asarray(q, dtype=np.float64)
    n = quat_norm(q)
    if np.any(n < _EPS_NORM):
        raise ValueError("cannot normalize near-zero quaternion")
    return q / n[..., None]


def quat_canonical(q):
    """Flip sign so w >= 0 (identity representative of the double cover)."""
    q = np.asarray(q, dtype=np.float64)
    sign = np.where(q[..., 0:1] < 0.0, -1.0, 1.0)
    return q * sign


def quat_rotate_vec(q, u):
    """Rotate vector u by unit quaternion q: q (0,u) q^-1."""
    q = np.asarray(q, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    qv = q[..., 1:]
    qw = q[..., 0:1]
    # expanded sandwich product; one cross less than the naive form
    t = 2.0 * np.cross(qv, u)
    return u + qw * t + np.cross(qv, t)


def mat_from_quat(q):
    """3x3 rotation matrix for unit quaternion q, shape (..., 3, 3)."""
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    m = np.empty(q.shape[:-1] + (3, 3))
    m[..., 0, 0] = 1.0 - 2.0 * (y * y + z * z)
    m[..., 0, 1] = 2.0 * (x * y - w * z)
    m[..., 0, 2] = 2.0 * (x * z + w * y)
    m[..., 1, 0] = 2.0 * (x * y + w * z)
    m[..., 1, 1] = 1.0 - 2.0 * (x * x + z * z)
    m[..., 1, 2] = 2.0 * (y * z - w * x)
    m[..., 2, 0] = 2.0 * (x * z - w * y)
    m[..., 2, 1] = 2.0 * (y * z + w * x)
    m[..., 2, 2] = 1.0 - 2.0 * (x * x + y * y)
    return m


def quat_from_mat(m):
    """Quaternion (w >= 0) from a rotation matrix.

    Uses the largest-diagonal branch so component signs survive; the naive
    per-component square roots lose them. Input must be a rotation matrix
    (orthonormal, det +1) within 1e-4.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.shape[-2:] != (3, 3):
        raise ValueError("expected (..., 3, 3) matrix")
    rtr = np.einsum("...ij,...kj->...ik", m, m)
    eye = np.broadcast_to(np.eye(3), m.shape)
    if np.max(np.abs(rtr - eye)) > 1e-3 or np.any(np.linalg.det(m) < 0.0):
        raise ValueError("input is not a rotation matrix")

    single = m.ndim == 2
    m = m.reshape((-1, 3, 3))
    q = np.empty((m.shape[0], 4))

    tr = m[:, 0, 0] + m[:, 1, 1] + m[:, 2, 2]
    # candidate 4*c^2 values for c in (w, x, y, z); pick the largest per item
    cand = np.stack(
        [
            1.0 + tr,
            1.0 + m[:, 0, 0] - m[:, 1, 1] - m[:, 2, 2],
            1.0 - m[:, 0, 0] + m[:, 1, 1] - m[:, 2, 2],
            1.0 - m[:, 0, 0] - m[:, 1, 1] + m[:, 2, 2],
        ],
        axis=-1,
    )
    branch = np.argmax(cand, axis=-1)
    for i in range(m.shape[0]):
        a = m[i]
        b = branch[i]
        s = 2.0 * np.sqrt(max(cand[i, b], 0.0))
        if b == 0:
            q[i] = (0.25 * s, (a[2, 1] - a[1, 2]) / s, (a[0, 2] - a[2, 0]) / s, (a[1, 0] - a[0, 1]) / s)
        elif b == 1:
            q[i] = ((a[2, 1] - a[1, 2]) / s, 0.25 * s, (a[0, 1] + a[1, 0]) / s, (a[0, 2] + a[2, 0]) / s)
        elif b == 2:
            q[i] = ((a[0, 2] - a[2, 0]) / s, (a[0, 1] + a[1, 0]) / s, 0.25 * s, (a[1, 2] + a[2, 1]) / s)
        else:
            q[i] = ((a[1, 0] - a[0, 1]) / s, (a[0, 2] + a[2, 0]) / s, (a[1, 2] + a[2, 1]) / s, 0.25 * s)
    q = quat_canonical(q / np.linalg.norm(q, axis=-1, keepdims=True))
    return q[0] if single else q


def look_rotation(forward, up=UP):
    """Rotation that maps world forward (0,0,1) onto `forward`.

    The right axis is built as up x forward so that
    look_rotation((0,0,1), (0,1,0)) is the identity and the resulting up
    axis stays in the forward-up plane.
    """
    f = np.asarray(forward, dtype=np.float64)
    u = np.asarray(up, dtype=np.float64)
    if vec_length(f) < 1e-6:
        raise ValueError("forward vector too short")
    f = f / vec_length(f)
    u = u / vec_length(u)
    r = np.cross(u, f)
    rn = vec_length(r)
    if rn < 1e-6:
        raise ValueError("forward is parallel to up")
    r = r / rn
    u2 = np.cross(f, r)
    m = np.stack([r, u2, f], axis=-1)
    return quat_from_mat(m)


def quat_to_rotvec(q):
    """Axis-angle vector (angle encoded as length, <= pi) of a unit quat."""
    q = quat_canonical(np.asarray(q, dtype=np.float64))
    w = np.clip(q[..., 0], -1.0, 1.0)
    v = q[..., 1:]
    vn = vec_length(v)
    angle = 2.0 * np.arccos(w)
    # near-identity: arccos is ill-conditioned and the axis is undefined
    scale = np.where(vn > 1e-12, angle / np.maximum(vn, 1e-300), 2.0)
    scale = np.where(np.abs(w) >= 1.0 - 1e-9, 0.0, scale)
    return v * scale[..., None]


def rotvec_to_quat(v):
    """Unit quaternion for an axis-angle vector; zero maps to identity."""
    v = np.asarray(v, dtype=np.float64)
    angle = vec_length(v)
    half = 0.5 * angle
    w = np.cos(half)
    s = np.where(angle > 1e-12, np.sin(half) / np.maximum(angle, 1e-300), 0.5)
    out = np.concatenate([w[..., None], v * s[..., None]], axis=-1)
    return out


def quat_from_axis_angle(axis, angle):
    """Quaternion for rotation of `angle` radians about unit `axis`."""
    axis = np.asarray(axis, dtype=np.float64)
    return np.concatenate(
        [
            np.cos(angle / 2.0)[..., None] if np.ndim(angle) else np.array([np.cos(angle / 2.0)]),
            np.sin(angle / 2.0)[..., None] * axis if np.ndim(angle) else np.sin(angle / 2.0) * axis,
        ],
        axis=-1,
    )


def yaw_quat(angle):
    """Yaw rotation (about world up) by `angle` radians."""
    angle = np.asarray(angle, dtype=np.float64)
    half = 0.5 * angle
    zero = np.zeros_like(half)
    return np.stack([np.cos(half), zero, np.sin(half), zero], axis=-1)


def quat_angle_between(a, b):
    """Geodesic angle in radians between two unit quaternions."""
    d = np.abs(np.clip(np.sum(np.asarray(a) * np.asarray(b), axis=-1), -1.0, 1.0))
    return 2.0 * np.arccos(d)


def signed_yaw(q):
    """Yaw angle of a yaw-only quaternion (rotation about +y)."""
    q = quat_canonical(np.asarray(q, dtype=np.float64))
    return 2.0 * np.arctan2(q[..., 2], q[..., 0])


def heading_angle(v2d):
    """Yaw angle whose forward direction matches a ground-plane 2D vector."""
    v2d = np.asarray(v2d, dtype=np.float64)
    return np.arctan2(v2d[..., 0], v2d[..., 1])


def yaw_to_dir2d(angle):
    """Inverse of heading_angle."""
    angle = np.asarray(angle, dtype=np.float64)
    return np.stack([np.sin(angle), np.cos(angle)], axis=-1)


# ---------------------------------------------------------------------------
# Springs
# ---------------------------------------------------------------------------

def spring_decay_exponential(y, target, beta, dt):
    """One exponential-decay step y += beta*(target - y)*dt."""
    y = np.asarray(y, dtype=np.float64)
    return y + beta * (np.asarray(target, dtype=np.float64) - y) * dt


def spring_critical_step(y, ydot, target, w, dt):
    """Advance a critically damped spring by dt using the closed form.

    The spring obeys y'' = w^2 (target - y) - 2 w y'; the step is exact for
    any dt, so large steps never overshoot or oscillate. Works elementwise
    on arrays. Returns (y, ydot) after dt.
    """
    if w <= 0.0:
        raise ValueError("spring stiffness must be positive")
    if dt < 0.0:
        raise ValueError("dt must be non-negative")
    y = np.asarray(y, dtype=np.float64)
    ydot = np.asarray(ydot, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    j0 = y - target
    j1 = ydot + w * j0
    e = np.exp(-w * dt)
    y_new = target + (j0 + j1 * dt) * e
    ydot_new = (ydot - j1 * w * dt) * e
    return y_new, ydot_new


def spring_velocity_displacement(v0, vdot0, target_v, w, t):
    """Displacement accumulated by a velocity tracked with a critical spring.

    Integrates the closed-form spring position (interpreted as a velocity)
    from 0 to t: the prediction used when a joystick gives a target velocity
    but no target position.
    """
    if w <= 0.0:
        raise ValueError("spring stiffness must be positive")
    if t < 0.0:
        raise ValueError("t must be non-negative")
    v0 = np.asarray(v0, dtype=np.float64)
    vdot0 = np.asarray(vdot0, dtype=np.float64)
    target_v = np.asarray(target_v, dtype=np.float64)
    j0 = v0 - target_v
    j1 = vdot0 + w * j0
    e = np.exp(-w * t)
    return target_v * t + j0 * (1.0 - e) / w + j1 * (1.0 - e * (1.0 + w * t)) / (w * w)


def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    a = np.asarray(a, dtype=np.float64)
    return np.pi - np.mod(np.pi - a, 2.0 * np.pi)
