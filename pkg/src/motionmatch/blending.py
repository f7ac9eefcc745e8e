"""Pose blending: inertialized transitions, analytic leg IK and foot locking.

Inertialization never interpolates two streams. At a discontinuity it
stores the offset between the outgoing (source) and incoming (target)
poses, then plays only the target while the offset decays through a
critically damped spring in rotation-vector space. Output is therefore
exactly continuous at the transition frame and exactly equals the target
once the offsets die out.

The update order matters for continuity: offsets decay first, transitions
rebase the already-decayed offsets, and composition with the target pose
happens last. A ``stiffness`` of w gives offsets the envelope
``(1 + 2wt) e^(-2wt)``, which falls below 0.1% of the initial magnitude by
t = 5/w (the spring itself runs at rate 2w).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import math3d as m3

_MAX_OFFSET_ANGLE = np.pi - 1e-3


@dataclass
class JointStream:
    """One stream sample: local rotations plus angular velocities for the
    real joints (hip first), and the hip position in character space."""

    rotations: np.ndarray           # (J, 4)
    angular_velocities: np.ndarray  # (J, 3)
    hip_position: np.ndarray        # (3,)
    hip_velocity: np.ndarray        # (3,)


class Inertializer:
    """Per-character transition blender.

    Rotation offsets are quaternions composed on the right of the target
    pose; they decay in log space together with the angular-velocity
    offsets. The hip position offset is a plain vector spring.
    """

    def __init__(self, joint_count, stiffness=20.0):
        if stiffness <= 0.0:
            raise ValueError("stiffness must be positive")
        self.stiffness = stiffness
        self.rot_offsets = np.tile(m3.QUAT_IDENTITY, (joint_count, 1))
        self.angvel_offsets = np.zeros((joint_count, 3))
        self.hip_offset = np.zeros(3)
        self.hip_vel_offset = np.zeros(3)

    @property
    def rate(self):
        return 2.0 * self.stiffness

    def at_rest(self, tol=1e-9):
        return (
            np.all(np.abs(self.rot_offsets[:, 1:]) < tol)
            and np.all(np.abs(self.angvel_offsets) < tol)
            and np.all(np.abs(self.hip_offset) < tol)
        )

    def offset_magnitude(self):
        """Largest rotation-offset angle (radians) across joints."""
        return float(np.max(m3.vec_length(m3.quat_to_rotvec(self.rot_offsets))))

    def decay(self, dt):
        """Spring the offsets toward zero by dt."""
        if dt < 0.0:
            raise ValueError("dt must be non-negative")
        if dt == 0.0:
            return
        o = m3.quat_to_rotvec(self.rot_offsets)
        o, self.angvel_offsets = m3.spring_critical_step(
            o, self.angvel_offsets, np.zeros_like(o), self.rate, dt
        )
        self.rot_offsets = m3.rotvec_to_quat(o)
        self.hip_offset, self.hip_vel_offset = m3.spring_critical_step(
            self.hip_offset, self.hip_vel_offset, np.zeros(3), self.rate, dt
        )

    def transition(self, source: JointStream, target: JointStream):
        """Rebase offsets so output continues the source stream seamlessly."""
        self.rot_offsets = m3.quat_mul(
            m3.quat_mul(m3.quat_inverse(target.rotations), source.rotations),
            self.rot_offsets,
        )
        # clamp near-antipodal offsets below pi so the log stays stable
        vec = m3.quat_to_rotvec(self.rot_offsets)
        mag = m3.vec_length(vec)
        over = mag > _MAX_OFFSET_ANGLE
        if np.any(over):
            vec[over] *= (_MAX_OFFSET_ANGLE / mag[over])[:, None]
            self.rot_offsets[over] = m3.rotvec_to_quat(vec[over])
        self.angvel_offsets = (
            source.angular_velocities + self.angvel_offsets - target.angular_velocities
        )
        self.hip_offset = source.hip_position + self.hip_offset - target.hip_position
        self.hip_vel_offset = source.hip_velocity + self.hip_vel_offset - target.hip_velocity

    def output(self, target: JointStream) -> JointStream:
        """Compose the target pose with the current offsets."""
        return JointStream(
            rotations=m3.quat_mul(target.rotations, self.rot_offsets),
            angular_velocities=target.angular_velocities + self.angvel_offsets,
            hip_position=target.hip_position + self.hip_offset,
            hip_velocity=target.hip_velocity + self.hip_vel_offset,
        )


# ---------------------------------------------------------------------------
# two-joint IK
# ---------------------------------------------------------------------------

def _angle_between(u, v):
    d = np.dot(u, v) / (np.linalg.norm(u) * np.linalg.norm(v))
    return np.arccos(np.clip(d, -1.0, 1.0))


def two_joint_ik(hip, knee, foot, target, knee_axis_hint):
    """Analytic two-bone IK for a leg (or arm).

    Returns world-space correction rotations (hip_delta, knee_delta). Apply
    them as: knee' = hip + hip_delta*(knee - hip) and
    foot' = knee' + hip_delta*knee_delta*(foot - knee); joint world
    rotations pre-multiply the same way. The knee hinges about the current
    bend-plane normal, falling back to ``knee_axis_hint`` when the leg is
    straight. Unreachable targets produce a straight leg pointing at the
    target. Bone lengths are never altered.
    """
    hip = np.asarray(hip, dtype=np.float64)
    knee = np.asarray(knee, dtype=np.float64)
    foot = np.asarray(foot, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)

    l1 = np.linalg.norm(knee - hip)
    l2 = np.linalg.norm(foot - knee)
    if l1 < 1e-9 or l2 < 1e-9:
        raise ValueError("degenerate zero-length bone")

    lat = np.clip(np.linalg.norm(target - hip), 1e-7, l1 + l2)

    axis = np.cross(foot - hip, knee - hip)
    if np.linalg.norm(axis) < 1e-8:
        d = foot - hip
        d = d / np.linalg.norm(d)
        hint = np.asarray(knee_axis_hint, dtype=np.float64)
        axis = hint - np.dot(hint, d) * d
        if np.linalg.norm(axis) < 1e-8:
            raise ValueError("knee axis hint is parallel to the leg")
    axis = axis / np.linalg.norm(axis)

    ac_ab_0 = _angle_between(foot - hip, knee - hip)
    ba_bc_0 = _angle_between(hip - knee, foot - knee)
    ac_ab_1 = np.arccos(np.clip((l1 * l1 + lat * lat - l2 * l2) / (2 * l1 * lat), -1.0, 1.0))
    ba_bc_1 = np.arccos(np.clip((l1 * l1 + l2 * l2 - lat * lat) / (2 * l1 * l2), -1.0, 1.0))

    r0 = m3.rotvec_to_quat((ac_ab_1 - ac_ab_0) * axis)
    r1 = m3.rotvec_to_quat((ba_bc_1 - ba_bc_0) * axis)

    # swing the straightened/bent chain onto the target direction
    cur_dir = foot - hip
    tgt_dir = target - hip
    cross = np.cross(cur_dir, tgt_dir)
    cn = np.linalg.norm(cross)
    if cn > 1e-9 * np.linalg.norm(cur_dir) * np.linalg.norm(tgt_dir):
        r2 = m3.rotvec_to_quat(_angle_between(cur_dir, tgt_dir) * cross / cn)
    else:
        r2 = m3.QUAT_IDENTITY

    hip_delta = m3.quat_mul(r2, r0)
    knee_delta = r1
    return hip_delta, knee_delta


def apply_two_joint_ik(hip, knee, foot, hip_delta, knee_delta):
    """Positions of knee and foot after the IK deltas (for verification)."""
    knee2 = hip + m3.quat_rotate_vec(hip_delta, knee - hip)
    foot2 = knee2 + m3.quat_rotate_vec(
        m3.quat_mul(hip_delta, knee_delta), foot - knee
    )
    return knee2, foot2


# ---------------------------------------------------------------------------
# foot locking
# ---------------------------------------------------------------------------

@dataclass
class FootLockConfig:
    lock_speed: float = 0.05        # m/s, output speed below which we pin
    unlock_distance: float = 0.25   # m, pose foot drifting farther unlocks
    stiffness: float = 20.0


@dataclass
class FootState:
    locked: bool = False
    lock_position: np.ndarray | None = None
    candidate: np.ndarray | None = None
    recovering: bool = False
    offset: np.ndarray = field(default_factory=lambda: np.zeros(3))
    offset_vel: np.ndarray = field(default_factory=lambda: np.zeros(3))
    prev_output: np.ndarray | None = None


@dataclass
class FootResult:
    position: np.ndarray            # where the foot should end up
    locked: bool
    deltas: tuple | None            # (hip_delta, knee_delta) or None


class FootLocker:
    """Contact-driven foot pinning for both feet.

    While a foot's contact flag is up, its rendered position blends toward
    the spot where contact began; once the blended output is slow enough
    the position freezes and a two-joint IK holds it there. Losing contact
    (or drifting past the unlock distance) releases the pin and blends the
    residual offset back out, so output stays continuous through every
    lock and unlock event.
    """

    def __init__(self, config: FootLockConfig | None = None):
        self.config = config or FootLockConfig()
        self.feet = (FootState(), FootState())

    def reset(self):
        self.feet = (FootState(), FootState())

    def _update_foot(self, st: FootState, pose_foot, contact, dt):
        cfg = self.config
        pose_foot = np.asarray(pose_foot, dtype=np.float64)

        if st.locked:
            drifted = np.linalg.norm(pose_foot - st.lock_position) > cfg.unlock_distance
            if (not contact) or drifted:
                st.offset = st.lock_position - pose_foot
                st.offset_vel = np.zeros(3)
                st.locked = False
                st.candidate = None
                # pose drifted away while still in contact: chase it before
                # considering a new lock, otherwise we would re-pin in place
                st.recovering = drifted and contact
                # the unlock frame still renders at the lock spot; the blend
                # back toward the pose starts next frame
                st.prev_output = st.lock_position.copy()
                return st.lock_position.copy()
            st.prev_output = st.lock_position.copy()
            return st.lock_position.copy()

        if contact and not st.recovering:
            if st.candidate is None:
                st.candidate = pose_foot + st.offset  # where the foot touched down
            target_offset = st.candidate - pose_foot
        else:
            st.candidate = None
            target_offset = np.zeros(3)
            if st.recovering and (not contact or np.linalg.norm(st.offset) < 0.01):
                st.recovering = False

        if dt > 0.0:
            st.offset, st.offset_vel = m3.spring_critical_step(
                st.offset, st.offset_vel, target_offset, 2.0 * cfg.stiffness, dt
            )
        out = pose_foot + st.offset

        if contact and not st.recovering and st.prev_output is not None and dt > 0.0:
            speed = np.linalg.norm(out - st.prev_output) / dt
            if speed < cfg.lock_speed:
                st.locked = True
                st.lock_position = out.copy()
        st.prev_output = out.copy()
        return out

    def update(self, legs, contacts, dt):
        """Advance both feet.

        ``legs`` is a pair of (hip, knee, foot, knee_axis_hint) world-space
        tuples, left then right; ``contacts`` the two boolean flags.
        Returns two FootResult entries with the adjusted foot position and,
        when the foot must move, the IK deltas that put it there.
        """
        results = []
        for st, leg, contact in zip(self.feet, legs, contacts):
            hip, knee, foot, hint = leg
            out = self._update_foot(st, foot, bool(contact), dt)
            deltas = None
            if np.linalg.norm(out - foot) > 1e-9:
                deltas = two_joint_ik(hip, knee, foot, out, hint)
            results.append(FootResult(position=out, locked=st.locked, deltas=deltas))
        return results
