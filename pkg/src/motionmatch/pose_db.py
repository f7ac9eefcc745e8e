"""Pose database: animation clips rebased onto a ground-projected virtual root.

A built database stores, for every frame: local joint positions and
rotations (with a synthetic yaw-only root joint prepended at index 0 and the
hip rebased into its space at index 1), finite-difference linear and angular
velocities, and median-filtered foot contact flags. Finite differences and
the contact filter never cross clip boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import math3d as m3
from .bvh import AnimationClip, Joint, Skeleton

VIRTUAL_ROOT_NAME = "MM_VirtualRoot"


class DegenerateForward(ValueError):
    """Hip forward direction is (nearly) vertical; no yaw can be extracted."""


@dataclass
class PoseDbConfig:
    hip_forward: tuple[float, float, float] = (0.0, 0.0, 1.0)
    contact_speed_threshold: float = 0.15   # m/s, "close to zero" toe speed
    contact_filter_radius: int = 6


@dataclass
class PoseDatabase:
    skeleton: Skeleton              # virtual root at index 0, hip at index 1
    frame_time: float
    positions: np.ndarray           # (N, J, 3) local; index 0 holds root world p
    rotations: np.ndarray           # (N, J, 4) local quats; index 0 yaw-only r
    velocities: np.ndarray          # (N, J, 3) per second
    angular_velocities: np.ndarray  # (N, J, 3) rotation vectors per second
    contacts: np.ndarray            # (N, 2) bool, left then right foot
    clip_ranges: list[tuple[int, int]]
    tags: list[str] = field(default_factory=list)

    @property
    def frame_count(self):
        return self.positions.shape[0]

    @property
    def joint_count(self):
        return self.positions.shape[1]

    def clip_of(self, frame):
        for start, end in self.clip_ranges:
            if start <= frame < end:
                return start, end
        raise IndexError(f"frame {frame} outside every clip")


def compute_virtual_root(hip_pos, hip_rot, hip_forward=(0.0, 0.0, 1.0)):
    """Ground-projected position and yaw-only orientation of the character.

    Raises DegenerateForward when the hip's forward axis points (almost)
    straight up or down; the caller should reuse the previous frame's
    rotation in that case.
    """
    hip_pos = np.asarray(hip_pos, dtype=np.float64)
    f = m3.quat_rotate_vec(hip_rot, np.asarray(hip_forward, dtype=np.float64))
    f_proj = m3.ground(f)
    if m3.vec_length(f_proj) < 1e-4:
        raise DegenerateForward("hip forward axis is vertical")
    p = m3.ground(hip_pos)
    r = m3.look_rotation(f_proj, m3.UP)
    return p, r


def rebase_hip(hip_pos, hip_rot, root_pos, root_rot):
    """Express the hip's world pose in virtual-root space."""
    inv = m3.quat_inverse(root_rot)
    local_pos = m3.quat_rotate_vec(inv, np.asarray(hip_pos, dtype=np.float64) - root_pos)
    local_rot = m3.quat_mul(inv, hip_rot)
    return local_pos, local_rot


def finite_diff_velocities(values, frame_time):
    """Backward-difference velocities; frame 0 copies frame 1's value.

    ``values`` covers a single clip with the frame axis first.
    """
    values = np.asarray(values, dtype=np.float64)
    out = np.zeros_like(values)
    if values.shape[0] > 1:
        out[1:] = (values[1:] - values[:-1]) / frame_time
        out[0] = out[1]
    return out


def finite_diff_angular(rots, frame_time):
    """Backward-difference angular velocities as rotation vectors per second.

    Computed as log(q_i * q_{i-1}^-1) / dt; the canonical log keeps the
    result on the shortest path even across sign flips in the quaternion
    stream. Single-clip input, frame axis first.
    """
    rots = np.asarray(rots, dtype=np.float64)
    out = np.zeros(rots.shape[:-1] + (3,))
    if rots.shape[0] > 1:
        rel = m3.quat_mul(rots[1:], m3.quat_conjugate(rots[:-1]))
        out[1:] = m3.quat_to_rotvec(rel) / frame_time
        out[0] = out[1]
    return out


def median_filter_bool(signal, radius=6):
    """Majority vote over a clamped window [i-radius, i+radius]."""
    signal = np.asarray(signal, dtype=bool)
    n = signal.shape[0]
    out = np.empty_like(signal)
    acc = np.concatenate([[0], np.cumsum(signal.astype(np.int64))])
    for i in range(n):
        lo = max(0, i - radius)
        hi = min(n, i + radius + 1)
        out[i] = 2 * (acc[hi] - acc[lo]) > (hi - lo)
    return out


# ---------------------------------------------------------------------------
# forward kinematics
# ---------------------------------------------------------------------------

def forward_kinematics(db: PoseDatabase, frame, joint, include_root=True):
    """Pose of one joint by composing the parent chain.

    With include_root=False the virtual root transform is skipped, which
    yields character-space coordinates.
    """
    if not (0 <= frame < db.frame_count):
        raise IndexError(f"frame {frame} out of range")
    if not (0 <= joint < db.joint_count):
        raise IndexError(f"joint {joint} out of range")
    chain = []
    j = joint
    while j is not None:
        chain.append(j)
        j = db.skeleton.joints[j].parent
    pos = np.zeros(3)
    rot = m3.QUAT_IDENTITY.copy()
    for j in reversed(chain):
        if j == 0 and not include_root:
            continue
        pos = pos + m3.quat_rotate_vec(rot, db.positions[frame, j])
        rot = m3.quat_mul(rot, db.rotations[frame, j])
    return pos, rot


def fk_all_frames(db: PoseDatabase, include_root=True):
    """World (or character-space) positions and rotations for every frame.

    Returns (positions (N, J, 3), rotations (N, J, 4)). Vectorized over
    frames, looping only over the short joint chain.
    """
    n, j = db.frame_count, db.joint_count
    pos = np.zeros((n, j, 3))
    rot = np.zeros((n, j, 4))
    for ji in range(j):
        parent = db.skeleton.joints[ji].parent
        if parent is None:
            if include_root:
                pos[:, ji] = db.positions[:, ji]
                rot[:, ji] = db.rotations[:, ji]
            else:
                pos[:, ji] = 0.0
                rot[:, ji] = m3.QUAT_IDENTITY
        else:
            pos[:, ji] = pos[:, parent] + m3.quat_rotate_vec(rot[:, parent], db.positions[:, ji])
            rot[:, ji] = m3.quat_mul(rot[:, parent], db.rotations[:, ji])
    return pos, rot


def detect_contacts(db: PoseDatabase, speed_threshold=0.15, filter_radius=6):
    """Per-frame (left, right) foot contact flags from world toe speed.

    The raw flag is toe speed below the threshold; a clip-local boolean
    median filter removes flicker.
    """
    sk = db.skeleton
    try:
        toes = (sk.bone_index("LeftToes"), sk.bone_index("RightToes"))
    except KeyError as e:
        raise ValueError(f"contact detection needs both toe joints: {e}") from None
    world_pos, _ = fk_all_frames(db, include_root=True)
    out = np.zeros((db.frame_count, 2), dtype=bool)
    for start, end in db.clip_ranges:
        for side, toe in enumerate(toes):
            vel = finite_diff_velocities(world_pos[start:end, toe], db.frame_time)
            raw = m3.vec_length(vel) < speed_threshold
            out[start:end, side] = median_filter_bool(raw, filter_radius)
    return out


# ---------------------------------------------------------------------------
# building
# ---------------------------------------------------------------------------

def _skeleton_with_virtual_root(skeleton: Skeleton) -> Skeleton:
    joints = [Joint(name=VIRTUAL_ROOT_NAME, parent=None, offset=np.zeros(3), channels=())]
    for j in skeleton.joints:
        joints.append(
            Joint(
                name=j.name,
                parent=0 if j.parent is None else j.parent + 1,
                offset=j.offset.copy(),
                channels=j.channels,
                end_site_offset=None if j.end_site_offset is None else j.end_site_offset.copy(),
            )
        )
    hmap = {i + 1: b for i, b in skeleton.humanoid_map.items()}
    return Skeleton(joints=joints, humanoid_map=hmap)


def build_pose_database(clips: list[AnimationClip], config: PoseDbConfig | None = None) -> PoseDatabase:
    """Assemble the searchable pose database from one or more clips.

    All clips must share one skeleton (same names, parents, offsets within
    1e-4). Velocities, angular velocities and contacts are computed per
    clip so nothing bleeds across boundaries.
    """
    if not clips:
        raise ValueError("no clips given")
    config = config or PoseDbConfig()
    base = clips[0].skeleton
    for c in clips[1:]:
        if not base.same_structure(c.skeleton):
            raise ValueError("clips do not share a skeleton")
        if abs(c.frame_time - clips[0].frame_time) > 1e-9:
            raise ValueError("clips do not share a frame time")

    sk = _skeleton_with_virtual_root(base)
    j_total = len(sk.joints)
    total = sum(c.frame_count for c in clips)
    positions = np.zeros((total, j_total, 3))
    rotations = np.zeros((total, j_total, 4))
    velocities = np.zeros((total, j_total, 3))
    angular = np.zeros((total, j_total, 3))
    clip_ranges = []
    hip_forward = np.asarray(config.hip_forward, dtype=np.float64)

    cursor = 0
    for clip in clips:
        n = clip.frame_count
        start, end = cursor, cursor + n
        clip_ranges.append((start, end))
        hip_pos = clip.root_positions
        hip_rot = clip.rotations[:, 0]

        root_p = np.zeros((n, 3))
        root_r = np.zeros((n, 4))
        prev_r = m3.QUAT_IDENTITY
        for i in range(n):
            try:
                p, r = compute_virtual_root(hip_pos[i], hip_rot[i], hip_forward)
            except DegenerateForward:
                p, r = m3.ground(hip_pos[i]), prev_r.copy()
            root_p[i], root_r[i] = p, r
            prev_r = r

        rebased_p, rebased_r = rebase_hip(hip_pos, hip_rot, root_p, root_r)
        positions[start:end, 0] = root_p
        rotations[start:end, 0] = root_r
        positions[start:end, 1] = rebased_p
        rotations[start:end, 1] = rebased_r
        for ji in range(1, len(base.joints)):
            positions[start:end, ji + 1] = base.joints[ji].offset
            rotations[start:end, ji + 1] = clip.rotations[:, ji]

        velocities[start:end] = finite_diff_velocities(positions[start:end], clip.frame_time)
        angular[start:end] = finite_diff_angular(rotations[start:end], clip.frame_time)
        cursor = end

    db = PoseDatabase(
        skeleton=sk,
        frame_time=clips[0].frame_time,
        positions=positions,
        rotations=rotations,
        velocities=velocities,
        angular_velocities=angular,
        contacts=np.zeros((total, 2), dtype=bool),
        clip_ranges=clip_ranges,
        tags=[f"clip{i}" for i in range(len(clips))],
    )
    db.contacts = detect_contacts(
        db, config.contact_speed_threshold, config.contact_filter_radius
    )
    return db
