"""Feature matrix construction for the nearest-neighbor pose search.

Each database frame gets a D-dimensional row combining pose features
(character-space feet positions, feet and hip velocities) and trajectory
features (future ground-plane positions and facing directions of the
virtual root, expressed in the current frame's character space). Rows are
stored normalized per column; frames whose future horizon leaves the clip
are masked out of search candidacy and stored as zero rows.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import math3d as m3
from .pose_db import PoseDatabase, fk_all_frames, finite_diff_velocities

# weight-group tags, one per feature family
GROUP_POSE_VELOCITY = "pose_velocity"
GROUP_POSE_POSITION = "pose_position"
GROUP_TRAJ_POSITION = "traj_position"
GROUP_TRAJ_DIRECTION = "traj_direction"


@dataclass(frozen=True)
class PoseFeature:
    kind: str           # "position" | "velocity"
    bone: str           # humanoid bone tag

    @property
    def width(self):
        return 3

    @property
    def group(self):
        return GROUP_POSE_VELOCITY if self.kind == "velocity" else GROUP_POSE_POSITION


@dataclass(frozen=True)
class TrajectoryFeature:
    kind: str                   # "position" | "direction"
    offsets: tuple[int, ...]    # future (or past, negative) frame offsets

    @property
    def width(self):
        return 2 * len(self.offsets)

    @property
    def group(self):
        return GROUP_TRAJ_POSITION if self.kind == "position" else GROUP_TRAJ_DIRECTION


@dataclass(frozen=True)
class FeatureSchema:
    pose: tuple[PoseFeature, ...]
    trajectory: tuple[TrajectoryFeature, ...]

    def __post_init__(self):
        for f in self.pose:
            if f.kind not in ("position", "velocity"):
                raise ValueError(f"unknown pose feature kind {f.kind!r}")
        for f in self.trajectory:
            if f.kind not in ("position", "direction"):
                raise ValueError(f"unknown trajectory feature kind {f.kind!r}")
            if not f.offsets:
                raise ValueError("trajectory feature needs at least one offset")

    @property
    def dimension(self):
        return sum(f.width for f in self.pose) + sum(f.width for f in self.trajectory)

    @property
    def features(self):
        return tuple(self.pose) + tuple(self.trajectory)

    def spans(self):
        """Contiguous (start, end, group) column span per feature."""
        out = []
        col = 0
        for f in self.features:
            out.append((col, col + f.width, f.group))
            col += f.width
        return out

    def group_columns(self):
        """Map group tag -> sorted column indices."""
        cols = {}
        for start, end, group in self.spans():
            cols.setdefault(group, []).extend(range(start, end))
        return cols

    @property
    def pose_dimension(self):
        return sum(f.width for f in self.pose)

    @property
    def max_offset(self):
        offs = [o for f in self.trajectory for o in f.offsets]
        return max(offs) if offs else 0

    @property
    def min_offset(self):
        offs = [o for f in self.trajectory for o in f.offsets]
        return min(offs + [0])


def default_schema():
    """Locomotion features: 9 velocity + 6 position + 6 + 6 trajectory = 27."""
    return FeatureSchema(
        pose=(
            PoseFeature("velocity", "LeftFoot"),
            PoseFeature("velocity", "RightFoot"),
            PoseFeature("velocity", "Hips"),
            PoseFeature("position", "LeftFoot"),
            PoseFeature("position", "RightFoot"),
        ),
        trajectory=(
            TrajectoryFeature("position", (20, 40, 60)),
            TrajectoryFeature("direction", (20, 40, 60)),
        ),
    )


@dataclass
class FeatureMatrix:
    rows: np.ndarray        # (N, D) normalized; invalid rows all zero
    mean: np.ndarray        # (D,)
    std: np.ndarray         # (D,)
    schema: FeatureSchema
    valid_mask: np.ndarray  # (N,) bool

    @property
    def dimension(self):
        return self.rows.shape[1]

    @property
    def frame_count(self):
        return self.rows.shape[0]


# ---------------------------------------------------------------------------
# raw extraction
# ---------------------------------------------------------------------------

def _char_positions(db: PoseDatabase):
    pos, _ = fk_all_frames(db, include_root=False)
    return pos


def _pose_bone_index(db: PoseDatabase, bone):
    try:
        return db.skeleton.bone_index(bone)
    except KeyError:
        raise ValueError(f"feature schema references unmapped bone {bone!r}") from None


def extract_pose_features(db: PoseDatabase, frame, schema: FeatureSchema, char_pos=None):
    """Raw (denormalized) pose-feature scalars for one frame.

    Positions come from character-space forward kinematics; velocities are
    clip-local backward differences of those positions.
    """
    start, end = db.clip_of(frame)
    if char_pos is None:
        char_pos = _char_positions(db)
    out = np.empty(schema.pose_dimension)
    col = 0
    for f in schema.pose:
        bi = _pose_bone_index(db, f.bone)
        if f.kind == "position":
            out[col:col + 3] = char_pos[frame, bi]
        else:
            if end - start < 2:
                out[col:col + 3] = 0.0
            elif frame > start:
                out[col:col + 3] = (char_pos[frame, bi] - char_pos[frame - 1, bi]) / db.frame_time
            else:
                out[col:col + 3] = (char_pos[start + 1, bi] - char_pos[start, bi]) / db.frame_time
        col += 3
    return out


def extract_trajectory_features(db: PoseDatabase, frame, schema: FeatureSchema):
    """Raw trajectory-feature scalars for one frame.

    Future samples of the virtual root are rotated into the current
    character frame and projected to the ground plane. Raises when any
    offset leaves the frame's clip: such frames are not search candidates.
    """
    start, end = db.clip_of(frame)
    p = db.positions[:, 0]
    r = db.rotations[:, 0]
    r_inv = m3.quat_inverse(r[frame])
    out = np.empty(schema.dimension - schema.pose_dimension)
    col = 0
    for f in schema.trajectory:
        for off in f.offsets:
            j = frame + off
            if not (start <= j < end):
                raise IndexError(
                    f"frame {frame} lacks trajectory sample at offset {off}"
                )
            if f.kind == "position":
                loc = m3.quat_rotate_vec(r_inv, p[j] - p[frame])
            else:
                loc = m3.quat_rotate_vec(m3.quat_mul(r_inv, r[j]), m3.FORWARD)
            out[col:col + 2] = m3.to_2d(loc)
            col += 2
    return out


def extract_row(db: PoseDatabase, frame, schema: FeatureSchema, char_pos=None):
    """Full raw feature row (pose + trajectory) for a valid frame."""
    return np.concatenate([
        extract_pose_features(db, frame, schema, char_pos),
        extract_trajectory_features(db, frame, schema),
    ])


# ---------------------------------------------------------------------------
# matrix build and normalization
# ---------------------------------------------------------------------------

def build_feature_matrix(db: PoseDatabase, schema: FeatureSchema | None = None) -> FeatureMatrix:
    schema = schema or default_schema()
    n = db.frame_count
    d = schema.dimension
    raw = np.zeros((n, d))
    valid = np.zeros(n, dtype=bool)

    char_pos = _char_positions(db)
    p = db.positions[:, 0]
    r = db.rotations[:, 0]
    r_inv = m3.quat_conjugate(r)  # unit quats: conjugate == inverse

    col = 0
    for f in schema.pose:
        bi = _pose_bone_index(db, f.bone)
        if f.kind == "position":
            raw[:, col:col + 3] = char_pos[:, bi]
        else:
            for start, end in db.clip_ranges:
                raw[start:end, col:col + 3] = finite_diff_velocities(
                    char_pos[start:end, bi], db.frame_time
                )
        col += 3

    for start, end in db.clip_ranges:
        idx = np.arange(start, end)
        ok = np.ones(end - start, dtype=bool)
        for f in schema.trajectory:
            for off in f.offsets:
                ok &= (idx + off >= start) & (idx + off < end)
        valid[start:end] = ok

    tcol = col
    for f in schema.trajectory:
        for off in f.offsets:
            for start, end in db.clip_ranges:
                idx = np.arange(start, end)
                sel = idx[valid[start:end]]
                j = sel + off
                if f.kind == "position":
                    loc = m3.quat_rotate_vec(r_inv[sel], p[j] - p[sel])
                else:
                    loc = m3.quat_rotate_vec(m3.quat_mul(r_inv[sel], r[j]),
                                             np.broadcast_to(m3.FORWARD, (len(sel), 3)))
                raw[sel, tcol:tcol + 2] = m3.to_2d(loc)
            tcol += 2

    if not valid.any():
        raise ValueError("no frame has the full trajectory horizon")

    mean = raw[valid].mean(axis=0)
    std = raw[valid].std(axis=0)
    std = np.where(std < 1e-8, 1.0, std)  # constant columns normalize to zero

    rows = np.zeros_like(raw)
    rows[valid] = (raw[valid] - mean) / std
    return FeatureMatrix(rows=rows, mean=mean, std=std, schema=schema, valid_mask=valid)


def normalize_query(raw, mean, std):
    return (np.asarray(raw, dtype=np.float64) - mean) / std


def denormalize(row, mean, std):
    return np.asarray(row, dtype=np.float64) * std + mean
