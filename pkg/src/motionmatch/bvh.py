"""Biovision Hierarchy (BVH) parsing, writing and conversion.

The parser accepts the usual grammar: HIERARCHY / ROOT / JOINT / OFFSET /
CHANNELS / End Site / MOTION / "Frames:" / "Frame Time:", with arbitrary
whitespace and arbitrary rotation-channel orders. Joints are stored in
preorder so every parent index precedes its children.

Conversion turns file-space data (right-handed, usually centimeters) into
the engine's canonical representation: left-handed y-up meters with
quaternion local rotations. The z axis flips sign on positions, and the X
and Y Euler angles are negated when building quaternions.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import math3d as m3

POSITION_CHANNELS = ("Xposition", "Yposition", "Zposition")
ROTATION_CHANNELS = ("Xrotation", "Yrotation", "Zrotation")

# humanoid convention bone tags used for retargeting and feature extraction
HUMANOID_BONES = (
    "Hips", "Spine", "Chest", "UpperChest", "Neck", "Head",
    "LeftShoulder", "LeftUpperArm", "LeftLowerArm", "LeftHand",
    "RightShoulder", "RightUpperArm", "RightLowerArm", "RightHand",
    "LeftUpperLeg", "LeftLowerLeg", "LeftFoot", "LeftToes",
    "RightUpperLeg", "RightLowerLeg", "RightFoot", "RightToes",
)

# bones the pose pipeline cannot do without (virtual root, features, contacts)
REQUIRED_BONES = ("Hips", "LeftFoot", "RightFoot", "LeftToes", "RightToes")


class BvhSyntaxError(ValueError):
    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass
class Joint:
    name: str
    parent: int | None
    offset: np.ndarray            # (3,), file units until converted
    channels: tuple[str, ...]
    end_site_offset: np.ndarray | None = None


@dataclass
class Skeleton:
    joints: list[Joint]
    humanoid_map: dict[int, str] = field(default_factory=dict)

    def __len__(self):
        return len(self.joints)

    @property
    def names(self):
        return [j.name for j in self.joints]

    @property
    def parents(self):
        return [j.parent for j in self.joints]

    def index_of(self, name):
        for i, j in enumerate(self.joints):
            if j.name == name:
                return i
        raise KeyError(name)

    def bone_index(self, bone):
        """Joint index mapped to a humanoid bone tag."""
        for i, b in self.humanoid_map.items():
            if b == bone:
                return i
        raise KeyError(f"humanoid bone {bone!r} is not mapped")

    def children_of(self, index):
        return [i for i, j in enumerate(self.joints) if j.parent == index]

    def same_structure(self, other, tol=1e-4):
        """True when joint names, parents and offsets match within tol."""
        if self.names != other.names or self.parents != other.parents:
            return False
        for a, b in zip(self.joints, other.joints):
            if np.max(np.abs(a.offset - b.offset)) > tol:
                return False
        return True


@dataclass
class BvhDocument:
    skeleton: Skeleton
    frame_count: int
    frame_time: float
    channel_values: np.ndarray    # (frame_count, total_channels)

    @property
    def total_channels(self):
        return sum(len(j.channels) for j in self.skeleton.joints)


@dataclass
class AnimationClip:
    """Canonical animation: left-handed meters, quaternion local rotations.

    Joint offsets are fixed; only the root translates per frame.
    """

    skeleton: Skeleton            # offsets already converted and scaled
    frame_time: float
    root_positions: np.ndarray    # (N, 3)
    rotations: np.ndarray         # (N, J, 4) local, unit, scalar-first

    @property
    def frame_count(self):
        return self.root_positions.shape[0]


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------

class _Tokens:
    """Whitespace-insensitive token stream that remembers line numbers."""

    def __init__(self, text):
        self.items = []
        for ln, line in enumerate(text.splitlines(), start=1):
            for tok in line.split():
                self.items.append((tok, ln))
        self.pos = 0

    def peek(self):
        return self.items[self.pos][0] if self.pos < len(self.items) else None

    @property
    def line(self):
        if self.pos < len(self.items):
            return self.items[self.pos][1]
        return self.items[-1][1] if self.items else 0

    def next(self, expect=None):
        if self.pos >= len(self.items):
            raise BvhSyntaxError("unexpected end of file", self.line)
        tok, ln = self.items[self.pos]
        self.pos += 1
        if expect is not None and tok != expect:
            raise BvhSyntaxError(f"expected {expect!r}, got {tok!r}", ln)
        return tok

    def next_float(self):
        tok = self.next()
        try:
            return float(tok)
        except ValueError:
            raise BvhSyntaxError(f"expected a number, got {tok!r}", self.line) from None

    def next_int(self):
        tok = self.next()
        try:
            return int(tok)
        except ValueError:
            raise BvhSyntaxError(f"expected an integer, got {tok!r}", self.line) from None


def _parse_offset(tok):
    tok.next("OFFSET")
    return np.array([tok.next_float(), tok.next_float(), tok.next_float()])


def _parse_channels(tok, is_root, line):
    tok.next("CHANNELS")
    n = tok.next_int()
    channels = tuple(tok.next() for _ in range(n))
    valid = set(POSITION_CHANNELS) | set(ROTATION_CHANNELS)
    for c in channels:
        if c not in valid:
            raise BvhSyntaxError(f"unknown channel {c!r}", tok.line)
    rot = tuple(c for c in channels if c in ROTATION_CHANNELS)
    if sorted(rot) != sorted(set(rot)) or len(rot) != 3:
        raise BvhSyntaxError("expected exactly three distinct rotation channels", line)
    if is_root:
        if n not in (3, 6):
            raise BvhSyntaxError(f"root must have 3 or 6 channels, got {n}", line)
    elif n != 3:
        raise BvhSyntaxError(f"joint must have exactly 3 rotation channels, got {n}", line)
    return channels


def _parse_joint(tok, parent, joints):
    keyword = tok.next()
    if keyword not in ("ROOT", "JOINT"):
        raise BvhSyntaxError(f"expected ROOT or JOINT, got {keyword!r}", tok.line)
    header_line = tok.line
    name = tok.next()
    tok.next("{")
    offset = _parse_offset(tok)
    channels = _parse_channels(tok, parent is None, header_line)
    joint = Joint(name=name, parent=parent, offset=offset, channels=channels)
    index = len(joints)
    joints.append(joint)

    while True:
        nxt = tok.peek()
        if nxt == "JOINT":
            _parse_joint(tok, index, joints)
        elif nxt == "End":
            tok.next("End")
            tok.next("Site")
            tok.next("{")
            joint.end_site_offset = _parse_offset(tok)
            tok.next("}")
        elif nxt == "}":
            tok.next("}")
            return index
        else:
            raise BvhSyntaxError(f"unexpected token {nxt!r} in joint body", tok.line)


def parse_bvh(text):
    """Parse a complete BVH document.

    Raises BvhSyntaxError (with a line number) on grammar problems,
    channel-count mismatches and frame-count mismatches.
    """
    tok = _Tokens(text)
    tok.next("HIERARCHY")
    joints: list[Joint] = []
    _parse_joint(tok, None, joints)
    if tok.peek() in ("ROOT", "JOINT"):
        raise BvhSyntaxError("multiple roots are not supported", tok.line)
    tok.next("MOTION")
    tok.next("Frames:")
    frame_count = tok.next_int()
    if frame_count < 0:
        raise BvhSyntaxError("negative frame count", tok.line)
    tok.next("Frame")
    tok.next("Time:")
    frame_time = tok.next_float()
    if frame_time <= 0.0:
        raise BvhSyntaxError("frame time must be positive", tok.line)

    width = sum(len(j.channels) for j in joints)
    remaining = tok.items[tok.pos:]
    expected = frame_count * width
    if len(remaining) != expected:
        raise BvhSyntaxError(
            f"motion data has {len(remaining)} values, expected "
            f"{frame_count} frames x {width} channels = {expected}",
            remaining[0][1] if remaining else tok.line,
        )
    try:
        values = np.array([float(t) for t, _ in remaining], dtype=np.float64)
    except ValueError:
        raise BvhSyntaxError("non-numeric motion value", tok.line) from None
    channel_values = values.reshape(frame_count, width)
    return BvhDocument(
        skeleton=Skeleton(joints=joints),
        frame_count=frame_count,
        frame_time=frame_time,
        channel_values=channel_values,
    )


# ---------------------------------------------------------------------------
# writing
# ---------------------------------------------------------------------------

def _fmt(x):
    return f"{x:.6f}"


def write_bvh(doc: BvhDocument) -> str:
    """Serialize a document; numbers carry 6 decimals and re-parse cleanly."""
    sk = doc.skeleton
    lines = ["HIERARCHY"]

    def emit(index, depth):
        j = sk.joints[index]
        pad = "  " * depth
        keyword = "ROOT" if j.parent is None else "JOINT"
        lines.append(f"{pad}{keyword} {j.name}")
        lines.append(f"{pad}{{")
        inner = "  " * (depth + 1)
        lines.append(f"{inner}OFFSET {' '.join(_fmt(v) for v in j.offset)}")
        lines.append(f"{inner}CHANNELS {len(j.channels)} {' '.join(j.channels)}")
        for child in sk.children_of(index):
            emit(child, depth + 1)
        if j.end_site_offset is not None:
            lines.append(f"{inner}End Site")
            lines.append(f"{inner}{{")
            lines.append(f"{inner}  OFFSET {' '.join(_fmt(v) for v in j.end_site_offset)}")
            lines.append(f"{inner}}}")
        lines.append(f"{pad}}}")

    emit(0, 0)
    lines.append("MOTION")
    lines.append(f"Frames: {doc.frame_count}")
    lines.append(f"Frame Time: {doc.frame_time:.6f}")
    for row in doc.channel_values:
        lines.append(" ".join(_fmt(v) for v in row))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# conversion to the engine representation
# ---------------------------------------------------------------------------

def convert_position(p, scale=1.0):
    """File position -> engine position: flip z, then scale."""
    p = np.asarray(p, dtype=np.float64)
    return np.stack([p[..., 0], p[..., 1], -p[..., 2]], axis=-1) * scale


def unconvert_position(p, scale):
    """Engine position -> file position (inverse of convert_position)."""
    p = np.asarray(p, dtype=np.float64) / scale
    return np.stack([p[..., 0], p[..., 1], -p[..., 2]], axis=-1)


_AXES = {
    "Xrotation": np.array([1.0, 0.0, 0.0]),
    "Yrotation": np.array([0.0, 1.0, 0.0]),
    "Zrotation": np.array([0.0, 0.0, 1.0]),
}
# X and Y angles flip sign between the file's right-handed frame and ours
_SIGNS = {"Xrotation": -1.0, "Yrotation": -1.0, "Zrotation": 1.0}


def euler_to_quat(angles_deg, order):
    """Euler angles (degrees, in file channel order) -> engine quaternion.

    Factors compose left to right in the order the channels appear, with X
    and Y angles negated for the handedness flip. ``angles_deg`` may be a
    batch with shape (..., 3).
    """
    order = tuple(order)
    if sorted(order) != sorted(ROTATION_CHANNELS):
        raise ValueError(f"invalid rotation order {order!r}")
    angles = np.deg2rad(np.asarray(angles_deg, dtype=np.float64))
    q = None
    for k, channel in enumerate(order):
        half = 0.5 * _SIGNS[channel] * angles[..., k]
        axis = _AXES[channel]
        factor = np.concatenate(
            [np.cos(half)[..., None], np.sin(half)[..., None] * axis], axis=-1
        )
        q = factor if q is None else m3.quat_mul(q, factor)
    return q


def euler_from_quat(q, order):
    """Engine quaternion -> Euler angles in degrees, inverse of euler_to_quat.

    Decomposes the equivalent right-handed matrix into the intrinsic
    sequence given by ``order`` and undoes the X/Y sign flips.
    """
    order = tuple(order)
    if sorted(order) != sorted(ROTATION_CHANNELS):
        raise ValueError(f"invalid rotation order {order!r}")
    # conjugate by diag(1,1,-1): back to the file's right-handed matrix
    m = mat_to_file_space(m3.mat_from_quat(np.asarray(q, dtype=np.float64)))
    i0, i1, i2 = ("XYZ".index(order[0][0]), "XYZ".index(order[1][0]), "XYZ".index(order[2][0]))
    single = m.ndim == 2
    m = m.reshape((-1, 3, 3))
    out = np.empty((m.shape[0], 3))
    # intrinsic Tait-Bryan a-b-c about axes i0, i1, i2: sin(b) = eps*m[i0,i2]
    eps = 1.0 if (i1 - i0) % 3 == 1 else -1.0
    for n in range(m.shape[0]):
        a = m[n]
        sb = min(1.0, max(-1.0, eps * a[i0, i2]))
        b = np.arcsin(sb)
        if abs(sb) < 1.0 - 1e-9:
            ang0 = np.arctan2(-eps * a[i1, i2], a[i2, i2])
            ang2 = np.arctan2(-eps * a[i0, i1], a[i0, i0])
        else:
            # gimbal lock: fold the last rotation into the first
            ang0 = np.arctan2(sb * a[i1, i0], a[i1, i1])
            ang2 = 0.0
        out[n] = (ang0, b, ang2)
    out = np.rad2deg(out)
    return out[0] if single else out


def mat_to_file_space(m):
    """Conjugate a left-handed rotation matrix back to right-handed."""
    m = np.array(m, dtype=np.float64, copy=True)
    m[..., 0, 2] *= -1.0
    m[..., 1, 2] *= -1.0
    m[..., 2, 0] *= -1.0
    m[..., 2, 1] *= -1.0
    return m


def convert_skeleton(skeleton: Skeleton, scale: float) -> Skeleton:
    """Skeleton with offsets converted into engine space."""
    joints = []
    for j in skeleton.joints:
        joints.append(
            replace(
                j,
                offset=convert_position(j.offset, scale),
                end_site_offset=(
                    convert_position(j.end_site_offset, scale)
                    if j.end_site_offset is not None
                    else None
                ),
            )
        )
    return Skeleton(joints=joints, humanoid_map=dict(skeleton.humanoid_map))


def validate_humanoid_map(skeleton: Skeleton, humanoid_map: dict[int, str]) -> list[str]:
    """Report problems with a joint-index -> humanoid-bone mapping.

    Returns an empty list when the map is usable: indices valid, tags known,
    no bone assigned twice, and every required bone present.
    """
    errors = []
    seen = {}
    for idx, bone in humanoid_map.items():
        if not (0 <= idx < len(skeleton.joints)):
            errors.append(f"joint index {idx} out of range")
            continue
        if bone not in HUMANOID_BONES:
            errors.append(f"unknown humanoid bone {bone!r}")
            continue
        if bone in seen:
            errors.append(
                f"bone {bone!r} mapped twice: joints "
                f"{skeleton.joints[seen[bone]].name!r} and {skeleton.joints[idx].name!r}"
            )
        seen[bone] = idx
    for bone in REQUIRED_BONES:
        if bone not in seen:
            errors.append(f"required bone {bone!r} is not mapped")
    return errors


def humanoid_map_from_names(skeleton: Skeleton, name_map: dict[str, str]) -> dict[int, str]:
    """Build an index map from a joint-name -> bone-name dictionary."""
    out = {}
    for name, bone in name_map.items():
        out[skeleton.index_of(name)] = bone
    return out


def to_animation(doc: BvhDocument, scale=0.01, humanoid_map=None) -> AnimationClip:
    """Convert a parsed document into the canonical clip representation.

    ``scale`` defaults to 0.01 (centimeter files to meter engine). When a
    humanoid map is given it is validated and attached to the skeleton.
    """
    sk = doc.skeleton
    if humanoid_map is not None:
        problems = validate_humanoid_map(sk, humanoid_map)
        if problems:
            raise ValueError("invalid humanoid map: " + "; ".join(problems))

    converted = convert_skeleton(sk, scale)
    if humanoid_map is not None:
        converted.humanoid_map = dict(humanoid_map)

    n = doc.frame_count
    rotations = np.empty((n, len(sk.joints), 4))
    root_positions = np.zeros((n, 3))

    col = 0
    for ji, joint in enumerate(sk.joints):
        chans = joint.channels
        rot_order = tuple(c for c in chans if c in ROTATION_CHANNELS)
        pos_cols = {}
        rot_cols = []
        for c in chans:
            if c in POSITION_CHANNELS:
                pos_cols[c] = col
            else:
                rot_cols.append(col)
            col += 1
        if pos_cols:
            if joint.parent is not None:
                raise ValueError("translation channels on a non-root joint")
            raw = np.stack(
                [doc.channel_values[:, pos_cols[c]] for c in POSITION_CHANNELS], axis=-1
            )
            root_positions = convert_position(raw, scale)
        angles = doc.channel_values[:, rot_cols] if n else np.zeros((0, 3))
        rotations[:, ji, :] = euler_to_quat(angles, rot_order) if n else 0.0

    return AnimationClip(
        skeleton=converted,
        frame_time=doc.frame_time,
        root_positions=root_positions,
        rotations=rotations,
    )
