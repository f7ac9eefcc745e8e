"""The gameplay side: a code-driven simulated character, spring-based
trajectory prediction for joystick and path inputs, query assembly and the
position-accuracy clamp.

The simulated character is what the user steers; the animated virtual root
chases it through the trajectory features. Joystick input is a target
velocity (spring on velocity, position by exact integration); path input is
a moving clamped target position (spring on position). Facing always runs
through a wrapped yaw spring. All springs are critically damped and
evaluated in closed form, so stepping is exact for piecewise-constant
input regardless of the frame rate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import math3d as m3
from .features import FeatureSchema


@dataclass
class ControllerConfig:
    max_speed: float = 3.5            # m/s at full stick
    velocity_stiffness: float = 4.0   # 1/s
    facing_stiffness: float = 4.0     # 1/s
    path_advance_radius: float = 0.2  # m, keypoint reached
    clamp_horizon: float = 1.0        # s, bounds the moving path target


@dataclass
class JoystickSample:
    t: float
    stick: np.ndarray                 # (2,), magnitude <= 1
    facing: np.ndarray | None = None  # optional (2,) facing stick


@dataclass
class JoystickScript:
    samples: list[JoystickSample]

    def __post_init__(self):
        times = [s.t for s in self.samples]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("sample timestamps must be strictly increasing")

    @property
    def duration(self):
        return self.samples[-1].t if self.samples else 0.0

    def sample_at(self, t):
        """Zero-order hold: the latest sample not after t."""
        current = JoystickSample(t=0.0, stick=np.zeros(2))
        for s in self.samples:
            if s.t <= t:
                current = s
            else:
                break
        return current


@dataclass
class PathKeypoint:
    point: np.ndarray                 # (2,) ground position
    speed: float                      # m/s along the segment toward it

    def __post_init__(self):
        if self.speed <= 0.0:
            raise ValueError("keypoint speed must be positive")


@dataclass
class PathScript:
    keypoints: list[PathKeypoint]

    def __post_init__(self):
        if not self.keypoints:
            raise ValueError("path needs at least one keypoint")


@dataclass
class TrajectoryPrediction:
    offsets: tuple[int, ...]      # frame offsets matching the feature schema
    positions: np.ndarray         # (K, 2) character-space ground positions
    directions: np.ndarray        # (K, 2) unit facing directions


@dataclass
class SimulatedCharacter:
    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    yaw: float = 0.0
    yaw_vel: float = 0.0
    # joystick mode: spring on velocity (value, value_dot) = (velocity, accel)
    # path mode:     spring on position; velocity doubles as the spring rate
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    accel: np.ndarray = field(default_factory=lambda: np.zeros(3))
    path_index: int = 0
    # frozen targets used by the trajectory prediction
    target_velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    target_yaw: float = 0.0
    target_position: np.ndarray | None = None

    @property
    def facing(self):
        return m3.yaw_to_dir2d(self.yaw)

    @property
    def speed(self):
        return float(np.linalg.norm(self.velocity))


def _yaw_target(state, direction_2d):
    """Nearest-angle representative of a 2D direction target."""
    return state.yaw + m3.wrap_angle(m3.heading_angle(direction_2d) - state.yaw)


def update_simulated_character(state: SimulatedCharacter, sample: JoystickSample,
                               dt, config: ControllerConfig | None = None):
    """Advance one joystick-driven step.

    The stick is a target velocity (magnitude times max speed); facing
    follows the facing stick when present, else the movement direction.
    Position integrates the velocity spring analytically.
    """
    config = config or ControllerConfig()
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    stick = np.asarray(sample.stick, dtype=np.float64)
    target_vel = m3.from_2d(stick * config.max_speed)

    facing_src = None
    if sample.facing is not None and np.linalg.norm(sample.facing) > 1e-6:
        facing_src = np.asarray(sample.facing, dtype=np.float64)
    elif np.linalg.norm(stick) > 1e-6:
        facing_src = stick
    if facing_src is not None:
        state.target_yaw = _yaw_target(state, facing_src)

    state.target_velocity = target_vel
    disp = m3.spring_velocity_displacement(
        state.velocity, state.accel, target_vel, config.velocity_stiffness, dt
    )
    state.position = m3.ground(state.position + disp)
    state.velocity, state.accel = m3.spring_critical_step(
        state.velocity, state.accel, target_vel, config.velocity_stiffness, dt
    )
    state.yaw, state.yaw_vel = m3.spring_critical_step(
        state.yaw, state.yaw_vel, state.target_yaw, config.facing_stiffness, dt
    )
    return state


def _path_target(state: SimulatedCharacter, path: PathScript,
                 config: ControllerConfig):
    """Current keypoint clamped to the reachable horizon."""
    kp = path.keypoints[state.path_index]
    to_kp = m3.from_2d(kp.point) - m3.ground(state.position)
    dist = np.linalg.norm(to_kp)
    limit = kp.speed * config.clamp_horizon
    if dist > limit:
        target = m3.ground(state.position) + to_kp * (limit / dist)
    else:
        target = m3.from_2d(kp.point)
    return target, to_kp, dist


def update_simulated_character_path(state: SimulatedCharacter, path: PathScript,
                                    dt, config: ControllerConfig | None = None):
    """Advance one path-following step (spring on position toward a clamped
    moving target; the clamp bounds the implied velocity)."""
    config = config or ControllerConfig()
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    target, to_kp, dist = _path_target(state, path, config)
    if dist < config.path_advance_radius and state.path_index < len(path.keypoints) - 1:
        state.path_index += 1
        target, to_kp, dist = _path_target(state, path, config)

    if dist > 1e-6:
        state.target_yaw = _yaw_target(state, m3.to_2d(to_kp))
    state.target_position = target

    state.position, state.velocity = m3.spring_critical_step(
        state.position, state.velocity, target, config.velocity_stiffness, dt
    )
    state.position = m3.ground(state.position)
    state.yaw, state.yaw_vel = m3.spring_critical_step(
        state.yaw, state.yaw_vel, state.target_yaw, config.facing_stiffness, dt
    )
    return state


# ---------------------------------------------------------------------------
# trajectory prediction
# ---------------------------------------------------------------------------

def _to_character_space(world_points, world_yaws, root_pos, root_rot, offsets):
    inv = m3.quat_inverse(root_rot)
    positions = np.empty((len(world_points), 2))
    directions = np.empty((len(world_points), 2))
    for k, (p, yaw) in enumerate(zip(world_points, world_yaws)):
        positions[k] = m3.to_2d(m3.quat_rotate_vec(inv, m3.ground(p) - m3.ground(root_pos)))
        d = m3.quat_rotate_vec(inv, m3.from_2d(m3.yaw_to_dir2d(yaw)))
        d2 = m3.to_2d(d)
        directions[k] = d2 / np.linalg.norm(d2)
    return TrajectoryPrediction(offsets=tuple(offsets), positions=positions,
                                directions=directions)


def predict_trajectory_joystick(state: SimulatedCharacter, offsets, frame_time,
                                root_pos, root_rot,
                                config: ControllerConfig | None = None):
    """Future positions and facings under the frozen current stick target.

    ``offsets`` are frame offsets (the schema's trajectory offsets); results
    are expressed in the character space of the given virtual root.
    """
    config = config or ControllerConfig()
    points, yaws = [], []
    for off in offsets:
        t = off * frame_time
        if t < 0.0:
            raise ValueError("joystick prediction needs future offsets")
        disp = m3.spring_velocity_displacement(
            state.velocity, state.accel, state.target_velocity,
            config.velocity_stiffness, t,
        )
        points.append(state.position + disp)
        yaw, _ = m3.spring_critical_step(
            state.yaw, state.yaw_vel, state.target_yaw, config.facing_stiffness, t
        )
        yaws.append(yaw)
    return _to_character_space(points, yaws, root_pos, root_rot, offsets)


def predict_trajectory_path(state: SimulatedCharacter, path: PathScript,
                            offsets, frame_time, root_pos, root_rot,
                            config: ControllerConfig | None = None):
    """Future positions and facings along the clamped path target."""
    config = config or ControllerConfig()
    target, to_kp, dist = _path_target(state, path, config)
    target_yaw = _yaw_target(state, m3.to_2d(to_kp)) if dist > 1e-6 else state.yaw
    points, yaws = [], []
    for off in offsets:
        t = off * frame_time
        if t < 0.0:
            raise ValueError("path prediction needs future offsets")
        p, _ = m3.spring_critical_step(
            state.position, state.velocity, target, config.velocity_stiffness, t
        )
        points.append(p)
        yaw, _ = m3.spring_critical_step(
            state.yaw, state.yaw_vel, target_yaw, config.facing_stiffness, t
        )
        yaws.append(yaw)
    return _to_character_space(points, yaws, root_pos, root_rot, offsets)


# ---------------------------------------------------------------------------
# procedural touch-ups
# ---------------------------------------------------------------------------

def clamp_position(p, p_hat, alpha):
    """Keep p within distance alpha of p_hat (hard radial clamp)."""
    if alpha <= 0.0:
        raise ValueError("alpha must be positive")
    p = np.asarray(p, dtype=np.float64)
    p_hat = np.asarray(p_hat, dtype=np.float64)
    d = p - p_hat
    dist = np.linalg.norm(d)
    if dist > alpha:
        return p_hat + alpha * d / dist
    return p.copy()


def proportional_root_adjust(root_pos, root_rot, sim: SimulatedCharacter,
                             gain, dt, adjust_yaw=False):
    """Nudge the virtual root toward the simulated character.

    The step is proportional to the character's speed, so it vanishes at
    rest and the induced foot sliding stays below notice at low speeds.
    """
    if gain < 0.0:
        raise ValueError("gain must be non-negative")
    root_pos = np.asarray(root_pos, dtype=np.float64)
    step = gain * sim.speed * dt
    to_sim = m3.ground(sim.position) - m3.ground(root_pos)
    dist = np.linalg.norm(to_sim)
    if dist > 1e-9 and step > 0.0:
        root_pos = root_pos + to_sim * min(step / dist, 1.0)
    if adjust_yaw and step > 0.0:
        dyaw = m3.wrap_angle(sim.yaw - m3.signed_yaw(root_rot))
        turn = np.sign(dyaw) * min(gain * sim.speed * dt, abs(dyaw))
        root_rot = m3.quat_mul(m3.yaw_quat(turn), root_rot)
    return root_pos, root_rot


def build_query(current_row, prediction: TrajectoryPrediction, mean, std,
                schema: FeatureSchema):
    """Assemble the normalized query vector.

    Pose columns are copied from the current (already normalized) feature
    row; trajectory columns come from the prediction and are normalized
    with the matrix statistics.
    """
    current_row = np.asarray(current_row, dtype=np.float64)
    if current_row.shape[0] != schema.dimension:
        raise ValueError("feature row does not match the schema")
    query = np.zeros(schema.dimension)
    pose_dim = schema.pose_dimension
    query[:pose_dim] = current_row[:pose_dim]

    col = pose_dim
    pred_by_offset_pos = {o: prediction.positions[k] for k, o in enumerate(prediction.offsets)}
    pred_by_offset_dir = {o: prediction.directions[k] for k, o in enumerate(prediction.offsets)}
    for f in schema.trajectory:
        table = pred_by_offset_pos if f.kind == "position" else pred_by_offset_dir
        for off in f.offsets:
            if off not in table:
                raise ValueError(f"prediction lacks trajectory offset {off}")
            raw = table[off]
            query[col:col + 2] = (raw - mean[col:col + 2]) / std[col:col + 2]
            col += 2
    return query
