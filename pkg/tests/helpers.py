"""Shared synthetic fixtures for the test suite."""

import numpy as np

from motionmatch import math3d as m3
from motionmatch.bvh import AnimationClip, Joint, Skeleton

FRAME_TIME = 1.0 / 60.0


def make_test_skeleton():
    """Small humanoid: hips, spine, head, two 4-joint legs. Meters."""
    joints = [
        Joint("Hips", None, np.array([0.0, 0.0, 0.0]),
              ("Xposition", "Yposition", "Zposition", "Yrotation", "Xrotation", "Zrotation")),
        Joint("Spine", 0, np.array([0.0, 0.15, 0.0]), ("Yrotation", "Xrotation", "Zrotation")),
        Joint("Head", 1, np.array([0.0, 0.35, 0.0]), ("Yrotation", "Xrotation", "Zrotation"),
              end_site_offset=np.array([0.0, 0.15, 0.0])),
        Joint("LeftUpperLeg", 0, np.array([0.09, -0.04, 0.0]), ("Yrotation", "Xrotation", "Zrotation")),
        Joint("LeftLowerLeg", 3, np.array([0.0, -0.40, 0.0]), ("Yrotation", "Xrotation", "Zrotation")),
        Joint("LeftFoot", 4, np.array([0.0, -0.40, 0.0]), ("Yrotation", "Xrotation", "Zrotation")),
        Joint("LeftToes", 5, np.array([0.0, -0.06, 0.12]), ("Yrotation", "Xrotation", "Zrotation"),
              end_site_offset=np.array([0.0, 0.0, 0.06])),
        Joint("RightUpperLeg", 0, np.array([-0.09, -0.04, 0.0]), ("Yrotation", "Xrotation", "Zrotation")),
        Joint("RightLowerLeg", 7, np.array([0.0, -0.40, 0.0]), ("Yrotation", "Xrotation", "Zrotation")),
        Joint("RightFoot", 8, np.array([0.0, -0.40, 0.0]), ("Yrotation", "Xrotation", "Zrotation")),
        Joint("RightToes", 9, np.array([0.0, -0.06, 0.12]), ("Yrotation", "Xrotation", "Zrotation"),
              end_site_offset=np.array([0.0, 0.0, 0.06])),
    ]
    hmap = {
        0: "Hips", 2: "Head",
        3: "LeftUpperLeg", 4: "LeftLowerLeg", 5: "LeftFoot", 6: "LeftToes",
        7: "RightUpperLeg", 8: "RightLowerLeg", 9: "RightFoot", 10: "RightToes",
    }
    return Skeleton(joints=joints, humanoid_map=hmap)


def static_clip(n=30, hip_height=0.9, skeleton=None):
    sk = skeleton or make_test_skeleton()
    j = len(sk.joints)
    rot = np.broadcast_to(m3.QUAT_IDENTITY, (n, j, 4)).copy()
    pos = np.zeros((n, 3))
    pos[:, 1] = hip_height
    return AnimationClip(skeleton=sk, frame_time=FRAME_TIME,
                         root_positions=pos, rotations=rot)


def moving_clip(n=120, speed=1.2, yaw_rate=0.0, swing=0.6, seed=None, skeleton=None):
    """Forward walk with sinusoidal leg swing; optional steady turning."""
    sk = skeleton or make_test_skeleton()
    j = len(sk.joints)
    t = np.arange(n) * FRAME_TIME
    yaw = yaw_rate * t
    heading = np.stack([np.sin(yaw), np.zeros(n), np.cos(yaw)], axis=-1)
    pos = np.cumsum(heading * speed * FRAME_TIME, axis=0)
    pos[:, 1] = 0.9 + 0.01 * np.sin(2 * np.pi * 1.5 * t)
    rot = np.zeros((n, j, 4))
    rot[:] = m3.QUAT_IDENTITY
    rot[:, 0] = m3.yaw_quat(yaw)
    phase = 2 * np.pi * 1.4 * t
    rot[:, 3] = m3.rotvec_to_quat(np.stack(
        [swing * np.sin(phase), np.zeros(n), np.zeros(n)], axis=-1))
    rot[:, 7] = m3.rotvec_to_quat(np.stack(
        [swing * np.sin(phase + np.pi), np.zeros(n), np.zeros(n)], axis=-1))
    rot[:, 4] = m3.rotvec_to_quat(np.stack(
        [np.clip(-swing * np.cos(phase), -1.2, 0.0), np.zeros(n), np.zeros(n)], axis=-1))
    rot[:, 8] = m3.rotvec_to_quat(np.stack(
        [np.clip(-swing * np.cos(phase + np.pi), -1.2, 0.0), np.zeros(n), np.zeros(n)], axis=-1))
    if seed is not None:
        rng = np.random.default_rng(seed)
        wobble = m3.rotvec_to_quat(rng.normal(scale=0.05, size=(n, j, 3)))
        rot = m3.quat_mul(rot, wobble)
    return AnimationClip(skeleton=sk, frame_time=FRAME_TIME,
                         root_positions=pos, rotations=rot)


def random_pose_clip(n=50, seed=0, skeleton=None, scale=0.4):
    """Independent random rotations per frame; hip follows a noisy path."""
    sk = skeleton or make_test_skeleton()
    j = len(sk.joints)
    rng = np.random.default_rng(seed)
    rot = m3.rotvec_to_quat(rng.normal(scale=scale, size=(n, j, 3)))
    pos = np.cumsum(rng.normal(scale=0.01, size=(n, 3)), axis=0)
    pos[:, 1] += 0.9
    return AnimationClip(skeleton=sk, frame_time=FRAME_TIME,
                         root_positions=pos, rotations=rot)
