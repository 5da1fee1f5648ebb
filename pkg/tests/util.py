"""Shared helpers for the test suite: bundled configs, random sampling."""

from __future__ import annotations

import os

import numpy as np

from telearm.arm_model import ArmModel, ArmSetup, load_arm_file

CONFIG_DIR = os.path.join(os.path.dirname(__file__), "..", "src", "telearm", "configs")


def config_path(name: str) -> str:
    return os.path.abspath(os.path.join(CONFIG_DIR, name))


def load_operator_setup() -> ArmSetup:
    return load_arm_file(config_path("operator_arm.cfg"))


def load_avatar_setup() -> ArmSetup:
    return load_arm_file(config_path("avatar_arm.cfg"))


def random_in_limit_q(model: ArmModel, rng: np.random.Generator,
                      margin: float = 0.05) -> np.ndarray:
    """Uniform joint vector strictly inside the position limits."""
    span = model.position_upper - model.position_lower
    lo = model.position_lower + margin * span
    hi = model.position_upper - margin * span
    return rng.uniform(lo, hi)


def single_joint_model(hand_xyz=(0.2, 0.0, 0.0)) -> ArmModel:
    """One z-axis revolute joint with a configurable hand offset."""
    import telearm.arm_model as am

    hand = np.eye(4)
    hand[:3, 3] = np.asarray(hand_xyz, dtype=float)
    return ArmModel(
        axes=np.array([[0.0, 0.0, 1.0]]),
        offsets_xyz=np.zeros((1, 3)),
        offsets_rpy=np.zeros((1, 3)),
        hand_offset=hand,
        position_lower=np.array([-3.0]),
        position_upper=np.array([3.0]),
        velocity_limits=np.array([2.0]),
        torque_limits=np.array([50.0]),
        rest_pose=np.array([0.0]),
        effective_inertia=np.array([1.0]),
        viscous_damping=np.array([1.0]),
    )
