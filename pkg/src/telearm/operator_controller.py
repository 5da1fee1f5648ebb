"""Operator-arm torque law: feel-through assist with limit protection.

Per control tick the commanded torque is the sum of six terms:

* assist:        J^T times the measured operator wrench, scaled per
                 joint by the anti-oscillation factor below,
* haptic:        J^T times the wrench fed back from the remote arm,
* limit guard:   hyperbolic repulsion from this arm's own position and
                 velocity limits,
* mirror guard:  repulsion from the remote arm's limits, mapped through
                 the predictive mirror (supplied by the caller),
* posture:       nullspace attraction to the rest pose,
* velocity ff:   the simplified velocity feedforward of the model.

The assist term amplifies whatever force the operator applies, which
turns measurement noise into motion near joint limits if left alone:
the guard pushes back, the operator feels it and pushes harder, and the
two fight.  The per-joint factor alpha fades the assist out linearly as
a joint closes on a limit (1 above the threshold, 0 at half of it), so
the guard always wins close-in and the fight cannot start.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .arm_model import (
    ArmModel,
    JointState,
    Pose6D,
    body_jacobian,
    coriolis_torque,
    fk_and_body_jacobian,
    forward_kinematics,
    nullspace_torque,
)
from .wrench_calib import Wrench

# Guard-activation thresholds: 10 degrees from a position limit,
# 40 deg/s from a velocity limit.
DEFAULT_POSITION_THRESHOLD = math.radians(10.0)
DEFAULT_VELOCITY_THRESHOLD = math.radians(40.0)

# Default repulsion gains are sized so the guard torque at half the
# threshold distance equals 25% of the weakest joint's torque limit
# (12 N*m on the bundled arms): the hyperbola value at d = t/2 is
# beta/t, so beta = 0.25 * 12 * t.
DEFAULT_BETA_P = 0.25 * 12.0 * DEFAULT_POSITION_THRESHOLD
DEFAULT_BETA_V = 0.25 * 12.0 * DEFAULT_VELOCITY_THRESHOLD


@dataclass
class OperatorGains:
    """Tuning of the operator torque law (see module docstring)."""

    beta_p: float = DEFAULT_BETA_P          # N*m*rad, position guard gain
    beta_v: float = DEFAULT_BETA_V          # N*m*rad/s, velocity guard gain
    t_p: float = DEFAULT_POSITION_THRESHOLD  # rad
    t_v: float = DEFAULT_VELOCITY_THRESHOLD  # rad/s
    nullspace_gain: float = 1.5             # N*m/rad toward rest pose
    haptic_scale: float = 1.0               # remote wrench reflection gain
    assist_scale: float = 1.0               # measured-wrench amplification
    assist_enabled: bool = True
    # Each guard component is clamped to this fraction of the joint's
    # torque limit so a grazed limit cannot saturate the whole law.
    avoidance_cap_fraction: float = 0.8

    @staticmethod
    def for_model(model: ArmModel,
                  limit_fraction: float = 0.25,
                  **overrides) -> "OperatorGains":
        """Derive guard gains from a model's weakest joint."""
        tau_ref = float(np.min(model.torque_limits))
        gains = OperatorGains(**overrides)
        gains.beta_p = limit_fraction * tau_ref * gains.t_p
        gains.beta_v = limit_fraction * tau_ref * gains.t_v
        return gains


@dataclass
class OperatorOutput:
    """Torque command, outgoing hand goal and the per-term breakdown."""

    torque: np.ndarray
    hand_goal: Pose6D
    alpha: np.ndarray
    tau_assist: np.ndarray
    tau_haptic: np.ndarray
    tau_limit: np.ndarray
    tau_mirror: np.ndarray
    tau_nullspace: np.ndarray
    tau_velocity_ff: np.ndarray
    d_p: np.ndarray
    d_v: np.ndarray
    saturated: bool


# ====================== per-joint limit distances ======================

def limit_distances(model: ArmModel, state: JointState):
    """(d_p, d_v): distance of each joint to its closer position limit
    and to the velocity limit it is heading for."""
    d_lower = state.positions - model.position_lower
    d_upper = model.position_upper - state.positions
    d_p = np.minimum(d_lower, d_upper)
    d_v = model.velocity_limits - np.abs(state.velocities)
    return d_p, d_v


def _hyperbolic(d: np.ndarray, threshold: float, beta: float) -> np.ndarray:
    """beta * (1/d - 1/threshold) where d < threshold, else zero."""
    d_safe = np.maximum(d, 1e-12)
    raw = beta * (1.0 / d_safe - 1.0 / threshold)
    return np.where(d < threshold, raw, 0.0)


def limit_avoidance_torque(model: ArmModel, state: JointState,
                           gains: OperatorGains) -> np.ndarray:
    """Hyperbolic repulsion from position and velocity limits.

    The position part pushes away from the nearer limit; the velocity
    part opposes the motion once a joint speeds toward a velocity
    limit.  Both components are individually clamped to the configured
    fraction of each joint's torque limit.
    """
    d_p, d_v = limit_distances(model, state)
    cap = gains.avoidance_cap_fraction * model.torque_limits

    toward_upper = (model.position_upper - state.positions) < (state.positions - model.position_lower)
    pos_sign = np.where(toward_upper, -1.0, 1.0)
    tau_pos = pos_sign * np.minimum(_hyperbolic(d_p, gains.t_p, gains.beta_p), cap)

    vel_sign = -np.sign(state.velocities)
    tau_vel = vel_sign * np.minimum(_hyperbolic(d_v, gains.t_v, gains.beta_v), cap)

    return tau_pos + tau_vel


def alpha_scale(model: ArmModel, state: JointState,
                gains: OperatorGains) -> np.ndarray:
    """Per-joint assist fade: 1 above the guard thresholds, 0 at half
    of them, linear in between, driven by the nearer of the two."""
    d_p, d_v = limit_distances(model, state)
    ratio = np.minimum(d_p / gains.t_p, d_v / gains.t_v)
    return np.maximum(0.0, np.minimum(1.0, 2.0 * ratio - 1.0))


def assist_torque(J_body: np.ndarray, wrench: Wrench) -> np.ndarray:
    """Joint torque equivalent of a hand-frame wrench."""
    return J_body.T @ wrench.as_vector()


# ====================== controller ======================

class OperatorController:
    """Stateful wrapper that assembles the full operator torque law.

    Holds only configuration and counters; every tick's output is a
    pure function of the passed-in state and wrenches, which keeps the
    per-tick work constant and the controller trivially reusable in
    replays.
    """

    def __init__(self, model: ArmModel, gains: Optional[OperatorGains] = None,
                 world_from_base: Optional[np.ndarray] = None):
        self.model = model
        self.gains = gains if gains is not None else OperatorGains.for_model(model)
        self.world_from_base = (np.eye(4) if world_from_base is None
                                else np.asarray(world_from_base, dtype=float))
        self.saturation_count = 0

    def hand_goal(self, state: JointState) -> Pose6D:
        """Current hand pose re-expressed in the shared world frame."""
        pose = forward_kinematics(self.model, state.positions)
        return Pose6D.from_matrix(self.world_from_base @ pose.matrix())

    def step(self,
             state: JointState,
             measured_wrench: Wrench,
             feedback_wrench: Wrench,
             tau_mirror: Optional[np.ndarray] = None) -> OperatorOutput:
        """One control tick; wrenches are hand-frame and compensated."""
        model = self.model
        gains = self.gains
        n = model.joint_count
        pose, J = fk_and_body_jacobian(model, state.positions)
        goal = Pose6D.from_matrix(self.world_from_base @ pose.matrix())

        alpha = alpha_scale(model, state, gains)
        if gains.assist_enabled:
            tau_assist = gains.assist_scale * assist_torque(J, measured_wrench)
        else:
            tau_assist = np.zeros(n)
        tau_haptic = gains.haptic_scale * assist_torque(J, feedback_wrench)
        tau_limit = limit_avoidance_torque(model, state, gains)
        if tau_mirror is None:
            tau_mirror = np.zeros(n)
        tau_null = nullspace_torque(model, state, J, gains.nullspace_gain)
        tau_ff = coriolis_torque(model, state)

        total = (alpha * tau_assist + tau_haptic + tau_limit
                 + tau_mirror + tau_null + tau_ff)
        clipped = np.clip(total, -model.torque_limits, model.torque_limits)
        saturated = bool(np.any(clipped != total))
        if saturated:
            self.saturation_count += 1

        d_p, d_v = limit_distances(model, state)
        return OperatorOutput(
            torque=clipped,
            hand_goal=goal,
            alpha=alpha,
            tau_assist=tau_assist,
            tau_haptic=tau_haptic,
            tau_limit=tau_limit,
            tau_mirror=np.asarray(tau_mirror, dtype=float),
            tau_nullspace=tau_null,
            tau_velocity_ff=tau_ff,
            d_p=d_p,
            d_v=d_v,
            saturated=saturated,
        )
