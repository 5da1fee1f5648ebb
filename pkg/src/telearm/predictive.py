"""Predictive mirror of the remote arm for anticipatory limit guarding.

Telemetry from the remote arm arrives late (transit plus however long
the remote impedance loop takes to execute a command), so guarding its
joint limits off raw telemetry reacts after the fact.  The mirror keeps
a local estimate of the remote joints by running inverse kinematics on
the goal stream this station is sending right now: where the remote arm
is about to be, not where it was last seen.  Arriving telemetry is
blended in gently as an anchor (a hard overwrite would re-introduce
exactly the delay the mirror exists to remove); velocities are a
low-passed first difference of the estimate.

The same hyperbolic limit guard used for the local arm is evaluated on
the mirrored state against the remote arm's limits, converted to an
equivalent hand wrench, and mapped into local joint torque so the
operator feels remote limits through the same channel as everything
else.
"""

from __future__ import annotations

import math
from typing import Optional

import numpy as np

from .arm_model import (
    ArmModel,
    JointState,
    Pose6D,
    SINGULAR_VALUE_CUTOFF,
    body_jacobian,
    damped_ls_ik,
    transform_inverse,
)
from .operator_controller import OperatorGains, limit_avoidance_torque

# Telemetry older than this stops the guard entirely: a mirror anchored
# to nothing must not push the operator around.
DEFAULT_STALE_TIMEOUT = 0.5   # s

DEFAULT_ANCHOR_GAIN = 0.2     # per-sync blend toward measured joints
DEFAULT_VELOCITY_CUTOFF_HZ = 15.0
DEFAULT_SLEW_RATE = 50.0      # N*m/s per joint on the output torque


class AvatarMirror:
    """Joint-space estimate of the remote arm, driven by the outgoing
    goal stream and anchored by (possibly stale) telemetry."""

    def __init__(self,
                 remote_model: ArmModel,
                 remote_world_from_base: Optional[np.ndarray] = None,
                 anchor_gain: float = DEFAULT_ANCHOR_GAIN,
                 stale_timeout: float = DEFAULT_STALE_TIMEOUT,
                 velocity_cutoff_hz: float = DEFAULT_VELOCITY_CUTOFF_HZ,
                 slew_rate: float = DEFAULT_SLEW_RATE):
        self.model = remote_model
        self.base_from_world = transform_inverse(
            np.eye(4) if remote_world_from_base is None
            else np.asarray(remote_world_from_base, dtype=float))
        self.anchor_gain = float(anchor_gain)
        self.stale_timeout = float(stale_timeout)
        self.velocity_cutoff_hz = float(velocity_cutoff_hz)
        self.slew_rate = float(slew_rate)

        self.q_hat = remote_model.rest_pose.copy()
        self.v_hat = np.zeros(remote_model.joint_count)
        self._q_hat_last_tick = self.q_hat.copy()
        self.acquired = False
        self.last_telemetry_time = -math.inf
        self.hold = True
        self.singular_events = 0
        self._tau_out = np.zeros(remote_model.joint_count)

    # -------- telemetry anchoring --------

    def sync(self, measured: JointState, now: float) -> None:
        """Blend measured remote joints into the estimate.

        The first sample is taken verbatim (there is nothing to blend
        against); afterwards the anchor gain pulls the estimate toward
        telemetry without snapping it back in time.
        """
        if not self.acquired:
            self.q_hat = self.model.clamp_positions(measured.positions)
            # Registration of an unacquired estimate is not motion.
            self._q_hat_last_tick = self.q_hat.copy()
            self.acquired = True
        else:
            blended = self.q_hat + self.anchor_gain * (measured.positions - self.q_hat)
            self.q_hat = self.model.clamp_positions(blended)
        self.last_telemetry_time = now

    def _refresh_hold(self, now: float) -> None:
        stale = (now - self.last_telemetry_time) > self.stale_timeout
        self.hold = stale or not self.acquired
        if self.hold:
            self._tau_out = np.zeros(self.model.joint_count)

    # -------- goal-driven prediction --------

    def predict(self, hand_goal_world: Pose6D, now: float, dt: float) -> None:
        """Advance the estimate toward the goal being sent right now."""
        self._refresh_hold(now)
        target = Pose6D.from_matrix(self.base_from_world @ hand_goal_world.matrix())
        solution = damped_ls_ik(self.model, self.q_hat, target)
        if solution is not None:
            self.q_hat = self.model.clamp_positions(solution)
        # Difference tick-final positions.  Differencing from the
        # post-anchor state instead would hide the anchor step but keep
        # the solver's recoil from it, reading sustained telemetry lag
        # as phantom speed.
        raw_velocity = (self.q_hat - self._q_hat_last_tick) / dt
        self._q_hat_last_tick = self.q_hat.copy()
        blend = 1.0 - math.exp(-2.0 * math.pi * self.velocity_cutoff_hz * dt)
        self.v_hat = self.v_hat + blend * (raw_velocity - self.v_hat)

    # -------- guard torque mapping --------

    def mirrored_state(self) -> JointState:
        return JointState(self.q_hat.copy(), self.v_hat.copy(),
                          timestamp=self.last_telemetry_time)

    def mapped_limit_torque(self, J_local: np.ndarray,
                            gains: OperatorGains) -> np.ndarray:
        """Remote-limit guard torque expressed on the local joints.

        The remote guard torque is converted to the hand wrench that
        would produce it (pseudoinverse of the remote Jacobian
        transpose, small singular values truncated) and pulled back
        through the local Jacobian transpose.  Near remote
        singularities the truncation keeps the output bounded and the
        event is counted for diagnostics.
        """
        tau_remote = limit_avoidance_torque(self.model, self.mirrored_state(), gains)
        if not np.any(tau_remote):
            return np.zeros(J_local.shape[1])
        J_remote = body_jacobian(self.model, self.q_hat)
        U, s, Vt = np.linalg.svd(J_remote.T, full_matrices=False)
        if s[-1] < SINGULAR_VALUE_CUTOFF:
            self.singular_events += 1
        inv = np.where(s > SINGULAR_VALUE_CUTOFF, 1.0 / np.where(s > 0, s, 1.0), 0.0)
        wrench = (Vt.T * inv) @ (U.T @ tau_remote)
        return J_local.T @ wrench

    def guard_torque(self, J_local: np.ndarray, gains: OperatorGains,
                     dt: float) -> np.ndarray:
        """Slew-limited guard torque for direct use in the torque law.

        Zero while holding (no telemetry yet or telemetry stale); on
        resume the output ramps from zero at the configured rate so a
        re-acquired mirror cannot kick the operator.
        """
        if self.hold:
            return self._tau_out.copy()
        target = self.mapped_limit_torque(J_local, gains)
        max_step = self.slew_rate * dt
        delta = np.clip(target - self._tau_out, -max_step, max_step)
        self._tau_out = self._tau_out + delta
        return self._tau_out.copy()
