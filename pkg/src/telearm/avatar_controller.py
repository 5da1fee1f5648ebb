"""Cartesian impedance control for the remote arm.

The remote arm renders a spring-damper between its hand and a
commanded equilibrium pose.  Which pose that is depends on the mode:

HOLDING       no usable goal; the equilibrium is frozen where the
              commanded equilibrium last was (or where the hand is, on
              the very first tick) so the arm stays put.
INITIALIZING  a goal stream just appeared; the equilibrium slides from
              the held pose to the goal over a fixed fade time instead
              of yanking the arm across the workspace.
TRACKING      the equilibrium is the incoming goal itself.
STOPPED       a contact-force breaker tripped; torque is latched to
              zero until restart() is called (or an optional timed
              auto-restart fires).

One impedance law runs in every active mode; the modes only choose the
equilibrium.  That keeps the commanded pose, and therefore the torque,
continuous across mode changes.

The arm is assumed gravity compensated upstream, as with the torque
interface of most collaborative arms, so zero torque means limp, not
falling.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .arm_model import (
    ArmModel,
    JointState,
    Pose6D,
    coriolis_torque,
    fk_and_zero_jacobian,
    forward_kinematics,
    interpolate_pose,
    nullspace_torque,
    pose_error,
    transform_inverse,
)
from .wrench_calib import Wrench


class InvalidTransition(RuntimeError):
    """Raised when restart() is called in a mode that cannot restart."""


class ControlMode(enum.Enum):
    HOLDING = "holding"
    INITIALIZING = "initializing"
    TRACKING = "tracking"
    STOPPED = "stopped"


@dataclass
class ImpedanceGains:
    """Task-space spring-damper plus the surrounding policy knobs."""

    # x, y, z in N/m then rotation about x, y, z in N*m/rad
    stiffness: np.ndarray = field(default_factory=lambda: np.array(
        [400.0, 400.0, 400.0, 30.0, 30.0, 30.0]))
    # near-critical against a few kg of reflected task mass
    damping: np.ndarray = field(default_factory=lambda: np.array(
        [80.0, 80.0, 80.0, 4.0, 4.0, 4.0]))
    nullspace_gain: float = 10.0
    fade_duration: float = 3.0          # s, HOLDING -> TRACKING blend
    force_stop: float = 50.0            # N, measured at the hand
    torque_stop: float = 10.0           # N*m, measured at the hand
    auto_restart: bool = True
    restart_delay: float = 1.0          # s in STOPPED before auto restart
    goal_hold_after: float = 0.1        # s without goals: freeze on last one
    goal_idle_after: float = 1.0        # s without goals: give up, hold pose

    def __post_init__(self):
        self.stiffness = np.asarray(self.stiffness, dtype=float)
        self.damping = np.asarray(self.damping, dtype=float)
        if self.stiffness.shape != (6,) or self.damping.shape != (6,):
            raise ValueError("stiffness and damping must be 6-vectors")
        if np.any(self.stiffness < 0) or np.any(self.damping < 0):
            raise ValueError("stiffness and damping must be non-negative")


@dataclass
class AvatarOutput:
    torque: np.ndarray
    mode: ControlMode
    equilibrium: Optional[Pose6D]
    progress: float               # fade progress, 1.0 outside INITIALIZING
    goal_stale: bool              # goals paused but not yet given up on
    tau_task: np.ndarray
    tau_nullspace: np.ndarray
    tau_velocity: np.ndarray      # velocity feedforward (friction make-up)
    stop_reason: str              # "", "force" or "torque"


class AvatarController:
    """Impedance tracking of a world-frame hand goal stream."""

    def __init__(self, model: ArmModel,
                 gains: Optional[ImpedanceGains] = None,
                 world_from_base: Optional[np.ndarray] = None):
        self.model = model
        self.gains = gains if gains is not None else ImpedanceGains()
        self.world_from_base = (np.eye(4) if world_from_base is None
                                else np.asarray(world_from_base, dtype=float))
        self.base_from_world = transform_inverse(self.world_from_base)

        self.mode = ControlMode.HOLDING
        self.equilibrium: Optional[Pose6D] = None   # base frame
        self.goal: Optional[Pose6D] = None          # base frame
        self.last_goal_time = -np.inf
        self.fade_start: Optional[Pose6D] = None
        self.fade_start_time = 0.0
        self.stopped_at = 0.0
        self.stop_reason = ""
        self.stop_count = 0

    # -------- mode transitions --------

    def restart(self, state: JointState) -> None:
        """Leave STOPPED and hold wherever the arm is now."""
        if self.mode is not ControlMode.STOPPED:
            raise InvalidTransition(
                f"restart() only applies to STOPPED, not {self.mode.name}")
        self.mode = ControlMode.HOLDING
        self.equilibrium = forward_kinematics(self.model, state.positions)
        self.goal = None
        self.stop_reason = ""

    def _trip(self, now: float, reason: str) -> None:
        self.mode = ControlMode.STOPPED
        self.stopped_at = now
        self.stop_reason = reason
        self.stop_count += 1

    def _goal_in_base(self, goal_world: Pose6D) -> Pose6D:
        return Pose6D.from_matrix(self.base_from_world @ goal_world.matrix())

    # -------- main tick --------

    def step(self, state: JointState, goal_world: Optional[Pose6D],
             measured: Optional[Wrench], now: float) -> AvatarOutput:
        n = self.model.joint_count
        zeros = np.zeros(n)

        if self.mode is ControlMode.STOPPED:
            if (self.gains.auto_restart
                    and now - self.stopped_at >= self.gains.restart_delay):
                self.restart(state)
            else:
                return AvatarOutput(zeros, self.mode, None, 1.0, False,
                                    zeros, zeros, zeros, self.stop_reason)

        if measured is not None:
            if measured.norm_force() > self.gains.force_stop:
                self._trip(now, "force")
            elif measured.norm_torque() > self.gains.torque_stop:
                self._trip(now, "torque")
            if self.mode is ControlMode.STOPPED:
                return AvatarOutput(zeros, self.mode, None, 1.0, False,
                                    zeros, zeros, zeros, self.stop_reason)

        if self.equilibrium is None:
            self.equilibrium = forward_kinematics(self.model, state.positions)

        if goal_world is not None:
            self.goal = self._goal_in_base(goal_world)
            self.last_goal_time = now
            if self.mode is ControlMode.HOLDING:
                # fade out of the held pose rather than jumping
                self.mode = ControlMode.INITIALIZING
                self.fade_start = self.equilibrium
                self.fade_start_time = now

        goal_age = now - self.last_goal_time
        if (self.mode in (ControlMode.INITIALIZING, ControlMode.TRACKING)
                and goal_age > self.gains.goal_idle_after):
            # the stream is gone; park at the last commanded equilibrium
            self.mode = ControlMode.HOLDING
            self.goal = None

        progress = 1.0
        if self.mode is ControlMode.INITIALIZING:
            progress = (now - self.fade_start_time) / self.gains.fade_duration
            if progress >= 1.0:
                progress = 1.0
                self.mode = ControlMode.TRACKING
                self.equilibrium = self.goal
            else:
                self.equilibrium = interpolate_pose(self.fade_start, self.goal,
                                                    progress)
        elif self.mode is ControlMode.TRACKING:
            self.equilibrium = self.goal

        goal_stale = (self.mode in (ControlMode.INITIALIZING, ControlMode.TRACKING)
                      and goal_age > self.gains.goal_hold_after)

        tau_task, tau_null = self._impedance(state, self.equilibrium)
        tau_vel = coriolis_torque(self.model, state)
        torque = np.clip(tau_task + tau_null + tau_vel,
                         -self.model.torque_limits, self.model.torque_limits)
        return AvatarOutput(torque, self.mode, self.equilibrium, progress,
                            goal_stale, tau_task, tau_null, tau_vel, "")

    def _impedance(self, state: JointState, equilibrium: Pose6D):
        current, J = fk_and_zero_jacobian(self.model, state.positions)
        displacement = pose_error(current, equilibrium)
        twist = J @ state.velocities
        force = -self.gains.stiffness * displacement - self.gains.damping * twist
        tau_task = J.T @ force
        tau_null = nullspace_torque(self.model, state, J,
                                    self.gains.nullspace_gain)
        return tau_task, tau_null
