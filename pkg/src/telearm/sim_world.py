"""Deterministic plant models for closed-loop testing.

Everything a bench test needs to stand in for hardware: torque-driven
arm dynamics, a force/torque sensor with bias, attached mass, noise and
the onboard low-pass, a spring-like stand-in for the operator's hand on
the grip, and a grasping hand whose fingers stall against objects.

The arm model is deliberately simple (decoupled per-joint inertia and
viscous drag, gravity compensated) so closed-form answers exist for
tests.  All randomness flows from seeds passed in; two runs with the
same seeds produce bit-identical histories.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .arm_model import (
    ArmModel,
    JointState,
    Pose6D,
    interpolate_pose,
    pose_error,
)
from .wrench_calib import CalibrationProfile, Wrench, gravity_direction_in_sensor

# Integration has gone wrong well before any real joint spins this fast.
BLOWUP_VELOCITY = 100.0  # rad/s

SENSOR_SAMPLE_RATE = 500.0  # Hz
SENSOR_CUTOFF_HZ = 15.0


class NumericalBlowup(RuntimeError):
    """The integrator produced velocities no real arm could reach."""


# ====================== arm dynamics ======================


class SimArm:
    """Semi-implicit Euler integration of decoupled joint dynamics.

    Per joint: inertia * accel = torque - damping * velocity.  Position
    limits act as hard stops (the into-limit velocity is killed), the
    velocity limit models the drive-side governor.  Both clamps are
    counted so tests can assert a run never touched them.
    """

    def __init__(self, model: ArmModel,
                 q0: Optional[np.ndarray] = None,
                 v0: Optional[np.ndarray] = None):
        self.model = model
        n = model.joint_count
        self.q = (model.rest_pose.copy() if q0 is None
                  else np.asarray(q0, dtype=float).copy())
        self.v = (np.zeros(n) if v0 is None
                  else np.asarray(v0, dtype=float).copy())
        self.position_clamp_events = 0
        self.velocity_clamp_events = 0

    def step(self, torque: np.ndarray, dt: float) -> None:
        torque = np.asarray(torque, dtype=float)
        m = self.model
        accel = (torque - m.viscous_damping * self.v) / m.effective_inertia
        v = self.v + dt * accel

        if not np.all(np.isfinite(v)) or np.any(np.abs(v) > BLOWUP_VELOCITY):
            raise NumericalBlowup(
                f"joint velocity {v} exceeds {BLOWUP_VELOCITY} rad/s")

        over = np.abs(v) > m.velocity_limits
        if np.any(over):
            self.velocity_clamp_events += int(np.sum(over))
            v = np.clip(v, -m.velocity_limits, m.velocity_limits)

        q = self.q + dt * v
        below = q < m.position_lower
        above = q > m.position_upper
        if np.any(below) or np.any(above):
            self.position_clamp_events += int(np.sum(below) + np.sum(above))
            q = np.clip(q, m.position_lower, m.position_upper)
            # hard stop: whatever velocity drove into the wall is gone
            v = np.where(below & (v < 0), 0.0, v)
            v = np.where(above & (v > 0), 0.0, v)
        self.q = q
        self.v = v

    def state(self, timestamp: float = 0.0) -> JointState:
        return JointState(self.q.copy(), self.v.copy(), timestamp=timestamp)


# ====================== force/torque sensor ======================


class SimSensor:
    """Strain-gauge style sensor: bias + attached mass + noise, then the
    onboard first-order low-pass at its native sample rate."""

    def __init__(self, truth: CalibrationProfile,
                 noise_force_std: float = 0.0,
                 noise_torque_std: float = 0.0,
                 seed: int = 0,
                 cutoff_hz: float = SENSOR_CUTOFF_HZ,
                 sample_rate: float = SENSOR_SAMPLE_RATE):
        self.truth = truth
        self.noise_force_std = float(noise_force_std)
        self.noise_torque_std = float(noise_torque_std)
        self.rng = np.random.default_rng(seed)
        self.blend = 1.0 - math.exp(-2.0 * math.pi * cutoff_hz / sample_rate)
        self.filtered: Optional[np.ndarray] = None

    def sample(self, R_world_sensor: np.ndarray,
               external: Optional[Wrench] = None) -> Wrench:
        """One native-rate sample; `external` is in the sensor frame."""
        ghat = gravity_direction_in_sensor(R_world_sensor)
        reading = self.truth.predicted_reading(ghat).as_vector()
        if external is not None:
            reading = reading + external.as_vector()
        if self.noise_force_std > 0.0 or self.noise_torque_std > 0.0:
            reading = reading + np.concatenate([
                self.rng.normal(0.0, self.noise_force_std, 3),
                self.rng.normal(0.0, self.noise_torque_std, 3),
            ])
        if self.filtered is None:
            self.filtered = reading.copy()
        else:
            self.filtered = self.filtered + self.blend * (reading - self.filtered)
        return Wrench.from_vector(self.filtered)


# ====================== operator's hand on the grip ======================


@dataclass
class Waypoint:
    time: float
    pose: Pose6D


class PiecewiseTrajectory:
    """Waypoint list with linear position / slerp orientation blending."""

    def __init__(self, waypoints: Sequence[Waypoint]):
        if not waypoints:
            raise ValueError("trajectory needs at least one waypoint")
        times = [w.time for w in waypoints]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("waypoint times must be strictly increasing")
        self.waypoints = list(waypoints)

    @property
    def end_time(self) -> float:
        return self.waypoints[-1].time

    def pose_at(self, t: float) -> Pose6D:
        pts = self.waypoints
        if t <= pts[0].time:
            return pts[0].pose
        if t >= pts[-1].time:
            return pts[-1].pose
        for a, b in zip(pts, pts[1:]):
            if t <= b.time:
                s = (t - a.time) / (b.time - a.time)
                return interpolate_pose(a.pose, b.pose, s)
        return pts[-1].pose


class OperatorIntent:
    """Spring model of the human hand guiding the grip along a path.

    The wrench is a stiffness times the pose error toward the current
    trajectory target, saturated at what a relaxed human actually
    applies to a grip.  The same wrench is both physically applied to
    the arm and felt by the wrist sensor.
    """

    def __init__(self, trajectory: PiecewiseTrajectory,
                 stiffness: Optional[np.ndarray] = None,
                 force_cap: float = 30.0,
                 torque_cap: float = 5.0):
        self.trajectory = trajectory
        self.stiffness = (np.array([300.0] * 3 + [8.0] * 3)
                          if stiffness is None
                          else np.asarray(stiffness, dtype=float))
        self.force_cap = float(force_cap)
        self.torque_cap = float(torque_cap)

    def push(self, hand_pose: Pose6D, t: float) -> Wrench:
        target = self.trajectory.pose_at(t)
        # pose_error(target, hand) points from the hand toward the target
        dp = pose_error(target, hand_pose)
        raw = self.stiffness * dp
        force, torque = raw[:3], raw[3:]
        nf = np.linalg.norm(force)
        if nf > self.force_cap:
            force = force * (self.force_cap / nf)
        nt = np.linalg.norm(torque)
        if nt > self.torque_cap:
            torque = torque * (self.torque_cap / nt)
        return Wrench(force, torque)


# ====================== grasping hand ======================


class SimHand:
    """Rate-limited closure tracking with stall current against objects.

    Each actuator chases its commanded closure at a fixed rate.  An
    object is a per-actuator ceiling on closure; pressing into it stalls
    the drive and the current grows with the remaining command error,
    which is exactly what the brake feedback keys on.
    """

    def __init__(self, actuator_count: int,
                 closure_rate: float = 2.0,
                 stall_gain: float = 1.2):
        self.closure = np.zeros(actuator_count)
        self.closure_rate = float(closure_rate)
        self.stall_gain = float(stall_gain)
        self.ceiling = np.ones(actuator_count)

    def set_object(self, ceiling: Optional[np.ndarray]) -> None:
        """Ceiling per actuator, or None to clear the object."""
        if ceiling is None:
            self.ceiling = np.ones_like(self.closure)
        else:
            self.ceiling = np.asarray(ceiling, dtype=float).copy()

    def step(self, commanded: np.ndarray, dt: float) -> np.ndarray:
        """Advance one tick, return actuator currents."""
        commanded = np.clip(np.asarray(commanded, dtype=float), 0.0, 1.0)
        step = np.clip(commanded - self.closure,
                       -self.closure_rate * dt, self.closure_rate * dt)
        self.closure = np.minimum(np.clip(self.closure + step, 0.0, 1.0),
                                  self.ceiling)
        return self.stall_gain * np.abs(commanded - self.closure)
