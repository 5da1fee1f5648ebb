"""The two station controllers, expressed purely in terms of frames.

An operator node and an avatar node each own one side of the link: they
consume whatever frames arrived this tick, run their controller, and
queue outgoing frames.  Neither touches a transport or a simulator
directly, which is what lets the loopback runner and the two-process
socket runner execute bit-identical control code.

Frame handling is last-writer-wins per message kind; the link inbox has
already discarded stale sequence numbers, so within one tick the last
frame of a kind is the newest.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np

from .arm_model import (
    ArmSetup,
    JointState,
    Pose6D,
    body_jacobian,
    forward_kinematics,
)
from .avatar_controller import AvatarController, AvatarOutput, ImpedanceGains
from .hand_channel import FingerBrakes, GloveFrame, HandSetup
from .operator_controller import OperatorController, OperatorGains, OperatorOutput
from .predictive import AvatarMirror
from .scenario import Rates
from .teleop_link import (
    Frame,
    LinkEndpoint,
    MessageKind,
    hand_command_frame,
    hand_feedback_frame,
    hand_goal_frame,
    pose_from_frame,
    telemetry_frame,
    wrench_frame,
)
from .wrench_calib import CalibrationProfile, Wrench, compensate, wrench_in_frame


def truth_profile(setup: ArmSetup) -> CalibrationProfile:
    """The calibration a perfect bench procedure would recover."""
    return CalibrationProfile(
        force_bias=setup.sensor_force_bias,
        torque_bias=setup.sensor_torque_bias,
        mass=setup.sensor_mass,
        com=setup.sensor_com,
    )


def world_from_sensor(setup: ArmSetup, q: np.ndarray) -> np.ndarray:
    """World pose of the F/T sensor frame for an arm configuration."""
    hand = forward_kinematics(setup.model, q).matrix()
    return setup.world_from_base @ hand @ setup.hand_from_sensor


def external_hand_wrench(setup: ArmSetup, profile: CalibrationProfile,
                         raw: Wrench, q: np.ndarray) -> Wrench:
    """Bias/gravity-compensated sensor reading, re-expressed at the hand."""
    R_ws = world_from_sensor(setup, q)[:3, :3]
    in_sensor = compensate(profile, raw, R_ws)
    return wrench_in_frame(setup.hand_from_sensor, in_sensor)


# ====================== operator station ======================


@dataclass
class OperatorTick:
    torque: np.ndarray
    output: OperatorOutput
    brakes: Dict[str, bool]
    telemetry_q: Optional[np.ndarray]    # newest remote joint echo seen
    feedback: Wrench                     # newest remote wrench echo
    closure_sent: Optional[np.ndarray]   # hand command, on its ticks


class OperatorNode:
    """Assist/guard controller plus the mirror, glove and brake plumbing."""

    def __init__(self,
                 setup: ArmSetup,
                 gains: OperatorGains,
                 hand_setup: HandSetup,
                 mirror: Optional[AvatarMirror] = None,
                 profile: Optional[CalibrationProfile] = None,
                 rates: Optional[Rates] = None,
                 tick_us: int = 1000):
        self.setup = setup
        self.controller = OperatorController(setup.model, gains,
                                             setup.world_from_base)
        self.profile = profile if profile is not None else truth_profile(setup)
        self.mirror = mirror
        self.retarget = hand_setup.retarget
        self.brakes = FingerBrakes(hand_setup)
        self.rates = rates if rates is not None else Rates()
        self.tick_us = int(tick_us)
        self.dt = self.tick_us * 1e-6

        self.goal_seq = 0
        self.command_seq = 0
        self.telemetry_q: Optional[np.ndarray] = None
        self.feedback = Wrench.zero()
        self.brake_state: Dict[str, bool] = {
            name: False for name in hand_setup.fingers}

    def _consume(self, frames, now: float) -> None:
        for frame in frames:
            if frame.kind == MessageKind.AVATAR_TELEMETRY:
                self.telemetry_q = frame.values.copy()
                if self.mirror is not None:
                    measured = JointState(frame.values,
                                          np.zeros_like(frame.values))
                    self.mirror.sync(measured, now)
            elif frame.kind == MessageKind.AVATAR_WRENCH:
                self.feedback = Wrench.from_vector(frame.values)
            elif frame.kind == MessageKind.HAND_FEEDBACK:
                self.brake_state = self.brakes.update(frame.values)

    def tick(self, k: int, state: JointState, raw_reading: Wrench,
             glove: Optional[GloveFrame], frames, endpoint: LinkEndpoint) -> OperatorTick:
        now_us = k * self.tick_us
        now = now_us * 1e-6
        self._consume(frames, now)

        measured = external_hand_wrench(self.setup, self.profile,
                                        raw_reading, state.positions)
        tau_mirror = None
        if self.mirror is not None:
            goal = self.controller.hand_goal(state)
            self.mirror.predict(goal, now, self.dt)
            J_local = body_jacobian(self.setup.model, state.positions)
            tau_mirror = self.mirror.guard_torque(J_local,
                                                  self.controller.gains,
                                                  self.dt)
        out = self.controller.step(state, measured, self.feedback, tau_mirror)

        if k % self.rates.goal_every == 0:
            endpoint.put(hand_goal_frame(self.goal_seq, now_us, out.hand_goal),
                         now_us)
            self.goal_seq += 1
        closure_sent = None
        if glove is not None and k % self.rates.hand_every == 0:
            closure_sent = self.retarget.apply(glove.angles)
            endpoint.put(hand_command_frame(self.command_seq, now_us,
                                            closure_sent), now_us)
            self.command_seq += 1

        return OperatorTick(
            torque=out.torque,
            output=out,
            brakes=dict(self.brake_state),
            telemetry_q=self.telemetry_q,
            feedback=self.feedback,
            closure_sent=closure_sent,
        )


# ====================== avatar station ======================


@dataclass
class AvatarTick:
    torque: np.ndarray
    output: AvatarOutput
    closure_command: np.ndarray
    measured: Wrench             # compensated external wrench, hand frame


class AvatarNode:
    """Impedance tracker plus the telemetry/wrench/hand echo streams."""

    def __init__(self,
                 setup: ArmSetup,
                 gains: ImpedanceGains,
                 actuator_count: int,
                 profile: Optional[CalibrationProfile] = None,
                 rates: Optional[Rates] = None,
                 tick_us: int = 1000):
        self.setup = setup
        self.controller = AvatarController(setup.model, gains,
                                           setup.world_from_base)
        self.profile = profile if profile is not None else truth_profile(setup)
        self.rates = rates if rates is not None else Rates()
        self.tick_us = int(tick_us)

        self.telemetry_seq = 0
        self.wrench_seq = 0
        self.feedback_seq = 0
        self.closure_command = np.zeros(actuator_count)

    def _consume(self, frames) -> Optional[Pose6D]:
        goal = None
        for frame in frames:
            if frame.kind == MessageKind.HAND_GOAL:
                goal = pose_from_frame(frame)
            elif frame.kind == MessageKind.HAND_COMMAND:
                self.closure_command = frame.values.copy()
        return goal

    def tick(self, k: int, state: JointState, raw_reading: Wrench,
             currents: np.ndarray, frames, endpoint: LinkEndpoint) -> AvatarTick:
        now_us = k * self.tick_us
        now = now_us * 1e-6
        goal = self._consume(frames)

        measured = external_hand_wrench(self.setup, self.profile,
                                        raw_reading, state.positions)
        out = self.controller.step(state, goal, measured, now)

        if k % self.rates.telemetry_every == 0:
            endpoint.put(telemetry_frame(self.telemetry_seq, now_us,
                                         state.positions), now_us)
            self.telemetry_seq += 1
        if k % self.rates.wrench_every == 0:
            endpoint.put(wrench_frame(self.wrench_seq, now_us,
                                      measured.as_vector()), now_us)
            self.wrench_seq += 1
        if k % self.rates.hand_every == 0:
            endpoint.put(hand_feedback_frame(self.feedback_seq, now_us,
                                             currents), now_us)
            self.feedback_seq += 1

        return AvatarTick(
            torque=out.torque,
            output=out,
            closure_command=self.closure_command.copy(),
            measured=measured,
        )
