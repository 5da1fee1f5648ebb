"""Closed-loop scenario runner plus the experiment analyses.

A run wires two stations together: each station owns a simulated arm,
its wrist F/T sensor and one node (controller + link endpoint).  The
loopback runner executes both stations in one process; the split runner
executes one station per process over TCP with lockstep tick exchange.
Both call the exact same per-tick station code, so their traces are
byte-identical for equal scenarios and seeds.

All randomness (sensor noise, link jitter, drops) is derived from the
scenario seed, and trace floats are written with `repr`, so rerunning a
scenario reproduces its trace files bit for bit.

The analyses at the bottom reproduce the experiment readouts: delay
compensation (cross-correlation lags of the mirror and the raw
telemetry echo against true avatar joints), assisted-versus-unassisted
interaction force, and reachable-workspace fractions over candidate arm
mountings.
"""

from __future__ import annotations

import math
import os
import subprocess
import sys
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .arm_model import (
    ArmSetup,
    JointState,
    Pose6D,
    axis_angle_matrix,
    forward_kinematics,
    ik_with_restarts,
    load_arm_file,
    matrix_to_quat,
    pose_error,
    quat_to_matrix,
    rot_y,
    rot_z,
    transform,
    transform_inverse,
    zero_jacobian,
)
from .avatar_controller import ImpedanceGains
from .configio import ConfigError
from .hand_channel import GloveFrame, load_hand_file
from .nodes import AvatarNode, OperatorNode, world_from_sensor
from .operator_controller import OperatorGains
from .predictive import AvatarMirror
from .scenario import Scenario, load_scenario
from .sim_world import NumericalBlowup, OperatorIntent, PiecewiseTrajectory, SimArm, SimHand, SimSensor, Waypoint
from .teleop_link import DelayModel, LinkEndpoint, LoopbackLink, SocketLink
from .wrench_calib import Wrench, cross3

# Scripted glove: a closure level of 1.0 corresponds to this flexion
# angle on every glove joint the retarget map reads.
GLOVE_FLEX_RANGE = 1.5  # rad


# ====================== wrench frame plumbing ======================


def wrench_world_to_base(world_from_base: np.ndarray, w_world: np.ndarray) -> np.ndarray:
    """Re-express a wrench acting at the hand in base-frame axes."""
    R = world_from_base[:3, :3]
    return np.concatenate([R.T @ w_world[:3], R.T @ w_world[3:]])


def wrench_at_hand_in_sensor(world_from_sensor_T: np.ndarray,
                             hand_position_world: np.ndarray,
                             w_world: np.ndarray) -> Wrench:
    """What the wrist sensor feels for a world wrench at the hand.

    The force picks up the sensor orientation; the moment picks up the
    lever arm from the sensor origin to the hand.
    """
    R_sw = world_from_sensor_T[:3, :3].T
    lever = hand_position_world - world_from_sensor_T[:3, 3]
    force_s = R_sw @ w_world[:3]
    moment_s = R_sw @ (w_world[3:] + cross3(lever, w_world[:3]))
    return Wrench(force_s, moment_s)


# ====================== trace files ======================


def _vec_cols(prefix: str, n: int) -> List[str]:
    return [f"{prefix}{i + 1}" for i in range(n)]


class TraceWriter:
    """CSV with repr-formatted floats so reruns are byte-identical."""

    def __init__(self, path: str, columns: List[str]):
        self.columns = columns
        self._fh = open(path, "w", encoding="utf-8", newline="\n")
        self._fh.write(",".join(columns) + "\n")

    def row(self, values: List) -> None:
        parts = []
        for v in values:
            if isinstance(v, str):
                parts.append(v)
            elif isinstance(v, (bool, np.bool_)):
                parts.append("1" if v else "0")
            elif isinstance(v, (int, np.integer)):
                parts.append(str(int(v)))
            else:
                parts.append(repr(float(v)))
        self._fh.write(",".join(parts) + "\n")

    def close(self) -> None:
        self._fh.close()


def read_trace(path: str) -> Dict[str, np.ndarray]:
    """Columns of a trace CSV; numeric where possible, strings otherwise."""
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split(",")
        rows = [line.rstrip("\n").split(",") for line in fh]
    out: Dict[str, np.ndarray] = {}
    for j, name in enumerate(header):
        raw = [r[j] for r in rows]
        try:
            out[name] = np.array([float(x) for x in raw])
        except ValueError:
            out[name] = np.array(raw, dtype=object)
    return out


# ====================== station assembly ======================


def _operator_gains(scenario: Scenario, setup: ArmSetup) -> OperatorGains:
    overrides = dict(
        assist_enabled=scenario.operator_assist,
        assist_scale=scenario.operator_assist_scale,
        haptic_scale=scenario.operator_haptic_scale,
    )
    if scenario.operator_nullspace_gain is not None:
        overrides["nullspace_gain"] = scenario.operator_nullspace_gain
    return OperatorGains.for_model(setup.model, **overrides)


def _impedance_gains(scenario: Scenario) -> ImpedanceGains:
    kwargs = {}
    for attr, key in (("avatar_stiffness", "stiffness"),
                      ("avatar_damping", "damping"),
                      ("avatar_fade_duration", "fade_duration"),
                      ("avatar_force_stop", "force_stop"),
                      ("avatar_torque_stop", "torque_stop"),
                      ("avatar_auto_restart", "auto_restart"),
                      ("avatar_restart_delay", "restart_delay"),
                      ("avatar_nullspace_gain", "nullspace_gain")):
        value = getattr(scenario, attr)
        if value is not None:
            kwargs[key] = value
    return ImpedanceGains(**kwargs)


def _initial_q(setup: ArmSetup, given: Optional[np.ndarray], who: str) -> np.ndarray:
    if given is None:
        return setup.model.rest_pose.copy()
    q = np.asarray(given, dtype=float)
    if q.shape != (setup.model.joint_count,):
        raise ConfigError(
            f"initial.{who}_q needs {setup.model.joint_count} numbers")
    return setup.model.clamp_positions(q)


def _intent_trajectory(scenario: Scenario, start: Pose6D) -> PiecewiseTrajectory:
    if not scenario.intent_waypoints:
        return PiecewiseTrajectory([Waypoint(0.0, start)])
    points = []
    R0 = quat_to_matrix(start.quaternion)
    for t, vec in scenario.intent_waypoints:
        offset, rotvec = vec[:3], vec[3:]
        angle = float(np.linalg.norm(rotvec))
        R_w = np.eye(3) if angle < 1e-12 else axis_angle_matrix(rotvec / angle, angle)
        if scenario.intent_mode == "relative":
            pose = Pose6D(start.position + offset, matrix_to_quat(R_w @ R0))
        else:
            pose = Pose6D(offset, matrix_to_quat(R_w))
        points.append(Waypoint(float(t), pose))
    if points[0].time > 0.0:
        points.insert(0, Waypoint(0.0, start))
    return PiecewiseTrajectory(points)


class OperatorStation:
    """Operator node plus its local plant: arm, sensor, scripted human."""

    def __init__(self, scenario: Scenario, trace_path: Optional[str] = None):
        self.sc = scenario
        self.setup = load_arm_file(scenario.operator_arm)
        model = self.setup.model
        hand_setup = load_hand_file(scenario.hand_config)

        mirror = None
        if scenario.mirror_enabled:
            remote = load_arm_file(scenario.avatar_arm)
            mirror = AvatarMirror(remote.model, remote.world_from_base)
        self.node = OperatorNode(self.setup, _operator_gains(scenario, self.setup),
                                 hand_setup, mirror,
                                 rates=scenario.rates,
                                 tick_us=scenario.tick_us)

        q0 = _initial_q(self.setup, scenario.initial_operator_q, "operator")
        self.arm = SimArm(model, q0)
        self.sensor = SimSensor(self.node.profile,
                                scenario.sensor_noise_force,
                                scenario.sensor_noise_torque,
                                seed=scenario.seed + 1)
        start = Pose6D.from_matrix(
            self.setup.world_from_base @ forward_kinematics(model, q0).matrix())
        self.intent = OperatorIntent(_intent_trajectory(scenario, start),
                                     scenario.intent_stiffness,
                                     scenario.intent_force_cap,
                                     scenario.intent_torque_cap)
        self.glove_template = np.full(hand_setup.retarget.required_angles(),
                                      GLOVE_FLEX_RANGE)
        self.reading = Wrench.zero()
        self.last_command = np.zeros(hand_setup.retarget.actuator_count)
        self.fingers = sorted(hand_setup.fingers)

        self.intent_force_sq = 0.0
        self.intent_force_peak = 0.0
        self.intent_torque_sq = 0.0
        self.intent_torque_peak = 0.0
        self.max_speed = 0.0

        self.writer = None
        if trace_path is not None and scenario.rates.trace_every > 0:
            n = model.joint_count
            m = hand_setup.retarget.actuator_count
            cols = (["tick", "t"] + _vec_cols("q", n) + _vec_cols("v", n)
                    + _vec_cols("tau", n) + _vec_cols("alpha", n)
                    + _vec_cols("d_p", n) + _vec_cols("d_v", n)
                    + _vec_cols("tau_assist", n) + _vec_cols("tau_haptic", n)
                    + _vec_cols("tau_limit", n) + _vec_cols("tau_mirror", n)
                    + _vec_cols("tau_null", n) + _vec_cols("tau_velff", n)
                    + _vec_cols("qhat", n) + _vec_cols("vhat", n)
                    + _vec_cols("telem_q", n)
                    + ["goal_x", "goal_y", "goal_z",
                       "goal_qw", "goal_qx", "goal_qy", "goal_qz"]
                    + ["intent_fx", "intent_fy", "intent_fz",
                       "intent_tx", "intent_ty", "intent_tz"]
                    + ["fb_fx", "fb_fy", "fb_fz", "fb_tx", "fb_ty", "fb_tz"]
                    + ["sat"]
                    + [f"brake_{f}" for f in self.fingers]
                    + _vec_cols("cmd", m))
            self.writer = TraceWriter(trace_path, cols)

    def tick(self, k: int, frames, endpoint: LinkEndpoint) -> None:
        sc = self.sc
        dt = sc.dt
        t = k * dt
        state = self.arm.state(t)
        q = state.positions
        model = self.setup.model

        hand_T = self.setup.world_from_base @ forward_kinematics(model, q).matrix()
        w_intent = self.intent.push(Pose6D.from_matrix(hand_T), t)
        w_vec = w_intent.as_vector()

        if k % sc.rates.sense_every == 0:
            sensor_T = hand_T @ self.setup.hand_from_sensor
            felt = wrench_at_hand_in_sensor(sensor_T, hand_T[:3, 3], w_vec)
            self.reading = self.sensor.sample(sensor_T[:3, :3], felt)

        glove = GloveFrame(self.glove_template * sc.closure_at(t))
        result = self.node.tick(k, state, self.reading, glove, frames, endpoint)
        if result.closure_sent is not None:
            self.last_command = result.closure_sent

        tau_ext = zero_jacobian(model, q).T @ wrench_world_to_base(
            self.setup.world_from_base, w_vec)
        try:
            self.arm.step(result.torque + tau_ext, dt)
        except NumericalBlowup as exc:
            raise NumericalBlowup(
                f"operator arm diverged at tick {k} (t={t:.3f} s): {exc}") from None

        fn = w_intent.norm_force()
        tn = w_intent.norm_torque()
        self.intent_force_sq += fn * fn
        self.intent_torque_sq += tn * tn
        self.intent_force_peak = max(self.intent_force_peak, fn)
        self.intent_torque_peak = max(self.intent_torque_peak, tn)
        self.max_speed = max(self.max_speed, float(np.max(np.abs(self.arm.v))))

        if self.writer is not None and k % sc.rates.trace_every == 0:
            self._trace(k, t, state, result, w_vec)

    def _trace(self, k, t, state, result, w_vec) -> None:
        out = result.output
        n = self.setup.model.joint_count
        nan = [float("nan")] * n
        mirror = self.node.mirror
        qhat = list(mirror.q_hat) if mirror is not None else nan
        vhat = list(mirror.v_hat) if mirror is not None else nan
        telem = (list(result.telemetry_q)
                 if result.telemetry_q is not None else nan)
        row = ([k, t] + list(state.positions) + list(state.velocities)
               + list(out.torque) + list(out.alpha)
               + list(out.d_p) + list(out.d_v)
               + list(out.tau_assist) + list(out.tau_haptic)
               + list(out.tau_limit) + list(out.tau_mirror)
               + list(out.tau_nullspace) + list(out.tau_velocity_ff)
               + qhat + vhat + telem
               + list(out.hand_goal.as_vector())
               + list(w_vec)
               + list(result.feedback.as_vector())
               + [out.saturated]
               + [result.brakes[f] for f in self.fingers]
               + list(self.last_command))
        self.writer.row(row)

    def finish(self) -> Dict[str, float]:
        if self.writer is not None:
            self.writer.close()
        ticks = max(1, self.sc.tick_count)
        mirror = self.node.mirror
        return {
            "intent_force_rms": float(np.sqrt(self.intent_force_sq / ticks)),
            "intent_force_peak": float(self.intent_force_peak),
            "intent_torque_rms": float(np.sqrt(self.intent_torque_sq / ticks)),
            "intent_torque_peak": float(self.intent_torque_peak),
            "operator_max_speed": float(self.max_speed),
            "operator_saturation_count": float(self.node.controller.saturation_count),
            "operator_position_clamps": float(self.arm.position_clamp_events),
            "operator_velocity_clamps": float(self.arm.velocity_clamp_events),
            "mirror_singular_events": float(mirror.singular_events if mirror else 0),
        }


class AvatarStation:
    """Avatar node plus its local plant: arm, sensor, grasping hand."""

    def __init__(self, scenario: Scenario, trace_path: Optional[str] = None):
        self.sc = scenario
        self.setup = load_arm_file(scenario.avatar_arm)
        model = self.setup.model
        hand_setup = load_hand_file(scenario.hand_config)
        m = hand_setup.retarget.actuator_count

        self.node = AvatarNode(self.setup, _impedance_gains(scenario), m,
                               rates=scenario.rates, tick_us=scenario.tick_us)
        q0 = _initial_q(self.setup, scenario.initial_avatar_q, "avatar")
        self.arm = SimArm(model, q0)
        self.sensor = SimSensor(self.node.profile,
                                scenario.sensor_noise_force,
                                scenario.sensor_noise_torque,
                                seed=scenario.seed + 2)
        self.hand = SimHand(m)
        self.currents = np.zeros(m)
        self.reading = Wrench.zero()
        self._ceiling_active = False
        self.max_speed = 0.0

        self.writer = None
        if trace_path is not None and scenario.rates.trace_every > 0:
            n = model.joint_count
            cols = (["tick", "t"] + _vec_cols("q", n) + _vec_cols("v", n)
                    + _vec_cols("tau", n)
                    + _vec_cols("tau_track", n) + _vec_cols("tau_init", n)
                    + _vec_cols("tau_null", n) + _vec_cols("tau_velff", n)
                    + ["mode", "progress", "stale", "stop_count", "stop_reason"]
                    + ["eq_x", "eq_y", "eq_z", "eq_qw", "eq_qx", "eq_qy", "eq_qz"]
                    + ["dp_x", "dp_y", "dp_z", "dp_rx", "dp_ry", "dp_rz"]
                    + ["w_fx", "w_fy", "w_fz", "w_tx", "w_ty", "w_tz"]
                    + _vec_cols("closure", m) + _vec_cols("current", m))
            self.writer = TraceWriter(trace_path, cols)

    def tick(self, k: int, frames, endpoint: LinkEndpoint) -> None:
        sc = self.sc
        dt = sc.dt
        t = k * dt
        state = self.arm.state(t)
        q = state.positions
        model = self.setup.model

        fk_pose = forward_kinematics(model, q)
        hand_T = self.setup.world_from_base @ fk_pose.matrix()
        w_world = sc.external_wrench_at(t)

        if k % sc.rates.sense_every == 0:
            felt = None
            if w_world is not None:
                sensor_T = hand_T @ self.setup.hand_from_sensor
                felt = wrench_at_hand_in_sensor(sensor_T, hand_T[:3, 3], w_world)
            self.reading = self.sensor.sample(
                (hand_T @ self.setup.hand_from_sensor)[:3, :3], felt)

        result = self.node.tick(k, state, self.reading, self.currents,
                                frames, endpoint)

        torque = result.torque
        if w_world is not None:
            torque = torque + zero_jacobian(model, q).T @ wrench_world_to_base(
                self.setup.world_from_base, w_world)
        try:
            self.arm.step(torque, dt)
        except NumericalBlowup as exc:
            raise NumericalBlowup(
                f"avatar arm diverged at tick {k} (t={t:.3f} s): {exc}") from None

        ceiling = sc.block_ceiling_at(t)
        if ceiling is not None and not self._ceiling_active:
            self.hand.set_object(np.full(self.hand.closure.size, ceiling))
            self._ceiling_active = True
        elif ceiling is None and self._ceiling_active:
            self.hand.set_object(None)
            self._ceiling_active = False
        self.currents = self.hand.step(result.closure_command, dt)
        self.max_speed = max(self.max_speed, float(np.max(np.abs(self.arm.v))))

        if self.writer is not None and k % sc.rates.trace_every == 0:
            self._trace(k, t, state, result, fk_pose)

    def _trace(self, k, t, state, result, fk_pose) -> None:
        out = result.output
        progress = out.progress
        tau_track = progress * out.tau_task
        tau_init = (1.0 - progress) * out.tau_task
        if out.equilibrium is not None:
            eq = list(out.equilibrium.as_vector())
            dp = list(pose_error(fk_pose, out.equilibrium))
        else:
            eq = [float("nan")] * 7
            dp = [float("nan")] * 6
        row = ([k, t] + list(state.positions) + list(state.velocities)
               + list(out.torque)
               + list(tau_track) + list(tau_init)
               + list(out.tau_nullspace) + list(out.tau_velocity)
               + [out.mode.name, progress, out.goal_stale,
                  self.node.controller.stop_count, out.stop_reason or "-"]
               + eq + dp
               + list(result.measured.as_vector())
               + list(result.closure_command) + list(self.currents))
        self.writer.row(row)

    def finish(self) -> Dict[str, float]:
        if self.writer is not None:
            self.writer.close()
        return {
            "avatar_max_speed": float(self.max_speed),
            "avatar_stop_count": float(self.node.controller.stop_count),
            "avatar_position_clamps": float(self.arm.position_clamp_events),
            "avatar_velocity_clamps": float(self.arm.velocity_clamp_events),
        }


# ====================== runners ======================


@dataclass
class RunResult:
    scenario_name: str
    ticks: int
    operator_trace: Optional[str]
    avatar_trace: Optional[str]
    summary: Dict[str, float] = field(default_factory=dict)


def trace_paths(scenario: Scenario, trace_dir: Optional[str]):
    if trace_dir is None:
        return None, None
    os.makedirs(trace_dir, exist_ok=True)
    return (os.path.join(trace_dir, f"{scenario.name}_operator.csv"),
            os.path.join(trace_dir, f"{scenario.name}_avatar.csv"))


def _command_delay(scenario: Scenario) -> DelayModel:
    link = scenario.link
    return DelayModel(link.command_delay_ms, link.jitter_ms, link.drop_rate,
                      seed=scenario.seed + 3, tick_us=scenario.tick_us)


def _feedback_delay(scenario: Scenario) -> DelayModel:
    link = scenario.link
    return DelayModel(link.feedback_delay_ms, link.jitter_ms, link.drop_rate,
                      seed=scenario.seed + 4, tick_us=scenario.tick_us)


def _link_summary(scenario: Scenario,
                  operator: LinkEndpoint, avatar: LinkEndpoint,
                  blackout_dropped: int) -> Dict[str, float]:
    budget = scenario.link.budget_bytes_per_s
    op_rate = operator.bytes_sent / scenario.duration
    av_rate = avatar.bytes_sent / scenario.duration
    return {
        "operator_bytes_sent": float(operator.bytes_sent),
        "avatar_bytes_sent": float(avatar.bytes_sent),
        "operator_bandwidth_bytes_per_s": float(op_rate),
        "avatar_bandwidth_bytes_per_s": float(av_rate),
        "bandwidth_ok": float(op_rate <= budget and av_rate <= budget),
        "command_frames_dropped": float(operator.delay.dropped),
        "feedback_frames_dropped": float(avatar.delay.dropped),
        "operator_stale_discarded": float(operator.inbox.stale_discarded),
        "avatar_stale_discarded": float(avatar.inbox.stale_discarded),
        "blackout_frames_dropped": float(blackout_dropped),
    }


def run_scenario(scenario: Scenario,
                 trace_dir: Optional[str] = None) -> RunResult:
    """Single-process loopback run; returns summary metrics."""
    op_path, av_path = trace_paths(scenario, trace_dir)
    operator = OperatorStation(scenario, op_path)
    avatar = AvatarStation(scenario, av_path)
    link = LoopbackLink(_command_delay(scenario), _feedback_delay(scenario))
    blackout_dropped = 0
    ticks = scenario.tick_count
    try:
        for k in range(ticks):
            now_us = k * scenario.tick_us
            t = k * scenario.dt
            operator.tick(k, link.operator.collect(now_us), link.operator)
            avatar.tick(k, link.avatar.collect(now_us), link.avatar)
            out_op = link.operator.take_outgoing()
            out_av = link.avatar.take_outgoing()
            if scenario.in_blackout(t):
                blackout_dropped += len(out_op) + len(out_av)
                out_op, out_av = [], []
            link.avatar.deliver(out_op)
            link.operator.deliver(out_av)
    finally:
        summary = operator.finish()
        summary.update(avatar.finish())
    summary.update(_link_summary(scenario, link.operator, link.avatar,
                                 blackout_dropped))
    return RunResult(scenario.name, ticks, op_path, av_path, summary)


def run_station(role: str, scenario: Scenario, link: SocketLink,
                trace_path: Optional[str] = None,
                delay: Optional[DelayModel] = None) -> Dict[str, float]:
    """One station against a socket peer, lockstep per tick."""
    if role == "operator":
        station = OperatorStation(scenario, trace_path)
        delay = delay if delay is not None else _command_delay(scenario)
    elif role == "avatar":
        station = AvatarStation(scenario, trace_path)
        delay = delay if delay is not None else _feedback_delay(scenario)
    else:
        raise ValueError(f"unknown station role '{role}'")
    endpoint = LinkEndpoint(delay)
    blackout_dropped = 0
    try:
        for k in range(scenario.tick_count):
            now_us = k * scenario.tick_us
            t = k * scenario.dt
            station.tick(k, endpoint.collect(now_us), endpoint)
            outgoing = endpoint.take_outgoing()
            if scenario.in_blackout(t):
                blackout_dropped += len(outgoing)
                outgoing = []
            endpoint.deliver(link.exchange(k, outgoing))
    finally:
        summary = station.finish()
    summary.update({
        f"{role}_bytes_sent": float(endpoint.bytes_sent),
        f"{role}_bandwidth_bytes_per_s": float(endpoint.bytes_sent / scenario.duration),
        f"{role}_frames_dropped": float(endpoint.delay.dropped),
        f"{role}_stale_discarded": float(endpoint.inbox.stale_discarded),
        f"{role}_blackout_dropped": float(blackout_dropped),
    })
    return summary


def run_split(scenario_path: str,
              trace_dir: Optional[str] = None,
              timeout: float = 300.0) -> RunResult:
    """Two-process run: operator in a subprocess, avatar here.

    The child connects over localhost TCP and both sides run the same
    station loops as the loopback runner, exchanging each tick's frames
    in lockstep, so the traces match the loopback run exactly.
    """
    scenario = load_scenario(scenario_path)
    op_path, av_path = trace_paths(scenario, trace_dir)
    listener = SocketLink.bind_listener("127.0.0.1", 0)
    port = listener.getsockname()[1]
    cmd = [sys.executable, "-m", "telearm", "operator-node",
           "--connect", f"127.0.0.1:{port}",
           "--scenario", os.path.abspath(scenario_path)]
    if op_path is not None:
        cmd += ["--trace", op_path]
    child = subprocess.Popen(cmd, stdout=subprocess.PIPE,
                             stderr=subprocess.PIPE, text=True)
    try:
        listener.settimeout(30.0)
        link = SocketLink.accept(listener)
    except Exception:
        child.kill()
        _, err = child.communicate()
        raise RuntimeError(f"operator process never connected:\n{err}")
    finally:
        listener.close()

    try:
        summary = run_station("avatar", scenario, link, av_path)
    finally:
        link.close()
        out, err = child.communicate(timeout=timeout)
    if child.returncode != 0:
        raise RuntimeError(
            f"operator process failed ({child.returncode}):\n{err}")
    return RunResult(scenario.name, scenario.tick_count, op_path, av_path,
                     summary)


# ====================== delay compensation report ======================


def cross_correlation_lag(series: np.ndarray, reference: np.ndarray,
                          max_lag: int) -> int:
    """Lag (in samples) at which `series` best matches `reference`.

    Positive means `series` runs behind `reference`.  Each overlap is
    scored by its correlation coefficient (means and scales computed on
    the overlap itself); a plain dot product would drift toward
    whichever lag happens to align the high-variance stretches.
    """
    a = np.asarray(series, dtype=float)
    b = np.asarray(reference, dtype=float)
    best_lag = 0
    best = -np.inf
    n = a.size
    for lag in range(-max_lag, max_lag + 1):
        if lag >= 0:
            sa, sb = a[lag:], b[:n - lag]
        else:
            sa, sb = a[:lag], b[-lag:]
        da = sa - sa.mean()
        db = sb - sb.mean()
        denom = math.sqrt(float(np.dot(da, da)) * float(np.dot(db, db)))
        if denom <= 0.0:
            continue
        v = float(np.dot(da, db)) / denom
        if v > best:
            best = v
            best_lag = lag
    return best_lag


def vector_correlation_lag(series: np.ndarray, reference: np.ndarray,
                           max_lag: int) -> int:
    """Lag (in samples) between two multi-channel signals, shape (n, c).

    All channels are scored together as one vector signal, which
    averages out per-channel shape differences that would tilt a
    single-channel peak.  Positive means `series` runs behind."""
    a = np.asarray(series, dtype=float)
    b = np.asarray(reference, dtype=float)
    n = a.shape[0]
    best_lag = 0
    best = -np.inf
    for lag in range(-max_lag, max_lag + 1):
        if lag >= 0:
            sa, sb = a[lag:], b[:n - lag]
        else:
            sa, sb = a[:lag], b[-lag:]
        da = sa - sa.mean(axis=0)
        db = sb - sb.mean(axis=0)
        denom = math.sqrt(float((da * da).sum()) * float((db * db).sum()))
        if denom <= 0.0:
            continue
        v = float((da * db).sum()) / denom
        if v > best:
            best = v
            best_lag = lag
    return best_lag


@dataclass
class DelayReport:
    per_joint: List[Tuple[int, float, float, float]]  # joint, mirror ms, telemetry ms, range rad
    mirror_lag_ms: float       # |lag| of the stacked moving-joint signal
    telemetry_lag_ms: float    # lag of the stacked telemetry echo
    sample_ms: float

    def moving_joints(self) -> List[int]:
        return [j for j, _, _, _ in self.per_joint]


def delay_compensation_report(operator_trace: str, avatar_trace: str,
                              max_lag_s: float = 0.4,
                              settle_s: float = 3.0,
                              min_range_rad: float = 0.05) -> DelayReport:
    """Cross-correlation lags of the mirror estimate and the raw
    telemetry echo against the true avatar joints.

    Only joints that actually move more than `min_range_rad` enter the
    report; flat signals have no usable correlation peak.  The first
    `settle_s` seconds are skipped: they cover telemetry acquisition
    and the trajectory ramp-in, where the estimate is still converging.
    """
    op = read_trace(operator_trace)
    av = read_trace(avatar_trace)
    if op["t"].size < 3 or av["t"].size != op["t"].size:
        raise ValueError("traces are empty or misaligned; record both "
                         "stations at the same trace rate")
    sample_s = float(op["t"][1] - op["t"][0])
    max_lag = int(round(max_lag_s / sample_s))

    n = sum(1 for name in op if name.startswith("qhat"))
    start = int(round(settle_s / sample_s))
    telem_ok = np.ones(op["t"].size, dtype=bool)
    for j in range(1, n + 1):
        telem_ok &= np.isfinite(op[f"telem_q{j}"])
    if telem_ok.any():
        start = max(start, int(np.argmax(telem_ok)))
    if op["t"].size - start < 10 * max_lag // 10 + 3:
        raise ValueError("trace too short for the requested lag window")

    rows = []
    moving = []
    for j in range(1, n + 1):
        truth = av[f"q{j}"][start:]
        span = float(truth.max() - truth.min())
        if span < min_range_rad:
            continue
        moving.append(j)
        mirror_lag = cross_correlation_lag(op[f"qhat{j}"][start:], truth, max_lag)
        telem_lag = cross_correlation_lag(op[f"telem_q{j}"][start:], truth, max_lag)
        rows.append((j, mirror_lag * sample_s * 1e3,
                     telem_lag * sample_s * 1e3, span))
    if not rows:
        raise ValueError("no joint moved enough to measure lags")

    # Headline numbers treat the moving joints as one vector signal;
    # per-joint peaks are broad and tilt with small posture-resolution
    # differences, while the stacked signal pins the common shift.
    truth = np.stack([av[f"q{j}"][start:] for j in moving], axis=1)
    q_hat = np.stack([op[f"qhat{j}"][start:] for j in moving], axis=1)
    telem = np.stack([op[f"telem_q{j}"][start:] for j in moving], axis=1)
    mirror_ms = abs(vector_correlation_lag(q_hat, truth, max_lag)) * sample_s * 1e3
    telem_ms = vector_correlation_lag(telem, truth, max_lag) * sample_s * 1e3
    return DelayReport(rows, mirror_ms, telem_ms, sample_s * 1e3)


# ====================== assist comparison ======================


def assist_comparison(scenario: Scenario,
                      trace_dir: Optional[str] = None) -> Dict[str, float]:
    """Run a scenario with the assist on and with it off; report the
    interaction force the scripted human had to apply in each case."""
    with_assist = replace(scenario, operator_assist=True,
                          name=scenario.name + "_assist")
    without = replace(scenario, operator_assist=False,
                      name=scenario.name + "_noassist")
    on = run_scenario(with_assist, trace_dir).summary
    off = run_scenario(without, trace_dir).summary
    return {
        "assist_force_rms": on["intent_force_rms"],
        "assist_force_peak": on["intent_force_peak"],
        "baseline_force_rms": off["intent_force_rms"],
        "baseline_force_peak": off["intent_force_peak"],
        "assist_torque_rms": on["intent_torque_rms"],
        "baseline_torque_rms": off["intent_torque_rms"],
        "rms_reduction": (off["intent_force_rms"] - on["intent_force_rms"]),
    }


# ====================== workspace analysis ======================


@dataclass
class MountingOption:
    name: str
    world_from_base: np.ndarray


@dataclass
class WorkspaceRow:
    name: str
    reached: int
    total: int

    @property
    def fraction(self) -> float:
        return self.reached / self.total if self.total else 0.0


@dataclass
class WorkspaceReport:
    rows: List[WorkspaceRow]     # sorted best-first
    baseline: WorkspaceRow
    best: WorkspaceRow


POSE_SET_HEADER = ["x", "y", "z", "qw", "qx", "qy", "qz"]


def save_pose_set(path: str, poses: np.ndarray) -> None:
    poses = np.asarray(poses, dtype=float).reshape(-1, 7)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(POSE_SET_HEADER) + "\n")
        for row in poses:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def load_pose_set(path: str) -> np.ndarray:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split(",")
        if header != POSE_SET_HEADER:
            raise ConfigError(
                f"{path}:1: pose set header must be {','.join(POSE_SET_HEADER)}")
        rows = []
        for lineno, line in enumerate(fh, start=2):
            parts = line.strip().split(",")
            if len(parts) != 7:
                raise ConfigError(f"{path}:{lineno}: expected 7 fields")
            try:
                rows.append([float(p) for p in parts])
            except ValueError:
                raise ConfigError(f"{path}:{lineno}: non-numeric field") from None
    if not rows:
        raise ConfigError(f"{path}: pose set is empty")
    return np.asarray(rows, dtype=float)


def seated_pose_set(count: int = 250, seed: int = 0,
                    reference_quat: Optional[np.ndarray] = None) -> np.ndarray:
    """Synthetic hand poses of a seated person, world frame.

    Poses live on a forward-biased shell around the right shoulder;
    orientations scatter around a reference grip orientation.  The world
    origin is the torso center at seat height, x forward, z up.
    """
    rng = np.random.default_rng(seed)
    shoulder = np.array([0.0, -0.25, 0.55])
    if reference_quat is None:
        reference_quat = np.array([1.0, 0.0, 0.0, 0.0])
    R_ref = quat_to_matrix(np.asarray(reference_quat, dtype=float))
    poses = np.empty((count, 7))
    made = 0
    while made < count:
        azimuth = float(np.clip(rng.normal(0.0, 0.7), -1.3, 1.3))
        elevation = float(np.clip(rng.normal(-0.25, 0.45), -1.2, 0.9))
        radius = 0.20 + 0.45 * float(rng.beta(2.2, 2.0))
        direction = np.array([
            np.cos(elevation) * np.cos(azimuth),
            np.cos(elevation) * np.sin(azimuth),
            np.sin(elevation),
        ])
        position = shoulder + radius * direction
        if position[2] < 0.05:
            continue
        axis = rng.standard_normal(3)
        axis /= np.linalg.norm(axis)
        angle = float(np.clip(rng.normal(0.0, 0.5), -1.2, 1.2))
        R = axis_angle_matrix(axis, angle) @ R_ref
        poses[made, :3] = position
        poses[made, 3:] = matrix_to_quat(R)
        made += 1
    return poses


def _mount(name: str, xyz, yaw_deg: float, pitch_deg: float = 0.0) -> MountingOption:
    R = rot_z(math.radians(yaw_deg)) @ rot_y(math.radians(pitch_deg))
    return MountingOption(name, transform(xyz, R))


def default_mounting_grid() -> List[MountingOption]:
    """Candidate arm mountings around a seated person, baseline first.

    The baseline is a simple side mount at seat-back height.  The rest
    raise the base toward shoulder height, pull it backward off the
    shoulder line, and yaw it toward the workspace in front of the
    person.  World frame: torso center at seat height, x forward, z up.
    """
    return [
        _mount("side_low", (0.00, -0.42, 0.30), 0.0),
        _mount("side_mid", (0.00, -0.42, 0.55), 0.0),
        _mount("side_mid_yaw30", (0.00, -0.42, 0.55), 30.0),
        _mount("side_high_yaw30", (0.00, -0.42, 0.80), 30.0),
        _mount("back_mid", (-0.20, -0.38, 0.55), 0.0),
        _mount("back_mid_yaw30", (-0.20, -0.38, 0.55), 30.0),
        _mount("back_mid_yaw60", (-0.20, -0.38, 0.55), 60.0),
        _mount("back_high_yaw45", (-0.25, -0.35, 0.85), 45.0),
        _mount("back_high_yaw45_pitch20", (-0.25, -0.35, 0.85), 45.0, 20.0),
        _mount("shoulder_yaw45", (-0.10, -0.30, 0.70), 45.0),
    ]


def reached_count(model, world_from_base: np.ndarray, poses: np.ndarray,
                  restarts: int = 2, max_iters: int = 60) -> int:
    """How many world poses the arm reaches from a given mounting."""
    base_from_world = transform_inverse(world_from_base)
    hits = 0
    for row in np.asarray(poses, dtype=float).reshape(-1, 7):
        pose = Pose6D(row[:3], row[3:])
        target = Pose6D.from_matrix(base_from_world @ pose.matrix())
        if ik_with_restarts(model, target, restarts=restarts,
                            max_iters=max_iters) is not None:
            hits += 1
    return hits


def workspace_analysis(poses: np.ndarray, model,
                       mountings: Sequence[MountingOption],
                       restarts: int = 2, max_iters: int = 60) -> WorkspaceReport:
    """Reached fraction per mounting candidate; first entry is the baseline."""
    if not mountings:
        raise ValueError("need at least one mounting candidate")
    total = np.asarray(poses).reshape(-1, 7).shape[0]
    rows = []
    for option in mountings:
        hits = reached_count(model, option.world_from_base, poses,
                             restarts=restarts, max_iters=max_iters)
        rows.append(WorkspaceRow(option.name, hits, total))
    baseline = rows[0]
    ordered = sorted(rows, key=lambda r: (-r.fraction, r.name))
    return WorkspaceReport(ordered, baseline, ordered[0])
