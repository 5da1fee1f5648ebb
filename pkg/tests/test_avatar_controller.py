"""Tests for the remote-arm impedance controller and its mode machine."""

import numpy as np
import pytest

from telearm.arm_model import (
    JointState,
    Pose6D,
    forward_kinematics,
    zero_jacobian,
)
from telearm.avatar_controller import (
    AvatarController,
    ControlMode,
    ImpedanceGains,
    InvalidTransition,
)
from telearm.wrench_calib import Wrench
from util import load_avatar_setup, single_joint_model


def fresh_controller(**gain_overrides):
    setup = load_avatar_setup()
    gains = ImpedanceGains(**gain_overrides)
    return AvatarController(setup.model, gains), setup.model


def rest_state(model) -> JointState:
    return JointState(model.rest_pose.copy(), np.zeros(model.joint_count))


# ---------------- impedance law ----------------


def test_spring_torque_matches_hand_computation():
    """One z joint, hand 0.2 m out along x, goal 1 cm along +y.

    Displacement is (0, -0.01, 0), the 500 N/m spring pulls with
    (0, 5, 0) N at the hand, and the joint lever is 0.2 m, so the
    commanded torque is exactly 1.0 N*m.
    """
    model = single_joint_model(hand_xyz=(0.2, 0.0, 0.0))
    gains = ImpedanceGains(stiffness=np.array([500.0] * 3 + [30.0] * 3),
                           damping=np.zeros(6), nullspace_gain=0.0,
                           fade_duration=1e-6)
    ctrl = AvatarController(model, gains)
    state = JointState(np.zeros(1), np.zeros(1))
    pose = forward_kinematics(model, state.positions)
    goal = Pose6D(pose.position + np.array([0.0, 0.01, 0.0]), pose.quaternion)

    ctrl.step(state, goal, None, now=0.0)          # enters the fade
    out = ctrl.step(state, goal, None, now=1.0)    # fade long over

    assert out.mode is ControlMode.TRACKING
    assert out.torque[0] == pytest.approx(1.0, abs=1e-12)


def test_damping_opposes_hand_twist():
    model = single_joint_model(hand_xyz=(0.2, 0.0, 0.0))
    gains = ImpedanceGains(stiffness=np.zeros(6),
                           damping=np.array([40.0] * 3 + [2.0] * 3),
                           nullspace_gain=0.0, fade_duration=1e-6)
    ctrl = AvatarController(model, gains)
    state = JointState(np.zeros(1), np.array([1.5]))
    goal = forward_kinematics(model, np.zeros(1))
    ctrl.step(state, goal, None, now=0.0)
    out = ctrl.step(state, goal, None, now=1.0)
    # hand speed 0.3 m/s tangential, 40 N*s/m drag, 0.2 m lever, plus
    # the rotational term: 2.0 N*m*s/rad about z.  The velocity
    # feedforward hands back half the modelled joint friction.
    expected = -(40.0 * 0.3 * 0.2 + 2.0 * 1.5) + 0.5 * 1.0 * 1.5
    assert out.torque[0] == pytest.approx(expected, abs=1e-12)
    assert out.tau_velocity[0] == pytest.approx(0.75, abs=1e-12)


def test_impedance_matches_jacobian_transpose_oracle():
    ctrl, model = fresh_controller(fade_duration=1e-6, nullspace_gain=0.0)
    rng = np.random.default_rng(11)
    q = model.rest_pose + 0.2 * rng.standard_normal(7)
    q = model.clamp_positions(q)
    v = 0.3 * rng.standard_normal(7)
    state = JointState(q, v)
    goal_q = model.clamp_positions(q + 0.1 * rng.standard_normal(7))
    goal = forward_kinematics(model, goal_q)

    ctrl.step(state, goal, None, now=0.0)
    out = ctrl.step(state, goal, None, now=1.0)

    J = zero_jacobian(model, q)
    current = forward_kinematics(model, q)
    dp = np.concatenate([
        current.position - goal.position,
        _rotvec(current, goal),
    ])
    wrench = -ctrl.gains.stiffness * dp - ctrl.gains.damping * (J @ v)
    feedforward = model.coriolis_scale * model.viscous_damping * v
    expected = np.clip(J.T @ wrench + feedforward,
                       -model.torque_limits, model.torque_limits)
    assert np.allclose(out.torque, expected, atol=1e-9)


def _rotvec(a: Pose6D, b: Pose6D) -> np.ndarray:
    from telearm.arm_model import matrix_to_rotvec, quat_to_matrix
    return matrix_to_rotvec(quat_to_matrix(a.quaternion)
                            @ quat_to_matrix(b.quaternion).T)


# ---------------- fade behaviour ----------------


def test_fade_position_is_linear_in_time():
    ctrl, model = fresh_controller(fade_duration=2.0)
    state = rest_state(model)
    start = forward_kinematics(model, state.positions)
    goal = Pose6D(start.position + np.array([0.2, -0.1, 0.15]),
                  start.quaternion)

    ctrl.step(state, goal, None, now=0.0)
    for frac in (0.25, 0.5, 0.75):
        out = ctrl.step(state, goal, None, now=2.0 * frac)
        expected = start.position + frac * (goal.position - start.position)
        assert out.mode is ControlMode.INITIALIZING
        assert out.progress == pytest.approx(frac, abs=1e-12)
        assert np.allclose(out.equilibrium.position, expected, atol=1e-9)

    out = ctrl.step(state, goal, None, now=2.0)
    assert out.mode is ControlMode.TRACKING
    assert np.allclose(out.equilibrium.position, goal.position, atol=1e-12)


def test_equilibrium_never_jumps_across_mode_changes():
    """Per-tick equilibrium motion stays at the nominal fade step even
    through HOLDING -> INITIALIZING -> TRACKING transitions."""
    fade = 0.5
    ctrl, model = fresh_controller(fade_duration=fade)
    state = rest_state(model)
    start = forward_kinematics(model, state.positions)
    goal = Pose6D(start.position + np.array([0.3, 0.0, -0.2]),
                  start.quaternion)
    dt = 1e-3
    nominal_step = np.linalg.norm(goal.position - start.position) / fade * dt

    previous = None
    for k in range(1200):
        t = dt * k
        sent = goal if t >= 0.2 else None   # hold first, then stream goals
        out = ctrl.step(state, sent, None, now=t)
        if previous is not None:
            jump = np.linalg.norm(out.equilibrium.position - previous)
            assert jump <= nominal_step + 1e-6
        previous = out.equilibrium.position
    assert ctrl.mode is ControlMode.TRACKING


# ---------------- breakers and restart ----------------


def test_force_breaker_latches_zero_torque():
    ctrl, model = fresh_controller()
    state = rest_state(model)
    hit = Wrench(np.array([0.0, 52.0, 0.0]), np.zeros(3))
    out = ctrl.step(state, None, hit, now=0.0)
    assert out.mode is ControlMode.STOPPED
    assert out.stop_reason == "force"
    assert np.allclose(out.torque, 0.0)

    # the latch holds even after the contact clears
    calm = Wrench(np.zeros(3), np.zeros(3))
    out = ctrl.step(state, None, calm, now=0.5)
    assert out.mode is ControlMode.STOPPED
    assert np.allclose(out.torque, 0.0)
    assert ctrl.stop_count == 1


def test_torque_breaker_reports_reason():
    ctrl, model = fresh_controller()
    state = rest_state(model)
    out = ctrl.step(state, None,
                    Wrench(np.zeros(3), np.array([0.0, 0.0, 11.0])), now=0.0)
    assert out.mode is ControlMode.STOPPED
    assert out.stop_reason == "torque"


def test_breaker_threshold_is_strict():
    ctrl, model = fresh_controller()
    state = rest_state(model)
    out = ctrl.step(state, None,
                    Wrench(np.array([50.0, 0.0, 0.0]), np.zeros(3)), now=0.0)
    assert out.mode is not ControlMode.STOPPED


def test_restart_only_from_stopped():
    ctrl, model = fresh_controller()
    state = rest_state(model)
    with pytest.raises(InvalidTransition):
        ctrl.restart(state)
    ctrl.step(state, None, Wrench(np.array([60.0, 0.0, 0.0]), np.zeros(3)),
              now=0.0)
    ctrl.restart(state)
    assert ctrl.mode is ControlMode.HOLDING
    with pytest.raises(InvalidTransition):
        ctrl.restart(state)


def test_restart_holds_wherever_the_arm_is():
    ctrl, model = fresh_controller()
    state = rest_state(model)
    ctrl.step(state, None, Wrench(np.array([60.0, 0.0, 0.0]), np.zeros(3)),
              now=0.0)
    # the arm was shoved somewhere else while limp
    moved = JointState(model.clamp_positions(model.rest_pose + 0.2),
                       np.zeros(7))
    ctrl.restart(moved)
    out = ctrl.step(moved, None, None, now=1.0)
    assert out.mode is ControlMode.HOLDING
    here = forward_kinematics(model, moved.positions)
    assert np.allclose(out.equilibrium.position, here.position, atol=1e-12)
    assert np.allclose(out.tau_task, 0.0, atol=1e-9)


def test_auto_restart_after_delay():
    ctrl, model = fresh_controller(auto_restart=True, restart_delay=0.2)
    state = rest_state(model)
    ctrl.step(state, None, Wrench(np.array([60.0, 0.0, 0.0]), np.zeros(3)),
              now=1.0)
    assert ctrl.step(state, None, None, now=1.1).mode is ControlMode.STOPPED
    assert ctrl.step(state, None, None, now=1.25).mode is ControlMode.HOLDING


# ---------------- goal staleness ----------------


def test_goal_pause_freezes_on_last_goal():
    ctrl, model = fresh_controller(fade_duration=1e-6)
    state = rest_state(model)
    start = forward_kinematics(model, state.positions)
    goal = Pose6D(start.position + np.array([0.05, 0.0, 0.0]),
                  start.quaternion)
    ctrl.step(state, goal, None, now=0.0)
    ctrl.step(state, goal, None, now=0.01)

    out = ctrl.step(state, None, None, now=0.5)
    assert out.mode is ControlMode.TRACKING
    assert out.goal_stale
    assert np.allclose(out.equilibrium.position, goal.position, atol=1e-12)


def test_goal_silence_falls_back_to_holding():
    ctrl, model = fresh_controller(fade_duration=1e-6)
    state = rest_state(model)
    start = forward_kinematics(model, state.positions)
    goal = Pose6D(start.position + np.array([0.05, 0.0, 0.0]),
                  start.quaternion)
    ctrl.step(state, goal, None, now=0.0)
    ctrl.step(state, goal, None, now=0.01)

    out = ctrl.step(state, None, None, now=1.5)
    assert out.mode is ControlMode.HOLDING
    assert not out.goal_stale
    # parked on the last commanded equilibrium, no jump to measured pose
    assert np.allclose(out.equilibrium.position, goal.position, atol=1e-12)

    # a fresh stream fades back in rather than snapping
    out = ctrl.step(state, goal, None, now=2.0)
    assert out.mode is ControlMode.INITIALIZING


def test_first_tick_without_goal_holds_current_pose():
    ctrl, model = fresh_controller()
    state = rest_state(model)
    out = ctrl.step(state, None, None, now=0.0)
    assert out.mode is ControlMode.HOLDING
    here = forward_kinematics(model, state.positions)
    assert np.allclose(out.equilibrium.position, here.position, atol=1e-12)
    assert np.allclose(out.tau_task, 0.0, atol=1e-9)


# ---------------- validation ----------------


def test_gain_vectors_validated():
    with pytest.raises(ValueError):
        ImpedanceGains(stiffness=np.array([400.0, 400.0]))
    with pytest.raises(ValueError):
        ImpedanceGains(damping=-np.ones(6))


# ---------------- closed loop ----------------


def test_closed_loop_reaches_static_goal_within_two_mm():
    """Forward-simulate the arm under the controller for four seconds.

    Plant: per-joint inertia and viscous drag, semi-implicit Euler at
    1 kHz, gravity compensated.  The hand must settle within 2 mm of a
    goal a couple of decimeters away.
    """
    ctrl, model = fresh_controller(fade_duration=0.5)
    q = model.rest_pose.copy()
    v = np.zeros(7)
    goal_q = model.clamp_positions(model.rest_pose
                                   + np.array([0.3, -0.2, 0.1, 0.25,
                                               -0.15, 0.2, 0.1]))
    goal = forward_kinematics(model, goal_q)
    dt = 1e-3
    for k in range(4000):
        out = ctrl.step(JointState(q, v), goal, None, now=dt * k)
        accel = (out.torque - model.viscous_damping * v) / model.effective_inertia
        v = v + dt * accel
        q = q + dt * v

    final = forward_kinematics(model, q)
    err = np.linalg.norm(final.position - goal.position)
    assert err < 2e-3
    assert ctrl.mode is ControlMode.TRACKING
