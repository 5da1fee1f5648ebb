"""Tests for the simulated arm, sensor, operator hand and grasp hand."""

import math

import numpy as np
import pytest

from telearm.arm_model import JointState, Pose6D, forward_kinematics
from telearm.sim_world import (
    BLOWUP_VELOCITY,
    NumericalBlowup,
    OperatorIntent,
    PiecewiseTrajectory,
    SimArm,
    SimHand,
    SimSensor,
    Waypoint,
)
from telearm.wrench_calib import (
    CalibrationProfile,
    Wrench,
    compensate,
)
from util import load_avatar_setup, single_joint_model

TRUTH = CalibrationProfile(
    force_bias=np.array([1.2, -0.8, 2.5]),
    torque_bias=np.array([0.05, -0.03, 0.08]),
    mass=0.73,
    com=np.array([0.002, -0.003, 0.045]),
)


# ---------------- arm dynamics ----------------


def test_constant_torque_matches_first_order_solution():
    """Unit inertia and drag under unit torque: v = 1 - exp(-t)."""
    model = single_joint_model()
    arm = SimArm(model, q0=np.zeros(1))
    dt = 1e-3
    for k in range(1000):
        arm.step(np.array([1.0]), dt)
    t = 1.0
    v_true = 1.0 - math.exp(-t)
    q_true = t - 1.0 + math.exp(-t)
    assert arm.v[0] == pytest.approx(v_true, rel=0.01)
    assert arm.q[0] == pytest.approx(q_true, rel=0.01)
    assert arm.position_clamp_events == 0
    assert arm.velocity_clamp_events == 0


def test_unforced_motion_dissipates_kinetic_energy():
    model = load_avatar_setup().model
    rng = np.random.default_rng(3)
    v0 = 0.8 * model.velocity_limits * rng.uniform(-1.0, 1.0, 7)
    arm = SimArm(model, q0=model.mid_pose(), v0=v0)
    energy = 0.5 * np.sum(model.effective_inertia * arm.v ** 2)
    for _ in range(500):
        arm.step(np.zeros(7), 1e-3)
        now = 0.5 * np.sum(model.effective_inertia * arm.v ** 2)
        assert now <= energy + 1e-15
        energy = now


def test_position_limit_is_a_hard_stop():
    model = single_joint_model()
    arm = SimArm(model, q0=np.array([2.9]))
    for _ in range(2000):
        arm.step(np.array([10.0]), 1e-3)
    assert arm.q[0] == pytest.approx(model.position_upper[0], abs=1e-12)
    assert arm.v[0] == 0.0
    assert arm.position_clamp_events > 0


def test_velocity_governor_clamps_and_counts():
    model = single_joint_model()
    arm = SimArm(model, q0=np.array([-2.0]))
    for _ in range(300):
        arm.step(np.array([40.0]), 1e-3)
    assert abs(arm.v[0]) <= model.velocity_limits[0] + 1e-15
    assert arm.velocity_clamp_events > 0


def test_blowup_detection():
    model = single_joint_model()
    arm = SimArm(model)
    with pytest.raises(NumericalBlowup):
        arm.step(np.array([1e7]), 1e-3)
    arm2 = SimArm(model)
    with pytest.raises(NumericalBlowup):
        arm2.step(np.array([np.nan]), 1e-3)
    assert BLOWUP_VELOCITY > np.max(model.velocity_limits)


def test_state_returns_copies():
    model = single_joint_model()
    arm = SimArm(model)
    st = arm.state(timestamp=1.5)
    st.positions[0] = 99.0
    assert arm.q[0] != 99.0
    assert st.timestamp == 1.5


# ---------------- sensor ----------------


def test_static_sensor_reads_bias_plus_gravity_exactly():
    sensor = SimSensor(TRUTH, seed=5)
    R = np.eye(3)
    expected = TRUTH.predicted_reading(np.array([0.0, 0.0, -1.0])).as_vector()
    for _ in range(10):
        got = sensor.sample(R).as_vector()
    assert np.allclose(got, expected, atol=1e-12)


def test_filter_step_response_matches_formula():
    """After k native samples the filtered step sits at 1 - exp(-2 pi f k / fs)."""
    sensor = SimSensor(TRUTH, seed=0)
    R = np.eye(3)
    sensor.sample(R)  # initialize on the quiescent reading
    baseline = sensor.filtered.copy()
    step = Wrench(np.array([10.0, 0.0, 0.0]), np.zeros(3))
    k = 5
    for _ in range(k):
        out = sensor.sample(R, external=step)
    expected = 10.0 * (1.0 - math.exp(-2.0 * math.pi * 15.0 * k / 500.0))
    assert out.force[0] - baseline[0] == pytest.approx(expected, abs=1e-9)


def test_sensor_noise_is_seed_deterministic():
    def run(seed):
        sensor = SimSensor(TRUTH, noise_force_std=0.05,
                           noise_torque_std=0.005, seed=seed)
        R = np.eye(3)
        return np.array([sensor.sample(R).as_vector() for _ in range(100)])

    a, b, c = run(42), run(42), run(7)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_compensation_recovers_external_wrench():
    sensor = SimSensor(TRUTH, seed=1)
    rng = np.random.default_rng(8)
    # arbitrary fixed sensor attitude
    from telearm.arm_model import axis_angle_matrix
    axis = rng.standard_normal(3)
    axis /= np.linalg.norm(axis)
    R = axis_angle_matrix(axis, 0.9)
    external = Wrench(np.array([4.0, -2.0, 1.5]), np.array([0.2, 0.1, -0.3]))
    for _ in range(2000):   # let the 15 Hz filter fully settle
        reading = sensor.sample(R, external=external)
    recovered = compensate(TRUTH, reading, R)
    assert np.allclose(recovered.as_vector(), external.as_vector(), atol=1e-9)


# ---------------- operator intent ----------------


def make_pose(x=0.0, y=0.0, z=0.0) -> Pose6D:
    return Pose6D(np.array([x, y, z]), np.array([1.0, 0.0, 0.0, 0.0]))


def test_trajectory_interpolates_and_clamps():
    traj = PiecewiseTrajectory([
        Waypoint(0.0, make_pose(0.0)),
        Waypoint(2.0, make_pose(0.4)),
    ])
    assert traj.pose_at(-1.0).position[0] == 0.0
    assert traj.pose_at(1.0).position[0] == pytest.approx(0.2, abs=1e-12)
    assert traj.pose_at(99.0).position[0] == pytest.approx(0.4)
    with pytest.raises(ValueError):
        PiecewiseTrajectory([Waypoint(1.0, make_pose()), Waypoint(1.0, make_pose())])
    with pytest.raises(ValueError):
        PiecewiseTrajectory([])


def test_intent_zero_at_target_and_spring_below_cap():
    traj = PiecewiseTrajectory([Waypoint(0.0, make_pose(0.3))])
    intent = OperatorIntent(traj)
    assert intent.push(make_pose(0.3), 0.0).norm_force() == 0.0
    push = intent.push(make_pose(0.29), 0.0)
    # 1 cm error times 300 N/m, pointing toward +x
    assert push.force[0] == pytest.approx(3.0, abs=1e-12)
    assert push.force[1] == push.force[2] == 0.0


def test_intent_saturates_at_human_scale():
    traj = PiecewiseTrajectory([Waypoint(0.0, make_pose(1.0))])
    intent = OperatorIntent(traj)
    push = intent.push(make_pose(0.0), 0.0)
    assert push.norm_force() == pytest.approx(30.0, abs=1e-12)
    assert push.force[0] > 0.0

    # pure orientation error saturates the torque channel
    from telearm.arm_model import axis_angle_matrix, matrix_to_quat
    R = axis_angle_matrix(np.array([0.0, 0.0, 1.0]), 1.5)
    target = Pose6D(np.zeros(3), matrix_to_quat(R))
    traj2 = PiecewiseTrajectory([Waypoint(0.0, target)])
    intent2 = OperatorIntent(traj2)
    push2 = intent2.push(make_pose(), 0.0)
    assert push2.norm_torque() == pytest.approx(5.0, abs=1e-12)


# ---------------- grasping hand ----------------


def test_hand_tracks_commands_at_limited_rate():
    hand = SimHand(3, closure_rate=2.0)
    cmd = np.array([1.0, 0.5, 0.0])
    dt = 1e-3
    prev = hand.closure.copy()
    for _ in range(600):
        hand.step(cmd, dt)
        assert np.all(np.abs(hand.closure - prev) <= 2.0 * dt + 1e-15)
        prev = hand.closure.copy()
    assert np.allclose(hand.closure, cmd, atol=1e-9)
    assert np.allclose(hand.step(cmd, dt), 0.0, atol=1e-9)


def test_object_stalls_fingers_and_raises_current():
    hand = SimHand(2, closure_rate=2.0, stall_gain=1.2)
    hand.set_object(np.array([0.6, 1.0]))
    cmd = np.array([1.0, 1.0])
    for _ in range(1000):
        currents = hand.step(cmd, 1e-3)
    assert hand.closure[0] == pytest.approx(0.6, abs=1e-12)
    assert hand.closure[1] == pytest.approx(1.0, abs=1e-9)
    assert currents[0] == pytest.approx(1.2 * 0.4, abs=1e-9)
    assert currents[1] == pytest.approx(0.0, abs=1e-9)

    # releasing the object lets the stalled finger finish closing
    hand.set_object(None)
    for _ in range(1000):
        currents = hand.step(cmd, 1e-3)
    assert hand.closure[0] == pytest.approx(1.0, abs=1e-9)
    assert currents[0] == pytest.approx(0.0, abs=1e-9)


def test_opening_is_never_blocked():
    hand = SimHand(1, closure_rate=2.0)
    hand.closure[0] = 0.8
    hand.set_object(np.array([0.8]))
    for _ in range(1000):
        hand.step(np.array([0.1]), 1e-3)
    assert hand.closure[0] == pytest.approx(0.1, abs=1e-9)
