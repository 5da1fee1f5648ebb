"""Operator torque-law tests: closed forms, fade profile, term mixing."""

from __future__ import annotations

import math

import numpy as np

from telearm.arm_model import JointState, body_jacobian, forward_kinematics
from telearm.operator_controller import (
    OperatorController,
    OperatorGains,
    alpha_scale,
    assist_torque,
    limit_avoidance_torque,
    limit_distances,
)
from telearm.wrench_calib import Wrench

from util import load_operator_setup, random_in_limit_q


def make_state_at_distance(model, joint: int, d_p: float, from_upper=False):
    """Joint state with one joint at distance d_p from a position limit
    and everything else mid-range and at rest."""
    q = model.mid_pose()
    if from_upper:
        q[joint] = model.position_upper[joint] - d_p
    else:
        q[joint] = model.position_lower[joint] + d_p
    return JointState(q, np.zeros(model.joint_count))


# ====================== hyperbolic guard ======================

def test_position_guard_matches_closed_form_at_probe_distances():
    setup = load_operator_setup()
    model = setup.model
    gains = OperatorGains.for_model(model)
    t_p = gains.t_p
    for joint in range(model.joint_count):
        for frac in (1.0, 0.75, 0.5, 0.25):
            d = frac * t_p
            state = make_state_at_distance(model, joint, d)
            tau = limit_avoidance_torque(model, state, gains)
            expected = gains.beta_p * (1.0 / d - 1.0 / t_p) if d < t_p else 0.0
            assert abs(tau[joint] - expected) <= 1e-12
            others = np.delete(tau, joint)
            np.testing.assert_allclose(others, np.zeros(model.joint_count - 1),
                                       atol=1e-12)


def test_velocity_guard_matches_closed_form():
    setup = load_operator_setup()
    model = setup.model
    gains = OperatorGains.for_model(model)
    t_v = gains.t_v
    q = model.mid_pose()
    for frac in (1.0, 0.75, 0.5, 0.25):
        d = frac * t_v
        v = np.zeros(7)
        v[2] = model.velocity_limits[2] - d  # heading for the + limit
        tau = limit_avoidance_torque(model, JointState(q, v), gains)
        expected = -(gains.beta_v * (1.0 / d - 1.0 / t_v)) if d < t_v else 0.0
        assert abs(tau[2] - expected) <= 1e-12


def test_guard_silent_in_mid_range():
    setup = load_operator_setup()
    model = setup.model
    gains = OperatorGains.for_model(model)
    state = JointState(model.mid_pose(), np.zeros(7))
    np.testing.assert_allclose(limit_avoidance_torque(model, state, gains),
                               np.zeros(7), atol=0.0)


def test_guard_sign_pushes_away_from_each_limit():
    setup = load_operator_setup()
    model = setup.model
    gains = OperatorGains.for_model(model)
    near_lower = make_state_at_distance(model, 0, 0.5 * gains.t_p, from_upper=False)
    assert limit_avoidance_torque(model, near_lower, gains)[0] > 0.0
    near_upper = make_state_at_distance(model, 0, 0.5 * gains.t_p, from_upper=True)
    assert limit_avoidance_torque(model, near_upper, gains)[0] < 0.0


def test_velocity_guard_opposes_motion_and_rest_is_silent():
    setup = load_operator_setup()
    model = setup.model
    gains = OperatorGains.for_model(model)
    q = model.mid_pose()
    fast_neg = np.zeros(7)
    fast_neg[4] = -(model.velocity_limits[4] - 0.25 * gains.t_v)
    tau = limit_avoidance_torque(model, JointState(q, fast_neg), gains)
    assert tau[4] > 0.0
    tau0 = limit_avoidance_torque(model, JointState(q, np.zeros(7)), gains)
    np.testing.assert_allclose(tau0, np.zeros(7), atol=0.0)


def test_guard_component_cap():
    setup = load_operator_setup()
    model = setup.model
    gains = OperatorGains.for_model(model)
    state = make_state_at_distance(model, 5, 1e-9)
    tau = limit_avoidance_torque(model, state, gains)
    cap = gains.avoidance_cap_fraction * model.torque_limits[5]
    assert abs(tau[5]) <= cap + 1e-12
    assert abs(tau[5]) == cap


# ====================== assist fade ======================

def test_alpha_profile_exact_knots():
    setup = load_operator_setup()
    model = setup.model
    gains = OperatorGains.for_model(model)
    cases = [(1.0, 1.0), (0.875, 0.75), (0.75, 0.5), (0.625, 0.25),
             (0.5, 0.0), (0.25, 0.0), (2.0, 1.0)]
    for frac, expected in cases:
        state = make_state_at_distance(model, 3, frac * gains.t_p)
        a = alpha_scale(model, state, gains)
        assert abs(a[3] - expected) <= 1e-12


def test_alpha_uses_nearer_of_position_and_velocity():
    setup = load_operator_setup()
    model = setup.model
    gains = OperatorGains.for_model(model)
    # Position comfortable, velocity at 0.6 * t_v from its limit.
    q = model.mid_pose()
    v = np.zeros(7)
    v[1] = model.velocity_limits[1] - 0.6 * gains.t_v
    a = alpha_scale(model, JointState(q, v), gains)
    assert abs(a[1] - 0.2) <= 1e-12


def test_alpha_profile_formula_everywhere():
    setup = load_operator_setup()
    model = setup.model
    gains = OperatorGains.for_model(model)
    rng = np.random.default_rng(71)
    for _ in range(200):
        q = random_in_limit_q(model, rng, margin=0.0)
        v = rng.uniform(-model.velocity_limits, model.velocity_limits)
        state = JointState(q, v)
        a = alpha_scale(model, state, gains)
        d_p, d_v = limit_distances(model, state)
        expected = np.clip(2.0 * np.minimum(d_p / gains.t_p, d_v / gains.t_v) - 1.0,
                           0.0, 1.0)
        np.testing.assert_allclose(a, expected, atol=1e-12)


# ====================== assist mapping ======================

def test_assist_torque_matches_naive_transpose_product():
    setup = load_operator_setup()
    model = setup.model
    rng = np.random.default_rng(73)
    for _ in range(10):
        q = random_in_limit_q(model, rng)
        J = body_jacobian(model, q)
        w = Wrench(rng.normal(size=3), rng.normal(size=3))
        tau = assist_torque(J, w)
        vec = w.as_vector()
        naive = np.array([sum(J[r, c] * vec[r] for r in range(6)) for c in range(7)])
        np.testing.assert_allclose(tau, naive, atol=1e-12)


def test_assist_direction_single_joint_lever():
    # One z joint, hand 0.2 m out along x: +y hand force means +z torque.
    from util import single_joint_model
    model = single_joint_model(hand_xyz=(0.2, 0.0, 0.0))
    J = body_jacobian(model, np.array([0.0]))
    tau = assist_torque(J, Wrench(np.array([0.0, 5.0, 0.0]), np.zeros(3)))
    np.testing.assert_allclose(tau, [1.0], atol=1e-12)


# ====================== full law ======================

def test_equilibrium_zero_everything_gives_zero_torque():
    setup = load_operator_setup()
    model = setup.model
    controller = OperatorController(model)
    state = JointState(model.rest_pose, np.zeros(7))
    out = controller.step(state, Wrench.zero(), Wrench.zero())
    np.testing.assert_allclose(out.torque, np.zeros(7), atol=1e-12)
    assert not out.saturated


def test_haptic_term_not_scaled_by_alpha():
    setup = load_operator_setup()
    model = setup.model
    controller = OperatorController(model)
    # Joint 0 deep inside the fade zone: alpha = 0 there.
    state = make_state_at_distance(model, 0, 0.25 * controller.gains.t_p)
    w = Wrench(np.array([4.0, -2.0, 1.0]), np.array([0.1, 0.0, -0.2]))
    with_feedback = controller.step(state, Wrench.zero(), w)
    without = controller.step(state, Wrench.zero(), Wrench.zero())
    assert with_feedback.alpha[0] == 0.0
    diff = with_feedback.torque - without.torque
    J = body_jacobian(model, state.positions)
    np.testing.assert_allclose(diff, J.T @ w.as_vector(), atol=1e-12)


def test_assist_fades_but_guard_remains_near_limit():
    setup = load_operator_setup()
    model = setup.model
    controller = OperatorController(model)
    gains = controller.gains
    # Push joint 0 toward its lower limit while sitting just above it.
    state = make_state_at_distance(model, 0, 0.25 * gains.t_p)
    J = body_jacobian(model, state.positions)
    # Build a wrench whose assist torque drives joint 0 negative.
    w_vec = -J[:, 0] / max(np.linalg.norm(J[:, 0]), 1e-9) * 20.0
    w = Wrench(w_vec[:3], w_vec[3:])
    out = controller.step(state, w, Wrench.zero())
    assert out.alpha[0] == 0.0
    # Net torque on the violating joint points away from the limit.
    assert out.torque[0] > 0.0


def test_assist_disabled_flag_removes_assist_only():
    setup = load_operator_setup()
    model = setup.model
    gains = OperatorGains.for_model(model)
    gains.assist_enabled = False
    controller = OperatorController(model, gains)
    state = JointState(model.rest_pose, np.zeros(7))
    w = Wrench(np.array([5.0, 0.0, 0.0]), np.zeros(3))
    out = controller.step(state, w, Wrench.zero())
    np.testing.assert_allclose(out.tau_assist, np.zeros(7), atol=0.0)
    np.testing.assert_allclose(out.torque, np.zeros(7), atol=1e-12)


def test_torque_saturation_clamps_and_counts():
    setup = load_operator_setup()
    model = setup.model
    controller = OperatorController(model)
    state = JointState(model.rest_pose, np.zeros(7))
    w = Wrench(np.array([1e5, 0.0, 0.0]), np.zeros(3))
    out = controller.step(state, w, Wrench.zero())
    assert out.saturated
    assert controller.saturation_count == 1
    assert np.all(np.abs(out.torque) <= model.torque_limits + 1e-12)


def test_repulsion_dominates_bounded_assist_close_in():
    setup = load_operator_setup()
    model = setup.model
    gains = OperatorGains.for_model(model)
    f_max = 30.0
    for joint in range(model.joint_count):
        state = make_state_at_distance(model, joint, 0.5 * gains.t_p)
        J = body_jacobian(model, state.positions)
        assist_bound = f_max * np.linalg.norm(J[:3, joint]) + 5.0 * np.linalg.norm(J[3:, joint])
        # Find a distance below which the raw hyperbola beats the bound,
        # then check the full law there (alpha is already 0 at t_p/2).
        d_star = gains.beta_p / (assist_bound + gains.beta_p / gains.t_p)
        d_probe = 0.5 * d_star
        state = make_state_at_distance(model, joint, d_probe)
        tau = limit_avoidance_torque(model, state, gains)
        cap = gains.avoidance_cap_fraction * model.torque_limits[joint]
        assert tau[joint] >= min(assist_bound, cap) - 1e-9


def test_step_is_deterministic_and_state_bounded():
    setup = load_operator_setup()
    model = setup.model
    controller = OperatorController(model)
    state = JointState(model.rest_pose + 0.1, 0.05 * np.ones(7))
    w = Wrench(np.array([3.0, 1.0, -2.0]), np.array([0.2, 0.0, 0.1]))
    first = controller.step(state, w, Wrench.zero())
    for _ in range(200):
        again = controller.step(state, w, Wrench.zero())
    np.testing.assert_allclose(again.torque, first.torque, atol=0.0)
    np.testing.assert_allclose(again.hand_goal.as_vector(),
                               first.hand_goal.as_vector(), atol=0.0)


def test_hand_goal_uses_mounting_transform():
    setup = load_operator_setup()
    model = setup.model
    T = np.eye(4)
    T[:3, 3] = [0.0, 1.0, 0.5]
    controller = OperatorController(model, world_from_base=T)
    state = JointState(model.rest_pose, np.zeros(7))
    base_pose = forward_kinematics(model, model.rest_pose)
    out = controller.step(state, Wrench.zero(), Wrench.zero())
    np.testing.assert_allclose(out.hand_goal.position,
                               base_pose.position + np.array([0.0, 1.0, 0.5]),
                               atol=1e-12)
