"""Calibration tests against forward-simulated sensor readings.

The oracle direction is reversed from the solver: given a known truth
profile, readings are synthesized directly from the physical model and
the solver must recover the truth.
"""

from __future__ import annotations

import math

import numpy as np
import pytest

from telearm.arm_model import rot_x, rot_y, transform
from telearm.wrench_calib import (
    GRAVITY,
    CalibrationProfile,
    CalibrationSample,
    DegenerateSampleSet,
    MalformedSampleFile,
    Wrench,
    calibrate,
    compensate,
    gravity_direction_in_sensor,
    load_profile,
    load_samples_csv,
    residual_rms,
    save_profile,
    save_samples_csv,
    wrench_in_frame,
)

TRUTH = CalibrationProfile(
    force_bias=np.array([1.3, -2.1, 0.7]),
    torque_bias=np.array([0.11, 0.04, -0.09]),
    mass=0.73,
    com=np.array([0.004, -0.006, 0.051]),
)


def synth_samples(profile: CalibrationProfile, n: int, rng: np.random.Generator,
                  noise_force: float = 0.0, noise_torque: float = 0.0):
    """Forward-simulate static readings for n random arm orientations."""
    samples = []
    for _ in range(n):
        v = rng.normal(size=3)
        g_dir = v / np.linalg.norm(v)
        reading = profile.predicted_reading(g_dir)
        f = reading.force + rng.normal(scale=noise_force, size=3) if noise_force else reading.force
        t = reading.torque + rng.normal(scale=noise_torque, size=3) if noise_torque else reading.torque
        samples.append(CalibrationSample(g_dir, f, t))
    return samples


def test_noise_free_recovery_exact():
    rng = np.random.default_rng(101)
    samples = synth_samples(TRUTH, 20, rng)
    est = calibrate(samples)
    np.testing.assert_allclose(est.force_bias, TRUTH.force_bias, atol=1e-9)
    np.testing.assert_allclose(est.torque_bias, TRUTH.torque_bias, atol=1e-9)
    assert abs(est.mass - TRUTH.mass) < 1e-9
    np.testing.assert_allclose(est.com, TRUTH.com, atol=1e-9)
    rms = residual_rms(est, samples)
    assert rms[0] < 1e-9 and rms[1] < 1e-9


def test_noisy_recovery_within_mass_tolerance():
    for trial in range(50):
        rng = np.random.default_rng(2000 + trial)
        samples = synth_samples(TRUTH, 20, rng, noise_force=0.05, noise_torque=0.005)
        est = calibrate(samples)
        assert abs(est.mass - TRUTH.mass) < 0.02


def test_minimum_sample_count_enforced():
    rng = np.random.default_rng(7)
    samples = synth_samples(TRUTH, 5, rng)
    with pytest.raises(DegenerateSampleSet):
        calibrate(samples)


def test_single_gravity_direction_is_degenerate():
    g = np.array([0.0, 0.0, -1.0])
    reading = TRUTH.predicted_reading(g)
    samples = [CalibrationSample(g, reading.force, reading.torque) for _ in range(10)]
    with pytest.raises(DegenerateSampleSet):
        calibrate(samples)


def test_two_gravity_directions_are_degenerate():
    samples = []
    for g in (np.array([0.0, 0.0, -1.0]), np.array([1.0, 0.0, 0.0])):
        reading = TRUTH.predicted_reading(g)
        for _ in range(5):
            samples.append(CalibrationSample(g, reading.force, reading.torque))
    with pytest.raises(DegenerateSampleSet):
        calibrate(samples)


def test_massless_attachment_reports_zero_com():
    truth = CalibrationProfile(force_bias=np.array([0.5, 0.1, -0.2]),
                               torque_bias=np.array([0.01, -0.02, 0.03]),
                               mass=0.0, com=np.zeros(3))
    rng = np.random.default_rng(13)
    est = calibrate(synth_samples(truth, 12, rng))
    assert abs(est.mass) < 1e-9
    np.testing.assert_allclose(est.com, np.zeros(3), atol=1e-12)


def test_compensate_recovers_external_wrench():
    rng = np.random.default_rng(17)
    for _ in range(20):
        R = rot_x(rng.uniform(-3, 3)) @ rot_y(rng.uniform(-3, 3))
        external = Wrench(rng.normal(scale=10, size=3), rng.normal(scale=1, size=3))
        load = TRUTH.gravity_load(gravity_direction_in_sensor(R))
        raw = Wrench(TRUTH.force_bias + load.force + external.force,
                     TRUTH.torque_bias + load.torque + external.torque)
        out = compensate(TRUTH, raw, R)
        np.testing.assert_allclose(out.force, external.force, atol=1e-12)
        np.testing.assert_allclose(out.torque, external.torque, atol=1e-12)


def test_compensate_is_linear_in_raw():
    R = rot_x(0.4)
    a = Wrench(np.array([1.0, 2.0, 3.0]), np.array([0.1, 0.2, 0.3]))
    b = Wrench(np.array([-2.0, 0.5, 1.0]), np.array([0.0, -0.1, 0.05]))
    ca = compensate(TRUTH, a, R)
    cb = compensate(TRUTH, b, R)
    np.testing.assert_allclose(ca.as_vector() - cb.as_vector(),
                               a.as_vector() - b.as_vector(), atol=1e-12)


def test_wrench_frame_shift_adds_lever_arm():
    # Pure +x force of 2 N seen from a frame 0.1 m further along +z:
    # the moment picks up p x F = (0, 0.2, 0) ... with p = (0, 0, 0.1),
    # p x (2,0,0) = (0*0 - 0.1*0, 0.1*2 - 0*0, 0) = (0, 0.2, 0).
    T = transform([0.0, 0.0, 0.1], np.eye(3))
    w = Wrench(np.array([2.0, 0.0, 0.0]), np.zeros(3))
    out = wrench_in_frame(T, w)
    np.testing.assert_allclose(out.force, [2.0, 0.0, 0.0], atol=1e-15)
    np.testing.assert_allclose(out.torque, [0.0, 0.2, 0.0], atol=1e-15)


def test_wrench_frame_rotation_only():
    T = transform([0.0, 0.0, 0.0], rot_x(math.pi / 2.0))
    w = Wrench(np.array([0.0, 1.0, 0.0]), np.array([0.0, 0.5, 0.0]))
    out = wrench_in_frame(T, w)
    np.testing.assert_allclose(out.force, [0.0, 0.0, 1.0], atol=1e-12)
    np.testing.assert_allclose(out.torque, [0.0, 0.0, 0.5], atol=1e-12)


def test_sample_csv_round_trip(tmp_path):
    rng = np.random.default_rng(23)
    samples = synth_samples(TRUTH, 8, rng, noise_force=0.01)
    path = tmp_path / "samples.csv"
    save_samples_csv(str(path), samples)
    back = load_samples_csv(str(path))
    assert len(back) == len(samples)
    for a, b in zip(samples, back):
        np.testing.assert_allclose(a.gravity_in_sensor, b.gravity_in_sensor, atol=0.0)
        np.testing.assert_allclose(a.force, b.force, atol=0.0)
        np.testing.assert_allclose(a.torque, b.torque, atol=0.0)


def test_sample_csv_errors_name_lines(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("gx,gy,gz,fx,fy,fz,tx,ty,tz\n0,0,-1,1,2\n")
    with pytest.raises(MalformedSampleFile) as err:
        load_samples_csv(str(path))
    assert "bad.csv:2" in str(err.value)
    path.write_text("wrong,header\n")
    with pytest.raises(MalformedSampleFile) as err:
        load_samples_csv(str(path))
    assert "bad.csv:1" in str(err.value)


def test_profile_file_round_trip(tmp_path):
    path = tmp_path / "profile.cfg"
    save_profile(str(path), TRUTH, rms=(0.01, 0.001))
    back = load_profile(str(path))
    np.testing.assert_allclose(back.force_bias, TRUTH.force_bias, atol=0.0)
    np.testing.assert_allclose(back.torque_bias, TRUTH.torque_bias, atol=0.0)
    assert back.mass == TRUTH.mass
    np.testing.assert_allclose(back.com, TRUTH.com, atol=0.0)


def test_gravity_magnitude_is_standard():
    assert abs(GRAVITY - 9.80665) < 1e-12
    g = TRUTH.gravity_load(np.array([0.0, 0.0, -1.0]))
    assert abs(g.force[2] + TRUTH.mass * GRAVITY) < 1e-12
