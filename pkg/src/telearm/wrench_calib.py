"""Wrist force/torque sensor calibration and load compensation.

A sensor reading with nothing touching the hand is the sensor's static
bias plus the gravity load of whatever is bolted on beyond it (hand,
adapter, glove).  With the arm posed so gravity points along different
sensor-frame directions, the model

    force  = force_bias  + m * g
    torque = torque_bias + c x (m * g)

is linear in the ten unknowns (force_bias, torque_bias, m, m*c), where
g is the gravity vector expressed in the sensor frame.  One least
squares solve recovers them all; the center of mass c follows by
dividing out the mass.  Compensation then subtracts bias and the
pose-dependent gravity load from raw readings, leaving the external
interaction wrench.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from .arm_model import skew
from .configio import ConfigError, parse_kv_file

GRAVITY = 9.80665  # m/s^2

# Below this recovered mass the center of mass is numerically undefined
# and is reported as zero.
MASS_EPSILON = 1e-6

# Stacked-system condition number above which the sample set does not
# constrain the unknowns (e.g. all samples share one gravity direction).
CONDITION_LIMIT = 1e6

SAMPLE_CSV_HEADER = ["gx", "gy", "gz", "fx", "fy", "fz", "tx", "ty", "tz"]


def cross3(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Cross product of two 3-vectors; np.cross is slow at this size."""
    return np.array([a[1] * b[2] - a[2] * b[1],
                     a[2] * b[0] - a[0] * b[2],
                     a[0] * b[1] - a[1] * b[0]])


class DegenerateSampleSet(Exception):
    """Sample set cannot determine bias, mass and center of mass."""


class MalformedSampleFile(Exception):
    """Sample CSV is structurally broken (missing columns, bad numbers)."""


@dataclass
class Wrench:
    """Force and torque, stacked [force; torque] when vectorized."""

    force: np.ndarray
    torque: np.ndarray

    def __post_init__(self):
        self.force = np.asarray(self.force, dtype=float).reshape(3).copy()
        self.torque = np.asarray(self.torque, dtype=float).reshape(3).copy()

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.force, self.torque])

    @staticmethod
    def from_vector(v) -> "Wrench":
        v = np.asarray(v, dtype=float).reshape(6)
        return Wrench(v[:3], v[3:])

    @staticmethod
    def zero() -> "Wrench":
        return Wrench(np.zeros(3), np.zeros(3))

    def norm_force(self) -> float:
        return float(np.linalg.norm(self.force))

    def norm_torque(self) -> float:
        return float(np.linalg.norm(self.torque))


@dataclass
class CalibrationSample:
    """One static reading: gravity direction in the sensor frame (unit
    vector) and the raw force/torque measured there."""

    gravity_in_sensor: np.ndarray
    force: np.ndarray
    torque: np.ndarray

    def __post_init__(self):
        self.gravity_in_sensor = np.asarray(self.gravity_in_sensor, dtype=float).reshape(3)
        n = np.linalg.norm(self.gravity_in_sensor)
        if not math.isfinite(n) or abs(n - 1.0) > 1e-6:
            raise ValueError(f"gravity direction must be a unit vector, norm {n:.3e}")
        self.force = np.asarray(self.force, dtype=float).reshape(3)
        self.torque = np.asarray(self.torque, dtype=float).reshape(3)


@dataclass
class CalibrationProfile:
    """Recovered sensor bias plus attached mass and its center of mass."""

    force_bias: np.ndarray
    torque_bias: np.ndarray
    mass: float
    com: np.ndarray

    def __post_init__(self):
        self.force_bias = np.asarray(self.force_bias, dtype=float).reshape(3)
        self.torque_bias = np.asarray(self.torque_bias, dtype=float).reshape(3)
        self.com = np.asarray(self.com, dtype=float).reshape(3)
        self.mass = float(self.mass)

    def gravity_load(self, gravity_in_sensor: np.ndarray) -> Wrench:
        """Wrench the attached mass produces for a gravity direction."""
        f = self.mass * GRAVITY * np.asarray(gravity_in_sensor, dtype=float)
        return Wrench(f, cross3(self.com, f))

    def predicted_reading(self, gravity_in_sensor: np.ndarray) -> Wrench:
        load = self.gravity_load(gravity_in_sensor)
        return Wrench(self.force_bias + load.force, self.torque_bias + load.torque)


# ====================== calibration solve ======================

def calibrate(samples: Sequence[CalibrationSample]) -> CalibrationProfile:
    """Least-squares fit of bias, mass and center of mass.

    Requires at least six samples whose gravity directions span 3D.
    Raises DegenerateSampleSet when the stacked system is rank
    deficient or so ill-conditioned the estimates would be noise.
    """
    if len(samples) < 6:
        raise DegenerateSampleSet(
            f"need at least 6 samples, got {len(samples)}")

    rows = []
    rhs = []
    for s in samples:
        g = GRAVITY * s.gravity_in_sensor
        force_block = np.zeros((3, 10))
        force_block[:, 0:3] = np.eye(3)
        force_block[:, 6] = g
        rows.append(force_block)
        rhs.append(s.force)
        torque_block = np.zeros((3, 10))
        torque_block[:, 3:6] = np.eye(3)
        torque_block[:, 7:10] = -skew(g)
        rows.append(torque_block)
        rhs.append(s.torque)
    A = np.vstack(rows)
    b = np.concatenate(rhs)

    singular = np.linalg.svd(A, compute_uv=False)
    if singular[-1] <= 0.0 or singular[0] / singular[-1] > CONDITION_LIMIT:
        raise DegenerateSampleSet(
            "gravity directions do not span 3D; pose the arm so the "
            "sensor sees at least three independent gravity directions")

    x, *_ = np.linalg.lstsq(A, b, rcond=None)
    mass = float(x[6])
    mc = x[7:10]
    com = mc / mass if abs(mass) >= MASS_EPSILON else np.zeros(3)
    return CalibrationProfile(force_bias=x[0:3], torque_bias=x[3:6],
                              mass=mass, com=com)


def residual_rms(profile: CalibrationProfile,
                 samples: Sequence[CalibrationSample]) -> Tuple[float, float]:
    """RMS of force and torque residuals of the fit, for reporting."""
    df, dt = [], []
    for s in samples:
        pred = profile.predicted_reading(s.gravity_in_sensor)
        df.append(s.force - pred.force)
        dt.append(s.torque - pred.torque)
    df = np.concatenate(df)
    dt = np.concatenate(dt)
    return (float(np.sqrt(np.mean(df * df))), float(np.sqrt(np.mean(dt * dt))))


# ====================== compensation ======================

def gravity_direction_in_sensor(R_world_sensor: np.ndarray) -> np.ndarray:
    """World gravity is -z; re-express it in the sensor frame."""
    return R_world_sensor.T @ np.array([0.0, 0.0, -1.0])


def compensate(profile: CalibrationProfile, raw: Wrench,
               R_world_sensor: np.ndarray) -> Wrench:
    """Remove bias and attached-mass load; output stays in sensor frame."""
    load = profile.gravity_load(gravity_direction_in_sensor(R_world_sensor))
    return Wrench(raw.force - profile.force_bias - load.force,
                  raw.torque - profile.torque_bias - load.torque)


def wrench_in_frame(T_new_from_old: np.ndarray, w: Wrench) -> Wrench:
    """Re-express a wrench acting at the old frame's origin in a new
    frame; the moment picks up the lever arm of the frame shift."""
    R = T_new_from_old[:3, :3]
    p = T_new_from_old[:3, 3]
    f = R @ w.force
    return Wrench(f, R @ w.torque + cross3(p, f))


# ====================== file formats ======================

def load_samples_csv(path: str) -> List[CalibrationSample]:
    """Sample CSV with header gx,gy,gz,fx,fy,fz,tx,ty,tz."""
    try:
        fh = open(path, "r", encoding="utf-8", newline="")
    except OSError as exc:
        raise MalformedSampleFile(f"cannot read '{path}': {exc}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MalformedSampleFile(f"{path}:1: file is empty") from None
        if [h.strip() for h in header] != SAMPLE_CSV_HEADER:
            raise MalformedSampleFile(
                f"{path}:1: header must be {','.join(SAMPLE_CSV_HEADER)}")
        samples = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 9:
                raise MalformedSampleFile(
                    f"{path}:{lineno}: expected 9 columns, got {len(row)}")
            try:
                vals = np.array([float(c) for c in row])
            except ValueError:
                raise MalformedSampleFile(
                    f"{path}:{lineno}: non-numeric value in row") from None
            if not np.all(np.isfinite(vals)):
                raise MalformedSampleFile(f"{path}:{lineno}: non-finite value")
            try:
                samples.append(CalibrationSample(vals[0:3], vals[3:6], vals[6:9]))
            except ValueError as exc:
                raise MalformedSampleFile(f"{path}:{lineno}: {exc}") from None
    return samples


def save_samples_csv(path: str, samples: Sequence[CalibrationSample]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SAMPLE_CSV_HEADER)
        for s in samples:
            writer.writerow([repr(float(v)) for v in np.concatenate(
                [s.gravity_in_sensor, s.force, s.torque])])


def save_profile(path: str, profile: CalibrationProfile,
                 rms: Tuple[float, float] = None) -> None:
    lines = ["# Force/torque sensor calibration profile"]
    if rms is not None:
        lines.append(f"# fit residual RMS: force {rms[0]:.6g} N, torque {rms[1]:.6g} N*m")
    lines.append("force_bias = " + " ".join(repr(float(v)) for v in profile.force_bias))
    lines.append("torque_bias = " + " ".join(repr(float(v)) for v in profile.torque_bias))
    lines.append("mass = " + repr(float(profile.mass)))
    lines.append("com = " + " ".join(repr(float(v)) for v in profile.com))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_profile(path: str) -> CalibrationProfile:
    cfg = parse_kv_file(path)
    profile = CalibrationProfile(
        force_bias=cfg.get_vector("force_bias", 3),
        torque_bias=cfg.get_vector("torque_bias", 3),
        mass=cfg.get_scalar("mass"),
        com=cfg.get_vector("com", 3),
    )
    cfg.raise_on_unused()
    return profile
