"""Kinematic and simplified dynamic model of a 7-DoF torque-controlled arm.

Conventions used throughout the package:

* Poses are position + unit quaternion (scalar first).  Quaternions are
  kept on the w >= 0 hemisphere so serialized poses are canonical.
* Twists and wrenches are stacked [linear; angular], so a Jacobian row
  layout of [v; w] matches tau = J^T [force; torque].
* The "hand frame" is a configured frame at the center of the mounted
  hand's palm.  Both arms of a station use the same hand-frame
  convention, which is what makes wrenches and goals transferable
  between them.
* Gravity on the arm itself is assumed to be compensated upstream by
  the joint-level controller, so it never appears in this model.  The
  dynamic model is a diagonal effective inertia per joint plus viscous
  damping; velocity-product effects reduce to that viscous coupling.

The chain is described per joint by a fixed parent-to-joint transform
(translation + fixed rotation) followed by a revolute rotation about a
configured axis, plus one fixed transform from the last joint to the
hand frame.  This covers the usual DH-style tables while staying a flat
list of vectors in the config file.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .configio import ConfigError, parse_kv_file

# Default numeric guards shared by the pseudoinverse users below.
SINGULAR_VALUE_CUTOFF = 1e-6

# Damped least-squares IK defaults.
IK_BASE_DAMPING = 1e-2
IK_POS_TOL = 1e-4      # m
IK_ROT_TOL = 1e-3      # rad
IK_MAX_ITERS = 100


# ====================== rotation utilities ======================

def rot_x(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rpy_matrix(rpy) -> np.ndarray:
    """Rotation matrix from roll-pitch-yaw (x, then y, then z, fixed axes)."""
    r, p, y = rpy
    return rot_z(y) @ rot_y(p) @ rot_x(r)


def skew(v: np.ndarray) -> np.ndarray:
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


def axis_angle_matrix(axis: np.ndarray, angle: float) -> np.ndarray:
    """Rodrigues formula for a rotation of `angle` about unit `axis`."""
    K = skew(axis)
    return np.eye(3) + math.sin(angle) * K + (1.0 - math.cos(angle)) * (K @ K)


def matrix_to_rotvec(R: np.ndarray) -> np.ndarray:
    """Rotation-vector (axis * angle) logarithm of a rotation matrix."""
    trace = float(np.trace(R))
    cos_angle = max(-1.0, min(1.0, (trace - 1.0) / 2.0))
    angle = math.acos(cos_angle)
    if angle < 1e-12:
        return np.zeros(3)
    if angle > math.pi - 1e-6:
        # Near pi the off-diagonal recovery degenerates; use the
        # diagonal form of R = I + 2 * sin^2(angle/2) * (aa^T - I).
        A = (R + np.eye(3)) / 2.0
        axis = np.sqrt(np.maximum(np.diag(A), 0.0))
        # Fix signs from the largest component.
        k = int(np.argmax(axis))
        if axis[k] > 0.0:
            for i in range(3):
                if i != k and A[k, i] < 0.0:
                    axis[i] = -axis[i]
        axis = axis / np.linalg.norm(axis)
        return axis * angle
    axis = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    return axis * (angle / (2.0 * math.sin(angle)))


def quat_canonical(q: np.ndarray) -> np.ndarray:
    """Normalize a quaternion and flip it onto the w >= 0 hemisphere."""
    q = np.asarray(q, dtype=float)
    n = math.sqrt(float(np.dot(q, q)))
    if n < 1e-12:
        raise ValueError("zero-norm quaternion")
    q = q / n
    for c in q:
        if c > 0.0:
            break
        if c < 0.0:
            q = -q
            break
    return q


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def matrix_to_quat(R: np.ndarray) -> np.ndarray:
    """Shepperd's method; returns the canonical (w >= 0) quaternion."""
    t = float(np.trace(R))
    if t > 0.0:
        s = math.sqrt(t + 1.0) * 2.0
        q = np.array([0.25 * s,
                      (R[2, 1] - R[1, 2]) / s,
                      (R[0, 2] - R[2, 0]) / s,
                      (R[1, 0] - R[0, 1]) / s])
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2.0
        q = np.array([(R[2, 1] - R[1, 2]) / s,
                      0.25 * s,
                      (R[0, 1] + R[1, 0]) / s,
                      (R[0, 2] + R[2, 0]) / s])
    elif R[1, 1] > R[2, 2]:
        s = math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2.0
        q = np.array([(R[0, 2] - R[2, 0]) / s,
                      (R[0, 1] + R[1, 0]) / s,
                      0.25 * s,
                      (R[1, 2] + R[2, 1]) / s])
    else:
        s = math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2.0
        q = np.array([(R[1, 0] - R[0, 1]) / s,
                      (R[0, 2] + R[2, 0]) / s,
                      (R[1, 2] + R[2, 1]) / s,
                      0.25 * s])
    return quat_canonical(q)


def quat_slerp(a: np.ndarray, b: np.ndarray, s: float) -> np.ndarray:
    """Spherical interpolation between unit quaternions, shortest arc."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    dot = float(np.dot(a, b))
    if dot < 0.0:
        b = -b
        dot = -dot
    if dot > 1.0 - 1e-10:
        out = a + s * (b - a)
        return quat_canonical(out)
    theta = math.acos(min(1.0, dot))
    sin_theta = math.sin(theta)
    return quat_canonical(
        a * (math.sin((1.0 - s) * theta) / sin_theta)
        + b * (math.sin(s * theta) / sin_theta))


def transform(translation, rotation: np.ndarray) -> np.ndarray:
    """Build a homogeneous 4x4 from a translation and rotation matrix."""
    T = np.eye(4)
    T[:3, :3] = rotation
    T[:3, 3] = np.asarray(translation, dtype=float)
    return T


def transform_inverse(T: np.ndarray) -> np.ndarray:
    R = T[:3, :3]
    out = np.eye(4)
    out[:3, :3] = R.T
    out[:3, 3] = -R.T @ T[:3, 3]
    return out


# ====================== core value types ======================

@dataclass
class Pose6D:
    """Position plus orientation quaternion (w, x, y, z), unit norm."""

    position: np.ndarray
    quaternion: np.ndarray

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float).reshape(3).copy()
        q = np.asarray(self.quaternion, dtype=float).reshape(4)
        n = math.sqrt(float(np.dot(q, q)))
        if abs(n - 1.0) > 1e-9:
            raise ValueError(f"quaternion norm {n:.12e} is not 1 within 1e-9")
        self.quaternion = quat_canonical(q)

    def matrix(self) -> np.ndarray:
        return transform(self.position, quat_to_matrix(self.quaternion))

    @staticmethod
    def from_matrix(T: np.ndarray) -> "Pose6D":
        return Pose6D(T[:3, 3].copy(), matrix_to_quat(T[:3, :3]))

    @staticmethod
    def identity() -> "Pose6D":
        return Pose6D(np.zeros(3), np.array([1.0, 0.0, 0.0, 0.0]))

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.position, self.quaternion])

    @staticmethod
    def from_vector(v: np.ndarray) -> "Pose6D":
        v = np.asarray(v, dtype=float).reshape(7)
        return Pose6D(v[:3], v[3:])


@dataclass
class JointState:
    """Joint positions and velocities with the sampling time (seconds)."""

    positions: np.ndarray
    velocities: np.ndarray
    timestamp: float = 0.0

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float).copy()
        self.velocities = np.asarray(self.velocities, dtype=float).copy()
        if self.positions.shape != self.velocities.shape:
            raise ValueError("positions and velocities must have equal length")


@dataclass
class ArmModel:
    """Chain geometry, limits and the simplified diagonal dynamics.

    `axes` are unit joint axes in the joint's local frame; `offsets_xyz`
    and `offsets_rpy` give the fixed parent-to-joint transform applied
    before the joint rotation.  `hand_offset` maps the last joint frame
    to the palm-center hand frame.

    `coriolis_scale` sets which fraction of the viscous coupling the
    velocity feedforward term claims to know.  It is deliberately below
    one by default: the joint-level friction is only partially known to
    the controllers, which is precisely why the measured-force assist
    exists, and full cancellation would remove the damping margin the
    force-feedback loop needs under sensor filtering lag.
    """

    axes: np.ndarray            # (n, 3) unit axes in local joint frame
    offsets_xyz: np.ndarray     # (n, 3)
    offsets_rpy: np.ndarray     # (n, 3)
    hand_offset: np.ndarray     # (4, 4)
    position_lower: np.ndarray  # (n,)
    position_upper: np.ndarray  # (n,)
    velocity_limits: np.ndarray  # (n,) symmetric, rad/s
    torque_limits: np.ndarray   # (n,) symmetric, N*m
    rest_pose: np.ndarray       # (n,)
    effective_inertia: np.ndarray  # (n,) kg*m^2
    viscous_damping: np.ndarray    # (n,) N*m*s/rad
    coriolis_scale: float = 0.5
    name: str = "arm"
    _fixed: np.ndarray = field(init=False, repr=False)
    # Split/precomputed copies of the fixed geometry; the kinematics
    # inner loops run at 1 kHz and 3x3 blocks beat 4x4 products there.
    _fixed_R: np.ndarray = field(init=False, repr=False)
    _fixed_p: np.ndarray = field(init=False, repr=False)
    _hand_R: np.ndarray = field(init=False, repr=False)
    _hand_p: np.ndarray = field(init=False, repr=False)
    _axis_K: np.ndarray = field(init=False, repr=False)
    _axis_K2: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.axes = np.asarray(self.axes, dtype=float)
        n = self.axes.shape[0]
        for attr in ("offsets_xyz", "offsets_rpy"):
            setattr(self, attr, np.asarray(getattr(self, attr), dtype=float).reshape(n, 3))
        for attr in ("position_lower", "position_upper", "velocity_limits",
                     "torque_limits", "rest_pose", "effective_inertia",
                     "viscous_damping"):
            v = np.asarray(getattr(self, attr), dtype=float).reshape(-1)
            if v.shape[0] != n:
                raise ValueError(f"{attr} must have length {n}")
            setattr(self, attr, v)
        norms = np.linalg.norm(self.axes, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-9):
            raise ValueError("joint axes must be unit vectors")
        if np.any(self.position_lower >= self.position_upper):
            raise ValueError("position_lower must be strictly below position_upper")
        if np.any(self.velocity_limits <= 0.0) or np.any(self.torque_limits <= 0.0):
            raise ValueError("velocity and torque limits must be positive")
        if np.any(self.effective_inertia <= 0.0) or np.any(self.viscous_damping < 0.0):
            raise ValueError("inertia must be positive, damping non-negative")
        bad = (self.rest_pose < self.position_lower) | (self.rest_pose > self.position_upper)
        if np.any(bad):
            raise ValueError("rest_pose must lie inside the position limits")
        self.hand_offset = np.asarray(self.hand_offset, dtype=float).reshape(4, 4)
        # Precompute the fixed per-joint transforms once.
        fixed = np.empty((n, 4, 4))
        for i in range(n):
            fixed[i] = transform(self.offsets_xyz[i], rpy_matrix(self.offsets_rpy[i]))
        self._fixed = fixed
        self._fixed_R = np.ascontiguousarray(fixed[:, :3, :3])
        self._fixed_p = np.ascontiguousarray(fixed[:, :3, 3])
        self._hand_R = np.ascontiguousarray(self.hand_offset[:3, :3])
        self._hand_p = np.ascontiguousarray(self.hand_offset[:3, 3])
        K = np.stack([skew(a) for a in self.axes])
        self._axis_K = K
        self._axis_K2 = np.matmul(K, K)
        # One-slot caches: within a control tick the same q is used for
        # FK, Jacobians and wrench mapping, so reuse the last results.
        self._chain_key: Optional[bytes] = None
        self._chain_val = None
        self._pose_key: Optional[bytes] = None
        self._pose_val = None
        self._zjac_chain = None
        self._zjac_val = None

    @property
    def joint_count(self) -> int:
        return self.axes.shape[0]

    def max_reach(self) -> float:
        """Upper bound on hand distance from the base origin."""
        reach = float(np.sum(np.linalg.norm(self.offsets_xyz, axis=1)))
        reach += float(np.linalg.norm(self.hand_offset[:3, 3]))
        return reach

    def clamp_positions(self, q: np.ndarray) -> np.ndarray:
        return np.clip(q, self.position_lower, self.position_upper)

    def mid_pose(self) -> np.ndarray:
        return 0.5 * (self.position_lower + self.position_upper)


@dataclass
class ArmSetup:
    """An arm model plus how it is mounted and where its F/T sensor sits.

    `world_from_base` places the arm base in the station's shared world
    frame; `hand_from_sensor` places the sensor frame relative to the
    hand frame.  The sensor_* fields are the physical truth used by the
    simulator to synthesize raw readings (a calibration profile is the
    estimate of these quantities).
    """

    model: ArmModel
    world_from_base: np.ndarray          # (4, 4)
    hand_from_sensor: np.ndarray         # (4, 4)
    sensor_force_bias: np.ndarray        # (3,) N
    sensor_torque_bias: np.ndarray       # (3,) N*m
    sensor_mass: float                   # kg attached beyond the sensor
    sensor_com: np.ndarray               # (3,) m, in sensor frame

    def __post_init__(self):
        self.world_from_base = np.asarray(self.world_from_base, dtype=float).reshape(4, 4)
        self.hand_from_sensor = np.asarray(self.hand_from_sensor, dtype=float).reshape(4, 4)
        self.sensor_force_bias = np.asarray(self.sensor_force_bias, dtype=float).reshape(3)
        self.sensor_torque_bias = np.asarray(self.sensor_torque_bias, dtype=float).reshape(3)
        self.sensor_com = np.asarray(self.sensor_com, dtype=float).reshape(3)


# ====================== forward kinematics ======================

_EYE3 = np.eye(3)


def fk_chain(model: ArmModel, q: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Cumulative joint frames as rotation/origin stacks.

    Returns (R, p): R has shape (n+1, 3, 3) and p shape (n+1, 3).
    Entry i is joint i's frame (after its own rotation), entry n is the
    hand frame.  This runs inside every controller tick, so it works on
    3x3 blocks with the per-joint Rodrigues terms precomputed on the
    model.
    """
    q = np.asarray(q, dtype=float)
    key = q.tobytes()
    if key == model._chain_key:
        return model._chain_val
    s = np.sin(q)
    c = np.cos(q)
    Rj = (_EYE3 + s[:, None, None] * model._axis_K
          + (1.0 - c)[:, None, None] * model._axis_K2)
    # Parent-to-frame rotation per joint in one batched product.
    steps = np.matmul(model._fixed_R, Rj)
    n = model.joint_count
    Rs = np.empty((n + 1, 3, 3))
    ps = np.empty((n + 1, 3))
    R = _EYE3
    p = np.zeros(3)
    for i in range(n):
        p = p + R @ model._fixed_p[i]
        R = R @ steps[i]
        Rs[i] = R
        ps[i] = p
    Rs[n] = R @ model._hand_R
    ps[n] = p + R @ model._hand_p
    model._chain_key = key
    model._chain_val = (Rs, ps)
    return model._chain_val


def forward_kinematics(model: ArmModel, q: np.ndarray) -> Pose6D:
    """Hand-frame pose in the arm base frame."""
    Rs, ps = fk_chain(model, q)
    if model._pose_key != model._chain_key:
        model._pose_val = Pose6D(ps[-1], matrix_to_quat(Rs[-1]))
        model._pose_key = model._chain_key
    return model._pose_val


def zero_jacobian_from_chain(model: ArmModel, chain) -> np.ndarray:
    if chain is model._zjac_chain:
        return model._zjac_val
    Rs, ps = chain
    n = model.joint_count
    ax = np.einsum("nij,nj->ni", Rs[:n], model.axes)
    lv = ps[n] - ps[:n]
    J = np.empty((6, n))
    # cross(ax, lv) per row, spelled out; np.cross is slow on small arrays
    J[0] = ax[:, 1] * lv[:, 2] - ax[:, 2] * lv[:, 1]
    J[1] = ax[:, 2] * lv[:, 0] - ax[:, 0] * lv[:, 2]
    J[2] = ax[:, 0] * lv[:, 1] - ax[:, 1] * lv[:, 0]
    J[3:] = ax.T
    model._zjac_chain = chain
    model._zjac_val = J
    return J


def zero_jacobian(model: ArmModel, q: np.ndarray) -> np.ndarray:
    """Geometric Jacobian in the base frame, rows stacked [linear; angular]."""
    return zero_jacobian_from_chain(model, fk_chain(model, q))


def body_jacobian(model: ArmModel, q: np.ndarray) -> np.ndarray:
    """Jacobian expressed in the hand frame (used against hand-frame wrenches)."""
    chain = fk_chain(model, q)
    R_hand = chain[0][-1]
    J = zero_jacobian_from_chain(model, chain)
    Jb = np.empty_like(J)
    Jb[:3] = R_hand.T @ J[:3]
    Jb[3:] = R_hand.T @ J[3:]
    return Jb


def fk_and_zero_jacobian(model: ArmModel, q: np.ndarray) -> Tuple[Pose6D, np.ndarray]:
    """Hand pose and base-frame Jacobian from one chain evaluation."""
    chain = fk_chain(model, q)
    pose = Pose6D(chain[1][-1], matrix_to_quat(chain[0][-1]))
    return pose, zero_jacobian_from_chain(model, chain)


def fk_and_body_jacobian(model: ArmModel, q: np.ndarray) -> Tuple[Pose6D, np.ndarray]:
    """Hand pose and hand-frame Jacobian from one chain evaluation."""
    chain = fk_chain(model, q)
    R_hand = chain[0][-1]
    pose = Pose6D(chain[1][-1], matrix_to_quat(R_hand))
    J = zero_jacobian_from_chain(model, chain)
    Jb = np.empty_like(J)
    Jb[:3] = R_hand.T @ J[:3]
    Jb[3:] = R_hand.T @ J[3:]
    return pose, Jb


def pose_error(a: Pose6D, b: Pose6D) -> np.ndarray:
    """6-vector [translation; rotation-vector] taking pose b to pose a.

    Both parts are expressed in the frame the poses live in (base or
    world).  Used as `pose_error(target, current)` for servoing and as
    `pose_error(current, goal)` for impedance displacement.
    """
    dt = a.position - b.position
    Ra = quat_to_matrix(a.quaternion)
    Rb = quat_to_matrix(b.quaternion)
    dr = matrix_to_rotvec(Ra @ Rb.T)
    return np.concatenate([dt, dr])


def interpolate_pose(a: Pose6D, b: Pose6D, s: float) -> Pose6D:
    """Linear position / spherical orientation blend, s in [0, 1]."""
    s = min(1.0, max(0.0, float(s)))
    return Pose6D(a.position + s * (b.position - a.position),
                  quat_slerp(a.quaternion, b.quaternion, s))


# ====================== inverse kinematics ======================

def damped_ls_ik(model: ArmModel,
                 q_seed: np.ndarray,
                 target: Pose6D,
                 max_iters: int = IK_MAX_ITERS,
                 pos_tol: float = IK_POS_TOL,
                 rot_tol: float = IK_ROT_TOL,
                 damping: float = IK_BASE_DAMPING) -> Optional[np.ndarray]:
    """Damped least-squares IK toward `target`, limits enforced per step.

    Returns the solution joint vector, or None when the target is not
    reached within the iteration budget (an unreachable target is an
    expected outcome, not an error).  The damping factor adapts upward
    when a step fails to reduce the error, which keeps steps useful
    near singular configurations.
    """
    q = model.clamp_positions(np.asarray(q_seed, dtype=float).copy())
    # Targets beyond the chain's reach can never converge; skip the
    # iteration budget entirely.
    if np.linalg.norm(target.position) > model.max_reach() + 1e-9:
        return None

    target_R = quat_to_matrix(target.quaternion)
    target_p = target.position

    def chain_error(chain):
        Rs, ps = chain
        return np.concatenate([target_p - ps[-1],
                               matrix_to_rotvec(target_R @ Rs[-1].T)])

    lam = damping
    chain = fk_chain(model, q)
    err = chain_error(chain)
    err_norm = np.linalg.norm(err)
    eye6 = np.eye(6)
    for _ in range(max_iters):
        if np.linalg.norm(err[:3]) < pos_tol and np.linalg.norm(err[3:]) < rot_tol:
            return q
        J = zero_jacobian_from_chain(model, chain)
        JJt = J @ J.T + (lam * lam) * eye6
        step = J.T @ np.linalg.solve(JJt, err)
        q_new = model.clamp_positions(q + step)
        new_chain = fk_chain(model, q_new)
        new_err = chain_error(new_chain)
        new_norm = np.linalg.norm(new_err)
        if new_norm < err_norm:
            q, chain, err, err_norm = q_new, new_chain, new_err, new_norm
            lam = max(IK_BASE_DAMPING, lam * 0.5)
        else:
            # Reject the step and damp harder; give up once the damping
            # is so large that steps are effectively zero.
            lam *= 4.0
            if lam > 1e6:
                return None
    if np.linalg.norm(err[:3]) < pos_tol and np.linalg.norm(err[3:]) < rot_tol:
        return q
    return None


def ik_seed_list(model: ArmModel, target: Pose6D) -> List[np.ndarray]:
    """Deterministic seed set for IK: neutral poses plus azimuth-aligned
    variants that point the first joint at the target."""
    az = math.atan2(target.position[1], target.position[0])
    seeds = []
    elbow = model.rest_pose.copy()
    if model.joint_count >= 4:
        elbow[1] = min(0.6, model.position_upper[1])
        elbow[3] = max(-1.0, model.position_lower[3])
    for base in (model.rest_pose, model.mid_pose(), elbow):
        seeds.append(base.copy())
        turned = base.copy()
        turned[0] = min(model.position_upper[0], max(model.position_lower[0], az))
        seeds.append(turned)
    return seeds


def ik_with_restarts(model: ArmModel,
                     target: Pose6D,
                     restarts: int = 0,
                     max_iters: int = IK_MAX_ITERS,
                     pos_tol: float = IK_POS_TOL,
                     rot_tol: float = IK_ROT_TOL) -> Optional[np.ndarray]:
    """IK over a deterministic seed ladder, then seeded random restarts.

    The restart stream is derived from the target itself, so repeated
    calls with the same target always walk the same seeds; there is no
    global RNG state involved.
    """
    import hashlib

    for seed in ik_seed_list(model, target):
        q = damped_ls_ik(model, seed, target, max_iters=max_iters,
                         pos_tol=pos_tol, rot_tol=rot_tol)
        if q is not None:
            return q
    if restarts <= 0:
        return None
    digest = hashlib.sha256(np.round(target.as_vector(), 9).tobytes()).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
    span = model.position_upper - model.position_lower
    center = model.mid_pose()
    for _ in range(restarts):
        seed = model.clamp_positions(center + rng.uniform(-0.45, 0.45, model.joint_count) * span)
        q = damped_ls_ik(model, seed, target, max_iters=max_iters,
                         pos_tol=pos_tol, rot_tol=rot_tol)
        if q is not None:
            return q
    return None


def truncated_pinv(A: np.ndarray, cutoff: float = SINGULAR_VALUE_CUTOFF) -> np.ndarray:
    """Moore-Penrose pseudoinverse with singular values below cutoff zeroed."""
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    inv = np.where(s > cutoff, 1.0 / np.where(s > cutoff, s, 1.0), 0.0)
    return (Vt.T * inv) @ U.T


# ====================== simplified dynamics terms ======================

def coriolis_torque(model: ArmModel, state: JointState) -> np.ndarray:
    """Velocity feedforward under the diagonal model.

    With a diagonal inertia matrix the velocity-product terms collapse
    to the viscous coupling, so the feedforward is
    `coriolis_scale * viscous_damping * velocity` per joint: odd in
    velocity and identically zero at rest.
    """
    return model.coriolis_scale * model.viscous_damping * state.velocities


def nullspace_torque(model: ArmModel,
                     state: JointState,
                     J: np.ndarray,
                     gain: float,
                     damping: Optional[np.ndarray] = None) -> np.ndarray:
    """Rest-pose attraction projected to produce no hand-frame twist.

    The projector is the inertia-weighted nullspace projector
    I - J^T (J M^-1 J^T)^+ J M^-1, so the returned torque moves the
    joints without first-order effect on the hand.  Damping defaults to
    (2 * sqrt(gain * M_i)) per joint, which goes to zero together with
    the gain.
    """
    q_err = model.rest_pose - state.positions
    if damping is None:
        damping = 2.0 * np.sqrt(gain * model.effective_inertia)
    raw = gain * q_err - damping * state.velocities
    if not np.any(raw):
        return np.zeros(model.joint_count)
    Minv = 1.0 / model.effective_inertia
    JMinv = J * Minv  # row-scaled by M^-1 columnwise
    A = JMinv @ J.T
    torque = raw - J.T @ (truncated_pinv(A) @ (JMinv @ raw))
    return torque


# ====================== config file loading ======================

def _matrix_from_xyz_rpy(xyz, rpy) -> np.ndarray:
    return transform(xyz, rpy_matrix(rpy))


def load_arm_file(path: str) -> ArmSetup:
    """Parse a flat key-value arm description file into an ArmSetup."""
    cfg = parse_kv_file(path)

    n = int(cfg.get_scalar("joint_count"))
    if n < 1:
        raise ConfigError(f"{path}: joint_count must be at least 1")
    axes = np.zeros((n, 3))
    xyz = np.zeros((n, 3))
    rpy = np.zeros((n, 3))
    for i in range(n):
        key = f"joint{i + 1}"
        axes[i] = cfg.get_vector(f"{key}.axis", 3)
        xyz[i] = cfg.get_vector(f"{key}.offset_xyz", 3)
        rpy[i] = cfg.get_vector(f"{key}.offset_rpy", 3, default=np.zeros(3))

    hand = _matrix_from_xyz_rpy(
        cfg.get_vector("hand.offset_xyz", 3, default=np.zeros(3)),
        cfg.get_vector("hand.offset_rpy", 3, default=np.zeros(3)))

    model = ArmModel(
        axes=axes,
        offsets_xyz=xyz,
        offsets_rpy=rpy,
        hand_offset=hand,
        position_lower=cfg.get_vector("position_lower", n),
        position_upper=cfg.get_vector("position_upper", n),
        velocity_limits=cfg.get_vector("velocity_limit", n),
        torque_limits=cfg.get_vector("torque_limit", n),
        rest_pose=cfg.get_vector("rest_pose", n),
        effective_inertia=cfg.get_vector("inertia", n),
        viscous_damping=cfg.get_vector("damping", n),
        coriolis_scale=float(cfg.get_scalar("coriolis_scale", default=0.5)),
        name=cfg.get_str("name", default="arm"),
    )

    mounting = _matrix_from_xyz_rpy(
        cfg.get_vector("mounting.xyz", 3, default=np.zeros(3)),
        cfg.get_vector("mounting.rpy", 3, default=np.zeros(3)))
    sensor_T = _matrix_from_xyz_rpy(
        cfg.get_vector("sensor.offset_xyz", 3, default=np.zeros(3)),
        cfg.get_vector("sensor.offset_rpy", 3, default=np.zeros(3)))

    setup = ArmSetup(
        model=model,
        world_from_base=mounting,
        hand_from_sensor=sensor_T,
        sensor_force_bias=cfg.get_vector("sensor.force_bias", 3, default=np.zeros(3)),
        sensor_torque_bias=cfg.get_vector("sensor.torque_bias", 3, default=np.zeros(3)),
        sensor_mass=float(cfg.get_scalar("sensor.mass", default=0.0)),
        sensor_com=cfg.get_vector("sensor.com", 3, default=np.zeros(3)),
    )
    cfg.raise_on_unused(known_prefixes=("joint",))
    return setup
