"""Scenario files: everything a closed-loop run needs, in one place.

A scenario is a flat key-value file naming the two arms, the hand
config, the link conditions, the scripted operator intent and whatever
the avatar runs into (contact wrenches, graspable objects).  The same
file drives the single-process loopback runner and the two-process
socket runner, so a run is reproducible from the file plus its seed
alone.

Times are seconds from scenario start.  Wrench windows act on the
avatar hand and are given in the world frame; intent waypoints are
either absolute world poses or offsets from the operator's starting
hand pose.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .configio import ConfigError, parse_floats, parse_kv_file

# Bundled configs (arms, hands, scenarios) live inside the package so
# `builtin:` names work from any working directory.
_CONFIG_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "configs")

_BUILTIN_ARMS = {
    "builtin:operator": "operator_arm.cfg",
    "builtin:avatar": "avatar_arm.cfg",
}
_BUILTIN_HANDS = {
    "builtin:right": "hand_right.cfg",
    "builtin:left": "hand_left.cfg",
}


def builtin_config(name: str) -> str:
    return os.path.join(_CONFIG_DIR, name)


def find_scenario(name: str) -> str:
    """Resolve a scenario argument: a path if it exists, else a bundled
    scenario name like 'grasp'."""
    if os.path.exists(name):
        return os.path.abspath(name)
    candidate = builtin_config(name + ".scenario")
    if os.path.exists(candidate):
        return candidate
    raise ConfigError(f"no such scenario file or bundled scenario: '{name}'")


def list_bundled_scenarios() -> List[str]:
    names = [f[:-len(".scenario")] for f in os.listdir(_CONFIG_DIR)
             if f.endswith(".scenario")]
    return sorted(names)


def _resolve(value: str, table, base_dir: str, what: str) -> str:
    if value.startswith("builtin:"):
        if value not in table:
            raise ConfigError(
                f"unknown {what} '{value}' (choices: {sorted(table)})")
        return builtin_config(table[value])
    path = value if os.path.isabs(value) else os.path.join(base_dir, value)
    if not os.path.exists(path):
        raise ConfigError(f"{what} file not found: '{path}'")
    return os.path.abspath(path)


# ====================== scenario pieces ======================


@dataclass
class LinkSettings:
    """Per-direction transit times plus shared jitter/drop behaviour."""

    command_delay_ms: float = 0.0       # operator -> avatar
    feedback_delay_ms: float = 0.0      # avatar -> operator
    jitter_ms: float = 0.0
    drop_rate: float = 0.0
    budget_bytes_per_s: float = 262144.0
    blackouts: List[Tuple[float, float]] = field(default_factory=list)

    def __post_init__(self):
        if self.command_delay_ms < 0.0 or self.feedback_delay_ms < 0.0:
            raise ConfigError("link delays must be non-negative")
        if self.jitter_ms < 0.0:
            raise ConfigError("link jitter must be non-negative")
        if not 0.0 <= self.drop_rate < 1.0:
            raise ConfigError("link drop rate must be in [0, 1)")
        if self.budget_bytes_per_s <= 0.0:
            raise ConfigError("link budget must be positive")
        for t0, t1 in self.blackouts:
            if t1 <= t0:
                raise ConfigError(f"blackout window [{t0}, {t1}] is empty")


@dataclass
class Rates:
    """Per-stream tick divisors (control runs at 1/dt)."""

    goal_every: int = 1        # operator hand goal stream
    telemetry_every: int = 1   # avatar joint echo
    wrench_every: int = 2      # avatar measured-wrench echo
    hand_every: int = 10       # glove commands and current feedback
    sense_every: int = 2       # F/T sensor native sampling
    trace_every: int = 1       # trace rows (0 disables tracing)

    def __post_init__(self):
        for name in ("goal_every", "telemetry_every", "wrench_every",
                     "hand_every", "sense_every"):
            if getattr(self, name) < 1:
                raise ConfigError(f"rates.{name} must be >= 1")
        if self.trace_every < 0:
            raise ConfigError("trace.every must be >= 0")


@dataclass
class WrenchWindow:
    """External wrench on the avatar hand, world frame, over [start, end)."""

    start: float
    end: float
    wrench: np.ndarray  # (6,)

    def __post_init__(self):
        self.wrench = np.asarray(self.wrench, dtype=float).reshape(6)
        if self.end <= self.start:
            raise ConfigError(f"wrench window [{self.start}, {self.end}] is empty")


@dataclass
class BlockWindow:
    """An object in the remote hand: a closure ceiling over [start, end)."""

    start: float
    end: float
    ceiling: float

    def __post_init__(self):
        if self.end <= self.start:
            raise ConfigError(f"hand block [{self.start}, {self.end}] is empty")
        if not 0.0 <= self.ceiling <= 1.0:
            raise ConfigError("hand block ceiling must be in [0, 1]")


# ====================== the scenario itself ======================


@dataclass
class Scenario:
    name: str = "unnamed"
    duration: float = 1.0
    dt: float = 1e-3
    seed: int = 0

    # station descriptions (absolute paths after loading)
    operator_arm: str = ""
    avatar_arm: str = ""
    hand_config: str = ""
    initial_operator_q: Optional[np.ndarray] = None
    initial_avatar_q: Optional[np.ndarray] = None

    link: LinkSettings = field(default_factory=LinkSettings)
    rates: Rates = field(default_factory=Rates)

    # scripted human intent
    intent_mode: str = "relative"          # offsets from the start pose
    intent_waypoints: List[Tuple[float, np.ndarray]] = field(default_factory=list)
    intent_stiffness: Optional[np.ndarray] = None
    intent_force_cap: float = 30.0
    intent_torque_cap: float = 5.0

    # the remote environment
    wrench_windows: List[WrenchWindow] = field(default_factory=list)
    hand_closures: List[Tuple[float, float]] = field(default_factory=list)
    hand_blocks: List[BlockWindow] = field(default_factory=list)
    sensor_noise_force: float = 0.0
    sensor_noise_torque: float = 0.0

    # controller overrides (None keeps the controller's default)
    operator_assist: bool = True
    operator_assist_scale: float = 1.0
    operator_haptic_scale: float = 1.0
    operator_nullspace_gain: Optional[float] = None
    mirror_enabled: bool = True
    avatar_stiffness: Optional[np.ndarray] = None
    avatar_damping: Optional[np.ndarray] = None
    avatar_fade_duration: Optional[float] = None
    avatar_force_stop: Optional[float] = None
    avatar_torque_stop: Optional[float] = None
    avatar_auto_restart: Optional[bool] = None
    avatar_restart_delay: Optional[float] = None
    avatar_nullspace_gain: Optional[float] = None

    def __post_init__(self):
        if self.duration <= 0.0:
            raise ConfigError("scenario duration must be positive")
        if self.dt <= 0.0:
            raise ConfigError("scenario dt must be positive")
        if self.intent_mode not in ("relative", "absolute"):
            raise ConfigError(
                f"intent.mode must be 'relative' or 'absolute', "
                f"got '{self.intent_mode}'")
        last = -np.inf
        for t, pose in self.intent_waypoints:
            if t < 0.0 or t <= last:
                raise ConfigError("intent waypoint times must be "
                                  "non-negative and strictly increasing")
            if np.asarray(pose).shape != (6,):
                raise ConfigError("intent waypoints need 6 numbers after t")
            last = t
        last = -np.inf
        for t, level in self.hand_closures:
            if t < 0.0 or t <= last:
                raise ConfigError("hand closure times must be "
                                  "non-negative and strictly increasing")
            if not 0.0 <= level <= 1.0:
                raise ConfigError("hand closure levels must be in [0, 1]")
            last = t

    # -------- derived quantities --------

    @property
    def tick_us(self) -> int:
        return int(round(self.dt * 1e6))

    @property
    def tick_count(self) -> int:
        return int(round(self.duration / self.dt))

    def closure_at(self, t: float) -> float:
        """Scripted glove closure, linear between the given points."""
        pts = self.hand_closures
        if not pts:
            return 0.0
        if t <= pts[0][0]:
            return pts[0][1]
        for (t0, c0), (t1, c1) in zip(pts, pts[1:]):
            if t < t1:
                return c0 + (c1 - c0) * (t - t0) / (t1 - t0)
        return pts[-1][1]

    def external_wrench_at(self, t: float) -> Optional[np.ndarray]:
        """Sum of active contact windows, or None outside all of them."""
        total = None
        for window in self.wrench_windows:
            if window.start <= t < window.end:
                total = window.wrench if total is None else total + window.wrench
        return total

    def block_ceiling_at(self, t: float) -> Optional[float]:
        ceiling = None
        for block in self.hand_blocks:
            if block.start <= t < block.end:
                ceiling = block.ceiling if ceiling is None else min(ceiling, block.ceiling)
        return ceiling

    def in_blackout(self, t: float) -> bool:
        return any(t0 <= t < t1 for t0, t1 in self.link.blackouts)


# ====================== file loading ======================


def _windows(kv, key: str, count: int):
    out = []
    for value, line in kv.get_all(key):
        vec = parse_floats(value, kv.path, line)
        if vec.shape[0] != count:
            raise ConfigError(
                f"{kv.path}:{line}: '{key}' needs {count} numbers, "
                f"got {vec.shape[0]}")
        out.append(vec)
    return out


def load_scenario(path: str) -> Scenario:
    kv = parse_kv_file(path)
    base_dir = os.path.dirname(os.path.abspath(path))

    link = LinkSettings(
        command_delay_ms=kv.get_scalar("link.command_delay_ms", 0.0),
        feedback_delay_ms=kv.get_scalar("link.feedback_delay_ms", 0.0),
        jitter_ms=kv.get_scalar("link.jitter_ms", 0.0),
        drop_rate=kv.get_scalar("link.drop_rate", 0.0),
        budget_bytes_per_s=kv.get_scalar("link.budget_bytes_per_s", 262144.0),
        blackouts=[(float(w[0]), float(w[1]))
                   for w in _windows(kv, "link.blackout", 2)],
    )
    rates = Rates(
        goal_every=int(kv.get_scalar("rates.goal_every", 1)),
        telemetry_every=int(kv.get_scalar("rates.telemetry_every", 1)),
        wrench_every=int(kv.get_scalar("rates.wrench_every", 2)),
        hand_every=int(kv.get_scalar("rates.hand_every", 10)),
        sense_every=int(kv.get_scalar("rates.sense_every", 2)),
        trace_every=int(kv.get_scalar("trace.every", 1)),
    )

    waypoints = [(float(w[0]), w[1:]) for w in _windows(kv, "intent.waypoint", 7)]
    wrench_windows = [WrenchWindow(float(w[0]), float(w[1]), w[2:])
                      for w in _windows(kv, "wrench.window", 8)]
    closures = [(float(w[0]), float(w[1]))
                for w in _windows(kv, "hand.closure", 2)]
    blocks = [BlockWindow(float(w[0]), float(w[1]), float(w[2]))
              for w in _windows(kv, "hand.block", 3)]

    def vector6(key):
        return kv.get_vector(key, 6) if kv.has(key) else None

    def scalar_or_none(key):
        return kv.get_scalar(key) if kv.has(key) else None

    # Initial joint vectors are validated against the arm models by the
    # runner, which is the first place the joint counts are known.
    scenario = Scenario(
        name=kv.get_str("name", default=os.path.basename(path)),
        duration=kv.get_scalar("duration"),
        dt=kv.get_scalar("dt", 1e-3),
        seed=int(kv.get_scalar("seed", 0)),
        operator_arm=_resolve(kv.get_str("operator.arm", "builtin:operator"),
                              _BUILTIN_ARMS, base_dir, "operator arm"),
        avatar_arm=_resolve(kv.get_str("avatar.arm", "builtin:avatar"),
                            _BUILTIN_ARMS, base_dir, "avatar arm"),
        hand_config=_resolve(kv.get_str("hand.config", "builtin:right"),
                             _BUILTIN_HANDS, base_dir, "hand config"),
        initial_operator_q=(parse_floats(kv.get_str("initial.operator_q"))
                            if kv.has("initial.operator_q") else None),
        initial_avatar_q=(parse_floats(kv.get_str("initial.avatar_q"))
                          if kv.has("initial.avatar_q") else None),
        link=link,
        rates=rates,
        intent_mode=kv.get_str("intent.mode", "relative"),
        intent_waypoints=waypoints,
        intent_stiffness=vector6("intent.stiffness"),
        intent_force_cap=kv.get_scalar("intent.force_cap", 30.0),
        intent_torque_cap=kv.get_scalar("intent.torque_cap", 5.0),
        wrench_windows=wrench_windows,
        hand_closures=closures,
        hand_blocks=blocks,
        sensor_noise_force=kv.get_scalar("sensor.noise_force", 0.0),
        sensor_noise_torque=kv.get_scalar("sensor.noise_torque", 0.0),
        operator_assist=kv.get_bool("operator.assist", True),
        operator_assist_scale=kv.get_scalar("operator.assist_scale", 1.0),
        operator_haptic_scale=kv.get_scalar("operator.haptic_scale", 1.0),
        operator_nullspace_gain=scalar_or_none("operator.nullspace_gain"),
        mirror_enabled=kv.get_bool("operator.mirror", True),
        avatar_stiffness=vector6("avatar.stiffness"),
        avatar_damping=vector6("avatar.damping"),
        avatar_fade_duration=scalar_or_none("avatar.fade_duration"),
        avatar_force_stop=scalar_or_none("avatar.force_stop"),
        avatar_torque_stop=scalar_or_none("avatar.torque_stop"),
        avatar_auto_restart=(kv.get_bool("avatar.auto_restart")
                             if kv.has("avatar.auto_restart") else None),
        avatar_restart_delay=scalar_or_none("avatar.restart_delay"),
        avatar_nullspace_gain=scalar_or_none("avatar.nullspace_gain"),
    )
    kv.raise_on_unused()
    return scenario
