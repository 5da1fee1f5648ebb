"""Glove-to-hand retargeting and per-finger brake feedback.

The operator wears a data glove; the remote hand has far fewer
actuators than the glove has joints.  Retargeting is a per-actuator
linear map: each actuator reads one glove angle, scales and offsets it,
and clips to the actuator's closure range [0, 1].  The map lives in a
CSV file so it can be recalibrated per glove without touching code.

Feedback runs the other way: actuator currents come back from the
remote hand, are grouped into fingers, and a latch with hysteresis
decides when the glove's finger brakes engage.  Hysteresis matters
because a finger pressing on an object hovers right at the threshold;
without it the brake chatters.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from .configio import ConfigError, parse_kv_file


class MalformedMapping(Exception):
    """Raised for unusable retargeting CSV content."""


CSV_HEADER = ["actuator", "glove_index", "scale", "offset"]


@dataclass
class GloveFrame:
    """One sample of glove joint angles, radians."""

    angles: np.ndarray
    timestamp: float = 0.0

    def __post_init__(self):
        self.angles = np.asarray(self.angles, dtype=float)


@dataclass
class RetargetEntry:
    actuator: str
    glove_index: int
    scale: float
    offset: float


class RetargetMap:
    """Ordered linear maps from glove angles to actuator closures."""

    def __init__(self, entries: Sequence[RetargetEntry]):
        if not entries:
            raise MalformedMapping("retarget map has no entries")
        seen = set()
        for e in entries:
            if e.actuator in seen:
                raise MalformedMapping(f"duplicate actuator '{e.actuator}'")
            seen.add(e.actuator)
            if e.glove_index < 0:
                raise MalformedMapping(
                    f"actuator '{e.actuator}': negative glove index")
            if not (math.isfinite(e.scale) and math.isfinite(e.offset)):
                raise MalformedMapping(
                    f"actuator '{e.actuator}': non-finite coefficient")
        self.entries = list(entries)

    @property
    def actuator_count(self) -> int:
        return len(self.entries)

    @property
    def actuator_names(self) -> List[str]:
        return [e.actuator for e in self.entries]

    def required_angles(self) -> int:
        return 1 + max(e.glove_index for e in self.entries)

    def apply(self, angles: np.ndarray) -> np.ndarray:
        """Closure command per actuator, clipped to [0, 1]."""
        angles = np.asarray(angles, dtype=float)
        if angles.shape[0] < self.required_angles():
            raise MalformedMapping(
                f"glove frame has {angles.shape[0]} angles, "
                f"mapping needs at least {self.required_angles()}")
        out = np.empty(len(self.entries))
        for i, e in enumerate(self.entries):
            out[i] = e.scale * angles[e.glove_index] + e.offset
        return np.clip(out, 0.0, 1.0)

    @classmethod
    def from_csv(cls, path: str) -> "RetargetMap":
        try:
            with open(path, "r", encoding="utf-8", newline="") as fh:
                rows = list(csv.reader(fh))
        except OSError as exc:
            raise MalformedMapping(f"cannot read '{path}': {exc}") from None
        if not rows or [c.strip() for c in rows[0]] != CSV_HEADER:
            raise MalformedMapping(
                f"{path}:1: header must be '{','.join(CSV_HEADER)}'")
        entries = []
        for lineno, row in enumerate(rows[1:], start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 4:
                raise MalformedMapping(
                    f"{path}:{lineno}: expected 4 fields, got {len(row)}")
            name = row[0].strip()
            if not name:
                raise MalformedMapping(f"{path}:{lineno}: empty actuator name")
            try:
                index = int(row[1])
                scale = float(row[2])
                offset = float(row[3])
            except ValueError:
                raise MalformedMapping(
                    f"{path}:{lineno}: bad numeric field in {row[1:]}") from None
            entries.append(RetargetEntry(name, index, scale, offset))
        try:
            return cls(entries)
        except MalformedMapping as exc:
            raise MalformedMapping(f"{path}: {exc}") from None


# ====================== brake feedback ======================


class BrakeLatch:
    """On above the threshold, off below a fraction of it."""

    def __init__(self, threshold: float, release_fraction: float = 0.9):
        if threshold <= 0.0:
            raise ValueError("brake threshold must be positive")
        if not 0.0 < release_fraction < 1.0:
            raise ValueError("release fraction must be inside (0, 1)")
        self.threshold = float(threshold)
        self.release_fraction = float(release_fraction)
        self.engaged = False

    def update(self, current: float) -> bool:
        if self.engaged:
            if current < self.release_fraction * self.threshold:
                self.engaged = False
        elif current > self.threshold:
            self.engaged = True
        return self.engaged


@dataclass
class HandSetup:
    """Retarget map plus finger grouping and brake thresholds."""

    retarget: RetargetMap
    fingers: Dict[str, List[int]]       # finger -> actuator indices
    thresholds: Dict[str, float]        # finger -> brake-on current
    release_fraction: float


class FingerBrakes:
    """Per-finger brake latches driven by grouped actuator currents."""

    def __init__(self, setup: HandSetup):
        self.fingers = setup.fingers
        self.latches = {
            name: BrakeLatch(setup.thresholds[name], setup.release_fraction)
            for name in setup.fingers
        }

    def update(self, currents: np.ndarray) -> Dict[str, bool]:
        """Feed one feedback sample; a finger sees its peak actuator."""
        currents = np.asarray(currents, dtype=float)
        state = {}
        for name, indices in self.fingers.items():
            peak = float(np.max(np.abs(currents[indices])))
            state[name] = self.latches[name].update(peak)
        return state

    def engaged(self) -> List[str]:
        return [name for name, latch in self.latches.items() if latch.engaged]


# ====================== config loading ======================


def load_hand_file(path: str) -> HandSetup:
    """Hand channel config: mapping CSV, finger groups, brake levels."""
    kv = parse_kv_file(path)
    base = os.path.dirname(os.path.abspath(path))
    mapping_rel = kv.get_str("mapping")
    retarget = RetargetMap.from_csv(os.path.join(base, mapping_rel))

    default_threshold = kv.get_scalar("brake.threshold", 0.6)
    release = kv.get_scalar("brake.release", 0.9)
    if not 0.0 < release < 1.0:
        raise ConfigError(f"{path}: brake.release must be inside (0, 1)")

    index_of = {name: i for i, name in enumerate(retarget.actuator_names)}
    fingers: Dict[str, List[int]] = {}
    assigned: Dict[int, str] = {}
    for key in list(kv.entries.keys()):
        if not key.startswith("finger."):
            continue
        finger = key[len("finger."):]
        for value, line in kv.get_all(key):
            members = []
            for token in value.split():
                if token not in index_of:
                    raise ConfigError(
                        f"{path}:{line}: finger '{finger}' references unknown "
                        f"actuator '{token}'")
                idx = index_of[token]
                if idx in assigned:
                    raise ConfigError(
                        f"{path}:{line}: actuator '{token}' already belongs "
                        f"to finger '{assigned[idx]}'")
                assigned[idx] = finger
                members.append(idx)
            fingers.setdefault(finger, []).extend(members)
    if not fingers:
        raise ConfigError(f"{path}: no finger.<name> groups defined")
    missing = [name for name, i in index_of.items() if i not in assigned]
    if missing:
        raise ConfigError(
            f"{path}: actuators not assigned to any finger: {missing}")

    thresholds = {}
    for finger in fingers:
        thresholds[finger] = kv.get_scalar(f"brake.threshold.{finger}",
                                           default_threshold)
        if thresholds[finger] <= 0.0:
            raise ConfigError(
                f"{path}: brake threshold for '{finger}' must be positive")

    # every valid key was consumed above, so typos surface here
    kv.raise_on_unused()
    return HandSetup(retarget=retarget, fingers=fingers,
                     thresholds=thresholds, release_fraction=release)
