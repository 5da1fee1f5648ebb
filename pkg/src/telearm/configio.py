"""Flat key-value config files: `key = value`, `#` comments, repeats allowed.

All human-edited text inputs in this package (arm descriptions,
calibration profiles, hand configs, scenario files) share this format so
validation errors can always point at a file and line.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np


class ConfigError(Exception):
    """Raised for malformed or inconsistent config content."""


@dataclass
class KvEntry:
    value: str
    line: int
    used: bool = False


@dataclass
class KvFile:
    """Parsed key-value file; repeated keys keep every occurrence in order."""

    path: str
    entries: Dict[str, List[KvEntry]] = field(default_factory=dict)

    # -------- raw access --------

    def has(self, key: str) -> bool:
        return key in self.entries

    def _take(self, key: str) -> KvEntry:
        items = self.entries.get(key)
        if not items:
            raise ConfigError(f"{self.path}: missing required key '{key}'")
        if len(items) > 1:
            raise ConfigError(
                f"{self.path}:{items[1].line}: key '{key}' given more than once")
        items[0].used = True
        return items[0]

    def get_all(self, key: str) -> List[Tuple[str, int]]:
        """Every occurrence of a repeatable key as (value, line) pairs."""
        items = self.entries.get(key, [])
        for it in items:
            it.used = True
        return [(it.value, it.line) for it in items]

    # -------- typed access --------

    def get_str(self, key: str, default: Optional[str] = None) -> str:
        if not self.has(key):
            if default is None:
                raise ConfigError(f"{self.path}: missing required key '{key}'")
            return default
        return self._take(key).value

    def get_scalar(self, key: str, default: Optional[float] = None) -> float:
        if not self.has(key):
            if default is None:
                raise ConfigError(f"{self.path}: missing required key '{key}'")
            return float(default)
        entry = self._take(key)
        try:
            return float(entry.value)
        except ValueError:
            raise ConfigError(
                f"{self.path}:{entry.line}: expected a number for '{key}', "
                f"got '{entry.value}'") from None

    def get_bool(self, key: str, default: Optional[bool] = None) -> bool:
        if not self.has(key):
            if default is None:
                raise ConfigError(f"{self.path}: missing required key '{key}'")
            return default
        entry = self._take(key)
        token = entry.value.strip().lower()
        if token in ("true", "1", "yes", "on"):
            return True
        if token in ("false", "0", "no", "off"):
            return False
        raise ConfigError(
            f"{self.path}:{entry.line}: expected true/false for '{key}', "
            f"got '{entry.value}'")

    def get_vector(self, key: str, length: int,
                   default: Optional[np.ndarray] = None) -> np.ndarray:
        if not self.has(key):
            if default is None:
                raise ConfigError(f"{self.path}: missing required key '{key}'")
            return np.asarray(default, dtype=float).copy()
        entry = self._take(key)
        vec = parse_floats(entry.value, self.path, entry.line)
        if vec.shape[0] != length:
            raise ConfigError(
                f"{self.path}:{entry.line}: '{key}' needs {length} numbers, "
                f"got {vec.shape[0]}")
        return vec

    def raise_on_unused(self, known_prefixes: Sequence[str] = ()) -> None:
        """Reject keys nothing consumed; catches typos in config files."""
        for key, items in self.entries.items():
            if any(key.startswith(p) for p in known_prefixes):
                continue
            for it in items:
                if not it.used:
                    raise ConfigError(
                        f"{self.path}:{it.line}: unknown key '{key}'")


def parse_floats(text: str, path: str = "<str>", line: int = 0) -> np.ndarray:
    try:
        return np.array([float(tok) for tok in text.split()], dtype=float)
    except ValueError:
        raise ConfigError(f"{path}:{line}: expected numbers, got '{text}'") from None


def parse_kv_file(path: str) -> KvFile:
    out = KvFile(path=str(path))
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file '{path}': {exc}") from None
    for lineno, raw in enumerate(lines, start=1):
        text = raw.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got '{text}'")
        key, value = text.split("=", 1)
        key = key.strip()
        value = value.strip()
        if not key:
            raise ConfigError(f"{path}:{lineno}: empty key")
        out.entries.setdefault(key, []).append(KvEntry(value=value, line=lineno))
    return out
