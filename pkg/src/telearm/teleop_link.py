"""Wire protocol and transports between the two stations.

Frame layout, little endian throughout:

    offset  size  field
    0       2     magic "TL"
    2       1     kind
    3       8     sequence, u64, per-kind monotonic
    11      8     timestamp, u64 microseconds on the sender clock
    19      ...   payload (see below)
    end-4   4     CRC32 over everything before it

Payloads are packed float64 vectors.  Hand goals carry position xyz
plus an orientation quaternion wxyz (7 doubles); telemetry carries
joint positions; wrenches carry force xyz torque xyz.  Hand command
and feedback frames start with one count byte so both five and nine
actuator hands fit the same frame kind.

Delivery is modelled sender side: every frame gets a release timestamp
(transit delay, optional uniform jitter, optional drop) when it is
sent, and the receiving inbox holds it until the receiver clock passes
that stamp.  Out-of-date frames (a newer sequence of the same kind was
already delivered) are discarded on release, never delivered late.
All timing is integer microseconds, so the loopback transport and the
socket transport replay byte-for-byte identically given the same
seeds: the wire only moves bytes, never reorders the clock.
"""

from __future__ import annotations

import enum
import heapq
import socket
import struct
import zlib
from typing import Dict, List, Optional, Tuple

import numpy as np

from .arm_model import Pose6D

MAGIC = b"TL"
HEADER = struct.Struct("<2sBQQ")      # magic, kind, sequence, timestamp_us
CRC = struct.Struct("<I")
TICK_US = 1000                        # control tick, the minimum transit time


class ChecksumError(Exception):
    """Frame arrived with a bad CRC."""


class MalformedFrame(Exception):
    """Frame structure is wrong independent of its checksum."""


class MessageKind(enum.IntEnum):
    HAND_GOAL = 1          # operator -> avatar, 7 doubles
    HAND_COMMAND = 2       # operator -> avatar, count byte + closures
    AVATAR_TELEMETRY = 3   # avatar -> operator, joint positions
    AVATAR_WRENCH = 4      # avatar -> operator, 6 doubles
    HAND_FEEDBACK = 5      # avatar -> operator, count byte + currents

COUNTED_KINDS = (MessageKind.HAND_COMMAND, MessageKind.HAND_FEEDBACK)


class Frame:
    """Decoded frame: kind, sequence, sender timestamp, float payload."""

    __slots__ = ("kind", "sequence", "timestamp_us", "values")

    def __init__(self, kind: MessageKind, sequence: int, timestamp_us: int,
                 values: np.ndarray):
        self.kind = MessageKind(kind)
        self.sequence = int(sequence)
        self.timestamp_us = int(timestamp_us)
        self.values = np.asarray(values, dtype=float)

    def __repr__(self):
        return (f"Frame({self.kind.name}, seq={self.sequence}, "
                f"t={self.timestamp_us}us, n={self.values.shape[0]})")


def encode(frame: Frame) -> bytes:
    head = HEADER.pack(MAGIC, int(frame.kind), frame.sequence,
                       frame.timestamp_us)
    body = frame.values.astype("<f8").tobytes()
    if frame.kind in COUNTED_KINDS:
        count = frame.values.shape[0]
        if count > 255:
            raise MalformedFrame(f"{frame.kind.name} with {count} values")
        body = bytes([count]) + body
    data = head + body
    return data + CRC.pack(zlib.crc32(data))


def decode(data: bytes) -> Frame:
    if len(data) < HEADER.size + CRC.size:
        raise MalformedFrame(f"frame of {len(data)} bytes is too short")
    magic, kind_byte, sequence, timestamp_us = HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise MalformedFrame(f"bad magic {magic!r}")
    try:
        kind = MessageKind(kind_byte)
    except ValueError:
        raise MalformedFrame(f"unknown frame kind {kind_byte}") from None
    (crc,) = CRC.unpack_from(data, len(data) - CRC.size)
    if crc != zlib.crc32(data[:-CRC.size]):
        raise ChecksumError(f"{kind.name} frame failed its checksum")
    body = data[HEADER.size:-CRC.size]
    if kind in COUNTED_KINDS:
        if not body:
            raise MalformedFrame(f"{kind.name} frame missing its count byte")
        count, body = body[0], body[1:]
        if len(body) != 8 * count:
            raise MalformedFrame(
                f"{kind.name} count byte says {count}, payload holds "
                f"{len(body) // 8}")
    elif len(body) % 8 != 0:
        raise MalformedFrame(f"{kind.name} payload of {len(body)} bytes")
    values = np.frombuffer(body, dtype="<f8").astype(float)
    expected = {MessageKind.HAND_GOAL: 7, MessageKind.AVATAR_WRENCH: 6}
    if kind in expected and values.shape[0] != expected[kind]:
        raise MalformedFrame(
            f"{kind.name} needs {expected[kind]} values, got {values.shape[0]}")
    return Frame(kind, sequence, timestamp_us, values)


# -------- typed helpers --------


def hand_goal_frame(sequence: int, timestamp_us: int, pose: Pose6D) -> Frame:
    return Frame(MessageKind.HAND_GOAL, sequence, timestamp_us,
                 pose.as_vector())


def pose_from_frame(frame: Frame) -> Pose6D:
    return Pose6D.from_vector(frame.values)


def telemetry_frame(sequence: int, timestamp_us: int, q: np.ndarray) -> Frame:
    return Frame(MessageKind.AVATAR_TELEMETRY, sequence, timestamp_us, q)


def wrench_frame(sequence: int, timestamp_us: int, w: np.ndarray) -> Frame:
    return Frame(MessageKind.AVATAR_WRENCH, sequence, timestamp_us, w)


def hand_command_frame(sequence: int, timestamp_us: int,
                       closures: np.ndarray) -> Frame:
    return Frame(MessageKind.HAND_COMMAND, sequence, timestamp_us, closures)


def hand_feedback_frame(sequence: int, timestamp_us: int,
                        currents: np.ndarray) -> Frame:
    return Frame(MessageKind.HAND_FEEDBACK, sequence, timestamp_us, currents)


# ====================== delivery model ======================


class DelayModel:
    """Sender-side release stamping: delay, uniform jitter, drops.

    Stamps are integer microseconds and never earlier than the next
    control tick, so even a zero-delay link is causal (sent this tick,
    seen next tick).
    """

    def __init__(self, delay_ms: float = 0.0, jitter_ms: float = 0.0,
                 drop_rate: float = 0.0, seed: int = 0,
                 tick_us: int = TICK_US):
        if delay_ms < 0.0 or jitter_ms < 0.0:
            raise ValueError("delay and jitter must be non-negative")
        if not 0.0 <= drop_rate < 1.0:
            raise ValueError("drop rate must be in [0, 1)")
        self.delay_us = int(round(delay_ms * 1000.0))
        self.jitter_us = int(round(jitter_ms * 1000.0))
        self.drop_rate = float(drop_rate)
        self.tick_us = int(tick_us)
        self.rng = np.random.default_rng(seed)
        self.dropped = 0

    def schedule(self, send_us: int) -> Optional[int]:
        """Release stamp for a frame sent now, or None if it is lost."""
        if self.drop_rate > 0.0 and self.rng.uniform() < self.drop_rate:
            self.dropped += 1
            return None
        jitter = 0
        if self.jitter_us > 0:
            jitter = int(self.rng.integers(0, self.jitter_us + 1))
        return max(send_us + self.delay_us + jitter, send_us + self.tick_us)


class Inbox:
    """Holds stamped frames until their release time; drops stale ones."""

    def __init__(self):
        self._heap: List[Tuple[int, int, bytes]] = []
        self._counter = 0
        self._latest_seq: Dict[MessageKind, int] = {}
        self.stale_discarded = 0

    def push(self, release_us: int, data: bytes) -> None:
        heapq.heappush(self._heap, (int(release_us), self._counter, data))
        self._counter += 1

    def collect(self, now_us: int) -> List[Frame]:
        """All frames due by now, in release order, minus stale ones."""
        out = []
        while self._heap and self._heap[0][0] <= now_us:
            _, _, data = heapq.heappop(self._heap)
            frame = decode(data)
            newest = self._latest_seq.get(frame.kind, -1)
            if frame.sequence <= newest:
                self.stale_discarded += 1
                continue
            self._latest_seq[frame.kind] = frame.sequence
            out.append(frame)
        return out


class LinkEndpoint:
    """One station's side of the link: outgoing stamping plus an inbox."""

    def __init__(self, delay: DelayModel):
        self.delay = delay
        self.inbox = Inbox()
        self._outgoing: List[Tuple[int, bytes]] = []
        self.bytes_sent = 0
        self.frames_sent = 0

    def put(self, frame: Frame, now_us: int) -> None:
        data = encode(frame)
        self.bytes_sent += len(data)
        self.frames_sent += 1
        release = self.delay.schedule(now_us)
        if release is not None:
            self._outgoing.append((release, data))

    def take_outgoing(self) -> List[Tuple[int, bytes]]:
        out, self._outgoing = self._outgoing, []
        return out

    def deliver(self, entries: List[Tuple[int, bytes]]) -> None:
        for release_us, data in entries:
            self.inbox.push(release_us, data)

    def collect(self, now_us: int) -> List[Frame]:
        return self.inbox.collect(now_us)


class LoopbackLink:
    """Both endpoints in one process; transfer() moves each tick's
    outgoing frames across.  Semantics match the socket link exactly
    because delivery timing lives in the stamps, not the transport."""

    def __init__(self, operator_delay: DelayModel, avatar_delay: DelayModel):
        self.operator = LinkEndpoint(operator_delay)
        self.avatar = LinkEndpoint(avatar_delay)

    def transfer(self) -> None:
        self.avatar.deliver(self.operator.take_outgoing())
        self.operator.deliver(self.avatar.take_outgoing())


# ====================== socket transport ======================


BUNDLE_HEAD = struct.Struct("<QI")    # tick index, entry count
ENTRY_HEAD = struct.Struct("<QI")     # release stamp us, frame length


class SocketLink:
    """Lockstep bundle exchange over TCP for the two-process mode.

    Each tick both sides send one bundle (possibly empty) and block for
    the peer's bundle of the same tick.  Blocking keeps the two
    processes in lockstep, which is what makes separate processes
    reproduce the loopback run tick for tick.
    """

    def __init__(self, sock: socket.socket):
        self.sock = sock
        self.sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)

    @staticmethod
    def bind_listener(host: str, port: int) -> socket.socket:
        """Bound listening socket; port 0 picks a free port."""
        srv = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        srv.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        srv.bind((host, port))
        srv.listen(1)
        return srv

    @classmethod
    def accept(cls, listener: socket.socket) -> "SocketLink":
        conn, _ = listener.accept()
        listener.close()
        return cls(conn)

    @classmethod
    def listen(cls, host: str, port: int) -> "SocketLink":
        return cls.accept(cls.bind_listener(host, port))

    @classmethod
    def connect(cls, host: str, port: int, timeout: float = 30.0) -> "SocketLink":
        return cls(socket.create_connection((host, port), timeout=timeout))

    def exchange(self, tick: int,
                 entries: List[Tuple[int, bytes]]) -> List[Tuple[int, bytes]]:
        self._send_bundle(tick, entries)
        peer_tick, peer_entries = self._recv_bundle()
        if peer_tick != tick:
            raise MalformedFrame(
                f"lockstep broken: peer at tick {peer_tick}, local {tick}")
        return peer_entries

    def close(self) -> None:
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()

    def _send_bundle(self, tick: int, entries: List[Tuple[int, bytes]]) -> None:
        parts = [BUNDLE_HEAD.pack(tick, len(entries))]
        for release_us, data in entries:
            parts.append(ENTRY_HEAD.pack(release_us, len(data)))
            parts.append(data)
        self.sock.sendall(b"".join(parts))

    def _recv_bundle(self) -> Tuple[int, List[Tuple[int, bytes]]]:
        tick, count = BUNDLE_HEAD.unpack(self._recv_exact(BUNDLE_HEAD.size))
        entries = []
        for _ in range(count):
            release_us, length = ENTRY_HEAD.unpack(
                self._recv_exact(ENTRY_HEAD.size))
            entries.append((release_us, self._recv_exact(length)))
        return tick, entries

    def _recv_exact(self, n: int) -> bytes:
        chunks = []
        remaining = n
        while remaining > 0:
            chunk = self.sock.recv(remaining)
            if not chunk:
                raise ConnectionError("peer closed during bundle")
            chunks.append(chunk)
            remaining -= len(chunk)
        return b"".join(chunks)
