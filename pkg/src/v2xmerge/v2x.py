"""Combined CAM + CPM message, its binary encoding and a broadcast channel.

Wire layout (little-endian, fixed width)::

    magic "V2XM" | version u16 | sender_id u32 | sequence u32 |
    generation_time f64 | role u8 | sender state 5 x f64 |
    sender covariance upper triangle 15 x f64 | perceived count u16 |
    per object: id u32 (0xFFFFFFFF = anonymous) | state 5 x f64 |
                covariance upper triangle 15 x f64
"""

from __future__ import annotations

import heapq
import math
import struct
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .geo import VehicleState, compose_many
from .sensors import Detection

MAGIC = b"V2XM"
VERSION = 1
ANONYMOUS_ID = 0xFFFFFFFF

_HEADER = struct.Struct("<4sHIIdB5d15dH")
_OBJECT = struct.Struct("<I5d15d")
_TRIU = np.triu_indices(5)

HEADER_SIZE = _HEADER.size  # 185
OBJECT_SIZE = _OBJECT.size


class Role(IntEnum):
    UNKNOWN = 0
    MAIN_LANE = 1
    MERGING = 2
    COOPERATIVE = 3


class WireFormatError(ValueError):
    pass


class BadMagic(WireFormatError):
    pass


class UnsupportedVersion(WireFormatError):
    pass


class TruncatedPayload(WireFormatError):
    pass


class TrailingBytes(WireFormatError):
    pass


@dataclass(frozen=True, eq=False)
class PerceivedObject:
    target_id: Optional[int]
    state: VehicleState
    cov: np.ndarray


@dataclass(frozen=True, eq=False)
class V2xMessage:
    sender_id: int
    sequence: int
    generation_time: float
    role: Role
    sender_state: VehicleState
    sender_cov: np.ndarray
    perceived: Tuple[PerceivedObject, ...] = ()

    def __post_init__(self):
        if self.generation_time < 0:
            raise ValueError("generation_time must be >= 0")
        object.__setattr__(self, "role", Role(self.role))
        object.__setattr__(self, "perceived", tuple(self.perceived))
        if any(p.target_id == self.sender_id for p in self.perceived):
            raise ValueError("perceived list must not contain the sender")


def messages_equal(a: V2xMessage, b: V2xMessage) -> bool:
    if (a.sender_id, a.sequence, a.generation_time, a.role, a.sender_state) != (
        b.sender_id, b.sequence, b.generation_time, b.role, b.sender_state
    ):
        return False
    if not np.array_equal(a.sender_cov, b.sender_cov) or len(a.perceived) != len(b.perceived):
        return False
    return all(
        p.target_id == q.target_id and p.state == q.state and np.array_equal(p.cov, q.cov)
        for p, q in zip(a.perceived, b.perceived)
    )


def compose_detections(observer: VehicleState, observer_cov: np.ndarray, detections: Iterable[Detection]):
    """World-frame objects for the CPM part: composed state plus propagated covariance."""
    ms = [d.measurement for d in detections]
    if not ms:
        return []
    states, covs = compose_many(observer, observer_cov, [m.as_array() for m in ms], [m.cov for m in ms])
    return [PerceivedObject(m.target_id, VehicleState.from_array(x), C) for m, x, C in zip(ms, states, covs)]


def build_message(sender_id: int, sequence: int, sender_state: VehicleState, sender_cov: np.ndarray,
                  perceived: Sequence[PerceivedObject], role: Role, clock: float) -> V2xMessage:
    return V2xMessage(sender_id, sequence, clock, role, sender_state, np.array(sender_cov, dtype=float),
                      tuple(p for p in perceived if p.target_id != sender_id))


def serialize(msg: V2xMessage) -> bytes:
    s = msg.sender_state
    parts = [
        _HEADER.pack(MAGIC, VERSION, msg.sender_id, msg.sequence, msg.generation_time, int(msg.role),
                     s.x, s.y, s.psi, s.vx, s.vy, *np.asarray(msg.sender_cov)[_TRIU], len(msg.perceived))
    ]
    for p in msg.perceived:
        st = p.state
        tid = ANONYMOUS_ID if p.target_id is None else p.target_id
        parts.append(_OBJECT.pack(tid, st.x, st.y, st.psi, st.vx, st.vy, *np.asarray(p.cov)[_TRIU]))
    return b"".join(parts)


def _unpack_cov(vals) -> np.ndarray:
    P = np.zeros((5, 5))
    P[_TRIU] = vals
    return P + np.triu(P, 1).T


def deserialize(data: bytes) -> V2xMessage:
    if len(data) < 6:
        raise TruncatedPayload(f"{len(data)} bytes, header needs {HEADER_SIZE}")
    if data[:4] != MAGIC:
        raise BadMagic(repr(bytes(data[:4])))
    version = struct.unpack_from("<H", data, 4)[0]
    if version != VERSION:
        raise UnsupportedVersion(str(version))
    if len(data) < HEADER_SIZE:
        raise TruncatedPayload(f"{len(data)} bytes, header needs {HEADER_SIZE}")
    h = _HEADER.unpack_from(data, 0)
    sender_id, seq, gen_time, role = h[2], h[3], h[4], h[5]
    sender_state = VehicleState(*h[6:11])
    sender_cov = _unpack_cov(h[11:26])
    count = h[26]
    need = HEADER_SIZE + count * OBJECT_SIZE
    if len(data) < need:
        raise TruncatedPayload(f"{len(data)} bytes, {count} objects need {need}")
    if len(data) > need:
        raise TrailingBytes(f"{len(data) - need} unexpected bytes")
    perceived = []
    for i in range(count):
        o = _OBJECT.unpack_from(data, HEADER_SIZE + i * OBJECT_SIZE)
        tid = None if o[0] == ANONYMOUS_ID else o[0]
        perceived.append(PerceivedObject(tid, VehicleState(*o[1:6]), _unpack_cov(o[6:21])))
    return V2xMessage(sender_id, seq, gen_time, Role(role), sender_state, sender_cov, tuple(perceived))


def dump_text(msg: V2xMessage) -> str:
    """One-line human-readable rendering for debugging logs."""
    s = msg.sender_state
    objs = ";".join(
        f"{'anon' if p.target_id is None else p.target_id}@{p.state.x:.2f},{p.state.y:.2f}" for p in msg.perceived
    )
    return (f"t={msg.generation_time:.3f} sender={msg.sender_id} seq={msg.sequence} role={msg.role.name} "
            f"pos={s.x:.2f},{s.y:.2f} v={s.vx:.2f},{s.vy:.2f} objs=[{objs}]")


# --------------------------------------------------------------------------
# channel


@dataclass(frozen=True)
class ChannelConfig:
    delay: float = 0.05
    period: float = 0.1
    comms_range: float = 400.0
    drop_probability: float = 0.0
    jitter: float = 0.0

    def __post_init__(self):
        if self.delay < 0 or self.jitter < 0:
            raise ValueError("delay and jitter must be >= 0")
        if self.period <= 0:
            raise ValueError("period must be > 0")
        if not 0.0 <= self.drop_probability <= 1.0:
            raise ValueError("drop_probability must be in [0, 1]")


@dataclass(frozen=True, order=True)
class Delivery:
    time: float
    order: int
    receiver_id: int = field(compare=False)
    message: V2xMessage = field(compare=False)


class Channel:
    """Single-owner event queue of scheduled deliveries."""

    def __init__(self, config: ChannelConfig):
        self.config = config
        self._queue: List[Delivery] = []
        self._counter = 0
        self._last: Dict[Tuple[int, int], float] = {}
        self.sent = 0
        self.dropped = 0

    def broadcast(self, msg: V2xMessage, positions: Mapping[int, Tuple[float, float]],
                  receivers: Iterable[int], rng: np.random.Generator) -> List[Delivery]:
        """Schedule ``msg`` to every receiver within range of the sender."""
        cfg = self.config
        sx, sy = positions[msg.sender_id]
        out = []
        self.sent += 1
        for rid in sorted(receivers):
            if rid == msg.sender_id or rid not in positions:
                continue
            rx, ry = positions[rid]
            if math.hypot(rx - sx, ry - sy) > cfg.comms_range:
                continue
            drop = rng.random() < cfg.drop_probability
            extra = rng.uniform(0.0, cfg.jitter) if cfg.jitter > 0 else 0.0
            if drop:
                self.dropped += 1
                continue
            t = msg.generation_time + cfg.delay + extra
            # jitter must not reorder a sender->receiver stream
            key = (msg.sender_id, rid)
            t = max(t, self._last.get(key, -math.inf))
            self._last[key] = t
            d = Delivery(t, self._counter, rid, msg)
            self._counter += 1
            heapq.heappush(self._queue, d)
            out.append(d)
        return out

    def pop_due(self, clock: float) -> List[Delivery]:
        out = []
        while self._queue and self._queue[0].time <= clock + 1e-9:
            out.append(heapq.heappop(self._queue))
        return out

    def __len__(self) -> int:
        return len(self._queue)


def broadcast(msg: V2xMessage, positions, receivers, channel: ChannelConfig, rng) -> List[Delivery]:
    """Functional form of :meth:`Channel.broadcast` for one-off use."""
    return Channel(channel).broadcast(msg, positions, receivers, rng)
