import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from v2xmerge.geo import VehicleState
from v2xmerge.v2x import (
    HEADER_SIZE,
    OBJECT_SIZE,
    BadMagic,
    Channel,
    ChannelConfig,
    PerceivedObject,
    Role,
    TrailingBytes,
    TruncatedPayload,
    UnsupportedVersion,
    V2xMessage,
    build_message,
    deserialize,
    dump_text,
    messages_equal,
    serialize,
)

finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)
states = st.builds(VehicleState, finite, finite, st.floats(-3.14, 3.14), finite, finite)


@st.composite
def covariances(draw):
    vals = draw(st.lists(finite, min_size=15, max_size=15))
    P = np.zeros((5, 5))
    P[np.triu_indices(5)] = vals
    return P + np.triu(P, 1).T


@st.composite
def messages(draw, max_objects=6):
    sender = draw(st.integers(0, 2**32 - 2))
    objs = draw(st.lists(st.builds(PerceivedObject,
                                   st.one_of(st.none(), st.integers(0, 2**32 - 2).filter(lambda i: i != sender)),
                                   states, covariances()), max_size=max_objects))
    return V2xMessage(sender, draw(st.integers(0, 2**32 - 1)), draw(st.floats(0, 1e6)),
                      draw(st.sampled_from(list(Role))), draw(states), draw(covariances()), tuple(objs))


def _empty(sender=1):
    return V2xMessage(sender, 0, 0.0, Role.MERGING, VehicleState(0, 0, 0, 0, 0), np.eye(5))


def test_field_widths():
    assert HEADER_SIZE == 4 + 2 + 4 + 4 + 8 + 1 + 40 + 120 + 2 == 185
    assert OBJECT_SIZE == 4 + 40 + 120
    assert len(serialize(_empty())) == 185


@given(messages())
def test_round_trip(msg):
    data = serialize(msg)
    assert len(data) == HEADER_SIZE + len(msg.perceived) * OBJECT_SIZE
    assert messages_equal(deserialize(data), msg)


@given(messages(max_objects=2))
def test_serialization_is_deterministic(msg):
    assert serialize(msg) == serialize(deserialize(serialize(msg)))


def test_malformed_payloads_are_rejected():
    data = serialize(_empty())
    with pytest.raises(BadMagic):
        deserialize(b"XXXX" + data[4:])
    with pytest.raises(UnsupportedVersion):
        deserialize(data[:4] + struct.pack("<H", 9) + data[6:])
    with pytest.raises(TruncatedPayload):
        deserialize(data[:100])
    with pytest.raises(TrailingBytes):
        deserialize(data + b"\0")
    obj = PerceivedObject(2, VehicleState(1, 1, 0, 1, 0), np.eye(5))
    full = serialize(V2xMessage(1, 0, 0.0, Role.MAIN_LANE, VehicleState(0, 0, 0, 0, 0), np.eye(5), (obj,)))
    with pytest.raises(TruncatedPayload):
        deserialize(full[:-1])


def test_sender_is_dropped_from_perceived_list():
    objs = [PerceivedObject(1, VehicleState(0, 0, 0, 0, 0), np.eye(5)),
            PerceivedObject(2, VehicleState(5, 0, 0, 0, 0), np.eye(5))]
    msg = build_message(1, 0, VehicleState(0, 0, 0, 1, 0), np.eye(5), objs, Role.MAIN_LANE, 0.0)
    assert [o.target_id for o in msg.perceived] == [2]
    with pytest.raises(ValueError):
        V2xMessage(1, 0, 0.0, Role.MAIN_LANE, VehicleState(0, 0, 0, 0, 0), np.eye(5), tuple(objs))


def test_text_dump_names_sender():
    assert "1" in dump_text(_empty())


def test_channel_range_delay_and_order(rng):
    ch = Channel(ChannelConfig(delay=0.05, comms_range=100.0))
    pos = {1: (0.0, 0.0), 2: (50.0, 0.0), 3: (150.0, 0.0)}
    out = ch.broadcast(_empty(1), pos, [1, 2, 3], rng)
    assert [d.receiver_id for d in out] == [2]
    assert out[0].time == pytest.approx(0.05)
    assert ch.pop_due(0.04) == []
    assert len(ch.pop_due(0.05)) == 1


def test_channel_drops_everything_at_probability_one(rng):
    ch = Channel(ChannelConfig(drop_probability=1.0))
    assert ch.broadcast(_empty(1), {1: (0, 0), 2: (1, 0)}, [2], rng) == []
    assert ch.dropped == 1


def test_jitter_never_reorders_a_stream(rng):
    ch = Channel(ChannelConfig(delay=0.05, jitter=0.3))
    pos = {1: (0.0, 0.0), 2: (10.0, 0.0)}
    for k in range(50):
        ch.broadcast(V2xMessage(1, k, 0.01 * k, Role.MAIN_LANE, VehicleState(0, 0, 0, 0, 0), np.eye(5)),
                     pos, [2], rng)
    seqs = [d.message.sequence for d in ch.pop_due(100.0)]
    assert seqs == sorted(seqs)


def test_channel_config_validation():
    with pytest.raises(ValueError):
        ChannelConfig(drop_probability=1.5)
    with pytest.raises(ValueError):
        ChannelConfig(period=0.0)
