import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import ugp.wire as wire
from ugp.errors import ProtocolError
from ugp.rng import CounterRng


def test_step_golden_bytes():
    # length covers tag + payload: u32(3), tag 0x04, action u16 LE
    assert wire.encode(wire.Step(3)) == bytes([0x03, 0x00, 0x00, 0x00, 0x04, 0x03, 0x00])


def test_close_golden_bytes():
    assert wire.encode(wire.Close()) == bytes([0x01, 0x00, 0x00, 0x00, 0x07])


def test_reset_golden_bytes():
    encoded = wire.encode(wire.Reset(0x0102030405060708))
    assert encoded == bytes([0x09, 0, 0, 0, 0x03, 8, 7, 6, 5, 4, 3, 2, 1])


def test_obs_payload_layout():
    pixels = np.arange(6, dtype=np.uint8).reshape(1, 2, 3)
    encoded = wire.encode(wire.Obs(reward=1.5, terminal=True, pixels=pixels))
    # frame length = 1 tag + 8 reward + 1 terminal + 6 dims + 6 pixels
    assert int.from_bytes(encoded[:4], "little") == 22
    assert encoded[4] == wire.TAG_OBS
    assert encoded[13] == 1  # terminal flag after the f64 reward
    assert encoded[-6:] == bytes(range(6))


def sample_messages(rng: CounterRng):
    kind = rng.randint(7)
    if kind == 0:
        return wire.Hello("env-" + str(rng.randint(1000)))
    if kind == 1:
        return wire.HelloAck(rng.randint(100) + 1, rng.randint(300) + 1,
                             rng.randint(300) + 1, rng.randint(4) + 1)
    if kind == 2:
        return wire.Reset(rng.next_u64())
    if kind == 3:
        return wire.Step(rng.randint(65536))
    if kind == 4:
        h, w, c = rng.randint(8) + 1, rng.randint(8) + 1, rng.randint(3) + 1
        pixels = np.array(
            [rng.randint(256) for _ in range(h * w * c)], dtype=np.uint8
        ).reshape(h, w, c)
        return wire.Obs(reward=rng.uniform() * 100 - 50, terminal=rng.randint(2) == 1,
                        pixels=pixels)
    if kind == 5:
        return wire.Error(rng.randint(100), "err " + str(rng.randint(10_000)))
    return wire.Close()


def test_roundtrip_10k_randomized_messages():
    rng = CounterRng(2024)
    decoder = wire.StreamDecoder()
    for _ in range(10_000):
        msg = sample_messages(rng)
        out = decoder.feed(wire.encode(msg))
        assert len(out) == 1
        assert out[0] == msg
    assert decoder.pending_bytes == 0


def test_chunk_boundary_independence():
    rng = CounterRng(7)
    messages = [sample_messages(rng) for _ in range(200)]
    stream = b"".join(wire.encode(m) for m in messages)
    for trial in range(20):
        decoder = wire.StreamDecoder()
        out = []
        pos = 0
        chunk_rng = CounterRng(trial)
        while pos < len(stream):
            size = 1 + chunk_rng.randint(97)
            out.extend(decoder.feed(stream[pos : pos + size]))
            pos += size
        assert out == messages
        assert decoder.pending_bytes == 0


@settings(max_examples=300, deadline=None)
@given(st.text(max_size=64))
def test_hello_roundtrip_any_utf8(name):
    decoder = wire.StreamDecoder()
    (decoded,) = decoder.feed(wire.encode(wire.Hello(name)))
    assert decoded == wire.Hello(name)


def test_unknown_tag_rejected():
    with pytest.raises(ProtocolError):
        wire.decode_payload(0x99, b"")


def test_zero_length_frame_rejected():
    decoder = wire.StreamDecoder()
    with pytest.raises(ProtocolError):
        decoder.feed(b"\x00\x00\x00\x00")


def test_oversized_frame_rejected():
    decoder = wire.StreamDecoder()
    with pytest.raises(ProtocolError):
        decoder.feed(b"\xff\xff\xff\xff")


def test_obs_dim_mismatch_rejected():
    pixels = np.zeros((2, 2, 1), dtype=np.uint8)
    good = wire.encode(wire.Obs(reward=0.0, terminal=False, pixels=pixels))
    tampered = good[:5] + good[5:13] + good[13:14] + b"\x09\x00" + good[16:]
    decoder = wire.StreamDecoder()
    with pytest.raises(ProtocolError):
        decoder.feed(tampered)


def test_close_with_payload_rejected():
    frame = bytes([0x02, 0, 0, 0, 0x07, 0x01])
    with pytest.raises(ProtocolError):
        wire.StreamDecoder().feed(frame)


def test_partial_frames_buffered():
    decoder = wire.StreamDecoder()
    encoded = wire.encode(wire.Step(5))
    assert decoder.feed(encoded[:3]) == []
    assert decoder.feed(encoded[3:6]) == []
    assert decoder.feed(encoded[6:]) == [wire.Step(5)]
