"""Binary wire protocol for remote environment sessions.

Framing: every message is a little-endian u32 length covering tag plus
payload, then a u8 tag, then the payload. Payload layouts:

  0x01 HELLO      env name, UTF-8 (length implied by the frame)
  0x02 HELLO_ACK  action_count u16, height u16, width u16, channels u16
  0x03 RESET      seed u64
  0x04 STEP       action u16
  0x05 OBS        reward f64, terminal u8, height u16, width u16,
                  channels u16, then H*W*C raw u8 pixels
  0x06 ERROR      code u16, UTF-8 text
  0x07 CLOSE      empty

All integers little-endian.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ProtocolError

TAG_HELLO = 0x01
TAG_HELLO_ACK = 0x02
TAG_RESET = 0x03
TAG_STEP = 0x04
TAG_OBS = 0x05
TAG_ERROR = 0x06
TAG_CLOSE = 0x07

MAX_FRAME = 64 * 1024 * 1024
DEFAULT_PORT = 9732


@dataclass(frozen=True)
class Hello:
    env_name: str


@dataclass(frozen=True)
class HelloAck:
    action_count: int
    height: int
    width: int
    channels: int


@dataclass(frozen=True)
class Reset:
    seed: int


@dataclass(frozen=True)
class Step:
    action: int


@dataclass
class Obs:
    reward: float
    terminal: bool
    pixels: np.ndarray = field(repr=False)  # (H, W, C) uint8

    def __eq__(self, other):
        return (
            isinstance(other, Obs)
            and self.reward == other.reward
            and self.terminal == other.terminal
            and self.pixels.shape == other.pixels.shape
            and np.array_equal(self.pixels, other.pixels)
        )


@dataclass(frozen=True)
class Error:
    code: int
    message: str


@dataclass(frozen=True)
class Close:
    pass


Message = Hello | HelloAck | Reset | Step | Obs | Error | Close


def _payload(msg: Message) -> tuple[int, bytes]:
    if isinstance(msg, Hello):
        return TAG_HELLO, msg.env_name.encode("utf-8")
    if isinstance(msg, HelloAck):
        return TAG_HELLO_ACK, struct.pack(
            "<HHHH", msg.action_count, msg.height, msg.width, msg.channels
        )
    if isinstance(msg, Reset):
        return TAG_RESET, struct.pack("<Q", msg.seed)
    if isinstance(msg, Step):
        return TAG_STEP, struct.pack("<H", msg.action)
    if isinstance(msg, Obs):
        pixels = np.ascontiguousarray(msg.pixels, dtype=np.uint8)
        if pixels.ndim != 3:
            raise ProtocolError(f"OBS pixels must be H x W x C, got shape {pixels.shape}")
        h, w, c = pixels.shape
        head = struct.pack("<dBHHH", msg.reward, 1 if msg.terminal else 0, h, w, c)
        return TAG_OBS, head + pixels.tobytes()
    if isinstance(msg, Error):
        return TAG_ERROR, struct.pack("<H", msg.code) + msg.message.encode("utf-8")
    if isinstance(msg, Close):
        return TAG_CLOSE, b""
    raise ProtocolError(f"cannot encode {type(msg).__name__}")


def encode(msg: Message) -> bytes:
    tag, payload = _payload(msg)
    return struct.pack("<I", 1 + len(payload)) + bytes([tag]) + payload


def decode_payload(tag: int, payload: bytes) -> Message:
    try:
        if tag == TAG_HELLO:
            return Hello(payload.decode("utf-8"))
        if tag == TAG_HELLO_ACK:
            return HelloAck(*struct.unpack("<HHHH", payload))
        if tag == TAG_RESET:
            return Reset(struct.unpack("<Q", payload)[0])
        if tag == TAG_STEP:
            return Step(struct.unpack("<H", payload)[0])
        if tag == TAG_OBS:
            reward, terminal, h, w, c = struct.unpack_from("<dBHHH", payload, 0)
            raw = payload[15:]
            if len(raw) != h * w * c:
                raise ProtocolError(
                    f"OBS declares {h}x{w}x{c} = {h * w * c} bytes but carries {len(raw)}"
                )
            pixels = np.frombuffer(raw, dtype=np.uint8).reshape(h, w, c).copy()
            return Obs(reward=reward, terminal=bool(terminal), pixels=pixels)
        if tag == TAG_ERROR:
            (code,) = struct.unpack_from("<H", payload, 0)
            return Error(code, payload[2:].decode("utf-8"))
        if tag == TAG_CLOSE:
            if payload:
                raise ProtocolError("CLOSE carries no payload")
            return Close()
    except (struct.error, UnicodeDecodeError) as exc:
        raise ProtocolError(f"malformed payload for tag 0x{tag:02x}") from exc
    raise ProtocolError(f"unknown message tag 0x{tag:02x}")


class StreamDecoder:
    """Incremental frame decoder; feed() accepts arbitrary chunk boundaries."""

    def __init__(self):
        self._buf = bytearray()

    def feed(self, data: bytes) -> list[Message]:
        self._buf.extend(data)
        out: list[Message] = []
        while True:
            if len(self._buf) < 4:
                return out
            (length,) = struct.unpack_from("<I", self._buf, 0)
            if length < 1 or length > MAX_FRAME:
                raise ProtocolError(f"invalid frame length {length}")
            if len(self._buf) < 4 + length:
                return out
            frame = bytes(self._buf[4 : 4 + length])
            del self._buf[: 4 + length]
            out.append(decode_payload(frame[0], frame[1:]))

    @property
    def pending_bytes(self) -> int:
        return len(self._buf)
