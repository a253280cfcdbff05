"""Client side of the environment wire protocol.

A RemoteEnvironment speaks the protocol over one TCP connection and
implements the same contract as the built-in environments, so the engine
can train against external servers (real games, other platforms) without
knowing the difference. Strictly request-response; one connection per
environment instance.
"""

import socket

from . import wire
from .envs.core import ATARI_PROFILE, Environment, Observation
from .errors import RemoteEnvironmentError

DEFAULT_TIMEOUT = 10.0


def parse_address(address: str) -> tuple[str, int]:
    host, _, port = address.rpartition(":")
    if not host:
        return port, wire.DEFAULT_PORT
    return host, int(port)


class RemoteEnvironment(Environment):
    """EnvironmentContract over a protocol connection."""

    def __init__(self, sock: socket.socket, env_name: str, ack: wire.HelloAck):
        self._sock = sock
        self._decoder = wire.StreamDecoder()
        self.env_name = env_name
        self.action_count = ack.action_count
        self.obs_dims = (ack.height, ack.width, ack.channels)
        self.frame_profile = ATARI_PROFILE

    @classmethod
    def connect(
        cls, address: str, env_name: str, timeout: float = DEFAULT_TIMEOUT
    ) -> "RemoteEnvironment":
        host, port = parse_address(address)
        sock = socket.create_connection((host, port), timeout=timeout)
        sock.settimeout(timeout)
        try:
            sock.sendall(wire.encode(wire.Hello(env_name)))
            decoder = wire.StreamDecoder()
            ack = _read_message(sock, decoder)
            if isinstance(ack, wire.Error):
                raise RemoteEnvironmentError(
                    f"server rejected environment {env_name!r}: "
                    f"code {ack.code}: {ack.message}"
                )
            if not isinstance(ack, wire.HelloAck):
                raise RemoteEnvironmentError(f"expected HELLO_ACK, got {type(ack).__name__}")
        except Exception:
            sock.close()
            raise
        env = cls(sock, env_name, ack)
        env._decoder = decoder
        return env

    def _request(self, msg: wire.Message) -> wire.Obs:
        try:
            self._sock.sendall(wire.encode(msg))
            reply = _read_message(self._sock, self._decoder)
        except (OSError, socket.timeout) as exc:
            raise RemoteEnvironmentError(f"connection lost mid-episode: {exc}") from exc
        if isinstance(reply, wire.Error):
            raise RemoteEnvironmentError(f"server error code {reply.code}: {reply.message}")
        if not isinstance(reply, wire.Obs):
            raise RemoteEnvironmentError(f"expected OBS, got {type(reply).__name__}")
        return reply

    def reset(self, seed: int) -> Observation:
        obs = self._request(wire.Reset(seed & (2**64 - 1)))
        return Observation(reward=obs.reward, terminal=obs.terminal, pixels=obs.pixels)

    def step(self, action: int) -> Observation:
        obs = self._request(wire.Step(action))
        return Observation(reward=obs.reward, terminal=obs.terminal, pixels=obs.pixels)

    def close(self) -> None:
        try:
            self._sock.sendall(wire.encode(wire.Close()))
        except OSError:
            pass
        self._sock.close()


def _read_message(sock: socket.socket, decoder: wire.StreamDecoder) -> wire.Message:
    while True:
        data = sock.recv(65536)
        if not data:
            raise RemoteEnvironmentError("server closed the connection")
        messages = decoder.feed(data)
        if messages:
            if len(messages) > 1:
                raise RemoteEnvironmentError("server sent unsolicited extra messages")
            return messages[0]


def serve_check(address: str, timeout: float = DEFAULT_TIMEOUT) -> list[tuple[str, bool, str]]:
    """Conformance probe against a protocol server; returns (check, ok, detail)."""
    results: list[tuple[str, bool, str]] = []

    def record(name: str, ok: bool, detail: str = "") -> None:
        results.append((name, ok, detail))

    try:
        env = RemoteEnvironment.connect(address, "null-env", timeout=timeout)
    except (OSError, RemoteEnvironmentError) as exc:
        record("hello null-env", False, str(exc))
        return results
    record(
        "hello null-env",
        env.action_count == 2 and env.obs_dims == (1, 1, 1),
        f"actions={env.action_count} dims={env.obs_dims}",
    )

    try:
        first = env.reset(seed=0)
        second = env.reset(seed=0)
        same = (
            first.pixels.tobytes() == second.pixels.tobytes()
            and first.reward == second.reward
            and first.terminal == second.terminal
        )
        record("reset determinism", same, "RESET(0) twice returned identical OBS" if same
               else "OBS payloads differ across identical resets")
        stepped = env.step(0)
        record("step returns OBS", stepped.pixels.shape == first.pixels.shape,
               f"obs shape {stepped.pixels.shape}")
    except RemoteEnvironmentError as exc:
        record("reset/step", False, str(exc))
    finally:
        env.close()

    try:
        RemoteEnvironment.connect(address, "no-such-env-xyz", timeout=timeout)
        record("unknown env rejected", False, "server accepted a bogus environment name")
    except RemoteEnvironmentError as exc:
        record("unknown env rejected", "code 1" in str(exc), str(exc))
    except OSError as exc:
        record("unknown env rejected", False, str(exc))

    return results
