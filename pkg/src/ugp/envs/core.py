"""Environment handler layer: preprocessing and 4-frame state stacking.

A handler owns exactly one environment instance, converts raw observations
into fixed-shape float frames and maintains the stack of the four most
recent frames (newest last) that forms the network's input state.
"""

from collections import deque
from dataclasses import dataclass

import numpy as np

from ..errors import ContractViolation, ShapeError

STACK_DEPTH = 4
TARGET_SIZE = 84
LUMA_WEIGHTS = (0.299, 0.587, 0.114)


@dataclass(frozen=True)
class FrameProfile:
    """How raw observations become frames: "image" -> grayscale 84x84 in
    [0, 1]; "vector" -> identity on a 1-D float feature vector."""

    kind: str
    frame_shape: tuple[int, ...]

    @property
    def state_shape(self) -> tuple[int, ...]:
        return (STACK_DEPTH, *self.frame_shape)


ATARI_PROFILE = FrameProfile("image", (TARGET_SIZE, TARGET_SIZE))


def vector_profile(dim: int) -> FrameProfile:
    return FrameProfile("vector", (dim,))


@dataclass
class Observation:
    """One raw environment emission. Exactly one of pixels/vector is set."""

    reward: float
    terminal: bool
    pixels: np.ndarray | None = None  # H x W x C uint8
    vector: np.ndarray | None = None  # flat float features


class Environment:
    """Abstract environment: deterministic under (seed, action sequence)."""

    action_count: int
    frame_profile: FrameProfile

    def reset(self, seed: int) -> Observation:
        raise NotImplementedError

    def step(self, action: int) -> Observation:
        raise NotImplementedError

    def close(self) -> None:
        pass


def _axis_weights(n_in: int, n_out: int) -> np.ndarray:
    """Box-overlap weights for area-average resampling along one axis."""
    w = np.zeros((n_out, n_in))
    scale = n_in / n_out
    for i in range(n_out):
        start = i * scale
        end = start + scale
        for r in range(int(np.floor(start)), min(int(np.ceil(end)), n_in)):
            overlap = min(end, r + 1.0) - max(start, float(r))
            if overlap > 0:
                w[i, r] = overlap / scale
    return w

_weight_cache: dict[tuple[int, int], np.ndarray] = {}


def area_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Exact area-average resize of a 2-D image (box filter, any ratio)."""
    h, w = img.shape
    if (h, out_h) not in _weight_cache:
        _weight_cache[(h, out_h)] = _axis_weights(h, out_h)
    if (w, out_w) not in _weight_cache:
        _weight_cache[(w, out_w)] = _axis_weights(w, out_w)
    rows = _weight_cache[(h, out_h)]
    cols = _weight_cache[(w, out_w)]
    return rows @ img @ cols.T


def preprocess(obs: Observation, profile: FrameProfile) -> np.ndarray:
    """Raw observation -> one frame of profile.frame_shape, float64."""
    if profile.kind == "vector":
        if obs.vector is None:
            raise ShapeError("vector profile but observation carries no feature vector")
        frame = np.asarray(obs.vector, dtype=np.float64)
        if frame.shape != profile.frame_shape:
            raise ShapeError(f"feature vector {frame.shape} != profile {profile.frame_shape}")
        return frame

    if obs.pixels is None:
        raise ShapeError("image profile but observation carries no pixels")
    pixels = np.asarray(obs.pixels)
    if pixels.ndim != 3:
        raise ShapeError(f"expected H x W x C pixels, got shape {pixels.shape}")
    if pixels.shape[2] == 3:
        gray = (
            LUMA_WEIGHTS[0] * pixels[:, :, 0].astype(np.float64)
            + LUMA_WEIGHTS[1] * pixels[:, :, 1].astype(np.float64)
            + LUMA_WEIGHTS[2] * pixels[:, :, 2].astype(np.float64)
        )
    elif pixels.shape[2] == 1:
        gray = pixels[:, :, 0].astype(np.float64)
    else:
        raise ShapeError(f"expected 1 or 3 channels, got {pixels.shape[2]}")
    resized = area_resize(gray, *profile.frame_shape)
    return resized / 255.0


class EnvironmentHandler:
    """Mediates one actor's interaction with one environment instance."""

    def __init__(self, env: Environment):
        self.env = env
        self.profile = env.frame_profile
        self._frames: deque[np.ndarray] | None = None
        self._terminal = False

    @property
    def state_shape(self) -> tuple[int, ...]:
        return self.profile.state_shape

    def _state(self) -> np.ndarray:
        return np.stack(self._frames)

    def reset(self, seed: int) -> np.ndarray:
        """Reset the environment; the stack starts as 4 copies of frame 0."""
        obs = self.env.reset(seed)
        frame = preprocess(obs, self.profile)
        self._frames = deque([frame] * STACK_DEPTH, maxlen=STACK_DEPTH)
        self._terminal = False
        return self._state()

    def step(self, action: int) -> tuple[np.ndarray, float, bool]:
        """Execute one action; returns (stacked state, reward, terminal)."""
        if self._frames is None:
            raise ContractViolation("step before reset")
        if self._terminal:
            raise ContractViolation("step after terminal; reset the handler first")
        obs = self.env.step(action)
        self._frames.append(preprocess(obs, self.profile))
        self._terminal = obs.terminal
        return self._state(), obs.reward, obs.terminal
