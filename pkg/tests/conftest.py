import numpy as np
import pytest

from ugp import net
from ugp.envs.core import Environment, Observation, vector_profile
from ugp.net import LayerSpec


@pytest.fixture
def tiny_params():
    """Two-task dense net small enough for finite-difference sweeps."""
    return net.build_network(
        [LayerSpec.dense(6), LayerSpec.relu()],
        {"alpha": 3, "beta": 4},
        seed=11,
        input_shape=(4, 5),
    )


@pytest.fixture
def tiny_state():
    return np.linspace(0.05, 0.95, 20).reshape(4, 5)


class SequenceEnv(Environment):
    """Deterministic vector env emitting frames [seed, step, seed, step] / 100.

    Used to test frame stacking: frames are distinguishable by step index.
    """

    def __init__(self, episode_length: int = 10):
        self.action_count = 2
        self.frame_profile = vector_profile(4)
        self.episode_length = episode_length
        self._step = 0
        self._seed = 0

    def frame(self, step: int) -> np.ndarray:
        return np.array([self._seed, step, self._seed, step], dtype=np.float64) / 100.0

    def reset(self, seed: int) -> Observation:
        self._seed = seed % 97
        self._step = 0
        return Observation(reward=0.0, terminal=False, vector=self.frame(0))

    def step(self, action: int) -> Observation:
        self._step += 1
        return Observation(
            reward=float(action),
            terminal=self._step >= self.episode_length,
            vector=self.frame(self._step),
        )
