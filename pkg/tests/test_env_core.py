import numpy as np
import pytest

from conftest import SequenceEnv
from ugp.envs.core import (
    ATARI_PROFILE,
    EnvironmentHandler,
    Observation,
    area_resize,
    preprocess,
    vector_profile,
)
from ugp.errors import ContractViolation, ShapeError


def oracle_area_average(img, out_h, out_w):
    """Independent oracle: per output cell, sum input pixels weighted by
    exact box overlap, via plain Python loops."""
    h, w = img.shape
    sy, sx = h / out_h, w / out_w
    out = np.zeros((out_h, out_w))
    for i in range(out_h):
        for j in range(out_w):
            y0, y1 = i * sy, (i + 1) * sy
            x0, x1 = j * sx, (j + 1) * sx
            total = 0.0
            for r in range(int(np.floor(y0)), int(np.ceil(y1))):
                for c in range(int(np.floor(x0)), int(np.ceil(x1))):
                    wy = min(y1, r + 1) - max(y0, r)
                    wx = min(x1, c + 1) - max(x0, c)
                    if wy > 0 and wx > 0:
                        total += img[r, c] * wy * wx
            out[i, j] = total / (sy * sx)
    return out


class TestPreprocess:
    def test_all_black(self):
        obs = Observation(0.0, False, pixels=np.zeros((210, 160, 3), dtype=np.uint8))
        frame = preprocess(obs, ATARI_PROFILE)
        assert frame.shape == (84, 84)
        assert not frame.any()

    def test_all_white(self):
        obs = Observation(0.0, False, pixels=np.full((210, 160, 3), 255, dtype=np.uint8))
        frame = preprocess(obs, ATARI_PROFILE)
        np.testing.assert_allclose(frame, 1.0, atol=1e-9)

    def test_checkerboard_matches_direct_average_oracle(self):
        rng = np.random.default_rng(12)
        img = np.kron(rng.integers(0, 2, size=(14, 10)), np.ones((15, 16))) * 255
        obs = Observation(
            0.0, False, pixels=np.repeat(img[:, :, None], 3, axis=2).astype(np.uint8)
        )
        frame = preprocess(obs, ATARI_PROFILE)
        expected = oracle_area_average(img.astype(np.float64), 84, 84) / 255.0
        np.testing.assert_allclose(frame, expected, atol=1e-12)

    def test_resize_oracle_on_awkward_ratio(self):
        rng = np.random.default_rng(3)
        img = rng.uniform(0, 255, size=(17, 11))
        np.testing.assert_allclose(
            area_resize(img, 7, 5), oracle_area_average(img, 7, 5), atol=1e-12
        )

    def test_grayscale_uses_luminance_weights(self):
        pixels = np.zeros((84, 84, 3), dtype=np.uint8)
        pixels[:, :, 0] = 255  # pure red
        obs = Observation(0.0, False, pixels=pixels)
        frame = preprocess(obs, ATARI_PROFILE)
        np.testing.assert_allclose(frame, 0.299, atol=1e-9)

    def test_output_shape_is_84_regardless_of_input(self):
        for shape in ((210, 160), (64, 48), (100, 300)):
            obs = Observation(
                0.0, False,
                pixels=np.random.default_rng(0).integers(
                    0, 256, size=(*shape, 3)).astype(np.uint8),
            )
            frame = preprocess(obs, ATARI_PROFILE)
            assert frame.shape == (84, 84)
            assert frame.min() >= 0.0 and frame.max() <= 1.0

    def test_vector_profile_is_identity(self):
        vec = np.array([0.1, 0.2, 0.3])
        obs = Observation(0.0, False, vector=vec)
        np.testing.assert_array_equal(preprocess(obs, vector_profile(3)), vec)

    def test_shape_errors(self):
        with pytest.raises(ShapeError):
            preprocess(Observation(0.0, False, vector=np.zeros(3)), ATARI_PROFILE)
        with pytest.raises(ShapeError):
            preprocess(
                Observation(0.0, False, pixels=np.zeros((10, 10, 4), dtype=np.uint8)),
                ATARI_PROFILE,
            )
        with pytest.raises(ShapeError):
            preprocess(Observation(0.0, False, vector=np.zeros(5)), vector_profile(3))


class TestHandler:
    def test_initial_stack_repeats_first_frame(self):
        env = SequenceEnv()
        handler = EnvironmentHandler(env)
        state = handler.reset(seed=5)
        assert state.shape == (4, 4)
        for k in range(4):
            np.testing.assert_array_equal(state[k], env.frame(0))

    def test_one_step_stack(self):
        env = SequenceEnv()
        handler = EnvironmentHandler(env)
        handler.reset(seed=5)
        state, reward, terminal = handler.step(1)
        assert reward == 1.0 and not terminal
        np.testing.assert_array_equal(state[0], env.frame(0))
        np.testing.assert_array_equal(state[1], env.frame(0))
        np.testing.assert_array_equal(state[2], env.frame(0))
        np.testing.assert_array_equal(state[3], env.frame(1))

    def test_five_steps_keep_newest_four(self):
        env = SequenceEnv()
        handler = EnvironmentHandler(env)
        handler.reset(seed=5)
        for _ in range(5):
            state, _, _ = handler.step(0)
        for slot, step in enumerate((2, 3, 4, 5)):
            np.testing.assert_array_equal(state[slot], env.frame(step))

    def test_reset_determinism(self):
        first = EnvironmentHandler(SequenceEnv()).reset(seed=9)
        second = EnvironmentHandler(SequenceEnv()).reset(seed=9)
        np.testing.assert_array_equal(first, second)

    def test_reset_mid_episode_matches_fresh_handler(self):
        handler = EnvironmentHandler(SequenceEnv())
        handler.reset(seed=1)
        handler.step(0)
        handler.step(1)
        restarted = handler.reset(seed=2)
        fresh = EnvironmentHandler(SequenceEnv()).reset(seed=2)
        np.testing.assert_array_equal(restarted, fresh)

    def test_reset_clears_terminal(self):
        handler = EnvironmentHandler(SequenceEnv(episode_length=1))
        handler.reset(seed=0)
        _, _, terminal = handler.step(0)
        assert terminal
        handler.reset(seed=0)
        handler.step(0)  # must not raise

    def test_step_after_terminal_rejected(self):
        handler = EnvironmentHandler(SequenceEnv(episode_length=1))
        handler.reset(seed=0)
        handler.step(0)
        with pytest.raises(ContractViolation):
            handler.step(0)

    def test_step_before_reset_rejected(self):
        with pytest.raises(ContractViolation):
            EnvironmentHandler(SequenceEnv()).step(0)

    def test_stack_depth_always_four(self):
        handler = EnvironmentHandler(SequenceEnv(episode_length=50))
        state = handler.reset(seed=3)
        assert state.shape[0] == 4
        for _ in range(20):
            state, _, _ = handler.step(0)
            assert state.shape[0] == 4
