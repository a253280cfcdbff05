import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import ugp.net as net
from ugp.errors import ConfigurationError, ShapeError, StalenessError, UnknownTaskError
from ugp.net import LayerSpec


def zero_params(params):
    return params.with_tensors({k: np.zeros_like(v) for k, v in params.tensors.items()}, bump=0)


class TestBuild:
    def test_head_structure(self):
        params = net.build_network(
            [LayerSpec.dense(8), LayerSpec.relu()], {"A": 3, "B": 4}, 7, (4, 5)
        )
        assert params.tensors["head/A/policy/w"].shape == (8, 3)
        assert params.tensors["head/B/policy/w"].shape == (8, 4)
        assert params.tensors["head/A/value/w"].shape == (8, 1)
        assert params.tensors["head/B/value/w"].shape == (8, 1)
        assert params.version == 0

    def test_same_seed_bitwise_identical(self):
        kwargs = dict(tasks={"A": 3, "B": 4}, seed=7, input_shape=(4, 5))
        first = net.build_network([LayerSpec.dense(8), LayerSpec.relu()], **kwargs)
        second = net.build_network([LayerSpec.dense(8), LayerSpec.relu()], **kwargs)
        for name in first.tensors:
            assert first.tensors[name].tobytes() == second.tensors[name].tobytes()

    def test_different_seed_differs(self):
        a = net.build_network([LayerSpec.dense(8)], {"A": 2}, 7, (4, 5))
        b = net.build_network([LayerSpec.dense(8)], {"A": 2}, 8, (4, 5))
        assert not np.array_equal(a.tensors["trunk/0/w"], b.tensors["trunk/0/w"])

    def test_no_tasks_rejected(self):
        with pytest.raises(ConfigurationError):
            net.build_network([LayerSpec.dense(8)], {}, 7, (4, 5))

    def test_single_action_rejected(self):
        with pytest.raises(ConfigurationError):
            net.build_network([LayerSpec.dense(8)], {"A": 1}, 7, (4, 5))

    def test_conv_after_dense_names_both_layers(self):
        with pytest.raises(ConfigurationError) as err:
            net.build_network(
                [LayerSpec.dense(8), LayerSpec.conv(4, 3)], {"A": 2}, 7, (4, 6, 6)
            )
        message = str(err.value)
        assert "layer 1" in message and "layer 0" in message

    def test_oversized_kernel_rejected(self):
        with pytest.raises(ConfigurationError):
            net.build_network([LayerSpec.conv(4, 9)], {"A": 2}, 7, (4, 6, 6))

    def test_softmax_in_trunk_rejected(self):
        with pytest.raises(ConfigurationError):
            net.build_network([LayerSpec(net.SOFTMAX)], {"A": 2}, 7, (4, 5))

    def test_init_respects_fan_in_bound(self):
        params = net.build_network([LayerSpec.dense(16)], {"A": 2}, 3, (4, 8))
        w = params.tensors["trunk/0/w"]
        assert np.abs(w).max() <= 1.0 / np.sqrt(32)


class TestForward:
    def test_zero_params_give_uniform_policy_and_zero_value(self, tiny_params, tiny_state):
        zeroed = zero_params(tiny_params)
        fr = net.forward(zeroed, "alpha", tiny_state)
        np.testing.assert_allclose(fr.policy, np.full(3, 1 / 3), atol=1e-15)
        assert fr.value == 0.0

    def test_policy_normalized(self, tiny_params, tiny_state):
        fr = net.forward(tiny_params, "beta", tiny_state)
        assert abs(fr.policy.sum() - 1.0) < 1e-9
        assert (fr.policy >= 0).all()

    def test_hand_built_single_layer_matches_scalar_softmax(self):
        # 1-D input, no trunk layers beyond identity: heads act on the raw state
        params = net.build_network([], {"A": 2}, 1, (2,))
        params = params.with_tensors(
            {
                "head/A/policy/w": np.array([[0.5, -1.0], [2.0, 0.25]]),
                "head/A/policy/b": np.array([0.1, -0.1]),
                "head/A/value/w": np.array([[1.0], [-2.0]]),
                "head/A/value/b": np.array([0.5]),
            },
            bump=0,
        )
        state = np.array([0.3, 0.7])
        fr = net.forward(params, "A", state)
        logit0 = 0.3 * 0.5 + 0.7 * 2.0 + 0.1
        logit1 = 0.3 * -1.0 + 0.7 * 0.25 - 0.1
        z = max(logit0, logit1)
        e0, e1 = np.exp(logit0 - z), np.exp(logit1 - z)
        assert abs(fr.policy[0] - e0 / (e0 + e1)) < 1e-12
        assert abs(fr.policy[1] - e1 / (e0 + e1)) < 1e-12
        assert abs(fr.value - (0.3 * 1.0 + 0.7 * -2.0 + 0.5)) < 1e-12

    def test_unknown_task(self, tiny_params, tiny_state):
        with pytest.raises(UnknownTaskError):
            net.forward(tiny_params, "gamma", tiny_state)

    def test_shape_mismatch(self, tiny_params):
        with pytest.raises(ShapeError):
            net.forward(tiny_params, "alpha", np.zeros((4, 6)))

    def test_purity_bitwise(self, tiny_params, tiny_state):
        first = net.forward(tiny_params, "alpha", tiny_state)
        second = net.forward(tiny_params, "alpha", tiny_state)
        assert first.policy.tobytes() == second.policy.tobytes()
        assert first.value == second.value

    def test_batched_equals_single(self, tiny_params, tiny_state):
        states = np.stack([tiny_state, tiny_state * 0.5, tiny_state * 0.1])
        policies, values, _ = net.forward_many(tiny_params, "alpha", states)
        for i in range(3):
            fr = net.forward(tiny_params, "alpha", states[i])
            np.testing.assert_allclose(policies[i], fr.policy, rtol=0, atol=1e-12)
            assert abs(values[i] - fr.value) < 1e-12


@settings(max_examples=200, deadline=None)
@given(
    st.lists(st.floats(min_value=-300, max_value=300), min_size=2, max_size=12)
)
def test_softmax_is_a_distribution(logits):
    p = net.softmax(np.array(logits))
    assert abs(p.sum() - 1.0) < 1e-9
    assert (p >= 0).all() and (p <= 1).all()


class TestBackward:
    def test_zero_loss_grads_give_zero_gradients(self, tiny_params, tiny_state):
        fr = net.forward(tiny_params, "alpha", tiny_state)
        grads = net.backward(tiny_params, "alpha", fr, (np.zeros(3), 0.0))
        for g in grads.values():
            assert not g.any()

    def test_only_traced_head_present(self, tiny_params, tiny_state):
        fr = net.forward(tiny_params, "alpha", tiny_state)
        grads = net.backward(tiny_params, "alpha", fr, (np.array([0.5, -0.2, -0.3]), 1.0))
        assert any(name.startswith("head/alpha/") for name in grads)
        assert not any(name.startswith("head/beta/") for name in grads)
        assert grads["trunk/0/w"].any()

    def test_stale_trace_rejected(self, tiny_params, tiny_state):
        fr = net.forward(tiny_params, "alpha", tiny_state)
        bumped = tiny_params.with_tensors({}, bump=1)
        with pytest.raises(StalenessError):
            net.backward(bumped, "alpha", fr, (np.zeros(3), 0.0))

    def test_wrong_task_trace_rejected(self, tiny_params, tiny_state):
        from ugp.errors import ContractViolation

        fr = net.forward(tiny_params, "alpha", tiny_state)
        with pytest.raises(ContractViolation):
            net.backward(tiny_params, "beta", fr, (np.zeros(4), 0.0))


def actor_like_loss(action, advantage):
    def loss_fn(logits, value):
        ls = net.log_softmax(logits)
        p = np.exp(ls)
        loss = -ls[action] * advantage
        dlogits = advantage * p
        dlogits[action] -= advantage
        return loss, dlogits, 0.0

    return loss_fn


def value_like_loss(target):
    def loss_fn(logits, value):
        return (target - value) ** 2, np.zeros_like(logits), 2.0 * (value - target)

    return loss_fn


class TestGradientCheck:
    def test_zero_loss_gives_zero_error(self, tiny_params, tiny_state):
        def loss_fn(logits, value):
            return 0.0, np.zeros_like(logits), 0.0

        assert net.gradient_check(tiny_params, "alpha", tiny_state, loss_fn) == 0.0

    def test_actor_loss_backprop_matches_fd(self, tiny_params, tiny_state):
        err = net.gradient_check(tiny_params, "alpha", tiny_state, actor_like_loss(1, 1.7))
        assert err < 1e-4

    def test_value_loss_backprop_matches_fd(self, tiny_params, tiny_state):
        err = net.gradient_check(tiny_params, "alpha", tiny_state, value_like_loss(2.5))
        assert err < 1e-4

    def test_conv_trunk_backprop_matches_fd(self):
        params = net.build_network(
            [LayerSpec.conv(3, 3, 2), LayerSpec.relu(), LayerSpec.dense(5), LayerSpec.relu()],
            {"A": 3},
            seed=5,
            input_shape=(4, 9, 9),
        )
        # keep every relu alive so no gradient path is coincidentally dead
        params = params.with_tensors(
            {
                "trunk/0/b": params.tensors["trunk/0/b"] + 0.5,
                "trunk/2/b": params.tensors["trunk/2/b"] + 0.5,
            },
            bump=0,
        )
        state = np.linspace(0.1, 0.9, 4 * 81).reshape(4, 9, 9)
        err = net.gradient_check(params, "A", state, actor_like_loss(0, 1.2))
        assert err < 1e-4

    def test_corrupted_backward_is_detected(self, tiny_params, tiny_state, monkeypatch):
        original = net._dense_backward

        def corrupted(flat_in, w, dh):
            dx, dw, db = original(flat_in, w, dh)
            return dx, dw * 1.05, db

        monkeypatch.setattr(net, "_dense_backward", corrupted)
        err = net.gradient_check(tiny_params, "alpha", tiny_state, actor_like_loss(2, 1.0))
        assert err > 1e-2
