import numpy as np
import pytest

import ugp.net as net
import ugp.optim as optim
from ugp.errors import ShapeError
from ugp.net import LayerSpec
from ugp.optim import RmsPropState


@pytest.fixture
def scalar_params():
    params = net.build_network([], {"A": 2}, 1, (1,))
    return params.with_tensors({"theta": np.array([1.0])}, bump=0)


def test_scalar_step_oracle(scalar_params):
    # rho 0.9, lr 0.1, fresh acc, g = 1:
    # acc = 0.1, delta = 0.1 * 1 / sqrt(0.1 + 1e-10) ~= 0.3162278
    state = RmsPropState.fresh(rho=0.9, lr=0.1, epsilon=1e-10, clip_norm=None)
    result = optim.apply(scalar_params, {"theta": np.array([1.0])}, state)
    assert result.applied
    assert abs(result.state.acc["theta"][0] - 0.1) < 1e-15
    expected_delta = 0.1 * 1.0 / np.sqrt(0.1 + 1e-10)
    assert abs((1.0 - result.params.tensors["theta"][0]) - expected_delta) < 1e-12
    assert abs(expected_delta - 0.3162278) < 1e-7
    assert result.params.version == scalar_params.version + 1


def test_two_identical_steps_match_hand_recurrence(scalar_params):
    rho, lr, eps = 0.9, 0.05, 1e-8
    g = 0.7
    state = RmsPropState.fresh(rho=rho, lr=lr, epsilon=eps, clip_norm=None)
    p = scalar_params
    for _ in range(2):
        result = optim.apply(p, {"theta": np.array([g])}, state)
        p, state = result.params, result.state

    # independent scalar recurrence
    acc = 0.0
    theta = 1.0
    for _ in range(2):
        acc = rho * acc + (1 - rho) * g * g
        theta -= lr * g / np.sqrt(acc + eps)
    assert abs(p.tensors["theta"][0] - theta) < 1e-12
    assert abs(state.acc["theta"][0] - acc) < 1e-12
    assert p.version == scalar_params.version + 2


def test_zero_gradient_is_noop(scalar_params):
    state = RmsPropState.fresh()
    result = optim.apply(scalar_params, {"theta": np.zeros(1)}, state)
    assert not result.applied
    assert result.params is scalar_params
    assert result.params.version == scalar_params.version
    assert result.state is state


def test_empty_gradient_is_noop(scalar_params):
    result = optim.apply(scalar_params, {}, RmsPropState.fresh())
    assert not result.applied


def test_nonfinite_gradient_rejected(scalar_params):
    state = RmsPropState.fresh()
    result = optim.apply(scalar_params, {"theta": np.array([np.nan])}, state)
    assert not result.applied
    assert "non-finite" in result.reason
    assert result.params.version == scalar_params.version
    np.testing.assert_array_equal(result.params.tensors["theta"], [1.0])


def test_shape_mismatch_rejected(scalar_params):
    with pytest.raises(ShapeError):
        optim.apply(scalar_params, {"theta": np.zeros(2)}, RmsPropState.fresh())
    with pytest.raises(ShapeError):
        optim.apply(scalar_params, {"nope": np.zeros(1)}, RmsPropState.fresh())


def test_update_touches_only_addressed_tensors(tiny_params):
    state = RmsPropState.fresh()
    grads = {"trunk/0/w": np.ones_like(tiny_params.tensors["trunk/0/w"])}
    result = optim.apply(tiny_params, grads, state)
    assert result.applied
    for name, tensor in result.params.tensors.items():
        if name == "trunk/0/w":
            assert not np.array_equal(tensor, tiny_params.tensors[name])
        else:
            assert tensor is tiny_params.tensors[name]


def test_inputs_not_mutated(tiny_params):
    state = RmsPropState.fresh()
    before = tiny_params.tensors["trunk/0/w"].copy()
    grads = {"trunk/0/w": np.ones_like(before)}
    optim.apply(tiny_params, grads, state)
    np.testing.assert_array_equal(tiny_params.tensors["trunk/0/w"], before)
    assert state.acc == {}


def test_clip_bounds_global_norm():
    rng = np.random.default_rng(0)
    grads = {f"t{i}": rng.normal(size=(4, 3)) * 10 for i in range(5)}
    clipped = optim.clip_gradients(grads, 1.5)
    assert optim.global_norm(clipped) <= 1.5 + 1e-9
    # direction preserved
    ratio = clipped["t0"] / grads["t0"]
    assert np.allclose(ratio, ratio.flat[0])


def test_clip_leaves_small_gradients_alone():
    grads = {"t": np.array([0.1, 0.1])}
    assert optim.clip_gradients(grads, 40.0) is grads


def test_deterministic(tiny_params):
    state = RmsPropState.fresh()
    grads = {"trunk/0/w": np.full_like(tiny_params.tensors["trunk/0/w"], 0.3)}
    a = optim.apply(tiny_params, grads, state)
    b = optim.apply(tiny_params, grads, state)
    assert a.params.tensors["trunk/0/w"].tobytes() == b.params.tensors["trunk/0/w"].tobytes()
    assert a.state.acc["trunk/0/w"].tobytes() == b.state.acc["trunk/0/w"].tobytes()


def test_invalid_hyperparameters_rejected():
    with pytest.raises(ShapeError):
        RmsPropState.fresh(rho=1.0)
    with pytest.raises(ShapeError):
        RmsPropState.fresh(lr=0.0)
