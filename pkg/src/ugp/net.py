"""Multi-head actor-critic network with hand-rolled forward/backward passes.

A shared trunk (convolutional or fully-connected) feeds one softmax policy
head and one scalar value head per registered task. Parameters live in a
flat name -> float64 array mapping so the optimizer, checkpoints and the
consolidation penalty can address tensors uniformly.

Parameter names: ``trunk/<i>/w``, ``trunk/<i>/b`` for trunk layer i, and
``head/<task>/policy/{w,b}`` / ``head/<task>/value/{w,b}`` per task.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels
from .errors import (
    ConfigurationError,
    ContractViolation,
    ShapeError,
    StalenessError,
    UnknownTaskError,
)
from .rng import derive_seed, philox

CONV = "convolution"
DENSE = "fully-connected"
RELU = "relu"
SOFTMAX = "softmax"

GradientSet = dict[str, np.ndarray]


@dataclass(frozen=True)
class LayerSpec:
    """One trunk layer. Softmax is only ever applied inside policy heads."""

    kind: str
    filters: int = 0
    size: int = 0
    stride: int = 1
    width: int = 0

    @staticmethod
    def conv(filters: int, size: int, stride: int = 1) -> "LayerSpec":
        return LayerSpec(CONV, filters=filters, size=size, stride=stride)

    @staticmethod
    def dense(width: int) -> "LayerSpec":
        return LayerSpec(DENSE, width=width)

    @staticmethod
    def relu() -> "LayerSpec":
        return LayerSpec(RELU)

    def describe(self) -> str:
        if self.kind == CONV:
            return f"{self.kind}({self.filters}x{self.size}x{self.size}, stride {self.stride})"
        if self.kind == DENSE:
            return f"{self.kind}({self.width})"
        return self.kind


@dataclass
class NetworkParams:
    """All parameter tensors plus the structure needed to run them."""

    tensors: dict[str, np.ndarray]
    trunk: tuple[LayerSpec, ...]
    input_shape: tuple[int, ...]
    tasks: dict[str, int]  # task id -> action count
    version: int = 0

    def with_tensors(self, updated: dict[str, np.ndarray], bump: int = 1) -> "NetworkParams":
        """Functional update: shares untouched tensors, bumps the version."""
        merged = dict(self.tensors)
        merged.update(updated)
        return replace(self, tensors=merged, version=self.version + bump)


@dataclass
class Trace:
    """Cached activations from one forward pass, consumed by backward."""

    version: int
    task: str
    n: int
    layer_inputs: list
    trunk_out: np.ndarray
    logits: np.ndarray  # (N, A)


@dataclass
class ForwardResult:
    policy: np.ndarray  # (A,) probabilities
    value: float
    logits: np.ndarray  # (A,) pre-softmax, consumed by the loss module
    trace: Trace = field(repr=False, default=None)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise stable softmax over the last axis."""
    z = logits - np.max(logits, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise stable log-softmax over the last axis."""
    z = logits - np.max(logits, axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _trunk_plan(trunk: tuple[LayerSpec, ...], input_shape: tuple[int, ...]):
    """Walk the trunk, returning per-layer input shapes and the output width.

    Raises ConfigurationError naming both offending layers on any mismatch.
    """
    shape = tuple(input_shape)
    plan = []
    prev_desc = f"input{list(input_shape)}"
    for i, spec in enumerate(trunk):
        if spec.kind == SOFTMAX:
            raise ConfigurationError(
                f"layer {i} ({spec.describe()}) is not allowed in the trunk; "
                "softmax belongs to the policy head only"
            )
        if spec.kind == CONV:
            if len(shape) != 3:
                raise ConfigurationError(
                    f"layer {i} ({spec.describe()}) needs a C x H x W input but "
                    f"follows {prev_desc} with shape {list(shape)}"
                )
            c, h, w = shape
            if spec.size > h or spec.size > w:
                raise ConfigurationError(
                    f"layer {i} ({spec.describe()}) kernel exceeds the {h}x{w} "
                    f"output of {prev_desc}"
                )
            oh = (h - spec.size) // spec.stride + 1
            ow = (w - spec.size) // spec.stride + 1
            plan.append((spec, shape))
            shape = (spec.filters, oh, ow)
        elif spec.kind == DENSE:
            plan.append((spec, shape))
            shape = (spec.width,)
        elif spec.kind == RELU:
            plan.append((spec, shape))
        else:
            raise ConfigurationError(f"layer {i} has unknown kind {spec.kind!r}")
        prev_desc = f"layer {i} ({spec.describe()})"
    width = int(np.prod(shape))
    return plan, width


def trunk_output_width(params: NetworkParams) -> int:
    _, width = _trunk_plan(params.trunk, params.input_shape)
    return width


def _init_tensor(seed: int, name: str, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    g = philox(derive_seed(seed, "init", name))
    return g.uniform(-bound, bound, size=shape)


def build_network(
    trunk_spec: list[LayerSpec] | tuple[LayerSpec, ...],
    tasks: dict[str, int],
    seed: int,
    input_shape: tuple[int, ...],
) -> NetworkParams:
    """Allocate and deterministically initialize all parameter tensors.

    Weights are uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)], drawn from a
    counter-based generator keyed by (seed, tensor name), so construction is
    reproducible and independent of allocation order.
    """
    if not tasks:
        raise ConfigurationError("at least one task must be registered")
    for task, actions in tasks.items():
        if actions < 2:
            raise ConfigurationError(f"task {task!r} needs at least 2 actions, got {actions}")

    trunk = tuple(trunk_spec)
    plan, width = _trunk_plan(trunk, tuple(input_shape))

    tensors: dict[str, np.ndarray] = {}
    for i, (spec, in_shape) in enumerate(plan):
        if spec.kind == CONV:
            c = in_shape[0]
            fan_in = c * spec.size * spec.size
            tensors[f"trunk/{i}/w"] = _init_tensor(
                seed, f"trunk/{i}/w", (spec.filters, c, spec.size, spec.size), fan_in
            )
            tensors[f"trunk/{i}/b"] = _init_tensor(seed, f"trunk/{i}/b", (spec.filters,), fan_in)
        elif spec.kind == DENSE:
            fan_in = int(np.prod(in_shape))
            tensors[f"trunk/{i}/w"] = _init_tensor(
                seed, f"trunk/{i}/w", (fan_in, spec.width), fan_in
            )
            tensors[f"trunk/{i}/b"] = _init_tensor(seed, f"trunk/{i}/b", (spec.width,), fan_in)

    for task, actions in tasks.items():
        for head, out in (("policy", actions), ("value", 1)):
            tensors[f"head/{task}/{head}/w"] = _init_tensor(
                seed, f"head/{task}/{head}/w", (width, out), width
            )
            tensors[f"head/{task}/{head}/b"] = _init_tensor(
                seed, f"head/{task}/{head}/b", (out,), width
            )

    return NetworkParams(
        tensors=tensors,
        trunk=trunk,
        input_shape=tuple(input_shape),
        tasks=dict(tasks),
        version=0,
    )


def _check_task(params: NetworkParams, task: str) -> None:
    if task not in params.tasks:
        raise UnknownTaskError(task)


def _trunk_forward(params: NetworkParams, xs: np.ndarray):
    """Run the trunk on a batch; returns (flat output (N, D), layer caches)."""
    caches = []
    h = xs
    for i, spec in enumerate(params.trunk):
        if spec.kind == CONV:
            caches.append(h)
            h = _kernels.conv2d_forward(
                h, params.tensors[f"trunk/{i}/w"], params.tensors[f"trunk/{i}/b"], spec.stride
            )
        elif spec.kind == DENSE:
            flat = h.reshape(h.shape[0], -1)
            caches.append((flat, h.shape))
            h = flat @ params.tensors[f"trunk/{i}/w"] + params.tensors[f"trunk/{i}/b"]
        elif spec.kind == RELU:
            caches.append(h)
            h = np.maximum(h, 0.0)
    out = h.reshape(h.shape[0], -1)
    caches.append(h.shape)
    return out, caches


def forward_many(params: NetworkParams, task: str, states: np.ndarray):
    """Batched forward pass: states (N, *input_shape) -> (policies, values, trace)."""
    _check_task(params, task)
    states = np.asarray(states, dtype=np.float64)
    if tuple(states.shape[1:]) != params.input_shape:
        raise ShapeError(
            f"state batch shape {states.shape} does not match input shape "
            f"{(-1, *params.input_shape)}"
        )
    out, caches = _trunk_forward(params, states)
    logits = out @ params.tensors[f"head/{task}/policy/w"] + params.tensors[f"head/{task}/policy/b"]
    values = (out @ params.tensors[f"head/{task}/value/w"] + params.tensors[f"head/{task}/value/b"])[
        :, 0
    ]
    policies = softmax(logits)
    if not (np.isfinite(policies).all() and np.isfinite(values).all()):
        raise ShapeError("forward produced non-finite outputs")
    trace = Trace(
        version=params.version,
        task=task,
        n=states.shape[0],
        layer_inputs=caches,
        trunk_out=out,
        logits=logits,
    )
    return policies, values, trace


def forward(params: NetworkParams, task: str, state: np.ndarray) -> ForwardResult:
    """Single-state forward pass; pure, never mutates params."""
    state = np.asarray(state, dtype=np.float64)
    if tuple(state.shape) != params.input_shape:
        raise ShapeError(
            f"state shape {state.shape} does not match input shape {params.input_shape}"
        )
    policies, values, trace = forward_many(params, task, state[None])
    return ForwardResult(
        policy=policies[0], value=float(values[0]), logits=trace.logits[0], trace=trace
    )


def _dense_backward(flat_in: np.ndarray, w: np.ndarray, dh: np.ndarray):
    dw = flat_in.T @ dh
    db = dh.sum(axis=0)
    dx = dh @ w.T
    return dx, dw, db


def backward_many(
    params: NetworkParams,
    task: str,
    trace: Trace,
    dlogits: np.ndarray,
    dvalues: np.ndarray,
) -> GradientSet:
    """Batched backward pass.

    Returns gradients for the trunk and for the traced task's heads only;
    every other head is absent (semantically zero). Gradients are summed
    over the batch.
    """
    _check_task(params, task)
    if trace.version != params.version:
        raise StalenessError(
            f"trace was recorded at params version {trace.version}, "
            f"but params are at version {params.version}"
        )
    if trace.task != task:
        raise ContractViolation(f"trace was recorded for task {trace.task!r}, not {task!r}")

    grads: GradientSet = {}
    out = trace.trunk_out
    dvalues = np.asarray(dvalues, dtype=np.float64).reshape(-1, 1)

    pw = params.tensors[f"head/{task}/policy/w"]
    vw = params.tensors[f"head/{task}/value/w"]
    grads[f"head/{task}/policy/w"] = out.T @ dlogits
    grads[f"head/{task}/policy/b"] = dlogits.sum(axis=0)
    grads[f"head/{task}/value/w"] = out.T @ dvalues
    grads[f"head/{task}/value/b"] = dvalues.sum(axis=0)

    dh = dlogits @ pw.T + dvalues @ vw.T
    dh = dh.reshape(trace.layer_inputs[-1])

    for i in range(len(params.trunk) - 1, -1, -1):
        spec = params.trunk[i]
        cache = trace.layer_inputs[i]
        if spec.kind == CONV:
            dh, dw, db = _kernels.conv2d_backward(
                cache, params.tensors[f"trunk/{i}/w"], spec.stride, dh
            )
            grads[f"trunk/{i}/w"] = dw
            grads[f"trunk/{i}/b"] = db
        elif spec.kind == DENSE:
            flat_in, in_shape = cache
            dh, dw, db = _dense_backward(flat_in, params.tensors[f"trunk/{i}/w"], dh)
            grads[f"trunk/{i}/w"] = dw
            grads[f"trunk/{i}/b"] = db
            dh = dh.reshape(in_shape)
        elif spec.kind == RELU:
            dh = dh * (cache > 0.0)
    return grads


def backward(
    params: NetworkParams, task: str, trace_or_result, loss_grads: tuple
) -> GradientSet:
    """Single-point backward: loss_grads = (dL/dlogits (A,), dL/dvalue scalar)."""
    trace = trace_or_result.trace if isinstance(trace_or_result, ForwardResult) else trace_or_result
    dlogits, dvalue = loss_grads
    return backward_many(
        params,
        task,
        trace,
        np.asarray(dlogits, dtype=np.float64)[None, :],
        np.asarray([dvalue], dtype=np.float64),
    )


def gradient_check(params: NetworkParams, task: str, state: np.ndarray, loss_fn, epsilon: float = 1e-5) -> float:
    """Compare backprop against central finite differences over every entry.

    loss_fn maps (logits, value) -> (loss, dloss_dlogits, dloss_dvalue).
    Returns max over parameters of |analytic - numeric| / max(|analytic|,
    |numeric|, 1e-8). Only usable on nets small enough for O(P) forwards.
    """
    fr = forward(params, task, state)
    _, dlogits, dvalue = loss_fn(fr.logits, fr.value)
    grads = backward(params, task, fr, (dlogits, dvalue))

    def loss_at(p: NetworkParams) -> float:
        r = forward(p, task, state)
        return float(loss_fn(r.logits, r.value)[0])

    worst = 0.0
    for name in sorted(params.tensors):
        base = params.tensors[name]
        analytic = grads.get(name, np.zeros_like(base))
        flat = base.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            tweaked = base.copy().reshape(-1)
            tweaked[idx] = orig + epsilon
            plus = loss_at(params.with_tensors({name: tweaked.reshape(base.shape)}, bump=0))
            tweaked[idx] = orig - epsilon
            minus = loss_at(params.with_tensors({name: tweaked.reshape(base.shape)}, bump=0))
            numeric = (plus - minus) / (2.0 * epsilon)
            a = analytic.reshape(-1)[idx]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst
