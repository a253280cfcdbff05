"""RMSProp with a shared squared-gradient accumulator.

apply() is functional: it returns fresh params/state objects and leaves its
inputs untouched, so published snapshots stay immutable and concurrent
readers can never observe a half-applied step.
"""

import logging
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from .errors import ShapeError
from .net import GradientSet, NetworkParams

log = logging.getLogger(__name__)


@dataclass
class RmsPropState:
    """Per-tensor moving average of squared gradients plus hyperparameters."""

    acc: dict[str, np.ndarray]
    rho: float = 0.99
    lr: float = 1e-3
    epsilon: float = 1e-8
    clip_norm: float | None = 40.0

    def __post_init__(self):
        if not 0.0 < self.rho < 1.0:
            raise ShapeError(f"rho must be in (0, 1), got {self.rho}")
        if self.lr <= 0 or self.epsilon <= 0:
            raise ShapeError("learning rate and epsilon must be positive")

    @staticmethod
    def fresh(rho: float = 0.99, lr: float = 1e-3, epsilon: float = 1e-8,
              clip_norm: float | None = 40.0) -> "RmsPropState":
        return RmsPropState(acc={}, rho=rho, lr=lr, epsilon=epsilon, clip_norm=clip_norm)


class ApplyResult(NamedTuple):
    params: NetworkParams
    state: RmsPropState
    applied: bool
    reason: str | None


def global_norm(grads: GradientSet) -> float:
    total = 0.0
    for g in grads.values():
        total += float((g * g).sum())
    return float(np.sqrt(total))


def clip_gradients(grads: GradientSet, clip_norm: float) -> GradientSet:
    """Scale the whole set so its global norm is at most clip_norm."""
    norm = global_norm(grads)
    if norm <= clip_norm or norm == 0.0:
        return grads
    scale = clip_norm / norm
    return {name: g * scale for name, g in grads.items()}


def apply(params: NetworkParams, grads: GradientSet, state: RmsPropState) -> ApplyResult:
    """One RMSProp step over exactly the tensors present in grads.

    acc <- rho * acc + (1 - rho) * g^2, theta <- theta - lr * g / sqrt(acc + eps).
    Non-finite gradients reject the step (params version unchanged); an
    all-zero gradient set is a no-op for the same reason.
    """
    for name, g in grads.items():
        if name not in params.tensors:
            raise ShapeError(f"gradient for unknown tensor {name!r}")
        if g.shape != params.tensors[name].shape:
            raise ShapeError(
                f"gradient shape {g.shape} does not match tensor {name!r} "
                f"shape {params.tensors[name].shape}"
            )

    if not grads:
        return ApplyResult(params, state, False, "empty gradient set")
    for name, g in grads.items():
        if not np.isfinite(g).all():
            log.warning("rejecting step at version %d: non-finite gradient in %s",
                        params.version, name)
            return ApplyResult(params, state, False, f"non-finite gradient in {name!r}")
    if all((g == 0.0).all() for g in grads.values()):
        return ApplyResult(params, state, False, "all-zero gradient set")

    if state.clip_norm is not None:
        grads = clip_gradients(grads, state.clip_norm)

    new_acc = dict(state.acc)
    new_tensors: dict[str, np.ndarray] = {}
    for name in grads:
        g = grads[name]
        old_acc = new_acc.get(name)
        if old_acc is None:
            old_acc = np.zeros_like(params.tensors[name])
        acc = state.rho * old_acc + (1.0 - state.rho) * g * g
        new_acc[name] = acc
        new_tensors[name] = params.tensors[name] - state.lr * g / np.sqrt(acc + state.epsilon)

    return ApplyResult(
        params.with_tensors(new_tensors),
        replace(state, acc=new_acc),
        True,
        None,
    )
