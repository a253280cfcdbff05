"""Training-signal math.

n-step returns, the actor / critic / entropy terms, the combined per-task
objective, the quadratic consolidation penalty and diagonal Fisher
estimation. Everything here is a pure function over its inputs.
"""

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import net
from .errors import ContractViolation, ShapeError
from .net import GradientSet, NetworkParams
from .rng import CounterRng

DEFAULT_VALUE_WEIGHT = 0.5
DEFAULT_ENTROPY_WEIGHT = 0.01


class RolloutStep(NamedTuple):
    state: np.ndarray
    action: int
    reward: float


@dataclass
class Rollout:
    """A contiguous trajectory fragment for one task."""

    task: str
    steps: list[RolloutStep]
    bootstrap_value: float  # value estimate past the last step; 0 on terminal
    gamma: float
    terminal: bool

    def validate(self) -> None:
        if not self.steps:
            raise ContractViolation("rollout has no steps")
        if not 0.0 <= self.gamma < 1.0:
            raise ContractViolation(f"gamma must be in [0, 1), got {self.gamma}")
        if self.terminal and self.bootstrap_value != 0.0:
            raise ContractViolation("terminal rollouts must carry a zero bootstrap value")


class TrainingPoint(NamedTuple):
    task: str
    state: np.ndarray
    action: int
    return_target: float


def compute_returns(rollout: Rollout) -> list[TrainingPoint]:
    """Discounted returns by backward recursion: R_t = r_t + gamma * R_{t+1}."""
    rollout.validate()
    running = rollout.bootstrap_value
    points: list[TrainingPoint] = []
    for step in reversed(rollout.steps):
        running = step.reward + rollout.gamma * running
        if not np.isfinite(running):
            raise ContractViolation("non-finite return target")
        points.append(TrainingPoint(rollout.task, step.state, step.action, running))
    points.reverse()
    return points


def actor_loss(policy_logits: np.ndarray, action: int, advantage: float) -> float:
    """-log pi(action) * advantage; descending this matches the ascent update."""
    logits = np.asarray(policy_logits, dtype=np.float64)
    if not 0 <= action < logits.shape[-1]:
        raise IndexError(f"action {action} out of range for {logits.shape[-1]} actions")
    return float(-net.log_softmax(logits)[action] * advantage)


def critic_loss(value_estimate: float, return_target: float) -> float:
    return float((return_target - value_estimate) ** 2)


def entropy_bonus(policy_logits: np.ndarray) -> float:
    """H(pi) = -sum_a pi(a) log pi(a), computed from logits for stability."""
    ls = net.log_softmax(np.asarray(policy_logits, dtype=np.float64))
    p = np.exp(ls)
    return float(-(p * ls).sum())


def point_loss_grads(
    logits: np.ndarray,
    value: float,
    action: int,
    return_target: float,
    value_weight: float = DEFAULT_VALUE_WEIGHT,
    entropy_weight: float = DEFAULT_ENTROPY_WEIGHT,
):
    """Combined per-point loss and its gradients w.r.t. logits and value.

    loss = actor + value_weight * critic - entropy_weight * entropy, with the
    advantage (return - value) treated as a constant.
    """
    logits = np.asarray(logits, dtype=np.float64)
    if not 0 <= action < logits.shape[-1]:
        raise IndexError(f"action {action} out of range for {logits.shape[-1]} actions")
    ls = net.log_softmax(logits)
    p = np.exp(ls)
    advantage = return_target - value
    entropy = float(-(p * ls).sum())

    loss = (
        float(-ls[action] * advantage)
        + value_weight * (return_target - value) ** 2
        - entropy_weight * entropy
    )

    dlogits = advantage * p.copy()
    dlogits[action] -= advantage
    dlogits += entropy_weight * p * (ls + entropy)
    dvalue = 2.0 * value_weight * (value - return_target)
    return loss, dlogits, dvalue


def _check_single_task(batch: list[TrainingPoint]) -> str:
    if not batch:
        raise ContractViolation("empty training batch")
    task = batch[0].task
    for point in batch:
        if point.task != task:
            raise ContractViolation(
                f"batch mixes tasks {task!r} and {point.task!r}; split it per task first"
            )
    return task


def environment_loss(
    batch: list[TrainingPoint],
    params: NetworkParams,
    value_weight: float = DEFAULT_VALUE_WEIGHT,
    entropy_weight: float = DEFAULT_ENTROPY_WEIGHT,
) -> tuple[float, GradientSet]:
    """Mean combined loss over one task's batch, with gradients.

    Gradients touch the trunk and that task's heads only.
    """
    task = _check_single_task(batch)
    states = np.stack([p.state for p in batch])
    policies, values, trace = net.forward_many(params, task, states)

    n = len(batch)
    dlogits = np.zeros_like(trace.logits)
    dvalues = np.zeros(n)
    total = 0.0
    for i, point in enumerate(batch):
        loss_i, dl_i, dv_i = point_loss_grads(
            trace.logits[i], float(values[i]), point.action, point.return_target,
            value_weight, entropy_weight,
        )
        total += loss_i
        dlogits[i] = dl_i
        dvalues[i] = dv_i

    grads = net.backward_many(params, task, trace, dlogits / n, dvalues / n)
    return total / n, grads


def merge_gradients(into: GradientSet, extra: GradientSet) -> GradientSet:
    for name, g in extra.items():
        if name in into:
            into[name] = into[name] + g
        else:
            into[name] = g
    return into


@dataclass
class EwcAnchor:
    """A consolidated parameter snapshot with its importance weights.

    The penalty applies only to the tensors named in `scope`; heads for
    tasks learned afterwards stay unconstrained.
    """

    theta_star: dict[str, np.ndarray]
    fisher_diag: dict[str, np.ndarray]
    lam: float
    scope: frozenset[str] = field(default=None)

    def __post_init__(self):
        if self.scope is None:
            self.scope = frozenset(self.theta_star)
        if set(self.theta_star) != set(self.fisher_diag):
            raise ShapeError("theta_star and fisher_diag must cover the same tensors")
        if self.lam < 0:
            raise ContractViolation(f"lambda must be >= 0, got {self.lam}")
        for name, t in self.theta_star.items():
            f = self.fisher_diag[name]
            if t.shape != f.shape:
                raise ShapeError(f"anchor tensor {name!r}: {t.shape} vs fisher {f.shape}")
            if (f < 0).any():
                raise ContractViolation(f"fisher diagonal {name!r} has negative entries")


def ewc_penalty(params: NetworkParams, anchor: EwcAnchor) -> tuple[float, GradientSet]:
    """lam * sum_j F_jj (theta_j - theta*_j)^2 over the anchor's scope.

    Gradient w.r.t. theta_j is 2 * lam * F_jj * (theta_j - theta*_j). With
    lam == 0 the result is exactly (0.0, {}) so a disabled anchor can never
    perturb training.
    """
    if anchor.lam == 0.0:
        return 0.0, {}
    penalty = 0.0
    grads: GradientSet = {}
    for name in sorted(anchor.scope):
        if name not in params.tensors:
            raise ShapeError(f"anchor references unknown tensor {name!r}")
        theta = params.tensors[name]
        star = anchor.theta_star[name]
        if theta.shape != star.shape:
            raise ShapeError(f"anchor tensor {name!r}: params {theta.shape} vs anchor {star.shape}")
        fisher = anchor.fisher_diag[name]
        delta = theta - star
        penalty += anchor.lam * float((fisher * delta * delta).sum())
        grads[name] = 2.0 * anchor.lam * fisher * delta
    return penalty, grads


def multi_env_loss(
    batches: dict[str, list[TrainingPoint]],
    params: NetworkParams,
    anchors: list[EwcAnchor] | tuple[EwcAnchor, ...] = (),
    value_weight: float = DEFAULT_VALUE_WEIGHT,
    entropy_weight: float = DEFAULT_ENTROPY_WEIGHT,
) -> tuple[float, GradientSet]:
    """Sum of per-task losses plus all consolidation penalties.

    Each task's batch is processed separately, so the trunk accumulates
    contributions from every task present while each head only sees its own.
    """
    if not batches:
        raise ContractViolation("no batches given")
    total = 0.0
    grads: GradientSet = {}
    for task in sorted(batches):
        loss, task_grads = environment_loss(batches[task], params, value_weight, entropy_weight)
        total += loss
        merge_gradients(grads, task_grads)
    for anchor in anchors:
        penalty, anchor_grads = ewc_penalty(params, anchor)
        total += penalty
        merge_gradients(grads, anchor_grads)
    return total, grads


def estimate_fisher(
    params: NetworkParams,
    task: str,
    states: list[np.ndarray],
    mode: str = "sampled",
    seed: int = 0,
) -> dict[str, np.ndarray]:
    """Diagonal empirical Fisher of the log-policy, averaged over states.

    "sampled" draws one action per state from the policy; "exact-enumeration"
    takes the exact expectation over actions. Entries are squared score
    values, hence always nonnegative.
    """
    if not states:
        raise ContractViolation("fisher estimation needs at least one state")
    if mode not in ("sampled", "exact-enumeration"):
        raise ContractViolation(f"unknown fisher mode {mode!r}")

    rng = CounterRng(seed)
    acc: dict[str, np.ndarray] = {}

    def add_square(grads: GradientSet, weight: float) -> None:
        for name, g in grads.items():
            sq = weight * g * g
            if name in acc:
                acc[name] += sq
            else:
                acc[name] = sq

    for state in states:
        fr = net.forward(params, task, state)
        p = fr.policy
        if mode == "sampled":
            a = rng.choice_weighted(p)
            dlogits = -p.copy()
            dlogits[a] += 1.0  # d log pi(a) / d logits = onehot(a) - pi
            grads = net.backward(params, task, fr, (dlogits, 0.0))
            add_square(grads, 1.0)
        else:
            for a in range(p.shape[0]):
                dlogits = -p.copy()
                dlogits[a] += 1.0
                grads = net.backward(params, task, fr, (dlogits, 0.0))
                add_square(grads, float(p[a]))

    n = float(len(states))
    return {name: g / n for name, g in acc.items()}
