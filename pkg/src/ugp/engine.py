"""Asynchronous training pipeline.

Many actor-learners interact with their own environment instances and send
prediction requests to a batched prediction service; rollouts become
training points that a single trainer turns into serialized optimizer
steps. Published parameter snapshots are immutable, so readers can never
observe a torn update.

Deterministic mode replaces the threads with a lock-step rotation over the
same actor logic, making the whole run a pure function of (config, seed).
"""

import csv
import logging
import queue
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, NamedTuple

import numpy as np

from . import losses, net, optim
from .envs.core import Environment, EnvironmentHandler
from .errors import ConfigurationError, EngineFailure, UgpError
from .losses import EwcAnchor, Rollout, RolloutStep, TrainingPoint
from .net import NetworkParams
from .optim import RmsPropState
from .rng import CounterRng, derive_seed

log = logging.getLogger(__name__)

EnvFactory = Callable[[], Environment]


@dataclass
class EngineConfig:
    """Knobs for one training run."""

    assignment: dict[str, int]  # task id -> number of actor-learners
    rollout_length: int = 5
    gamma: float = 0.99
    batch_size: int = 128
    prediction_cap: int = 64
    prediction_linger: float = 0.002  # seconds
    max_episodes: int | None = None
    max_steps: int | None = None
    seed: int = 0
    deterministic: bool = False
    value_weight: float = losses.DEFAULT_VALUE_WEIGHT
    entropy_weight: float = losses.DEFAULT_ENTROPY_WEIGHT
    max_abort_fraction: float = 0.1
    start_episode: int = 0  # offset for logs when resuming in chunks

    def __post_init__(self):
        if not self.assignment or sum(self.assignment.values()) < 1:
            raise ConfigurationError("assignment must place at least one actor")
        if any(n < 0 for n in self.assignment.values()):
            raise ConfigurationError("actor counts must be nonnegative")
        if min(self.rollout_length, self.batch_size, self.prediction_cap) < 1:
            raise ConfigurationError("rollout length, batch size and caps must be >= 1")
        if self.max_episodes is None and self.max_steps is None:
            raise ConfigurationError("set max_episodes and/or max_steps")

    @property
    def actor_count(self) -> int:
        return sum(self.assignment.values())


class EpisodeRecord(NamedTuple):
    episode_index: int
    task: str
    score: float
    length: int
    params_version: int
    wallclock_ms: int


@dataclass
class TrainingLog:
    records: list[EpisodeRecord] = field(default_factory=list)

    HEADER = ["episode_index", "task", "score", "length", "params_version", "wallclock_ms"]

    def append(self, record: EpisodeRecord) -> None:
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)

    def task_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for r in self.records:
            counts[r.task] = counts.get(r.task, 0) + 1
        return counts

    def write_csv(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.HEADER)
            for r in self.records:
                writer.writerow(
                    [r.episode_index, r.task, repr(r.score), r.length, r.params_version,
                     r.wallclock_ms]
                )

    @staticmethod
    def read_csv(path) -> "TrainingLog":
        out = TrainingLog()
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header != TrainingLog.HEADER:
                raise UgpError(f"{path}: unexpected header {header}")
            for row in reader:
                out.append(
                    EpisodeRecord(int(row[0]), row[1], float(row[2]), int(row[3]),
                                  int(row[4]), int(row[5]))
                )
        return out


@dataclass
class RunResult:
    params: NetworkParams
    opt_state: RmsPropState
    log: TrainingLog
    steps_applied: int
    env_steps: int
    aborted: list[str] = field(default_factory=list)


def predict_batch(params: NetworkParams, requests) -> dict:
    """Serve a batch of (actor_id, task, state) against one params snapshot.

    Requests are grouped per task and answered with one batched forward pass
    per group, which is semantically identical to per-request forwards.
    """
    by_task: dict[str, list] = {}
    for actor_id, task, state in requests:
        by_task.setdefault(task, []).append((actor_id, state))
    results = {}
    for task in sorted(by_task):
        group = by_task[task]
        states = np.stack([state for _, state in group])
        policies, values, _ = net.forward_many(params, task, states)
        for (actor_id, _), policy, value in zip(group, policies, values):
            results[actor_id] = (policy, float(value))
    return results


class _Actor:
    """Per-actor rollout bookkeeping shared by serial and threaded modes."""

    def __init__(self, actor_id: int, task: str, handler: EnvironmentHandler, config: EngineConfig):
        self.id = actor_id
        self.task = task
        self.handler = handler
        self.config = config
        self.action_rng = CounterRng(derive_seed(config.seed, "actions", actor_id))
        self.episodes_started = 0
        self.pending: list[RolloutStep] = []
        self.state: np.ndarray | None = None
        self.score = 0.0
        self.length = 0

    def begin_episode(self) -> None:
        ep_seed = derive_seed(self.config.seed, "episode", self.id, self.episodes_started)
        self.episodes_started += 1
        self.state = self.handler.reset(ep_seed)
        self.pending = []
        self.score = 0.0
        self.length = 0

    def flush(self, bootstrap: float, terminal: bool) -> list[TrainingPoint]:
        rollout = Rollout(
            task=self.task,
            steps=self.pending,
            bootstrap_value=0.0 if terminal else bootstrap,
            gamma=self.config.gamma,
            terminal=terminal,
        )
        self.pending = []
        return losses.compute_returns(rollout)


def _build_actors(config: EngineConfig, env_factories: dict[str, EnvFactory]) -> list[_Actor]:
    actors = []
    actor_id = 0
    for task in sorted(config.assignment):
        if task not in env_factories:
            raise ConfigurationError(f"no environment factory for task {task!r}")
        for _ in range(config.assignment[task]):
            actors.append(_Actor(actor_id, task, EnvironmentHandler(env_factories[task]()), config))
            actor_id += 1
    return actors


class _TrainState:
    """Single serialized parameter updater."""

    def __init__(self, params: NetworkParams, opt_state: RmsPropState, config: EngineConfig,
                 anchors):
        self.params = params
        self.opt_state = opt_state
        self.config = config
        self.anchors = tuple(anchors)
        self.steps_applied = 0

    def train_on(self, batch: list[TrainingPoint]) -> None:
        batches: dict[str, list[TrainingPoint]] = {}
        for point in batch:
            batches.setdefault(point.task, []).append(point)
        _, grads = losses.multi_env_loss(
            batches, self.params, self.anchors, self.config.value_weight,
            self.config.entropy_weight,
        )
        result = optim.apply(self.params, grads, self.opt_state)
        if result.applied:
            self.params = result.params  # atomic reference swap
            self.opt_state = result.state
            self.steps_applied += 1
        else:
            log.warning("optimizer step skipped: %s", result.reason)


def run_training(
    config: EngineConfig,
    params: NetworkParams,
    opt_state: RmsPropState,
    env_factories: dict[str, EnvFactory],
    anchors=(),
) -> RunResult:
    """Train until the episode/step budget is exhausted."""
    for task in config.assignment:
        if task not in params.tasks:
            raise ConfigurationError(f"task {task!r} has no registered head")
    if config.deterministic:
        return _run_serial(config, params, opt_state, env_factories, anchors)
    return _run_threaded(config, params, opt_state, env_factories, anchors)


# ---------------------------------------------------------------------------
# deterministic lock-step mode


def _run_serial(config, params, opt_state, env_factories, anchors) -> RunResult:
    actors = _build_actors(config, env_factories)
    for actor in actors:
        actor.begin_episode()
    trainer = _TrainState(params, opt_state, config, anchors)
    log_out = TrainingLog()
    buffer: list[TrainingPoint] = []
    episodes = 0
    env_steps = 0
    aborted: list[str] = []

    def budget_done() -> bool:
        if config.max_episodes is not None and episodes >= config.max_episodes:
            return True
        if config.max_steps is not None and env_steps >= config.max_steps:
            return True
        return False

    while not budget_done() and actors:
        by_task: dict[str, list[_Actor]] = {}
        for actor in actors:
            by_task.setdefault(actor.task, []).append(actor)
        predictions = predict_batch(
            trainer.params,
            [(a.id, a.task, a.state) for task in sorted(by_task) for a in by_task[task]],
        )
        for actor in list(actors):
            if budget_done():
                break
            policy, value = predictions[actor.id]
            if len(actor.pending) == config.rollout_length:
                buffer.extend(actor.flush(bootstrap=value, terminal=False))
            action = actor.action_rng.choice_weighted(policy)
            try:
                next_state, reward, terminal = actor.handler.step(action)
            except Exception as exc:
                log.error("actor %d (%s) aborted: %s", actor.id, actor.task, exc)
                aborted.append(f"actor {actor.id} ({actor.task}): {exc}")
                actors.remove(actor)
                continue
            env_steps += 1
            actor.pending.append(RolloutStep(actor.state, action, reward))
            actor.score += reward
            actor.length += 1
            if terminal:
                buffer.extend(actor.flush(bootstrap=0.0, terminal=True))
                log_out.append(
                    EpisodeRecord(
                        config.start_episode + episodes, actor.task, actor.score,
                        actor.length, trainer.params.version, 0,
                    )
                )
                episodes += 1
                actor.begin_episode()
            else:
                actor.state = next_state
            while len(buffer) >= config.batch_size:
                trainer.train_on(buffer[: config.batch_size])
                del buffer[: config.batch_size]

    if len(aborted) > config.max_abort_fraction * config.actor_count:
        raise EngineFailure(f"{len(aborted)} of {config.actor_count} actors aborted: {aborted}")
    return RunResult(trainer.params, trainer.opt_state, log_out, trainer.steps_applied,
                     env_steps, aborted)


# ---------------------------------------------------------------------------
# asynchronous threaded mode


class _Shared:
    def __init__(self, config: EngineConfig, trainer: _TrainState, actor_ids):
        self.config = config
        self.trainer = trainer
        self.stop = threading.Event()
        self.lock = threading.Lock()
        self.request_q: queue.Queue = queue.Queue()
        self.train_q: queue.Queue = queue.Queue()
        self.response_qs = {actor_id: queue.Queue() for actor_id in actor_ids}
        self.log = TrainingLog()
        self.episodes = 0
        self.env_steps = 0
        self.aborted: list[str] = []
        self.t0 = time.monotonic()

    @property
    def params(self) -> NetworkParams:
        return self.trainer.params  # reference read is atomic

    def wallclock_ms(self) -> int:
        return int((time.monotonic() - self.t0) * 1000)

    def budget_done_locked(self) -> bool:
        cfg = self.config
        if cfg.max_episodes is not None and self.episodes >= cfg.max_episodes:
            return True
        if cfg.max_steps is not None and self.env_steps >= cfg.max_steps:
            return True
        return False


def _actor_loop(actor: _Actor, shared: _Shared) -> None:
    config = shared.config
    try:
        actor.begin_episode()
        while not shared.stop.is_set():
            shared.request_q.put((actor.id, actor.task, actor.state))
            response = shared.response_qs[actor.id].get()
            if response is None:
                break  # shutdown cancellation
            policy, value = response
            if len(actor.pending) == config.rollout_length:
                for point in actor.flush(bootstrap=value, terminal=False):
                    shared.train_q.put(point)
            action = actor.action_rng.choice_weighted(policy)
            next_state, reward, terminal = actor.handler.step(action)
            with shared.lock:
                shared.env_steps += 1
                step_budget_hit = shared.budget_done_locked()
            actor.pending.append(RolloutStep(actor.state, action, reward))
            actor.score += reward
            actor.length += 1
            if terminal:
                for point in actor.flush(bootstrap=0.0, terminal=True):
                    shared.train_q.put(point)
                with shared.lock:
                    if not shared.budget_done_locked():
                        shared.log.append(
                            EpisodeRecord(
                                config.start_episode + shared.episodes, actor.task,
                                actor.score, actor.length, shared.params.version,
                                shared.wallclock_ms(),
                            )
                        )
                        shared.episodes += 1
                    if shared.budget_done_locked():
                        shared.stop.set()
                actor.begin_episode()
            else:
                actor.state = next_state
                if step_budget_hit:
                    shared.stop.set()
    except Exception as exc:
        log.error("actor %d (%s) aborted: %s", actor.id, actor.task, exc)
        with shared.lock:
            shared.aborted.append(f"actor {actor.id} ({actor.task}): {exc}")


def _predictor_loop(shared: _Shared) -> None:
    config = shared.config
    while True:
        try:
            first = shared.request_q.get(timeout=0.02)
        except queue.Empty:
            if shared.stop.is_set():
                break
            continue
        batch = [first]
        deadline = time.monotonic() + config.prediction_linger
        while len(batch) < config.prediction_cap:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                break
            try:
                batch.append(shared.request_q.get(timeout=remaining))
            except queue.Empty:
                break
        results = predict_batch(shared.params, batch)
        for actor_id, _, _ in batch:
            shared.response_qs[actor_id].put(results[actor_id])
    # drain pending requests with cancellation notices
    while True:
        try:
            actor_id, _, _ = shared.request_q.get_nowait()
        except queue.Empty:
            break
        shared.response_qs[actor_id].put(None)
    for response_q in shared.response_qs.values():
        response_q.put(None)


def _trainer_loop(shared: _Shared) -> None:
    config = shared.config
    batch: list[TrainingPoint] = []
    while True:
        try:
            batch.append(shared.train_q.get(timeout=0.02))
        except queue.Empty:
            if shared.stop.is_set():
                break
            continue
        if len(batch) >= config.batch_size:
            shared.trainer.train_on(batch)
            batch = []
    # points left over at shutdown are dropped (partial batch)


def _run_threaded(config, params, opt_state, env_factories, anchors) -> RunResult:
    actors = _build_actors(config, env_factories)
    trainer = _TrainState(params, opt_state, config, anchors)
    shared = _Shared(config, trainer, [a.id for a in actors])

    actor_threads = [
        threading.Thread(target=_actor_loop, args=(a, shared), name=f"actor-{a.id}", daemon=True)
        for a in actors
    ]
    predictor = threading.Thread(target=_predictor_loop, args=(shared,), name="predictor",
                                 daemon=True)
    trainer_thread = threading.Thread(target=_trainer_loop, args=(shared,), name="trainer",
                                      daemon=True)

    predictor.start()
    trainer_thread.start()
    for t in actor_threads:
        t.start()
    for t in actor_threads:
        t.join()
    shared.stop.set()
    predictor.join()
    trainer_thread.join()

    if len(shared.aborted) > config.max_abort_fraction * config.actor_count:
        raise EngineFailure(
            f"{len(shared.aborted)} of {config.actor_count} actors aborted: {shared.aborted}"
        )
    shared.log.records.sort(key=lambda r: r.episode_index)
    return RunResult(trainer.params, trainer.opt_state, shared.log, trainer.steps_applied,
                     shared.env_steps, shared.aborted)


# ---------------------------------------------------------------------------
# evaluation and consolidation


def evaluate(
    params: NetworkParams,
    task: str,
    episodes: int,
    seed: int,
    env_factory: EnvFactory,
    greedy: bool = False,
) -> tuple[float, list[float]]:
    """Run fixed policy-evaluation episodes; never mutates params.

    Episodes run lock-step against one batched forward per tick, which is
    equivalent to stepping them one by one.
    """
    handlers = [EnvironmentHandler(env_factory()) for _ in range(episodes)]
    states = [h.reset(derive_seed(seed, "eval-episode", i)) for i, h in enumerate(handlers)]
    rngs = [CounterRng(derive_seed(seed, "eval-actions", i)) for i in range(episodes)]
    scores = [0.0] * episodes
    active = list(range(episodes))
    while active:
        batch = np.stack([states[i] for i in active])
        policies, _, _ = net.forward_many(params, task, batch)
        still_active = []
        for row, i in enumerate(active):
            if greedy:
                action = int(np.argmax(policies[row]))
            else:
                action = rngs[i].choice_weighted(policies[row])
            state, reward, terminal = handlers[i].step(action)
            scores[i] += reward
            if not terminal:
                states[i] = state
                still_active.append(i)
        active = still_active
    return float(np.mean(scores)), scores


def collect_policy_states(
    params: NetworkParams, task: str, env_factory: EnvFactory, count: int, seed: int
) -> list[np.ndarray]:
    """Gather states visited by the current policy in one environment."""
    handler = EnvironmentHandler(env_factory())
    rng = CounterRng(derive_seed(seed, "consolidate-actions"))
    states: list[np.ndarray] = []
    episode = 0
    state = handler.reset(derive_seed(seed, "consolidate-episode", episode))
    while len(states) < count:
        states.append(state)
        fr = net.forward(params, task, state)
        action = rng.choice_weighted(fr.policy)
        state, _, terminal = handler.step(action)
        if terminal:
            episode += 1
            state = handler.reset(derive_seed(seed, "consolidate-episode", episode))
    return states


def build_anchor(
    params: NetworkParams,
    states_by_task: dict[str, list[np.ndarray]],
    lam: float,
    mode: str = "sampled",
    seed: int = 0,
    scope_prefix: str = "trunk/",
) -> EwcAnchor:
    """Fisher-weighted snapshot from already-collected states.

    Per-task Fisher diagonals are averaged with equal weight; the anchor
    scope is the tensors matching scope_prefix (the shared trunk by default,
    since heads for other tasks receive no new-task gradient anyway).
    """
    per_task = []
    for task in sorted(states_by_task):
        fisher = losses.estimate_fisher(
            params, task, states_by_task[task], mode=mode, seed=derive_seed(seed, "fisher", task)
        )
        per_task.append({k: v for k, v in fisher.items() if k.startswith(scope_prefix)})
    names = sorted(set().union(*per_task))
    averaged = {
        name: np.mean([f[name] for f in per_task if name in f], axis=0) for name in names
    }
    theta_star = {name: params.tensors[name].copy() for name in names}
    return EwcAnchor(theta_star=theta_star, fisher_diag=averaged, lam=lam)


def consolidate(
    params: NetworkParams,
    tasks,
    env_factories: dict[str, EnvFactory],
    sample_size: int,
    lam: float,
    seed: int = 0,
    mode: str = "sampled",
    scope_prefix: str = "trunk/",
) -> EwcAnchor:
    """Snapshot the scoped parameters and estimate their importance from
    sample_size on-policy states per listed task."""
    states_by_task = {
        task: collect_policy_states(
            params, task, env_factories[task], sample_size, derive_seed(seed, "collect", task)
        )
        for task in tasks
    }
    return build_anchor(params, states_by_task, lam, mode=mode, seed=seed,
                        scope_prefix=scope_prefix)
