"""Desk-scale study harness.

Study 1 (transfer): train specialist agents and a two-task hybrid, then let
each learn a held-out third task and compare. Study 2 (retention): take the
hybrid, consolidate its trunk with a Fisher-weighted anchor at several
penalty strengths, learn the third task, and measure how much of the source
tasks survives.

Every number in a report is read back from CSV files persisted during the
runs; the report generator never reaches into in-memory results.
"""

import csv
import logging
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import checkpoint, engine, net
from .engine import EngineConfig, TrainingLog, run_training
from .envs import OBS_DIM, env_factory
from .envs.core import STACK_DEPTH
from .losses import EwcAnchor
from .net import LayerSpec
from .optim import RmsPropState
from .rng import derive_seed

log = logging.getLogger(__name__)

TASK_A = "shooter-a"
TASK_B = "shooter-b"
TASK_C = "shooter-c"
ALL_TASKS = (TASK_A, TASK_B, TASK_C)

DEFAULT_TRUNK = (LayerSpec.dense(64), LayerSpec.relu(), LayerSpec.dense(32), LayerSpec.relu())
VECTOR_INPUT_SHAPE = (STACK_DEPTH, OBS_DIM)

EVAL_HEADER = ["train_episodes", "task", "mean_score", "std_score", "episodes"]


@dataclass
class StudySettings:
    """Desk-scale protocol knobs. scale=1.0 is the CI-sized default; larger
    scales stretch the budgets proportionally."""

    out_dir: Path
    scale: float = 1.0
    n_seeds: int = 3
    base_seed: int = 0
    base_episodes: int = 300  # source-task budget E at scale 1.0
    eval_episodes: int = 100
    checkpoints_per_phase: int = 15  # evaluate every E/15 episodes
    actors: int = 8
    lambdas: tuple[float, ...] = (0.0, 50.0, 100.0)
    fisher_samples: int = 400
    deterministic: bool = True
    batch_size: int = 32
    rollout_length: int = 5
    gamma: float = 0.99
    learning_rate: float = 1e-3
    rho: float = 0.99
    clip_norm: float | None = 40.0
    entropy_weight: float = 0.01
    value_weight: float = 0.5
    trunk: tuple[LayerSpec, ...] = DEFAULT_TRUNK
    greedy_eval: bool = False

    @property
    def episodes(self) -> int:
        return max(15, int(round(self.base_episodes * self.scale)))

    @property
    def transfer_episodes(self) -> int:
        return max(5, self.episodes // 3)

    @property
    def cadence(self) -> int:
        return max(1, self.episodes // self.checkpoints_per_phase)


class EvalRow(NamedTuple):
    train_episodes: int
    task: str
    mean_score: float
    std_score: float
    episodes: int


def write_eval_csv(path, rows: list[EvalRow]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(EVAL_HEADER)
        for row in rows:
            writer.writerow(
                [row.train_episodes, row.task, repr(row.mean_score), repr(row.std_score),
                 row.episodes]
            )


def read_eval_csv(path) -> list[EvalRow]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for raw in reader:
            rows.append(EvalRow(int(raw[0]), raw[1], float(raw[2]), float(raw[3]), int(raw[4])))
    return rows


def agent_seed(settings: StudySettings, seed_index: int, agent: str) -> int:
    # keyed by (base seed, seed index, agent name) only, so an agent's run
    # never depends on which siblings share the invocation
    return derive_seed("agent", settings.base_seed, seed_index, agent)


def build_agent_params(settings: StudySettings, seed_index: int, agent: str) -> net.NetworkParams:
    tasks = {name: 4 for name in ALL_TASKS}
    return net.build_network(
        settings.trunk, tasks, agent_seed(settings, seed_index, agent), VECTOR_INPUT_SHAPE
    )


def fresh_optimizer(settings: StudySettings) -> RmsPropState:
    return RmsPropState.fresh(
        rho=settings.rho, lr=settings.learning_rate, clip_norm=settings.clip_norm
    )


def run_phase(
    params,
    opt_state,
    *,
    settings: StudySettings,
    seed: int,
    phase: str,
    assignment: dict[str, int],
    episodes: int,
    eval_tasks: tuple[str, ...],
    out_dir: Path,
    anchors=(),
):
    """Train in cadence-sized chunks, evaluating after each chunk.

    Persists train.csv, eval.csv and checkpoint.ugpc under out_dir and
    returns (params, opt_state, eval rows).
    """
    out_dir = Path(out_dir)
    merged = TrainingLog()
    eval_rows: list[EvalRow] = []
    done = 0
    chunk_index = 0
    while done < episodes:
        chunk = min(settings.cadence, episodes - done)
        config = EngineConfig(
            assignment=assignment,
            rollout_length=settings.rollout_length,
            gamma=settings.gamma,
            batch_size=settings.batch_size,
            max_episodes=chunk,
            seed=derive_seed(seed, phase, "chunk", chunk_index),
            deterministic=settings.deterministic,
            value_weight=settings.value_weight,
            entropy_weight=settings.entropy_weight,
            start_episode=done,
        )
        factories = {task: env_factory(task) for task in assignment}
        result = run_training(config, params, opt_state, factories, anchors)
        params, opt_state = result.params, result.opt_state
        merged.records.extend(result.log.records)
        done += chunk
        chunk_index += 1
        for task in eval_tasks:
            mean, scores = engine.evaluate(
                params,
                task,
                settings.eval_episodes,
                derive_seed(seed, phase, "eval", done, task),
                env_factory(task),
                greedy=settings.greedy_eval,
            )
            eval_rows.append(
                EvalRow(done, task, mean, float(np.std(scores)), len(scores))
            )
    merged.write_csv(out_dir / "train.csv")
    write_eval_csv(out_dir / "eval.csv", eval_rows)
    checkpoint.save_checkpoint(out_dir / "checkpoint.ugpc", params, opt_state)
    return params, opt_state, eval_rows


def final_eval(params, settings: StudySettings, seed: int, tasks, path) -> list[EvalRow]:
    rows = []
    for task in tasks:
        mean, scores = engine.evaluate(
            params,
            task,
            settings.eval_episodes,
            derive_seed(seed, "final", task),
            env_factory(task),
            greedy=settings.greedy_eval,
        )
        rows.append(EvalRow(-1, task, mean, float(np.std(scores)), len(scores)))
    write_eval_csv(path, rows)
    return rows


STUDY1_AGENTS = {
    "single-a": {TASK_A: 1.0},
    "single-b": {TASK_B: 1.0},
    "single-c": {TASK_C: 1.0},
    "hybrid": {TASK_A: 0.5, TASK_B: 0.5},
}


def _assignment(settings: StudySettings, shares: dict[str, float]) -> dict[str, int]:
    total = settings.actors
    tasks = sorted(shares)
    counts = {task: max(1, int(round(shares[task] * total))) for task in tasks}
    # trim/pad to exactly `total`, preserving order determinism
    while sum(counts.values()) > total:
        counts[max(tasks, key=lambda t: counts[t])] -= 1
    while sum(counts.values()) < total:
        counts[min(tasks, key=lambda t: counts[t])] += 1
    return counts


def run_study1(settings: StudySettings) -> Path:
    """Transfer study: does two-task pretraining speed up a third task?"""
    root = Path(settings.out_dir) / "study1"
    for seed_index in range(settings.n_seeds):
        seed_dir = root / f"seed{seed_index}"
        for agent, shares in STUDY1_AGENTS.items():
            seed = agent_seed(settings, seed_index, agent)
            params = build_agent_params(settings, seed_index, agent)
            opt_state = fresh_optimizer(settings)
            own_tasks = tuple(sorted(shares))
            log.info("study1 seed %d: %s phase1 on %s", seed_index, agent, own_tasks)
            params, opt_state, _ = run_phase(
                params,
                opt_state,
                settings=settings,
                seed=seed,
                phase="phase1",
                assignment=_assignment(settings, shares),
                episodes=settings.episodes,
                eval_tasks=own_tasks,
                out_dir=seed_dir / agent / "phase1",
            )
            if agent != "single-c":
                log.info("study1 seed %d: %s transfer to %s", seed_index, agent, TASK_C)
                params, opt_state, _ = run_phase(
                    params,
                    opt_state,
                    settings=settings,
                    seed=seed,
                    phase="transfer",
                    assignment={TASK_C: settings.actors},
                    episodes=settings.transfer_episodes,
                    eval_tasks=(TASK_C,),
                    out_dir=seed_dir / agent / "transfer",
                )
            final_eval(params, settings, seed, ALL_TASKS, seed_dir / agent / "final_eval.csv")
    emit_study1_report(root, settings)
    return root


def run_study2(settings: StudySettings, source_study1: Path | None = None) -> Path:
    """Retention study: consolidation strength versus forgetting."""
    root = Path(settings.out_dir) / "study2"
    for seed_index in range(settings.n_seeds):
        seed_dir = root / f"seed{seed_index}"
        seed = agent_seed(settings, seed_index, "hybrid")
        phase1_dir = seed_dir / "hybrid" / "phase1"

        source_ckpt = None
        if source_study1 is not None:
            candidate = Path(source_study1) / f"seed{seed_index}" / "hybrid" / "phase1"
            if (candidate / "checkpoint.ugpc").exists():
                source_ckpt = candidate
        if source_ckpt is not None:
            params, opt_state, _ = checkpoint.load_checkpoint(source_ckpt / "checkpoint.ugpc")
            phase1_dir.mkdir(parents=True, exist_ok=True)
            for name in ("train.csv", "eval.csv", "checkpoint.ugpc"):
                (phase1_dir / name).write_bytes((source_ckpt / name).read_bytes())
        else:
            params = build_agent_params(settings, seed_index, "hybrid")
            opt_state = fresh_optimizer(settings)
            params, opt_state, _ = run_phase(
                params,
                opt_state,
                settings=settings,
                seed=seed,
                phase="phase1",
                assignment=_assignment(settings, STUDY1_AGENTS["hybrid"]),
                episodes=settings.episodes,
                eval_tasks=(TASK_A, TASK_B),
                out_dir=phase1_dir,
            )

        # one consolidation per seed; the anchors differ only in strength
        log.info("study2 seed %d: consolidating on %s", seed_index, (TASK_A, TASK_B))
        base_anchor = engine.consolidate(
            params,
            (TASK_A, TASK_B),
            {task: env_factory(task) for task in (TASK_A, TASK_B)},
            sample_size=settings.fisher_samples,
            lam=0.0,
            seed=derive_seed(seed, "consolidate"),
        )

        for lam in settings.lambdas:
            lam_dir = seed_dir / f"lam-{lam:g}"
            anchor = replace(base_anchor, lam=lam)
            checkpoint.write_tensors(
                lam_dir / "anchor.ugpc", checkpoint.anchors_to_tensors([anchor])
            )
            log.info("study2 seed %d: lambda=%g transfer to %s", seed_index, lam, TASK_C)
            lam_params, lam_opt, _ = run_phase(
                params,
                opt_state,
                settings=settings,
                seed=seed,
                phase="transfer",
                assignment={TASK_C: settings.actors},
                episodes=settings.transfer_episodes,
                eval_tasks=(TASK_C,),
                out_dir=lam_dir / "transfer",
                anchors=(anchor,),
            )
            final_eval(
                lam_params, settings, seed, ALL_TASKS, lam_dir / "final_eval.csv"
            )
    emit_study2_report(root, settings)
    return root


# ---------------------------------------------------------------------------
# reporting (reads persisted CSVs only)


def _plt():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _fmt(x: float) -> str:
    return f"{x:.3f}"


def _seed_dirs(root: Path) -> list[Path]:
    return sorted(p for p in root.iterdir() if p.is_dir() and p.name.startswith("seed"))


def _mean_std(values) -> tuple[float, float]:
    arr = np.asarray(list(values), dtype=np.float64)
    return float(arr.mean()), float(arr.std())


def _final_scores(seed_dir: Path, agent: str) -> dict[str, float]:
    rows = read_eval_csv(seed_dir / agent / "final_eval.csv")
    return {row.task: row.mean_score for row in rows}


def emit_study1_report(root: Path, settings: StudySettings) -> None:
    root = Path(root)
    report_dir = root / "report"
    report_dir.mkdir(parents=True, exist_ok=True)
    plt = _plt()
    seed_dirs = _seed_dirs(root)
    agents = sorted(STUDY1_AGENTS)

    # learning curves per task (phase 1) and on the held-out task (transfer)
    for task in ALL_TASKS:
        fig, ax = plt.subplots(figsize=(6, 4), dpi=120)
        for agent in agents:
            series = []
            for seed_dir in seed_dirs:
                path = seed_dir / agent / "phase1" / "eval.csv"
                if not path.exists():
                    continue
                rows = [r for r in read_eval_csv(path) if r.task == task]
                if rows:
                    series.append(rows)
            if not series:
                continue
            xs = [r.train_episodes for r in series[0]]
            ys = np.mean([[r.mean_score for r in rows] for rows in series], axis=0)
            ax.plot(xs, ys, marker="o", label=agent)
        ax.set_xlabel("training episodes")
        ax.set_ylabel("mean evaluation score")
        ax.set_title(f"source training, evaluated on {task}")
        ax.legend()
        fig.tight_layout()
        fig.savefig(report_dir / f"phase1_{task}.png")
        plt.close(fig)

    fig, ax = plt.subplots(figsize=(6, 4), dpi=120)
    for agent in agents:
        if agent == "single-c":
            continue
        series = []
        for seed_dir in seed_dirs:
            path = seed_dir / agent / "transfer" / "eval.csv"
            if path.exists():
                series.append([r for r in read_eval_csv(path) if r.task == TASK_C])
        if not series:
            continue
        xs = [r.train_episodes for r in series[0]]
        ys = np.mean([[r.mean_score for r in rows] for rows in series], axis=0)
        ax.plot(xs, ys, marker="o", label=agent)
    ax.set_xlabel(f"additional episodes on {TASK_C}")
    ax.set_ylabel("mean evaluation score")
    ax.set_title(f"learning the held-out task ({TASK_C})")
    ax.legend()
    fig.tight_layout()
    fig.savefig(report_dir / f"transfer_{TASK_C}.png")
    plt.close(fig)

    # summary table
    finals: dict[str, dict[str, list[float]]] = {a: {t: [] for t in ALL_TASKS} for a in agents}
    hybrid_wins = 0
    single_c_tops = 0
    for seed_dir in seed_dirs:
        per_agent = {agent: _final_scores(seed_dir, agent) for agent in agents}
        for agent in agents:
            for task in ALL_TASKS:
                finals[agent][task].append(per_agent[agent][task])
        if per_agent["hybrid"][TASK_C] > per_agent["single-a"][TASK_C] and per_agent["hybrid"][
            TASK_C
        ] > per_agent["single-b"][TASK_C]:
            hybrid_wins += 1
        if per_agent["single-c"][TASK_C] >= max(per_agent[a][TASK_C] for a in agents):
            single_c_tops += 1

    with open(report_dir / "summary.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["agent", "task", "mean_final_score", "std_over_seeds", "seeds"])
        for agent in agents:
            for task in ALL_TASKS:
                mean, std = _mean_std(finals[agent][task])
                writer.writerow([agent, task, _fmt(mean), _fmt(std), len(seed_dirs)])

    lines = [
        "# Transfer study",
        "",
        f"Budget: {settings.episodes} source episodes, {settings.transfer_episodes} "
        f"transfer episodes, {len(seed_dirs)} seeds.",
        "",
        "| agent | " + " | ".join(ALL_TASKS) + " |",
        "|---" * (1 + len(ALL_TASKS)) + "|",
    ]
    for agent in agents:
        cells = []
        for task in ALL_TASKS:
            mean, std = _mean_std(finals[agent][task])
            cells.append(f"{_fmt(mean)} ± {_fmt(std)}")
        lines.append(f"| {agent} | " + " | ".join(cells) + " |")
    lines += [
        "",
        f"Hybrid beat both single-task agents on {TASK_C} in {hybrid_wins} of "
        f"{len(seed_dirs)} seeds.",
        f"The {TASK_C} specialist held the top {TASK_C} score in {single_c_tops} of "
        f"{len(seed_dirs)} seeds.",
        "",
    ]
    (report_dir / "summary.md").write_text("\n".join(lines))


def study2_tables(root: Path, settings: StudySettings):
    """Per-seed retention ratios and new-task scores, straight from CSVs."""
    root = Path(root)
    retention: dict[float, dict[str, list[float]]] = {
        lam: {TASK_A: [], TASK_B: []} for lam in settings.lambdas
    }
    new_task: dict[float, list[float]] = {lam: [] for lam in settings.lambdas}
    for seed_dir in _seed_dirs(root):
        phase1_rows = read_eval_csv(seed_dir / "hybrid" / "phase1" / "eval.csv")
        last = max(r.train_episodes for r in phase1_rows)
        pre = {r.task: r.mean_score for r in phase1_rows if r.train_episodes == last}
        for lam in settings.lambdas:
            rows = read_eval_csv(seed_dir / f"lam-{lam:g}" / "final_eval.csv")
            post = {r.task: r.mean_score for r in rows}
            for task in (TASK_A, TASK_B):
                denom = pre[task] if pre[task] > 0 else math.inf
                retention[lam][task].append(post[task] / denom)
            new_task[lam].append(post[TASK_C])
    return retention, new_task


def emit_study2_report(root: Path, settings: StudySettings) -> None:
    root = Path(root)
    report_dir = root / "report"
    report_dir.mkdir(parents=True, exist_ok=True)
    plt = _plt()
    retention, new_task = study2_tables(root, settings)
    lambdas = list(settings.lambdas)

    with open(report_dir / "retention.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["lambda", "task", "mean_retention", "std_over_seeds", "seeds"])
        for lam in lambdas:
            for task in (TASK_A, TASK_B):
                mean, std = _mean_std(retention[lam][task])
                writer.writerow([f"{lam:g}", task, _fmt(mean), _fmt(std),
                                 len(retention[lam][task])])

    fig, ax = plt.subplots(figsize=(6, 4), dpi=120)
    width = 0.35
    xs = np.arange(len(lambdas))
    for offset, task in zip((-width / 2, width / 2), (TASK_A, TASK_B)):
        means = [np.mean(retention[lam][task]) for lam in lambdas]
        ax.bar(xs + offset, means, width, label=task)
    ax.set_xticks(xs, [f"λ={lam:g}" for lam in lambdas])
    ax.set_ylabel("retention (post / pre score)")
    ax.set_title("source-task retention after learning the new task")
    ax.axhline(1.0, color="gray", linewidth=0.8, linestyle="--")
    ax.legend()
    fig.tight_layout()
    fig.savefig(report_dir / "retention.png")
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(6, 4), dpi=120)
    for lam in lambdas:
        series = []
        for seed_dir in _seed_dirs(root):
            path = seed_dir / f"lam-{lam:g}" / "transfer" / "eval.csv"
            if path.exists():
                series.append([r for r in read_eval_csv(path) if r.task == TASK_C])
        if not series:
            continue
        xs2 = [r.train_episodes for r in series[0]]
        ys = np.mean([[r.mean_score for r in rows] for rows in series], axis=0)
        ax.plot(xs2, ys, marker="o", label=f"λ={lam:g}")
    ax.set_xlabel(f"episodes on {TASK_C}")
    ax.set_ylabel("mean evaluation score")
    ax.set_title("new-task learning under consolidation")
    ax.legend()
    fig.tight_layout()
    fig.savefig(report_dir / f"new_task_{TASK_C}.png")
    plt.close(fig)

    lines = [
        "# Retention study",
        "",
        f"{len(_seed_dirs(root))} seeds; consolidation from {settings.fisher_samples} "
        f"on-policy states per source task.",
        "",
        "| λ | retention " + TASK_A + " | retention " + TASK_B + f" | final {TASK_C} score |",
        "|---|---|---|---|",
    ]
    for lam in lambdas:
        ra, _ = _mean_std(retention[lam][TASK_A])
        rb, _ = _mean_std(retention[lam][TASK_B])
        nt, _ = _mean_std(new_task[lam])
        lines.append(f"| {lam:g} | {_fmt(ra)} | {_fmt(rb)} | {_fmt(nt)} |")
    lines.append("")
    (report_dir / "summary.md").write_text("\n".join(lines))


def resolve_out_dir(cli_value: str | None) -> Path:
    env_override = os.environ.get("UGP_OUT")
    if env_override:
        return Path(env_override)
    if cli_value:
        return Path(cli_value)
    return Path("runs")
