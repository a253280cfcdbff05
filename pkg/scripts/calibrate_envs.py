"""Dev helper: measure episode length and score for random vs scripted play."""

import numpy as np

from ugp.envs.shooter import make_shooter, tracker_action
from ugp.rng import CounterRng


def run(variant, policy, episodes=200, seed_base=5000):
    env = make_shooter(variant)
    scores, lengths = [], []
    for episode in range(episodes):
        env.reset(seed=seed_base + episode)
        rng = CounterRng(episode)
        terminal = False
        while not terminal:
            terminal = env.step(policy(env, rng)).terminal
        scores.append(env.score)
        lengths.append(env.steps)
    return np.mean(scores), np.std(scores), np.mean(lengths)


if __name__ == "__main__":
    for variant in ("shooter-a", "shooter-b", "shooter-c"):
        rs, rstd, rl = run(variant, lambda env, rng: rng.randint(4))
        ss, sstd, sl = run(variant, lambda env, rng: tracker_action(env))
        print(
            f"{variant}: random score {rs:6.2f}±{rstd:5.2f} len {rl:6.1f} | "
            f"scripted score {ss:6.2f}±{sstd:5.2f} len {sl:6.1f} | ratio {ss / max(rs, 1e-9):.1f}x"
        )
