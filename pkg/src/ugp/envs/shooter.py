"""Built-in deterministic bottom-up shooter environments.

Three related variants share one action set and one observation layout so a
single trunk can serve all of them:

* shooter-a: a small rank of enemies marches sideways and descends at the
  walls. Few enemies, short episodes.
* shooter-b: a larger formation marches without descending, but enemies
  periodically dive at the player. Longer episodes than shooter-a.
* shooter-c: enemies circle a fixed loop and the wave respawns when
  cleared, until the step cap.

All randomness comes from a counter-based generator owned by the instance,
so (seed, action sequence) fully determines every episode.

Tick order (step): 1 player action, 2 player shots move (one cell per
substep, collisions resolved after each substep), 3 enemies move,
4 collisions resolved again, 5 enemy shots move and player hit checked,
6 enemies fire, 7 end-of-episode checks (diver landing, clear/respawn,
invasion, step cap).
"""

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigurationError, ContractViolation
from ..rng import CounterRng, derive_seed
from .core import Environment, FrameProfile, Observation, vector_profile

ACTIONS = ("noop", "left", "right", "fire")
NOOP, LEFT, RIGHT, FIRE = range(4)

MARCH = "march-and-descend"
DIVE = "swooping-dive"
CIRCLE = "circling-respawn"

OBS_ENEMY_SLOTS = 8
OBS_DIM = 8 + 3 * OBS_ENEMY_SLOTS

CELL_PX = 4


@dataclass(frozen=True)
class ShooterConfig:
    variant: str
    pattern: str
    width: int = 12
    height: int = 10
    enemy_columns: tuple[int, ...] = (2, 4, 6, 8, 10)
    enemy_rows: tuple[int, ...] = (1,)
    fire_rate: float = 0.03
    step_cap: int = 240
    kill_reward: float = 1.0
    move_every: int = 2
    dive_every: int = 18
    drift_every: int = 2  # diver homing cadence
    shot_speed: int = 2
    max_player_shots: int = 1
    max_enemy_shots: int = 3
    respawn: bool = False

    def __post_init__(self):
        if self.width < 8 or self.height < 8:
            raise ConfigurationError("grid must be at least 8x8")
        if self.step_cap < 100:
            raise ConfigurationError("step cap must be >= 100")
        if self.kill_reward < 0:
            raise ConfigurationError("rewards must be >= 0")
        n_enemies = len(self.enemy_columns) * len(self.enemy_rows)
        if n_enemies > OBS_ENEMY_SLOTS:
            raise ConfigurationError(
                f"{n_enemies} enemies exceed the {OBS_ENEMY_SLOTS} observation slots"
            )
        for c in self.enemy_columns:
            if not 0 <= c < self.width:
                raise ConfigurationError(f"enemy column {c} outside grid")
        for r in self.enemy_rows:
            if not 0 <= r < self.height - 2:
                raise ConfigurationError(f"enemy row {r} too close to the player row")


_PRESETS = {
    "shooter-a": ShooterConfig(
        variant="shooter-a",
        pattern=MARCH,
        enemy_columns=(2, 5, 8, 11),
        enemy_rows=(1,),
        fire_rate=0.05,
        step_cap=200,
        move_every=3,
    ),
    "shooter-b": ShooterConfig(
        variant="shooter-b",
        pattern=DIVE,
        enemy_columns=(2, 5, 8, 11),
        enemy_rows=(1, 2),
        fire_rate=0.015,
        step_cap=420,
        move_every=3,
        dive_every=24,
        drift_every=3,
    ),
    "shooter-c": ShooterConfig(
        variant="shooter-c",
        pattern=CIRCLE,
        enemy_columns=(2, 4, 6, 8, 10),
        enemy_rows=(1,),
        fire_rate=0.03,
        step_cap=300,
        move_every=2,
        respawn=True,
    ),
}

VARIANTS = tuple(sorted(_PRESETS))


def shooter_config(name: str) -> ShooterConfig:
    if name not in _PRESETS:
        raise ConfigurationError(f"unknown shooter variant {name!r}; options: {VARIANTS}")
    return _PRESETS[name]


def _circle_path(cfg: ShooterConfig) -> list[tuple[int, int]]:
    # clockwise loop around the top band of the grid
    top, bottom = 1, 4
    left, right = 1, cfg.width - 2
    path = [(x, top) for x in range(left, right + 1)]
    path += [(right, y) for y in range(top + 1, bottom + 1)]
    path += [(x, bottom) for x in range(right - 1, left - 1, -1)]
    path += [(left, y) for y in range(bottom - 1, top, -1)]
    return path


class ShooterEnv(Environment):
    """One shooter instance. Never share an instance between actors."""

    def __init__(self, config: ShooterConfig, profile: str = "vector"):
        if profile not in ("vector", "image"):
            raise ConfigurationError(f"unknown observation profile {profile!r}")
        self.config = config
        self.profile_kind = profile
        if profile == "vector":
            self.frame_profile: FrameProfile = vector_profile(OBS_DIM)
        else:
            self.frame_profile = FrameProfile(
                "image", (config.height * CELL_PX, config.width * CELL_PX)
            )
        self.action_count = len(ACTIONS)
        self._path = _circle_path(config) if config.pattern == CIRCLE else None
        self._started = False

    # -- episode lifecycle -------------------------------------------------

    def reset(self, seed: int) -> Observation:
        cfg = self.config
        self._rng = CounterRng(derive_seed(seed, cfg.variant))
        self._t = 0
        self._score = 0.0
        self._terminal = False
        self._player_x = cfg.width // 2
        self._direction = 1
        self._wave = 0
        self._player_shots: list[list[int]] = []
        self._enemy_shots: list[list[int]] = []
        self._diver = -1
        self._diver_home = (0, 0)
        self._spawn_wave()
        self._started = True
        return self._observe(0.0)

    def _spawn_wave(self) -> None:
        cfg = self.config
        self._enemy_x: list[int] = []
        self._enemy_y: list[int] = []
        self._alive: list[bool] = []
        if cfg.pattern == CIRCLE:
            spacing = len(self._path) // len(cfg.enemy_columns)
            for i in range(len(cfg.enemy_columns)):
                idx = (i * spacing) % len(self._path)
                x, y = self._path[idx]
                self._enemy_x.append(x)
                self._enemy_y.append(y)
                self._alive.append(True)
            self._path_idx = [
                (i * spacing) % len(self._path) for i in range(len(cfg.enemy_columns))
            ]
        else:
            for row in cfg.enemy_rows:
                for col in cfg.enemy_columns:
                    self._enemy_x.append(col)
                    self._enemy_y.append(row)
                    self._alive.append(True)

    # -- stepping ----------------------------------------------------------

    def step(self, action: int) -> Observation:
        if not self._started:
            raise ContractViolation("step before reset")
        if self._terminal:
            raise ContractViolation("step after terminal; reset first")
        if not 0 <= action < len(ACTIONS):
            raise ContractViolation(f"action {action} out of range")
        cfg = self.config
        self._t += 1
        reward = 0.0

        # 1. player action
        if action == LEFT:
            self._player_x = max(0, self._player_x - 1)
        elif action == RIGHT:
            self._player_x = min(cfg.width - 1, self._player_x + 1)
        elif action == FIRE and len(self._player_shots) < cfg.max_player_shots:
            self._player_shots.append([self._player_x, cfg.height - 2])

        # 2. player shots advance cell by cell, killing on contact
        for _ in range(cfg.shot_speed):
            for shot in self._player_shots:
                shot[1] -= 1
            reward += self._resolve_kills()
            self._player_shots = [s for s in self._player_shots if s[1] >= 0]

        # 3. enemies move
        self._move_enemies()

        # 4. enemies may have stepped into shots
        reward += self._resolve_kills()

        # 5. enemy shots advance
        player_cell = (self._player_x, cfg.height - 1)
        for shot in self._enemy_shots:
            shot[1] += 1
            if (shot[0], shot[1]) == player_cell:
                self._terminal = True
        self._enemy_shots = [s for s in self._enemy_shots if s[1] <= cfg.height - 1]

        # 6. enemies fire (counter-based draws, enemy index order)
        if not self._terminal:
            for i in range(len(self._alive)):
                if len(self._enemy_shots) >= cfg.max_enemy_shots:
                    break
                if not self._alive[i]:
                    continue
                if self._rng.uniform() < cfg.fire_rate:
                    sx, sy = self._enemy_x[i], self._enemy_y[i] + 1
                    if (sx, sy) == player_cell:
                        self._terminal = True
                    elif sy <= cfg.height - 1:
                        self._enemy_shots.append([sx, sy])

        # 7. end-of-episode checks
        if not self._terminal:
            if not any(self._alive):
                if cfg.respawn:
                    self._wave += 1
                    self._spawn_wave()
                else:
                    self._terminal = True
            elif any(
                self._alive[i] and self._enemy_y[i] >= cfg.height - 2
                for i in range(len(self._alive))
                if i != self._diver
            ):
                self._terminal = True  # formation reached the player band
        if self._t >= cfg.step_cap:
            self._terminal = True

        self._score += reward
        return self._observe(reward)

    def _resolve_kills(self) -> float:
        kills = 0
        surviving = []
        for shot in self._player_shots:
            hit = -1
            for i in range(len(self._alive)):
                if self._alive[i] and self._enemy_x[i] == shot[0] and self._enemy_y[i] == shot[1]:
                    hit = i
                    break
            if hit >= 0:
                self._alive[hit] = False
                if hit == self._diver:
                    self._diver = -1
                kills += 1
            else:
                surviving.append(shot)
        self._player_shots = surviving
        return kills * self.config.kill_reward

    def _move_enemies(self) -> None:
        cfg = self.config
        if cfg.pattern == MARCH:
            if self._t % cfg.move_every == 0:
                self._march(descend=True)
        elif cfg.pattern == DIVE:
            if self._diver < 0 and self._t % cfg.dive_every == 0:
                candidates = [i for i in range(len(self._alive)) if self._alive[i]]
                if candidates:
                    self._diver = candidates[self._rng.randint(len(candidates))]
                    self._diver_home = (self._enemy_x[self._diver], self._enemy_y[self._diver])
            if self._t % cfg.move_every == 0:
                self._march(descend=False)
            if self._diver >= 0 and self._alive[self._diver]:
                d = self._diver
                self._enemy_y[d] += 1
                if self._t % cfg.drift_every == 0 and self._enemy_x[d] != self._player_x:
                    self._enemy_x[d] += 1 if self._player_x > self._enemy_x[d] else -1
                if self._enemy_y[d] >= cfg.height - 1:
                    if self._enemy_x[d] == self._player_x:
                        self._terminal = True
                    self._enemy_x[d], self._enemy_y[d] = self._diver_home
                    self._diver = -1
        elif cfg.pattern == CIRCLE:
            if self._t % cfg.move_every == 0:
                for i in range(len(self._alive)):
                    if self._alive[i]:
                        self._path_idx[i] = (self._path_idx[i] + 1) % len(self._path)
                        self._enemy_x[i], self._enemy_y[i] = self._path[self._path_idx[i]]

    def _march(self, descend: bool) -> None:
        cfg = self.config
        marchers = [
            i for i in range(len(self._alive)) if self._alive[i] and i != self._diver
        ]
        if not marchers:
            return
        xs = [self._enemy_x[i] for i in marchers]
        if self._direction > 0 and max(xs) + 1 > cfg.width - 1:
            self._direction = -1
            if descend:
                for i in marchers:
                    self._enemy_y[i] += 1
        elif self._direction < 0 and min(xs) - 1 < 0:
            self._direction = 1
            if descend:
                for i in marchers:
                    self._enemy_y[i] += 1
        else:
            for i in marchers:
                self._enemy_x[i] += self._direction

    # -- observations --------------------------------------------------------

    def _observe(self, reward: float) -> Observation:
        if self.profile_kind == "vector":
            return Observation(
                reward=reward, terminal=self._terminal, vector=self._feature_vector()
            )
        return Observation(reward=reward, terminal=self._terminal, pixels=self._render())

    def _feature_vector(self) -> np.ndarray:
        cfg = self.config
        px, py = self._player_x, cfg.height - 1
        v = np.zeros(OBS_DIM)
        v[0] = px / (cfg.width - 1)

        nearest = -1
        best = None
        for i in range(len(self._alive)):
            if not self._alive[i]:
                continue
            key = (abs(self._enemy_x[i] - px), py - self._enemy_y[i], i)
            if best is None or key < best:
                best = key
                nearest = i
        if nearest >= 0:
            v[1] = (self._enemy_x[nearest] - px) / (cfg.width - 1)
            v[2] = (py - self._enemy_y[nearest]) / (cfg.height - 1)
            v[3] = 1.0 if self._enemy_x[nearest] == px else 0.0
        v[4] = len(self._player_shots) / cfg.max_player_shots

        danger = None
        for sx, sy in self._enemy_shots:
            if abs(sx - px) <= 1:
                proximity = 1.0 - (py - sy) / (cfg.height - 1)
                if danger is None or proximity > danger[0]:
                    danger = (proximity, sx - px)
        if danger is not None:
            v[5] = danger[0]
            v[6] = float(danger[1])
        v[7] = 1.0 - self._t / cfg.step_cap

        for slot in range(min(len(self._alive), OBS_ENEMY_SLOTS)):
            base = 8 + 3 * slot
            if self._alive[slot]:
                v[base] = 1.0
                v[base + 1] = self._enemy_x[slot] / (cfg.width - 1)
                v[base + 2] = self._enemy_y[slot] / (cfg.height - 1)
        return v

    def _render(self) -> np.ndarray:
        cfg = self.config
        img = np.zeros((cfg.height, cfg.width), dtype=np.uint8)
        for i in range(len(self._alive)):
            if self._alive[i] and 0 <= self._enemy_y[i] < cfg.height:
                img[self._enemy_y[i], self._enemy_x[i]] = 255
        for sx, sy in self._player_shots:
            if 0 <= sy < cfg.height:
                img[sy, sx] = 120
        for sx, sy in self._enemy_shots:
            if 0 <= sy < cfg.height:
                img[sy, sx] = 80
        img[cfg.height - 1, self._player_x] = 180
        big = np.kron(img, np.ones((CELL_PX, CELL_PX), dtype=np.uint8))
        return big[:, :, None]

    # -- introspection used by scripted policies and tests -------------------

    @property
    def score(self) -> float:
        return self._score

    @property
    def steps(self) -> int:
        return self._t

    @property
    def player_x(self) -> int:
        return self._player_x

    def alive_enemies(self) -> list[tuple[int, int]]:
        return [
            (self._enemy_x[i], self._enemy_y[i])
            for i in range(len(self._alive))
            if self._alive[i]
        ]


def make_shooter(name: str, profile: str = "vector") -> ShooterEnv:
    return ShooterEnv(shooter_config(name), profile=profile)


def tracker_action(env: ShooterEnv) -> int:
    """Scripted baseline: chase the nearest enemy's column, fire when aligned."""
    enemies = env.alive_enemies()
    if not enemies:
        return NOOP
    ex = min(enemies, key=lambda e: (abs(e[0] - env.player_x), e[1]))[0]
    if ex < env.player_x:
        return LEFT
    if ex > env.player_x:
        return RIGHT
    return FIRE
