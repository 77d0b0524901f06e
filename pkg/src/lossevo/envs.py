"""Perturbable continuous-control environments and sweep construction.

Two families are built in:

* ``pendulum``: swing-up of a rod driven by a bounded torque. Observation
  (cos θ, sin θ, θ̇) with θ = 0 upright; reward
  -(wrap(θ)² + 0.1·θ̇² + 0.001·u²) on the pre-step state.
* ``pointmass``: a unit-force cart on a track with walls at ±``wall``.
  Observation (x, ẋ); reward -(x² + 0.01·u²).

Both integrate with semi-implicit Euler. All per-episode work is vectorized
across (config, episode) pairs so that sweep evaluation stays cheap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import ConfigError

FAMILIES = ("pendulum", "pointmass")
OBS_DIMS = {"pendulum": 3, "pointmass": 2}
ACTION_DIM = 1

GRAVITY = 10.0
MAX_SPEED = 8.0
MAX_TORQUE = 2.0
PENDULUM_STEP_COST_BOUND = math.pi ** 2 + 0.1 * MAX_SPEED ** 2 + 0.001 * MAX_TORQUE ** 2

PENDULUM_SWEEP = (0.1, 0.2, 0.4, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0, 5.0, 7.5, 10.0)
PENDULUM_DESK_SWEEP = (0.2, 0.5, 1.0, 2.0, 5.0)


@dataclass(frozen=True)
class EnvConfig:
    family: str
    mass: float = 1.0
    length: float = 1.0
    rollout_length: int = 200
    min_return: float = -200 * PENDULUM_STEP_COST_BOUND
    max_return: float = 0.0
    dt: float = 0.05
    # point-mass only
    wall: float = 2.0
    init_position: tuple[float, float] = (-1.0, 1.0)
    init_velocity: tuple[float, float] = (-1.0, 1.0)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown environment family {self.family!r}", "family")
        if self.rollout_length < 1:
            raise ConfigError("rollout_length must be at least 1", "rollout_length")
        if not self.min_return < self.max_return:
            raise ConfigError("min_return must be below max_return", "min_return")
        if self.mass <= 0 or self.length <= 0 or self.dt <= 0:
            raise ConfigError("mass, length and dt must be positive", "mass")
        object.__setattr__(self, "init_position", tuple(self.init_position))
        object.__setattr__(self, "init_velocity", tuple(self.init_velocity))

    @property
    def obs_dim(self) -> int:
        return OBS_DIMS[self.family]

    @property
    def dims(self) -> tuple[int, int]:
        return self.obs_dim, ACTION_DIM

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}


def pendulum_config(rollout_length: int = 200, **kw) -> EnvConfig:
    """Desk-scale pendulum; the worst-case per-step cost sets ``min_return``."""
    kw.setdefault("min_return", -rollout_length * PENDULUM_STEP_COST_BOUND)
    return EnvConfig("pendulum", rollout_length=rollout_length, **kw)


def pendulum_long_config(**kw) -> EnvConfig:
    """Long-horizon pendulum with return bounds [-2000, 0]."""
    kw.setdefault("min_return", -2000.0)
    return EnvConfig("pendulum", rollout_length=2000, **kw)


def pointmass_config(**kw) -> EnvConfig:
    kw.setdefault("rollout_length", 100)
    kw.setdefault("dt", 0.1)
    kw.setdefault("init_velocity", (-1.5, 1.5))
    kw.setdefault("min_return", -200.0)
    return EnvConfig("pointmass", **kw)


# ---------------------------------------------------------------------------
# vectorized dynamics; a state batch is an [n, 2] array of (θ, θ̇) or (x, ẋ)


def _wrap(theta: np.ndarray) -> np.ndarray:
    return (theta + np.pi) % (2 * np.pi) - np.pi


def _params(cfgs: Sequence[EnvConfig]) -> dict:
    return {name: np.array([getattr(c, name) for c in cfgs], dtype=np.float64)
            for name in ("mass", "length", "dt", "wall")}


def _initial(cfgs: Sequence[EnvConfig], seeds: Sequence) -> np.ndarray:
    out = np.empty((len(cfgs), 2))
    for i, (cfg, seed) in enumerate(zip(cfgs, seeds)):
        rng = np.random.default_rng(seed)
        if cfg.family == "pendulum":
            out[i] = rng.uniform(-np.pi, np.pi), rng.uniform(-1.0, 1.0)
        else:
            out[i] = rng.uniform(*cfg.init_position), rng.uniform(*cfg.init_velocity)
    return out


def _observe(family: str, state: np.ndarray) -> np.ndarray:
    if family == "pendulum":
        return np.stack([np.cos(state[:, 0]), np.sin(state[:, 0]), state[:, 1]], axis=1)
    return state.copy()


def _advance(family: str, state: np.ndarray, action: np.ndarray, p: dict):
    a = np.clip(action[:, 0], -1.0, 1.0)
    if family == "pendulum":
        th, thdot = state[:, 0], state[:, 1]
        u = MAX_TORQUE * a
        m, l, dt = p["mass"], p["length"], p["dt"]
        reward = -(_wrap(th) ** 2 + 0.1 * thdot ** 2 + 0.001 * u ** 2)
        thdot = thdot + (3 * GRAVITY / (2 * l) * np.sin(th) + 3.0 / (m * l ** 2) * u) * dt
        thdot = np.clip(thdot, -MAX_SPEED, MAX_SPEED)
        th = th + thdot * dt
        return np.stack([th, thdot], axis=1), reward
    x, v = state[:, 0], state[:, 1]
    m, dt, wall = p["mass"], p["dt"], p["wall"]
    reward = -(x ** 2 + 0.01 * a ** 2)
    v = v + a / m * dt
    x = x + v * dt
    hit = np.abs(x) > wall
    x = np.clip(x, -wall, wall)
    v = np.where(hit, 0.0, v)
    return np.stack([x, v], axis=1), reward


# ---------------------------------------------------------------------------
# single-instance interface


@dataclass(frozen=True)
class EnvState:
    family: str
    values: tuple[float, float]
    t: int = 0

    @property
    def observation(self) -> np.ndarray:
        return _observe(self.family, np.array([self.values]))[0]


def reset(cfg: EnvConfig, seed) -> EnvState:
    s = _initial([cfg], [seed])[0]
    return EnvState(cfg.family, (float(s[0]), float(s[1])), 0)


def step(state: EnvState, action, cfg: EnvConfig) -> tuple[EnvState, float, bool]:
    act = np.asarray(action, dtype=np.float64).reshape(1, ACTION_DIM)
    nxt, reward = _advance(cfg.family, np.array([state.values]), act, _params([cfg]))
    t = state.t + 1
    return EnvState(cfg.family, (float(nxt[0, 0]), float(nxt[0, 1])), t), float(reward[0]), \
        t >= cfg.rollout_length


def pendulum_energy(state: EnvState, cfg: EnvConfig) -> float:
    """Mechanical energy of the uniform rod, zero at the horizontal."""
    th, thdot = state.values
    m, l = cfg.mass, cfg.length
    return m * l ** 2 * thdot ** 2 / 6.0 + m * GRAVITY * l / 2.0 * math.cos(th)


def normalized_return(episode_return: float, cfg: EnvConfig) -> float:
    span = cfg.max_return - cfg.min_return
    return float(min(1.0, max(0.0, (episode_return - cfg.min_return) / span)))


# ---------------------------------------------------------------------------
# batched rollouts


def episode_seed(seed: int, episode: int) -> list[int]:
    """Episode ``n`` of evaluation seed ``seed``; identical across configs."""
    return [int(seed), int(episode)]


def rollout_returns(policy: Callable[[np.ndarray], np.ndarray], cfgs: Sequence[EnvConfig],
                    episodes: int, seed: int) -> np.ndarray:
    """Undiscounted returns, shape [len(cfgs), episodes].

    ``policy`` maps an observation batch to an action batch. Configs must share a
    family; every config sees the same initial states.
    """
    if not cfgs:
        return np.zeros((0, episodes))
    family = cfgs[0].family
    if any(c.family != family for c in cfgs):
        raise ConfigError("batched rollouts need a single environment family", "family")
    flat = [c for c in cfgs for _ in range(episodes)]
    seeds = [episode_seed(seed, e) for _ in cfgs for e in range(episodes)]
    state = _initial(flat, seeds)
    p = _params(flat)
    horizon = np.array([c.rollout_length for c in flat])
    total = np.zeros(len(flat))
    for t in range(int(horizon.max())):
        action = np.asarray(policy(_observe(family, state)), dtype=np.float64)
        state, reward = _advance(family, state, action.reshape(len(flat), ACTION_DIM), p)
        total += np.where(t < horizon, reward, 0.0)
    return total.reshape(len(cfgs), episodes)


# ---------------------------------------------------------------------------
# environment sets


@dataclass(frozen=True)
class EnvSet:
    train: EnvConfig
    axes: Mapping[str, tuple[EnvConfig, ...]] = field(default_factory=dict)

    def __post_init__(self):
        for name, configs in self.axes.items():
            if self.train not in configs:
                raise ConfigError(f"sweep axis {name!r} does not contain the training config",
                                  f"sweep.{name}")

    @property
    def family(self) -> str:
        return self.train.family

    def all_configs(self) -> list[EnvConfig]:
        if not self.axes:
            return [self.train]
        return [c for configs in self.axes.values() for c in configs]

    def with_train(self, **changes) -> "EnvSet":
        """Same sweep values, with a modified base config."""
        base = replace(self.train, **changes)
        axes = {name: tuple(replace(c, **changes, **{name: getattr(c, name)}) for c in cfgs)
                for name, cfgs in self.axes.items()}
        return EnvSet(base, axes)


SWEEPABLE = ("mass", "length")


def build_env_set(family: str | EnvConfig, sweep_spec: Mapping[str, Sequence[float]] | None = None,
                  **overrides) -> EnvSet:
    """One config per (parameter, value), varying one parameter at a time."""
    if isinstance(family, EnvConfig):
        base = replace(family, **overrides)
    elif family == "pendulum":
        base = pendulum_config(**overrides)
    elif family == "pointmass":
        base = pointmass_config(**overrides)
    else:
        raise ConfigError(f"unknown environment family {family!r}", "family")
    axes = {}
    for name, values in (sweep_spec or {}).items():
        if name not in SWEEPABLE:
            raise ConfigError(f"cannot sweep parameter {name!r}", f"sweep.{name}")
        default = getattr(base, name)
        values = [float(v) for v in values]
        if not any(math.isclose(v, default) for v in values):
            raise ConfigError(f"sweep for {name!r} lacks the default value {default}",
                              f"sweep.{name}")
        axes[name] = tuple(base if math.isclose(v, default) else replace(base, **{name: v})
                           for v in values)
    return EnvSet(base, axes)
