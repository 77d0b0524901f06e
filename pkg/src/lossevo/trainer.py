"""Off-policy actor-critic training driven by an arbitrary loss graph."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .envs import EnvConfig, normalized_return, reset, rollout_returns, step
from .errors import LossEvoError, NumericError
from .graph import LossGraph
from .interpreter import GraphLoss, LossGradients, NetworkBindings, TransitionBatch
from .nn import GaussianTanhPolicy, MlpParams, deterministic_action, sample_action


@dataclass(frozen=True)
class TrainerConfig:
    discount: float = 0.99
    batch_size: int = 32
    learning_rate: float = 2e-3
    tau: float = 0.005
    replay_capacity: int = 20_000
    min_samples: int = 500
    updates_per_step: int = 1
    reward_scale: float = 5.0
    episodes: int = 20
    widths: tuple[int, ...] = (32, 32)
    n_step: int = 1
    policy_final_scale: float = 0.01

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if not 0.0 < self.discount <= 1.0:
            raise ValueError("discount must lie in (0, 1]")
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError("tau must lie in [0, 1]")
        for name in ("batch_size", "replay_capacity", "min_samples", "updates_per_step",
                     "episodes"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.n_step != 1:
            raise ValueError("only one-step transitions are supported")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")

    @classmethod
    def full_scale(cls, **kw) -> "TrainerConfig":
        """Full-size hyperparameters (256-wide networks, 1M replay)."""
        base = dict(batch_size=64, learning_rate=3e-4, replay_capacity=1_000_000,
                    min_samples=10_000, widths=(256, 256))
        base.update(kw)
        return cls(**base)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["widths"] = list(self.widths)
        return d


class ReplayBuffer:
    """FIFO ring buffer of (s, a, scaled r, s', done)."""

    def __init__(self, capacity: int, state_dim: int, action_dim: int):
        self.capacity = capacity
        self.states = np.zeros((capacity, state_dim))
        self.actions = np.zeros((capacity, action_dim))
        self.rewards = np.zeros(capacity)
        self.next_states = np.zeros((capacity, state_dim))
        self.dones = np.zeros(capacity, dtype=bool)
        self.size = 0
        self._next = 0

    def __len__(self) -> int:
        return self.size

    def add(self, s, a, r, s2, done) -> None:
        i = self._next
        self.states[i], self.actions[i], self.rewards[i] = s, a, r
        self.next_states[i], self.dones[i] = s2, done
        self._next = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def oldest_index(self) -> int:
        return self._next if self.size == self.capacity else 0

    def sample(self, batch_size: int, rng: np.random.Generator, discount: float) -> TransitionBatch:
        idx = rng.integers(self.size, size=batch_size)
        return TransitionBatch(self.states[idx], self.actions[idx], self.rewards[idx],
                               self.next_states[idx], discount)


class LossFunction(Protocol):
    def gradients(self, batch: TransitionBatch, nets: NetworkBindings,
                  noise_seed: int) -> LossGradients: ...


@dataclass(frozen=True)
class EpisodeDiagnostics:
    episode: int
    episode_return: float
    entropy: float
    actor_grad_norm: float | None
    updates: int


@dataclass
class TrainedPolicy:
    policy: GaussianTanhPolicy
    diagnostics: list[EpisodeDiagnostics]
    nets: NetworkBindings
    updates: int

    def mean_actor_grad_norm(self) -> float:
        total = sum(d.actor_grad_norm * d.updates for d in self.diagnostics if d.updates)
        count = sum(d.updates for d in self.diagnostics)
        return total / count if count else 0.0


@dataclass(frozen=True)
class TrainFailure:
    reason: str
    episode: int
    updates: int
    diagnostics: list = field(default_factory=list)

    def __bool__(self) -> bool:
        return False


def init_networks(state_dim: int, action_dim: int, cfg: TrainerConfig,
                  rng: np.random.Generator) -> NetworkBindings:
    policy = GaussianTanhPolicy.init(state_dim, action_dim, cfg.widths, rng,
                                     final_scale=cfg.policy_final_scale)
    sizes = [state_dim + action_dim, *cfg.widths, 1]
    c1 = MlpParams.init(sizes, rng)
    c2 = MlpParams.init(sizes, rng)
    return NetworkBindings(policy, c1, c2, c1.detached(), c2.detached())


def sgd_step(nets: NetworkBindings, grads: LossGradients, lr: float, tau: float) -> NetworkBindings:
    """Plain gradient descent on policy and critics, then soft target updates."""
    policy = nets.policy.with_arrays(
        [p - lr * g for p, g in zip(nets.policy.trunk.arrays(), grads.policy)])
    c1 = nets.critic1.with_arrays([p - lr * g for p, g in zip(nets.critic1.arrays(), grads.critic1)])
    c2 = nets.critic2.with_arrays([p - lr * g for p, g in zip(nets.critic2.arrays(), grads.critic2)])
    t1 = nets.target1.with_arrays(
        [t + tau * (c - t) for t, c in zip(nets.target1.arrays(), c1.arrays())])
    t2 = nets.target2.with_arrays(
        [t + tau * (c - t) for t, c in zip(nets.target2.arrays(), c2.arrays())])
    return NetworkBindings(policy, c1, c2, t1, t2)


def _finite(nets: NetworkBindings) -> bool:
    arrays = [*nets.policy.trunk.arrays(), *nets.critic1.arrays(), *nets.critic2.arrays(),
              *nets.target1.arrays(), *nets.target2.arrays()]
    return all(np.isfinite(a).all() for a in arrays)


def _streams(seed: int) -> dict[str, np.random.Generator]:
    names = ("init", "explore", "replay", "noise", "reset")
    children = np.random.SeedSequence([int(seed), 0x7EA1]).spawn(len(names))
    return {n: np.random.default_rng(c) for n, c in zip(names, children)}


def train(graph: LossGraph | None, cfg: TrainerConfig, env: EnvConfig, seed: int,
          loss: LossFunction | None = None, log_path: str | Path | None = None,
          trajectory: list | None = None) -> TrainedPolicy | TrainFailure:
    """Train networks on ``env`` with the losses defined by ``graph`` (or ``loss``).

    Returns a ``TrainFailure`` value instead of raising when a loss, gradient or
    parameter becomes non-finite. If ``trajectory`` is given, the parameter
    vector after each update is appended to it.
    """
    state_dim, action_dim = env.dims
    if loss is None:
        loss = GraphLoss(graph, env.dims, cfg.batch_size)
    rng = _streams(seed)
    nets = init_networks(state_dim, action_dim, cfg, rng["init"])
    buffer = ReplayBuffer(min(cfg.replay_capacity, cfg.episodes * env.rollout_length),
                          state_dim, action_dim)
    diagnostics: list[EpisodeDiagnostics] = []
    updates = 0
    log = open(log_path, "a") if log_path else None
    try:
        for episode in range(cfg.episodes):
            state = reset(env, [int(seed), 0x5EED, episode])
            obs = state.observation
            ep_return, logps, norms, done = 0.0, [], [], False
            while not done:
                noise = rng["explore"].standard_normal((1, action_dim))
                action, logp = sample_action(nets.policy, obs[None, :], noise)
                state, reward, done = step(state, action[0], env)
                nxt = state.observation
                buffer.add(obs, action[0], cfg.reward_scale * reward, nxt, done)
                ep_return += reward
                logps.append(logp[0])
                obs = nxt
                if len(buffer) < max(cfg.min_samples, cfg.batch_size):
                    continue
                for _ in range(cfg.updates_per_step):
                    batch = buffer.sample(cfg.batch_size, rng["replay"], cfg.discount)
                    noise_seed = int(rng["noise"].integers(2 ** 62))
                    try:
                        grads = loss.gradients(batch, nets, noise_seed)
                    except (NumericError, FloatingPointError) as exc:
                        return TrainFailure(f"non-finite loss: {exc}", episode, updates, diagnostics)
                    with np.errstate(all="ignore"):
                        nets = sgd_step(nets, grads, cfg.learning_rate, cfg.tau)
                    if not _finite(nets):
                        return TrainFailure("non-finite parameters", episode, updates, diagnostics)
                    updates += 1
                    norms.append(float(np.sqrt(sum((g ** 2).sum() for g in grads.policy))))
                    if trajectory is not None:
                        trajectory.append(flat_parameters(nets))
            diag = EpisodeDiagnostics(episode, float(ep_return), float(-np.mean(logps)),
                                      float(np.mean(norms)) if norms else None, len(norms))
            diagnostics.append(diag)
            if log:
                log.write(json.dumps(asdict(diag)) + "\n")
    except LossEvoError as exc:
        return TrainFailure(str(exc), len(diagnostics), updates, diagnostics)
    finally:
        if log:
            log.close()
    return TrainedPolicy(nets.policy, diagnostics, nets, updates)


def flat_parameters(nets: NetworkBindings) -> np.ndarray:
    arrays = [*nets.policy.trunk.arrays(), *nets.critic1.arrays(), *nets.critic2.arrays(),
              *nets.target1.arrays(), *nets.target2.arrays()]
    return np.concatenate([a.ravel() for a in arrays])


def _policy_of(policy) -> GaussianTanhPolicy:
    return policy.policy if isinstance(policy, TrainedPolicy) else policy


def evaluate_policy_many(policy, cfgs: Sequence[EnvConfig], episodes: int,
                         seed: int) -> np.ndarray:
    """Deterministic-action returns, shape [len(cfgs), episodes]."""
    pol = _policy_of(policy)
    by_family: dict[str, list[int]] = {}
    for i, c in enumerate(cfgs):
        by_family.setdefault(c.family, []).append(i)
    out = np.zeros((len(cfgs), episodes))
    for idx in by_family.values():
        out[idx] = rollout_returns(lambda o: deterministic_action(pol, o),
                                   [cfgs[i] for i in idx], episodes, seed)
    return out


def evaluate_policy(policy, env: EnvConfig, episodes: int, seed: int) -> float:
    """Mean normalized return of deterministic ``tanh(mean)`` actions."""
    returns = evaluate_policy_many(policy, [env], episodes, seed)[0]
    return float(np.mean([normalized_return(r, env) for r in returns]))
