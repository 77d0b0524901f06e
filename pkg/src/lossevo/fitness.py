"""Raw per-seed scores and stability-adjusted fitness tuples."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .envs import EnvSet, normalized_return
from .trainer import evaluate_policy_many


@dataclass(frozen=True)
class FitnessConfig:
    kappa: float = 1.0
    num_seeds: int = 2
    eval_episodes: int = 20

    def __post_init__(self):
        if self.kappa < 0:
            raise ValueError("kappa must be nonnegative")
        if self.num_seeds < 1 or self.eval_episodes < 1:
            raise ValueError("num_seeds and eval_episodes must be positive")


@dataclass(frozen=True)
class SeedScores:
    """Per-seed raw scores; a failed seed carries zeros for every objective."""

    seeds: tuple[int, ...]
    perf: tuple[float, ...]
    gen: tuple[float, ...]
    failed: tuple[bool, ...]

    def __post_init__(self):
        n = len(self.seeds)
        if not len(self.perf) == len(self.gen) == len(self.failed) == n:
            raise ValueError("seed score vectors differ in length")
        for i, bad in enumerate(self.failed):
            if bad and (self.perf[i] != 0.0 or self.gen[i] != 0.0):
                raise ValueError("failed seeds must score 0")

    @classmethod
    def build(cls, results: Sequence[tuple[int, float | None, float | None]]) -> "SeedScores":
        """From (seed, perf, gen) rows, where None marks a failed seed."""
        seeds, perf, gen, failed = [], [], [], []
        for seed, p, g in results:
            bad = p is None or g is None
            seeds.append(int(seed))
            perf.append(0.0 if bad else float(p))
            gen.append(0.0 if bad else float(g))
            failed.append(bad)
        return cls(tuple(seeds), tuple(perf), tuple(gen), tuple(failed))

    def to_dict(self) -> dict:
        return {"seeds": list(self.seeds), "perf": list(self.perf), "gen": list(self.gen),
                "failed": list(self.failed)}

    @classmethod
    def from_dict(cls, d: dict) -> "SeedScores":
        return cls(tuple(d["seeds"]), tuple(d["perf"]), tuple(d["gen"]), tuple(d["failed"]))


def raw_performance(policy, env_set: EnvSet, eval_episodes: int, seed: int) -> float:
    """Mean normalized return on the training configuration."""
    returns = evaluate_policy_many(policy, [env_set.train], eval_episodes, seed)[0]
    return float(np.mean([normalized_return(r, env_set.train) for r in returns]))


def _normalized(returns: np.ndarray, cfgs) -> np.ndarray:
    return np.array([[normalized_return(r, c) for r in row] for row, c in zip(returns, cfgs)])


def raw_generalizability(policy, env_set: EnvSet, eval_episodes: int, seed: int) -> float:
    """Zero-shot score: the mean over axes of each axis's mean normalized return."""
    cfgs = env_set.all_configs()
    scores = _normalized(evaluate_policy_many(policy, cfgs, eval_episodes, seed), cfgs)
    if not env_set.axes:
        return float(scores.mean())
    axis_means, start = [], 0
    for configs in env_set.axes.values():
        axis_means.append(scores[start:start + len(configs)].mean())
        start += len(configs)
    return float(np.mean(axis_means))


def raw_scores(policy, env_set: EnvSet, eval_episodes: int, seed: int) -> tuple[float, float]:
    """(performance, generalizability) with a single batched rollout."""
    cfgs = [env_set.train, *env_set.all_configs()]
    scores = _normalized(evaluate_policy_many(policy, cfgs, eval_episodes, seed), cfgs)
    perf = float(scores[0].mean())
    sweep = scores[1:]
    if not env_set.axes:
        return perf, float(sweep.mean())
    axis_means, start = [], 0
    for configs in env_set.axes.values():
        axis_means.append(sweep[start:start + len(configs)].mean())
        start += len(configs)
    return perf, float(np.mean(axis_means))


def stability_adjust(scores: Sequence[float], kappa: float) -> float:
    """Mean minus ``kappa`` times the population standard deviation."""
    if len(scores) == 0:
        raise ValueError("need at least one score")
    x = np.asarray(scores, dtype=np.float64)
    return float(x.mean() - kappa * x.std())


def fitness_tuple(seed_scores: SeedScores, cfg: FitnessConfig) -> tuple[float, float]:
    return tuple(min(1.0, max(0.0, stability_adjust(v, cfg.kappa)))
                 for v in (seed_scores.perf, seed_scores.gen))


def instability_ratio(scores: Sequence[float], reference: Sequence[float]) -> float:
    """σ of ``scores`` relative to σ of ``reference``."""
    ref = float(np.std(reference))
    return float(np.std(scores)) / ref if ref > 0 else float("nan")
