"""Shared builders for tests: random valid graphs, batches and networks."""

from __future__ import annotations

import numpy as np

from lossevo.graph import LossGraph, renumber
from lossevo.interpreter import TransitionBatch
from lossevo.mutation import MutationConfig, mutate_with_info, pad_to_max
from lossevo.presets import preset_graphs, warm_start_sac
from lossevo.trainer import TrainerConfig, init_networks

PRESETS = preset_graphs()


def random_valid_graph(seed: int, max_steps: int = 6) -> LossGraph:
    """A warm start or preset pushed through a few valid mutations."""
    rng = np.random.default_rng([seed, 17])
    names = sorted(PRESETS)
    graph = PRESETS[names[rng.integers(len(names))]]
    cfg = MutationConfig()
    for _ in range(int(rng.integers(max_steps + 1))):
        child, info = mutate_with_info(graph, cfg, rng)
        if info.valid:
            graph = child
    return graph


def permuted(graph: LossGraph, rng: np.random.Generator) -> LossGraph:
    ids = [n.id for n in graph.nodes]
    shuffled = rng.permutation(len(ids)) + 100
    return renumber(graph, {i: int(j) for i, j in zip(ids, shuffled)})


def padded(graph: LossGraph, rng: np.random.Generator, extra: int) -> LossGraph:
    target = len(graph) + extra
    return pad_to_max(graph.replace_nodes(graph.nodes, max_nodes=max(target, graph.max_nodes)),
                      target, rng)


def random_batch(rng: np.random.Generator, batch: int = 16, dims=(3, 1),
                 discount: float = 0.99) -> TransitionBatch:
    s, a = dims
    return TransitionBatch(rng.normal(size=(batch, s)), rng.uniform(-1, 1, (batch, a)),
                           rng.normal(size=batch), rng.normal(size=(batch, s)), discount)


def random_nets(rng: np.random.Generator, dims=(3, 1), widths=(8, 8)):
    cfg = TrainerConfig(widths=widths, policy_final_scale=1.0)
    nets = init_networks(*dims, cfg, rng)
    # decorrelate targets from online critics so role bugs show up
    t1 = nets.target1.with_arrays([a + 0.1 * rng.normal(size=a.shape) for a in nets.target1.arrays()])
    t2 = nets.target2.with_arrays([a + 0.1 * rng.normal(size=a.shape) for a in nets.target2.arrays()])
    return type(nets)(nets.policy, nets.critic1, nets.critic2, t1, t2)


def tiny_run_dict(out, **changes) -> dict:
    """A run small enough for unit tests: short pendulum episodes, no hurdle."""
    d = {
        "population_size": 3, "generations": 1, "output_dir": str(out),
        "seeds": {"train": [0], "valid": [100], "test": [200]},
        "fitness": {"eval_episodes": 2},
        "trainer": {"episodes": 2, "min_samples": 32, "widths": [8, 8]},
        "env": {"family": "pendulum", "params": {"rollout_length": 30},
                "sweep": {"mass": [0.5, 1.0], "length": [1.0, 2.0]}},
        "hurdle": {"enabled": False},
    }
    d.update(changes)
    return d


__all__ = ["tiny_run_dict", "PRESETS", "random_valid_graph", "permuted", "padded", "random_batch", "random_nets",
           "warm_start_sac"]
