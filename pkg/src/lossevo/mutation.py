"""Node-replacement and edge-rewiring mutations, plus warm-start padding."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .graph import (INPUT_KINDS, OPERATION_KINDS, OUTPUT_KINDS, SIGNATURES, LossGraph, Node,
                    NodeKind as K, output_category, topological_order, validate)
from .tensor import MUL_CONSTANTS

DEFAULT_COUNT_DISTRIBUTION = {1: 0.5, 2: 0.25, 4: 0.125, 8: 0.0625, 16: 0.0625}


@dataclass(frozen=True)
class MutationConfig:
    p_node_mutation: float = 0.5
    count_distribution: dict = field(default_factory=lambda: dict(DEFAULT_COUNT_DISTRIBUTION))
    max_attempts: int = 20
    env_dims: tuple[int, int] = (3, 1)
    batch: int = 16

    def __post_init__(self):
        if not 0.0 <= self.p_node_mutation <= 1.0:
            raise ValueError("p_node_mutation must lie in [0, 1]")
        probs = np.array(list(self.count_distribution.values()), dtype=float)
        if (probs < 0).any() or abs(probs.sum() - 1.0) > 1e-9:
            raise ValueError("node-count probabilities must be nonnegative and sum to 1")
        if any(int(k) < 1 for k in self.count_distribution):
            raise ValueError("node counts must be positive")
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be positive")


@dataclass(frozen=True)
class MutationInfo:
    kind: str  # "node" or "edge"
    count: int  # drawn node count (1 for edge mutations)
    valid: bool
    attempts: int


def _random_op(rng: np.random.Generator, exclude=None) -> tuple[K, float | None]:
    choices = [k for k in OPERATION_KINDS if k != exclude]
    kind = choices[rng.integers(len(choices))]
    const = float(MUL_CONSTANTS[rng.integers(len(MUL_CONSTANTS))]) if kind == K.MulConst else None
    return kind, const


def _pick_inputs(kind: K, producers: list[Node], rng: np.random.Generator) -> tuple[int, ...] | None:
    chosen = []
    for cat in SIGNATURES[kind]:
        pool = [n.id for n in producers if output_category(n.kind) == cat]
        if not pool:
            return None
        chosen.append(pool[rng.integers(len(pool))])
    return tuple(chosen)


def _node_mutation(parent: LossGraph, order: list[int], k: int, rng) -> LossGraph | None:
    nodes = parent.node_map()
    ops = [i for i in order if nodes[i].kind not in INPUT_KINDS and nodes[i].kind not in OUTPUT_KINDS]
    if not ops:
        return None
    targets = set(rng.choice(ops, size=min(k, len(ops)), replace=False).tolist())
    position = {i: p for p, i in enumerate(order)}
    new = dict(nodes)
    for i in sorted(targets, key=position.get):
        kind, const = _random_op(rng, exclude=nodes[i].kind)
        earlier = [nodes[j] for j in order[:position[i]]]
        inputs = _pick_inputs(kind, earlier, rng)
        if inputs is None:
            return None
        new[i] = Node(i, kind, inputs, const)
    return parent.replace_nodes(new.values(), metadata={})


def _edge_mutation(parent: LossGraph, order: list[int], rng) -> LossGraph | None:
    nodes = parent.node_map()
    ports = [(i, p) for i in order if nodes[i].kind not in INPUT_KINDS
             for p in range(len(nodes[i].inputs))]
    if not ports:
        return None
    i, p = ports[rng.integers(len(ports))]
    node = nodes[i]
    position = order.index(i)
    cat = SIGNATURES[node.kind][p]
    pool = [j for j in order[:position]
            if output_category(nodes[j].kind) == cat and j != node.inputs[p]]
    if not pool:
        return None
    inputs = list(node.inputs)
    inputs[p] = pool[rng.integers(len(pool))]
    new = dict(nodes)
    new[i] = Node(i, node.kind, tuple(inputs), node.const)
    return parent.replace_nodes(new.values(), metadata={})


def mutate_with_info(parent: LossGraph, cfg: MutationConfig,
                     rng: np.random.Generator) -> tuple[LossGraph, MutationInfo]:
    """Mutate ``parent``; the mutation type and node count are drawn once per call."""
    order = topological_order(parent)
    node_mut = bool(rng.random() < cfg.p_node_mutation)
    counts = list(cfg.count_distribution)
    probs = np.array([cfg.count_distribution[c] for c in counts], dtype=float)
    k = int(counts[rng.choice(len(counts), p=probs / probs.sum())]) if node_mut else 1
    candidate = parent
    for attempt in range(1, cfg.max_attempts + 1):
        child = _node_mutation(parent, order, k, rng) if node_mut else _edge_mutation(parent, order, rng)
        if child is None:
            continue
        candidate = child
        if validate(child, cfg.env_dims, cfg.batch).valid:
            return child, MutationInfo("node" if node_mut else "edge", k, True, attempt)
    return candidate, MutationInfo("node" if node_mut else "edge", k, False, cfg.max_attempts)


def mutate(parent: LossGraph, cfg: MutationConfig, rng: np.random.Generator) -> LossGraph:
    return mutate_with_info(parent, cfg, rng)[0]


def pad_to_max(graph: LossGraph, max_nodes: int, rng: np.random.Generator) -> LossGraph:
    """Append unreachable random operation nodes until the graph has ``max_nodes`` nodes."""
    if len(graph) > max_nodes:
        raise ValueError(f"graph has {len(graph)} nodes, more than {max_nodes}")
    nodes = list(graph.nodes)
    producers = [n for n in nodes if n.kind not in OUTPUT_KINDS]
    next_id = max(n.id for n in nodes) + 1
    while len(nodes) < max_nodes:
        kind, const = _random_op(rng)
        inputs = _pick_inputs(kind, producers, rng)
        if inputs is None:
            continue
        node = Node(next_id, kind, inputs, const)
        nodes.append(node)
        producers.append(node)
        next_id += 1
    return LossGraph(tuple(nodes), max_nodes, graph.metadata)
