"""Non-dominated sorting, crowding distance and NSGA-II selection."""

from __future__ import annotations

import math
from dataclasses import dataclass
from operator import attrgetter
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError
from .mutation import MutationConfig, MutationInfo, mutate_with_info

Fitness = Sequence[float]


def dominates(a: Fitness, b: Fitness) -> bool:
    if len(a) != len(b):
        raise ContractError("fitness tuples of different arity")
    return all(x >= y for x, y in zip(a, b)) and any(x > y for x, y in zip(a, b))


def non_dominated_sort(pop: Sequence[Fitness]) -> list[list[int]]:
    """Fronts as lists of indices into ``pop`` (ascending), best front first."""
    n = len(pop)
    dominated_by = [[] for _ in range(n)]
    counts = [0] * n
    for i in range(n):
        for j in range(i + 1, n):
            if dominates(pop[i], pop[j]):
                dominated_by[i].append(j)
                counts[j] += 1
            elif dominates(pop[j], pop[i]):
                dominated_by[j].append(i)
                counts[i] += 1
    fronts = []
    current = [i for i in range(n) if counts[i] == 0]
    while current:
        fronts.append(current)
        nxt = []
        for i in current:
            for j in dominated_by[i]:
                counts[j] -= 1
                if counts[j] == 0:
                    nxt.append(j)
        current = sorted(nxt)
    return fronts


def crowding_distance(front: Sequence[Fitness]) -> list[float]:
    n = len(front)
    if n == 0:
        return []
    dist = [0.0] * n
    for m in range(len(front[0])):
        order = sorted(range(n), key=lambda i: front[i][m])
        lo, hi = front[order[0]][m], front[order[-1]][m]
        dist[order[0]] = dist[order[-1]] = math.inf
        if hi == lo:
            continue
        for r in range(1, n - 1):
            i = order[r]
            if dist[i] != math.inf:
                dist[i] += (front[order[r + 1]][m] - front[order[r - 1]][m]) / (hi - lo)
    return dist


@dataclass(frozen=True)
class RankedPopulation:
    fronts: list[list[int]]
    rank: list[int]
    crowding: list[float]

    @classmethod
    def of(cls, pop: Sequence[Fitness]) -> "RankedPopulation":
        fronts = non_dominated_sort(pop)
        rank = [0] * len(pop)
        crowding = [0.0] * len(pop)
        for f, members in enumerate(fronts):
            for i, d in zip(members, crowding_distance([pop[i] for i in members])):
                rank[i] = f
                crowding[i] = d
        return cls(fronts, rank, crowding)

    @classmethod
    def uniform(cls, size: int) -> "RankedPopulation":
        """A single front with equal crowding, used before any fitness exists."""
        return cls([list(range(size))], [0] * size, [1.0] * size)


def select_indices(pop: Sequence[Fitness], capacity: int) -> list[int]:
    if capacity > len(pop) or capacity < 0:
        raise ContractError(f"capacity {capacity} outside [0, {len(pop)}]")
    chosen: list[int] = []
    for front in non_dominated_sort(pop):
        room = capacity - len(chosen)
        if room <= 0:
            break
        if len(front) <= room:
            chosen.extend(front)
            continue
        dist = crowding_distance([pop[i] for i in front])
        ranked = sorted(range(len(front)), key=lambda r: (-dist[r], r))
        chosen.extend(front[r] for r in ranked[:room])
    return sorted(chosen)


def rank_and_select(pop: Sequence, capacity: int,
                    key: Callable = attrgetter("fitness")) -> list:
    """Keep ``capacity`` members by front, then crowding; original order is preserved."""
    return [pop[i] for i in select_indices([tuple(key(p)) for p in pop], capacity)]


def tournament(ranked: RankedPopulation, rng: np.random.Generator) -> int:
    n = len(ranked.rank)
    if n == 1:
        return 0
    a, b = (int(x) for x in rng.choice(n, size=2, replace=False))
    if ranked.rank[a] != ranked.rank[b]:
        return a if ranked.rank[a] < ranked.rank[b] else b
    if ranked.crowding[a] != ranked.crowding[b]:
        return a if ranked.crowding[a] > ranked.crowding[b] else b
    return a if rng.random() < 0.5 else b


def offspring_with_info(parents: Sequence, count: int, cfg: MutationConfig,
                        rng: np.random.Generator, key: Callable | None = attrgetter("fitness"),
                        graph: Callable = attrgetter("graph")) -> list[tuple]:
    """``count`` children as (graph, parent index, MutationInfo) triples.

    With ``key=None`` the parents are treated as one front of equal crowding.
    """
    if not parents:
        raise ContractError("offspring needs at least one parent")
    if key is None:
        ranked = RankedPopulation.uniform(len(parents))
    else:
        ranked = RankedPopulation.of([tuple(key(p)) for p in parents])
    out: list[tuple] = []
    for _ in range(count):
        i = tournament(ranked, rng)
        child, info = mutate_with_info(graph(parents[i]), cfg, rng)
        out.append((child, i, info))
    return out


def offspring(parents: Sequence, count: int, cfg: MutationConfig, rng: np.random.Generator,
              key: Callable | None = attrgetter("fitness"),
              graph: Callable = attrgetter("graph")) -> list:
    return [c for c, _, _ in offspring_with_info(parents, count, cfg, rng, key, graph)]


def mutually_non_dominated(pop: Sequence[Fitness]) -> bool:
    return not any(dominates(a, b) for a in pop for b in pop)


__all__ = ["dominates", "non_dominated_sort", "crowding_distance", "RankedPopulation",
           "rank_and_select", "select_indices", "tournament", "offspring",
           "offspring_with_info", "mutually_non_dominated", "MutationInfo"]
