"""Brute-force reference implementations for non-dominated sorting and selection."""

from __future__ import annotations

import math


def brute_dominates(a, b) -> bool:
    ge = all(x >= y for x, y in zip(a, b))
    gt = any(x > y for x, y in zip(a, b))
    return ge and gt


def brute_fronts(pop) -> list[list[int]]:
    """Peel off the non-dominated set repeatedly, checking every pair each round."""
    remaining = list(range(len(pop)))
    fronts = []
    while remaining:
        front = [i for i in remaining
                 if not any(brute_dominates(pop[j], pop[i]) for j in remaining if j != i)]
        fronts.append(sorted(front))
        remaining = [i for i in remaining if i not in front]
    return fronts


def brute_crowding(front) -> list[float]:
    n = len(front)
    out = [0.0] * n
    for m in range(len(front[0]) if n else 0):
        values = [p[m] for p in front]
        lo, hi = min(values), max(values)
        ranked = sorted(range(n), key=lambda i: (values[i], i))
        for pos, i in enumerate(ranked):
            if pos in (0, n - 1):
                out[i] = math.inf
            elif hi > lo and out[i] != math.inf:
                out[i] += (values[ranked[pos + 1]] - values[ranked[pos - 1]]) / (hi - lo)
    return out


def brute_select(pop, capacity: int) -> list[int]:
    chosen: list[int] = []
    for front in brute_fronts(pop):
        room = capacity - len(chosen)
        if room <= 0:
            break
        if len(front) <= room:
            chosen += front
            continue
        dist = brute_crowding([pop[i] for i in front])
        order = sorted(range(len(front)), key=lambda r: (-dist[r], r))
        chosen += [front[r] for r in order[:room]]
    return sorted(chosen)
