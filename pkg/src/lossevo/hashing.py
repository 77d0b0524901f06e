"""Functional hashing: graphs are identified by their gradients on a fixed probe.

Two graphs whose losses have the same gradients on the synthetic probe batch
and networks share a digest and therefore a cache entry, no matter how their
nodes are numbered or how much dead code they carry.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import GraphCycleError, LossEvoError
from .graph import LossGraph, OUTPUT_KINDS, prune_dead_nodes, serialize, structural_keys, validate
from .interpreter import GraphLoss, NetworkBindings, TransitionBatch
from .nn import GaussianTanhPolicy, MlpParams

PROBE_SEED = 7_331
PROBE_NOISE_SEED = 1
PROBE_BATCH = 16
PROBE_DIMS = (3, 1)
PROBE_WIDTHS = (16, 16)
PROBE_DISCOUNT = 0.99
QUANTUM = 1e-6


@dataclass(frozen=True)
class HashDigest:
    hexdigest: str
    quantum: float = QUANTUM
    functional: bool = True

    def __str__(self) -> str:
        return self.hexdigest

    @property
    def short(self) -> str:
        return self.hexdigest[:12]


@lru_cache(maxsize=1)
def probe() -> tuple[TransitionBatch, NetworkBindings]:
    """The synthetic batch and networks every graph is hashed against."""
    rng = np.random.default_rng(PROBE_SEED)
    s, a = PROBE_DIMS
    b = PROBE_BATCH
    batch = TransitionBatch(
        states=rng.standard_normal((b, s)),
        actions=rng.standard_normal((b, a)),
        rewards=rng.standard_normal(b),
        next_states=rng.standard_normal((b, s)),
        discount=PROBE_DISCOUNT,
    )
    policy = GaussianTanhPolicy.init(s, a, PROBE_WIDTHS, rng)
    critics = [MlpParams.init([s + a, *PROBE_WIDTHS, 1], rng) for _ in range(4)]
    return batch, NetworkBindings(policy, *critics)


def gradient_signature(graph: LossGraph) -> np.ndarray | None:
    """Quantized probe gradients (policy, critic 1, critic 2), or None if not computable."""
    batch, nets = probe()
    try:
        loss = GraphLoss(graph, PROBE_DIMS, PROBE_BATCH)
        grads = loss.gradients(batch, nets, PROBE_NOISE_SEED)
    except (LossEvoError, ValueError, FloatingPointError):
        return None
    q = np.rint(grads.flat() / QUANTUM)
    if not np.isfinite(q).all() or np.abs(q).max(initial=0) >= 2**62:
        return None
    return q.astype(np.int64)


def _structural_digest(graph: LossGraph) -> str:
    h = hashlib.sha256(b"structural|")
    try:
        pruned = prune_dead_nodes(graph)
        keys = structural_keys(pruned)
        for kind in OUTPUT_KINDS:
            outs = sorted(keys[n.id] for n in pruned.nodes if n.kind == kind)
            h.update(f"{kind.value}:{','.join(outs)}|".encode())
    except (GraphCycleError, LossEvoError, KeyError, ValueError):
        h.update(serialize(graph).encode())
    return h.hexdigest()


def digest_signature(signature: np.ndarray) -> str:
    h = hashlib.sha256(b"gradient|")
    h.update(signature.astype("<i8").tobytes())
    return h.hexdigest()


def functional_hash_with_signature(graph: LossGraph) -> tuple[HashDigest, np.ndarray | None]:
    sig = None
    if validate(graph, PROBE_DIMS, PROBE_BATCH).valid:
        sig = gradient_signature(graph)
    if sig is None:
        return HashDigest(_structural_digest(graph), functional=False), None
    return HashDigest(digest_signature(sig)), sig


def functional_hash(graph: LossGraph) -> HashDigest:
    return functional_hash_with_signature(graph)[0]
