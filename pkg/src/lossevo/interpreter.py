"""Evaluate loss graphs on transition batches and differentiate them.

The critic-loss output is evaluated once per online critic. For critic 2 the
bindings of the two critics (and of the two target critics) are swapped, so a
graph written in terms of ``CriticNet1`` describes ``L_Q_i`` for either i.

Each ``DistSample`` node draws standard-normal noise from a stream keyed by
``noise_seed`` and the node's structural key. Consumers of one sample node
share the draw; renumbering nodes does not change it.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import tensor as T
from .errors import GraphValidationError, NumericError, ShapeError
from .graph import INPUT_KINDS, LossGraph, NodeKind as K, live_nodes, structural_keys, \
    topological_order, validate
from .nn import GaussianTanhPolicy, MlpParams, critic_value, policy_distribution
from .tensor import Tape, Tensor

_CRITIC_INPUTS = (K.CriticNet1, K.CriticNet2, K.TargetCriticNet1, K.TargetCriticNet2)


@dataclass(frozen=True)
class TransitionBatch:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    discount: float

    def __post_init__(self):
        for name in ("states", "actions", "rewards", "next_states"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        b = self.states.shape[0]
        if self.states.ndim != 2 or self.next_states.shape != self.states.shape:
            raise ShapeError("states and next_states must share a [batch, state_dim] shape")
        if self.actions.ndim != 2 or self.actions.shape[0] != b or self.rewards.shape != (b,):
            raise ShapeError("actions must be [batch, action_dim] and rewards [batch]")
        if not 0.0 < self.discount <= 1.0:
            raise ValueError(f"discount must lie in (0, 1], got {self.discount}")
        for name in ("states", "actions", "rewards", "next_states"):
            if not np.isfinite(getattr(self, name)).all():
                raise ValueError(f"non-finite values in {name}")

    @property
    def batch_size(self) -> int:
        return self.states.shape[0]

    @property
    def dims(self) -> tuple[int, int]:
        return self.states.shape[1], self.actions.shape[1]


@dataclass(frozen=True)
class NetworkBindings:
    policy: GaussianTanhPolicy
    critic1: MlpParams
    critic2: MlpParams
    target1: MlpParams
    target2: MlpParams

    def __post_init__(self):
        width = self.policy.state_dim + self.policy.action_dim
        for name in ("critic1", "critic2", "target1", "target2"):
            net = getattr(self, name)
            if net.in_dim != width or net.out_dim != 1:
                raise ShapeError(f"{name} must map {width} inputs to 1 output")


@dataclass(frozen=True)
class LossValues:
    policy_loss: float
    critic_losses: tuple[float, float]


@dataclass
class LossGradients:
    """Per-parameter gradients, ordered like ``MlpParams.tensors()``."""

    values: LossValues
    policy: list[np.ndarray]
    critic1: list[np.ndarray]
    critic2: list[np.ndarray]
    target1: list[np.ndarray]
    target2: list[np.ndarray]

    def flat(self) -> np.ndarray:
        parts = [g.ravel() for g in (*self.policy, *self.critic1, *self.critic2)]
        return np.concatenate(parts)


def sample_noise(noise_seed: int, key: str, shape) -> np.ndarray:
    """Standard-normal draws for the sample node with structural ``key``."""
    rng = np.random.default_rng([int(noise_seed), int(key[:16], 16), int(key[16:32], 16)])
    return rng.standard_normal(shape)


class GraphLoss:
    """A validated graph compiled for repeated evaluation at fixed dims."""

    def __init__(self, graph: LossGraph, env_dims: tuple[int, int], batch_size: int):
        report = validate(graph, env_dims, batch_size)
        if not report.valid:
            raise GraphValidationError(report.first_error)
        self.graph = graph
        self.dims = tuple(env_dims)
        self.batch_size = batch_size
        nodes = graph.node_map()
        self._nodes = nodes
        live = live_nodes(graph)
        order = [i for i in topological_order(graph) if i in live]
        self.keys = structural_keys(graph)
        self.policy_out = graph.output(K.PolicyLoss).id
        self.critic_out = graph.output(K.CriticLoss).id
        role_dependent: set[int] = set()
        for i in order:
            n = nodes[i]
            if n.kind in _CRITIC_INPUTS or any(s in role_dependent for s in n.inputs):
                role_dependent.add(i)
        critic_side: set[int] = set()
        stack = [self.critic_out]
        while stack:
            i = stack.pop()
            if i not in critic_side:
                critic_side.add(i)
                stack.extend(nodes[i].inputs)
        self._order = order
        self._swap_order = [i for i in order if i in critic_side and i in role_dependent]
        self.sample_keys = {i: self.keys[i] for i in order if nodes[i].kind == K.DistSample}

    # -- execution ---------------------------------------------------------

    def _bind_inputs(self, batch: TransitionBatch, nets: dict) -> dict:
        return {
            K.States: Tensor(batch.states),
            K.NextStates: Tensor(batch.next_states),
            K.Actions: Tensor(batch.actions),
            K.Rewards: Tensor(batch.rewards),
            K.Discount: Tensor(batch.discount),
            **nets,
        }

    def _execute(self, order, values, pre_tanh, inputs, noise_seed, tape):
        nodes = self._nodes
        for i in order:
            n = self._nodes[i]
            kind = n.kind
            if kind in INPUT_KINDS:
                values[i] = inputs[kind]
                continue
            args = [values[s] for s in n.inputs]
            try:
                if kind in (K.PolicyLoss, K.CriticLoss):
                    values[i] = args[0]
                elif kind == K.DistFromState:
                    values[i] = policy_distribution(args[0], args[1], tape)
                elif kind == K.DistSample:
                    noise = sample_noise(noise_seed, self.keys[i], args[0].shape)
                    values[i], pre_tanh[i] = args[0].sample(noise, tape)
                elif kind == K.DistLogProb:
                    src = n.inputs[1]
                    if nodes[src].kind == K.DistSample:
                        values[i] = args[0].log_prob_pre_tanh(pre_tanh[src], tape)
                    else:
                        values[i] = args[0].log_prob(args[1], tape)
                elif kind == K.QValue:
                    values[i] = critic_value(args[0], args[1], args[2], tape)
                else:
                    values[i] = T.apply_primitive(kind, args, tape, const=n.const)
            except NumericError as exc:
                raise NumericError(exc.kind, exc.summary, node=i) from None

    def _run(self, batch: TransitionBatch, nets: NetworkBindings, noise_seed: int,
             differentiate: bool):
        if batch.dims != self.dims or batch.batch_size != self.batch_size:
            raise ShapeError(f"batch dims {batch.dims}x{batch.batch_size} do not match "
                             f"compiled {self.dims}x{self.batch_size}")
        if differentiate:
            policy = nets.policy.differentiable()
            c1, c2 = nets.critic1.differentiable(), nets.critic2.differentiable()
        else:
            policy, c1, c2 = nets.policy, nets.critic1, nets.critic2
        t1, t2 = nets.target1, nets.target2
        # pass A: identity roles, both outputs
        tape_a = Tape() if differentiate else None
        values: dict = {}
        pre_tanh: dict = {}
        inputs = self._bind_inputs(batch, {
            K.PolicyNet: policy, K.CriticNet1: c1, K.CriticNet2: c2.detached() if differentiate else c2,
            K.TargetCriticNet1: t1, K.TargetCriticNet2: t2})
        self._execute(self._order, values, pre_tanh, inputs, noise_seed, tape_a)
        pass_a = values
        # pass B: critic roles swapped, only role-dependent critic-side nodes recomputed
        tape_b = Tape() if differentiate else None
        swapped = dict(pass_a)
        inputs_b = dict(inputs)
        inputs_b.update({K.CriticNet1: c2, K.CriticNet2: c1.detached() if differentiate else c1,
                         K.TargetCriticNet1: t2, K.TargetCriticNet2: t1})
        self._execute(self._swap_order, swapped, dict(pre_tanh), inputs_b, noise_seed, tape_b)
        lp, lq1, lq2 = pass_a[self.policy_out], pass_a[self.critic_out], swapped[self.critic_out]
        values_out = LossValues(lp.item(), (lq1.item(), lq2.item()))
        if not differentiate:
            return values_out, None
        gp = T.backward(tape_a, lp, policy.trunk.tensors())
        g1 = T.backward(tape_a, lq1, c1.tensors())
        g2 = T.backward(tape_b, lq2, c2.tensors())
        grads = LossGradients(
            values_out,
            [gp[t] for t in policy.trunk.tensors()],
            [g1[t] for t in c1.tensors()],
            [g2[t] for t in c2.tensors()],
            [np.zeros_like(a) for a in t1.arrays()],
            [np.zeros_like(a) for a in t2.arrays()],
        )
        for g in (*grads.policy, *grads.critic1, *grads.critic2):
            if not np.isfinite(g).all():
                raise NumericError("backward", "non-finite gradient")
        return values_out, grads

    def evaluate(self, batch: TransitionBatch, nets: NetworkBindings, noise_seed: int) -> LossValues:
        with np.errstate(all="ignore"):
            return self._run(batch, nets, noise_seed, differentiate=False)[0]

    def gradients(self, batch: TransitionBatch, nets: NetworkBindings,
                  noise_seed: int) -> LossGradients:
        with np.errstate(all="ignore"):
            return self._run(batch, nets, noise_seed, differentiate=True)[1]


@lru_cache(maxsize=256)
def _compiled(graph: LossGraph, dims: tuple[int, int], batch_size: int) -> GraphLoss:
    return GraphLoss(graph, dims, batch_size)


def evaluate(graph: LossGraph, batch: TransitionBatch, nets: NetworkBindings,
             noise_seed: int) -> LossValues:
    return _compiled(graph, batch.dims, batch.batch_size).evaluate(batch, nets, noise_seed)


def loss_gradients(graph: LossGraph, batch: TransitionBatch, nets: NetworkBindings,
                   noise_seed: int) -> LossGradients:
    return _compiled(graph, batch.dims, batch.batch_size).gradients(batch, nets, noise_seed)
