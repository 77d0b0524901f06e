"""Hand-built graphs: the SAC warm start and the evolved losses reported for it.

Where an evolved equation writes an unindexed ``Q`` or a ``Q_i`` inside the
policy loss, the first online critic is used.
"""

from __future__ import annotations

from .graph import INPUT_KINDS, LossGraph, Node, NodeKind as K


class GraphBuilder:
    """Append-only construction helper; outputs receive the highest ids."""

    def __init__(self, max_nodes: int = 60):
        self.max_nodes = max_nodes
        self._nodes: list[tuple[K, tuple[int, ...], float | None]] = []
        self._outputs: list[tuple[K, int]] = []
        self._inputs: dict[K, int] = {}
        for kind in INPUT_KINDS:
            self._inputs[kind] = self._add(kind, (), None)

    def _add(self, kind, inputs, const) -> int:
        self._nodes.append((kind, tuple(inputs), const))
        return len(self._nodes) - 1

    def __getitem__(self, kind: K) -> int:
        return self._inputs[kind]

    def op(self, kind: K, *inputs: int, const: float | None = None) -> int:
        return self._add(kind, inputs, const)

    # shorthands used by the presets
    def dist(self, states: int) -> int:
        return self.op(K.DistFromState, self[K.PolicyNet], states)

    def q(self, net: K, states: int, actions: int) -> int:
        return self.op(K.QValue, self[net], states, actions)

    def min_q(self, states: int, actions: int, target: bool = False) -> int:
        a, b = (K.TargetCriticNet1, K.TargetCriticNet2) if target else (K.CriticNet1, K.CriticNet2)
        return self.op(K.MinElem, self.q(a, states, actions), self.q(b, states, actions))

    def output(self, kind: K, value: int) -> None:
        self._outputs.append((kind, value))

    def build(self, **metadata) -> LossGraph:
        nodes = [Node(i, kind, inputs, const) for i, (kind, inputs, const) in enumerate(self._nodes)]
        base = len(nodes)
        for j, (kind, value) in enumerate(self._outputs):
            nodes.append(Node(base + j, kind, (value,)))
        return LossGraph(tuple(nodes), self.max_nodes, metadata)


def warm_start_sac(max_nodes: int = 60) -> LossGraph:
    """SAC with unit entropy weight and clipped double-Q targets (33 nodes)."""
    b = GraphBuilder(max_nodes)
    s, s1, a, r, gamma = b[K.States], b[K.NextStates], b[K.Actions], b[K.Rewards], b[K.Discount]
    # policy loss: mean[log pi(a~|s) - min_i Q_i(s, a~)]
    d = b.dist(s)
    a_pi = b.op(K.DistSample, d)
    logp = b.op(K.DistLogProb, d, a_pi)
    q_pi = b.min_q(s, a_pi)
    policy_loss = b.op(K.MeanAll, b.op(K.Sub, logp, q_pi))
    # critic loss: mean[(r + gamma*(min_i Qtarg_i(s', a~') - log pi(a~'|s')) - Q_i(s, a))^2]
    d1 = b.dist(s1)
    a1 = b.op(K.DistSample, d1)
    logp1 = b.op(K.DistLogProb, d1, a1)
    soft_v = b.op(K.Sub, b.min_q(s1, a1, target=True), logp1)
    target = b.op(K.StopGradient, b.op(K.Add2, r, b.op(K.Mul2, gamma, soft_v)))
    td = b.op(K.SquaredDiff, target, b.q(K.CriticNet1, s, a))
    critic_loss = b.op(K.MeanAll, td)
    b.output(K.PolicyLoss, policy_loss)
    b.output(K.CriticLoss, critic_loss)
    return b.build(name="warm_start_sac")


def _td_target(b: GraphBuilder, bootstrap: int) -> int:
    return b.op(K.Add2, b[K.Rewards], b.op(K.Mul2, b[K.Discount], bootstrap))


def cartpole_best_performer() -> LossGraph:
    b = GraphBuilder()
    s, s1, a = b[K.States], b[K.NextStates], b[K.Actions]
    d, d1 = b.dist(s), b.dist(s1)
    a_pi, a1 = b.op(K.DistSample, d), b.op(K.DistSample, d1)
    # log(min(pi(a~'|s'), gamma)) - min_i Q_i(s, a~)
    density = b.op(K.Exp, b.op(K.DistLogProb, d1, a1))
    first = b.op(K.Log, b.op(K.MinElem, density, b[K.Discount]))
    b.output(K.PolicyLoss, b.op(K.MeanAll, b.op(K.Sub, first, b.min_q(s, a_pi))))
    # (r + gamma * min_i Qtarg_i(s', a~') - Q_i(s, a))^2, no entropy term
    y = _td_target(b, b.min_q(s1, a1, target=True))
    b.output(K.CriticLoss, b.op(K.MeanAll, b.op(K.SquaredDiff, y, b.q(K.CriticNet1, s, a))))
    return b.build(name="cartpole_best_performer")


def cartpole_best_generalizer() -> LossGraph:
    b = GraphBuilder()
    s, s1, a = b[K.States], b[K.NextStates], b[K.Actions]
    d = b.dist(s)
    a_pi = b.op(K.DistSample, d)
    logp = b.op(K.DistLogProb, d, a_pi)
    # log pi(a~|s) - min_i Q_i(s', a~)
    b.output(K.PolicyLoss, b.op(K.MeanAll, b.op(K.Sub, logp, b.min_q(s1, a_pi))))
    # atan((r + gamma*(min_i Qtarg_i(s', a~) - log pi(a~|s)) - Q_i(s, a))^2)
    y = _td_target(b, b.op(K.Sub, b.min_q(s1, a_pi, target=True), logp))
    td = b.op(K.SquaredDiff, y, b.q(K.CriticNet1, s, a))
    b.output(K.CriticLoss, b.op(K.MeanAll, b.op(K.Atan, td)))
    return b.build(name="cartpole_best_generalizer")


def walker_best_performer() -> LossGraph:
    b = GraphBuilder()
    s, s1, a, gamma = b[K.States], b[K.NextStates], b[K.Actions], b[K.Discount]
    d, d1 = b.dist(s), b.dist(s1)
    a_pi, a1 = b.op(K.DistSample, d), b.op(K.DistSample, d1)
    q_sa = b.q(K.CriticNet1, s, a)
    # r + gamma*(min_i Qtarg_i(s', a~') - atan(gamma / Q(s, a))) - Q(s, a~)
    y = _td_target(b, b.op(K.Sub, b.min_q(s1, a1, target=True),
                           b.op(K.Atan, b.op(K.DivEps, gamma, q_sa))))
    b.output(K.PolicyLoss, b.op(K.MeanAll, b.op(K.Sub, y, b.q(K.CriticNet1, s, a_pi))))
    b.output(K.CriticLoss, b.op(K.MeanAll, b.op(K.SquaredDiff, y, q_sa)))
    return b.build(name="walker_best_performer")


def walker_best_generalizer() -> LossGraph:
    b = GraphBuilder()
    s, s1, a = b[K.States], b[K.NextStates], b[K.Actions]
    d1 = b.dist(s1)
    a1 = b.op(K.DistSample, d1)
    logp1 = b.op(K.DistLogProb, d1, a1)
    q_next = b.q(K.CriticNet1, s1, a1)
    tenth_logp = b.op(K.MulConst, logp1, const=0.1)
    # 0.2*log pi(a~'|s') / (Q_i(s', a~') - 0.1*log pi(a~'|s')) - min_i Q_i(s, a~')
    ratio = b.op(K.DivEps, b.op(K.MulConst, tenth_logp, const=2.0),
                 b.op(K.Sub, q_next, tenth_logp))
    b.output(K.PolicyLoss, b.op(K.MeanAll, b.op(K.Sub, ratio, b.min_q(s, a1))))
    # (r + gamma*(Q_i(s', a~') - 0.1*log pi(a~'|s')) - Q_i(s, a))^2
    y = _td_target(b, b.op(K.Sub, q_next, tenth_logp))
    b.output(K.CriticLoss, b.op(K.MeanAll, b.op(K.SquaredDiff, y, b.q(K.CriticNet1, s, a))))
    return b.build(name="walker_best_generalizer")


def pendulum_best_performer() -> LossGraph:
    b = GraphBuilder()
    s, s1, a = b[K.States], b[K.NextStates], b[K.Actions]
    d = b.dist(s)
    a_pi = b.op(K.DistSample, d)
    logp = b.op(K.DistLogProb, d, a_pi)
    # 2*atan(log pi(a~|s)) - min_i Q_i(s, a~)
    first = b.op(K.MulConst, b.op(K.Atan, logp), const=2.0)
    b.output(K.PolicyLoss, b.op(K.MeanAll, b.op(K.Sub, first, b.min_q(s, a_pi))))
    # (r + gamma*(Qtarg_i(s', a~) - log pi(a~|s)) - Q_i(s, a))^2
    y = _td_target(b, b.op(K.Sub, b.q(K.TargetCriticNet1, s1, a_pi), logp))
    b.output(K.CriticLoss, b.op(K.MeanAll, b.op(K.SquaredDiff, y, b.q(K.CriticNet1, s, a))))
    return b.build(name="pendulum_best_performer")


def pendulum_best_generalizer() -> LossGraph:
    b = GraphBuilder()
    s, s1, a = b[K.States], b[K.NextStates], b[K.Actions]
    d = b.dist(s)
    a_pi = b.op(K.DistSample, d)
    log_logp = b.op(K.Log, b.op(K.DistLogProb, d, a_pi))
    # log(log pi(a~|s)) - min_i Q_i(s, a~)
    b.output(K.PolicyLoss, b.op(K.MeanAll, b.op(K.Sub, log_logp, b.min_q(s, a_pi))))
    # (r + gamma*(Qtarg_i(s', a~) - log(log pi(a~|s))) - Q_i(s, a))^2
    y = _td_target(b, b.op(K.Sub, b.q(K.TargetCriticNet1, s1, a_pi), log_logp))
    b.output(K.CriticLoss, b.op(K.MeanAll, b.op(K.SquaredDiff, y, b.q(K.CriticNet1, s, a))))
    return b.build(name="pendulum_best_generalizer")


def _entropy_only_policy_loss(b: GraphBuilder, logp_next: int) -> None:
    # log pi(a~'|s') - min_i Q_i(s, a)
    s, a = b[K.States], b[K.Actions]
    b.output(K.PolicyLoss, b.op(K.MeanAll, b.op(K.Sub, logp_next, b.min_q(s, a))))


def ant_best_performer() -> LossGraph:
    b = GraphBuilder()
    s, s1, a, gamma = b[K.States], b[K.NextStates], b[K.Actions], b[K.Discount]
    d1 = b.dist(s1)
    a1 = b.op(K.DistSample, d1)
    _entropy_only_policy_loss(b, b.op(K.DistLogProb, d1, a1))
    # |(r + gamma*(min_i Qtarg_i(s, a~') - gamma) - Q_i(s, a))^2 * C1|
    # C1 = r + gamma*(min_i Q_i(s', a~') - gamma)
    y = _td_target(b, b.op(K.Sub, b.min_q(s, a1, target=True), gamma))
    sq = b.op(K.SquaredDiff, y, b.q(K.CriticNet1, s, a))
    c1 = _td_target(b, b.op(K.Sub, b.min_q(s1, a1), gamma))
    b.output(K.CriticLoss, b.op(K.MeanAll, b.op(K.Abs, b.op(K.Mul2, sq, c1))))
    return b.build(name="ant_best_performer")


def humanoid_best_performer() -> LossGraph:
    b = GraphBuilder()
    s, s1, a = b[K.States], b[K.NextStates], b[K.Actions]
    d1 = b.dist(s1)
    a1 = b.op(K.DistSample, d1)
    logp1 = b.op(K.DistLogProb, d1, a1)
    _entropy_only_policy_loss(b, logp1)
    # (C2 - Q_i(s, a))^2 * C2, C2 = r + gamma*(min_i Qtarg_i(s, a~') - log pi(a~'|s'))
    c2 = _td_target(b, b.op(K.Sub, b.min_q(s, a1, target=True), logp1))
    sq = b.op(K.SquaredDiff, c2, b.q(K.CriticNet1, s, a))
    b.output(K.CriticLoss, b.op(K.MeanAll, b.op(K.Mul2, sq, c2)))
    return b.build(name="humanoid_best_performer")


_PRESETS = {
    "warm_start_sac": warm_start_sac,
    "cartpole_best_performer": cartpole_best_performer,
    "cartpole_best_generalizer": cartpole_best_generalizer,
    "walker_best_performer": walker_best_performer,
    "walker_best_generalizer": walker_best_generalizer,
    "pendulum_best_performer": pendulum_best_performer,
    "pendulum_best_generalizer": pendulum_best_generalizer,
    "ant_best_performer": ant_best_performer,
    "humanoid_best_performer": humanoid_best_performer,
}

EVOLVED_PRESETS = tuple(name for name in _PRESETS if name != "warm_start_sac")


def preset_graphs() -> dict[str, LossGraph]:
    """Every evolved loss plus the warm start, keyed by name."""
    return {name: make() for name, make in _PRESETS.items()}
