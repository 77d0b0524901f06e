"""Infix rendering of loss graphs for human inspection."""

from __future__ import annotations

from .graph import LossGraph, NodeKind as K, topological_order

SYMBOLS = {
    K.PolicyNet: "π", K.CriticNet1: "Q1", K.CriticNet2: "Q2",
    K.TargetCriticNet1: "Qtarg1", K.TargetCriticNet2: "Qtarg2",
    K.States: "s_t", K.NextStates: "s_{t+1}", K.Actions: "a_t", K.Rewards: "r_t",
    K.Discount: "γ",
}

_INFIX = {K.Add2: " + ", K.Add3: " + ", K.Add4: " + ", K.Mul2: " * ", K.Mul3: " * ",
          K.Sub: " - ", K.DivEps: " / "}
_FUNCS = {
    K.MeanLast: "mean_last", K.SumLast: "sum_last", K.StdLast: "std_last",
    K.MeanAll: "mean", K.SumAll: "sum", K.StdAll: "std", K.CumSum: "cumsum",
    K.MinLast: "min_last", K.MaxLast: "max_last", K.Clamp: "clamp", K.Abs: "abs",
    K.Log: "log", K.Exp: "exp", K.Sin: "sin", K.Cos: "cos", K.Tan: "tan", K.Atan: "atan",
    K.StopGradient: "sg",
}
_ACTION_NAMES = {K.States: "ã_t", K.NextStates: "ã_{t+1}"}


def _strip(text: str) -> str:
    """Drop one pair of redundant outer parentheses."""
    if not (text.startswith("(") and text.endswith(")")):
        return text
    depth = 0
    for i, ch in enumerate(text):
        depth += ch == "("
        depth -= ch == ")"
        if depth == 0 and i < len(text) - 1:
            return text
    return text[1:-1]


def render_expressions(graph: LossGraph) -> dict[int, str]:
    """Infix text for every node reachable in topological order."""
    nodes = graph.node_map()
    out: dict[int, str] = {}
    sample_names: dict[int, str] = {}
    for i in topological_order(graph):
        n = nodes[i]
        args = [out[s] for s in n.inputs]
        k = n.kind
        if k in SYMBOLS:
            text = SYMBOLS[k]
        elif k in _INFIX:
            text = "(" + _INFIX[k].join(args) + ")"
        elif k == K.MulConst:
            text = f"({n.const:g} * {args[0]})"
        elif k in (K.MinElem, K.MaxElem):
            text = _minmax(k, n.inputs, nodes, out, args)
        elif k == K.SquaredDiff:
            text = f"({args[0]} - {args[1]})^2"
        elif k == K.Square:
            text = f"({args[0]})^2"
        elif k == K.DiscountedCumSum:
            text = f"disc_cumsum({args[0]}, {args[1]})"
        elif k == K.DistFromState:
            text = f"{args[0]}(·|{args[1]})"
        elif k == K.DistSample:
            src = nodes[nodes[n.inputs[0]].inputs[1]].kind if nodes[n.inputs[0]].inputs else None
            base = _ACTION_NAMES.get(src, "ã")
            name = base
            suffix = 2
            while name in sample_names.values():
                name = f"{base}#{suffix}"
                suffix += 1
            sample_names[i] = name
            text = name
        elif k == K.DistLogProb:
            dist = nodes[n.inputs[0]]
            state = out[dist.inputs[1]] if len(dist.inputs) > 1 else "?"
            policy = out[dist.inputs[0]] if dist.inputs else "π"
            text = f"log {policy}({args[1]}|{state})"
        elif k == K.QValue:
            text = f"{args[0]}({args[1]}, {args[2]})"
        elif k in (K.PolicyLoss, K.CriticLoss):
            text = _strip(args[0])
        else:
            text = f"{_FUNCS.get(k, k.value.lower())}({_strip(args[0])})"
        out[i] = text
    return out


def _minmax(kind, inputs, nodes, out, args) -> str:
    name = "min" if kind == K.MinElem else "max"
    a, b = (nodes[s] for s in inputs)
    if a.kind == b.kind == K.QValue and a.inputs[1:] == b.inputs[1:]:
        nets = sorted((out[a.inputs[0]], out[b.inputs[0]]))
        return f"{name}({nets[0]}, {nets[1]})({out[a.inputs[1]]}, {out[a.inputs[2]]})"
    return f"{name}({_strip(args[0])}, {_strip(args[1])})"


def render_losses(graph: LossGraph) -> dict[str, str]:
    """``{"policy_loss": ..., "critic_loss": ...}``."""
    exprs = render_expressions(graph)
    return {
        "policy_loss": exprs[graph.output(K.PolicyLoss).id],
        "critic_loss": exprs[graph.output(K.CriticLoss).id],
    }
