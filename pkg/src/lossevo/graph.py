"""Typed loss-function graphs: node kinds, shape inference, ordering, file format."""

from __future__ import annotations

import enum
import hashlib
import heapq
import json
import math
from dataclasses import dataclass, field
from typing import Any, Mapping

from .errors import GraphCycleError, GraphValidationError, ParseError
from .tensor import MUL_CONSTANTS

FORMAT_VERSION = 1


class Category(str, enum.Enum):
    TENSOR = "tensor"
    DIST = "distribution"
    POLICY = "policy_network"
    CRITIC = "critic_network"


class NodeKind(str, enum.Enum):
    # inputs
    PolicyNet = "PolicyNet"
    CriticNet1 = "CriticNet1"
    CriticNet2 = "CriticNet2"
    TargetCriticNet1 = "TargetCriticNet1"
    TargetCriticNet2 = "TargetCriticNet2"
    States = "States"
    NextStates = "NextStates"
    Actions = "Actions"
    Rewards = "Rewards"
    Discount = "Discount"
    # outputs
    PolicyLoss = "PolicyLoss"
    CriticLoss = "CriticLoss"
    # operations
    Add2 = "Add2"
    Add3 = "Add3"
    Add4 = "Add4"
    Mul2 = "Mul2"
    Mul3 = "Mul3"
    Sub = "Sub"
    DivEps = "DivEps"
    DistFromState = "DistFromState"
    QValue = "QValue"
    StopGradient = "StopGradient"
    DistSample = "DistSample"
    DistLogProb = "DistLogProb"
    MeanLast = "MeanLast"
    SumLast = "SumLast"
    StdLast = "StdLast"
    MeanAll = "MeanAll"
    SumAll = "SumAll"
    StdAll = "StdAll"
    CumSum = "CumSum"
    DiscountedCumSum = "DiscountedCumSum"
    SquaredDiff = "SquaredDiff"
    MulConst = "MulConst"
    MinLast = "MinLast"
    MaxLast = "MaxLast"
    MinElem = "MinElem"
    MaxElem = "MaxElem"
    Clamp = "Clamp"
    Abs = "Abs"
    Square = "Square"
    Log = "Log"
    Exp = "Exp"
    Sin = "Sin"
    Cos = "Cos"
    Tan = "Tan"
    Atan = "Atan"

    def __str__(self) -> str:
        return self.value


K = NodeKind
C = Category

INPUT_KINDS = (K.PolicyNet, K.CriticNet1, K.CriticNet2, K.TargetCriticNet1,
               K.TargetCriticNet2, K.States, K.NextStates, K.Actions, K.Rewards, K.Discount)
OUTPUT_KINDS = (K.PolicyLoss, K.CriticLoss)
OPERATION_KINDS = tuple(k for k in NodeKind if k not in INPUT_KINDS and k not in OUTPUT_KINDS)

_T = C.TENSOR
SIGNATURES: dict[NodeKind, tuple[Category, ...]] = {k: () for k in INPUT_KINDS}
SIGNATURES.update({
    K.PolicyLoss: (_T,), K.CriticLoss: (_T,),
    K.Add2: (_T,) * 2, K.Add3: (_T,) * 3, K.Add4: (_T,) * 4,
    K.Mul2: (_T,) * 2, K.Mul3: (_T,) * 3,
    K.Sub: (_T, _T), K.DivEps: (_T, _T), K.SquaredDiff: (_T, _T),
    K.MinElem: (_T, _T), K.MaxElem: (_T, _T), K.DiscountedCumSum: (_T, _T),
    K.DistFromState: (C.POLICY, _T),
    K.QValue: (C.CRITIC, _T, _T),
    K.DistSample: (C.DIST,),
    K.DistLogProb: (C.DIST, _T),
})
for _k in OPERATION_KINDS:
    SIGNATURES.setdefault(_k, (_T,))

INPUT_CATEGORY = {
    K.PolicyNet: C.POLICY,
    K.CriticNet1: C.CRITIC, K.CriticNet2: C.CRITIC,
    K.TargetCriticNet1: C.CRITIC, K.TargetCriticNet2: C.CRITIC,
}

_ELEMENTWISE_NARY = {K.Add2, K.Add3, K.Add4, K.Mul2, K.Mul3, K.Sub, K.DivEps,
                     K.SquaredDiff, K.MinElem, K.MaxElem}
_UNARY_SAME = {K.StopGradient, K.MulConst, K.Clamp, K.Abs, K.Square, K.Log, K.Exp,
               K.Sin, K.Cos, K.Tan, K.Atan, K.CumSum}
_LAST_REDUCE = {K.MeanLast, K.SumLast, K.StdLast, K.MinLast, K.MaxLast}
_ALL_REDUCE = {K.MeanAll, K.SumAll, K.StdAll}


def output_category(kind: NodeKind) -> Category:
    if kind in INPUT_CATEGORY:
        return INPUT_CATEGORY[kind]
    if kind == K.DistFromState:
        return C.DIST
    return C.TENSOR


@dataclass(frozen=True)
class Node:
    id: int
    kind: NodeKind
    inputs: tuple[int, ...] = ()
    const: float | None = None


@dataclass(frozen=True)
class LossGraph:
    """Immutable node table. Structural equality ignores ``metadata``."""

    nodes: tuple[Node, ...]
    max_nodes: int = 60
    metadata: Mapping[str, Any] = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(sorted(self.nodes, key=lambda n: n.id)))

    def __len__(self) -> int:
        return len(self.nodes)

    def node_map(self) -> dict[int, Node]:
        return {n.id: n for n in self.nodes}

    def find(self, kind: NodeKind) -> list[Node]:
        return [n for n in self.nodes if n.kind == kind]

    def output(self, kind: NodeKind) -> Node:
        found = self.find(kind)
        if len(found) != 1:
            raise GraphValidationError(f"expected exactly one {kind} node, found {len(found)}")
        return found[0]

    def replace_nodes(self, nodes, **kw) -> "LossGraph":
        return LossGraph(tuple(nodes), kw.get("max_nodes", self.max_nodes),
                         kw.get("metadata", self.metadata))

    def with_metadata(self, **meta) -> "LossGraph":
        merged = dict(self.metadata)
        merged.update(meta)
        return LossGraph(self.nodes, self.max_nodes, merged)


# ---------------------------------------------------------------------------
# ordering


def _ready_order(graph: LossGraph, among: set[int] | None = None):
    """Kahn's algorithm; returns (order, leftover ids). Ignores dangling refs."""
    nodes = graph.node_map()
    ids = set(nodes) if among is None else among
    indeg = {i: 0 for i in ids}
    consumers: dict[int, list[int]] = {i: [] for i in ids}
    for i in ids:
        for src in nodes[i].inputs:
            if src in ids:
                indeg[i] += 1
                consumers[src].append(i)
    heap = [i for i, d in indeg.items() if d == 0]
    heapq.heapify(heap)
    order = []
    while heap:
        i = heapq.heappop(heap)
        order.append(i)
        for c in consumers[i]:
            indeg[c] -= 1
            if indeg[c] == 0:
                heapq.heappush(heap, c)
    leftover = [i for i in ids if indeg[i] > 0]
    return order, leftover


def _check_references(graph: LossGraph) -> None:
    seen = set()
    for n in graph.nodes:
        if n.id in seen:
            raise GraphValidationError(f"duplicate node id {n.id}")
        seen.add(n.id)
    for n in graph.nodes:
        for src in n.inputs:
            if src not in seen:
                raise GraphValidationError(f"node {n.id} references absent node {src}")


def topological_order(graph: LossGraph) -> list[int]:
    """Every node after its inputs; ready nodes are taken smallest id first."""
    _check_references(graph)
    order, leftover = _ready_order(graph)
    if leftover:
        raise GraphCycleError(min(leftover))
    return order


def live_nodes(graph: LossGraph) -> set[int]:
    """Ids of nodes on some path into an output node (outputs included)."""
    nodes = graph.node_map()
    stack = [n.id for n in graph.nodes if n.kind in OUTPUT_KINDS]
    live: set[int] = set()
    while stack:
        i = stack.pop()
        if i in live or i not in nodes:
            continue
        live.add(i)
        stack.extend(nodes[i].inputs)
    return live


def prune_dead_nodes(graph: LossGraph) -> LossGraph:
    """Drop nodes that cannot reach an output; surviving ids are renumbered densely."""
    live = live_nodes(graph)
    kept = [n for n in graph.nodes if n.id in live]
    remap = {n.id: i for i, n in enumerate(kept)}
    nodes = tuple(Node(remap[n.id], n.kind, tuple(remap[s] for s in n.inputs), n.const)
                  for n in kept)
    return LossGraph(nodes, graph.max_nodes, graph.metadata)


def renumber(graph: LossGraph, mapping: Mapping[int, int]) -> LossGraph:
    nodes = tuple(Node(mapping[n.id], n.kind, tuple(mapping[s] for s in n.inputs), n.const)
                  for n in graph.nodes)
    return LossGraph(nodes, graph.max_nodes, graph.metadata)


def structural_keys(graph: LossGraph) -> dict[int, str]:
    """Id-independent hash of each node's expression tree (acyclic graphs only)."""
    nodes = graph.node_map()
    keys: dict[int, str] = {}
    for i in topological_order(graph):
        n = nodes[i]
        h = hashlib.sha256()
        h.update(n.kind.value.encode())
        if n.const is not None:
            h.update(repr(float(n.const)).encode())
        for src in n.inputs:
            h.update(b"|")
            h.update(keys[src].encode())
        keys[i] = h.hexdigest()
    return keys


# ---------------------------------------------------------------------------
# validation / shape inference


@dataclass(frozen=True)
class NodeInfo:
    category: Category
    shape: tuple[int, ...] | None  # None for networks


@dataclass
class ShapeReport:
    info: dict[int, NodeInfo]
    errors: list[tuple[int | None, str]]
    dead_errors: list[tuple[int, str]]
    live: set[int]

    @property
    def valid(self) -> bool:
        return not self.errors

    @property
    def first_error(self) -> str | None:
        if not self.errors:
            return None
        node, msg = self.errors[0]
        return msg if node is None else f"node {node}: {msg}"


def _infer(node: Node, args: list[NodeInfo], dims: tuple[int, int]) -> NodeInfo:
    """Shape rule for one node; raises ValueError with a reason on violation."""
    state_dim, action_dim = dims
    kind = node.kind
    sig = SIGNATURES[kind]
    if len(args) != len(sig):
        raise ValueError(f"{kind} takes {len(sig)} inputs, got {len(args)}")
    for pos, (want, got) in enumerate(zip(sig, args)):
        if got.category != want:
            raise ValueError(f"{kind} input {pos} must be {want.value}, got {got.category.value}")
    shapes = [a.shape for a in args]
    if kind in OUTPUT_KINDS:
        if shapes[0] != ():
            raise ValueError(f"{kind} must receive a scalar, got shape {shapes[0]}")
        return NodeInfo(C.TENSOR, ())
    if kind in _ELEMENTWISE_NARY:
        shape: tuple = ()
        for s in shapes:
            if s == ():
                continue
            if shape == ():
                shape = s
            elif s != shape:
                raise ValueError(f"{kind}: incompatible shapes {shapes}")
        return NodeInfo(C.TENSOR, shape)
    if kind == K.MulConst and (node.const is None or float(node.const) not in MUL_CONSTANTS):
        raise ValueError(f"MulConst constant {node.const!r} not in {MUL_CONSTANTS}")
    if kind in _UNARY_SAME:
        if kind == K.CumSum and len(shapes[0]) < 1:
            raise ValueError("CumSum needs at least one axis")
        return NodeInfo(C.TENSOR, shapes[0])
    if kind in _LAST_REDUCE:
        if len(shapes[0]) < 1 or shapes[0][-1] == 0:
            raise ValueError(f"{kind} needs a non-empty last axis, got {shapes[0]}")
        return NodeInfo(C.TENSOR, shapes[0][:-1])
    if kind in _ALL_REDUCE:
        return NodeInfo(C.TENSOR, ())
    if kind == K.DiscountedCumSum:
        if len(shapes[0]) < 1:
            raise ValueError("DiscountedCumSum needs at least one axis")
        if shapes[1] != ():
            raise ValueError(f"DiscountedCumSum discount must be scalar, got {shapes[1]}")
        return NodeInfo(C.TENSOR, shapes[0])
    if kind == K.DistFromState:
        s = shapes[1]
        if len(s) != 2 or s[1] != state_dim:
            raise ValueError(f"DistFromState needs [batch, {state_dim}] states, got {s}")
        return NodeInfo(C.DIST, (s[0], action_dim))
    if kind == K.DistSample:
        return NodeInfo(C.TENSOR, shapes[0])
    if kind == K.DistLogProb:
        if shapes[1] != shapes[0]:
            raise ValueError(f"DistLogProb action shape {shapes[1]} != distribution {shapes[0]}")
        return NodeInfo(C.TENSOR, shapes[0][:-1])
    if kind == K.QValue:
        s, a = shapes[1], shapes[2]
        if len(s) != 2 or s[1] != state_dim:
            raise ValueError(f"QValue needs [batch, {state_dim}] states, got {s}")
        if len(a) != 2 or a[1] != action_dim or a[0] != s[0]:
            raise ValueError(f"QValue needs [{s[0]}, {action_dim}] actions, got {a}")
        return NodeInfo(C.TENSOR, (s[0],))
    raise ValueError(f"no shape rule for {kind}")  # pragma: no cover


def input_info(kind: NodeKind, dims: tuple[int, int], batch: int) -> NodeInfo:
    state_dim, action_dim = dims
    if kind in INPUT_CATEGORY:
        return NodeInfo(INPUT_CATEGORY[kind], None)
    return NodeInfo(C.TENSOR, {
        K.States: (batch, state_dim),
        K.NextStates: (batch, state_dim),
        K.Actions: (batch, action_dim),
        K.Rewards: (batch,),
        K.Discount: (),
    }[kind])


def validate(graph: LossGraph, env_dims: tuple[int, int], batch: int) -> ShapeReport:
    """Propagate categories and shapes; never raises.

    Problems in live nodes make the graph invalid. Problems confined to dead
    nodes (not on any path to an output) are reported separately.
    """
    errors: list[tuple[int | None, str]] = []
    dead_errors: list[tuple[int, str]] = []
    info: dict[int, NodeInfo] = {}
    nodes: dict[int, Node] = {}
    for n in graph.nodes:
        if not isinstance(n.kind, NodeKind):
            errors.append((n.id, f"unknown node kind {n.kind!r}"))
            continue
        if n.id in nodes:
            errors.append((n.id, "duplicate node id"))
            continue
        nodes[n.id] = n
    if errors:
        return ShapeReport(info, errors, dead_errors, set())
    if len(graph.nodes) > graph.max_nodes:
        errors.append((None, f"{len(graph.nodes)} nodes exceed max_nodes={graph.max_nodes}"))
    for kind in INPUT_KINDS:
        if len(graph.find(kind)) > 1:
            errors.append((None, f"input kind {kind} appears more than once"))
    for kind in OUTPUT_KINDS:
        count = len(graph.find(kind))
        if count != 1:
            errors.append((None, f"expected exactly one {kind} node, found {count}"))
    broken: set[int] = set()
    for n in graph.nodes:
        missing = [s for s in n.inputs if s not in nodes]
        if missing:
            broken.add(n.id)
        if n.kind in INPUT_KINDS and n.inputs:
            broken.add(n.id)
    live = live_nodes(graph)

    def flag(i: int, msg: str) -> None:
        (errors if i in live else dead_errors).append((i, msg))

    for i in sorted(broken):
        flag(i, "dangling or illegal input reference")
    order, leftover = _ready_order(graph, set(nodes) - broken)
    for i in sorted(leftover):
        flag(i, "node is part of a cycle")
    state_dim, action_dim = env_dims
    for i in order:
        n = nodes[i]
        if n.kind in INPUT_KINDS:
            info[i] = input_info(n.kind, env_dims, batch)
            continue
        args = [info.get(s) for s in n.inputs]
        if any(a is None for a in args):
            flag(i, "input has no inferred shape")
            continue
        try:
            info[i] = _infer(n, args, (state_dim, action_dim))
        except ValueError as exc:
            flag(i, str(exc))
    return ShapeReport(info, errors, dead_errors, live)


def is_consistent(graph: LossGraph, env_dims: tuple[int, int], batch: int) -> bool:
    return validate(graph, env_dims, batch).valid


def search_space_upper_bound(num_op_kinds: int, max_nodes: int) -> float:
    """log10 of (N*K*(K-1)/2)**K, the count of two-input wirings of K nodes."""
    n, k = num_op_kinds, max_nodes
    if n < 1 or k < 2:
        raise ValueError("need num_op_kinds >= 1 and max_nodes >= 2")
    return k * math.log10(n * k * (k - 1) / 2)


# ---------------------------------------------------------------------------
# file format


def to_document(graph: LossGraph) -> dict:
    nodes = []
    for n in graph.nodes:
        entry: dict[str, Any] = {"id": n.id, "kind": n.kind.value}
        if n.const is not None:
            entry["const"] = float(n.const)
        nodes.append(entry)
    edges = [{"consumer": n.id, "producers": list(n.inputs)} for n in graph.nodes if n.inputs]
    doc: dict[str, Any] = {"format_version": FORMAT_VERSION, "max_nodes": graph.max_nodes,
                           "nodes": nodes, "edges": edges}
    if graph.metadata:
        doc["metadata"] = dict(graph.metadata)
    return doc


def serialize(graph: LossGraph) -> str:
    doc = to_document(graph)
    # one node / edge per line keeps files diffable
    lines = ["{",
             f'  "format_version": {doc["format_version"]},',
             f'  "max_nodes": {doc["max_nodes"]},',
             '  "nodes": [']
    lines.append(",\n".join("    " + json.dumps(n) for n in doc["nodes"]))
    lines.append("  ],")
    lines.append('  "edges": [')
    lines.append(",\n".join("    " + json.dumps(e) for e in doc["edges"]))
    if "metadata" in doc:
        lines.append("  ],")
        meta = json.dumps(doc["metadata"], indent=2, sort_keys=True).replace("\n", "\n  ")
        lines.append(f'  "metadata": {meta}')
    else:
        lines.append("  ]")
    lines.append("}")
    return "\n".join(lines) + "\n"


def from_document(doc: Any) -> LossGraph:
    if not isinstance(doc, dict):
        raise ParseError("graph document must be an object", "$")
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise ParseError(f"unsupported format_version {version!r}", "$.format_version")
    max_nodes = doc.get("max_nodes")
    if not isinstance(max_nodes, int) or max_nodes < 1:
        raise ParseError("max_nodes must be a positive integer", "$.max_nodes")
    raw_nodes = doc.get("nodes")
    if not isinstance(raw_nodes, list):
        raise ParseError("nodes must be a list", "$.nodes")
    table: dict[int, tuple[NodeKind, float | None]] = {}
    for pos, entry in enumerate(raw_nodes):
        where = f"$.nodes[{pos}]"
        if not isinstance(entry, dict) or not isinstance(entry.get("id"), int):
            raise ParseError("node entry needs an integer id", where)
        name = entry.get("kind")
        try:
            kind = NodeKind(name)
        except ValueError:
            raise ParseError(f"unknown node kind {name!r}", where + ".kind") from None
        const = entry.get("const")
        if const is not None and not isinstance(const, (int, float)):
            raise ParseError("const must be a number", where + ".const")
        if entry["id"] in table:
            raise GraphValidationError(f"duplicate node id {entry['id']}")
        table[entry["id"]] = (kind, None if const is None else float(const))
    inputs: dict[int, tuple[int, ...]] = {}
    raw_edges = doc.get("edges", [])
    if not isinstance(raw_edges, list):
        raise ParseError("edges must be a list", "$.edges")
    for pos, entry in enumerate(raw_edges):
        where = f"$.edges[{pos}]"
        if not isinstance(entry, dict):
            raise ParseError("edge entry must be an object", where)
        consumer, producers = entry.get("consumer"), entry.get("producers")
        if not isinstance(consumer, int) or not isinstance(producers, list) or \
                not all(isinstance(p, int) for p in producers):
            raise ParseError("edge needs integer consumer and producer list", where)
        if consumer not in table:
            raise GraphValidationError(f"edge consumer {consumer} is not a node")
        for p in producers:
            if p not in table:
                raise GraphValidationError(f"node {consumer} references absent node {p}")
        inputs[consumer] = tuple(producers)
    nodes = tuple(Node(i, kind, inputs.get(i, ()), const) for i, (kind, const) in table.items())
    return LossGraph(nodes, max_nodes, doc.get("metadata") or {})


def parse(text: str) -> LossGraph:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, f"line {exc.lineno} column {exc.colno}") from None
    return from_document(doc)


def load(path) -> LossGraph:
    with open(path, encoding="utf-8") as fh:
        return parse(fh.read())


def save(graph: LossGraph, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize(graph))
