import numpy as np
import pytest
from hypothesis import given, strategies as st

from lossevo.errors import GraphCycleError, GraphValidationError, ParseError
from lossevo.graph import (INPUT_KINDS, OPERATION_KINDS, LossGraph, Node, NodeKind as K,
                           from_document, live_nodes, parse, prune_dead_nodes,
                           search_space_upper_bound, serialize, to_document, topological_order,
                           validate)
from lossevo.interpreter import evaluate
from lossevo.mutation import pad_to_max
from lossevo.presets import EVOLVED_PRESETS, GraphBuilder, preset_graphs, warm_start_sac
from lossevo.render import render_losses
from lossevo.tensor import MUL_CONSTANTS

from helpers import padded, permuted, random_batch, random_nets, random_valid_graph


def test_mulconst_constants_are_fixed():
    assert sorted(MUL_CONSTANTS) == sorted([-1.0, 0.1, 0.01, 0.5, 2.0])


def test_node_kind_partition_has_signatures():
    from lossevo.graph import SIGNATURES
    assert len(INPUT_KINDS) == 10
    for k in OPERATION_KINDS:
        assert k in SIGNATURES and len(SIGNATURES[k]) >= 1


def test_warm_start_has_33_nodes_and_validates():
    g = warm_start_sac()
    assert len(g) == 33
    report = validate(g, (3, 1), 16)
    assert report.valid
    assert report.info[g.output(K.PolicyLoss).id].shape == ()
    assert report.info[g.output(K.CriticLoss).id].shape == ()


@pytest.mark.parametrize("dims", [(1, 1), (3, 1), (5, 2), (11, 3)])
def test_warm_start_validates_for_any_dims(dims):
    assert validate(warm_start_sac(), dims, 8).valid


def _policy_loss_unreduced() -> LossGraph:
    b = GraphBuilder()
    d = b.dist(b[K.States])
    a = b.op(K.DistSample, d)
    b.output(K.PolicyLoss, a)
    b.output(K.CriticLoss, b.op(K.MeanAll, b[K.Rewards]))
    return b.build()


def test_non_scalar_output_is_invalid():
    report = validate(_policy_loss_unreduced(), (3, 1), 16)
    assert not report.valid
    assert "scalar" in report.first_error


def test_add2_with_one_operand_is_invalid():
    b = GraphBuilder()
    bad = b.op(K.Add2, b[K.Rewards])
    b.output(K.PolicyLoss, b.op(K.MeanAll, bad))
    b.output(K.CriticLoss, b.op(K.MeanAll, b[K.Rewards]))
    report = validate(b.build(), (3, 1), 16)
    assert not report.valid
    assert "takes 2 inputs" in report.first_error


def test_dist_sample_on_tensor_is_category_error():
    b = GraphBuilder()
    bad = b.op(K.DistSample, b[K.States])
    b.output(K.PolicyLoss, b.op(K.MeanAll, bad))
    b.output(K.CriticLoss, b.op(K.MeanAll, b[K.Rewards]))
    assert not validate(b.build(), (3, 1), 16).valid


def test_chain_topological_order():
    g = LossGraph((Node(0, K.Rewards), Node(1, K.MeanAll, (0,)), Node(2, K.PolicyLoss, (1,))))
    assert topological_order(g) == [0, 1, 2]


def test_warm_start_outputs_are_last_in_order():
    g = warm_start_sac()
    order = topological_order(g)
    outs = {g.output(K.PolicyLoss).id, g.output(K.CriticLoss).id}
    assert set(order[-2:]) == outs


def test_order_is_stable_and_cycle_names_node():
    g = LossGraph((Node(0, K.Rewards), Node(1, K.MeanAll, (0,)), Node(2, K.States),
                   Node(3, K.MeanAll, (2,))))
    assert topological_order(g) == topological_order(g) == [0, 1, 2, 3]
    cyc = LossGraph((Node(0, K.Abs, (1,)), Node(1, K.Abs, (0,)), Node(2, K.PolicyLoss, (1,))))
    with pytest.raises(GraphCycleError) as info:
        topological_order(cyc)
    assert info.value.node in (0, 1)
    assert not validate(cyc, (3, 1), 16).valid


@given(st.lists(st.tuples(st.integers(0, 60), st.sampled_from(list(K)),
                          st.lists(st.integers(-2, 70), max_size=4)), max_size=40))
def test_validate_is_total_on_arbitrary_soups(raw):
    nodes = tuple(Node(i, k, tuple(ins)) for i, k, ins in raw)
    report = validate(LossGraph(nodes), (3, 1), 16)
    again = validate(LossGraph(nodes), (3, 1), 16)
    assert isinstance(report.valid, bool)
    assert report.errors == again.errors and report.info == again.info


def test_presets_validate_and_show_signature_structures():
    presets = preset_graphs()
    assert set(EVOLVED_PRESETS) <= set(presets)
    assert len(presets) == 9
    for name, g in presets.items():
        assert validate(g, (3, 1), 16).valid, name
    gen = render_losses(presets["cartpole_best_generalizer"])["critic_loss"]
    assert gen.startswith("mean(atan(") and ")^2" in gen
    perf = render_losses(presets["cartpole_best_performer"])["critic_loss"]
    assert "log π" not in perf and "min(Qtarg1, Qtarg2)" in perf


def test_search_space_bound_examples():
    assert round(search_space_upper_bound(33, 60)) == 286
    assert round(search_space_upper_bound(33, 80)) == 401
    assert search_space_upper_bound(1, 2) == 0.0


@given(st.integers(1, 60), st.integers(3, 100))
def test_search_space_bound_monotone(n, k):
    base = search_space_upper_bound(n, k)
    assert search_space_upper_bound(n + 1, k) > base
    assert search_space_upper_bound(n, k + 1) > base


def test_round_trip_warm_start():
    g = warm_start_sac()
    back = parse(serialize(g))
    assert back == g
    assert serialize(back) == serialize(g)


@given(st.integers(0, 10 ** 6))
def test_round_trip_random_valid_graphs(seed):
    g = random_valid_graph(seed)
    assert parse(serialize(g)) == g


def test_unknown_kind_is_parse_error_naming_it():
    doc = to_document(warm_start_sac())
    doc["nodes"][0]["kind"] = "Foo"
    with pytest.raises(ParseError) as info:
        from_document(doc)
    assert "Foo" in str(info.value)


def test_dangling_edge_is_validation_error():
    doc = to_document(warm_start_sac())
    doc["edges"][0]["producers"][0] = 999
    with pytest.raises(GraphValidationError):
        from_document(doc)


def test_malformed_text_reports_location():
    with pytest.raises(ParseError) as info:
        parse(serialize(warm_start_sac())[:150])
    assert "line" in str(info.value)


def test_prune_removes_disconnected_node():
    g = warm_start_sac()
    extra = Node(33, K.Add2, (8, 8))
    dirty = g.replace_nodes((*g.nodes, extra))
    assert len(prune_dead_nodes(dirty)) == 33
    assert prune_dead_nodes(g) == g


def test_padding_then_pruning_recovers_warm_start():
    g = warm_start_sac()
    big = pad_to_max(g, 60, np.random.default_rng(0))
    assert len(big) == 60
    assert len(live_nodes(big)) == 33
    assert prune_dead_nodes(big) == g


@given(st.integers(0, 10 ** 6))
def test_pruning_preserves_loss_values(seed):
    rng = np.random.default_rng(seed)
    g = padded(random_valid_graph(seed), rng, 5)
    batch, nets = random_batch(rng), random_nets(rng)
    try:
        expected = evaluate(g, batch, nets, seed)
    except ArithmeticError:
        return
    assert evaluate(prune_dead_nodes(g), batch, nets, seed) == expected
    assert evaluate(permuted(g, rng), batch, nets, seed) == expected
