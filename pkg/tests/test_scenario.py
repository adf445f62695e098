import json
from dataclasses import replace

import pytest
from hypothesis import given, settings

from helpers import build, chain, const, edge, expo, node, random_scenario_doc, scenario_seeds
from scenariobench.scenario import (
    CycleError, ScenarioSemanticError, ScenarioSyntaxError, ServiceDistribution, expected_critical_path,
    load_scenario, parse_scenario, scenario_from_json, serialize_scenario, shipped_path, shipped_scenario,
    topological_order, validate_graph, visit_ratios,
)


def raw(nodes, edges, qtypes=("text",)):
    """Graph built without validation so invalid shapes can be inspected."""
    from scenariobench.scenario import ComponentNode, Edge, ScenarioGraph
    ns = tuple(ComponentNode(n, n, k, ServiceDistribution.constant(1.0) if k in ("ai", "non_ai")
                             else ServiceDistribution.zero()) for n, k in nodes)
    es = tuple(Edge(a, b, r) for a, b, r in edges)
    return ScenarioGraph(ns, es, nodes[0][0], tuple(qtypes))


def test_minimal_two_node_graph():
    g = build([node("entry", "entry"), node("sink", "sink")], [edge("entry", "sink", text=1.0)])
    assert len(g.nodes) == 2 and len(g.edges) == 1
    assert validate_graph(g) == []


def test_shipped_ecommerce_has_walkthrough_components():
    g = shipped_scenario("ecommerce")
    ids = set(g.by_id)
    for nid in ("search-planner", "personalized-recommendation", "product-recommendation", "ad-recommendation",
                "high-popularity-cluster", "medium-popularity-cluster", "low-popularity-cluster", "ad-cluster",
                "ranker", "ad-ranking", "indexer", "olap-analyzer", "monitoring", "logging",
                "entity-identification", "category-classifier", "deduplication", "audio-preprocessor"):
        assert nid in ids, nid
    assert validate_graph(g) == []
    assert set(g.query_types) == {"text", "image", "audio"}


def test_dangling_edge_names_the_unknown_id():
    doc = {"query_types": ["text"], "entry": "entry",
           "nodes": [node("entry", "entry"), node("sink", "sink")],
           "edges": [edge("entry", "sink"), edge("entry", "ghost")]}
    with pytest.raises(ScenarioSemanticError, match="ghost") as exc:
        scenario_from_json(doc)
    assert "ghost" in exc.value.element


def test_syntax_error_reports_position():
    with pytest.raises(ScenarioSyntaxError) as exc:
        parse_scenario('{"query_types": ["text"],\n  "entry": }')
    assert exc.value.line == 2 and exc.value.column > 1


def test_cycle_violation_lists_members():
    g = raw([("entry", "entry"), ("a", "non_ai"), ("b", "non_ai"), ("sink", "sink")],
            [("entry", "a", {"text": 1.0}), ("a", "b", {"text": 1.0}), ("b", "a", {"text": 0.5}),
             ("b", "sink", {"text": 0.5})])
    cyc = [v for v in validate_graph(g) if v.rule == "cycle"]
    assert cyc and "a" in cyc[0].message and "b" in cyc[0].message
    with pytest.raises(CycleError) as exc:
        topological_order(g)
    assert set(exc.value.nodes) >= {"a", "b"}


def test_routing_mass_violation():
    g = raw([("entry", "entry"), ("a", "non_ai"), ("b", "non_ai"), ("sink", "sink")],
            [("entry", "a", {"text": 0.6}), ("entry", "b", {"text": 0.6}), ("a", "sink", {"text": 1.0}),
             ("b", "sink", {"text": 1.0})])
    assert [v.element for v in validate_graph(g) if v.rule == "routing-mass"] == ["entry"]


@pytest.mark.parametrize("mutate, rule", [
    (lambda d: d["nodes"].append(node("n0")), "duplicate-id"),
    (lambda d: d["nodes"][1].update(servers=0), "servers"),
    (lambda d: d["edges"][0]["routing"].update(video=1.0), "unknown-query-type"),
    (lambda d: d["edges"].append(edge("sink", "n0")), "sink-out-edges"),
    (lambda d: d["nodes"][1].update(service_time=expo(-1.0)), "service-time"),
])
def test_semantic_errors(mutate, rule):
    doc = json.loads(serialize_scenario(chain(const(1.0))))
    mutate(doc)
    with pytest.raises(ScenarioSemanticError, match=rule):
        scenario_from_json(doc)


def test_unknown_key_rejected():
    doc = json.loads(serialize_scenario(chain(const(1.0))))
    doc["nodes"][1]["colour"] = "red"
    with pytest.raises(ScenarioSemanticError, match="colour"):
        scenario_from_json(doc)


def test_topological_order_chain_and_diamond():
    assert topological_order(chain(const(1), const(1))) == ["entry", "n0", "n1", "sink"]
    g = build([node("a", "entry"), node("c"), node("b"), node("d", "sink")],
              [edge("a", "c", text=0.5), edge("a", "b", text=0.5), edge("c", "d"), edge("b", "d")], entry="a")
    assert topological_order(g) == ["a", "b", "c", "d"]


def test_critical_path_chain():
    cp = expected_critical_path(chain(const(10.0), const(20.0)), {"text": 1.0})
    assert cp.nodes == ("entry", "n0", "n1", "sink")
    assert cp.total_ms == pytest.approx(30.0)


def test_critical_path_diamond_picks_heavier_branch():
    g = build([node("entry", "entry"), node("fast", service=const(5.0)), node("slow", service=const(50.0)),
               node("sink", "sink")],
              [edge("entry", "fast", text=0.5), edge("entry", "slow", text=0.5), edge("fast", "sink"),
               edge("slow", "sink")])
    assert expected_critical_path(g, {"text": 1.0}).nodes == ("entry", "slow", "sink")


def test_critical_path_translation_runs_through_audio_converter():
    g = shipped_scenario("translation")
    audio = [n for n in g.nodes if n.module == "Audio Converter"]
    assert audio
    slow = replace(audio[-1], service_time=ServiceDistribution.constant(3897.4))
    g = g.replace(nodes=tuple(slow if n.id == slow.id else n for n in g.nodes))
    cp = expected_critical_path(g, {"text": 0.9, "image": 0.05, "audio": 0.05})
    assert {n.id for n in audio} <= set(cp.nodes)


def test_visit_ratios_fanout_join_counts_once():
    g = build([node("entry", "entry", fanout="all"), node("a"), node("b"), node("j"), node("sink", "sink")],
              [edge("entry", "a"), edge("entry", "b"), edge("a", "j"), edge("b", "j"), edge("j", "sink")])
    v = visit_ratios(g, "text")
    assert v["a"] == v["b"] == v["j"] == v["sink"] == pytest.approx(1.0)


@pytest.mark.parametrize("name", ["ecommerce", "translation"])
def test_shipped_specs_round_trip_bytes(name):
    text = shipped_path(f"{name}.scenario").read_text(encoding="utf-8")
    assert serialize_scenario(parse_scenario(text)) == text


def test_empirical_samples_file_relative_to_spec(tmp_path):
    (tmp_path / "svc.txt").write_text("1.0\n2.0\n# comment\n3.0\n")
    doc = json.loads(serialize_scenario(chain(const(1.0))))
    doc["nodes"][1]["service_time"] = {"dist": "empirical", "file": "svc.txt"}
    spec = tmp_path / "s.scenario"
    spec.write_text(json.dumps(doc))
    g = load_scenario(spec)
    assert g.by_id["n0"].service_time.samples == (1.0, 2.0, 3.0)
    assert g.by_id["n0"].service_time.mean == pytest.approx(2.0)


def test_service_distribution_means():
    assert ServiceDistribution.constant(4).mean == 4
    assert ServiceDistribution.exponential(11.1).mean == pytest.approx(11.1)
    assert ServiceDistribution.lognormal(1.0, 0.5).mean == pytest.approx(2.718281828 * 1.1331485)


@settings(max_examples=150, deadline=None)
@given(scenario_seeds)
def test_fuzz_round_trip_and_validity(seed):
    g = scenario_from_json(random_scenario_doc(seed))
    assert validate_graph(g) == []
    text = serialize_scenario(g)
    g2 = parse_scenario(text)
    assert g2 == g
    assert serialize_scenario(g2) == text
    order = topological_order(g)
    pos = {nid: i for i, nid in enumerate(order)}
    assert all(pos[e.src] < pos[e.dst] for e in g.edges)
    assert len(g.nodes) <= 30
