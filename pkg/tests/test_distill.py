from dataclasses import replace

import pytest
from hypothesis import given, settings

from helpers import build, const, edge, expo, node, random_scenario_doc, scenario_seeds
from scenariobench.distill import (
    DistillConfig, DistillError, apply_r1, apply_r2, apply_r3, apply_r4, apply_r5, apply_r6, distill,
)
from scenariobench.scenario import scenario_from_json, shipped_scenario, validate_graph


def ann(**kw):
    return {"annotations": kw}


def fanout3(heads):
    """entry -> hub -> {heads} -> join -> sink, heads given as (id, prob, annotations)."""
    nodes = [node("entry", "entry"), node("hub")]
    edges = [edge("entry", "hub")]
    for hid, p, a in heads:
        nodes.append(node(hid, "ai", **ann(**a)))
        edges += [edge("hub", hid, text=p), edge(hid, "join")]
    nodes += [node("join"), node("sink", "sink")]
    edges.append(edge("join", "sink"))
    return build(nodes, edges)


# -- R1 --------------------------------------------------------------------------

def test_r1_keeps_essential_branch():
    g = fanout3([("personalized", 0.7, {"similarity_group": "rec", "essential": True}),
                 ("product", 0.2, {"similarity_group": "rec"}), ("ad", 0.1, {"similarity_group": "rec"})])
    g2, acts = apply_r1(g)
    assert "personalized" in g2.by_id and not {"product", "ad"} & set(g2.by_id)
    assert acts[0].node_ids == ("ad", "product")
    # traffic of the removed siblings moves to the survivor
    assert g2.out_edges("hub")[0].prob("text") == pytest.approx(1.0)
    assert validate_graph(g2) == []


def test_r1_without_essential_keeps_smallest_id():
    g = fanout3([("b", 0.5, {"similarity_group": "x"}), ("a", 0.5, {"similarity_group": "x"})])
    g2, _ = apply_r1(g)
    assert "a" in g2.by_id and "b" not in g2.by_id


def test_r1_identity_without_groups():
    g = fanout3([("a", 0.5, {}), ("b", 0.5, {})])
    g2, acts = apply_r1(g)
    assert g2 == g and acts == []


def test_r1_two_essentials_is_ambiguous():
    g = fanout3([("a", 0.5, {"similarity_group": "x", "essential": True}), ("b", 0.5, {"similarity_group": "x"})])
    b = g.by_id["b"]
    b = replace(b, annotations=replace(b.annotations, essential=True))
    g = g.replace(nodes=tuple(b if n.id == "b" else n for n in g.nodes))
    with pytest.raises(DistillError, match="several essential"):
        apply_r1(g)


# -- R2 --------------------------------------------------------------------------

def test_r2_prunes_minuscule_branch():
    g = fanout3([("text-pre", 0.985, {"traffic_fraction": 0.985}), ("image-pre", 0.01, {"traffic_fraction": 0.01}),
                 ("audio-pre", 0.005, {"traffic_fraction": 0.005})])
    g2, acts = apply_r2(g, 0.01)
    assert "audio-pre" not in g2.by_id
    # exactly at the threshold is kept (strict comparison)
    assert "image-pre" in g2.by_id
    assert [a.node_ids for a in acts] == [("audio-pre",)]
    assert validate_graph(g2) == []


def test_r2_translation_branches_all_kept():
    g = shipped_scenario("translation")
    g2, acts = apply_r2(g, 0.01)
    assert acts == [] and g2 == g


# -- R3 --------------------------------------------------------------------------

def test_r3_removes_auxiliary():
    g = fanout3([("main", 0.8, {}), ("olap", 0.1, {"auxiliary": True}), ("monitor", 0.1, {"auxiliary": True})])
    g2, acts = apply_r3(g)
    assert not {"olap", "monitor"} & set(g2.by_id)
    assert sorted(a.node_ids[0] for a in acts) == ["monitor", "olap"]


def test_r3_identity_and_entry_error():
    g = fanout3([("a", 0.5, {}), ("b", 0.5, {})])
    assert apply_r3(g) == (g, [])
    e = g.by_id["entry"]
    bad = g.replace(nodes=tuple(replace(e, annotations=replace(e.annotations, auxiliary=True)) if n.id == "entry"
                                else n for n in g.nodes))
    with pytest.raises(DistillError, match="entry"):
        apply_r3(bad)


# -- R4 --------------------------------------------------------------------------

@pytest.mark.parametrize("variants, default, expect", [
    (["L2R-v1", "L2R-v2"], "L2R-v1", ("L2R-v1",)),
    (["L2R-v2", "L2R-v1"], "L2R-v1", ("L2R-v1",)),
    (["only"], None, ("only",)),
    ([], None, ()),
])
def test_r4_model_reduction(variants, default, expect):
    a = {"model_variants": variants} if variants else {}
    if default:
        a["default_model"] = default
    g = fanout3([("ranker", 1.0, a)])
    g2, acts = apply_r4(g)
    assert g2.by_id["ranker"].annotations.model_variants == expect
    assert len(acts) == (1 if len(variants) > 1 else 0)
    assert set(g2.by_id) == set(g.by_id)


# -- R5 --------------------------------------------------------------------------

def merge_chain(services):
    ids = [f"m{i}" for i in range(len(services))]
    nodes = [node("entry", "entry")] + [node(i, "ai", s, **ann(merge_group="cls")) for i, s in zip(ids, services)]
    nodes.append(node("sink", "sink"))
    path = ["entry", *ids, "sink"]
    return build(nodes, [edge(a, b) for a, b in zip(path, path[1:])])


def test_r5_merges_chain_constant():
    g2, acts = apply_r5(merge_chain([const(2.0), const(3.0)]))
    merged = g2.by_id["cls__merged"]
    assert merged.service_time.dist == "constant" and merged.service_time.mean == pytest.approx(5.0)
    assert acts[0].node_ids == ("m0", "m1") and acts[0].result_id == "cls__merged"
    assert [e.dst for e in g2.out_edges("entry")] == ["cls__merged"]


def test_r5_mixed_distributions_become_exponential():
    g2, _ = apply_r5(merge_chain([const(2.0), expo(3.0)]))
    st = g2.by_id["cls__merged"].service_time
    assert st.dist == "exponential" and st.mean == pytest.approx(5.0)


def test_r5_rejects_non_chain():
    nodes = [node("entry", "entry"), node("a", **ann(merge_group="g")), node("b", **ann(merge_group="g")),
             node("sink", "sink")]
    g = build(nodes, [edge("entry", "a", text=0.5), edge("entry", "b", text=0.5), edge("a", "sink"),
                      edge("b", "sink")])
    with pytest.raises(DistillError, match="'g'"):
        apply_r5(g)


def test_r5_identity_without_groups():
    g = fanout3([("a", 1.0, {})])
    assert apply_r5(g) == (g, [])


# -- R6 --------------------------------------------------------------------------

def test_r6_identity_on_connected_graph():
    g = fanout3([("a", 0.5, {}), ("b", 0.5, {})])
    assert apply_r6(g) == (g, [])


def test_r6_removes_isolated_node():
    g = fanout3([("a", 1.0, {})])
    g2 = g.replace(nodes=g.nodes + (replace(g.by_id["a"], id="lonely"),))
    g3, acts = apply_r6(g2)
    assert "lonely" not in g3.by_id and [a.node_ids for a in acts] == [("lonely",)]
    assert g3 == g


# -- full pipeline --------------------------------------------------------------

WALKTHROUGH = {"product-recommendation": "R1", "ad-recommendation": "R1", "audio-preprocessor": "R2",
               "olap-analyzer": "R3", "monitoring": "R3", "logging": "R3", "entity-identification": "R5",
               "category-classifier": "R5", "ad-cluster": "R6", "ad-ranking": "R6", "deduplication": "R6"}


def test_ecommerce_golden():
    g = shipped_scenario("ecommerce")
    out, report = distill(g)
    assert report.removed == WALKTHROUGH
    assert "query-classifier__merged" in out.by_id
    assert out.by_id["ranker"].annotations.model_variants == ("L2R-v1",)
    assert report.reduction_ratio >= 0.30
    assert (report.nodes_before, report.nodes_after) == (len(g.nodes), len(out.nodes))
    assert report.edges_after == len(out.edges)
    assert ("R2", "audio") in report.dropped_query_types
    again, second = distill(out)
    assert again == out and second.is_empty


def test_translation_keeps_all_query_types():
    out, report = distill(shipped_scenario("translation"))
    assert set(out.query_types) == {"text", "image", "audio"}
    assert report.dropped_query_types == []
    assert "text-translator__merged" in out.by_id


def test_disabled_rules_are_skipped():
    g = shipped_scenario("ecommerce")
    out, report = distill(g, DistillConfig.none())
    assert out == g and report.actions == []
    out, report = distill(g, DistillConfig(rules={"R3": False}))
    assert "olap-analyzer" in out.by_id and "R3" not in set(report.removed.values())


# -- independent reference over a 40-node synthetic graph ---------------------

def synthetic40():
    N, E = [], []

    def add(nid, kind="non_ai", service=None, **a):
        N.append(node(nid, kind, service, **(ann(**a) if a else {})))

    add("e", "entry")
    add("z", "sink")
    for nid in ("a1", "a2", "a3", "j1", "b1", "j2", "j3", "j4", "k1", "q1", "q2"):
        add(nid)
    add("ga_ess", "ai", similarity_group="A", essential=True)
    add("ga_x", "ai", similarity_group="A")
    add("ga_y", "ai", similarity_group="A")
    for nid in ("ga_ess_t", "ga_x_t1", "ga_x_t2", "ga_y_t", "shared_t", "b_img_t", "b_vid_t", "aux3_t"):
        add(nid)
    add("b_text", traffic_fraction=0.97)
    add("b_img", traffic_fraction=0.01)
    add("b_aud", traffic_fraction=0.01)
    add("b_vid", traffic_fraction=0.005)
    add("gb_b", "ai", similarity_group="B")
    add("gb_a", "ai", similarity_group="B")
    add("m1", "ai", const(2.0), merge_group="mg")
    add("m2", "ai", const(3.0), merge_group="mg")
    add("m3", "non_ai", const(4.0), merge_group="mg")
    add("h1", "non_ai", expo(1.0), merge_group="mh")
    add("h2", "ai", const(2.0), merge_group="mh", model_variants=["x1", "x2"])
    add("r1", "ai", model_variants=["v2", "v1"], default_model="v1")
    add("r2", "ai", model_variants=["w"])
    add("aux1", auxiliary=True)
    add("aux2", auxiliary=True)
    add("aux3", auxiliary=True)

    def link(src, *dsts):
        for dst, p in dsts:
            E.append(edge(src, dst, text=p))

    link("e", ("a1", 1))
    link("a1", ("a2", 0.95), ("aux3", 0.05))
    link("aux3", ("aux3_t", 1))
    link("aux3_t", ("z", 1))
    link("a2", ("a3", 1))
    link("a3", ("ga_ess", 0.5), ("ga_x", 0.3), ("ga_y", 0.2))
    link("ga_ess", ("ga_ess_t", 1))
    link("ga_ess_t", ("j1", 1))
    link("ga_x", ("ga_x_t1", 1))
    link("ga_x_t1", ("ga_x_t2", 1))
    link("ga_x_t2", ("j1", 0.5), ("shared_t", 0.5))
    link("ga_y", ("ga_y_t", 1))
    link("ga_y_t", ("shared_t", 1))
    link("shared_t", ("j1", 1))
    link("j1", ("b1", 1))
    link("b1", ("b_text", 0.97), ("b_img", 0.01), ("b_aud", 0.01), ("b_vid", 0.01))
    link("b_text", ("j2", 1))
    link("b_img", ("b_img_t", 1))
    link("b_img_t", ("j2", 1))
    link("b_aud", ("j2", 1))
    link("b_vid", ("b_vid_t", 1))
    link("b_vid_t", ("j2", 1))
    link("j2", ("gb_a", 0.5), ("gb_b", 0.5))
    link("gb_a", ("j3", 1))
    link("gb_b", ("j3", 1))
    link("j3", ("m1", 1))
    link("m1", ("m2", 1))
    link("m2", ("m3", 1))
    link("m3", ("j4", 1))
    link("j4", ("aux1", 0.1), ("r1", 0.9))
    link("aux1", ("z", 1))
    link("r1", ("r2", 1))
    link("r2", ("aux2", 0.2), ("k1", 0.8))
    link("aux2", ("z", 1))
    link("k1", ("h1", 0.7), ("q1", 0.3))
    link("h1", ("h2", 1))
    link("h2", ("z", 1))
    link("q1", ("q2", 1))
    link("q2", ("z", 1))
    return build(N, E, entry="e"), N, E


def reference_distill(N, E):
    """The six rules as plain set operations over the raw node and edge lists."""
    ann_of = {n["id"]: n.get("annotations", {}) for n in N}
    nodes = {n["id"] for n in N}
    edges = {(e["from"], e["to"]) for e in E}

    groups = {}
    for nid, a in ann_of.items():
        if "similarity_group" in a:
            groups.setdefault(a["similarity_group"], set()).add(nid)
    r1 = set()
    for members in groups.values():
        keep = [m for m in members if ann_of[m].get("essential")] or [min(members)]
        r1 |= members - set(keep)

    outdeg = {u: sum(1 for s, _ in edges if s == u) for u in nodes}
    r2 = {d for s, d in edges if outdeg[s] >= 2 and ann_of[d].get("traffic_fraction", 1.0) < 0.01}
    r3 = {nid for nid, a in ann_of.items() if a.get("auxiliary")}
    alive = nodes - r1 - r2 - r3

    while True:
        live_edges = {(s, d) for s, d in edges if s in alive and d in alive}
        reach, frontier = {"e"}, ["e"]
        while frontier:
            u = frontier.pop()
            for s, d in live_edges:
                if s == u and d not in reach:
                    reach.add(d)
                    frontier.append(d)
        coreach = {"z"}
        changed = True
        while changed:
            changed = False
            for s, d in live_edges:
                if d in coreach and s not in coreach:
                    coreach.add(s)
                    changed = True
        doomed = alive - (reach & coreach) - {"e"}
        if not doomed:
            break
        alive -= doomed
    r6 = (nodes - r1 - r2 - r3) - alive

    final = set(alive)
    merged = {}
    for grp in ("mg", "mh"):
        members = {nid for nid in alive if ann_of[nid].get("merge_group") == grp}
        final = (final - members) | {f"{grp}__merged"}
        merged.update({m: f"{grp}__merged" for m in members})
    final_edges = {(merged.get(s, s), merged.get(d, d)) for s, d in edges if s in alive and d in alive}
    final_edges = {(s, d) for s, d in final_edges if s != d}
    return {"R1": r1, "R2": r2, "R3": r3, "R6": r6}, final, final_edges


def test_synthetic_40_node_reference():
    g, N, E = synthetic40()
    assert len(g.nodes) == 40 and validate_graph(g) == []
    removed, final_nodes, final_edges = reference_distill(N, E)
    out, report = distill(g)
    assert set(out.by_id) == final_nodes
    assert {(e.src, e.dst) for e in out.edges} == final_edges
    by_rule = {}
    for nid, rule in report.removed.items():
        by_rule.setdefault(rule, set()).add(nid)
    for rule, ids in removed.items():
        assert by_rule.get(rule, set()) == ids, rule
    assert by_rule["R5"] == {"m1", "m2", "m3", "h1", "h2"}
    assert out.by_id["r1"].annotations.model_variants == ("v1",)
    assert out.by_id["mg__merged"].service_time.dist == "constant"
    assert out.by_id["mg__merged"].service_time.mean == pytest.approx(9.0)
    assert out.by_id["mh__merged"].service_time.dist == "exponential"
    assert out.by_id["mh__merged"].kind == "ai"
    again, rep2 = distill(out)
    assert again == out and rep2.is_empty


# -- properties over random graphs ---------------------------------------------

@settings(max_examples=150, deadline=None)
@given(scenario_seeds)
def test_fuzz_distill_valid_and_idempotent(seed):
    g = scenario_from_json(random_scenario_doc(seed))
    try:
        out, report = distill(g)
    except DistillError as exc:
        # annotations may legitimately prune every route (e.g. the only path is auxiliary)
        assert "no route from entry" in str(exc)
        return
    assert validate_graph(out) == []
    assert report.nodes_after == len(out.nodes) and report.edges_after == len(out.edges)
    assert set(report.removed) <= set(g.by_id)
    merged_ids = {a.result_id for a in report.actions if a.result_id}
    assert set(out.by_id) - merged_ids <= set(g.by_id)
    again, second = distill(out)
    assert again == out and second.is_empty
