"""Compact builders for scenario graphs used across the test modules."""

from __future__ import annotations

import random
from collections import defaultdict

import numpy as np
from hypothesis import strategies as st

from scenariobench.analysis import nearest_rank

from scenariobench.scenario import scenario_from_json


def const(ms):
    return {"dist": "constant", "value_ms": ms}


def expo(ms):
    return {"dist": "exponential", "mean_ms": ms}


def node(nid, kind="non_ai", service=None, **extra):
    doc = {"id": nid, "name": nid, "kind": kind}
    if kind in ("ai", "non_ai"):
        doc["service_time"] = service if service is not None else const(1.0)
    doc.update(extra)
    return doc


def edge(src, dst, **routing):
    return {"from": src, "to": dst, "routing": routing or {"text": 1.0}}


def build(nodes, edges, query_types=("text",), entry="entry"):
    return scenario_from_json({"query_types": list(query_types), "entry": entry, "nodes": nodes, "edges": edges})


def chain(*services, kind="non_ai", servers=1, query_types=("text", "image")):
    """entry -> n0 -> n1 ... -> sink with the given service documents."""
    ids = [f"n{i}" for i in range(len(services))]
    nodes = [node("entry", "entry")] + [node(i, kind, s, servers=servers) for i, s in zip(ids, services)]
    nodes.append(node("sink", "sink"))
    path = ["entry", *ids, "sink"]
    routing = {q: 1.0 for q in query_types}
    return build(nodes, [edge(a, b, **routing) for a, b in zip(path, path[1:])], query_types)


def single_node(service, servers=1):
    return chain(service, servers=servers)


QTYPES = ("text", "image")


def random_scenario_doc(seed: int, max_nodes: int = 30, annotate: bool = True) -> dict:
    """A random valid scenario document with 3..max_nodes nodes (entry and sink included)."""
    rnd = random.Random(seed)
    n_interior = rnd.randint(1, max_nodes - 2)
    ids = [f"c{i:02d}" for i in range(n_interior)]
    order = ["entry", *ids]
    succ: dict[str, set[str]] = {u: set() for u in order}
    # every interior node gets a parent earlier in the order, so all are reachable
    for i, nid in enumerate(ids):
        succ[order[rnd.randrange(0, i + 1)]].add(nid)
    for i, u in enumerate(order):
        later = order[i + 1:] + ["sink"]
        for _ in range(rnd.randint(0, 2)):
            succ[u].add(rnd.choice(later))
        if not succ[u]:
            succ[u].add(rnd.choice(later))
    nodes = [node("entry", "entry")]
    for nid in ids:
        kind = rnd.choice(("ai", "non_ai"))
        service = rnd.choice((const(rnd.uniform(0.1, 3.0)), expo(rnd.uniform(0.1, 3.0)),
                              {"dist": "lognormal", "mu": rnd.uniform(0.01, 1.0), "sigma": rnd.uniform(0.1, 0.8)},
                              {"dist": "empirical", "samples": [rnd.uniform(0.1, 3.0) for _ in range(5)]}))
        doc = node(nid, kind, service, servers=rnd.randint(1, 3))
        if rnd.random() < 0.3:
            doc["module"] = f"M{rnd.randint(0, 3)}"
        nodes.append(doc)
    nodes.append(node("sink", "sink"))
    edges = []
    for u in order:
        outs = sorted(succ[u])
        weights = {q: [rnd.uniform(0.1, 1.0) for _ in outs] for q in QTYPES}
        for j, v in enumerate(outs):
            edges.append(edge(u, v, **{q: w[j] / sum(w) for q, w in weights.items()}))
    if annotate:
        _annotate(rnd, nodes, edges)
    return {"query_types": list(QTYPES), "entry": "entry", "nodes": nodes, "edges": edges}


def _annotate(rnd, nodes, edges):
    interior = [n for n in nodes if n["kind"] in ("ai", "non_ai")]
    outs, ins = {}, {}
    for e in edges:
        outs.setdefault(e["from"], []).append(e["to"])
        ins.setdefault(e["to"], []).append(e["from"])
    used = set()
    for n in interior:
        ann = {}
        if rnd.random() < 0.15:
            ann["similarity_group"] = f"g{rnd.randint(0, 2)}"
        if rnd.random() < 0.1:
            ann["auxiliary"] = True
        if rnd.random() < 0.3:
            ann["traffic_fraction"] = rnd.choice((0.005, 0.01, 0.05, 0.2))
        if n["kind"] == "ai" and rnd.random() < 0.5:
            ann["model_variants"] = [f"m{i}" for i in range(rnd.randint(1, 3))]
        nid = n["id"]
        nxt = outs.get(nid, [])
        if (rnd.random() < 0.2 and len(nxt) == 1 and nid not in used and nxt[0] not in used
                and nxt[0] != "sink" and len(ins.get(nxt[0], [])) == 1):
            ann["merge_group"] = f"mg_{nid}"
            partner = next(m for m in interior if m["id"] == nxt[0])
            partner.setdefault("annotations", {})["merge_group"] = f"mg_{nid}"
            used.update((nid, nxt[0]))
        if ann:
            n.setdefault("annotations", {}).update(ann)
    # sibling branch-head fractions may not exceed 1 in total
    by_id = {n["id"]: n for n in interior}
    for src, dsts in outs.items():
        heads = [by_id[d] for d in dsts if d in by_id]
        if sum(h.get("annotations", {}).get("traffic_fraction", 0.0) for h in heads) > 1:
            for h in heads:
                h.get("annotations", {}).pop("traffic_fraction", None)
    # at most one essential member per similarity group
    seen = set()
    for n in interior:
        grp = n.get("annotations", {}).get("similarity_group")
        if grp is not None and grp not in seen and rnd.random() < 0.5:
            n["annotations"]["essential"] = True
            seen.add(grp)


scenario_seeds = st.integers(min_value=0, max_value=2 ** 32 - 1)


def check_invariants(g, traces, profile):
    measured = [t for t in traces if t.measured]
    assert len(measured) == profile.total_requests
    assert [t.request_id for t in traces] == list(range(len(traces)))
    per_node = defaultdict(list)
    for t in traces:
        assert t.completion_ms >= t.arrival_ms
        for s in t.stages:
            assert t.arrival_ms <= s.enqueue_ms <= s.start_ms <= s.end_ms <= t.completion_ms
            assert g.by_id[s.node_id].interior
            per_node[s.node_id].append(s)
        # each node runs at most once per request on a DAG walk
        ids = [s.node_id for s in t.stages]
        assert len(ids) == len(set(ids))
    # FIFO: service starts in enqueue order at every node
    for nid, recs in per_node.items():
        recs.sort(key=lambda s: (s.start_ms, s.enqueue_ms))
        assert all(a.enqueue_ms <= b.enqueue_ms for a, b in zip(recs, recs[1:])), nid
        # never more than `servers` in service at once
        servers = g.by_id[nid].servers
        events = sorted([(s.start_ms, 1) for s in recs] + [(s.end_ms, -1) for s in recs], key=lambda e: (e[0], e[1]))
        busy = 0
        for _, d in events:
            busy += d
            assert busy <= servers
    # pointwise dominance of the end-to-end latency over each component's sojourn
    for nid in per_node:
        pairs = [(t.latency_ms, s.sojourn_ms) for t in measured for s in t.stages if s.node_id == nid]
        if pairs:
            tot, comp = map(np.sort, zip(*pairs))
            assert nearest_rank(tot, 99) >= nearest_rank(comp, 99)
            overall = np.sort([t.latency_ms for t in measured])
            assert overall[-1] >= comp[-1]
