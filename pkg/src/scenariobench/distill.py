"""Six distilling rules that reduce a scenario DAG to its essential path.

R1 keeps one branch per group of similar branches, R2 prunes branches carrying
less than a traffic threshold, R3 drops auxiliary components, R4 keeps one
model per AI component, R5 merges successive similar steps and R6 removes
whatever the earlier rules left disconnected. Rules run in that order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Mapping

from .scenario import (
    ROUTING_TOL,
    ComponentNode,
    DistillAnnotations,
    Edge,
    ScenarioError,
    ScenarioGraph,
    ServiceDistribution,
    topological_order,
    validate_graph,
)

RULES = ("R1", "R2", "R3", "R4", "R5", "R6")


class DistillError(ScenarioError):
    """Raised when a rule's precondition does not hold."""


@dataclass(frozen=True)
class DistillConfig:
    fraction_threshold: float = 0.01
    rules: Mapping[str, bool] = field(default_factory=lambda: {r: True for r in RULES})

    def __post_init__(self):
        if not 0 < self.fraction_threshold < 1:
            raise ValueError(f"fraction_threshold must be in (0, 1), got {self.fraction_threshold}")
        unknown = set(self.rules) - set(RULES)
        if unknown:
            raise ValueError(f"unknown rule(s): {', '.join(sorted(unknown))}")

    def enabled(self, rule: str) -> bool:
        return self.rules.get(rule, True)

    @classmethod
    def none(cls) -> "DistillConfig":
        return cls(rules={r: False for r in RULES})


@dataclass(frozen=True)
class DistillAction:
    rule: str
    action: str  # "remove" | "merge" | "reduce-models"
    node_ids: tuple[str, ...]
    reason: str
    result_id: str | None = None

    def to_json(self) -> dict:
        out = {"rule": self.rule, "action": self.action, "node_ids": list(self.node_ids), "reason": self.reason}
        if self.result_id is not None:
            out["result_id"] = self.result_id
        return out


@dataclass
class DistillReport:
    actions: list[DistillAction]
    nodes_before: int
    edges_before: int
    nodes_after: int
    edges_after: int
    # (rule, query type) pairs for query types that no longer reach a sink
    dropped_query_types: list[tuple[str, str]] = field(default_factory=list)

    @property
    def reduction_ratio(self) -> float:
        """Fraction of nodes eliminated."""
        return 1.0 - self.nodes_after / self.nodes_before if self.nodes_before else 0.0

    @property
    def removed(self) -> dict[str, str]:
        """Removed (or merged-away) node id -> triggering rule."""
        return {nid: a.rule for a in self.actions if a.action in ("remove", "merge") for nid in a.node_ids}

    @property
    def is_empty(self) -> bool:
        return not self.actions and not self.dropped_query_types

    def to_json(self) -> dict:
        return {
            "actions": [a.to_json() for a in self.actions],
            "dropped_query_types": [{"rule": r, "query_type": q} for r, q in self.dropped_query_types],
            "complexity_before": {"nodes": self.nodes_before, "edges": self.edges_before},
            "complexity_after": {"nodes": self.nodes_after, "edges": self.edges_after},
            "reduction_ratio": self.reduction_ratio,
        }

    def to_table(self) -> str:
        rows = [("rule", "action", "nodes", "reason")]
        for a in self.actions:
            target = ", ".join(a.node_ids) + (f" -> {a.result_id}" if a.result_id else "")
            rows.append((a.rule, a.action, target, a.reason))
        for r, q in self.dropped_query_types:
            rows.append((r, "drop-query-type", q, "query type no longer reaches a sink"))
        widths = [max(len(r[i]) for r in rows) for i in range(3)]
        lines = ["  ".join(c.ljust(w) for c, w in zip(r[:3], widths)) + "  " + r[3] for r in rows]
        lines.append(
            f"nodes {self.nodes_before} -> {self.nodes_after}, edges {self.edges_before} -> {self.edges_after}, "
            f"reduction {self.reduction_ratio:.1%}"
        )
        return "\n".join(lines)

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True)


# -- routing maintenance ----------------------------------------------------------

def _renormalize(g: ScenarioGraph, touched: set[str]) -> ScenarioGraph:
    """Rescale per-type outgoing mass of probabilistic nodes in ``touched`` back to 1."""
    if not touched:
        return g
    edges = list(g.edges)
    for nid in touched:
        node = g.by_id.get(nid)
        if node is None or node.fanout:
            continue
        idx = [i for i, e in enumerate(edges) if e.src == nid]
        for q in g.query_types:
            mass = sum(edges[i].prob(q) for i in idx)
            if mass > 0 and abs(mass - 1.0) > 0:
                for i in idx:
                    e = edges[i]
                    if q in e.routing:
                        edges[i] = replace(e, routing={**e.routing, q: e.routing[q] / mass})
    return g.replace(edges=tuple(edges))


def _repair_routes(g: ScenarioGraph, rule: str, dropped: list[tuple[str, str]]) -> ScenarioGraph:
    """Cut routes that can no longer reach a sink; drop query types that became dead.

    A fanout node completes a query type only if every routed branch does.
    """
    order = topological_order(g)
    edges = list(g.edges)
    touched: set[str] = set()
    dead_types = []
    for q in g.query_types:
        completes: dict[str, bool] = {}
        for u in reversed(order):
            node = g.by_id[u]
            if node.kind == "sink":
                completes[u] = True
                continue
            idx = [i for i, e in enumerate(edges) if e.src == u and e.prob(q) > 0]
            good = [i for i in idx if completes[edges[i].dst]]
            if node.fanout and len(good) < len(idx):
                good = []
            for i in idx:
                if i not in good:
                    edges[i] = replace(edges[i], routing={k: v for k, v in edges[i].routing.items() if k != q})
                    touched.add(u)
            completes[u] = bool(good)
        if not completes[g.entry_id]:
            dead_types.append(q)
    g = g.replace(edges=tuple(edges))
    if dead_types:
        for q in dead_types:
            dropped.append((rule, q))
        keep = tuple(q for q in g.query_types if q not in dead_types)
        g = g.replace(
            query_types=keep,
            edges=tuple(replace(e, routing={k: v for k, v in e.routing.items() if k in keep}) for e in g.edges),
            nodes=tuple(
                replace(n, service_time_by_type={k: v for k, v in n.service_time_by_type.items() if k in keep})
                if set(n.service_time_by_type) - set(keep) else n
                for n in g.nodes
            ),
        )
    g = _renormalize(g, touched)
    # edges emptied here carried traffic before; an empty routing means unused
    return g.replace(edges=tuple(e for e in g.edges if e.routing or e.src not in touched))


def _remove_nodes(g: ScenarioGraph, ids: set[str], rule: str, dropped: list,
                  redirect: Mapping[str, str] | None = None) -> ScenarioGraph:
    """Delete nodes and incident edges, then keep routing well-formed.

    ``redirect`` maps a removed node to a surviving sibling that inherits its
    incoming traffic where the predecessor already routes to the sibling.
    """
    if not ids:
        return g
    redirect = redirect or {}
    edges = {(e.src, e.dst): e for e in g.edges}
    touched = set()
    for (src, dst), e in list(edges.items()):
        if dst in ids and src not in ids:
            touched.add(src)
            target = redirect.get(dst)
            if target is not None and (src, target) in edges:
                kept = edges[(src, target)]
                merged = dict(kept.routing)
                for q, p in e.routing.items():
                    merged[q] = merged.get(q, 0.0) + p
                edges[(src, target)] = replace(kept, routing=merged)
    g = g.replace(
        nodes=tuple(n for n in g.nodes if n.id not in ids),
        edges=tuple(e for (s, d), e in edges.items() if s not in ids and d not in ids),
    )
    g = _renormalize(g, touched)
    return _repair_routes(g, rule, dropped)


# -- rules ----------------------------------------------------------------------

def apply_r1(g: ScenarioGraph, dropped: list | None = None):
    """Keep one branch per similarity group: the essential one, else the smallest id."""
    dropped = [] if dropped is None else dropped
    groups: dict[str, list[ComponentNode]] = {}
    for n in g.nodes:
        if n.interior and n.annotations.similarity_group is not None:
            groups.setdefault(n.annotations.similarity_group, []).append(n)
    actions = []
    for grp in sorted(groups):
        members = groups[grp]
        essential = sorted(n.id for n in members if n.annotations.essential)
        if len(essential) > 1:
            raise DistillError(f"R1: group {grp!r} has several essential nodes: {', '.join(essential)}")
        survivor = essential[0] if essential else min(n.id for n in members)
        losers = sorted(n.id for n in members if n.id != survivor)
        if not losers:
            continue
        how = "essential branch" if essential else "smallest id, no essential marker"
        g = _remove_nodes(g, set(losers), "R1", dropped, {x: survivor for x in losers})
        actions.append(DistillAction("R1", "remove", tuple(losers),
                                     f"similar to {survivor} in group {grp!r} (kept {how})"))
    return g, actions


def apply_r2(g: ScenarioGraph, threshold: float = 0.01, dropped: list | None = None):
    """Prune branch heads whose traffic fraction is strictly below ``threshold``."""
    dropped = [] if dropped is None else dropped
    doomed: dict[str, str] = {}
    for n in g.nodes:
        outs = g.out_edges(n.id)
        if len(outs) < 2:
            continue
        for e in outs:
            frac = g.by_id[e.dst].annotations.traffic_fraction
            if frac is not None and frac < threshold and e.dst not in doomed:
                doomed[e.dst] = n.id
    actions = []
    for nid in sorted(doomed):
        frac = g.by_id[nid].annotations.traffic_fraction
        actions.append(DistillAction("R2", "remove", (nid,),
                                     f"branch of {doomed[nid]} carries {frac:g} < {threshold:g} of traffic"))
    return _remove_nodes(g, set(doomed), "R2", dropped), actions


def apply_r3(g: ScenarioGraph, dropped: list | None = None):
    """Remove components flagged auxiliary."""
    dropped = [] if dropped is None else dropped
    aux = sorted(n.id for n in g.nodes if n.annotations.auxiliary)
    if g.entry_id in aux:
        raise DistillError(f"R3: entry node {g.entry_id!r} cannot be auxiliary")
    if not aux:
        return g, []
    actions = [DistillAction("R3", "remove", (nid,), "auxiliary end-user function") for nid in aux]
    return _remove_nodes(g, set(aux), "R3", dropped), actions


def apply_r4(g: ScenarioGraph):
    """Reduce every AI node's model variants to its default (or first) model."""
    nodes = []
    actions = []
    for n in g.nodes:
        ann = n.annotations
        if n.kind == "ai" and len(ann.model_variants) > 1:
            chosen = ann.chosen_model
            dropped_models = [m for m in ann.model_variants if m != chosen]
            n = replace(n, annotations=replace(ann, model_variants=(chosen,)))
            actions.append(DistillAction("R4", "reduce-models", (n.id,),
                                         f"kept model {chosen}; dropped {', '.join(dropped_models)}"))
        nodes.append(n)
    return g.replace(nodes=tuple(nodes)), actions


def _sum_dist(dists: list[ServiceDistribution]) -> ServiceDistribution:
    total = sum(d.mean for d in dists)
    if all(d.dist == "constant" for d in dists):
        return ServiceDistribution.constant(total)
    return ServiceDistribution.exponential(total)


def _chain(g: ScenarioGraph, grp: str, members: set[str]) -> list[str]:
    internal = [e for e in g.edges if e.src in members and e.dst in members]
    indeg = {m: 0 for m in members}
    nxt: dict[str, list[str]] = {m: [] for m in members}
    for e in internal:
        indeg[e.dst] += 1
        nxt[e.src].append(e.dst)
    heads = [m for m in members if indeg[m] == 0]
    problem = None
    if len(internal) != len(members) - 1 or len(heads) != 1 or any(len(v) > 1 for v in nxt.values()):
        problem = "members do not form a linear chain"
    else:
        chain = heads
        while nxt[chain[-1]]:
            chain.append(nxt[chain[-1]][0])
        if len(chain) != len(members):
            problem = "members do not form a linear chain"
        else:
            head, tail = chain[0], chain[-1]
            for e in g.edges:
                if e.dst in members and e.src not in members and e.dst != head:
                    problem = f"external edge {e.src}->{e.dst} enters the middle of the chain"
                if e.src in members and e.dst not in members and e.src != tail:
                    problem = f"external edge {e.src}->{e.dst} leaves the middle of the chain"
            for m in chain:
                if not g.by_id[m].interior:
                    problem = f"{m} is not an interior component"
    if problem:
        raise DistillError(f"R5: merge group {grp!r}: {problem}")
    return chain


def _merged_node(g: ScenarioGraph, grp: str, chain: list[str]) -> ComponentNode:
    parts = [g.by_id[m] for m in chain]
    head, tail = parts[0], parts[-1]
    qtypes = sorted({q for p in parts for q in p.service_time_by_type})
    similar = next((p.annotations for p in parts if p.annotations.similarity_group is not None), None)
    models = [p.annotations.chosen_model for p in parts if p.annotations.chosen_model]
    ann = DistillAnnotations(
        similarity_group=similar.similarity_group if similar else None,
        essential=similar.essential if similar else False,
        traffic_fraction=head.annotations.traffic_fraction,
        model_variants=("+".join(models),) if models else (),
    )
    return ComponentNode(
        id=f"{grp}__merged",
        display_name=" + ".join(p.display_name for p in parts),
        kind="ai" if any(p.kind == "ai" for p in parts) else "non_ai",
        service_time=_sum_dist([p.service_time for p in parts]),
        servers=min(p.servers for p in parts),
        annotations=ann,
        module=next((p.module for p in parts if p.module is not None), None),
        fanout=tail.fanout,
        service_time_by_type={q: _sum_dist([p.service_for(q) for p in parts]) for q in qtypes},
    )


def _reach(g: ScenarioGraph, order: list[str]) -> set[str]:
    reach = {g.entry_id}
    for u in order:
        if u in reach:
            reach.update(g.successors(u))
    return reach


def _coreach(g: ScenarioGraph, order: list[str]) -> set[str]:
    coreach: set[str] = set()
    for u in reversed(order):
        if g.by_id[u].kind == "sink" or any(s in coreach for s in g.successors(u)):
            coreach.add(u)
    return coreach


def _live_nodes(g: ScenarioGraph) -> set[str]:
    """Nodes on some entry-to-sink path."""
    order = topological_order(g)
    return _reach(g, order) & _coreach(g, order)


def apply_r5(g: ScenarioGraph):
    """Collapse each merge-group chain into one ``<group>__merged`` node.

    The merged service time is the sum of member means: constant when every
    member is constant, exponential otherwise. Servers take the chain minimum.
    """
    live = _live_nodes(g)
    groups: dict[str, set[str]] = {}
    for n in g.nodes:
        # members already cut off by earlier pruning are left for R6
        if n.annotations.merge_group is not None and n.id in live:
            groups.setdefault(n.annotations.merge_group, set()).add(n.id)
    actions = []
    for grp in sorted(groups):
        members = groups[grp]
        if len(members) < 2:
            continue
        chain = _chain(g, grp, members)
        merged = _merged_node(g, grp, chain)
        if merged.id in g.by_id:
            raise DistillError(f"R5: merge group {grp!r}: id {merged.id!r} already in use")
        head, tail = chain[0], chain[-1]
        nodes = []
        for n in g.nodes:
            if n.id == head:
                nodes.append(merged)
            elif n.id not in members:
                nodes.append(n)
        edges = []
        for e in g.edges:
            if e.src in members and e.dst in members:
                continue
            if e.dst == head:
                e = replace(e, dst=merged.id)
            if e.src == tail:
                e = replace(e, src=merged.id)
            edges.append(e)
        g = g.replace(nodes=tuple(nodes), edges=tuple(edges))
        actions.append(DistillAction("R5", "merge", tuple(chain),
                                     f"successive similar steps in group {grp!r}", merged.id))
    return g, actions


def apply_r6(g: ScenarioGraph, dropped: list | None = None):
    """Remove nodes unreachable from entry and non-sink nodes that cannot reach a sink."""
    dropped = [] if dropped is None else dropped
    actions = []
    while True:
        order = topological_order(g)
        reach = _reach(g, order)
        live = reach & _coreach(g, order)
        doomed = sorted(n.id for n in g.nodes if n.id != g.entry_id and n.id not in live)
        if not doomed:
            return g, actions
        if g.entry_id not in live:
            raise DistillError("R6: pruning left no route from entry to a sink; "
                               "check the essential, auxiliary and traffic_fraction annotations")
        for nid in doomed:
            why = "no path to a sink" if nid in reach else "unreachable from entry"
            actions.append(DistillAction("R6", "remove", (nid,), f"{why} after pruning"))
        g = _remove_nodes(g, set(doomed), "R6", dropped)


def distill(g: ScenarioGraph, config: DistillConfig | None = None):
    """Apply the enabled rules in order R1..R6. Returns ``(distilled, report)``."""
    config = config or DistillConfig()
    problems = validate_graph(g)
    if problems:
        raise DistillError("input graph is invalid: " + "; ".join(map(str, problems)))
    before = (len(g.nodes), len(g.edges))
    dropped: list[tuple[str, str]] = []
    actions: list[DistillAction] = []
    if config.enabled("R1"):
        g, acts = apply_r1(g, dropped)
        actions += acts
    if config.enabled("R2"):
        g, acts = apply_r2(g, config.fraction_threshold, dropped)
        actions += acts
    if config.enabled("R3"):
        g, acts = apply_r3(g, dropped)
        actions += acts
    if config.enabled("R4"):
        g, acts = apply_r4(g)
        actions += acts
    if config.enabled("R5"):
        g, acts = apply_r5(g)
        actions += acts
    if config.enabled("R6"):
        g, acts = apply_r6(g, dropped)
        actions += acts
    problems = validate_graph(g)
    if problems:
        raise DistillError("distilled graph is invalid: " + "; ".join(map(str, problems)))
    report = DistillReport(actions, before[0], before[1], len(g.nodes), len(g.edges), dropped)
    return g, report
