"""Scenario graphs: annotated DAGs of AI and non-AI service components.

A scenario file is a JSON document::

    {
      "query_types": ["text", "image"],
      "entry": "client",
      "nodes": [{"id": ..., "name": ..., "kind": ..., "service_time": {...},
                 "servers": 1, "annotations": {...}}, ...],
      "edges": [{"from": ..., "to": ..., "routing": {"text": 1.0}}, ...]
    }

All times are milliseconds. Unknown fields are rejected.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping

KINDS = ("entry", "ai", "non_ai", "sink")
DISTS = ("constant", "exponential", "lognormal", "empirical")
ROUTING_TOL = 1e-9

_TOP_KEYS = {"name", "comments", "query_types", "entry", "nodes", "edges"}
_TOP_REQUIRED = {"query_types", "entry", "nodes", "edges"}
_NODE_KEYS = {"id", "name", "kind", "service_time", "servers", "annotations",
              "module", "fanout", "service_time_by_type"}
_NODE_REQUIRED = {"id", "name", "kind"}
_EDGE_KEYS = {"from", "to", "routing"}
_ANNOTATION_KEYS = {"similarity_group", "essential", "traffic_fraction", "auxiliary",
                    "model_variants", "default_model", "merge_group"}
_DIST_KEYS = {
    "constant": {"value_ms"},
    "exponential": {"mean_ms"},
    "lognormal": {"mu", "sigma"},
    "empirical": {"file", "samples"},
}


class ScenarioError(ValueError):
    """Base class for malformed scenario documents and graphs."""


class ScenarioSyntaxError(ScenarioError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class ScenarioSemanticError(ScenarioError):
    def __init__(self, message: str, element: str | None = None):
        super().__init__(message)
        self.element = element


class CycleError(ScenarioError):
    def __init__(self, nodes: Iterable[str]):
        self.nodes = list(nodes)
        super().__init__("cycle through " + " -> ".join(self.nodes))


@dataclass(frozen=True)
class ServiceDistribution:
    """Service-time distribution of one component, in milliseconds.

    ``lognormal`` takes the mean ``mu`` and standard deviation ``sigma`` of the
    underlying normal (of ln ms). ``empirical`` resamples ``samples`` uniformly;
    ``file`` records where they were loaded from.
    """

    dist: str = "constant"
    value_ms: float = 0.0
    mean_ms: float = 0.0
    mu: float = 0.0
    sigma: float = 0.0
    samples: tuple[float, ...] = ()
    file: str | None = None

    @classmethod
    def zero(cls) -> "ServiceDistribution":
        return cls("constant", value_ms=0.0)

    @classmethod
    def constant(cls, ms: float) -> "ServiceDistribution":
        return cls("constant", value_ms=float(ms))

    @classmethod
    def exponential(cls, mean_ms: float) -> "ServiceDistribution":
        return cls("exponential", mean_ms=float(mean_ms))

    @classmethod
    def lognormal(cls, mu: float, sigma: float) -> "ServiceDistribution":
        return cls("lognormal", mu=float(mu), sigma=float(sigma))

    @classmethod
    def empirical(cls, samples: Iterable[float], file: str | None = None) -> "ServiceDistribution":
        return cls("empirical", samples=tuple(float(s) for s in samples), file=file)

    @property
    def is_zero(self) -> bool:
        return self.dist == "constant" and self.value_ms == 0.0

    @property
    def mean(self) -> float:
        if self.dist == "constant":
            return self.value_ms
        if self.dist == "exponential":
            return self.mean_ms
        if self.dist == "lognormal":
            return math.exp(self.mu + self.sigma ** 2 / 2)
        return sum(self.samples) / len(self.samples) if self.samples else 0.0

    def problems(self) -> list[str]:
        """Parameter problems for an interior (work-carrying) node."""
        if self.dist not in DISTS:
            return [f"unknown distribution {self.dist!r}"]
        if self.dist == "constant" and not self.value_ms > 0:
            return ["constant value_ms must be > 0"]
        if self.dist == "exponential" and not self.mean_ms > 0:
            return ["exponential mean_ms must be > 0"]
        if self.dist == "lognormal" and not (self.mu > 0 and self.sigma > 0):
            return ["lognormal mu and sigma must be > 0"]
        if self.dist == "empirical":
            if not self.samples:
                return ["empirical distribution needs at least one sample"]
            if not all(s > 0 for s in self.samples):
                return ["empirical samples must be > 0"]
        return []

    def to_json(self) -> dict:
        if self.dist == "constant":
            return {"dist": "constant", "value_ms": self.value_ms}
        if self.dist == "exponential":
            return {"dist": "exponential", "mean_ms": self.mean_ms}
        if self.dist == "lognormal":
            return {"dist": "lognormal", "mu": self.mu, "sigma": self.sigma}
        if self.file is not None:
            return {"dist": "empirical", "file": self.file}
        return {"dist": "empirical", "samples": list(self.samples)}


@dataclass(frozen=True)
class DistillAnnotations:
    similarity_group: str | None = None
    essential: bool = False
    traffic_fraction: float | None = None
    auxiliary: bool = False
    model_variants: tuple[str, ...] = ()
    default_model: str | None = None
    merge_group: str | None = None

    @property
    def chosen_model(self) -> str | None:
        if not self.model_variants:
            return None
        if self.default_model in self.model_variants:
            return self.default_model
        return self.model_variants[0]

    def to_json(self) -> dict:
        out: dict = {}
        if self.similarity_group is not None:
            out["similarity_group"] = self.similarity_group
        if self.essential:
            out["essential"] = True
        if self.traffic_fraction is not None:
            out["traffic_fraction"] = self.traffic_fraction
        if self.auxiliary:
            out["auxiliary"] = True
        if self.model_variants:
            out["model_variants"] = list(self.model_variants)
        if self.default_model is not None:
            out["default_model"] = self.default_model
        if self.merge_group is not None:
            out["merge_group"] = self.merge_group
        return out


@dataclass(frozen=True)
class ComponentNode:
    id: str
    display_name: str
    kind: str
    service_time: ServiceDistribution = field(default_factory=ServiceDistribution.zero)
    servers: int = 1
    annotations: DistillAnnotations = field(default_factory=DistillAnnotations)
    # grouping used for module-level latency breakdown; defaults to the node id
    module: str | None = None
    # scatter to every routed successor and gather at the join node
    fanout: bool = False
    service_time_by_type: Mapping[str, ServiceDistribution] = field(default_factory=dict)

    @property
    def interior(self) -> bool:
        return self.kind in ("ai", "non_ai")

    @property
    def module_name(self) -> str:
        return self.module if self.module is not None else self.id

    def service_for(self, query_type: str) -> ServiceDistribution:
        return self.service_time_by_type.get(query_type, self.service_time)

    def to_json(self) -> dict:
        out: dict = {"id": self.id, "name": self.display_name, "kind": self.kind}
        if self.interior or not self.service_time.is_zero:
            out["service_time"] = self.service_time.to_json()
        if self.servers != 1:
            out["servers"] = self.servers
        ann = self.annotations.to_json()
        if ann:
            out["annotations"] = ann
        if self.module is not None:
            out["module"] = self.module
        if self.fanout:
            out["fanout"] = "all"
        if self.service_time_by_type:
            out["service_time_by_type"] = {q: d.to_json() for q, d in self.service_time_by_type.items()}
        return out


@dataclass(frozen=True)
class Edge:
    src: str
    dst: str
    routing: Mapping[str, float]

    def prob(self, query_type: str) -> float:
        return self.routing.get(query_type, 0.0)

    def to_json(self) -> dict:
        return {"from": self.src, "to": self.dst, "routing": dict(self.routing)}


@dataclass(frozen=True, eq=False)
class ScenarioGraph:
    """Immutable scenario DAG. Equality compares node and edge sets, not order."""

    nodes: tuple[ComponentNode, ...]
    edges: tuple[Edge, ...]
    entry_id: str
    query_types: tuple[str, ...]
    name: str | None = None
    comments: object = None

    def __eq__(self, other):
        if not isinstance(other, ScenarioGraph):
            return NotImplemented
        return (
            self.entry_id == other.entry_id
            and set(self.query_types) == set(other.query_types)
            and _node_map(self.nodes) == _node_map(other.nodes)
            and _edge_map(self.edges) == _edge_map(other.edges)
        )

    __hash__ = None

    @cached_property
    def by_id(self) -> dict[str, ComponentNode]:
        return {n.id: n for n in self.nodes}

    @cached_property
    def _out(self) -> dict[str, list[Edge]]:
        out: dict[str, list[Edge]] = {n.id: [] for n in self.nodes}
        for e in self.edges:
            out.setdefault(e.src, []).append(e)
        for lst in out.values():
            lst.sort(key=lambda e: e.dst)
        return out

    @cached_property
    def _in(self) -> dict[str, list[Edge]]:
        inn: dict[str, list[Edge]] = {n.id: [] for n in self.nodes}
        for e in self.edges:
            inn.setdefault(e.dst, []).append(e)
        for lst in inn.values():
            lst.sort(key=lambda e: e.src)
        return inn

    def node(self, node_id: str) -> ComponentNode:
        return self.by_id[node_id]

    def out_edges(self, node_id: str) -> list[Edge]:
        return self._out.get(node_id, [])

    def in_edges(self, node_id: str) -> list[Edge]:
        return self._in.get(node_id, [])

    def successors(self, node_id: str, query_type: str | None = None) -> list[str]:
        """Successors with positive routing mass (for one type, or any type)."""
        if query_type is None:
            return [e.dst for e in self.out_edges(node_id) if any(p > 0 for p in e.routing.values())]
        return [e.dst for e in self.out_edges(node_id) if e.prob(query_type) > 0]

    def predecessors(self, node_id: str) -> list[str]:
        return [e.src for e in self.in_edges(node_id) if any(p > 0 for p in e.routing.values())]

    @property
    def sinks(self) -> list[str]:
        return sorted(n.id for n in self.nodes if n.kind == "sink")

    def replace(self, **changes) -> "ScenarioGraph":
        return replace(self, **changes)

    def to_json(self) -> dict:
        out: dict = {}
        if self.name is not None:
            out["name"] = self.name
        if self.comments is not None:
            out["comments"] = self.comments
        out["query_types"] = list(self.query_types)
        out["entry"] = self.entry_id
        out["nodes"] = [n.to_json() for n in self.nodes]
        out["edges"] = [e.to_json() for e in self.edges]
        return out


def _node_map(nodes):
    return {n.id: n for n in nodes}


def _edge_map(edges):
    return {(e.src, e.dst): dict(e.routing) for e in edges}


# -- parsing -----------------------------------------------------------------

def _check_keys(obj, allowed: set, required: set, where: str):
    if not isinstance(obj, dict):
        raise ScenarioSemanticError(f"{where}: expected an object", where)
    unknown = sorted(set(obj) - allowed)
    if unknown:
        raise ScenarioSemanticError(f"{where}: unknown field(s) {', '.join(unknown)}", where)
    missing = sorted(required - set(obj))
    if missing:
        raise ScenarioSemanticError(f"{where}: missing field(s) {', '.join(missing)}", where)


def _number(value, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ScenarioSemanticError(f"{where}: expected a number, got {value!r}", where)
    return float(value)


def read_samples(path: Path) -> tuple[float, ...]:
    """Read latency samples (ms): numbers separated by whitespace or commas, ``#`` comments."""
    values = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.split("#", 1)[0].replace(",", " ")
        values.extend(float(tok) for tok in line.split())
    return tuple(values)


def _parse_dist(obj, where: str, base_dir: Path | None) -> ServiceDistribution:
    if not isinstance(obj, dict) or "dist" not in obj:
        raise ScenarioSemanticError(f"{where}: service time needs a 'dist' field", where)
    kind = obj["dist"]
    if kind not in _DIST_KEYS:
        raise ScenarioSemanticError(f"{where}: unknown distribution {kind!r}", where)
    _check_keys(obj, _DIST_KEYS[kind] | {"dist"}, set() if kind == "empirical" else _DIST_KEYS[kind] | {"dist"}, where)
    if kind == "constant":
        return ServiceDistribution.constant(_number(obj["value_ms"], where))
    if kind == "exponential":
        return ServiceDistribution.exponential(_number(obj["mean_ms"], where))
    if kind == "lognormal":
        return ServiceDistribution.lognormal(_number(obj["mu"], where), _number(obj["sigma"], where))
    if ("file" in obj) == ("samples" in obj):
        raise ScenarioSemanticError(f"{where}: empirical needs exactly one of 'file' or 'samples'", where)
    if "samples" in obj:
        return ServiceDistribution.empirical(_number(s, where) for s in obj["samples"])
    ref = obj["file"]
    path = Path(ref) if base_dir is None else Path(base_dir) / ref
    try:
        samples = read_samples(path)
    except (OSError, ValueError) as exc:
        raise ScenarioSemanticError(f"{where}: cannot read samples from {ref}: {exc}", where) from exc
    return ServiceDistribution.empirical(samples, file=ref)


def _parse_annotations(obj, where: str) -> DistillAnnotations:
    _check_keys(obj, _ANNOTATION_KEYS, set(), where)
    frac = obj.get("traffic_fraction")
    variants = obj.get("model_variants", [])
    if not isinstance(variants, list) or not all(isinstance(v, str) for v in variants):
        raise ScenarioSemanticError(f"{where}: model_variants must be a list of strings", where)
    return DistillAnnotations(
        similarity_group=obj.get("similarity_group"),
        essential=bool(obj.get("essential", False)),
        traffic_fraction=None if frac is None else _number(frac, where),
        auxiliary=bool(obj.get("auxiliary", False)),
        model_variants=tuple(variants),
        default_model=obj.get("default_model"),
        merge_group=obj.get("merge_group"),
    )


def _parse_node(obj, index: int, base_dir: Path | None) -> ComponentNode:
    where = f"nodes[{index}]"
    _check_keys(obj, _NODE_KEYS, _NODE_REQUIRED, where)
    node_id = obj["id"]
    if not isinstance(node_id, str) or not node_id:
        raise ScenarioSemanticError(f"{where}: id must be a non-empty string", where)
    where = f"node {node_id!r}"
    kind = obj["kind"]
    if kind not in KINDS:
        raise ScenarioSemanticError(f"{where}: kind must be one of {', '.join(KINDS)}", node_id)
    if "service_time" in obj:
        service = _parse_dist(obj["service_time"], where, base_dir)
    elif kind in ("entry", "sink"):
        service = ServiceDistribution.zero()
    else:
        raise ScenarioSemanticError(f"{where}: interior node needs a service_time", node_id)
    servers = obj.get("servers", 1)
    if isinstance(servers, bool) or not isinstance(servers, int):
        raise ScenarioSemanticError(f"{where}: servers must be an integer", node_id)
    fanout = obj.get("fanout")
    if fanout not in (None, "all"):
        raise ScenarioSemanticError(f"{where}: fanout must be \"all\" when present", node_id)
    by_type = obj.get("service_time_by_type", {})
    if not isinstance(by_type, dict):
        raise ScenarioSemanticError(f"{where}: service_time_by_type must be an object", node_id)
    return ComponentNode(
        id=node_id,
        display_name=str(obj["name"]),
        kind=kind,
        service_time=service,
        servers=servers,
        annotations=_parse_annotations(obj.get("annotations", {}), where),
        module=obj.get("module"),
        fanout=fanout == "all",
        service_time_by_type={q: _parse_dist(d, f"{where} ({q})", base_dir) for q, d in by_type.items()},
    )


def _parse_edge(obj, index: int) -> Edge:
    where = f"edges[{index}]"
    _check_keys(obj, _EDGE_KEYS, _EDGE_KEYS, where)
    routing = obj["routing"]
    if not isinstance(routing, dict):
        raise ScenarioSemanticError(f"{where}: routing must be an object", where)
    return Edge(str(obj["from"]), str(obj["to"]),
                {str(q): _number(p, where) for q, p in routing.items()})


def scenario_from_json(doc: dict, base_dir: Path | None = None) -> ScenarioGraph:
    """Build and check a graph from a decoded document; raise on the first semantic error."""
    _check_keys(doc, _TOP_KEYS, _TOP_REQUIRED, "document")
    qtypes = doc["query_types"]
    if not isinstance(qtypes, list) or not all(isinstance(q, str) for q in qtypes):
        raise ScenarioSemanticError("query_types must be a list of strings", "query_types")
    if not isinstance(doc["nodes"], list) or not isinstance(doc["edges"], list):
        raise ScenarioSemanticError("nodes and edges must be arrays", "document")
    g = ScenarioGraph(
        nodes=tuple(_parse_node(n, i, base_dir) for i, n in enumerate(doc["nodes"])),
        edges=tuple(_parse_edge(e, i) for i, e in enumerate(doc["edges"])),
        entry_id=str(doc["entry"]),
        query_types=tuple(qtypes),
        name=doc.get("name"),
        comments=doc.get("comments"),
    )
    violations = validate_graph(g)
    if violations:
        v = violations[0]
        raise ScenarioSemanticError(f"{v.rule}: {v.message}", v.element)
    return g


def parse_scenario(text: str, base_dir: Path | None = None) -> ScenarioGraph:
    """Parse a scenario document. ``base_dir`` resolves empirical sample files."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioSyntaxError(exc.msg, exc.lineno, exc.colno) from exc
    return scenario_from_json(doc, base_dir)


def serialize_scenario(g: ScenarioGraph) -> str:
    return json.dumps(g.to_json(), indent=2) + "\n"


def load_scenario(path) -> ScenarioGraph:
    path = Path(path)
    return parse_scenario(path.read_text(encoding="utf-8"), base_dir=path.parent)


def shipped_path(name: str) -> Path:
    """Path of a bundled data file (``ecommerce.scenario``, ``translation.toml``, ...)."""
    return Path(str(resources.files("scenariobench") / "data" / name))


def shipped_scenario(name: str) -> ScenarioGraph:
    """Load a bundled scenario by short name, e.g. ``"ecommerce"``."""
    return load_scenario(shipped_path(f"{name}.scenario"))


# -- validation ----------------------------------------------------------------

@dataclass(frozen=True)
class Violation:
    rule: str
    element: str
    message: str

    def __str__(self):
        return f"[{self.rule}] {self.element}: {self.message}"


def _find_cycle(ids: set[str], succ: Mapping[str, list[str]]) -> list[str]:
    """Return one cycle (as a node list) inside ``ids``; ``ids`` must contain one."""
    for start in sorted(ids):
        stack = [(start, iter(sorted(s for s in succ.get(start, ()) if s in ids)))]
        on_path = [start]
        seen_on_path = {start}
        visited = set()
        while stack:
            node, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                stack.pop()
                visited.add(node)
                seen_on_path.discard(on_path.pop())
                continue
            if nxt in seen_on_path:
                return on_path[on_path.index(nxt):]
            if nxt in visited:
                continue
            stack.append((nxt, iter(sorted(s for s in succ.get(nxt, ()) if s in ids))))
            on_path.append(nxt)
            seen_on_path.add(nxt)
    return sorted(ids)


def _kahn(ids: Iterable[str], edges: Iterable[tuple[str, str]]):
    indeg = {i: 0 for i in ids}
    succ: dict[str, list[str]] = {i: [] for i in indeg}
    for u, v in edges:
        if u in indeg and v in indeg:
            succ[u].append(v)
            indeg[v] += 1
    heap = [i for i, d in indeg.items() if d == 0]
    heapq.heapify(heap)
    order = []
    while heap:
        u = heapq.heappop(heap)
        order.append(u)
        for v in succ[u]:
            indeg[v] -= 1
            if indeg[v] == 0:
                heapq.heappush(heap, v)
    return order, succ


def topological_order(g: ScenarioGraph) -> list[str]:
    """Kahn's algorithm with ascending-id tie-break. Raises CycleError on cycles."""
    ids = [n.id for n in g.nodes]
    order, succ = _kahn(ids, ((e.src, e.dst) for e in g.edges))
    if len(order) < len(set(ids)):
        raise CycleError(_find_cycle(set(ids) - set(order), succ))
    return order


def validate_graph(g: ScenarioGraph) -> list[Violation]:
    """Check every graph invariant; an empty list means the graph is valid."""
    out: list[Violation] = []
    add = lambda rule, element, msg: out.append(Violation(rule, element, msg))  # noqa: E731

    seen: set[str] = set()
    for n in g.nodes:
        if n.id in seen:
            add("duplicate-id", n.id, f"node id {n.id!r} defined more than once")
        seen.add(n.id)
    ids = seen
    qset = set(g.query_types)
    if len(qset) != len(g.query_types):
        add("duplicate-query-type", "query_types", "query type listed more than once")

    entries = [n.id for n in g.nodes if n.kind == "entry"]
    if len(entries) != 1:
        add("entry-count", ",".join(entries) or "graph", f"expected exactly one entry node, found {len(entries)}")
    if g.entry_id not in ids:
        add("entry-count", g.entry_id, f"entry {g.entry_id!r} is not a node")
    elif g.by_id[g.entry_id].kind != "entry":
        add("entry-count", g.entry_id, f"entry {g.entry_id!r} does not have kind 'entry'")
    if not any(n.kind == "sink" for n in g.nodes):
        add("sink-count", "graph", "graph has no sink node")

    for n in g.nodes:
        if n.servers < 1:
            add("servers", n.id, f"servers must be >= 1, got {n.servers}")
        dists = [n.service_time, *n.service_time_by_type.values()]
        if n.interior:
            for d in dists:
                for p in d.problems():
                    add("service-time", n.id, p)
        elif not all(d.is_zero for d in dists):
            add("service-time", n.id, f"{n.kind} node must have zero service time")
        for q in n.service_time_by_type:
            if q not in qset:
                add("unknown-query-type", n.id, f"service override for unknown query type {q!r}")
        frac = n.annotations.traffic_fraction
        if frac is not None and not 0 <= frac <= 1:
            add("traffic-fraction", n.id, f"traffic_fraction {frac} outside [0, 1]")

    edge_keys: set[tuple[str, str]] = set()
    good_edges = []
    for e in g.edges:
        label = f"{e.src}->{e.dst}"
        bad = False
        for end in (e.src, e.dst):
            if end not in ids:
                add("dangling-edge", end, f"edge {label} references unknown node {end!r}")
                bad = True
        if (e.src, e.dst) in edge_keys:
            add("duplicate-edge", label, "edge defined more than once")
        edge_keys.add((e.src, e.dst))
        for q, p in e.routing.items():
            if q not in qset:
                add("unknown-query-type", label, f"routing for unknown query type {q!r}")
            if not 0 <= p <= 1:
                add("routing-range", label, f"probability {p} for {q!r} outside [0, 1]")
        if not bad:
            good_edges.append(e)
            if g.by_id[e.src].kind == "sink":
                add("sink-out-edges", e.src, f"sink has outgoing edge {label}")
            if e.dst == g.entry_id:
                add("entry-in-edges", e.dst, f"entry has incoming edge {label}")

    order, succ = _kahn(ids, ((e.src, e.dst) for e in good_edges))
    acyclic = len(order) == len(ids)
    if not acyclic:
        cyc = _find_cycle(ids - set(order), succ)
        add("cycle", ",".join(cyc), "cycle through " + " -> ".join(cyc + cyc[:1]))

    out_by_node: dict[str, list[Edge]] = {}
    for e in good_edges:
        out_by_node.setdefault(e.src, []).append(e)
    for nid, es in sorted(out_by_node.items()):
        fan = g.by_id[nid].fanout
        for q in g.query_types:
            probs = [e.prob(q) for e in es]
            mass = sum(probs)
            if fan:
                if any(p not in (0.0, 1.0) for p in probs):
                    add("fanout-routing", nid, f"fanout node routes {q!r} with probabilities other than 0/1")
            elif mass > 0 and abs(mass - 1.0) > ROUTING_TOL:
                add("routing-mass", nid, f"outgoing probability for {q!r} sums to {mass:.12g}, expected 1")

    # similarity groups
    essentials: dict[str, list[str]] = {}
    for n in g.nodes:
        a = n.annotations
        if a.similarity_group is not None and a.essential:
            essentials.setdefault(a.similarity_group, []).append(n.id)
    for grp, members in sorted(essentials.items()):
        if len(members) > 1:
            add("essential-conflict", grp, f"several essential nodes in group {grp!r}: {', '.join(sorted(members))}")

    # branch-head fractions per branch point
    for nid, es in sorted(out_by_node.items()):
        fr = [g.by_id[e.dst].annotations.traffic_fraction for e in es if e.dst in g.by_id]
        total = sum(f for f in fr if f is not None)
        if total > 1 + ROUTING_TOL:
            add("traffic-fraction", nid, f"branch-head traffic fractions sum to {total:.6g} > 1")

    if g.entry_id in ids and acyclic:
        reach = {g.entry_id}
        for u in order:
            if u in reach:
                for e in out_by_node.get(u, []):
                    if any(p > 0 for p in e.routing.values()):
                        reach.add(e.dst)
        for n in g.nodes:
            if n.id not in reach:
                add("unreachable", n.id, f"node {n.id!r} is not reachable from entry")
        for q in g.query_types:
            seen_q = {g.entry_id}
            for u in order:
                if u not in seen_q:
                    continue
                nxt = [e.dst for e in out_by_node.get(u, []) if e.prob(q) > 0]
                if not nxt and g.by_id[u].kind != "sink":
                    add("dead-route", u, f"query type {q!r} reaches {u!r} but has no outgoing route")
                seen_q.update(nxt)
    return out


# -- graph queries ---------------------------------------------------------------

def check_query_mix(g: ScenarioGraph, query_mix: Mapping[str, float]) -> None:
    unknown = sorted(set(query_mix) - set(g.query_types))
    if unknown:
        raise ScenarioSemanticError(f"query mix names unknown query type(s) {', '.join(unknown)}")
    total = sum(query_mix.values())
    if any(p < 0 for p in query_mix.values()) or abs(total - 1.0) > ROUTING_TOL:
        raise ScenarioSemanticError(f"query mix must be non-negative and sum to 1, got {total:.12g}")


def join_nodes(g: ScenarioGraph, query_type: str, order: list[str] | None = None) -> dict[str, str | None]:
    """Join node of every fanout node for one query type.

    The join is the nearest post-dominator in the type's routing subgraph, or
    None when the branches end at different sinks without reconverging.
    """
    order = order if order is not None else topological_order(g)
    pos = {nid: i for i, nid in enumerate(order)}
    pdom: dict[str, frozenset[str] | None] = {}
    for u in reversed(order):
        nxt = g.successors(u, query_type)
        if not nxt:
            pdom[u] = frozenset({u})
            continue
        common = None
        for s in nxt:
            common = pdom[s] if common is None else common & pdom[s]
        pdom[u] = frozenset({u}) | common
    joins = {}
    for n in g.nodes:
        if n.fanout:
            rest = pdom[n.id] - {n.id}
            joins[n.id] = min(rest, key=pos.__getitem__) if rest else None
    return joins


def visit_ratios(g: ScenarioGraph, query_type: str) -> dict[str, float]:
    """Expected visits per request of one query type to each node.

    Fanout nodes send one token down every routed branch; the join node is
    visited once per fork, not once per branch.
    """
    order = topological_order(g)
    joins = join_nodes(g, query_type, order)
    mass = {nid: 0.0 for nid in order}
    mass[g.entry_id] = 1.0
    excess = {nid: 0.0 for nid in order}
    for u in order:
        mass[u] -= excess[u]
        m = mass[u]
        if m <= 0:
            continue
        node = g.by_id[u]
        outs = [e for e in g.out_edges(u) if e.prob(query_type) > 0]
        if node.fanout:
            for e in outs:
                mass[e.dst] += m
            j = joins.get(u)
            if j is not None and len(outs) > 1:
                excess[j] += (len(outs) - 1) * m
        else:
            for e in outs:
                mass[e.dst] += m * e.prob(query_type)
    return mass


def mix_visit_ratios(g: ScenarioGraph, query_mix: Mapping[str, float]) -> dict[str, dict[str, float]]:
    """Per-type visit ratios for every type with positive mix weight."""
    return {q: visit_ratios(g, q) for q, w in sorted(query_mix.items()) if w > 0}


@dataclass(frozen=True)
class CriticalPath:
    nodes: tuple[str, ...]
    total_ms: float
    weights: Mapping[str, float]


def node_weights(g: ScenarioGraph, query_mix: Mapping[str, float]) -> dict[str, float]:
    """Mean service time times reach probability, averaged over the query mix."""
    ratios = mix_visit_ratios(g, query_mix)
    weights = {}
    for n in g.nodes:
        weights[n.id] = sum(query_mix[q] * r[n.id] * n.service_for(q).mean for q, r in ratios.items())
    return weights


def expected_critical_path(g: ScenarioGraph, query_mix: Mapping[str, float]) -> CriticalPath:
    """Entry-to-sink path with the largest sum of reach-weighted mean service times."""
    check_query_mix(g, query_mix)
    order = topological_order(g)
    weights = node_weights(g, query_mix)
    live = [q for q, w in query_mix.items() if w > 0]
    best: dict[str, float] = {}
    nxt: dict[str, str | None] = {}
    for u in reversed(order):
        node = g.by_id[u]
        if node.kind == "sink":
            best[u], nxt[u] = weights[u], None
            continue
        cands = sorted({e.dst for e in g.out_edges(u) if any(e.prob(q) > 0 for q in live)})
        choice, value = None, -math.inf
        for s in cands:
            if best[s] > value:
                choice, value = s, best[s]
        best[u], nxt[u] = weights[u] + value, choice
    if not math.isfinite(best[g.entry_id]):
        raise ScenarioSemanticError("no entry-to-sink path for the query mix")
    path = [g.entry_id]
    while nxt[path[-1]] is not None:
        path.append(nxt[path[-1]])
    return CriticalPath(tuple(path), sum(weights[p] for p in path), weights)
