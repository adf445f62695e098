"""Closed-form M/M/1 latency predictions and theoretical-vs-measured gap reports.

Rates are requests per second; latencies come back in milliseconds. Only
single-server queues are modelled; the simulator covers multi-server nodes.
Tail latency of a network is deliberately not predicted: percentiles of the
parts do not add up to a percentile of the whole.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

from .scenario import ScenarioGraph, check_query_mix, mix_visit_ratios


class UnstableQueueError(ValueError):
    def __init__(self, message: str, node_id: str | None = None):
        super().__init__(message)
        self.node_id = node_id


@dataclass(frozen=True)
class MM1Params:
    mu: float
    lam: float

    def check(self):
        if not self.lam > 0:
            raise ValueError(f"arrival rate must be positive, got {self.lam}")
        if not self.mu > self.lam:
            raise UnstableQueueError(f"unstable queue: lambda={self.lam} >= mu={self.mu}")

    @property
    def utilization(self) -> float:
        return self.lam / self.mu


@dataclass(frozen=True)
class NetworkNode:
    node_id: str
    mu: float
    visit_ratio: float


@dataclass(frozen=True)
class NetworkParams:
    nodes: tuple[NetworkNode, ...]
    lam: float

    @classmethod
    def from_json(cls, doc: Mapping) -> "NetworkParams":
        """``{"lambda": 66, "nodes": [{"id": "a", "mu": 90, "visit_ratio": 1}, ...]}``"""
        nodes = tuple(NetworkNode(str(n["id"]), float(n["mu"]), float(n.get("visit_ratio", 1.0)))
                      for n in doc["nodes"])
        return cls(nodes, float(doc["lambda"]))

    def to_json(self) -> dict:
        return {"lambda": self.lam,
                "nodes": [{"id": n.node_id, "mu": n.mu, "visit_ratio": n.visit_ratio} for n in self.nodes]}


def mm1_mean(params: MM1Params) -> float:
    """Mean sojourn time 1/(mu - lambda), in ms."""
    params.check()
    return 1000.0 / (params.mu - params.lam)


def mm1_percentile(params: MM1Params, p: float) -> float:
    """p-th percentile sojourn time -ln(1 - p/100)/(mu - lambda), in ms."""
    if not 0 < p < 100:
        raise ValueError(f"percentile must be in (0, 100), got {p}")
    params.check()
    return -math.log1p(-p / 100.0) * 1000.0 / (params.mu - params.lam)


def network_mean(net: NetworkParams) -> float:
    """Mean response time of an open network of M/M/1 nodes, in ms.

    Each node sees ``lambda * visit_ratio`` and contributes
    ``visit_ratio / (mu - lambda * visit_ratio)``.
    """
    if not net.lam > 0:
        raise ValueError(f"arrival rate must be positive, got {net.lam}")
    total = 0.0
    for n in net.nodes:
        if n.visit_ratio < 0:
            raise ValueError(f"node {n.node_id!r}: negative visit ratio")
        if n.visit_ratio == 0:
            continue
        offered = net.lam * n.visit_ratio
        if not n.mu > offered:
            raise UnstableQueueError(
                f"node {n.node_id!r} is unstable: offered {offered:g} req/s >= mu {n.mu:g}", n.node_id)
        total += n.visit_ratio * 1000.0 / (n.mu - offered)
    return total


def network_from_graph(g: ScenarioGraph, query_mix: Mapping[str, float], lam: float) -> NetworkParams:
    """Approximate a scenario graph as an M/M/1 network.

    A node with k servers becomes one server of rate ``k / mean``, so the
    result is exact only for single-server exponential nodes.
    """
    check_query_mix(g, query_mix)
    ratios = mix_visit_ratios(g, query_mix)
    nodes = []
    for n in g.nodes:
        if not n.interior:
            continue
        v = sum(query_mix[q] * r[n.id] for q, r in ratios.items())
        if v <= 0:
            continue
        mean_ms = sum(query_mix[q] * r[n.id] * n.service_for(q).mean for q, r in ratios.items()) / v
        nodes.append(NetworkNode(n.id, n.servers * 1000.0 / mean_ms, v))
    return NetworkParams(tuple(nodes), lam)


@dataclass(frozen=True)
class GapSetting:
    lam: float | None
    theoretical_ms: float
    actual_ms: float

    @property
    def ratio(self) -> float:
        return self.actual_ms / self.theoretical_ms


@dataclass(frozen=True)
class GapReport:
    settings: tuple[GapSetting, ...]

    @property
    def ratios(self) -> list[float]:
        return [s.ratio for s in self.settings]

    @property
    def mean_ratio(self) -> float:
        return sum(self.ratios) / len(self.settings)

    def to_json(self) -> dict:
        return {
            "settings": [{"lambda": s.lam, "theoretical_ms": s.theoretical_ms, "actual_ms": s.actual_ms,
                          "ratio": s.ratio} for s in self.settings],
            "mean_ratio": self.mean_ratio,
        }


def gap_report(theoreticals: Sequence[float], actuals: Sequence[float],
               lambdas: Sequence[float] | None = None) -> GapReport:
    """Per-setting actual/theoretical ratios and their arithmetic mean."""
    if len(theoreticals) != len(actuals) or not theoreticals:
        raise ValueError("theoretical and actual lists must be non-empty and of equal length")
    if lambdas is not None and len(lambdas) != len(actuals):
        raise ValueError("lambdas must match the number of settings")
    if any(not v > 0 for v in (*theoreticals, *actuals)):
        raise ValueError("latencies must be positive")
    lams = lambdas if lambdas is not None else [None] * len(actuals)
    return GapReport(tuple(GapSetting(lam, float(t), float(a)) for lam, t, a in zip(lams, theoreticals, actuals)))
