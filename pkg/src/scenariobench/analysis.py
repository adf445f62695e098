"""Latency analysis over request traces.

Percentiles use the nearest-rank definition: the ceil(p/100 * n)-th smallest
sample (1-based), so reported values are always observed samples.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

import numpy as np

from .traces import RequestTrace

METRICS = ("mean_ms", "p50_ms", "p90_ms", "p99_ms")
LEVELS = ("overall", "module", "component")


class AnalysisError(ValueError):
    pass


class EmptySampleError(AnalysisError):
    pass


def nearest_rank(sorted_samples: Sequence[float], p: float) -> float:
    """Nearest-rank percentile of already-sorted samples."""
    n = len(sorted_samples)
    if n == 0:
        raise EmptySampleError("no samples")
    if not 0 < p <= 100:
        raise ValueError(f"percentile must be in (0, 100], got {p}")
    rank = math.ceil(Fraction(str(p)) * n / 100)
    return float(sorted_samples[max(rank, 1) - 1])


def percentile(samples: Iterable[float], p: float) -> float:
    return nearest_rank(sorted(samples), p)


@dataclass(frozen=True)
class LatencySummary:
    count: int
    mean_ms: float
    p50_ms: float
    p90_ms: float
    p99_ms: float

    @classmethod
    def from_samples(cls, samples: Iterable[float]) -> "LatencySummary":
        arr = np.sort(np.asarray(list(samples), dtype=float))
        if arr.size == 0:
            raise EmptySampleError("cannot summarize an empty sample set")
        return cls(int(arr.size), float(arr.mean()), nearest_rank(arr, 50), nearest_rank(arr, 90),
                   nearest_rank(arr, 99))

    def metrics(self) -> dict[str, float]:
        return {m: getattr(self, m) for m in METRICS}

    def to_json(self) -> dict:
        return asdict(self)


def _measured(traces: Iterable[RequestTrace]) -> list[RequestTrace]:
    return [t for t in traces if t.measured]


def _covered(intervals: list[tuple[float, float]]) -> float:
    """Length of the union of intervals."""
    total = 0.0
    cur_start = cur_end = None
    for a, b in sorted(intervals):
        if cur_end is None or a > cur_end:
            if cur_end is not None:
                total += cur_end - cur_start
            cur_start, cur_end = a, b
        elif b > cur_end:
            cur_end = b
    if cur_end is not None:
        total += cur_end - cur_start
    return total


def module_latencies(traces: Iterable[RequestTrace], grouping: Mapping[str, str]) -> dict[str, list[float]]:
    """Per-request time spent in each module.

    A request's module latency is the time covered by the union of its stage
    intervals in that module; for sequential stages that is the sum of their
    sojourns, for parallel stages the wall-clock span they occupy.
    """
    out: dict[str, list[float]] = {}
    for t in traces:
        spans: dict[str, list[tuple[float, float]]] = {}
        for s in t.stages:
            if s.node_id not in grouping:
                raise AnalysisError(f"node {s.node_id!r} has no module in the grouping")
            spans.setdefault(grouping[s.node_id], []).append((s.enqueue_ms, s.end_ms))
        for mod, iv in spans.items():
            out.setdefault(mod, []).append(_covered(iv))
    return out


def summarize(traces: Iterable[RequestTrace], level: str = "overall",
              grouping: Mapping[str, str] | None = None) -> dict[str, LatencySummary]:
    """Latency summaries of measured (non-warm-up, non-failed) requests.

    ``overall`` uses end-to-end latency, ``component`` every stage sojourn
    (end - enqueue) keyed by node, ``module`` the per-request module latency.
    """
    if level not in LEVELS:
        raise ValueError(f"level must be one of {', '.join(LEVELS)}")
    traces = _measured(traces)
    if level == "overall":
        return {"overall": LatencySummary.from_samples(t.latency_ms for t in traces)}
    if level == "module":
        if grouping is None:
            raise AnalysisError("module level needs a node -> module grouping")
        groups = module_latencies(traces, grouping)
    else:
        groups = {}
        for t in traces:
            for s in t.stages:
                groups.setdefault(s.node_id, []).append(s.sojourn_ms)
    if not groups:
        raise EmptySampleError(f"no stage samples for {level} summary")
    return {k: LatencySummary.from_samples(v) for k, v in sorted(groups.items())}


def reproducibility_cv(runs: Sequence[LatencySummary]) -> dict[str, float]:
    """Sample standard deviation over mean, per metric, across repeated runs."""
    if len(runs) < 2:
        raise AnalysisError("coefficient of variation needs at least two runs")
    out = {}
    for m in METRICS:
        vals = np.array([getattr(r, m) for r in runs], dtype=float)
        mean = vals.mean()
        if mean == 0:
            raise AnalysisError(f"coefficient of variation undefined for {m}: zero mean")
        out[m] = float(vals.std(ddof=1) / mean)
    return out


@dataclass(frozen=True)
class Deviation:
    benchmark: float
    baseline: float

    @property
    def deviation(self) -> float:
        return abs(self.benchmark - self.baseline) / self.baseline


@dataclass(frozen=True)
class DeviationReport:
    entries: Mapping[str, Deviation]

    def to_json(self) -> dict:
        return {m: {"benchmark": d.benchmark, "baseline": d.baseline, "deviation": d.deviation}
                for m, d in self.entries.items()}


def deviation(benchmark, baseline) -> DeviationReport:
    """|benchmark - baseline| / baseline per metric.

    Accepts two LatencySummary objects or two mappings of named metrics (e.g.
    CPU utilization or IPC measured elsewhere); only shared metrics are compared.
    """
    if isinstance(benchmark, LatencySummary):
        benchmark = benchmark.metrics()
    if isinstance(baseline, LatencySummary):
        baseline = baseline.metrics()
    shared = [m for m in benchmark if m in baseline]
    if not shared:
        raise AnalysisError("benchmark and baseline share no metrics")
    entries = {}
    for m in shared:
        if not baseline[m] > 0:
            raise AnalysisError(f"baseline {m} must be positive, got {baseline[m]}")
        entries[m] = Deviation(float(benchmark[m]), float(baseline[m]))
    return DeviationReport(entries)


@dataclass(frozen=True)
class AISplit:
    ai_mean_ms: float
    non_ai_mean_ms: float

    @property
    def ai_fraction(self) -> float:
        total = self.ai_mean_ms + self.non_ai_mean_ms
        return self.ai_mean_ms / total if total > 0 else 0.0

    def to_json(self) -> dict:
        return {"ai_mean_ms": self.ai_mean_ms, "non_ai_mean_ms": self.non_ai_mean_ms,
                "ai_fraction": self.ai_fraction}


def ai_split(traces: Iterable[RequestTrace], kinds: Mapping[str, str]) -> AISplit:
    """Average per-request stage time in AI vs non-AI components (gaps excluded)."""
    traces = _measured(traces)
    if not traces:
        raise EmptySampleError("no measured requests")
    ai = non = 0.0
    for t in traces:
        for s in t.stages:
            kind = kinds.get(s.node_id)
            if kind == "ai":
                ai += s.sojourn_ms
            elif kind == "non_ai":
                non += s.sojourn_ms
            else:
                raise AnalysisError(f"node {s.node_id!r} is not classified as ai or non_ai")
    return AISplit(ai / len(traces), non / len(traces))


@dataclass(frozen=True)
class TradeoffPoint:
    data_fraction: float
    training_time_s: float
    accuracy_pct: float

    def __post_init__(self):
        if not 0 < self.data_fraction <= 1:
            raise ValueError(f"data_fraction must be in (0, 1], got {self.data_fraction}")
        if not self.training_time_s > 0:
            raise ValueError("training_time_s must be positive")


@dataclass(frozen=True)
class MarginalGain:
    source: TradeoffPoint
    target: TradeoffPoint

    @property
    def extra_time_pct(self) -> float:
        return 100.0 * (self.target.training_time_s - self.source.training_time_s) / self.source.training_time_s

    @property
    def accuracy_gain_pp(self) -> float:
        return self.target.accuracy_pct - self.source.accuracy_pct

    def to_json(self) -> dict:
        return {"from": asdict(self.source), "to": asdict(self.target),
                "extra_time_pct": self.extra_time_pct, "accuracy_gain_pp": self.accuracy_gain_pp}


def training_tradeoff(points: Sequence[TradeoffPoint]) -> list[MarginalGain]:
    """Extra training time and accuracy gain for every pair of data fractions (smaller first)."""
    if len(points) < 2:
        raise AnalysisError("tradeoff needs at least two points")
    for a, b in zip(points, points[1:]):
        if b.data_fraction < a.data_fraction:
            raise AnalysisError("points must be sorted by non-decreasing data fraction")
    return [MarginalGain(points[i], points[j]) for i in range(len(points)) for j in range(i + 1, len(points))]


# -- report assembly ------------------------------------------------------------

def _average(summaries: Sequence[LatencySummary]) -> LatencySummary:
    return LatencySummary(sum(s.count for s in summaries),
                          *(float(np.mean([getattr(s, m) for s in summaries])) for m in METRICS))


def _levelled(runs, summarize_one) -> dict:
    per_run = [summarize_one(r) for r in runs]
    keys = sorted({k for pr in per_run for k in pr})
    out = {}
    for k in keys:
        present = [pr[k] for pr in per_run if k in pr]
        out[k] = {"per_run": [pr[k].to_json() if k in pr else None for pr in per_run],
                  "average": _average(present).to_json()}
    return out


def build_report(runs: Sequence[Sequence[RequestTrace]], grouping: Mapping[str, str] | None = None,
                 kinds: Mapping[str, str] | None = None, baseline: Sequence[RequestTrace] | None = None,
                 tradeoffs: Mapping[str, Sequence[TradeoffPoint]] | None = None) -> dict:
    """Assemble the multi-run report document (plain JSON-ready data)."""
    if not runs:
        raise AnalysisError("no runs to report")
    overall = [summarize(r)["overall"] for r in runs]
    grouping = grouping or {}
    doc: dict = {
        "runs": len(runs),
        "requests": [{"total": len(r), "measured": len(_measured(r)),
                      "warmup": sum(1 for t in r if t.warmup),
                      "failed": sum(1 for t in r if t.failed),
                      "error_rate": _error_rate(r)} for r in runs],
        "overall": {"per_run": [s.to_json() for s in overall], "average": _average(overall).to_json()},
        "components": _levelled(runs, lambda r: summarize(r, "component")),
    }
    module_map = {s.node_id: grouping.get(s.node_id, s.node_id) for r in runs for t in r for s in t.stages}
    doc["modules"] = _levelled(runs, lambda r: summarize(r, "module", module_map))
    if len(runs) >= 2:
        doc["cv"] = reproducibility_cv(overall)
    if baseline is not None:
        doc["deviations"] = deviation(_average(overall), summarize(baseline)["overall"]).to_json()
    if kinds:
        splits = [ai_split(r, kinds) for r in runs]
        doc["ai_split"] = {
            "per_run": [s.to_json() for s in splits],
            "average": AISplit(float(np.mean([s.ai_mean_ms for s in splits])),
                               float(np.mean([s.non_ai_mean_ms for s in splits]))).to_json(),
        }
    if tradeoffs:
        doc["tradeoffs"] = {name: [m.to_json() for m in training_tradeoff(pts)]
                            for name, pts in sorted(tradeoffs.items())}
    return doc


def _error_rate(traces: Sequence[RequestTrace]) -> float:
    live = [t for t in traces if not t.warmup]
    return sum(1 for t in live if t.failed) / len(live) if live else 0.0


def dumps_report(doc: Mapping) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _summary_rows(label, block):
    rows = []
    for i, s in enumerate(block["per_run"]):
        if s is not None:
            rows.append((*label, i, s["count"], *(repr(s[m]) for m in METRICS)))
    a = block["average"]
    rows.append((*label, "average", a["count"], *(repr(a[m]) for m in METRICS)))
    return rows


def report_csvs(doc: Mapping) -> dict[str, str]:
    """Plot-ready CSV text per report section."""
    head = ("run", "count", *METRICS)
    out = {"overall": _csv(head, _summary_rows((), doc["overall"]))}
    for section, key in (("modules", "module"), ("components", "node_id")):
        rows = [r for name, block in doc[section].items() for r in _summary_rows((name,), block)]
        out[section] = _csv((key, *head), rows)
    if "cv" in doc:
        out["cv"] = _csv(("metric", "cv"), [(m, repr(v)) for m, v in doc["cv"].items()])
    if "deviations" in doc:
        out["deviations"] = _csv(("metric", "benchmark", "baseline", "deviation"),
                                 [(m, repr(d["benchmark"]), repr(d["baseline"]), repr(d["deviation"]))
                                  for m, d in doc["deviations"].items()])
    if "ai_split" in doc:
        rows = [(i, repr(s["ai_mean_ms"]), repr(s["non_ai_mean_ms"]), repr(s["ai_fraction"]))
                for i, s in enumerate(doc["ai_split"]["per_run"])]
        a = doc["ai_split"]["average"]
        rows.append(("average", repr(a["ai_mean_ms"]), repr(a["non_ai_mean_ms"]), repr(a["ai_fraction"])))
        out["ai_split"] = _csv(("run", "ai_mean_ms", "non_ai_mean_ms", "ai_fraction"), rows)
    if "tradeoffs" in doc:
        rows = [(name, m["from"]["data_fraction"], m["to"]["data_fraction"], repr(m["extra_time_pct"]),
                 repr(m["accuracy_gain_pp"])) for name, ms in doc["tradeoffs"].items() for m in ms]
        out["tradeoffs"] = _csv(("component", "from_fraction", "to_fraction", "extra_time_pct",
                                 "accuracy_gain_pp"), rows)
    return out


def _table(header, rows) -> str:
    rows = [tuple(str(c) for c in r) for r in rows]
    widths = [max(len(str(h)), *(len(r[i]) for r in rows)) if rows else len(str(h)) for i, h in enumerate(header)]
    lines = ["  ".join(str(h).ljust(w) for h, w in zip(header, widths))]
    lines += ["  ".join(c.ljust(w) for c, w in zip(r, widths)) for r in rows]
    return "\n".join(lines)


def report_table(doc: Mapping) -> str:
    """Human-readable rendering of the averaged report sections."""
    def row(name, s):
        return (name, s["count"], *(f"{s[m]:.2f}" for m in METRICS))

    head = ("", "n (all runs)", "mean", "p50", "p90", "p99")
    parts = ["Overall latency (ms)", _table(head, [row("overall", doc["overall"]["average"])]), "",
             "Module latency (ms)",
             _table(head, [row(k, v["average"]) for k, v in doc["modules"].items()]), "",
             "Component latency (ms)",
             _table(head, [row(k, v["average"]) for k, v in doc["components"].items()])]
    if "cv" in doc:
        parts += ["", "Reproducibility CV", _table(("metric", "cv"), [(m, f"{v:.4f}") for m, v in doc["cv"].items()])]
    if "deviations" in doc:
        parts += ["", "Deviation from baseline",
                  _table(("metric", "benchmark", "baseline", "deviation"),
                         [(m, f"{d['benchmark']:.2f}", f"{d['baseline']:.2f}", f"{d['deviation']:.2%}")
                          for m, d in doc["deviations"].items()])]
    if "ai_split" in doc:
        a = doc["ai_split"]["average"]
        parts += ["", "AI vs non-AI time (ms per request)",
                  _table(("ai", "non_ai", "ai_fraction"),
                         [(f"{a['ai_mean_ms']:.2f}", f"{a['non_ai_mean_ms']:.2f}", f"{a['ai_fraction']:.3f}")])]
    if "tradeoffs" in doc:
        parts += ["", "Training tradeoffs",
                  _table(("component", "from", "to", "extra time", "accuracy gain"),
                         [(name, m["from"]["data_fraction"], m["to"]["data_fraction"],
                           f"{m['extra_time_pct']:.1f}%", f"{m['accuracy_gain_pp']:.2f} pp")
                          for name, ms in doc["tradeoffs"].items() for m in ms])]
    return "\n".join(parts) + "\n"
