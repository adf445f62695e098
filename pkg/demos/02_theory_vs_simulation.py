"""
Closed-form queueing versus simulation
======================================

An M/M/1 queue has a textbook answer. A real service chain does not, and
the gap between the two is the reason to benchmark at all.
"""

import numpy as np

from scenariobench import MM1Params, WorkloadProfile, mm1_mean, mm1_percentile, simulate
from scenariobench.analysis import percentile
from scenariobench.queueing import gap_report
from scenariobench.scenario import scenario_from_json

mu = 90.0  # service rate, req/s


def single_node(mean_ms):
    return scenario_from_json({
        "query_types": ["text"], "entry": "client",
        "nodes": [{"id": "client", "name": "client", "kind": "entry"},
                  {"id": "svc", "name": "service", "kind": "non_ai",
                   "service_time": {"dist": "exponential", "mean_ms": mean_ms}},
                  {"id": "done", "name": "done", "kind": "sink"}],
        "edges": [{"from": "client", "to": "svc", "routing": {"text": 1.0}},
                  {"from": "svc", "to": "done", "routing": {"text": 1.0}}],
    })


# the simulator agrees with theory when the system really is M/M/1
g = single_node(1000.0 / mu)
print(" lambda   theory mean  sim mean   theory p99  sim p99")
for lam in (3.0, 33.0, 66.0):
    prof = WorkloadProfile("open", 50_000, {"text": 1.0}, seed=1, arrival_rate=lam, warmup_ms=1000.0)
    lat = [t.latency_ms for t in simulate(g, prof) if t.measured]
    p = MM1Params(mu, lam)
    print(f"{lam:7.0f}  {mm1_mean(p):11.2f}  {np.mean(lat):8.2f}  {mm1_percentile(p, 99):11.2f}"
          f"  {percentile(lat, 99):7.2f}")

# with measured latencies of a real deployment the ratio is far from one
report = gap_report([11, 17, 41], [141, 148, 178], lambdas=[3, 33, 66])
print("measured / theoretical:", [f"{r:.1f}x" for r in report.ratios], f"mean {report.mean_ratio:.1f}x")
