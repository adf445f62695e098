"""
Distilling the e-commerce search scenario
=========================================

Load the bundled scenario, apply the six distilling rules and look at
what survived.
"""

from scenariobench import distill, shipped_scenario
from scenariobench.scenario import expected_critical_path

g = shipped_scenario("ecommerce")
print(f"{g.name}: {len(g.nodes)} nodes, {len(g.edges)} edges")

# rules run in order R1..R6; the report says which rule touched which node
small, report = distill(g)
print(report.to_table())

# query types whose every route was pruned are dropped, not silently kept
print("dropped query types:", report.dropped_query_types)

# the path a typical query spends most of its time on, before and after
mix = {"text": 0.99, "image": 0.01}
for label, graph in (("original", g), ("distilled", small)):
    cp = expected_critical_path(graph, {q: p for q, p in mix.items() if q in graph.query_types})
    print(f"{label:>9}: {' -> '.join(cp.nodes)}  ({cp.total_ms:.1f} ms expected)")

# distilling twice changes nothing
again, second = distill(small)
assert again == small and second.is_empty
