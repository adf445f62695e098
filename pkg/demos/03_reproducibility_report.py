"""
Repeated runs and the benchmark report
======================================

Run the bundled translation config three times with different seeds and
read the merged report: overall, per-module and per-component latency,
run-to-run variation and the AI share of execution time.
"""

import tempfile
from pathlib import Path

from scenariobench.cli import execute_run
from scenariobench.config import load_run_config
from scenariobench.analysis import report_table
from scenariobench.scenario import shipped_path

cfg = load_run_config(shipped_path("translation.toml"))
out = Path(tempfile.mkdtemp(prefix="scenariobench-"))

doc = execute_run(cfg, out)
print(report_table(doc))

# everything is on disk too: traces per repetition, report.json, csv/ per section
for p in sorted(out.rglob("*")):
    if p.is_file():
        print(p.relative_to(out))
