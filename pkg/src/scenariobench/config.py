"""Run configuration files (TOML).

::

    [scenario]
    spec = "ecommerce.scenario"      # relative to this file

    [distill]
    enabled = true
    fraction_threshold = 0.01
    rules = { R5 = false }           # optional per-rule toggles

    [workload]
    mode = "closed"
    users = 2000
    think_time_mean_ms = 30000.0
    warmup_ms = 30000.0
    total_requests = 20000
    query_mix = { text = 0.99, image = 0.01 }

    [run]
    engine = "simulate"              # or "live"
    output_dir = "runs/ecommerce"    # relative to the working directory
    seed = 20211
    repetitions = 3

    [live]                           # engine = "live" only
    endpoint = "http://127.0.0.1:8080/query"
    payload = { text = "payloads/text.json" }
    content_type = "application/json"
    timeout_s = 30.0
    retries = 2

    [analysis]                       # optional
    baseline = "runs/real-system/rep-0"
    tradeoffs = "offline_training.json"
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .distill import RULES, DistillConfig
from .workload import WorkloadError, WorkloadProfile


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class LiveSettings:
    endpoint: str
    payload: dict[str, Path]
    content_type: str = "application/octet-stream"
    timeout_s: float = 30.0
    retries: int = 2


@dataclass(frozen=True)
class RunConfig:
    scenario_path: Path
    workload: WorkloadProfile
    distill: DistillConfig = field(default_factory=DistillConfig)
    distill_enabled: bool = True
    engine: str = "simulate"
    output_dir: Path = Path("runs")
    seed: int = 0
    repetitions: int = 3
    live: LiveSettings | None = None
    baseline: Path | None = None
    tradeoffs: Path | None = None

    def seed_for(self, rep: int) -> int:
        return self.seed + rep


def _section(doc: dict, name: str, allowed: set[str], required: bool = False) -> dict:
    sec = doc.get(name)
    if sec is None:
        if required:
            raise ConfigError(f"missing [{name}] section")
        return {}
    if not isinstance(sec, dict):
        raise ConfigError(f"[{name}] must be a table")
    unknown = sorted(set(sec) - allowed)
    if unknown:
        raise ConfigError(f"[{name}]: unknown key(s) {', '.join(unknown)}")
    return sec


def parse_run_config(doc: dict, base_dir: Path) -> RunConfig:
    unknown = sorted(set(doc) - {"scenario", "distill", "workload", "run", "live", "analysis"})
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(unknown)}")
    scen = _section(doc, "scenario", {"spec"}, required=True)
    if "spec" not in scen:
        raise ConfigError("[scenario] needs 'spec'")
    spec = base_dir / scen["spec"]
    if not spec.is_file():
        raise ConfigError(f"scenario spec not found: {spec}")

    dist = _section(doc, "distill", {"enabled", "fraction_threshold", "rules"})
    rules = dist.get("rules", {})
    if set(rules) - set(RULES):
        raise ConfigError(f"[distill].rules: unknown rule(s) {', '.join(sorted(set(rules) - set(RULES)))}")
    try:
        dcfg = DistillConfig(float(dist.get("fraction_threshold", 0.01)),
                             {r: bool(rules.get(r, True)) for r in RULES})
    except ValueError as exc:
        raise ConfigError(f"[distill]: {exc}") from exc

    run = _section(doc, "run", {"engine", "output_dir", "seed", "repetitions"})
    engine = run.get("engine", "simulate")
    if engine not in ("simulate", "live"):
        raise ConfigError(f"[run].engine must be 'simulate' or 'live', got {engine!r}")
    reps = run.get("repetitions", 3)
    if not isinstance(reps, int) or reps < 1:
        raise ConfigError("[run].repetitions must be an integer >= 1")
    seed = run.get("seed", 0)

    wl = _section(doc, "workload", {"mode", "users", "arrival_rate", "think_time_mean_ms", "warmup_ms",
                                    "total_requests", "query_mix"}, required=True)
    try:
        profile = WorkloadProfile.from_dict({**wl, "seed": seed})
    except WorkloadError as exc:
        raise ConfigError(f"[workload]: {exc}") from exc

    live = None
    if engine == "live":
        lv = _section(doc, "live", {"endpoint", "payload", "content_type", "timeout_s", "retries"}, required=True)
        if "endpoint" not in lv or "payload" not in lv:
            raise ConfigError("[live] needs 'endpoint' and 'payload'")
        payload = {q: base_dir / p for q, p in lv["payload"].items()}
        for q, p in payload.items():
            if not p.is_file():
                raise ConfigError(f"[live].payload: file for {q!r} not found: {p}")
        live = LiveSettings(lv["endpoint"], payload, lv.get("content_type", "application/octet-stream"),
                            float(lv.get("timeout_s", 30.0)), int(lv.get("retries", 2)))

    ana = _section(doc, "analysis", {"baseline", "tradeoffs"})
    baseline = base_dir / ana["baseline"] if "baseline" in ana else None
    tradeoffs = base_dir / ana["tradeoffs"] if "tradeoffs" in ana else None
    for label, p in (("baseline", baseline), ("tradeoffs", tradeoffs)):
        if p is not None and not p.exists():
            raise ConfigError(f"[analysis].{label} not found: {p}")

    return RunConfig(spec, profile, dcfg, bool(dist.get("enabled", True)), engine,
                     Path(run.get("output_dir", "runs")), seed, reps, live, baseline, tradeoffs)


def load_run_config(path) -> RunConfig:
    path = Path(path)
    try:
        doc = tomllib.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return parse_run_config(doc, path.parent)
