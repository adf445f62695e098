"""``scenariobench`` command line.

Exit codes: 0 success, 2 configuration or usage error, 3 runtime failure,
4 validation failure (invalid scenario, rule precondition, malformed traces).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import analysis
from .config import ConfigError, RunConfig, load_run_config
from .distill import RULES, DistillConfig, DistillError, distill
from .live import LiveConfigError, LiveRunAborted, run_live
from .queueing import MM1Params, NetworkParams, UnstableQueueError, mm1_mean, mm1_percentile, network_mean
from .scenario import ScenarioError, load_scenario, serialize_scenario, validate_graph
from .sim import SimulationError, node_loads, simulate
from .traces import TraceFormatError, TraceValidationError, atomic_write_text, ingest_stage_log, load_run, write_traces
from .workload import WorkloadError, WorkloadProfile

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3
EXIT_VALIDATION = 4

log = logging.getLogger("scenariobench")


class CLIError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _setup_logging():
    level = os.environ.get("SCENARIOBENCH_LOG", "WARNING").upper()
    log.setLevel(getattr(logging, level, logging.WARNING))
    if not log.handlers:
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
        log.addHandler(handler)


def _key_values(text: str, what: str) -> dict[str, str]:
    out = {}
    for part in filter(None, (p.strip() for p in text.split(","))):
        if "=" not in part:
            raise CLIError(f"{what}: expected key=value, got {part!r}", EXIT_CONFIG)
        k, v = part.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _mix(text: str) -> dict[str, float]:
    try:
        return {k: float(v) for k, v in _key_values(text, "--mix").items()}
    except ValueError as exc:
        raise CLIError(f"--mix: {exc}", EXIT_CONFIG) from exc


def _load_tradeoffs(path) -> dict:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return {name: [analysis.TradeoffPoint(**p) for p in pts] for name, pts in doc.items()}


def _scenario_maps(g):
    grouping = {n.id: n.module_name for n in g.nodes}
    kinds = {n.id: n.kind for n in g.nodes if n.interior}
    return grouping, kinds


def _load_traces(path: Path):
    if path.is_dir():
        return load_run(path)
    req = path.with_name(path.name.replace("stages.csv", "requests.csv"))
    return ingest_stage_log(path, req if req != path and req.exists() else None)


def write_report(doc: dict, out_dir: Path) -> None:
    atomic_write_text(out_dir / "report.json", analysis.dumps_report(doc))
    atomic_write_text(out_dir / "report.txt", analysis.report_table(doc))
    for section, text in analysis.report_csvs(doc).items():
        atomic_write_text(out_dir / "csv" / f"{section}.csv", text)


# -- run orchestration ---------------------------------------------------------------

def execute_run(cfg: RunConfig, output_dir: Path | None = None) -> dict:
    """Distill, drive, trace and analyze every repetition; return the report document."""
    out = Path(output_dir) if output_dir is not None else cfg.output_dir
    g = load_scenario(cfg.scenario_path)
    if cfg.distill_enabled:
        g, report = distill(g, cfg.distill)
        atomic_write_text(out / "distill_report.json", report.dumps() + "\n")
        atomic_write_text(out / "distill_report.txt", report.to_table() + "\n")
    atomic_write_text(out / "distilled.scenario", serialize_scenario(g))
    missing = [q for q, p in cfg.workload.query_mix.items() if p > 0 and q not in g.query_types]
    if missing:
        raise CLIError(f"workload query mix uses type(s) not routed by the scenario: {', '.join(missing)}",
                       EXIT_CONFIG)
    if cfg.workload.mode == "open" and cfg.engine == "simulate":
        for load in node_loads(g, cfg.workload):
            if load.level != "ok":
                log.warning("node %s at utilization %.3f (%s)", load.node_id, load.utilization, load.level)
    runs = []
    for rep in range(cfg.repetitions):
        seed = cfg.seed_for(rep)
        log.info("repetition %d/%d (seed %d)", rep + 1, cfg.repetitions, seed)
        if cfg.engine == "simulate":
            traces = simulate(g, cfg.workload, seed)
        else:
            lv = cfg.live
            traces = run_live(lv.endpoint, cfg.workload.with_seed(seed), lv.payload, lv.content_type,
                              lv.timeout_s, lv.retries, output_dir=out / f"rep-{rep}")
        write_traces(traces, out / f"rep-{rep}")
        runs.append(traces)
    grouping, kinds = _scenario_maps(g)
    if cfg.engine == "live":
        grouping, kinds = {}, {}
    baseline = _load_traces(cfg.baseline) if cfg.baseline is not None else None
    tradeoffs = _load_tradeoffs(cfg.tradeoffs) if cfg.tradeoffs is not None else None
    doc = analysis.build_report(runs, grouping, kinds, baseline, tradeoffs)
    write_report(doc, out)
    return doc


# -- subcommands -----------------------------------------------------------------------

def cmd_run(args) -> int:
    cfg = load_run_config(args.config)
    doc = execute_run(cfg, args.output_dir)
    out = args.output_dir or cfg.output_dir
    print(analysis.report_table(doc), end="")
    print(f"artifacts written to {out}")
    return EXIT_OK


def cmd_validate(args) -> int:
    g = load_scenario(args.spec)
    problems = validate_graph(g)
    for v in problems:
        print(v)
    if not problems:
        print(f"{args.spec}: valid ({len(g.nodes)} nodes, {len(g.edges)} edges)")
    return EXIT_VALIDATION if problems else EXIT_OK


def cmd_distill(args) -> int:
    g = load_scenario(args.spec)
    disabled = {r.strip().upper() for r in args.disable.split(",") if r.strip()} if args.disable else set()
    if disabled - set(RULES):
        raise CLIError(f"--disable: unknown rule(s) {', '.join(sorted(disabled - set(RULES)))}", EXIT_CONFIG)
    cfg = DistillConfig(args.threshold, {r: r not in disabled for r in RULES})
    out_g, report = distill(g, cfg)
    spec = Path(args.spec)
    out = Path(args.output) if args.output else Path(spec.stem + ".distilled.scenario")
    rep = Path(args.report) if args.report else out.with_name(out.stem + ".report.json")
    atomic_write_text(out, serialize_scenario(out_g))
    atomic_write_text(rep, report.dumps() + "\n")
    print(report.to_table())
    print(f"distilled spec: {out}\nreport: {rep}")
    return EXIT_OK


def _profile_from_args(args) -> WorkloadProfile:
    if args.config:
        cfg = load_run_config(args.config)
        prof = cfg.workload
        return prof if args.seed is None else prof.with_seed(args.seed)
    if args.mix is None:
        raise CLIError("give --config or workload flags including --mix", EXIT_CONFIG)
    return WorkloadProfile(
        mode=args.mode, total_requests=args.requests, query_mix=_mix(args.mix),
        seed=args.seed or 0, users=args.users, arrival_rate=args.rate,
        think_time_mean_ms=args.think_ms, warmup_ms=args.warmup_ms,
    )


def cmd_simulate(args) -> int:
    g = load_scenario(args.spec)
    if args.distill:
        g, _ = distill(g)
    profile = _profile_from_args(args)
    traces = simulate(g, profile)
    paths = write_traces(traces, args.output)
    measured = [t for t in traces if t.measured]
    print(f"{len(traces)} requests ({len(measured)} measured) -> {paths['stages']}, {paths['requests']}")
    return EXIT_OK


def cmd_run_live(args) -> int:
    profile = _profile_from_args(args)
    payload = {q: Path(p) for q, p in _key_values(args.payload, "--payload").items()}
    try:
        traces = run_live(args.endpoint, profile, payload, args.content_type, args.timeout, args.retries,
                          output_dir=args.output)
    except LiveRunAborted as exc:
        where = f"; partial traces in {exc.saved_to}" if exc.saved_to else ""
        raise CLIError(f"{exc} ({len(exc.traces)} requests recorded{where})", EXIT_RUNTIME) from exc
    write_traces(traces, args.output)
    failed = sum(1 for t in traces if t.failed)
    print(f"{len(traces)} requests, {failed} failed -> {args.output}")
    return EXIT_OK


def _emit(doc: dict, fmt: str, output: str | None) -> None:
    if fmt == "json":
        text = analysis.dumps_report(doc)
    elif fmt == "table":
        text = analysis.report_table(doc)
    else:
        csvs = analysis.report_csvs(doc)
        if output:
            for section, body in csvs.items():
                atomic_write_text(Path(output) / f"{section}.csv", body)
            print(f"csv sections written to {output}")
            return
        text = "".join(f"# {section}\n{body}\n" for section, body in csvs.items())
    if output:
        atomic_write_text(Path(output), text)
    else:
        print(text, end="")


def _report_doc(args, trace_paths) -> dict:
    runs = [_load_traces(Path(p)) for p in trace_paths]
    grouping = kinds = None
    if args.scenario:
        grouping, kinds = _scenario_maps(load_scenario(args.scenario))
    baseline = _load_traces(Path(args.validate)) if getattr(args, "validate", None) else None
    tradeoffs = _load_tradeoffs(args.tradeoffs) if getattr(args, "tradeoffs", None) else None
    return analysis.build_report(runs, grouping, kinds, baseline, tradeoffs)


def cmd_analyze(args) -> int:
    _emit(_report_doc(args, [args.traces]), args.format, args.output)
    return EXIT_OK


def cmd_report(args) -> int:
    _emit(_report_doc(args, args.traces), args.format, args.output)
    return EXIT_OK


def cmd_predict(args) -> int:
    rows = []
    doc: dict = {"mm1": [], "network": None}
    if args.mu is not None:
        if not args.lam:
            raise CLIError("--mu needs at least one --lambda", EXIT_CONFIG)
        for lam in args.lam:
            params = MM1Params(args.mu, lam)
            entry = {"mu": args.mu, "lambda": lam, "mean_ms": mm1_mean(params),
                     "percentiles_ms": {str(p): mm1_percentile(params, p) for p in args.p}}
            doc["mm1"].append(entry)
            rows.append([f"{args.mu:g}", f"{lam:g}", f"{entry['mean_ms']:.1f}",
                         *(f"{v:.1f}" for v in entry["percentiles_ms"].values())])
    if args.network:
        net = NetworkParams.from_json(json.loads(Path(args.network).read_text(encoding="utf-8")))
        doc["network"] = {**net.to_json(), "mean_ms": network_mean(net)}
    if args.mu is None and not args.network:
        raise CLIError("give --mu/--lambda or --network", EXIT_CONFIG)
    if args.json:
        print(json.dumps(doc, indent=2, sort_keys=True))
        return EXIT_OK
    if rows:
        header = ["mu", "lambda", "mean_ms", *(f"p{p:g}_ms" for p in args.p)]
        widths = [max(len(h), *(len(r[i]) for r in rows)) for i, h in enumerate(header)]
        print("  ".join(h.rjust(w) for h, w in zip(header, widths)))
        for r in rows:
            print("  ".join(c.rjust(w) for c, w in zip(r, widths)))
    if doc["network"] is not None:
        print(f"network mean_ms: {doc['network']['mean_ms']:.1f} (lambda {net.lam:g}, {len(net.nodes)} nodes)")
    return EXIT_OK


def _workload_flags(p):
    p.add_argument("--config", help="take the workload from this run config")
    p.add_argument("--mode", choices=("open", "closed"), default="open")
    p.add_argument("--rate", type=float, help="open-loop arrival rate, req/s")
    p.add_argument("--users", type=int, default=1)
    p.add_argument("--think-ms", type=float, help="closed-loop mean think time, ms")
    p.add_argument("--warmup-ms", type=float, default=0.0)
    p.add_argument("--requests", type=int, default=1000, help="measured requests")
    p.add_argument("--mix", help="query mix, e.g. text=0.99,image=0.01")
    p.add_argument("--seed", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scenariobench", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="distill, drive and analyze per a run config")
    p.add_argument("--config", required=True)
    p.add_argument("--output-dir", type=Path)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("validate", help="check a scenario spec")
    p.add_argument("spec")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("distill", help="apply the distilling rules to a scenario spec")
    p.add_argument("spec")
    p.add_argument("-o", "--output")
    p.add_argument("--report")
    p.add_argument("--threshold", type=float, default=0.01)
    p.add_argument("--disable", help="comma-separated rules to skip, e.g. R4,R5")
    p.set_defaults(func=cmd_distill)

    p = sub.add_parser("simulate", help="simulate a scenario and write trace CSVs")
    p.add_argument("spec")
    p.add_argument("-o", "--output", required=True, type=Path)
    p.add_argument("--distill", action="store_true", help="distill before simulating")
    _workload_flags(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("run-live", help="drive a live HTTP endpoint")
    p.add_argument("--endpoint", required=True)
    p.add_argument("--payload", required=True, help="query_type=file pairs, e.g. text=q.json,image=q.png")
    p.add_argument("--content-type", default="application/octet-stream")
    p.add_argument("--timeout", type=float, default=30.0, help="per-request timeout, s")
    p.add_argument("--retries", type=int, default=2)
    p.add_argument("-o", "--output", required=True, type=Path)
    _workload_flags(p)
    p.set_defaults(func=cmd_run_live)

    for name, helptext in (("analyze", "summarize one trace set"), ("report", "merge several runs into a report")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("traces", nargs=1 if name == "analyze" else "+",
                       help="run directories or stage CSV files")
        p.add_argument("--scenario", help="scenario spec for module grouping and AI split")
        p.add_argument("--format", choices=("json", "table", "csv"), default="table")
        p.add_argument("-o", "--output")
        p.add_argument("--tradeoffs", help="JSON file of training tradeoff points")
        if name == "report":
            p.add_argument("--validate", metavar="BASELINE", help="baseline traces for deviation")
        p.set_defaults(func=cmd_analyze if name == "analyze" else cmd_report)

    p = sub.add_parser("predict", help="M/M/1 and queueing-network latency predictions")
    p.add_argument("--mu", type=float, help="service rate, req/s")
    p.add_argument("--lambda", dest="lam", type=float, action="append", help="arrival rate, req/s (repeatable)")
    p.add_argument("--p", type=float, action="append", help="percentile (repeatable, default 99)")
    p.add_argument("--network", help="NetworkParams JSON file")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_predict)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "p", None) is None and args.command == "predict":
        args.p = [99.0]
    if args.command == "analyze":
        args.traces = args.traces[0]
    try:
        return args.func(args)
    except CLIError as exc:
        print(f"scenariobench {args.command}: {exc}", file=sys.stderr)
        return exc.code
    except (ConfigError, WorkloadError, LiveConfigError) as exc:
        print(f"scenariobench {args.command}: config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ScenarioError, TraceFormatError, TraceValidationError) as exc:
        kind = "distill" if isinstance(exc, DistillError) else "simulate" if isinstance(exc, SimulationError) \
            else "validation"
        print(f"scenariobench {args.command}: {kind}: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (UnstableQueueError, ValueError) as exc:
        print(f"scenariobench {args.command}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"scenariobench {args.command}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, RuntimeError) as exc:
        print(f"scenariobench {args.command}: runtime: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
