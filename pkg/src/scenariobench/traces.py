"""Per-request traces and their CSV formats.

Stage CSV (one row per stage)::

    request_id,query_type,user,node_id,enqueue_ms,start_ms,end_ms,warmup

Request summary CSV (one row per request)::

    request_id,query_type,arrival_ms,completion_ms,latency_ms,warmup

``user`` is empty for open-loop requests; ``warmup`` is 0 or 1. Floats are
written with ``repr`` so a write/read cycle is exact.
"""

from __future__ import annotations

import csv
import io
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

STAGE_COLUMNS = ("request_id", "query_type", "user", "node_id", "enqueue_ms", "start_ms", "end_ms", "warmup")
REQUEST_COLUMNS = ("request_id", "query_type", "arrival_ms", "completion_ms", "latency_ms", "warmup")
ERROR_COLUMNS = ("request_id", "query_type", "user", "arrival_ms", "status", "error")


@dataclass(frozen=True)
class StageRecord:
    node_id: str
    enqueue_ms: float
    start_ms: float
    end_ms: float

    @property
    def sojourn_ms(self) -> float:
        return self.end_ms - self.enqueue_ms

    @property
    def wait_ms(self) -> float:
        return self.start_ms - self.enqueue_ms


@dataclass(frozen=True)
class RequestTrace:
    request_id: int
    query_type: str
    user_index: int | None
    arrival_ms: float
    completion_ms: float
    stages: tuple[StageRecord, ...]
    warmup: bool = False
    failed: bool = False
    status: int | None = None
    error: str | None = None

    @property
    def latency_ms(self) -> float:
        return self.completion_ms - self.arrival_ms

    @property
    def measured(self) -> bool:
        return not self.warmup and not self.failed


class TraceFormatError(ValueError):
    def __init__(self, message: str, path=None, line: int | None = None):
        where = ", ".join(p for p in (str(path) if path else None, f"line {line}" if line else None) if p)
        super().__init__(f"{where}: {message}" if where else message)
        self.path = path
        self.line = line


@dataclass(frozen=True)
class StageViolation:
    line: int
    request_id: int
    node_id: str
    message: str

    def __str__(self):
        return f"line {self.line}: request {self.request_id} node {self.node_id}: {self.message}"


class TraceValidationError(ValueError):
    def __init__(self, violations: list[StageViolation], path=None):
        self.violations = violations
        self.path = path
        head = "; ".join(map(str, violations[:5]))
        more = f" (+{len(violations) - 5} more)" if len(violations) > 5 else ""
        super().__init__(f"{path}: {len(violations)} timestamp violation(s): {head}{more}")


def atomic_write_text(path, text: str) -> None:
    """Write via a temp file in the same directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def stage_csv(traces: Iterable[RequestTrace]) -> str:
    rows = []
    for t in traces:
        if t.failed:
            continue
        user = "" if t.user_index is None else t.user_index
        for s in t.stages:
            rows.append((t.request_id, t.query_type, user, s.node_id, repr(s.enqueue_ms),
                         repr(s.start_ms), repr(s.end_ms), int(t.warmup)))
    return _csv_text(STAGE_COLUMNS, rows)


def request_csv(traces: Iterable[RequestTrace]) -> str:
    rows = [(t.request_id, t.query_type, repr(t.arrival_ms), repr(t.completion_ms), repr(t.latency_ms),
             int(t.warmup)) for t in traces if not t.failed]
    return _csv_text(REQUEST_COLUMNS, rows)


def error_csv(traces: Iterable[RequestTrace]) -> str:
    rows = [(t.request_id, t.query_type, "" if t.user_index is None else t.user_index, repr(t.arrival_ms),
             "" if t.status is None else t.status, t.error or "") for t in traces if t.failed]
    return _csv_text(ERROR_COLUMNS, rows)


def write_traces(traces: list[RequestTrace], directory, prefix: str = "") -> dict[str, Path]:
    """Write stage, request and (if any) error CSVs; return their paths."""
    directory = Path(directory)
    paths = {"stages": directory / f"{prefix}stages.csv", "requests": directory / f"{prefix}requests.csv"}
    atomic_write_text(paths["stages"], stage_csv(traces))
    atomic_write_text(paths["requests"], request_csv(traces))
    if any(t.failed for t in traces):
        paths["errors"] = directory / f"{prefix}errors.csv"
        atomic_write_text(paths["errors"], error_csv(traces))
    return paths


def _rows(path, columns):
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or tuple(header) != columns:
            raise TraceFormatError(f"expected header {','.join(columns)}", path, 1)
        for row in reader:
            if not row:
                continue
            if len(row) != len(columns):
                raise TraceFormatError(f"expected {len(columns)} fields, got {len(row)}", path, reader.line_num)
            yield reader.line_num, row


def _num(value: str, path, line: int, kind=float):
    try:
        return kind(value)
    except ValueError:
        raise TraceFormatError(f"bad number {value!r}", path, line) from None


def _flag(value: str, path, line: int) -> bool:
    if value not in ("0", "1"):
        raise TraceFormatError(f"warmup must be 0 or 1, got {value!r}", path, line)
    return value == "1"


def read_request_csv(path) -> dict[int, tuple[str, float, float, bool]]:
    """request_id -> (query_type, arrival_ms, completion_ms, warmup)."""
    out = {}
    for line, row in _rows(path, REQUEST_COLUMNS):
        rid = _num(row[0], path, line, int)
        out[rid] = (row[1], _num(row[2], path, line), _num(row[3], path, line), _flag(row[5], path, line))
    return out


def ingest_stage_log(path, requests_path=None) -> list[RequestTrace]:
    """Rebuild multi-stage traces from a stage CSV, sorted by request id.

    Without a request summary, arrival is the earliest stage enqueue and
    completion the latest stage end. Raises TraceFormatError for malformed rows
    and TraceValidationError listing every timestamp inversion.
    """
    grouped: dict[int, dict] = {}
    violations: list[StageViolation] = []
    for line, row in _rows(path, STAGE_COLUMNS):
        rid = _num(row[0], path, line, int)
        enq, start, end = (_num(v, path, line) for v in row[4:7])
        user = None if row[2] == "" else _num(row[2], path, line, int)
        warm = _flag(row[7], path, line)
        node = row[3]
        if not enq <= start:
            violations.append(StageViolation(line, rid, node, f"start {start} before enqueue {enq}"))
        if not start <= end:
            violations.append(StageViolation(line, rid, node, f"end {end} before start {start}"))
        rec = grouped.get(rid)
        if rec is None:
            rec = grouped[rid] = {"query_type": row[1], "user": user, "warmup": warm, "stages": [], "line": line}
        elif (rec["query_type"], rec["user"], rec["warmup"]) != (row[1], user, warm):
            raise TraceFormatError(f"request {rid} changes query_type/user/warmup between rows", path, line)
        rec["stages"].append(StageRecord(node, enq, start, end))
    if violations:
        raise TraceValidationError(violations, path)
    summary = read_request_csv(requests_path) if requests_path is not None else {}
    traces = []
    for rid in sorted(set(grouped) | set(summary)):
        rec = grouped.get(rid)
        if rec is None:
            qtype, arrival, completion, warm = summary[rid]
            traces.append(RequestTrace(rid, qtype, None, arrival, completion, (), warm))
            continue
        stages = tuple(rec["stages"])
        if rid in summary:
            qtype, arrival, completion, warm = summary[rid]
            if (qtype, warm) != (rec["query_type"], rec["warmup"]):
                raise TraceFormatError(f"request {rid} disagrees with the request summary", path, rec["line"])
        else:
            arrival = min(s.enqueue_ms for s in stages)
            completion = max(s.end_ms for s in stages)
        traces.append(RequestTrace(rid, rec["query_type"], rec["user"], arrival, completion, stages,
                                   rec["warmup"]))
    return traces


def load_run(directory, prefix: str = "") -> list[RequestTrace]:
    """Load the traces written by :func:`write_traces` from ``directory``."""
    directory = Path(directory)
    req = directory / f"{prefix}requests.csv"
    return ingest_stage_log(directory / f"{prefix}stages.csv", req if req.exists() else None)
