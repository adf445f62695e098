"""Drive a deployed entry endpoint over HTTP with a workload profile.

Each request becomes a single-stage trace on node ``online-server`` with
times in ms from the start of the run (local monotonic clock). In open-loop
mode requests go out on schedule whether or not earlier ones have returned,
and the scheduled time is recorded as the arrival so late sends still count
against latency.
"""

from __future__ import annotations

import http.client
import logging
import socket
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Mapping
from urllib.parse import urlsplit

from .traces import RequestTrace, StageRecord, write_traces
from .workload import WorkloadProfile, generate_closed_user, generate_open

log = logging.getLogger(__name__)

LIVE_NODE = "online-server"


class LiveConfigError(ValueError):
    pass


class LiveRunAborted(RuntimeError):
    def __init__(self, message: str, traces: list[RequestTrace], saved_to: Path | None = None):
        super().__init__(message)
        self.traces = traces
        self.saved_to = saved_to


class _ConnectionFailed(Exception):
    pass


def load_payloads(payload_map: Mapping[str, str | Path], query_mix: Mapping[str, float]) -> dict[str, bytes]:
    missing = sorted(q for q, p in query_mix.items() if p > 0 and q not in payload_map)
    if missing:
        raise LiveConfigError(f"no payload file for query type(s): {', '.join(missing)}")
    out = {}
    for q, path in payload_map.items():
        try:
            out[q] = Path(path).read_bytes()
        except OSError as exc:
            raise LiveConfigError(f"payload for {q!r}: {exc}") from exc
    return out


class _Client:
    """One keep-alive connection; reconnects on failure up to ``retries`` times."""

    def __init__(self, url: str, content_type: str, timeout_s: float, retries: int):
        parts = urlsplit(url)
        if parts.scheme not in ("http", "https"):
            raise LiveConfigError(f"endpoint must be an http(s) URL, got {url!r}")
        self.https = parts.scheme == "https"
        self.host = parts.hostname
        self.port = parts.port
        self.path = (parts.path or "/") + (f"?{parts.query}" if parts.query else "")
        self.headers = {"Content-Type": content_type}
        self.timeout = timeout_s
        self.retries = retries
        self.conn = None

    def _connect(self):
        cls = http.client.HTTPSConnection if self.https else http.client.HTTPConnection
        self.conn = cls(self.host, self.port, timeout=self.timeout)
        self.conn.connect()
        # small request/response pairs otherwise stall on delayed ACKs
        self.conn.sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)

    def post(self, body: bytes) -> tuple[int | None, str | None]:
        """Return (status, error). Raises _ConnectionFailed once retries are exhausted."""
        last = None
        for _ in range(self.retries + 1):
            try:
                if self.conn is None:
                    self._connect()
                self.conn.request("POST", self.path, body=body, headers=self.headers)
                resp = self.conn.getresponse()
                resp.read()
                return resp.status, None
            except socket.timeout:
                self.close()
                return None, "timeout"
            except (OSError, http.client.HTTPException) as exc:
                last = exc
                self.close()
        raise _ConnectionFailed(f"{type(last).__name__}: {last}")

    def close(self):
        if self.conn is not None:
            self.conn.close()
            self.conn = None


def run_live(endpoint: str, profile: WorkloadProfile, payload_map: Mapping[str, str | Path],
             content_type: str = "application/octet-stream", timeout_s: float = 30.0, retries: int = 2,
             output_dir: str | Path | None = None, max_workers: int = 256) -> list[RequestTrace]:
    """Issue the profile's requests against ``endpoint``; return traces sorted by id.

    Non-2xx responses and timeouts become failed traces. A connection that
    still fails after ``retries`` reconnects aborts the run with
    :class:`LiveRunAborted`; partial traces are written to ``output_dir``
    when one is given.
    """
    payloads = load_payloads(payload_map, profile.query_mix)
    _Client(endpoint, content_type, timeout_s, retries)  # validates the URL before any request
    t0 = time.perf_counter()
    now = lambda: (time.perf_counter() - t0) * 1000.0  # noqa: E731
    traces: list[RequestTrace] = []
    lock = threading.Lock()
    abort = threading.Event()
    failure: list[str] = []
    local = threading.local()

    def client() -> _Client:
        c = getattr(local, "client", None)
        if c is None:
            c = local.client = _Client(endpoint, content_type, timeout_s, retries)
        return c

    def send(rid, qtype, user, arrival, warm) -> float:
        sent = now()
        try:
            status, error = client().post(payloads[qtype])
        except _ConnectionFailed as exc:
            with lock:
                failure.append(str(exc))
            abort.set()
            return now()
        end = now()
        ok = status is not None and 200 <= status < 300
        trace = RequestTrace(rid, qtype, user, arrival, end, (StageRecord(LIVE_NODE, arrival, sent, end),),
                             warm, failed=not ok, status=status,
                             error=error or (None if ok else f"HTTP {status}"))
        with lock:
            traces.append(trace)
        return end

    if profile.mode == "closed":
        counters = {"next_id": 0, "measured": 0}

        def user_loop(u: int):
            gen = generate_closed_user(profile, u)
            time.sleep(gen.think_time() / 1000.0)
            while not abort.is_set():
                with lock:
                    if counters["measured"] >= profile.total_requests:
                        return
                    rid = counters["next_id"]
                    counters["next_id"] += 1
                    t = now()
                    warm = t < profile.warmup_ms
                    if not warm:
                        counters["measured"] += 1
                send(rid, gen.query_type(), u, t, warm)
                time.sleep(gen.think_time() / 1000.0)
            client().close()

        threads = [threading.Thread(target=user_loop, args=(u,), daemon=True) for u in range(profile.users)]
        for th in threads:
            th.start()
        for th in threads:
            th.join()
    else:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            for ev in generate_open(profile):
                if abort.is_set():
                    break
                delay = ev.arrival_ms - now()
                if delay > 0:
                    time.sleep(delay / 1000.0)
                pool.submit(send, ev.request_id, ev.query_type, None, ev.arrival_ms, ev.warmup)

    traces.sort(key=lambda t: t.request_id)
    if abort.is_set():
        saved = None
        if output_dir is not None:
            saved = Path(output_dir)
            write_traces(traces, saved)
        raise LiveRunAborted(f"connection to {endpoint} failed: {failure[0]}", traces, saved)
    return traces
