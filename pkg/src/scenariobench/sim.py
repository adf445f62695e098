"""Deterministic discrete-event simulation of a scenario graph under a workload.

Every interior node is a FIFO queue in front of ``servers`` identical servers.
Entry and sink nodes take no time. A request follows one successor per
probabilistic node (chosen by its query type's routing) and every routed
successor of a fanout node; the fanout's join waits for all branches and the
request continues at the latest branch end.
"""

from __future__ import annotations

import bisect
import heapq
from collections import deque
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .scenario import (
    ScenarioError,
    ScenarioGraph,
    ServiceDistribution,
    check_query_mix,
    join_nodes,
    mix_visit_ratios,
    topological_order,
    validate_graph,
)
from .traces import RequestTrace, StageRecord
from .workload import (
    ROUTING_STREAM,
    SERVICE_STREAM,
    WorkloadProfile,
    generate_closed_user,
    generate_open,
    stream_rng,
)

_BLOCK = 4096

# event priorities at equal timestamps: completions free servers before new work arrives
_DEPART, _ARRIVE, _ISSUE = 0, 1, 2


class SimulationError(ScenarioError):
    def __init__(self, message: str, node_id: str | None = None):
        super().__init__(message)
        self.node_id = node_id


def _sampler(dist: ServiceDistribution, rng: np.random.Generator) -> Callable[[], float]:
    if dist.dist == "constant":
        value = dist.value_ms
        return lambda: value
    if dist.dist == "exponential":
        draw = lambda: rng.exponential(dist.mean_ms, _BLOCK)  # noqa: E731
    elif dist.dist == "lognormal":
        draw = lambda: rng.lognormal(dist.mu, dist.sigma, _BLOCK)  # noqa: E731
    else:
        samples = np.asarray(dist.samples, dtype=float)
        draw = lambda: rng.choice(samples, _BLOCK)  # noqa: E731
    buf: list[float] = []

    def sample() -> float:
        if not buf:
            buf.extend(draw().tolist()[::-1])
        return buf.pop()

    return sample


class _Station:
    __slots__ = ("id", "pos", "kind", "servers", "busy", "queue", "sample", "routes", "fanout", "joins")


class _Request:
    __slots__ = ("rid", "qtype", "user", "arrival", "completion", "stages", "warm", "live")

    def __init__(self, rid, qtype, user, arrival, warm):
        self.rid = rid
        self.qtype = qtype
        self.user = user
        self.arrival = arrival
        self.completion = arrival
        self.stages = []
        self.warm = warm
        self.live = 1


class Simulator:
    """One simulation run. Use :func:`simulate` unless you need the internals."""

    def __init__(self, g: ScenarioGraph, profile: WorkloadProfile, seed: int | None = None):
        problems = validate_graph(g)
        if problems:
            raise SimulationError("scenario graph is invalid: " + "; ".join(map(str, problems)))
        check_query_mix(g, profile.query_mix)
        self.g = g
        self.profile = profile if seed is None else profile.with_seed(seed)
        self.seed = self.profile.seed
        order = topological_order(g)
        self.index = {nid: i for i, nid in enumerate(order)}
        qtypes = [q for q in sorted(profile.query_mix) if profile.query_mix[q] > 0]
        joins = {q: join_nodes(g, q, order) for q in qtypes}
        self.stations: list[_Station] = []
        for i, nid in enumerate(order):
            node = g.by_id[nid]
            st = _Station()
            st.id, st.pos, st.kind, st.servers = nid, i, node.kind, node.servers
            st.busy, st.queue, st.fanout = 0, deque(), node.fanout
            st.sample = {}
            if node.interior:
                made: dict[int, Callable] = {}
                dists = [node.service_time] + [node.service_time_by_type[q] for q in sorted(node.service_time_by_type)]
                for q in qtypes:
                    d = node.service_for(q)
                    k = next(j for j, x in enumerate(dists) if x is d)
                    if k not in made:
                        made[k] = _sampler(d, stream_rng(self.seed, SERVICE_STREAM, i, k))
                    st.sample[q] = made[k]
            st.routes = {}
            st.joins = {}
            for q in qtypes:
                outs = [e for e in g.out_edges(nid) if e.prob(q) > 0]
                succ = [self.index[e.dst] for e in outs]
                if node.fanout:
                    st.routes[q] = (succ, None)
                    j = joins[q].get(nid)
                    st.joins[q] = None if j is None else self.index[j]
                else:
                    cum = np.cumsum([e.prob(q) for e in outs]).tolist()
                    if cum:
                        cum[-1] = float("inf")
                    st.routes[q] = (succ, cum)
            self.stations.append(st)
        self.entry = self.index[g.entry_id]
        self._route_rng = stream_rng(self.seed, ROUTING_STREAM)
        self._route_buf: list[float] = []

    def _uniform(self) -> float:
        if not self._route_buf:
            self._route_buf = self._route_rng.random(_BLOCK).tolist()[::-1]
        return self._route_buf.pop()

    def run(self) -> list[RequestTrace]:
        prof = self.profile
        stations = self.stations
        events: list = []
        push = heapq.heappush
        seq = 0
        forks: dict[int, list] = {}
        fork_seq = 0
        done: list[_Request] = []
        closed = prof.mode == "closed"
        users = [generate_closed_user(prof, u) for u in range(prof.users)] if closed else []
        issued_measured = 0
        next_rid = 0

        def start(st, req, frames, enq, t):
            nonlocal seq
            st.busy += 1
            seq += 1
            push(events, (t + st.sample[req.qtype](), _DEPART, seq, st, req, frames, enq, t))

        def finish(req):
            nonlocal seq
            done.append(req)
            if closed and issued_measured < prof.total_requests:
                seq += 1
                t = req.completion + users[req.user].think_time()
                push(events, (t, _ISSUE, seq, req.user))

        def arrive(req, idx, frames, t):
            while frames and frames[-1][1] == idx:
                fork = forks[frames[-1][0]]
                fork[0] -= 1
                if t > fork[1]:
                    fork[1] = t
                if fork[0] > 0:
                    req.live -= 1
                    return
                del forks[frames[-1][0]]
                t = fork[1]
                frames = frames[:-1]
            st = stations[idx]
            kind = st.kind
            if kind == "sink":
                req.live -= 1
                if t > req.completion:
                    req.completion = t
                if req.live == 0:
                    finish(req)
            elif kind == "entry":
                route(req, st, frames, t)
            elif st.busy < st.servers:
                start(st, req, frames, t, t)
            else:
                st.queue.append((req, frames, t))

        def route(req, st, frames, t):
            nonlocal fork_seq
            q = req.qtype
            succ, cum = st.routes[q]
            if not succ:
                raise SimulationError(f"query type {q!r} has no route out of node {st.id!r}", st.id)
            if cum is None:
                join = st.joins[q]
                if len(succ) > 1:
                    req.live += len(succ) - 1
                    if join is not None:
                        fork_seq += 1
                        forks[fork_seq] = [len(succ), t]
                        frames = frames + ((fork_seq, join),)
                for s in succ:
                    arrive(req, s, frames, t)
            elif len(succ) == 1:
                arrive(req, succ[0], frames, t)
            else:
                arrive(req, succ[bisect.bisect_right(cum, self._uniform())], frames, t)

        def issue(user, t):
            nonlocal issued_measured, next_rid
            warm = t < prof.warmup_ms
            if not warm:
                issued_measured += 1
            req = _Request(next_rid, users[user].query_type(), user, t, warm)
            next_rid += 1
            arrive(req, self.entry, (), t)

        if closed:
            for u in range(prof.users):
                seq += 1
                push(events, (users[u].think_time(), _ISSUE, seq, u))
            arrivals = None
        else:
            arrivals = generate_open(prof)
            ev = next(arrivals)
            seq += 1
            push(events, (ev.arrival_ms, _ARRIVE, seq, ev))

        pop = heapq.heappop
        while events:
            item = pop(events)
            t, kind = item[0], item[1]
            if kind == _DEPART:
                _, _, _, st, req, frames, enq, started = item
                req.stages.append((st.pos, st.id, enq, started, t))
                st.busy -= 1
                if st.queue:
                    nreq, nframes, nenq = st.queue.popleft()
                    start(st, nreq, nframes, nenq, t)
                route(req, st, frames, t)
            elif kind == _ARRIVE:
                ev = item[3]
                req = _Request(ev.request_id, ev.query_type, None, t, ev.warmup)
                arrive(req, self.entry, (), t)
                ev = next(arrivals, None)
                if ev is not None:
                    seq += 1
                    push(events, (ev.arrival_ms, _ARRIVE, seq, ev))
            else:
                if issued_measured < prof.total_requests:
                    issue(item[3], t)

        done.sort(key=lambda r: r.rid)
        out = []
        for r in done:
            r.stages.sort()
            stages = tuple(StageRecord(nid, enq, s, e) for _, nid, enq, s, e in r.stages)
            out.append(RequestTrace(r.rid, r.qtype, r.user, r.arrival, r.completion, stages, r.warm))
        return out


def simulate(g: ScenarioGraph, profile: WorkloadProfile, seed: int | None = None) -> list[RequestTrace]:
    """Run the workload through the graph; traces sorted by request id.

    ``seed`` overrides ``profile.seed``. Identical inputs give identical traces.
    """
    return Simulator(g, profile, seed).run()


@dataclass(frozen=True)
class NodeLoad:
    node_id: str
    arrival_rate: float  # req/s reaching the node
    capacity: float  # req/s at full utilization of all servers
    utilization: float
    level: str  # "ok" | "warning" | "unstable"


def node_loads(g: ScenarioGraph, profile: WorkloadProfile, warn_at: float = 0.9) -> list[NodeLoad]:
    """Offered load per interior node for an open workload."""
    if profile.mode != "open":
        raise SimulationError("capacity check needs an open-mode profile")
    check_query_mix(g, profile.query_mix)
    ratios = mix_visit_ratios(g, profile.query_mix)
    lam = profile.arrival_rate
    out = []
    for nid in topological_order(g):
        node = g.by_id[nid]
        if not node.interior:
            continue
        rate = sum(lam * profile.query_mix[q] * r[nid] for q, r in ratios.items())
        # busy time offered per second of wall time, in server-seconds
        work = sum(lam * profile.query_mix[q] * r[nid] * node.service_for(q).mean / 1000.0
                   for q, r in ratios.items())
        util = work / node.servers
        mean_s = work / rate if rate > 0 else node.service_time.mean / 1000.0
        capacity = node.servers / mean_s if mean_s > 0 else float("inf")
        level = "unstable" if util >= 1.0 else "warning" if util >= warn_at else "ok"
        out.append(NodeLoad(nid, rate, capacity, util, level))
    return out


def capacity_check(g: ScenarioGraph, profile: WorkloadProfile, warn_at: float = 0.9) -> list[NodeLoad]:
    """Nodes at or above ``warn_at`` utilization (``level`` says whether unstable)."""
    return [n for n in node_loads(g, profile, warn_at) if n.level != "ok"]
