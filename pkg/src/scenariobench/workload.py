"""Request streams: open-loop Poisson arrivals and closed-loop users with think times."""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from typing import Iterator, Mapping, NamedTuple

import numpy as np

ROUTING_TOL = 1e-9

# stream tags keep independent random streams apart for one seed
ARRIVAL_STREAM = 0
USER_STREAM = 1
SERVICE_STREAM = 2
ROUTING_STREAM = 3

_BLOCK = 4096


class WorkloadError(ValueError):
    pass


def stream_rng(seed: int, *keys: int) -> np.random.Generator:
    """Counter-based generator for the sub-stream ``(seed, *keys)``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, *keys])))


@dataclass(frozen=True)
class WorkloadProfile:
    """Workload parameters. Rates are req/s, times are ms.

    ``total_requests`` counts measured requests; requests arriving before
    ``warmup_ms`` are generated and executed on top of that, flagged as warm-up.
    """

    mode: str
    total_requests: int
    query_mix: Mapping[str, float]
    seed: int = 0
    users: int = 1
    arrival_rate: float | None = None
    think_time_mean_ms: float | None = None
    warmup_ms: float = 0.0

    def __post_init__(self):
        if self.mode not in ("open", "closed"):
            raise WorkloadError(f"mode must be 'open' or 'closed', got {self.mode!r}")
        if self.total_requests < 1:
            raise WorkloadError("total_requests must be positive")
        if not self.query_mix:
            raise WorkloadError("query_mix is empty")
        if any(p < 0 for p in self.query_mix.values()):
            raise WorkloadError("query_mix fractions must be non-negative")
        total = sum(self.query_mix.values())
        if abs(total - 1.0) > ROUTING_TOL:
            raise WorkloadError(f"query_mix fractions sum to {total:.12g}, expected 1")
        if not 0 <= self.seed < 2 ** 64:
            raise WorkloadError("seed must be a 64-bit unsigned integer")
        if self.warmup_ms < 0:
            raise WorkloadError("warmup_ms must be >= 0")
        if self.mode == "open":
            if self.arrival_rate is None or not self.arrival_rate > 0:
                raise WorkloadError("open mode needs arrival_rate > 0")
        else:
            if self.users < 1:
                raise WorkloadError("closed mode needs users >= 1")
            if self.think_time_mean_ms is None or not self.think_time_mean_ms > 0:
                raise WorkloadError("closed mode needs think_time_mean_ms > 0")

    @property
    def query_types(self) -> list[str]:
        return sorted(self.query_mix)

    def with_seed(self, seed: int) -> "WorkloadProfile":
        return WorkloadProfile(**{**self.to_dict(), "seed": seed})

    @classmethod
    def from_dict(cls, d: Mapping) -> "WorkloadProfile":
        known = {"mode", "total_requests", "query_mix", "seed", "users", "arrival_rate",
                 "think_time_mean_ms", "warmup_ms"}
        unknown = set(d) - known
        if unknown:
            raise WorkloadError(f"unknown workload field(s): {', '.join(sorted(unknown))}")
        try:
            return cls(**{k: (dict(v) if k == "query_mix" else v) for k, v in d.items()})
        except TypeError as exc:
            raise WorkloadError(str(exc)) from exc

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "total_requests": self.total_requests,
            "query_mix": dict(self.query_mix),
            "seed": self.seed,
            "users": self.users,
            "arrival_rate": self.arrival_rate,
            "think_time_mean_ms": self.think_time_mean_ms,
            "warmup_ms": self.warmup_ms,
        }


class ArrivalEvent(NamedTuple):
    request_id: int
    arrival_ms: float
    query_type: str
    warmup: bool


class QueryTypeSampler:
    """Draws query types i.i.d. from a mix using uniforms from ``rng``."""

    def __init__(self, query_mix: Mapping[str, float], rng: np.random.Generator):
        self.types = sorted(q for q, p in query_mix.items() if p > 0)
        cum = np.cumsum([query_mix[q] for q in self.types])
        cum[-1] = 1.0
        self.cum = cum.tolist()
        self.rng = rng
        self._buf: list[float] = []

    def __call__(self) -> str:
        if len(self.types) == 1:
            return self.types[0]
        if not self._buf:
            self._buf = self.rng.random(_BLOCK).tolist()[::-1]
        return self.types[bisect.bisect_right(self.cum, self._buf.pop())]


def generate_open(profile: WorkloadProfile) -> Iterator[ArrivalEvent]:
    """Poisson arrivals: exponential gaps with mean ``1000 / arrival_rate`` ms."""
    if profile.mode != "open":
        raise WorkloadError("generate_open needs an open-mode profile")
    gap_rng = stream_rng(profile.seed, ARRIVAL_STREAM, 0)
    pick = QueryTypeSampler(profile.query_mix, stream_rng(profile.seed, ARRIVAL_STREAM, 1))
    mean_gap = 1000.0 / profile.arrival_rate
    t = 0.0
    rid = 0
    measured = 0
    while measured < profile.total_requests:
        for gap in gap_rng.exponential(mean_gap, _BLOCK).tolist():
            t += gap
            warm = t < profile.warmup_ms
            yield ArrivalEvent(rid, t, pick(), warm)
            rid += 1
            if not warm:
                measured += 1
                if measured == profile.total_requests:
                    return


@dataclass
class ClosedUser:
    """Think-time and query-type sampler for one simulated user.

    Each user owns the sub-stream ``(seed, user_index)`` so adding users never
    perturbs existing ones.
    """

    profile: WorkloadProfile
    user_index: int
    _rng: np.random.Generator = field(init=False, repr=False)
    _buf: list = field(init=False, repr=False, default_factory=list)

    def __post_init__(self):
        if self.profile.mode != "closed":
            raise WorkloadError("closed-loop user needs a closed-mode profile")
        self._rng = stream_rng(self.profile.seed, USER_STREAM, self.user_index)
        self._pick = QueryTypeSampler(self.profile.query_mix, stream_rng(self.profile.seed, USER_STREAM,
                                                                         self.user_index, 1))

    def think_time(self) -> float:
        if not self._buf:
            self._buf = self._rng.exponential(self.profile.think_time_mean_ms, 256).tolist()[::-1]
        return self._buf.pop()

    def query_type(self) -> str:
        return self._pick()


def generate_closed_user(profile: WorkloadProfile, user_index: int) -> ClosedUser:
    return ClosedUser(profile, user_index)
