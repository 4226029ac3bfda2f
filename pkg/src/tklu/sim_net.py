"""Deterministic discrete-event network simulator.

Random geometric topologies in the unit square, BFS routing and a
single-threaded event loop.  Delivery time of a message is::

    enqueue + per_message + hops * per_hop + bytes * per_byte

Events are processed in (time, sequence) order, so identical inputs always
produce identical traces.
"""

from __future__ import annotations

import csv
import heapq
import io
import json
import math
import random
from collections import deque
from collections.abc import Callable
from dataclasses import dataclass, field


class SimError(Exception):
    pass


@dataclass(frozen=True)
class Topology:
    n: int
    radio_range: float
    positions: tuple[tuple[float, float], ...]
    adjacency: tuple[frozenset, ...]
    seed: object = None
    attempts: int = 1

    def neighbors(self, v: int) -> frozenset:
        return self.adjacency[v]

    def degree(self, v: int) -> int:
        return len(self.adjacency[v])

    @property
    def edges(self) -> list[tuple[int, int]]:
        return sorted((u, v) for u in range(self.n) for v in self.adjacency[u] if u < v)

    def degree_stats(self) -> dict:
        degs = [self.degree(v) for v in range(self.n)]
        return {"min": min(degs), "max": max(degs), "mean": sum(degs) / self.n}

    def is_connected(self) -> bool:
        return len(hop_distances(self, 0)) == self.n


def from_edges(n: int, edges, radio_range: float = 0.0) -> Topology:
    """Topology with explicit edges (positions are placeholders)."""
    adj = [set() for _ in range(n)]
    for u, v in edges:
        if u == v:
            raise SimError("self loops are not allowed")
        adj[u].add(v)
        adj[v].add(u)
    return Topology(n, radio_range, tuple((0.0, 0.0) for _ in range(n)), tuple(frozenset(a) for a in adj))


def complete(n: int) -> Topology:
    return from_edges(n, [(u, v) for u in range(n) for v in range(u + 1, n)], math.sqrt(2))


MAX_TOPOLOGY_RETRIES = 1000


def gen_topology(n: int, radio_range: float, seed, max_retries: int = MAX_TOPOLOGY_RETRIES) -> Topology:
    """Uniform points in the unit square, linked when within ``radio_range``.

    Redraws with sub-seed ``f"{seed}/{attempt}"`` until the graph is connected.
    """
    if n < 1:
        raise SimError("need at least one node")
    if not 0 < radio_range <= math.sqrt(2):
        raise SimError("radio range must be in (0, sqrt(2)]")
    for attempt in range(max_retries):
        rng = random.Random(f"{seed}/{attempt}")
        pos = tuple((rng.random(), rng.random()) for _ in range(n))
        adj = [set() for _ in range(n)]
        for u in range(n):
            for v in range(u + 1, n):
                if math.dist(pos[u], pos[v]) <= radio_range:
                    adj[u].add(v)
                    adj[v].add(u)
        topo = Topology(n, radio_range, pos, tuple(frozenset(a) for a in adj), seed, attempt + 1)
        if topo.is_connected():
            return topo
    raise SimError(f"no connected topology for n={n}, R={radio_range} after {max_retries} tries")


def hop_distances(topo: Topology, src: int) -> dict[int, int]:
    dist = {src: 0}
    todo = deque([src])
    while todo:
        u = todo.popleft()
        for v in sorted(topo.adjacency[u]):
            if v not in dist:
                dist[v] = dist[u] + 1
                todo.append(v)
    return dist


def route(topo: Topology, s: int, t: int) -> list[int]:
    """Shortest hop path; ties go to the smallest next-node id."""
    for v in (s, t):
        if not 0 <= v < topo.n:
            raise SimError(f"node {v} not in topology")
    to_t = hop_distances(topo, t)
    if s not in to_t:
        raise SimError(f"{t} is unreachable from {s}")
    path = [s]
    while path[-1] != t:
        u = path[-1]
        path.append(min(v for v in topo.adjacency[u] if to_t.get(v) == to_t[u] - 1))
    return path


@dataclass(frozen=True)
class LatencyModel:
    per_message: float = 0.0
    per_hop: float = 0.0
    per_byte: float = 0.0

    def __post_init__(self):
        if min(self.per_message, self.per_hop, self.per_byte) < 0:
            raise SimError("latency parameters must be nonnegative")

    def delay(self, hops: int, nbytes: int) -> float:
        return self.per_message + hops * self.per_hop + nbytes * self.per_byte


# ``mica2`` puts a 2-node pairwise handshake (3 messages) at about 0.21 s.
LATENCY_PRESETS = {
    "zero": LatencyModel(),
    "mica2": LatencyModel(per_message=0.07),
    "multihop": LatencyModel(per_message=0.05, per_hop=0.02, per_byte=0.0001),
}


@dataclass
class SimMessage:
    src: int
    dst: int
    kind: str
    payload: bytes
    hop_path: list[int]
    enqueued: float = 0.0
    delivered: float = 0.0

    @property
    def hops(self) -> int:
        return len(self.hop_path) - 1


@dataclass
class EventTrace:
    events: list[SimMessage] = field(default_factory=list)

    @property
    def messages(self) -> int:
        return len(self.events)

    @property
    def link_transmissions(self) -> int:
        return sum(e.hops for e in self.events)

    @property
    def bytes(self) -> int:
        return sum(len(e.payload) for e in self.events)

    @property
    def completion_time(self) -> float:
        return max((e.delivered for e in self.events), default=0.0)

    def count(self, kind_prefix: str) -> int:
        return sum(1 for e in self.events if e.kind.startswith(kind_prefix))

    def to_jsonl(self) -> str:
        lines = (
            json.dumps(
                {"time": round(e.delivered, 9), "src": e.src, "dst": e.dst, "type": e.kind,
                 "hops": e.hops, "bytes": len(e.payload)},
                sort_keys=True,
            )
            for e in self.events
        )
        return "".join(line + "\n" for line in lines)

    def summary_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["messages", "link_transmissions", "bytes", "completion_time"])
        w.writerow([self.messages, self.link_transmissions, self.bytes, f"{self.completion_time:.6f}"])
        return buf.getvalue()


Handler = Callable[["Scheduler", SimMessage], None]


class Scheduler:
    """Event queue; ``handler`` is called for every delivered message and may send more."""

    def __init__(self, topo: Topology, latency: LatencyModel, handler: Handler | None = None):
        self.topo = topo
        self.latency = latency
        self.handler = handler
        self.now = 0.0
        self._seq = 0
        self._queue: list[tuple[float, int, SimMessage]] = []
        self.trace = EventTrace()

    def send(self, src: int, dst: int, payload: bytes, kind: str = "msg", at: float | None = None) -> SimMessage:
        path = route(self.topo, src, dst)
        t0 = self.now if at is None else at
        msg = SimMessage(src, dst, kind, payload, path, t0)
        msg.delivered = t0 + self.latency.delay(msg.hops, len(payload))
        heapq.heappush(self._queue, (msg.delivered, self._seq, msg))
        self._seq += 1
        return msg

    def run(self) -> EventTrace:
        while self._queue:
            t, _, msg = heapq.heappop(self._queue)
            self.now = t
            self.trace.events.append(msg)
            if self.handler is not None:
                self.handler(self, msg)
        return self.trace


def flood(topo: Topology, origin: int, skip: frozenset = frozenset()) -> tuple[set[int], int]:
    """Flood with duplicate suppression; returns (nodes reached, transmissions).

    Each reached node rebroadcasts once; ``skip`` nodes neither receive nor forward.
    """
    reached = {origin}
    todo = deque([origin])
    tx = 0
    while todo:
        u = todo.popleft()
        tx += 1
        for v in sorted(topo.adjacency[u]):
            if v not in reached and v not in skip:
                reached.add(v)
                todo.append(v)
    return reached, tx
