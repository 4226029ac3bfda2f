import hashlib
import json
import math

import pytest
from hypothesis import given, settings, strategies as st

from tklu.sim_net import (
    LATENCY_PRESETS,
    LatencyModel,
    Scheduler,
    SimError,
    complete,
    flood,
    from_edges,
    gen_topology,
    hop_distances,
    route,
)

LINE = from_edges(5, [(1, 2), (2, 3), (3, 4), (0, 1)])


def adjacency_digest(topo):
    return hashlib.sha256(repr([sorted(a) for a in topo.adjacency]).encode()).hexdigest()[:16]


def test_small_topologies():
    t = gen_topology(2, math.sqrt(2), 0)
    assert t.edges == [(0, 1)]
    t = gen_topology(1, 0.3, 0)
    assert t.n == 1 and t.edges == [] and t.is_connected()


def test_gen_topology_reproducible():
    a, b = gen_topology(10, 0.5, 42), gen_topology(10, 0.5, 42)
    assert a == b
    assert adjacency_digest(a) == adjacency_digest(b) == "32449f99f580c271"
    assert a.is_connected()
    assert a != gen_topology(10, 0.5, 43)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 30), st.floats(0.3, 1.4), st.integers(0, 10**6))
def test_topology_invariants(n, r, seed):
    t = gen_topology(n, r, seed)
    assert t.is_connected()
    for u in range(n):
        assert u not in t.adjacency[u]
        for v in t.adjacency[u]:
            assert u in t.adjacency[v]
            assert math.dist(t.positions[u], t.positions[v]) <= r
    stats = t.degree_stats()
    assert stats["min"] >= 1 and stats["max"] <= n - 1


def test_topology_errors():
    with pytest.raises(SimError):
        gen_topology(0, 0.5, 1)
    with pytest.raises(SimError):
        gen_topology(5, 0.0, 1)
    with pytest.raises(SimError):
        gen_topology(5, 2.0, 1)
    with pytest.raises(SimError):
        gen_topology(40, 0.01, 1, max_retries=3)
    with pytest.raises(SimError):
        from_edges(2, [(1, 1)])


def test_route():
    assert route(LINE, 1, 4) == [1, 2, 3, 4]
    assert route(LINE, 2, 3) == [2, 3]
    assert route(LINE, 3, 3) == [3]
    square = from_edges(4, [(0, 2), (0, 1), (1, 3), (2, 3)])
    assert route(square, 0, 3) == [0, 1, 3]  # tie goes to the smaller id
    with pytest.raises(SimError):
        route(from_edges(3, [(0, 1)]), 0, 2)
    with pytest.raises(SimError):
        route(LINE, 0, 9)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 25), st.integers(0, 10**6), st.data())
def test_route_is_a_shortest_path(n, seed, data):
    t = gen_topology(n, 0.45, seed)
    s, d = data.draw(st.integers(0, n - 1)), data.draw(st.integers(0, n - 1))
    p = route(t, s, d)
    assert p[0] == s and p[-1] == d
    assert all(b in t.adjacency[a] for a, b in zip(p, p[1:]))
    assert len(p) - 1 == hop_distances(t, s)[d]


def test_delivery_time():
    sched = Scheduler(LINE, LatencyModel(per_message=0.05, per_hop=0.1))
    msg = sched.send(1, 4, b"x" * 10, "t")
    sched.run()
    assert msg.hops == 3
    assert msg.delivered == pytest.approx(0.35)
    bytes_model = LatencyModel(per_byte=0.01)
    assert bytes_model.delay(2, 10) == pytest.approx(0.1)
    with pytest.raises(SimError):
        LatencyModel(per_hop=-1)


def test_zero_model_orders_by_sequence():
    sched = Scheduler(LINE, LATENCY_PRESETS["zero"])
    for k in range(5):
        sched.send(0, 4 - k, bytes([k]), f"m{k}")
    trace = sched.run()
    assert [e.kind for e in trace.events] == [f"m{k}" for k in range(5)]
    assert trace.completion_time == 0.0


def test_handler_can_send_more():
    def relay(s, msg):
        if msg.kind == "ping":
            s.send(msg.dst, msg.src, b"pong", "pong")

    sched = Scheduler(LINE, LatencyModel(per_message=1.0), relay)
    sched.send(0, 2, b"ping", "ping")
    trace = sched.run()
    assert [(e.kind, e.delivered) for e in trace.events] == [("ping", 1.0), ("pong", 2.0)]


def run_traffic(seed):
    t = gen_topology(12, 0.4, seed)
    sched = Scheduler(t, LATENCY_PRESETS["multihop"])
    for u in range(12):
        sched.send(u, (u * 5 + 3) % 12, bytes(u + 1), "x")
    return sched.run()


def test_trace_determinism_and_conservation():
    a, b = run_traffic(7), run_traffic(7)
    assert a.to_jsonl() == b.to_jsonl()
    assert a.summary_csv() == b.summary_csv()
    assert a.link_transmissions == sum(e.hops for e in a.events)
    assert a.bytes == sum(len(e.payload) for e in a.events)
    assert a.messages == 12
    first = json.loads(a.to_jsonl().splitlines()[0])
    assert set(first) == {"time", "src", "dst", "type", "hops", "bytes"}
    assert a.summary_csv().splitlines()[0] == "messages,link_transmissions,bytes,completion_time"


def test_events_in_time_order():
    trace = run_traffic(3)
    times = [e.delivered for e in trace.events]
    assert times == sorted(times)


def test_flood():
    reached, tx = flood(LINE, 0)
    assert reached == {0, 1, 2, 3, 4} and tx == 5
    reached, tx = flood(LINE, 0, frozenset({2}))
    assert reached == {0, 1} and tx == 2
    reached, _ = flood(complete(6), 3)
    assert reached == set(range(6))
