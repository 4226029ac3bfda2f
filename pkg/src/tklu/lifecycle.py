"""Per-node key chains, simulated deployment, revocation and memory accounting.

A :class:`Network` owns everything the simulation knows: one
:class:`KeyStore` per node, the group key trees and the event trace.  All
protocol traffic is pushed through the simulator one message at a time, so
the trace doubles as a message/latency ledger for the experiments.
"""

from __future__ import annotations

import random
import struct
from collections.abc import Iterable
from dataclasses import dataclass, field

from . import ec, group_tree as gt
from .handshakes import Exchange, HandshakeError, SessionKey, VerifyFailed, hash_tag, run_pairwise, run_path
from .keymatrix import KeyShare, MasterKeyMatrix, assign_share
from .sim_net import EventTrace, LatencyModel, Scheduler, Topology, flood, route

PAIRWISE, PATH, GROUP = "pairwise", "path", "group"
REVOKE_TYPE = 0x31


class StoreError(Exception):
    pass


class RevocationError(Exception):
    pass


EntryKey = tuple  # (kind, frozenset(peers), slot)


@dataclass
class KeyStore:
    """Key chain KC_i of one node."""

    owner: int
    entries: dict[EntryKey, object] = field(default_factory=dict)

    def put(self, kind: str, peers: Iterable[int], key, slot=None):
        peers = frozenset(peers) | {self.owner}
        ident = (kind, peers, slot)
        if ident in self.entries:
            raise StoreError(f"node {self.owner} already holds a {kind} key for {sorted(peers)}")
        self.entries[ident] = key

    def remove(self, kind: str, peers: Iterable[int], slot=None) -> bool:
        """Delete an entry; returns False when there was nothing to delete."""
        ident = (kind, frozenset(peers) | {self.owner}, slot)
        return self.entries.pop(ident, None) is not None

    def count(self, kind: str | None = None) -> int:
        return sum(1 for k in self.entries if kind is None or k[0] == kind)

    def get(self, kind: str, peers: Iterable[int], slot=None):
        return self.entries.get((kind, frozenset(peers) | {self.owner}, slot))

    def referencing(self, node: int) -> list[EntryKey]:
        return [k for k in self.entries if node in k[1] and node != self.owner]

    def snapshot(self) -> dict[EntryKey, bytes]:
        return {k: v.key for k, v in self.entries.items()}


@dataclass(frozen=True)
class RevocationReport:
    revoked: int
    pairwise_removed: int
    path_removed: int
    groups_rekeyed: tuple[int, ...]
    broadcast_reached: int
    audit_removed: int = 0


class Network:
    """A deployed sensor field: topology, pre-distributed shares, stores, groups."""

    def __init__(
        self,
        topo: Topology,
        master: MasterKeyMatrix,
        curve: ec.CurveParams,
        latency: LatencyModel,
        seed=0,
        sink: int = 0,
    ):
        if master.n < topo.n:
            raise ValueError("master matrix is smaller than the network")
        self.topo = topo
        self.curve = curve
        self.shares: dict[int, KeyShare] = {i: assign_share(master, i) for i in range(topo.n)}
        self.stores: dict[int, KeyStore] = {i: KeyStore(i) for i in range(topo.n)}
        self.groups: dict[int, gt.KeyTree] = {}
        self.revoked: set[int] = set()
        self.rng = random.Random(f"protocol/{seed}")
        self.sink = sink
        self.sink_key = self.rng.randbytes(32)
        self.clock = 0.0
        self.sched = Scheduler(topo, latency)
        self.trace: EventTrace = self.sched.trace

    # -- transport ---------------------------------------------------------

    def transmit(self, src: int, dst: int, payload: bytes, kind: str):
        self.sched.send(src, dst, payload, kind, at=self.clock)
        self.sched.run()
        self.clock = self.sched.now

    def _wire(self, a: int, b: int, kind: str):
        def hook(i, data):
            src, dst = (a, b) if i % 2 == 0 else (b, a)
            self.transmit(src, dst, data, f"{kind}{i + 1}")
            return data

        return hook

    def _abort(self, ex: Exchange, a: int):
        if isinstance(ex.error, VerifyFailed) and ex.error.abort is not None:
            reached, _ = flood(self.topo, a, frozenset(self.revoked))
            for v in sorted(reached - {a}):
                self.transmit(a, v, ex.error.abort.encode(), "abort")

    def pairwise_exchange(self, a: int, b: int, kind: str = "pw") -> Exchange:
        return run_pairwise(self.shares[a], self.shares[b], self._wire(a, b, kind))

    def path_exchange(self, a: int, b: int) -> Exchange:
        ex = run_path(self.shares[a], self.shares[b], self.curve, self.rng, self._wire(a, b, "pk"))
        self._abort(ex, a)
        return ex

    # -- establishment -----------------------------------------------------

    def establish_pairwise(self, pairs: Iterable[tuple[int, int]] | None = None, store: bool = True) -> int:
        """Run the pairwise handshake on ``pairs`` (default: every radio link)."""
        pairs = self.topo.edges if pairs is None else pairs
        done = 0
        for a, b in pairs:
            ex = self.pairwise_exchange(a, b)
            if not ex.completed:
                raise HandshakeError(f"pairwise {a}-{b} failed: {ex.error}")
            if store:
                self.stores[a].put(PAIRWISE, {b}, ex.initiator_key)
                self.stores[b].put(PAIRWISE, {a}, ex.responder_key)
            done += 1
        return done

    def establish_path(self, a: int, b: int, store: bool = True) -> SessionKey:
        ex = self.path_exchange(a, b)
        if not ex.completed:
            raise HandshakeError(f"path {a}-{b} failed: {ex.error}")
        if store:
            self.stores[a].put(PATH, {b}, ex.initiator_key)
            self.stores[b].put(PATH, {a}, ex.responder_key)
        return ex.initiator_key

    def _broadcast_subtree(self, gid: int):
        def send(src: gt.GroupNode, dst: gt.GroupNode):
            sponsor = gt.sponsor_of(src)
            payload = gt.encode_broadcast(src, self.groups[gid].epoch if gid in self.groups else 0, self.curve)
            for m in dst.members():
                self.transmit(sponsor, m, payload, "grp-bcast")

        return send

    def establish_group(self, gid: int, members: Iterable[int], store: bool = True) -> gt.KeyTree:
        tree, keys = gt.build_group(
            members,
            self.shares,
            self.curve,
            self.rng,
            exchange=lambda a, b: self.pairwise_exchange(a.node_id, b.node_id, "grp-pw"),
            on_broadcast=self._broadcast_subtree(gid),
        )
        if len({k.key for k in keys.values()}) != 1:
            raise gt.GroupError(f"group {gid}: members disagree on the key")
        self.groups[gid] = tree
        if store:
            for m in tree.members:
                self._store_group_keys(gid, tree, m)
        return tree

    def _store_group_keys(self, gid: int, tree: gt.KeyTree, member: int):
        st = self.stores[member]
        wanted = {}
        for label, key in gt.member_group_keys(tree, member):
            node_members = frozenset(self._label_members(tree, label))
            wanted[(GROUP, node_members | {member}, (gid, label))] = key
        for ident in [k for k in st.entries if k[0] == GROUP and k[2][0] == gid]:
            if ident not in wanted or st.entries[ident].key != wanted[ident]:
                del st.entries[ident]
        for ident, key in wanted.items():
            if ident not in st.entries:
                st.entries[ident] = gt.GroupKey(key, tree.epoch, ident[1])

    @staticmethod
    def _label_members(tree: gt.KeyTree, label) -> list[int]:
        for node in tree.root.preorder():
            if label in node.labels:
                return node.members()
        raise gt.GroupError(f"label {label} not in tree")

    # -- revocation --------------------------------------------------------

    def revocation_message(self, v: int) -> bytes:
        return bytes([REVOKE_TYPE]) + struct.pack(">I", v) + hash_tag(b"SINK", self.sink_key + struct.pack(">I", v))


def revoke(net: Network, v: int) -> RevocationReport:
    """Remove every key that involves ``v`` and rekey the groups it belonged to."""
    if not 0 <= v < net.topo.n:
        raise RevocationError(f"unknown node {v}")
    alive = [u for u in sorted(net.stores) if u != v]

    pairwise_removed = 0
    for u in sorted(net.topo.neighbors(v)):
        if u in net.stores and net.stores[u].remove(PAIRWISE, {v}):
            pairwise_removed += 1

    epochs = []
    for gid in sorted(net.groups):
        tree = net.groups[gid]
        if v not in tree.members:
            continue
        if len(tree.members) == 1:
            del net.groups[gid]
            continue
        new, _ = gt.group_rekey(tree, v, net.rng)
        net.groups[gid] = new
        leader = gt.sponsor_of(new.root)
        payload = gt.encode_broadcast(new.root, new.epoch, net.curve)
        for m in new.members:
            if m != leader:
                net.transmit(leader, m, payload, "grp-rekey")
            net._store_group_keys(gid, new, m)
        epochs.append(new.epoch)

    path_removed = 0
    for u in alive:
        if net.stores[u].remove(PATH, {v}):
            path_removed += 1

    net.revoked.add(v)
    net.stores.pop(v, None)
    origin = net.sink if net.sink != v else min(alive, default=v)
    reached, _ = flood(net.topo, origin, frozenset(net.revoked))
    msg = net.revocation_message(v)
    for u in sorted(reached - {origin}):
        net.transmit(origin, u, msg, "revoke")
    audit = 0
    for u in sorted(reached):
        st = net.stores.get(u)
        if st is None:
            continue
        for ident in st.referencing(v):
            del st.entries[ident]
            audit += 1
    return RevocationReport(v, pairwise_removed, path_removed, tuple(epochs), len(reached), audit)


def predicted_keys(k: int, group_size: int) -> int:
    """k pairwise keys plus ceil(log2 group size) group keys."""
    return k + gt.rounds_needed(group_size)


@dataclass(frozen=True)
class MemoryRow:
    node: int
    pairwise: int
    group: int
    path: int
    neighbors: int
    group_size: int
    predicted: int

    @property
    def actual(self) -> int:
        return self.pairwise + self.group

    @property
    def over(self) -> bool:
        return self.actual > self.predicted


def memory_report(net: Network) -> list[MemoryRow]:
    size_of = {m: len(t.members) for t in net.groups.values() for m in t.members}
    rows = []
    for u in sorted(net.stores):
        st = net.stores[u]
        k = sum(1 for w in net.topo.neighbors(u) if w not in net.revoked)
        g = size_of.get(u, 1)
        rows.append(MemoryRow(u, st.count(PAIRWISE), st.count(GROUP), st.count(PATH), k, g, predicted_keys(k, g)))
    return rows
