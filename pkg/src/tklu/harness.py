"""Experiment driver: ``tklu sweep | group-demo | memory-report | revoke-demo``.

Every output row carries the full configuration (seeds included), so a row can
be reproduced by re-running the command with the values it records.
"""

from __future__ import annotations

import argparse
import csv
import io
import itertools
import json
import random
import sys
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from . import ec, group_tree as gt
from .keymatrix import gen_master, smallest_prime_geq
from .lifecycle import Network, memory_report, predicted_keys, revoke
from .sim_net import LATENCY_PRESETS, complete, gen_topology, hop_distances

MAX_SWEEP_NODES = 64
PATH_SAMPLE = 10


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    nodes: int = 12
    range: str = "2..20"
    key_bits: int = 16
    curve: str = "secp256k1"
    group_size: int = 4
    neighbors: int = 40
    radio_range: float = 0.5
    seed_topology: int = 1
    seed_protocol: int = 1
    latency_preset: str = "mica2"
    path_pairs: int = 3
    victim: int = 0
    format: str = "csv"

    def validate(self):
        if self.curve not in ec.PRESETS:
            raise ConfigError(f"unknown curve {self.curve!r}; choose from {sorted(ec.PRESETS)}")
        if self.latency_preset not in LATENCY_PRESETS:
            raise ConfigError(f"unknown latency preset {self.latency_preset!r}; choose from {sorted(LATENCY_PRESETS)}")
        if self.format not in ("csv", "json"):
            raise ConfigError("format must be csv or json")
        if self.key_bits < 1:
            raise ConfigError("key_bits must be >= 1")
        if self.nodes < 1:
            raise ConfigError("nodes must be >= 1")
        if self.group_size < 1:
            raise ConfigError("group_size must be >= 1")
        lo, hi = self.node_range()
        if not 2 <= lo <= hi <= MAX_SWEEP_NODES:
            raise ConfigError(f"node range must lie within [2, {MAX_SWEEP_NODES}]")
        return self

    def node_range(self) -> tuple[int, int]:
        try:
            lo, hi = (int(x) for x in self.range.split(".."))
        except ValueError:
            raise ConfigError(f"range must look like LO..HI, got {self.range!r}") from None
        return lo, hi

    @property
    def q(self) -> int:
        return smallest_prime_geq(2**self.key_bits)

    def columns(self) -> dict:
        """Config fields echoed into every output row."""
        d = asdict(self)
        d.pop("format")
        d["q"] = self.q
        return d

    def stamp(self, row: dict) -> dict:
        """``row`` followed by the config columns it does not already have."""
        return row | {f"cfg_{k}" if k in row else k: v for k, v in self.columns().items()}


def load_config_file(path: str | Path) -> dict:
    """Parse ``key = value`` lines into ExperimentConfig field values."""
    types = {f.name: f.type for f in fields(ExperimentConfig)}
    out = {}
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"bad config line: {line!r}")
        k, v = (s.strip() for s in line.split("=", 1))
        k = k.replace("-", "_")
        if k not in types:
            raise ConfigError(f"unknown config key {k!r}")
        out[k] = {"int": int, "float": float}.get(types[k], str)(v)
    return out


def _network(cfg: ExperimentConfig, n: int, topo=None) -> Network:
    topo = topo or gen_topology(n, cfg.radio_range, cfg.seed_topology)
    master = gen_master(n, cfg.q, cfg.seed_protocol)
    return Network(topo, master, ec.get_curve(cfg.curve), LATENCY_PRESETS[cfg.latency_preset], cfg.seed_protocol)


def _fmt(x: float) -> str:
    return f"{x:.6f}"


# -- sweep ------------------------------------------------------------------


def path_pairs(topo, k: int, seed) -> list[tuple[int, int]]:
    """Up to ``k`` pairs at hop distance >= 2, else the most distant pair."""
    far = []
    best = (0, (0, 1))
    for a in range(topo.n):
        dist = hop_distances(topo, a)
        for b in range(a + 1, topo.n):
            if dist[b] >= 2:
                far.append((a, b))
            best = max(best, (dist[b], (a, b)), key=lambda t: t[0])
    if not far:
        return [best[1]]
    if len(far) <= k:
        return far
    return sorted(random.Random(f"pairs/{seed}").sample(far, k))


def sweep_row(cfg: ExperimentConfig, n: int) -> dict:
    topo = gen_topology(n, cfg.radio_range, cfg.seed_topology)

    pw = _network(cfg, n, topo)
    pw.establish_pairwise(itertools.combinations(range(n), 2), store=False)

    pk = _network(cfg, n, topo)
    pairs = path_pairs(topo, PATH_SAMPLE, cfg.seed_protocol)
    for a, b in pairs:
        pk.establish_path(a, b, store=False)

    gr = _network(cfg, n, topo)
    tree = gr.establish_group(0, range(n), store=False)

    return cfg.stamp({
        "nodes": n,
        "pairwise_total_time": _fmt(pw.clock),
        "path_avg_time": _fmt(pk.clock / len(pairs)),
        "group_total_time": _fmt(gr.clock),
        "pairwise_messages": pw.trace.messages,
        "pairwise_link_tx": pw.trace.link_transmissions,
        "path_pairs": len(pairs),
        "path_messages": pk.trace.messages,
        "path_link_tx": pk.trace.link_transmissions,
        "group_messages": gr.trace.messages,
        "group_link_tx": gr.trace.link_transmissions,
        "group_rounds": tree.height,
        "mean_degree": f"{topo.degree_stats()['mean']:.3f}",
    })


def cmd_sweep(cfg: ExperimentConfig) -> tuple[list[dict], bool]:
    lo, hi = cfg.node_range()
    return [sweep_row(cfg, n) for n in range(lo, hi + 1)], True


# -- group demo -------------------------------------------------------------


FIGURE3 = [
    [("T11", [1, 2]), ("T12", [3, 4]), ("T13", [5, 6])],
    [("T21", [1, 2, 3, 4]), ("T22", [5, 6])],
    [("T31", [1, 2, 3, 4, 5, 6])],
]


def tree_rounds(tree: gt.KeyTree) -> list[list[tuple[str, list[int]]]]:
    return [[(gt.label_name(lab), g.members()) for lab, g in rnd] for rnd in tree.rounds]


def cmd_group_demo(cfg: ExperimentConfig, out=sys.stdout) -> tuple[list[dict], bool]:
    n = cfg.nodes
    if not 1 <= n <= MAX_SWEEP_NODES:
        raise ConfigError(f"group demo needs 1 <= n <= {MAX_SWEEP_NODES}")
    net = _network(cfg, n + 1, complete(n + 1))
    tree = net.establish_group(0, range(1, n + 1))
    view = gt.public_view(tree)
    keys = {m: gt.member_compute_key(view, m, gt.entry_secret(tree, m)) for m in tree.members}
    agree = len({k.key for k in keys.values()}) == 1
    rounds = tree_rounds(tree)
    shape_ok = rounds == FIGURE3 if n == 6 else True
    rounds_ok = tree.height == gt.rounds_needed(n)

    prev: dict[int, str] = {}
    for r, (groups, rnd) in enumerate(zip(rounds, tree.rounds), start=1):
        # a group is carried when it sits out the round: unpaired in round 1, unmerged later
        carried = [f"{name} from {prev[id(g)]}" if r > 1 else name
                   for (name, _), (_, g) in zip(groups, rnd) if (g.is_leaf if r == 1 else id(g) in prev)]
        desc = ", ".join(f"{name}{{{','.join(f'M{m}' for m in mem)}}}" for name, mem in groups)
        print(f"round {r}: {desc}" + (f"  (carried: {', '.join(carried)})" if carried else ""), file=out)
        prev = {id(g): name for (name, _), (_, g) in zip(groups, rnd)}
    if n == 1:
        print("round 0: singleton M1", file=out)
    print(f"sponsor: M{gt.sponsor_of(tree.root)}", file=out)
    ok = agree and shape_ok and rounds_ok
    fig = shape_ok if n == 6 else "n/a"
    print(f"verdict: {'OK' if ok else 'FAIL'} (agree={agree}, rounds={tree.height}, figure3={fig})", file=out)
    row = cfg.stamp({
        "nodes": n,
        "rounds": tree.height,
        "labels": " ".join(name for rnd in rounds for name, _ in rnd),
        "members_agree": agree,
        "figure3_match": shape_ok if n == 6 else "",
        "group_key": next(iter(keys.values())).key.hex(),
        "messages": net.trace.messages,
        "verdict": "OK" if ok else "FAIL",
    })
    return [row], ok


# -- memory report ----------------------------------------------------------


def deploy(cfg: ExperimentConfig) -> Network:
    """Pairwise keys on every link, groups of ``group_size`` by id, a few path keys."""
    net = _network(cfg, cfg.nodes)
    net.establish_pairwise()
    ids = list(range(cfg.nodes))
    for gid, start in enumerate(range(0, cfg.nodes, cfg.group_size)):
        net.establish_group(gid, ids[start : start + cfg.group_size])
    for a, b in path_pairs(net.topo, cfg.path_pairs, cfg.seed_protocol):
        if net.topo.n > 1 and b not in net.topo.neighbors(a):
            net.establish_path(a, b)
    return net


def cmd_memory_report(cfg: ExperimentConfig) -> tuple[list[dict], bool]:
    net = deploy(cfg)
    rows = []
    ok = True
    for r in memory_report(net):
        exact = r.actual == r.predicted
        ok &= exact
        rows.append(cfg.stamp({
            "row": "node", "node": r.node, "k_node": r.neighbors, "node_group_size": r.group_size,
            "pairwise": r.pairwise, "group": r.group, "path": r.path, "actual": r.actual,
            "predicted": r.predicted, "match": exact,
        }))
    rows.append(cfg.stamp({
        "row": "headline", "node": "", "k_node": cfg.neighbors, "node_group_size": cfg.group_size,
        "pairwise": "", "group": "", "path": "", "actual": "",
        "predicted": predicted_keys(cfg.neighbors, cfg.group_size), "match": "",
    }))
    return rows, ok


# -- revocation demo ----------------------------------------------------------


def cmd_revoke_demo(cfg: ExperimentConfig) -> tuple[list[dict], bool]:
    if not 0 <= cfg.victim < cfg.nodes:
        raise ConfigError(f"victim {cfg.victim} is not a node of the {cfg.nodes}-node network")
    net = deploy(cfg)
    v = cfg.victim
    before = {u: st.snapshot() for u, st in net.stores.items() if u != v}
    old_group_keys = {gid: t.group_key() for gid, t in net.groups.items() if v in t.members}
    rep = revoke(net, v)
    pure = all(not st.referencing(v) for st in net.stores.values())
    untouched = all(
        net.stores[u].snapshot().get(ident) == key
        for u, snap in before.items()
        for ident, key in snap.items()
        if v not in ident[1] and not (ident[0] == "group" and ident[2][0] in old_group_keys)
    )
    changed = all(
        gid in net.groups and net.groups[gid].group_key().key != old.key and net.groups[gid].epoch > old.epoch
        for gid, old in old_group_keys.items()
        if gid in net.groups
    )
    ok = pure and untouched and changed
    row = cfg.stamp({
        "revoked": rep.revoked,
        "pairwise_removed": rep.pairwise_removed,
        "path_removed": rep.path_removed,
        "groups_rekeyed": " ".join(map(str, rep.groups_rekeyed)),
        "broadcast_reached": rep.broadcast_reached,
        "audit_removed": rep.audit_removed,
        "purity": pure,
        "non_disturbance": untouched,
        "groups_changed": changed,
        "verdict": "OK" if ok else "FAIL",
    })
    return [row], ok


# -- CLI --------------------------------------------------------------------


def render(rows: list[dict], fmt: str) -> str:
    if fmt == "json":
        return "".join(json.dumps(r, sort_keys=False, default=str) + "\n" for r in rows)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


COMMANDS = {
    "sweep": cmd_sweep,
    "group-demo": cmd_group_demo,
    "memory-report": cmd_memory_report,
    "revoke-demo": cmd_revoke_demo,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tklu", description="TKLU key establishment experiments")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="key=value file; command-line flags override it")
    p.add_argument("--nodes", type=int)
    p.add_argument("--range", help="node range for sweep, e.g. 2..20")
    p.add_argument("--key-bits", type=int, help="q is the smallest prime above 2**key_bits")
    p.add_argument("--curve", help=f"curve preset: {', '.join(sorted(ec.PRESETS))}")
    p.add_argument("--group-size", type=int)
    p.add_argument("--neighbors", type=int, help="k for the headline memory formula row")
    p.add_argument("--radio-range", type=float)
    p.add_argument("--seed-topology", type=int)
    p.add_argument("--seed-protocol", type=int)
    p.add_argument("--latency-preset", help=f"one of {', '.join(sorted(LATENCY_PRESETS))}")
    p.add_argument("--path-pairs", type=int)
    p.add_argument("--victim", type=int)
    p.add_argument("--format", choices=["csv", "json"])
    p.add_argument("--out", help="write rows here instead of stdout")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        values = load_config_file(args.config) if args.config else {}
        for f in fields(ExperimentConfig):
            v = getattr(args, f.name, None)
            if v is not None:
                values[f.name] = v
        cfg = replace(ExperimentConfig(), **values).validate()
        log = sys.stderr if args.out is None else sys.stdout
        if args.command == "group-demo":
            rows, ok = cmd_group_demo(cfg, out=log)
        else:
            rows, ok = COMMANDS[args.command](cfg)
    except (ConfigError, ec.CurveError, gt.GroupError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    text = render(rows, cfg.format)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
