"""Tree-based group keys built on top of the pairwise handshake.

Members are ordered and paired (M1,M2), (M3,M4), ...; each pair runs the
pairwise handshake and hashes the result into the pair's group secret.  A
trailing unpaired member starts as a singleton group with a random secret.
Groups are then merged two at a time: the merged secret is derived from the
ECDH point ``left.secret * right.blinded == right.secret * left.blinded``, so
each side only needs the other's blinded (public) key.  An unpaired trailing
group is carried into the next round under a new label.

Group nodes are labelled ``(round, index)`` like ``T_rc``; member leaves are
labelled ``(0, member_id)``.
"""

from __future__ import annotations

import random
import struct
from collections.abc import Callable, Iterable, Mapping
from dataclasses import dataclass, field

from . import ec
from .ec import CurveParams, Point
from .handshakes import Exchange, hash_tag, run_pairwise
from .keymatrix import KeyShare

GRPLEAF = b"GRPLEAF"
GRPNODE = b"GRPNODE"
GRPKEY = b"GRPKEY"
BROADCAST_TYPE = 0x21
MAX_REFRESH_TRIES = 256


class GroupError(Exception):
    pass


def hash_to_scalar(label: bytes, data: bytes, order: int) -> int:
    """Hash into [1, order), re-hashing with a counter until nonzero."""
    ctr = 0
    while True:
        payload = data if ctr == 0 else data + struct.pack(">I", ctr)
        s = int.from_bytes(hash_tag(label, payload), "big") % order
        if s:
            return s
        ctr += 1


def _scalar_bytes(curve: CurveParams, s: int) -> bytes:
    return s.to_bytes(curve.scalar_width, "big")


@dataclass(eq=False)
class GroupNode:
    label: tuple[int, int]
    left: GroupNode | None = None
    right: GroupNode | None = None
    member: int | None = None
    secret: int | None = field(default=None, repr=False)
    blinded: Point | None = None
    aliases: list[tuple[int, int]] = field(default_factory=list)
    # pair nodes only: the shared pairwise key and a public refresh nonce
    pair_key: bytes | None = field(default=None, repr=False)
    nonce: bytes = b""

    @property
    def is_leaf(self) -> bool:
        return self.left is None

    @property
    def labels(self) -> list[tuple[int, int]]:
        return self.aliases + [self.label]

    def leaves(self) -> list[GroupNode]:
        if self.is_leaf:
            return [self]
        return self.left.leaves() + self.right.leaves()

    def members(self) -> list[int]:
        return [leaf.member for leaf in self.leaves()]

    def preorder(self):
        yield self
        if not self.is_leaf:
            yield from self.left.preorder()
            yield from self.right.preorder()

    def name(self) -> str:
        r, c = self.label
        return f"M{c}" if r == 0 else f"T{r}{c}"


def label_name(label: tuple[int, int]) -> str:
    r, c = label
    return f"M{c}" if r == 0 else f"T{r}{c}"


@dataclass(frozen=True)
class GroupKey:
    key: bytes
    epoch: int
    members: frozenset


@dataclass
class KeyTree:
    root: GroupNode
    members: list[int]
    height: int
    curve: CurveParams
    epoch: int = 0
    rounds: list[list[tuple[tuple[int, int], GroupNode]]] = field(default_factory=list)

    def group_key(self) -> GroupKey:
        return GroupKey(node_key(self.curve, self.root.secret), self.epoch, frozenset(self.members))

    def leaf(self, member: int) -> GroupNode:
        for lf in self.root.leaves():
            if lf.member == member:
                return lf
        raise GroupError(f"M{member} is not in the group")


def node_key(curve: CurveParams, secret: int) -> bytes:
    return hash_tag(GRPKEY, _scalar_bytes(curve, secret))


def _set_secret(curve: CurveParams, node: GroupNode, secret: int):
    node.secret = secret
    node.blinded = ec.scalar_mul(curve, secret, curve.G)


def _pair_secret(curve: CurveParams, node: GroupNode) -> int:
    return hash_to_scalar(GRPLEAF, node.pair_key + node.nonce, curve.order)


def merge_secret(curve: CurveParams, own_secret: int, other_blinded: Point) -> int:
    return hash_to_scalar(GRPNODE, ec.encode_point(curve, ec.dh(curve, own_secret, other_blinded)), curve.order)


def order_members(ids: Iterable[int]) -> list[int]:
    out = sorted(set(ids))
    if not out:
        raise GroupError("cannot order an empty member set")
    return out


def leaf_pair_round(
    members: list[int],
    shares: Mapping[int, KeyShare],
    curve: CurveParams,
    rng: random.Random,
    exchange: Callable[[KeyShare, KeyShare], Exchange] = run_pairwise,
) -> list[GroupNode]:
    """Round 1: pair consecutive members and derive each pair's group secret."""
    if not members:
        raise GroupError("no members")
    groups = []
    for c, t in enumerate(range(0, len(members), 2), start=1):
        if t + 1 == len(members):
            leaf = GroupNode((0, members[t]), member=members[t], aliases=[(1, c)])
            _set_secret(curve, leaf, ec.random_scalar(curve, rng))
            groups.append(leaf)
            continue
        a, b = members[t], members[t + 1]
        ex = exchange(shares[a], shares[b])
        if not ex.completed or ex.initiator_key.key != ex.responder_key.key:
            raise GroupError(f"pairwise handshake failed between M{a} and M{b}: {ex.error}")
        node = GroupNode(
            (1, c),
            left=GroupNode((0, a), member=a),
            right=GroupNode((0, b), member=b),
            pair_key=ex.initiator_key.key,
        )
        _set_secret(curve, node, _pair_secret(curve, node))
        groups.append(node)
    return groups


def merge_round(
    groups: list[GroupNode],
    curve: CurveParams,
    round_no: int,
    on_broadcast: Callable[[GroupNode, GroupNode], None] | None = None,
) -> list[GroupNode]:
    """Merge adjacent groups (1&2, 3&4, ...); carry an odd trailing group."""
    out = []
    for c, t in enumerate(range(0, len(groups), 2), start=1):
        if t + 1 == len(groups):
            g = groups[t]
            if g.is_leaf:
                g.aliases.append((round_no, c))
            else:
                g.aliases.append(g.label)
                g.label = (round_no, c)
            out.append(g)
            continue
        left, right = groups[t], groups[t + 1]
        if on_broadcast is not None:
            on_broadcast(left, right)
            on_broadcast(right, left)
        if left.blinded is None or right.blinded is None:
            raise GroupError("sponsor broadcast is missing a blinded key")
        node = GroupNode((round_no, c), left=left, right=right)
        s = merge_secret(curve, left.secret, right.blinded)
        if s != merge_secret(curve, right.secret, left.blinded):
            raise GroupError("merge sides disagree")
        _set_secret(curve, node, s)
        out.append(node)
    return out


def rounds_needed(n: int) -> int:
    """ceil(log2 n), with 0 for a single member."""
    return (n - 1).bit_length()


def _round_label(g: GroupNode) -> tuple[int, int]:
    return g.aliases[-1] if g.is_leaf else g.label


def build_group(
    members: Iterable[int],
    shares: Mapping[int, KeyShare],
    curve: CurveParams,
    rng: random.Random,
    exchange: Callable[[KeyShare, KeyShare], Exchange] = run_pairwise,
    on_broadcast: Callable[[GroupNode, GroupNode], None] | None = None,
) -> tuple[KeyTree, dict[int, GroupKey]]:
    order = order_members(members)
    groups = leaf_pair_round(order, shares, curve, rng, exchange)
    rounds = [[(_round_label(g), g) for g in groups]] if len(order) > 1 else []
    r = 1
    while len(groups) > 1:
        r += 1
        groups = merge_round(groups, curve, r, on_broadcast)
        rounds.append([(_round_label(g), g) for g in groups])
    if len(order) == 1:
        groups[0].aliases.clear()
    tree = KeyTree(groups[0], order, len(rounds), curve, rounds=rounds)
    view = public_view(tree)
    keys = {m: member_compute_key(view, m, entry_secret(tree, m)) for m in order}
    return tree, keys


def sponsor_of(subtree: GroupNode) -> int:
    """Shallowest rightmost leaf."""
    level = [subtree]
    while True:
        leaves = [n for n in level if n.is_leaf]
        if leaves:
            return leaves[-1].member
        level = [c for n in level for c in (n.left, n.right)]


# -- member-side computation -------------------------------------------------


@dataclass
class PublicTree:
    """Tree shape plus blinded keys only; what a member learns from broadcasts."""

    root: GroupNode
    epoch: int
    curve: CurveParams
    members: list[int]


def _strip(node: GroupNode) -> GroupNode:
    return GroupNode(
        node.label,
        left=None if node.is_leaf else _strip(node.left),
        right=None if node.is_leaf else _strip(node.right),
        member=node.member,
        blinded=node.blinded,
        aliases=list(node.aliases),
    )


def public_view(tree: KeyTree) -> PublicTree:
    return PublicTree(_strip(tree.root), tree.epoch, tree.curve, list(tree.members))


def _path(root: GroupNode, member: int) -> list[GroupNode]:
    """Nodes from the member's leaf up to the root."""
    stack = [(root, [root])]
    while stack:
        node, path = stack.pop()
        if node.is_leaf:
            if node.member == member:
                return path[::-1]
            continue
        stack.append((node.left, path + [node.left]))
        stack.append((node.right, path + [node.right]))
    raise GroupError(f"M{member} is not in the group")


def _entry_index(path: list[GroupNode]) -> int:
    # own leaf if it carries a secret, else the pair node above it
    return 0 if path[0].blinded is not None or len(path) == 1 else 1


def entry_secret(tree: KeyTree, member: int) -> int:
    path = _path(tree.root, member)
    return path[_entry_index(path)].secret


def walk_to_root(curve: CurveParams, path: list[GroupNode], start: int, secret: int) -> int:
    """Fold ``secret`` (assumed to sit at ``path[start]``) up to the root secret."""
    for child, parent in zip(path[start:], path[start + 1 :]):
        sibling = parent.right if parent.left is child else parent.left
        if sibling.blinded is None:
            raise GroupError(f"missing blinded key for {sibling.name()}")
        secret = merge_secret(curve, secret, sibling.blinded)
    return secret


def member_path_secrets(view: PublicTree, member: int, own_secret: int) -> list[tuple[GroupNode, int]]:
    path = _path(view.root, member)
    start = _entry_index(path)
    entry = path[start]
    if entry.blinded is not None and ec.scalar_mul(view.curve, own_secret, view.curve.G) != entry.blinded:
        raise GroupError(f"secret does not match the blinded key of {entry.name()}")
    out = [(entry, own_secret)]
    for k in range(start + 1, len(path)):
        out.append((path[k], walk_to_root(view.curve, path[k - 1 : k + 1], 0, out[-1][1])))
    return out


def member_compute_key(view: PublicTree, member: int, own_secret: int) -> GroupKey:
    root_secret = member_path_secrets(view, member, own_secret)[-1][1]
    return GroupKey(node_key(view.curve, root_secret), view.epoch, frozenset(view.members))


def member_group_keys(tree: KeyTree, member: int) -> list[tuple[tuple[int, int], bytes]]:
    """Keys a member stores: one per group label on its path (renamed groups count per round)."""
    if len(tree.members) == 1:
        return []
    out = []
    view = public_view(tree)
    for node, secret in member_path_secrets(view, member, entry_secret(tree, member)):
        k = node_key(tree.curve, secret)
        out.extend((lab, k) for lab in node.labels if lab[0] > 0)
    return out


# -- membership changes -------------------------------------------------------


def _parent_of(root: GroupNode, target: GroupNode) -> GroupNode | None:
    for node in root.preorder():
        if not node.is_leaf and (node.left is target or node.right is target):
            return node
    return None


def group_rekey(tree: KeyTree, leaving: int, rng: random.Random) -> tuple[KeyTree, GroupKey]:
    """Remove ``leaving``; the sponsor of the promoted sibling refreshes its path."""
    if leaving not in tree.members:
        raise GroupError(f"M{leaving} is not in the group")
    if len(tree.members) == 1:
        raise GroupError("cannot remove the last member")
    curve = tree.curve
    leaf = tree.leaf(leaving)
    # everything the leaving member could compute: its entry secret and all ancestors
    known = _path(tree.root, leaving)
    known_blinded = {n.blinded for n in known[_entry_index(known):]}

    parent = _parent_of(tree.root, leaf)
    sibling = parent.right if parent.left is leaf else parent.left
    if sibling.is_leaf:
        sibling.aliases = parent.labels
    grand = _parent_of(tree.root, parent)
    if grand is None:
        root = sibling
    elif grand.left is parent:
        root, grand.left = tree.root, sibling
    else:
        root, grand.right = tree.root, sibling

    sponsor = sponsor_of(sibling)
    path = _path(root, sponsor)
    pair = path[1] if len(path) > 1 and path[1].pair_key is not None else None
    start = 1 if pair is not None else 0

    # Prefer path secrets disjoint from everything the leaver knew.  On tiny
    # curves that can be unsatisfiable, so fall back to a fresh root only, and
    # past that to the last draw (only reachable when the group order is tiny).
    fallback = None
    for _ in range(MAX_REFRESH_TRIES):
        nonce = rng.randbytes(16)
        if pair is not None:
            pair.nonce = nonce
            s = _pair_secret(curve, pair)
        else:
            s = ec.random_scalar(curve, rng)
        secrets = [s]
        for child, node in zip(path[start:], path[start + 1 :]):
            sib = node.right if node.left is child else node.left
            secrets.append(merge_secret(curve, secrets[-1], sib.blinded))
        blinded = [ec.scalar_mul(curve, x, curve.G) for x in secrets]
        if known_blinded.isdisjoint(blinded):
            break
        if fallback is None and blinded[-1] not in known_blinded:
            fallback = (nonce, secrets)
    else:
        nonce, secrets = fallback or (nonce, secrets)
        if pair is not None:
            pair.nonce = nonce
    for node, x in zip(path[start:], secrets):
        _set_secret(curve, node, x)

    members = [m for m in tree.members if m != leaving]
    new = KeyTree(root, members, _depth(root), curve, epoch=tree.epoch + 1, rounds=tree.rounds)
    return new, new.group_key()


def group_join(tree: KeyTree, newcomer: int, rng: random.Random) -> tuple[KeyTree, GroupKey]:
    """Merge the existing tree with a singleton group for ``newcomer``."""
    if newcomer in tree.members:
        raise GroupError(f"M{newcomer} is already a member")
    curve = tree.curve
    leaf = GroupNode((0, newcomer), member=newcomer)
    _set_secret(curve, leaf, ec.random_scalar(curve, rng))
    r = tree.height + 1
    root = GroupNode((r, 1), left=tree.root, right=leaf)
    _set_secret(curve, root, merge_secret(curve, tree.root.secret, leaf.blinded))
    new = KeyTree(root, tree.members + [newcomer], r, curve, epoch=tree.epoch + 1, rounds=tree.rounds)
    return new, new.group_key()


def _depth(node: GroupNode) -> int:
    return 0 if node.is_leaf else 1 + max(_depth(node.left), _depth(node.right))


# -- sponsor broadcast wire format ------------------------------------------


def encode_broadcast(subtree: GroupNode, epoch: int, curve: CurveParams) -> bytes:
    nodes = list(subtree.preorder())
    out = bytearray([BROADCAST_TYPE]) + struct.pack(">II", epoch, len(nodes))
    for node in nodes:
        r, c = node.label
        out += struct.pack(">BI", r, c)
        out += ec.encode_point(curve, node.blinded if node.blinded is not None else ec.IDENTITY)
    return bytes(out)


def decode_broadcast(data: bytes, curve: CurveParams) -> tuple[int, GroupNode]:
    """Inverse of :func:`encode_broadcast`; returns (epoch, public subtree)."""
    if not data or data[0] != BROADCAST_TYPE:
        raise GroupError("not a sponsor broadcast")
    try:
        epoch, count = struct.unpack_from(">II", data, 1)
    except struct.error as exc:
        raise GroupError("truncated broadcast") from exc
    off = 9
    psize = ec.point_size(curve)
    entries = []
    for _ in range(count):
        if off + 5 > len(data):
            raise GroupError("truncated broadcast")
        r, c = struct.unpack_from(">BI", data, off)
        off += 5
        if data[off : off + 1] == b"\x00":
            P, off = None, off + 1
        else:
            try:
                P = ec.decode_point(curve, data[off : off + psize])
            except ec.CurveError as exc:
                raise GroupError(str(exc)) from exc
            off += psize
        entries.append(((r, c), P))
    if off != len(data):
        raise GroupError("trailing bytes in broadcast")
    it = iter(entries)

    def build() -> GroupNode:
        try:
            (r, c), P = next(it)
        except StopIteration:
            raise GroupError("broadcast tree is incomplete") from None
        if r == 0:
            return GroupNode((0, c), member=c, blinded=P)
        return GroupNode((r, c), left=build(), right=build(), blinded=P)

    root = build()
    if next(it, None) is not None:
        raise GroupError("broadcast has extra nodes")
    return epoch, root
