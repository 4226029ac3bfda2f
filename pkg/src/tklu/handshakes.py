"""Pairwise and path key establishment handshakes.

Both protocols are three messages long::

    pairwise:  I -> R  PW1(col_I)
               R -> I  PW2(col_R, tag)
               I -> R  PW3(tag)

    path:      I -> R  PK1(col_I, Q_I)
               R -> I  PK2(col_R, key_tag, Q_R)
               I -> R  PK3(key_tag, dh_tag)

The LU entry ``K_IR`` authenticates both ends; for path keys the traffic key
comes from the ephemeral ECDH point ``r_I * r_R * G``.  Authentication tags
cover the matrix entry plus the whole transcript (ids, columns, ephemeral
points), so any modification of a message is caught at the next check.

Every party is a :class:`HandshakeState` advanced by the ``pw_*`` / ``pk_*``
functions.  Messages are dataclasses with a bit-exact wire encoding
(``encode`` / :func:`decode`).
"""

from __future__ import annotations

import hashlib
import hmac
import random
import struct
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import Union

from . import ec
from .ec import CurveParams, Point
from .keymatrix import FieldElement, FieldVector, KeyShare, derive_key, element_width

TAG_SIZE = 32

PWAUTH = b"PWAUTH"
PATHAUTH = b"PATHAUTH"
PATHDH = b"PATHDH"
PWKEY = b"PWKEY"
PATHKEY = b"PATHKEY"


class HandshakeError(Exception):
    pass


class DecodeError(HandshakeError):
    """Message bytes are not a well-formed protocol message."""


class VerifyFailed(HandshakeError):
    """An authentication tag did not match; ``abort`` is set when one must be broadcast."""

    def __init__(self, msg: str, abort: AbortMsg | None = None):
        super().__init__(msg)
        self.abort = abort


class WrongPhase(HandshakeError):
    pass


def hash_tag(label: bytes, payload: bytes) -> bytes:
    return hashlib.sha256(label + payload).digest()


def _u32(x: int) -> bytes:
    return struct.pack(">I", x)


class MsgType(IntEnum):
    PW1 = 0x01
    PW2 = 0x02
    PW3 = 0x03
    PK1 = 0x11
    PK2 = 0x12
    PK3 = 0x13
    ABORT = 0x1F


# -- wire format ------------------------------------------------------------


def _enc_col(col: FieldVector) -> bytes:
    return _u32(len(col)) + col.to_bytes()


@dataclass(frozen=True)
class PairwiseMsg1:
    sender: int
    col: FieldVector
    type = MsgType.PW1

    def encode(self, curve=None) -> bytes:
        return bytes([self.type]) + _u32(self.sender) + _enc_col(self.col)


@dataclass(frozen=True)
class PairwiseMsg2:
    sender: int
    col: FieldVector
    tag: bytes
    type = MsgType.PW2

    def encode(self, curve=None) -> bytes:
        return bytes([self.type]) + _u32(self.sender) + _enc_col(self.col) + self.tag


@dataclass(frozen=True)
class PairwiseMsg3:
    sender: int
    tag: bytes
    type = MsgType.PW3

    def encode(self, curve=None) -> bytes:
        return bytes([self.type]) + _u32(self.sender) + self.tag


@dataclass(frozen=True)
class PathMsg1:
    sender: int
    col: FieldVector
    eph: Point
    type = MsgType.PK1

    def encode(self, curve: CurveParams) -> bytes:
        return bytes([self.type]) + _u32(self.sender) + _enc_col(self.col) + ec.encode_point(curve, self.eph)


@dataclass(frozen=True)
class PathMsg2:
    sender: int
    col: FieldVector
    key_tag: bytes
    eph: Point
    type = MsgType.PK2

    def encode(self, curve: CurveParams) -> bytes:
        return (
            bytes([self.type])
            + _u32(self.sender)
            + _enc_col(self.col)
            + self.key_tag
            + ec.encode_point(curve, self.eph)
        )


@dataclass(frozen=True)
class PathMsg3:
    sender: int
    key_tag: bytes
    dh_tag: bytes
    type = MsgType.PK3

    def encode(self, curve=None) -> bytes:
        return bytes([self.type]) + _u32(self.sender) + self.key_tag + self.dh_tag


@dataclass(frozen=True)
class AbortMsg:
    """Error broadcast after a failed path-key check; names the two parties only."""

    sender: int
    peer: int
    type = MsgType.ABORT

    def encode(self, curve=None) -> bytes:
        return bytes([self.type]) + _u32(self.sender) + _u32(self.peer)


Message = Union[PairwiseMsg1, PairwiseMsg2, PairwiseMsg3, PathMsg1, PathMsg2, PathMsg3, AbortMsg]


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.off = 0

    def take(self, k: int) -> bytes:
        if self.off + k > len(self.data):
            raise DecodeError("truncated message")
        out = self.data[self.off : self.off + k]
        self.off += k
        return out

    def u32(self) -> int:
        return struct.unpack(">I", self.take(4))[0]

    def col(self, q: int, n: int | None) -> FieldVector:
        count = self.u32()
        if n is not None and count != n:
            raise DecodeError(f"column has {count} elements, expected {n}")
        w = element_width(q)
        raw = self.take(count * w)
        vals = tuple(int.from_bytes(raw[t * w : (t + 1) * w], "big") for t in range(count))
        if any(v >= q for v in vals):
            raise DecodeError("column element outside GF(q)")
        return FieldVector(vals, q)

    def point(self, curve: CurveParams) -> Point:
        try:
            P = ec.decode_point(curve, self.take(ec.point_size(curve)))
        except ec.CurveError as exc:
            raise DecodeError(str(exc)) from exc
        if P.is_identity:
            raise DecodeError("ephemeral point is the identity")
        return P

    def done(self):
        if self.off != len(self.data):
            raise DecodeError("trailing bytes after message")


def decode(data: bytes, q: int, n: int | None = None, curve: CurveParams | None = None) -> Message:
    """Parse one wire message.  ``q``/``n``/``curve`` fix element and point sizes."""
    r = _Reader(data)
    try:
        mtype = MsgType(r.take(1)[0])
    except ValueError:
        raise DecodeError(f"unknown message type 0x{data[0]:02x}") from None
    sender = r.u32()
    if mtype in (MsgType.PK1, MsgType.PK2) and curve is None:
        raise DecodeError("path message needs a curve to decode")
    if mtype is MsgType.PW1:
        msg = PairwiseMsg1(sender, r.col(q, n))
    elif mtype is MsgType.PW2:
        msg = PairwiseMsg2(sender, r.col(q, n), r.take(TAG_SIZE))
    elif mtype is MsgType.PW3:
        msg = PairwiseMsg3(sender, r.take(TAG_SIZE))
    elif mtype is MsgType.PK1:
        msg = PathMsg1(sender, r.col(q, n), r.point(curve))
    elif mtype is MsgType.PK2:
        msg = PathMsg2(sender, r.col(q, n), r.take(TAG_SIZE), r.point(curve))
    elif mtype is MsgType.PK3:
        msg = PathMsg3(sender, r.take(TAG_SIZE), r.take(TAG_SIZE))
    else:
        msg = AbortMsg(sender, r.u32())
    r.done()
    return msg


# -- state machines ---------------------------------------------------------


class Role(Enum):
    INITIATOR = "initiator"
    RESPONDER = "responder"


class Phase(IntEnum):
    SENT_1 = 1
    SENT_2 = 2
    DONE = 3
    FAILED = 4


@dataclass(frozen=True)
class SessionKey:
    kind: str
    key: bytes
    peers: frozenset


@dataclass
class HandshakeState:
    kind: str
    role: Role
    share: KeyShare
    peer: int
    phase: Phase
    own_col: FieldVector
    peer_col: FieldVector | None = None
    k_value: FieldElement | None = None
    curve: CurveParams | None = None
    eph_secret: int | None = field(default=None, repr=False)
    own_eph: Point | None = None
    peer_eph: Point | None = None
    session_key: SessionKey | None = None

    @property
    def initiator(self) -> int:
        return self.share.node_id if self.role is Role.INITIATOR else self.peer

    @property
    def responder(self) -> int:
        return self.peer if self.role is Role.INITIATOR else self.share.node_id

    def _cols(self) -> tuple[FieldVector, FieldVector]:
        if self.role is Role.INITIATOR:
            return self.own_col, self.peer_col
        return self.peer_col, self.own_col

    def _pair_ids(self) -> bytes:
        a, b = sorted((self.share.node_id, self.peer))
        return _u32(a) + _u32(b)

    def _transcript(self) -> bytes:
        col_i, col_r = self._cols()
        out = (
            self.k_value.to_bytes()
            + _u32(self.initiator)
            + _u32(self.responder)
            + col_i.to_bytes()
            + col_r.to_bytes()
        )
        if self.kind == "path":
            eph_i, eph_r = (self.own_eph, self.peer_eph) if self.role is Role.INITIATOR else (self.peer_eph, self.own_eph)
            out += ec.encode_point(self.curve, eph_i) + ec.encode_point(self.curve, eph_r)
        return out

    def auth_tag(self, mtype: MsgType) -> bytes:
        label = PWAUTH if self.kind == "pairwise" else PATHAUTH
        return hash_tag(label, bytes([mtype]) + self._transcript())

    def _expect(self, kind: str, role: Role, phase: Phase):
        if self.kind != kind or self.role is not role or self.phase is not phase:
            raise WrongPhase(f"{kind} {role.value} at phase {phase.name} required, state is "
                             f"{self.kind} {self.role.value} at {self.phase.name}")

    def _fail(self, why: str, abort: AbortMsg | None = None):
        self.phase = Phase.FAILED
        raise VerifyFailed(why, abort)

    def _finish(self, key: SessionKey) -> SessionKey:
        self.session_key = key
        self.phase = Phase.DONE
        return key


def _want(msg, cls):
    if not isinstance(msg, cls):
        raise DecodeError(f"expected {cls.__name__}, got {type(msg).__name__}")


def _check_tag(got: bytes, want: bytes) -> bool:
    return hmac.compare_digest(got, want)


def _check_col(share: KeyShare, col: FieldVector, sender: int):
    if col.q != share.q or len(col) != share.n:
        raise DecodeError(f"column must have {share.n} elements over GF({share.q})")
    if sender == share.node_id:
        raise DecodeError("peer id equals own id")
    if not 0 <= sender < share.n:
        raise DecodeError(f"peer id {sender} outside the network")


def pairwise_key(k_value: FieldElement, a: int, b: int) -> SessionKey:
    lo, hi = sorted((a, b))
    return SessionKey("pairwise", hash_tag(PWKEY, k_value.to_bytes() + _u32(lo) + _u32(hi)), frozenset((a, b)))


def path_key(curve: CurveParams, shared: Point, a: int, b: int) -> SessionKey:
    lo, hi = sorted((a, b))
    return SessionKey(
        "path", hash_tag(PATHKEY, ec.encode_point(curve, shared) + _u32(lo) + _u32(hi)), frozenset((a, b))
    )


def pw_init(share: KeyShare, peer: int) -> tuple[HandshakeState, PairwiseMsg1]:
    if peer == share.node_id:
        raise HandshakeError("cannot establish a key with oneself")
    st = HandshakeState("pairwise", Role.INITIATOR, share, peer, Phase.SENT_1, share.col)
    return st, PairwiseMsg1(share.node_id, share.col)


def pw_respond(share: KeyShare, msg1: PairwiseMsg1) -> tuple[HandshakeState, PairwiseMsg2]:
    _want(msg1, PairwiseMsg1)
    _check_col(share, msg1.col, msg1.sender)
    st = HandshakeState("pairwise", Role.RESPONDER, share, msg1.sender, Phase.SENT_2, share.col, peer_col=msg1.col)
    st.k_value = derive_key(share.row, msg1.col)
    return st, PairwiseMsg2(share.node_id, share.col, st.auth_tag(MsgType.PW2))


def pw_confirm(st: HandshakeState, msg2: PairwiseMsg2) -> tuple[SessionKey, PairwiseMsg3]:
    _want(msg2, PairwiseMsg2)
    st._expect("pairwise", Role.INITIATOR, Phase.SENT_1)
    if msg2.sender != st.peer:
        st._fail(f"reply from {msg2.sender}, expected {st.peer}")
    if msg2.col.q != st.share.q or len(msg2.col) != st.share.n:
        st._fail("peer column has the wrong shape")
    st.peer_col = msg2.col
    st.k_value = derive_key(st.share.row, msg2.col)
    if not _check_tag(msg2.tag, st.auth_tag(MsgType.PW2)):
        st.k_value = None
        st._fail("pairwise tag mismatch: peer does not hold a matching share")
    key = st._finish(pairwise_key(st.k_value, st.share.node_id, st.peer))
    return key, PairwiseMsg3(st.share.node_id, st.auth_tag(MsgType.PW3))


def pw_finalize(st: HandshakeState, msg3: PairwiseMsg3) -> SessionKey:
    _want(msg3, PairwiseMsg3)
    st._expect("pairwise", Role.RESPONDER, Phase.SENT_2)
    if msg3.sender != st.peer or not _check_tag(msg3.tag, st.auth_tag(MsgType.PW3)):
        st._fail("pairwise confirmation tag mismatch")
    return st._finish(pairwise_key(st.k_value, st.share.node_id, st.peer))


def pk_init(
    share: KeyShare, curve: CurveParams, rng: random.Random, peer: int, r: int | None = None
) -> tuple[HandshakeState, PathMsg1]:
    """Start a path-key handshake.  ``r`` overrides the ephemeral scalar (tests only)."""
    if peer == share.node_id:
        raise HandshakeError("cannot establish a key with oneself")
    r = ec.random_scalar(curve, rng) if r is None else r
    Q = ec.scalar_mul(curve, r, curve.G)
    st = HandshakeState("path", Role.INITIATOR, share, peer, Phase.SENT_1, share.col,
                        curve=curve, eph_secret=r, own_eph=Q)
    return st, PathMsg1(share.node_id, share.col, Q)


def pk_respond(
    share: KeyShare, curve: CurveParams, rng: random.Random, msg1: PathMsg1, r: int | None = None
) -> tuple[HandshakeState, PathMsg2]:
    _want(msg1, PathMsg1)
    try:
        ec.check_public(curve, msg1.eph)
    except ec.CurveError as exc:
        raise DecodeError(str(exc)) from exc
    _check_col(share, msg1.col, msg1.sender)
    r = ec.random_scalar(curve, rng) if r is None else r
    Q = ec.scalar_mul(curve, r, curve.G)
    st = HandshakeState("path", Role.RESPONDER, share, msg1.sender, Phase.SENT_2, share.col,
                        peer_col=msg1.col, curve=curve, eph_secret=r, own_eph=Q, peer_eph=msg1.eph)
    st.k_value = derive_key(share.row, msg1.col)
    return st, PathMsg2(share.node_id, share.col, st.auth_tag(MsgType.PK2), Q)


def _dh_tag(st: HandshakeState, shared: Point) -> bytes:
    return hash_tag(PATHDH, ec.encode_point(st.curve, shared) + _u32(st.initiator) + _u32(st.responder))


def pk_confirm(st: HandshakeState, msg2: PathMsg2) -> tuple[SessionKey, PathMsg3]:
    _want(msg2, PathMsg2)
    st._expect("path", Role.INITIATOR, Phase.SENT_1)
    abort = AbortMsg(st.share.node_id, st.peer)
    if msg2.sender != st.peer:
        st._fail(f"reply from {msg2.sender}, expected {st.peer}", abort)
    try:
        ec.check_public(st.curve, msg2.eph)
    except ec.CurveError as exc:
        st._fail(str(exc), abort)
    if msg2.col.q != st.share.q or len(msg2.col) != st.share.n:
        st._fail("peer column has the wrong shape", abort)
    st.peer_col = msg2.col
    st.peer_eph = msg2.eph
    st.k_value = derive_key(st.share.row, msg2.col)
    if not _check_tag(msg2.key_tag, st.auth_tag(MsgType.PK2)):
        st.k_value = None
        st._fail("path key tag mismatch", abort)
    shared = ec.dh(st.curve, st.eph_secret, msg2.eph)
    key = st._finish(path_key(st.curve, shared, st.share.node_id, st.peer))
    return key, PathMsg3(st.share.node_id, st.auth_tag(MsgType.PK3), _dh_tag(st, shared))


def pk_finalize(st: HandshakeState, msg3: PathMsg3) -> SessionKey:
    _want(msg3, PathMsg3)
    st._expect("path", Role.RESPONDER, Phase.SENT_2)
    shared = ec.dh(st.curve, st.eph_secret, st.peer_eph)
    key_ok = _check_tag(msg3.key_tag, st.auth_tag(MsgType.PK3))
    dh_ok = _check_tag(msg3.dh_tag, _dh_tag(st, shared))
    if msg3.sender != st.peer or not (key_ok and dh_ok):
        st._fail("path confirmation failed")
    return st._finish(path_key(st.curve, shared, st.share.node_id, st.peer))


# -- in-memory drivers ------------------------------------------------------


@dataclass
class Exchange:
    """Outcome of one complete handshake run over encoded messages."""

    initiator_key: SessionKey | None
    responder_key: SessionKey | None
    transcript: list[bytes]
    error: Exception | None = None

    @property
    def completed(self) -> bool:
        return self.initiator_key is not None and self.responder_key is not None


def run_pairwise(a: KeyShare, b: KeyShare, tamper=None) -> Exchange:
    """Run the pairwise protocol a -> b through the wire encoding.

    ``tamper(index, data) -> data`` may rewrite message ``index`` (0..2) in flight.
    """
    tamper = tamper or (lambda i, d: d)
    wire: list[bytes] = []
    ka = kb = None

    def send(i, msg):
        data = tamper(i, msg.encode())
        wire.append(data)
        return decode(data, a.q, a.n)

    try:
        sa, m1 = pw_init(a, b.node_id)
        sb, m2 = pw_respond(b, send(0, m1))
        ka, m3 = pw_confirm(sa, send(1, m2))
        kb = pw_finalize(sb, send(2, m3))
    except HandshakeError as exc:
        return Exchange(ka, kb, wire, exc)
    return Exchange(ka, kb, wire)


def run_path(
    a: KeyShare, b: KeyShare, curve: CurveParams, rng: random.Random, tamper=None,
    r_a: int | None = None, r_b: int | None = None,
) -> Exchange:
    """Run the path-key protocol a -> b through the wire encoding."""
    tamper = tamper or (lambda i, d: d)
    wire: list[bytes] = []
    ka = kb = None

    def send(i, msg):
        data = tamper(i, msg.encode(curve))
        wire.append(data)
        return decode(data, a.q, a.n, curve)

    try:
        sa, m1 = pk_init(a, curve, rng, b.node_id, r=r_a)
        sb, m2 = pk_respond(b, curve, rng, send(0, m1), r=r_b)
        ka, m3 = pk_confirm(sa, send(1, m2))
        kb = pk_finalize(sb, send(2, m3))
    except (HandshakeError, ec.CurveError) as exc:
        if isinstance(exc, VerifyFailed) and exc.abort is not None:
            wire.append(exc.abort.encode())
        return Exchange(ka, kb, wire, exc)
    return Exchange(ka, kb, wire)
