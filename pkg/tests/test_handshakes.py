import hashlib
import random
import struct

import pytest
from hypothesis import given, settings, strategies as st

from tklu import ec
from tklu.ec import TEST64, TOY, Point
from tklu.handshakes import (
    AbortMsg,
    DecodeError,
    HandshakeError,
    MsgType,
    PairwiseMsg1,
    PathMsg1,
    Phase,
    VerifyFailed,
    WrongPhase,
    decode,
    hash_tag,
    pk_confirm,
    pk_finalize,
    pk_init,
    pk_respond,
    pw_confirm,
    pw_finalize,
    pw_init,
    pw_respond,
    run_pairwise,
    run_path,
)
from tklu.keymatrix import FieldVector, assign_share, compose, gen_master

from oracles import pairwise_key_oracle, path_key_oracle, toy_mul

DEMO = compose([[1, 0], [3, 2]], [2, 2], 7)
S0, S1 = assign_share(DEMO, 0), assign_share(DEMO, 1)


def shares(n=5, q=65537, seed=1):
    m = gen_master(n, q, seed)
    return [assign_share(m, i) for i in range(n)]


def pw_tag_oracle(mtype, k, i, j, col_i, col_r):
    body = bytes([mtype, k]) + struct.pack(">II", i, j) + bytes(col_i) + bytes(col_r)
    return hashlib.sha256(b"PWAUTH" + body).digest()


def test_hash_tag():
    assert hash_tag(b"PW", b"abc") == hashlib.sha256(b"PWabc").digest()
    assert hash_tag(b"PW", b"abc") != hash_tag(b"PW", b"abd")
    assert hash_tag(b"PW", b"x") != hash_tag(b"PATH", b"x")
    assert len(hash_tag(b"", b"")) == 32


def test_demo_pairwise_messages():
    st0, m1 = pw_init(S0, 1)
    assert m1.col.values == (2, 0)
    assert m1.encode() == bytes([1]) + struct.pack(">II", 0, 2) + bytes([2, 0])

    st1, m2 = pw_respond(S1, decode(m1.encode(), 7, 2))
    assert st1.k_value.value == 6
    assert m2.col.values == (6, 4)
    assert m2.tag == pw_tag_oracle(MsgType.PW2, 6, 0, 1, [2, 0], [6, 4])

    k0, m3 = pw_confirm(st0, decode(m2.encode(), 7, 2))
    assert m3.tag == pw_tag_oracle(MsgType.PW3, 6, 0, 1, [2, 0], [6, 4])
    k1 = pw_finalize(st1, decode(m3.encode(), 7, 2))
    assert k0 == k1
    assert k0.key == pairwise_key_oracle(6, 1, 0, 1)
    assert st0.phase is Phase.DONE and st1.phase is Phase.DONE


def test_pairwise_guards():
    with pytest.raises(HandshakeError):
        pw_init(S0, 0)
    with pytest.raises(DecodeError):
        pw_respond(S1, PairwiseMsg1(0, FieldVector((1, 2, 3), 7)))
    with pytest.raises(DecodeError):
        pw_respond(S1, PairwiseMsg1(1, S0.col))  # claims to be the responder itself


def test_pairwise_tampered_msg2_tag():
    st0, m1 = pw_init(S0, 1)
    _, m2 = pw_respond(S1, m1)
    bad = type(m2)(m2.sender, m2.col, bytes([m2.tag[0] ^ 1]) + m2.tag[1:])
    with pytest.raises(VerifyFailed):
        pw_confirm(st0, bad)
    assert st0.phase is Phase.FAILED and st0.session_key is None


def test_pairwise_substituted_column():
    a, b, c = shares(3)
    st0, m1 = pw_init(a, 1)
    _, m2 = pw_respond(b, m1)
    with pytest.raises(VerifyFailed):
        pw_confirm(st0, type(m2)(m2.sender, c.col, m2.tag))


def test_pairwise_msg3_tamper_and_replay():
    st0, m1 = pw_init(S0, 1)
    st1, m2 = pw_respond(S1, m1)
    _, m3 = pw_confirm(st0, m2)
    with pytest.raises(VerifyFailed):
        pw_finalize(st1, type(m3)(m3.sender, bytes(32)))

    st0, m1 = pw_init(S0, 1)
    st1, m2 = pw_respond(S1, m1)
    _, m3 = pw_confirm(st0, m2)
    pw_finalize(st1, m3)
    with pytest.raises(WrongPhase):
        pw_finalize(st1, m3)
    with pytest.raises(WrongPhase):
        pw_confirm(st0, m2)
    fresh, _ = pw_init(S0, 1)
    with pytest.raises(DecodeError):
        pw_confirm(fresh, m3)


def test_path_examples_toy():
    a, b = shares(2, 7)
    rng = random.Random(0)
    sa, m1 = pk_init(a, TOY, rng, 1, r=3)
    assert m1.eph == Point(*toy_mul(3))
    sb, m2 = pk_respond(b, TOY, rng, decode(m1.encode(TOY), 7, 2, TOY), r=5)
    assert TOY.on_curve(m2.eph)
    ka, m3 = pk_confirm(sa, decode(m2.encode(TOY), 7, 2, TOY))
    kb = pk_finalize(sb, decode(m3.encode(), 7, 2, TOY))
    assert ka == kb
    assert ka.key == path_key_oracle(toy_mul(15), 0, 1)


def test_path_unit_scalar():
    a, b = shares(2, 7)
    ex = run_path(a, b, TOY, random.Random(1), r_a=1, r_b=7)
    assert ex.completed
    assert ex.initiator_key.key == path_key_oracle(toy_mul(7), 0, 1)


def test_path_rejects_off_curve_point():
    a, b = shares(2, 7)
    with pytest.raises(DecodeError):
        pk_respond(b, TOY, random.Random(0), PathMsg1(0, a.col, Point(5, 2)))
    wire = PathMsg1(0, a.col, Point(5, 1)).encode(TOY)
    with pytest.raises(DecodeError):
        decode(wire[:-1] + bytes([2]), 7, 2, TOY)


def _path_states(curve=TOY):
    a, b = shares(2, 7)
    rng = random.Random(2)
    sa, m1 = pk_init(a, curve, rng, 1)
    sb, m2 = pk_respond(b, curve, rng, m1)
    return sa, sb, m2


def test_path_key_tag_corrupted_aborts():
    sa, _, m2 = _path_states()
    bad = type(m2)(m2.sender, m2.col, bytes(32), m2.eph)
    with pytest.raises(VerifyFailed) as info:
        pk_confirm(sa, bad)
    assert info.value.abort == AbortMsg(0, 1)
    assert sa.session_key is None


def test_path_run_appends_abort_to_transcript():
    a, b = shares(2, 7)

    def tamper(i, data):
        return data[:-5] + bytes([data[-5] ^ 0x80]) + data[-4:] if i == 1 else data

    ex = run_path(a, b, TOY, random.Random(3), tamper)
    assert not ex.completed and isinstance(ex.error, VerifyFailed)
    assert ex.transcript[-1][0] == MsgType.ABORT


@pytest.mark.parametrize("field", ["key_tag", "dh_tag"])
def test_path_finalize_needs_both_tags(field):
    sa, sb, m2 = _path_states()
    _, m3 = pk_confirm(sa, m2)
    tags = {"key_tag": m3.key_tag, "dh_tag": m3.dh_tag}
    tags[field] = bytes([tags[field][0] ^ 1]) + tags[field][1:]
    with pytest.raises(VerifyFailed):
        pk_finalize(sb, type(m3)(m3.sender, **tags))


def test_transcript_needs_discrete_log():
    a, b = shares(2, 7)
    ex = run_path(a, b, TOY, random.Random(0), r_a=4, r_b=11)
    wire = b"".join(ex.transcript)
    assert ex.initiator_key.key not in wire
    Qi = decode(ex.transcript[0], 7, 2, TOY).eph
    assert [r for r in range(1, 19) if ec.scalar_mul(TOY, r, TOY.G) == Qi] == [4]


def test_scalars_never_on_the_wire():
    sh = shares(6, 65537, 9)
    rng = random.Random(9)
    for _ in range(30):
        i, j = rng.sample(range(6), 2)
        ra, rb = rng.randrange(1, TEST64.order), rng.randrange(1, TEST64.order)
        ex = run_path(sh[i], sh[j], TEST64, rng, r_a=ra, r_b=rb)
        wire = b"".join(ex.transcript)
        assert ex.completed and len(ex.transcript) == 3
        for r in (ra, rb):
            assert r.to_bytes(8, "big") not in wire
        assert ex.initiator_key.key not in wire


def test_message_counts():
    a, b = shares(2)
    assert len(run_pairwise(a, b).transcript) == 3
    assert len(run_path(a, b, TOY, random.Random(0)).transcript) == 3


def test_decode_strictness():
    wire = PairwiseMsg1(0, S0.col).encode()
    assert decode(wire, 7, 2) == PairwiseMsg1(0, S0.col)
    with pytest.raises(DecodeError):
        decode(wire + b"\x00", 7, 2)
    with pytest.raises(DecodeError):
        decode(wire[:-1], 7, 2)
    with pytest.raises(DecodeError):
        decode(wire, 7, 3)
    with pytest.raises(DecodeError):
        decode(wire[:-1] + bytes([7]), 7, 2)
    with pytest.raises(DecodeError):
        decode(b"\x7f" + wire[1:], 7, 2)
    with pytest.raises(DecodeError):
        decode(b"", 7, 2)
    with pytest.raises(DecodeError):
        decode(PathMsg1(0, S0.col, TOY.G).encode(TOY), 7, 2)  # no curve given
    abort = AbortMsg(3, 4)
    assert decode(abort.encode(), 7) == abort


def test_cross_matrix_never_completes():
    for t in range(20):
        a = assign_share(gen_master(4, 65537, f"a{t}"), 0)
        b = assign_share(gen_master(4, 65537, f"b{t}"), 1)
        assert not run_pairwise(a, b).completed
        assert not run_path(a, b, TOY, random.Random(t)).completed


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2**32), st.integers(0, 2), st.data())
def test_single_bit_tamper_never_completes(seed, index, data):
    rng = random.Random(seed)
    sh = shares(4, 65537, seed)
    i, j = rng.sample(range(4), 2)
    path = data.draw(st.booleans())

    def tamper(k, msg):
        if k != index:
            return msg
        bit = data.draw(st.integers(0, 8 * len(msg) - 1))
        return msg[: bit // 8] + bytes([msg[bit // 8] ^ (1 << (bit % 8))]) + msg[bit // 8 + 1 :]

    ex = run_path(sh[i], sh[j], TOY, rng, tamper) if path else run_pairwise(sh[i], sh[j], tamper)
    assert not ex.completed
    assert isinstance(ex.error, (DecodeError, VerifyFailed))


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 8), st.sampled_from([7, 251, 65537]), st.integers(0, 2**32))
def test_honest_runs_agree(n, q, seed):
    rng = random.Random(seed)
    sh = shares(n, q, seed)
    i, j = rng.sample(range(n), 2)
    pw = run_pairwise(sh[i], sh[j])
    pk = run_path(sh[i], sh[j], TEST64, rng)
    for ex in (pw, pk):
        assert ex.completed and ex.error is None
        assert ex.initiator_key == ex.responder_key
        assert ex.initiator_key.peers == {i, j}
