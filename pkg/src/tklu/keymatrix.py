"""Finite-field arithmetic over GF(q) and the LU-composed master key matrix.

The base station keeps a symmetric matrix ``K = L @ U`` over GF(q).  Node ``i``
is handed row ``i`` of ``L`` and column ``i`` of ``U``; any two nodes recover
the shared entry ``K[i][j]`` with a single dot product, because ``K`` is
symmetric.
"""

from __future__ import annotations

import random
import struct
from dataclasses import dataclass
from typing import Sequence

from sympy import isprime, nextprime


class FieldError(ValueError):
    """Raised on modulus mismatches, missing inverses and bad field input."""


def smallest_prime_geq(bound: int) -> int:
    """Return the least prime strictly greater than ``bound``."""
    if bound < 2:
        raise ValueError(f"bound must be >= 2, got {bound}")
    return int(nextprime(bound))


def element_width(q: int) -> int:
    """Byte width of a canonically encoded element of GF(q)."""
    return (q.bit_length() + 7) // 8


@dataclass(frozen=True)
class FieldElement:
    value: int
    q: int

    def __post_init__(self):
        if not 0 <= self.value < self.q:
            raise FieldError(f"{self.value} is not in [0, {self.q})")

    def __int__(self) -> int:
        return self.value

    def to_bytes(self) -> bytes:
        return self.value.to_bytes(element_width(self.q), "big")

    def __mul__(self, other: FieldElement) -> FieldElement:
        return ff_mul(self, other)


def _same_field(a: FieldElement, b: FieldElement) -> int:
    if a.q != b.q:
        raise FieldError(f"modulus mismatch: {a.q} vs {b.q}")
    return a.q


def ff_mul(a: FieldElement, b: FieldElement) -> FieldElement:
    q = _same_field(a, b)
    return FieldElement(a.value * b.value % q, q)


def ff_add(a: FieldElement, b: FieldElement) -> FieldElement:
    q = _same_field(a, b)
    return FieldElement((a.value + b.value) % q, q)


def ff_inv(a: FieldElement) -> FieldElement:
    if a.value == 0:
        raise FieldError("zero has no multiplicative inverse")
    return FieldElement(pow(a.value, -1, a.q), a.q)


@dataclass(frozen=True)
class FieldVector:
    """A length-n vector over GF(q), stored as plain ints for speed."""

    values: tuple[int, ...]
    q: int

    def __post_init__(self):
        for v in self.values:
            if not 0 <= v < self.q:
                raise FieldError(f"vector entry {v} is not in [0, {self.q})")

    def __len__(self) -> int:
        return len(self.values)

    def __getitem__(self, t: int) -> FieldElement:
        return FieldElement(self.values[t], self.q)

    def to_bytes(self) -> bytes:
        w = element_width(self.q)
        return b"".join(v.to_bytes(w, "big") for v in self.values)


def derive_key(row: FieldVector, col: FieldVector) -> FieldElement:
    """Dot product ``row . col`` mod q, i.e. the matrix entry K_ij."""
    if row.q != col.q:
        raise FieldError(f"modulus mismatch: {row.q} vs {col.q}")
    if len(row) != len(col):
        raise FieldError(f"length mismatch: {len(row)} vs {len(col)}")
    return FieldElement(sum(a * b for a, b in zip(row.values, col.values)) % row.q, row.q)


@dataclass(frozen=True)
class MasterKeyMatrix:
    n: int
    q: int
    L: tuple[tuple[int, ...], ...]
    U: tuple[tuple[int, ...], ...]
    K: tuple[tuple[int, ...], ...]


def _matmul(A: Sequence[Sequence[int]], B: Sequence[Sequence[int]], q: int):
    n = len(A)
    cols = list(zip(*B))
    return tuple(tuple(sum(a * b for a, b in zip(A[i], cols[j])) % q for j in range(n)) for i in range(n))


def compose(L: Sequence[Sequence[int]], diag: Sequence[int], q: int) -> MasterKeyMatrix:
    """Build the master matrix from a lower-triangular ``L`` and diagonal ``D``.

    ``U`` is set to ``D @ L.T`` so that ``K = L @ D @ L.T`` is symmetric by
    construction; no decomposition (and hence no zero-pivot failure) is needed.
    """
    n = len(L)
    if n == 0:
        raise ValueError("matrix dimension must be >= 1")
    if len(diag) != n or any(len(r) != n for r in L):
        raise ValueError("L must be n x n and D must have n entries")
    for i in range(n):
        if L[i][i] % q == 0 or diag[i] % q == 0:
            raise FieldError("diagonal entries of L and D must be nonzero")
        if any(L[i][j] % q for j in range(i + 1, n)):
            raise FieldError("L must be lower triangular")
    Lt = tuple(tuple(L[i][j] % q for j in range(n)) for i in range(n))
    U = tuple(tuple(diag[i] * Lt[j][i] % q for j in range(n)) for i in range(n))
    return MasterKeyMatrix(n=n, q=q, L=Lt, U=U, K=_matmul(Lt, U, q))


def gen_master(n: int, q: int, seed) -> MasterKeyMatrix:
    """Deterministically generate an n x n master matrix over GF(q)."""
    if n < 1:
        raise ValueError("matrix dimension must be >= 1")
    if not isprime(q):
        raise FieldError(f"q={q} is not prime")
    rng = random.Random(seed)
    L = [[0] * n for _ in range(n)]
    for i in range(n):
        for j in range(i):
            L[i][j] = rng.randrange(q)
        L[i][i] = rng.randrange(1, q)
    diag = [rng.randrange(1, q) for _ in range(n)]
    return compose(L, diag, q)


@dataclass(frozen=True)
class KeyShare:
    """Secret material pre-loaded on node ``node_id``: row i of L, column i of U."""

    node_id: int
    row: FieldVector
    col: FieldVector

    @property
    def n(self) -> int:
        return len(self.row)

    @property
    def q(self) -> int:
        return self.row.q

    def self_key(self) -> FieldElement:
        return derive_key(self.row, self.col)

    def to_bytes(self) -> bytes:
        qb = self.q.to_bytes(element_width(self.q), "big")
        return (
            struct.pack(">II", self.node_id, self.n)
            + struct.pack(">H", len(qb))
            + qb
            + self.row.to_bytes()
            + self.col.to_bytes()
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> KeyShare:
        try:
            node_id, n = struct.unpack_from(">II", data, 0)
            (qlen,) = struct.unpack_from(">H", data, 8)
        except struct.error as exc:
            raise FieldError("truncated key share") from exc
        off = 10 + qlen
        q = int.from_bytes(data[10:off], "big")
        if q < 2:
            raise FieldError("bad modulus in key share")
        w = element_width(q)
        if len(data) != off + 2 * n * w:
            raise FieldError("key share length does not match header")
        vals = [int.from_bytes(data[off + t * w : off + (t + 1) * w], "big") for t in range(2 * n)]
        return cls(node_id, FieldVector(tuple(vals[:n]), q), FieldVector(tuple(vals[n:]), q))


def assign_share(m: MasterKeyMatrix, i: int) -> KeyShare:
    if not 0 <= i < m.n:
        raise IndexError(f"node index {i} out of range for n={m.n}")
    return KeyShare(
        node_id=i,
        row=FieldVector(m.L[i], m.q),
        col=FieldVector(tuple(m.U[t][i] for t in range(m.n)), m.q),
    )
