"""Short-Weierstrass curves over prime fields and elliptic-curve Diffie-Hellman.

Affine points with Jacobian scalar multiplication; not side-channel hardened.
The ``toy`` preset has a base point of order 19, small enough for exhaustive
checks in tests.
"""

from __future__ import annotations

import random
import re
from dataclasses import dataclass
from pathlib import Path

from sympy import isprime


class CurveError(ValueError):
    pass


@dataclass(frozen=True)
class Point:
    """Affine point; ``x is None`` marks the point at infinity."""

    x: int | None
    y: int | None

    @property
    def is_identity(self) -> bool:
        return self.x is None


IDENTITY = Point(None, None)


@dataclass(frozen=True)
class CurveParams:
    name: str
    p: int
    a: int
    b: int
    G: Point
    order: int

    @property
    def coord_width(self) -> int:
        return (self.p.bit_length() + 7) // 8

    @property
    def scalar_width(self) -> int:
        return (self.order.bit_length() + 7) // 8

    def on_curve(self, P: Point) -> bool:
        if P.is_identity:
            return True
        x, y, p = P.x, P.y, self.p
        if not (0 <= x < p and 0 <= y < p):
            return False
        return (y * y - x * x * x - self.a * x - self.b) % p == 0


def validate_curve(c: CurveParams) -> None:
    """Raise CurveError unless ``c`` is a usable prime-order DH group."""
    if not isprime(c.p):
        raise CurveError(f"field size {c.p} is not prime")
    if (4 * c.a**3 + 27 * c.b**2) % c.p == 0:
        raise CurveError("singular curve: 4a^3 + 27b^2 = 0 mod p")
    if c.G.is_identity or not c.on_curve(c.G):
        raise CurveError("base point is not on the curve")
    if not isprime(c.order):
        raise CurveError(f"order {c.order} is not prime")
    if not scalar_mul(c, c.order, c.G).is_identity:
        raise CurveError("order * G is not the identity")


def neg(c: CurveParams, A: Point) -> Point:
    return A if A.is_identity else Point(A.x, (-A.y) % c.p)


def point_add(c: CurveParams, A: Point, B: Point) -> Point:
    if A.is_identity:
        return B
    if B.is_identity:
        return A
    p = c.p
    if A.x == B.x:
        if (A.y + B.y) % p == 0:
            return IDENTITY
        lam = (3 * A.x * A.x + c.a) * pow(2 * A.y, -1, p) % p
    else:
        lam = (B.y - A.y) * pow(B.x - A.x, -1, p) % p
    x3 = (lam * lam - A.x - B.x) % p
    return Point(x3, (lam * (A.x - x3) - A.y) % p)


def _jac_double(c: CurveParams, X: int, Y: int, Z: int):
    p = c.p
    if Z == 0 or Y == 0:
        return 1, 1, 0
    YY = Y * Y % p
    S = 4 * X * YY % p
    M = 3 * X * X % p if c.a == 0 else (3 * X * X + c.a * pow(Z, 4, p)) % p
    X3 = (M * M - 2 * S) % p
    return X3, (M * (S - X3) - 8 * YY * YY) % p, 2 * Y * Z % p


def _jac_add_affine(c: CurveParams, X1: int, Y1: int, Z1: int, x2: int, y2: int):
    p = c.p
    if Z1 == 0:
        return x2, y2, 1
    ZZ = Z1 * Z1 % p
    H = (x2 * ZZ - X1) % p
    r = (y2 * ZZ * Z1 - Y1) % p
    if H == 0:
        return _jac_double(c, X1, Y1, Z1) if r == 0 else (1, 1, 0)
    HH = H * H % p
    HHH = H * HH % p
    V = X1 * HH % p
    X3 = (r * r - HHH - 2 * V) % p
    return X3, (r * (V - X3) - Y1 * HHH) % p, Z1 * H % p


def scalar_mul(c: CurveParams, k: int, A: Point) -> Point:
    """Left-to-right double-and-add in Jacobian coordinates.

    ``k`` may be any non-negative int (``order * G`` gives the identity).
    """
    if k < 0:
        raise CurveError("negative scalar")
    if A.is_identity or k == 0:
        return IDENTITY
    X, Y, Z = 1, 1, 0
    for bit in bin(k)[2:]:
        X, Y, Z = _jac_double(c, X, Y, Z)
        if bit == "1":
            X, Y, Z = _jac_add_affine(c, X, Y, Z, A.x, A.y)
    if Z == 0:
        return IDENTITY
    zi = pow(Z, -1, c.p)
    zi2 = zi * zi % c.p
    return Point(X * zi2 % c.p, Y * zi2 * zi % c.p)


def random_scalar(c: CurveParams, rng: random.Random) -> int:
    """Uniform scalar in [1, order)."""
    return rng.randrange(1, c.order)


@dataclass(frozen=True)
class EphemeralKeypair:
    secret: int
    public: Point


def generate_keypair(c: CurveParams, rng: random.Random) -> EphemeralKeypair:
    k = random_scalar(c, rng)
    return EphemeralKeypair(k, scalar_mul(c, k, c.G))


def check_public(c: CurveParams, Q: Point) -> None:
    if Q.is_identity:
        raise CurveError("peer public key is the identity")
    if not c.on_curve(Q):
        raise CurveError("peer public key is not on the curve")


def dh(c: CurveParams, secret: int, peer_public: Point) -> Point:
    check_public(c, peer_public)
    if not 1 <= secret < c.order:
        raise CurveError("secret scalar out of range")
    return scalar_mul(c, secret, peer_public)


def encode_point(c: CurveParams, P: Point) -> bytes:
    if P.is_identity:
        return b"\x00"
    w = c.coord_width
    return b"\x04" + P.x.to_bytes(w, "big") + P.y.to_bytes(w, "big")


def point_size(c: CurveParams) -> int:
    return 1 + 2 * c.coord_width


def decode_point(c: CurveParams, data: bytes) -> Point:
    if data == b"\x00":
        return IDENTITY
    w = c.coord_width
    if len(data) != 1 + 2 * w or data[0] != 0x04:
        raise CurveError("malformed point encoding")
    P = Point(int.from_bytes(data[1 : 1 + w], "big"), int.from_bytes(data[1 + w :], "big"))
    if not c.on_curve(P):
        raise CurveError("decoded point is not on the curve")
    return P


TOY = CurveParams("toy", p=17, a=2, b=2, G=Point(5, 1), order=19)

# Supersingular y^2 = x^3 + 7 over a 64-bit p = 2 mod 3; #E = p + 1 = 6 * order.
TEST64 = CurveParams(
    "test64",
    p=18446744073709549733,
    a=0,
    b=7,
    G=Point(16503851016221665603, 16416717646668164485),
    order=3074457345618258289,
)

SECP256K1 = CurveParams(
    "secp256k1",
    p=0xFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFEFFFFFC2F,
    a=0,
    b=7,
    G=Point(
        0x79BE667EF9DCBBAC55A06295CE870B07029BFCDB2DCE28D959F2815B16F81798,
        0x483ADA7726A3C4655DA4FBFC0E1108A8FD17B448A68554199C47D08FFB10D4B8,
    ),
    order=0xFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFEBAAEDCE6AF48A03BBFD25E8CD0364141,
)

PRESETS = {c.name: c for c in (TOY, TEST64, SECP256K1)}


def get_curve(name: str) -> CurveParams:
    try:
        return PRESETS[name]
    except KeyError:
        raise CurveError(f"unknown curve preset {name!r}; known: {sorted(PRESETS)}") from None


def load_curve(path: str | Path) -> CurveParams:
    """Read ``key = value`` lines (p, a, b, gx, gy, order; decimal or 0x-hex)."""
    fields = {}
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        m = re.fullmatch(r"(\w+)\s*[=:]\s*(\S+)", line)
        if not m:
            raise CurveError(f"cannot parse curve line: {line!r}")
        fields[m.group(1).lower()] = int(m.group(2), 0)
    missing = {"p", "a", "b", "gx", "gy", "order"} - fields.keys()
    if missing:
        raise CurveError(f"curve file missing {sorted(missing)}")
    c = CurveParams(
        Path(path).stem,
        fields["p"],
        fields["a"] % fields["p"],
        fields["b"] % fields["p"],
        Point(fields["gx"], fields["gy"]),
        fields["order"],
    )
    validate_curve(c)
    return c
