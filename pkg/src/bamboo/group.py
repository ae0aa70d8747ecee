"""Prime-order group arithmetic on secp256k1.

Elements are written multiplicatively to match the protocol algebra: ``P * Q``
is the group operation, ``P / Q`` multiplies by the inverse and ``P ** k`` is
exponentiation by a scalar.  Point arithmetic goes through libsecp256k1 (via
coincurve's cffi bindings); scalars are plain Python ints modulo ``q``.
"""

from __future__ import annotations

import secrets
from dataclasses import dataclass

import gmpy2
from coincurve._libsecp256k1 import ffi, lib
from coincurve.context import GLOBAL_CONTEXT

from . import h2c

_CTX = GLOBAL_CONTEXT.ctx

FIELD_P = 0xFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFEFFFFFC2F
ORDER_Q = 0xFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFEBAAEDCE6AF48A03BBFD25E8CD0364141
FIELD_BITS = 256
ELEMENT_SIZE = 33
SCALAR_SIZE = 32
MIN_HEADROOM = 16

# upper bound on rejection-sampling attempts in encode(); each succeeds w.p. ~1/2
ENCODE_ATTEMPTS = 256

H1_TAG = b"BAMBOO-H1"
H2_TAG = b"BAMBOO-H2"
HG_TAG = b"BAMBOO-HG"
_SUITE = b"_secp256k1_XMD:SHA-256_SSWU_RO_"


class GroupError(ValueError):
    """Invalid encoding, out-of-range scalar or failed group operation."""


class EncodingError(GroupError):
    """encode() exhausted its retry budget."""


@dataclass(frozen=True)
class GroupParams:
    curve: str
    q: int
    p: int
    n: int
    headroom: int
    field_bits: int = FIELD_BITS

    @property
    def token_bytes(self) -> int:
        return (self.n + 7) // 8

    @property
    def id_bits(self) -> int:
        return self.n - 1


def pgen(security_level: int = 128, n: int = 128) -> GroupParams:
    """Deterministic parameter set for the given security level and payload width."""
    if security_level != 128:
        raise GroupError(f"unsupported security level: {security_level}")
    if n < 2:
        raise GroupError("payload must be at least 2 bits")
    if n + MIN_HEADROOM > FIELD_BITS:
        raise GroupError(f"payload of {n} bits leaves less than {MIN_HEADROOM} bits of headroom")
    return GroupParams("secp256k1", ORDER_Q, FIELD_P, n, FIELD_BITS - n)


def _new_pubkey():
    return ffi.new("secp256k1_pubkey *")


class GroupElement:
    """Immutable point of secp256k1 (never the identity)."""

    __slots__ = ("_pk", "_ser")

    def __init__(self, pk, ser: bytes | None = None):
        self._pk = pk
        self._ser = ser

    @classmethod
    def from_bytes(cls, data: bytes) -> GroupElement:
        if len(data) != ELEMENT_SIZE or data[0] not in (2, 3):
            raise GroupError("group element must be a 33-byte compressed point")
        pk = _new_pubkey()
        if not lib.secp256k1_ec_pubkey_parse(_CTX, pk, data, ELEMENT_SIZE):
            raise GroupError("bytes do not encode a point on the curve")
        return cls(pk, bytes(data))

    def to_bytes(self) -> bytes:
        if self._ser is None:
            out = ffi.new("unsigned char[33]")
            outlen = ffi.new("size_t *", ELEMENT_SIZE)
            lib.secp256k1_ec_pubkey_serialize(_CTX, out, outlen, self._pk, lib.SECP256K1_EC_COMPRESSED)
            self._ser = bytes(ffi.buffer(out, ELEMENT_SIZE))
        return self._ser

    def xy(self) -> tuple[int, int]:
        out = ffi.new("unsigned char[65]")
        outlen = ffi.new("size_t *", 65)
        lib.secp256k1_ec_pubkey_serialize(_CTX, out, outlen, self._pk, lib.SECP256K1_EC_UNCOMPRESSED)
        raw = bytes(ffi.buffer(out, 65))
        return int.from_bytes(raw[1:33], "big"), int.from_bytes(raw[33:], "big")

    def x(self) -> int:
        return int.from_bytes(self.to_bytes()[1:], "big")

    def __pow__(self, k: int) -> GroupElement:
        k %= ORDER_Q
        if k == 0:
            raise GroupError("exponent must be a nonzero scalar")
        pk = _new_pubkey()
        ffi.memmove(pk, self._pk, 64)
        if not lib.secp256k1_ec_pubkey_tweak_mul(_CTX, pk, k.to_bytes(SCALAR_SIZE, "big")):
            raise GroupError("exponentiation failed")
        return GroupElement(pk)

    def __mul__(self, other: GroupElement) -> GroupElement:
        pk = _new_pubkey()
        ins = ffi.new("secp256k1_pubkey *[2]", [self._pk, other._pk])
        if not lib.secp256k1_ec_pubkey_combine(_CTX, pk, ins, 2):
            raise GroupError("group operation reached the identity")
        return GroupElement(pk)

    def inverse(self) -> GroupElement:
        pk = _new_pubkey()
        ffi.memmove(pk, self._pk, 64)
        lib.secp256k1_ec_pubkey_negate(_CTX, pk)
        return GroupElement(pk)

    def __truediv__(self, other: GroupElement) -> GroupElement:
        return self * other.inverse()

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, GroupElement):
            return NotImplemented
        return self.to_bytes() == other.to_bytes()

    def __hash__(self) -> int:
        return hash(self.to_bytes())

    def __repr__(self) -> str:
        return f"GroupElement({self.to_bytes().hex()})"

    def __reduce__(self):
        return (GroupElement.from_bytes, (self.to_bytes(),))


def generator_pow(k: int) -> GroupElement:
    k %= ORDER_Q
    if k == 0:
        raise GroupError("exponent must be a nonzero scalar")
    pk = _new_pubkey()
    lib.secp256k1_ec_pubkey_create(_CTX, pk, k.to_bytes(SCALAR_SIZE, "big"))
    return GroupElement(pk)


def random_element() -> GroupElement:
    return generator_pow(random_scalar())


# -- scalars -----------------------------------------------------------------

def random_scalar() -> int:
    return secrets.randbelow(ORDER_Q - 1) + 1


def check_scalar(a: int) -> int:
    if not 0 < a < ORDER_Q:
        raise GroupError("scalar out of range [1, q-1]")
    return a


def scalar_mul(a: int, b: int) -> int:
    return check_scalar(a) * check_scalar(b) % ORDER_Q


def scalar_inv(a: int) -> int:
    return int(gmpy2.invert(check_scalar(a), ORDER_Q))


def scalar_to_bytes(a: int) -> bytes:
    return check_scalar(a).to_bytes(SCALAR_SIZE, "big")


def scalar_from_bytes(data: bytes) -> int:
    if len(data) != SCALAR_SIZE:
        raise GroupError("scalar must be 32 bytes")
    return check_scalar(int.from_bytes(data, "big"))


# -- bit strings ---------------------------------------------------------------

def random_token(params: GroupParams) -> int:
    return secrets.randbits(params.n)


def bits_to_bytes(params: GroupParams, m: int) -> bytes:
    return m.to_bytes(params.token_bytes, "big")


def bits_from_bytes(params: GroupParams, data: bytes) -> int:
    if len(data) != params.token_bytes:
        raise GroupError(f"expected {params.token_bytes} bytes")
    m = int.from_bytes(data, "big")
    if m >> params.n:
        raise GroupError("value exceeds the payload width")
    return m


# -- invertible mapping ----------------------------------------------------------

def encode(params: GroupParams, m: int) -> GroupElement:
    """Embed an n-bit value in the low bits of a point's x-coordinate.

    Random salt fills the headroom bits; candidates off the curve (or above
    the field prime) are resampled.  The y-parity is the salt's low bit.
    """
    if not 0 <= m < (1 << params.n):
        raise GroupError(f"payload must fit in {params.n} bits")
    pk = _new_pubkey()
    buf = bytearray(ELEMENT_SIZE)
    for _ in range(ENCODE_ATTEMPTS):
        salt = secrets.randbits(params.headroom)
        x = (salt << params.n) | m
        if x >= FIELD_P:
            continue
        buf[0] = 2 | (salt & 1)
        buf[1:] = x.to_bytes(32, "big")
        data = bytes(buf)
        if lib.secp256k1_ec_pubkey_parse(_CTX, pk, data, ELEMENT_SIZE):
            return GroupElement(pk, data)
    raise EncodingError("no curve point found for payload")


def decode(params: GroupParams, point: GroupElement) -> int:
    """Low n bits of the x-coordinate; total on the group."""
    return point.x() & ((1 << params.n) - 1)


# -- hash-to-group ---------------------------------------------------------------

def _map_to_point(u) -> GroupElement:
    x, sign_u, inv_ratio = h2c.sswu_iso_x(u)
    point = GroupElement.from_bytes(b"\x02" + int(x).to_bytes(32, "big"))
    _, y = point.xy()
    y_prime = y * inv_ratio % FIELD_P
    if bool(y_prime & 1) != sign_u:
        point = point.inverse()
    return point


def hash_to_curve(msg: bytes, dst: bytes) -> GroupElement:
    u0, u1 = h2c.hash_to_field(msg, dst, 2)
    return _map_to_point(u0) * _map_to_point(u1)


def _dst(tag: bytes) -> bytes:
    return tag + b"-V01-CS01-with" + _SUITE


_H1_DST = _dst(H1_TAG)
_H2_DST = _dst(H2_TAG)
_HG_DST = _dst(HG_TAG)


def hash_h1(params: GroupParams, tk: int) -> GroupElement:
    return hash_to_curve(bits_to_bytes(params, tk), _H1_DST)


def hash_h2(params: GroupParams, tk: int) -> GroupElement:
    return hash_to_curve(bits_to_bytes(params, tk), _H2_DST)


def hash_hg(params: GroupParams, tk: int) -> GroupElement:
    return hash_to_curve(bits_to_bytes(params, tk), _HG_DST)
