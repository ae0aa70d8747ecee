"""RFC 9380 hash-to-curve for secp256k1 (suite secp256k1_XMD:SHA-256_SSWU_RO_).

Simplified SWU runs on the 3-isogenous curve E' and the result is pulled back
to secp256k1 through the rational isogeny map.  Only the x-coordinate is
computed here; the y square root is left to libsecp256k1 when the compressed
point is parsed, and the sign is fixed by the parity relation between y and
y' through the isogeny's y-multiplier.
"""

from __future__ import annotations

import hashlib

import gmpy2
from gmpy2 import mpz

P = mpz(0xFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFEFFFFFC2F)

# E': y^2 = x^3 + A'x + B'
ISO_A = mpz(0x3F8731ABDD661ADCA08A5558F0F5D272E953D363CB6F0E5D405447C01A444533)
ISO_B = mpz(1771)
Z = P - 11

_K1 = [
    mpz(0x8E38E38E38E38E38E38E38E38E38E38E38E38E38E38E38E38E38E38DAAAAA8C7),
    mpz(0x07D3D4C80BC321D5B9F315CEA7FD44C5D595D2FC0BF63B92DFFF1044F17C6581),
    mpz(0x534C328D23F234E6E2A413DECA25CAECE4506144037C40314ECBD0B53D9DD262),
    mpz(0x8E38E38E38E38E38E38E38E38E38E38E38E38E38E38E38E38E38E38DAAAAA88C),
]
_K2 = [
    mpz(0xD35771193D94918A9CA34CCBB7B640DD86CD409542F8487D9FE6B745781EB49B),
    mpz(0xEDADC6F64383DC1DF7C4B2D51B54225406D36B641F5E41BBC52A56612A8C6D14),
]
_K3 = [
    mpz(0x4BDA12F684BDA12F684BDA12F684BDA12F684BDA12F684BDA12F684B8E38E23C),
    mpz(0xC75E0C32D5CB7C0FA9D0A54B12A0A6D5647AB046D686DA6FDFFC90FC201D71A3),
    mpz(0x29A6194691F91A73715209EF6512E576722830A201BE2018A765E85A9ECEE931),
    mpz(0x2F684BDA12F684BDA12F684BDA12F684BDA12F684BDA12F684BDA12F38E38D84),
]
_K4 = [
    mpz(0xFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFEFFFFF93B),
    mpz(0x7A06534BB8BDB49FD5E9E6632722C2989467C1BFC8E8D978DFB425D2685C2573),
    mpz(0x6484AA716545CA2CF3A70C3FA8FE337E0A3D21162F0D6299A7BF8192BFD2A76F),
]

_K2_MONIC = _K2 + [mpz(1)]
_K4_MONIC = _K4 + [mpz(1)]
_NEG_B_OVER_A = (P - ISO_B) * gmpy2.invert(ISO_A, P) % P
_B_OVER_ZA = ISO_B * gmpy2.invert(Z * ISO_A % P, P) % P

_L = 48  # ceil((ceil(log2 p) + 128) / 8)
_B_IN_BYTES = 32
_S_IN_BYTES = 64


def expand_message_xmd(msg: bytes, dst: bytes, len_in_bytes: int) -> bytes:
    ell = -(-len_in_bytes // _B_IN_BYTES)
    if ell > 255 or len_in_bytes > 65535 or len(dst) > 255:
        raise ValueError("expand_message_xmd: length out of range")
    dst_prime = dst + bytes([len(dst)])
    msg_prime = (
        bytes(_S_IN_BYTES) + msg + len_in_bytes.to_bytes(2, "big") + b"\x00" + dst_prime
    )
    b0 = hashlib.sha256(msg_prime).digest()
    bi = hashlib.sha256(b0 + b"\x01" + dst_prime).digest()
    out = [bi]
    for i in range(2, ell + 1):
        mixed = (int.from_bytes(b0, "big") ^ int.from_bytes(bi, "big")).to_bytes(_B_IN_BYTES, "big")
        bi = hashlib.sha256(mixed + bytes([i]) + dst_prime).digest()
        out.append(bi)
    return b"".join(out)[:len_in_bytes]


def hash_to_field(msg: bytes, dst: bytes, count: int = 2) -> list[mpz]:
    uniform = expand_message_xmd(msg, dst, count * _L)
    return [mpz(int.from_bytes(uniform[i * _L:(i + 1) * _L], "big")) % P for i in range(count)]


def _horner(coeffs: list[mpz], x: mpz) -> mpz:
    acc = coeffs[-1]
    for c in reversed(coeffs[:-1]):
        acc = (acc * x + c) % P
    return acc


def sswu_iso_x(u: mpz) -> tuple[mpz, bool, mpz]:
    """Simplified SWU on E' followed by the isogeny x-map.

    Returns ``(x, sign_u, inv_ratio)``: the secp256k1 x-coordinate, sgn0(u),
    and 1/r where the full map gives y = y' * r.  The caller picks the root
    y of x^3 + 7 for which y' = y / r has the parity of u.
    """
    u2 = u * u % P
    zu2 = Z * u2 % P
    tv1 = (zu2 * zu2 + zu2) % P
    if tv1 == 0:
        x1 = _B_OVER_ZA
    else:
        x1 = _NEG_B_OVER_A * (1 + gmpy2.invert(tv1, P)) % P
    gx1 = (x1 * x1 * x1 + ISO_A * x1 + ISO_B) % P
    if gx1 == 0 or gmpy2.legendre(gx1, P) == 1:
        xp = x1
    else:
        xp = zu2 * x1 % P
    x_num = _horner(_K1, xp)
    x_den = _horner(_K2_MONIC, xp)
    y_num = _horner(_K3, xp)
    y_den = _horner(_K4_MONIC, xp)
    inv = gmpy2.invert(x_den * y_num % P, P)
    x = x_num * y_num % P * inv % P
    inv_ratio = y_den * x_den % P * inv % P
    return x, bool(u & 1), inv_ratio
