"""Framed messages and the ephemeral Diffie-Hellman secure channel.

Plain frame (big-endian)::

    type u8 | epoch u64 | body length u32 | body

Sealed frames travel as ``length u32 | counter u64 | AEAD(inner frame)``.
The AEAD is ChaCha20-Poly1305 with nonce ``0x00000000 | counter`` and the
counter bytes as associated data; each direction has its own key and counter,
and a receiver only accepts the next expected counter value.

Handshake: the client sends HELLO(version | P-256 share); the server answers
HELLO(version | share | identity key | signature), the signature covering
both shares.  Session keys come from HKDF-SHA256 over the shared
x-coordinate, with both shares in the info string.
"""

from __future__ import annotations

import enum
import hashlib
import socket
import struct
from dataclasses import dataclass

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import ec
from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from .errors import ProtocolError, TransportError

PROTOCOL_VERSION = b"1"
DEFAULT_MAX_FRAME = 4 * 1024 * 1024
HEADER = struct.Struct(">BQI")
SEALED_PREFIX = struct.Struct(">IQ")
TAG_SIZE = 16
SHARE_SIZE = 33
KDF_LABEL = b"bamboo channel v1"
AEAD_SUITE = "ChaCha20-Poly1305"
SEARCH_CHUNK = 1000

# bytes added around every sealed frame on the wire: length, counter, AEAD tag, inner header
SEALED_OVERHEAD = SEALED_PREFIX.size + TAG_SIZE + HEADER.size


class MsgType(enum.IntEnum):
    HELLO = 1
    DATA_UPDATE = 2
    SEARCH_REQ = 3
    SEARCH_RESP = 4
    KEY_UPDATE = 5
    ACK = 6
    ERROR = 7


class ErrorCode(enum.IntEnum):
    MALFORMED = 1
    EPOCH = 2
    DUPLICATE = 3
    INTERNAL = 4
    OVERSIZE = 5


@dataclass(frozen=True)
class Message:
    type: MsgType
    epoch: int
    body: bytes = b""


def encode_frame(msg: Message) -> bytes:
    return HEADER.pack(int(msg.type), msg.epoch, len(msg.body)) + msg.body


def decode_frame(data: bytes, max_frame: int = DEFAULT_MAX_FRAME) -> Message:
    if len(data) < HEADER.size:
        raise ProtocolError("frame shorter than its header")
    t, epoch, length = HEADER.unpack_from(data)
    if length > max_frame:
        raise ProtocolError(f"frame body of {length} bytes exceeds limit {max_frame}")
    if len(data) != HEADER.size + length:
        raise ProtocolError("frame length does not match header")
    try:
        mtype = MsgType(t)
    except ValueError:
        raise ProtocolError(f"unknown message type {t}") from None
    return Message(mtype, epoch, bytes(data[HEADER.size:]))


def error_message(code: ErrorCode, text: str, epoch: int) -> Message:
    return Message(MsgType.ERROR, epoch, bytes([code]) + text.encode("utf-8"))


def parse_error(msg: Message) -> tuple[ErrorCode, str]:
    if not msg.body:
        return ErrorCode.INTERNAL, ""
    try:
        code = ErrorCode(msg.body[0])
    except ValueError:
        code = ErrorCode.INTERNAL
    return code, msg.body[1:].decode("utf-8", "replace")


class FrameStream:
    """Length-delimited frames over a connected socket.

    Counts the bytes it moves, which the bandwidth benchmarks read.
    """

    def __init__(self, sock: socket.socket, max_frame: int = DEFAULT_MAX_FRAME):
        self.sock = sock
        self.max_frame = max_frame
        self.bytes_sent = 0
        self.bytes_received = 0

    def _recv_exact(self, n: int) -> bytes:
        buf = bytearray()
        while len(buf) < n:
            try:
                chunk = self.sock.recv(n - len(buf))
            except OSError as exc:
                raise TransportError(f"receive failed: {exc}") from exc
            if not chunk:
                raise TransportError("connection closed by peer")
            buf += chunk
        self.bytes_received += n
        return bytes(buf)

    def _send(self, data: bytes) -> None:
        try:
            self.sock.sendall(data)
        except OSError as exc:
            raise TransportError(f"send failed: {exc}") from exc
        self.bytes_sent += len(data)

    def send_plain(self, msg: Message) -> None:
        if len(msg.body) > self.max_frame:
            raise ProtocolError(f"frame body of {len(msg.body)} bytes exceeds limit {self.max_frame}")
        self._send(encode_frame(msg))

    def recv_plain(self) -> Message:
        head = self._recv_exact(HEADER.size)
        _, _, length = HEADER.unpack(head)
        if length > self.max_frame:
            raise ProtocolError(f"frame body of {length} bytes exceeds limit {self.max_frame}")
        return decode_frame(head + self._recv_exact(length), self.max_frame)

    def send_raw(self, data: bytes) -> None:
        self._send(data)

    def recv_sealed_raw(self) -> tuple[int, bytes]:
        length, counter = SEALED_PREFIX.unpack(self._recv_exact(SEALED_PREFIX.size))
        body_len = length - 8
        if body_len < TAG_SIZE or body_len > self.max_frame + HEADER.size + TAG_SIZE:
            raise ProtocolError("sealed frame length out of range")
        return counter, self._recv_exact(body_len)

    def close(self) -> None:
        try:
            self.sock.close()
        except OSError:
            pass


def fingerprint(identity_public: bytes) -> str:
    return hashlib.sha256(identity_public).hexdigest()


def _share_bytes(key: ec.EllipticCurvePrivateKey) -> bytes:
    return key.public_key().public_bytes(serialization.Encoding.X962, serialization.PublicFormat.CompressedPoint)


def _load_share(data: bytes) -> ec.EllipticCurvePublicKey:
    try:
        return ec.EllipticCurvePublicKey.from_encoded_point(ec.SECP256R1(), data)
    except ValueError as exc:
        raise ProtocolError(f"invalid DH share: {exc}") from exc


class SecureChannel:
    """Sealed request/response channel keyed by one ephemeral DH exchange."""

    def __init__(self, stream: FrameStream, send_key: bytes, recv_key: bytes, session_id: bytes,
                 peer_epoch: int, key_digest: bytes = b""):
        self.stream = stream
        self._send = ChaCha20Poly1305(send_key)
        self._recv = ChaCha20Poly1305(recv_key)
        self._send_ctr = 0
        self._recv_ctr = 0
        self.session_id = session_id
        # identifies the session keys without exposing them; equal on both ends
        self.key_digest = key_digest
        self.peer_epoch = peer_epoch
        self.closed = False

    @staticmethod
    def _derive(shared: bytes, client_share: bytes, server_share: bytes) -> tuple[bytes, bytes]:
        okm = HKDF(hashes.SHA256(), 64, salt=None, info=KDF_LABEL + client_share + server_share).derive(shared)
        return okm[:32], okm[32:]

    @classmethod
    def client(cls, stream: FrameStream, epoch: int, server_fingerprint: str | None = None) -> SecureChannel:
        eph = ec.generate_private_key(ec.SECP256R1())
        share = _share_bytes(eph)
        stream.send_plain(Message(MsgType.HELLO, epoch, PROTOCOL_VERSION + share))
        reply = stream.recv_plain()
        if reply.type is MsgType.ERROR:
            code, text = parse_error(reply)
            raise ProtocolError(f"handshake rejected: {text}")
        if reply.type is not MsgType.HELLO or reply.body[:1] != PROTOCOL_VERSION:
            raise ProtocolError("handshake failure: unexpected server hello")
        body = reply.body[1:]
        if len(body) < 2 * SHARE_SIZE:
            raise ProtocolError("handshake failure: short server hello")
        server_share, identity, sig = body[:SHARE_SIZE], body[SHARE_SIZE:2 * SHARE_SIZE], body[2 * SHARE_SIZE:]
        if server_fingerprint is not None:
            if fingerprint(identity) != server_fingerprint.lower():
                raise ProtocolError("server identity does not match the pinned fingerprint")
            try:
                _load_share(identity).verify(sig, share + server_share, ec.ECDSA(hashes.SHA256()))
            except InvalidSignature:
                raise ProtocolError("server hello signature invalid") from None
        shared = eph.exchange(ec.ECDH(), _load_share(server_share))
        del eph
        c2s, s2c = cls._derive(shared, share, server_share)
        return cls(stream, c2s, s2c, hashlib.sha256(share + server_share).digest(), reply.epoch,
                   hashlib.sha256(c2s + s2c).digest())

    @classmethod
    def server(cls, stream: FrameStream, hello: Message, epoch: int, identity: ec.EllipticCurvePrivateKey) -> SecureChannel:
        """Answer a client HELLO already read from ``stream``."""
        if hello.body[:1] != PROTOCOL_VERSION or len(hello.body) != 1 + SHARE_SIZE:
            stream.send_plain(error_message(ErrorCode.MALFORMED, "unsupported hello", epoch))
            raise ProtocolError("handshake failure: bad client hello")
        client_share = hello.body[1:]
        peer = _load_share(client_share)
        eph = ec.generate_private_key(ec.SECP256R1())
        share = _share_bytes(eph)
        sig = identity.sign(client_share + share, ec.ECDSA(hashes.SHA256()))
        stream.send_plain(Message(MsgType.HELLO, epoch, PROTOCOL_VERSION + share + _share_bytes(identity) + sig))
        shared = eph.exchange(ec.ECDH(), peer)
        del eph
        c2s, s2c = cls._derive(shared, client_share, share)
        return cls(stream, s2c, c2s, hashlib.sha256(client_share + share).digest(), hello.epoch,
                   hashlib.sha256(c2s + s2c).digest())

    def send(self, msg: Message) -> None:
        if self.closed:
            raise TransportError("channel closed")
        if len(msg.body) > self.stream.max_frame:
            raise ProtocolError(f"frame body of {len(msg.body)} bytes exceeds limit {self.stream.max_frame}")
        ctr = self._send_ctr
        if ctr >= 2**64 - 1:
            raise ProtocolError("nonce counter exhausted")
        self._send_ctr += 1
        ctr_bytes = ctr.to_bytes(8, "big")
        sealed = self._send.encrypt(b"\x00" * 4 + ctr_bytes, encode_frame(msg), ctr_bytes)
        self.stream.send_raw(SEALED_PREFIX.pack(8 + len(sealed), ctr) + sealed)

    def recv(self) -> Message:
        if self.closed:
            raise TransportError("channel closed")
        ctr, sealed = self.stream.recv_sealed_raw()
        if ctr != self._recv_ctr:
            self.close()
            raise ProtocolError(f"unexpected nonce counter {ctr} (replay or reorder)")
        ctr_bytes = ctr.to_bytes(8, "big")
        try:
            inner = self._recv.decrypt(b"\x00" * 4 + ctr_bytes, sealed, ctr_bytes)
        except InvalidTag:
            self.close()
            raise ProtocolError("channel authentication failure") from None
        self._recv_ctr += 1
        return decode_frame(inner, self.stream.max_frame)

    def close(self) -> None:
        # drop key material; the socket belongs to the caller
        self._send = self._recv = None
        self.closed = True


def establish_channel(role: str, stream: FrameStream, epoch: int, *, identity=None,
                      server_fingerprint: str | None = None) -> SecureChannel:
    """Run the handshake as ``"client"`` or ``"server"`` over ``stream``."""
    if role == "client":
        return SecureChannel.client(stream, epoch, server_fingerprint)
    if role == "server":
        hello = stream.recv_plain()
        if hello.type is not MsgType.HELLO:
            raise ProtocolError(f"expected HELLO, got {hello.type.name}")
        if identity is None:
            identity = ec.generate_private_key(ec.SECP256R1())
        return SecureChannel.server(stream, hello, epoch, identity)
    raise ValueError(f"role must be client or server, not {role!r}")


def send_sealed(channel: SecureChannel, msg: Message) -> None:
    channel.send(msg)


def recv_sealed(channel: SecureChannel) -> Message:
    return channel.recv()


def chunk_components(blobs: list[bytes], epoch: int, chunk: int = SEARCH_CHUNK):
    """SEARCH_RESP frames: body = final flag u8 | up to ``chunk`` 33-byte elements."""
    if not blobs:
        yield Message(MsgType.SEARCH_RESP, epoch, b"\x01")
        return
    for start in range(0, len(blobs), chunk):
        final = start + chunk >= len(blobs)
        yield Message(MsgType.SEARCH_RESP, epoch, (b"\x01" if final else b"\x00") + b"".join(blobs[start:start + chunk]))


def search_response_wire_bytes(count: int, chunk: int = SEARCH_CHUNK) -> int:
    """Exact sealed bytes on the wire for a SEARCH_RESP with ``count`` elements."""
    frames = max(1, -(-count // chunk))
    return count * 33 + frames * (SEALED_OVERHEAD + 1)
