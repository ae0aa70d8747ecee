"""Network daemon and the client-side server proxies.

A connection carries any number of exchanges.  DATA_UPDATE and status probes
(a client ACK) are plain frames; a client HELLO opens a fresh secure channel
for exactly one sealed SEARCH_REQ or KEY_UPDATE and its reply.
"""

from __future__ import annotations

import logging
import os
import socket
import socketserver
import threading

from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric import ec

from . import group
from .errors import BambooError, DuplicateLabel, EpochMismatch, ProtocolError, TransportError
from .group import ELEMENT_SIZE, GroupElement
from .server import EncryptedDatabase
from .tokens import Ciphertext, KeyUpdateToken, SearchTrapdoor
from .wire import (
    DEFAULT_MAX_FRAME,
    ErrorCode,
    FrameStream,
    Message,
    MsgType,
    SecureChannel,
    chunk_components,
    error_message,
    parse_error,
)

log = logging.getLogger(__name__)

IDENTITY_FILE = "identity.pem"


def load_identity(data_dir: str) -> ec.EllipticCurvePrivateKey:
    """Static server signing key, created on first start."""
    path = os.path.join(data_dir, IDENTITY_FILE)
    if os.path.exists(path):
        with open(path, "rb") as f:
            return serialization.load_pem_private_key(f.read(), password=None)
    key = ec.generate_private_key(ec.SECP256R1())
    pem = key.private_bytes(serialization.Encoding.PEM, serialization.PrivateFormat.PKCS8, serialization.NoEncryption())
    fd = os.open(path, os.O_CREAT | os.O_EXCL | os.O_WRONLY, 0o600)
    with os.fdopen(fd, "wb") as f:
        f.write(pem)
    return key


def identity_fingerprint(key: ec.EllipticCurvePrivateKey) -> str:
    from .wire import fingerprint

    return fingerprint(key.public_key().public_bytes(serialization.Encoding.X962, serialization.PublicFormat.CompressedPoint))


def _error_for(exc: Exception, epoch: int) -> Message:
    if isinstance(exc, EpochMismatch):
        return error_message(ErrorCode.EPOCH, str(exc), epoch)
    if isinstance(exc, DuplicateLabel):
        return error_message(ErrorCode.DUPLICATE, str(exc), epoch)
    if isinstance(exc, ProtocolError):
        return error_message(ErrorCode.MALFORMED, str(exc), epoch)
    return error_message(ErrorCode.INTERNAL, "internal server error", epoch)


def serve_connection(
    sock: socket.socket,
    db: EncryptedDatabase,
    identity: ec.EllipticCurvePrivateKey,
    workers: int = 1,
    max_frame: int = DEFAULT_MAX_FRAME,
) -> None:
    stream = FrameStream(sock, max_frame)
    try:
        while True:
            try:
                msg = stream.recv_plain()
            except TransportError:
                return
            except ProtocolError as exc:
                stream.send_plain(error_message(ErrorCode.OVERSIZE, str(exc), db.epoch))
                return
            if msg.type is MsgType.DATA_UPDATE:
                try:
                    db.store(Ciphertext.from_bytes(msg.body), msg.epoch)
                    stream.send_plain(Message(MsgType.ACK, db.epoch))
                except BambooError as exc:
                    stream.send_plain(_error_for(exc, db.epoch))
            elif msg.type is MsgType.ACK:
                stream.send_plain(Message(MsgType.ACK, db.epoch))
            elif msg.type is MsgType.HELLO:
                chan = SecureChannel.server(stream, msg, db.epoch, identity)
                try:
                    _sealed_exchange(chan, db, workers)
                finally:
                    chan.close()
            else:
                stream.send_plain(error_message(ErrorCode.MALFORMED, f"unexpected {msg.type.name}", db.epoch))
    except (TransportError, ProtocolError) as exc:
        log.info("session ended: %s", exc)
    finally:
        stream.close()


def _sealed_exchange(chan: SecureChannel, db: EncryptedDatabase, workers: int) -> None:
    req = chan.recv()
    try:
        if req.type is MsgType.SEARCH_REQ:
            resp = db.search(SearchTrapdoor.from_bytes(req.body, req.epoch))
            for frame in chunk_components([c.to_bytes() for c in resp.components], resp.epoch):
                chan.send(frame)
        elif req.type is MsgType.KEY_UPDATE:
            token = KeyUpdateToken.from_bytes(req.body, req.epoch)
            old = db.epoch
            db.rotate(token, workers)
            log.info("rotated database from epoch %d to %d (%d records)", old, db.epoch, len(db))
            chan.send(Message(MsgType.ACK, db.epoch))
        else:
            chan.send(error_message(ErrorCode.MALFORMED, f"unexpected sealed {req.type.name}", db.epoch))
    except BambooError as exc:
        chan.send(_error_for(exc, db.epoch))
    except group.GroupError as exc:
        chan.send(error_message(ErrorCode.MALFORMED, str(exc), db.epoch))


class BambooTCPServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, address, db: EncryptedDatabase, identity, workers: int = 1, max_frame: int = DEFAULT_MAX_FRAME):
        self.db = db
        self.identity = identity
        self.workers = workers
        self.max_frame = max_frame

        class Handler(socketserver.BaseRequestHandler):
            def handle(inner):
                serve_connection(inner.request, self.db, self.identity, self.workers, self.max_frame)

        super().__init__(address, Handler)


# -- client-side proxies ---------------------------------------------------------


class LocalServer:
    """Calls an in-process database directly; same surface as RemoteServer."""

    def __init__(self, db: EncryptedDatabase, workers: int = 1):
        self.db = db
        self.workers = workers

    def epoch(self) -> int:
        return self.db.epoch

    def data_update(self, ct: Ciphertext, epoch: int) -> None:
        self.db.store(ct, epoch)

    def search(self, td: SearchTrapdoor) -> list[GroupElement]:
        return self.db.search(td).components

    def key_update(self, token: KeyUpdateToken) -> int:
        self.db.rotate(token, self.workers)
        return self.db.epoch

    def close(self) -> None:
        pass


class RemoteServer:
    """Speaks the wire protocol over a socket.

    ``connect`` returns a connected socket; by default it dials ``address``.
    Byte counters of the last search are kept for bandwidth measurement.
    """

    def __init__(self, address=None, connect=None, fingerprint: str | None = None,
                 max_frame: int = DEFAULT_MAX_FRAME, timeout: float | None = None):
        if connect is None:
            if address is None:
                raise ValueError("need an address or a connect callable")
            connect = lambda: socket.create_connection(address, timeout=timeout)  # noqa: E731
        self._connect = connect
        self.fingerprint = fingerprint
        self.max_frame = max_frame
        self._stream: FrameStream | None = None
        self._lock = threading.Lock()
        self.last_search_bytes = 0
        self.last_search_payload = 0

    def _get_stream(self) -> FrameStream:
        if self._stream is None:
            try:
                sock = self._connect()
            except OSError as exc:
                raise TransportError(f"cannot connect to server: {exc}") from exc
            self._stream = FrameStream(sock, self.max_frame)
        return self._stream

    def _drop(self) -> None:
        if self._stream is not None:
            self._stream.close()
            self._stream = None

    def _plain(self, msg: Message) -> Message:
        with self._lock:
            stream = self._get_stream()
            try:
                stream.send_plain(msg)
                reply = stream.recv_plain()
            except (TransportError, ProtocolError):
                self._drop()
                raise
        if reply.type is MsgType.ERROR:
            _raise_error_typed(reply, msg.epoch)
        return reply

    def epoch(self) -> int:
        return self._plain(Message(MsgType.ACK, 0)).epoch

    def data_update(self, ct: Ciphertext, epoch: int) -> None:
        reply = self._plain(Message(MsgType.DATA_UPDATE, epoch, ct.to_bytes()))
        if reply.type is not MsgType.ACK:
            raise ProtocolError(f"unexpected reply {reply.type.name}")

    def _channel(self, epoch: int) -> SecureChannel:
        stream = self._get_stream()
        return SecureChannel.client(stream, epoch, self.fingerprint)

    def search(self, td: SearchTrapdoor) -> list[GroupElement]:
        with self._lock:
            try:
                chan = self._channel(td.epoch)
                start = chan.stream.bytes_received
                chan.send(Message(MsgType.SEARCH_REQ, td.epoch, td.to_bytes()))
                blobs = []
                payload = 0
                while True:
                    frame = chan.recv()
                    if frame.type is MsgType.ERROR:
                        chan.close()
                        _raise_error_typed(frame, td.epoch)
                    if frame.type is not MsgType.SEARCH_RESP or not frame.body:
                        raise ProtocolError("unexpected frame in search response")
                    if frame.epoch != td.epoch:
                        raise EpochMismatch(td.epoch, frame.epoch)
                    elems = frame.body[1:]
                    if len(elems) % ELEMENT_SIZE:
                        raise ProtocolError("search response chunk is not a whole number of elements")
                    payload += len(elems)
                    blobs.extend(elems[i:i + ELEMENT_SIZE] for i in range(0, len(elems), ELEMENT_SIZE))
                    if frame.body[0] == 1:
                        break
                chan.close()
                self.last_search_bytes = chan.stream.bytes_received - start
                self.last_search_payload = payload
            except (TransportError, ProtocolError) as exc:
                if not isinstance(exc, EpochMismatch):
                    self._drop()
                raise
        try:
            return [GroupElement.from_bytes(b) for b in blobs]
        except group.GroupError as exc:
            raise ProtocolError(f"invalid element in search response: {exc}") from exc

    def key_update(self, token: KeyUpdateToken) -> int:
        with self._lock:
            try:
                chan = self._channel(token.new_epoch - 1)
                chan.send(Message(MsgType.KEY_UPDATE, token.new_epoch, token.to_bytes()))
                reply = chan.recv()
                chan.close()
            except (TransportError, ProtocolError):
                self._drop()
                raise
        if reply.type is MsgType.ERROR:
            _raise_error_typed(reply, token.new_epoch)
        if reply.type is not MsgType.ACK or reply.epoch != token.new_epoch:
            raise ProtocolError("key update not acknowledged")
        return reply.epoch

    def close(self) -> None:
        with self._lock:
            self._drop()


def _raise_error_typed(msg: Message, sent_epoch: int) -> None:
    code, text = parse_error(msg)
    if code is ErrorCode.EPOCH:
        raise EpochMismatch(msg.epoch, sent_epoch)
    if code is ErrorCode.DUPLICATE:
        raise DuplicateLabel(text)
    raise ProtocolError(text or f"server error {code.name}")
