"""Record stores behind the encrypted database.

A backend maps opaque 33-byte labels to (D, C) byte pairs and carries the
epoch of the key generation its records belong to.  ``swap_epoch`` installs
a fully built record space for the next epoch in one step, which is how
rotation stays atomic.

Snapshot format (big-endian)::

    "BSEKU1" | epoch u64 | count u64 | sha256(body) | body
    body = count x (L 33 bytes | D 33 bytes | C 33 bytes)

:class:`FileBackend` keeps a snapshot plus an append-only log of records
stored since the snapshot was taken; the log header names its epoch so a log
left over from before a completed rotation is recognised and discarded.
"""

from __future__ import annotations

import hashlib
import os
import struct
import threading
import zlib
from typing import Iterator, Protocol

from .errors import SnapshotError

MAGIC = b"BSEKU1"
LOG_MAGIC = b"BSEKUL"
RECORD_SIZE = 99
_HEADER = struct.Struct(">6sQQ32s")
_LOG_HEADER = struct.Struct(">6sQ")
_LOG_RECORD = RECORD_SIZE + 4


class Backend(Protocol):
    epoch: int

    def get(self, label: bytes) -> tuple[bytes, bytes] | None: ...
    def put(self, label: bytes, d: bytes, c: bytes) -> None: ...
    def delete(self, label: bytes) -> None: ...
    def scan(self) -> Iterator[tuple[bytes, bytes, bytes]]: ...
    def swap_epoch(self, new_epoch: int, records: dict[bytes, tuple[bytes, bytes]]) -> None: ...
    def __len__(self) -> int: ...


class MemoryBackend:
    def __init__(self, epoch: int = 0, records: dict | None = None):
        self.epoch = epoch
        self._records: dict[bytes, tuple[bytes, bytes]] = records if records is not None else {}

    def __len__(self) -> int:
        return len(self._records)

    def __contains__(self, label: bytes) -> bool:
        return label in self._records

    def get(self, label: bytes):
        return self._records.get(label)

    def put(self, label: bytes, d: bytes, c: bytes) -> None:
        self._records[label] = (d, c)

    def delete(self, label: bytes) -> None:
        self._records.pop(label, None)

    def scan(self):
        for label, (d, c) in self._records.items():
            yield label, d, c

    def items(self):
        return self._records.items()

    def swap_epoch(self, new_epoch: int, records: dict) -> None:
        # one reference assignment; readers see the old or the new space
        self._records = records
        self.epoch = new_epoch

    def flush(self) -> None:
        pass

    def close(self) -> None:
        pass


def dump_snapshot(epoch: int, records) -> bytes:
    """Serialise (label, d, c) triples."""
    body = b"".join(label + d + c for label, d, c in records)
    count = len(body) // RECORD_SIZE
    return _HEADER.pack(MAGIC, epoch, count, hashlib.sha256(body).digest()) + body


def load_snapshot(data: bytes) -> tuple[int, dict[bytes, tuple[bytes, bytes]]]:
    if len(data) < _HEADER.size:
        raise SnapshotError("snapshot truncated: incomplete header")
    magic, epoch, count, digest = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise SnapshotError("not a snapshot file (bad magic)")
    body = memoryview(data)[_HEADER.size:]
    if len(body) != count * RECORD_SIZE:
        raise SnapshotError(f"snapshot truncated: expected {count} records")
    if hashlib.sha256(body).digest() != digest:
        raise SnapshotError("snapshot checksum mismatch")
    records = {}
    raw = bytes(body)
    for off in range(0, len(raw), RECORD_SIZE):
        records[raw[off:off + 33]] = (raw[off + 33:off + 66], raw[off + 66:off + 99])
    if len(records) != count:
        raise SnapshotError("snapshot contains duplicate labels")
    return epoch, records


def _atomic_write(path: str, data: bytes) -> None:
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(data)
        f.flush()
        os.fsync(f.fileno())
    os.replace(tmp, path)
    dirfd = os.open(os.path.dirname(path) or ".", os.O_RDONLY)
    try:
        os.fsync(dirfd)
    finally:
        os.close(dirfd)


class FileBackend(MemoryBackend):
    """In-memory records made durable by a snapshot and an append log."""

    SNAPSHOT = "edb.snapshot"
    LOG = "edb.log"

    def __init__(self, data_dir: str | os.PathLike, fsync: bool = True):
        self.data_dir = os.fspath(data_dir)
        os.makedirs(self.data_dir, exist_ok=True)
        self.fsync = fsync
        self._lock = threading.Lock()
        snap = os.path.join(self.data_dir, self.SNAPSHOT)
        if os.path.exists(snap):
            with open(snap, "rb") as f:
                epoch, records = load_snapshot(f.read())
        else:
            epoch, records = 0, {}
        super().__init__(epoch, records)
        self._replay_log()
        self._log = None
        self._open_log(reset=False)

    @property
    def snapshot_path(self) -> str:
        return os.path.join(self.data_dir, self.SNAPSHOT)

    @property
    def log_path(self) -> str:
        return os.path.join(self.data_dir, self.LOG)

    def _replay_log(self) -> None:
        if not os.path.exists(self.log_path):
            return
        with open(self.log_path, "rb") as f:
            data = f.read()
        if len(data) < _LOG_HEADER.size:
            return
        magic, epoch = _LOG_HEADER.unpack_from(data)
        if magic != LOG_MAGIC or epoch != self.epoch:
            # written before the snapshot's rotation; its records are in the snapshot
            return
        off = _LOG_HEADER.size
        while off + _LOG_RECORD <= len(data):
            rec = data[off:off + RECORD_SIZE]
            (crc,) = struct.unpack_from(">I", data, off + RECORD_SIZE)
            if zlib.crc32(rec) != crc:
                break  # torn tail
            self._records[rec[:33]] = (rec[33:66], rec[66:99])
            off += _LOG_RECORD

    def _open_log(self, reset: bool) -> None:
        if self._log is not None:
            self._log.close()
        if reset or not os.path.exists(self.log_path):
            with open(self.log_path, "wb") as f:
                f.write(_LOG_HEADER.pack(LOG_MAGIC, self.epoch))
                # all records so far live in the snapshot
            self._log = open(self.log_path, "ab")
            return
        with open(self.log_path, "rb") as f:
            head = f.read(_LOG_HEADER.size)
        if len(head) < _LOG_HEADER.size or _LOG_HEADER.unpack(head) != (LOG_MAGIC, self.epoch):
            # stale log: fold replayed state into a snapshot first
            self._write_snapshot()
            self._open_log(reset=True)
            return
        self._log = open(self.log_path, "ab")

    def _write_snapshot(self) -> None:
        _atomic_write(self.snapshot_path, dump_snapshot(self.epoch, self.scan()))

    def put(self, label: bytes, d: bytes, c: bytes) -> None:
        rec = label + d + c
        with self._lock:
            self._log.write(rec + struct.pack(">I", zlib.crc32(rec)))
            self._log.flush()
            if self.fsync:
                os.fsync(self._log.fileno())
            super().put(label, d, c)

    def delete(self, label: bytes) -> None:
        with self._lock:
            super().delete(label)
            self._write_snapshot()
            self._open_log(reset=True)

    def swap_epoch(self, new_epoch: int, records: dict) -> None:
        with self._lock:
            _atomic_write(self.snapshot_path, dump_snapshot(new_epoch, ((k, d, c) for k, (d, c) in records.items())))
            super().swap_epoch(new_epoch, records)
            self._open_log(reset=True)

    def flush(self) -> None:
        with self._lock:
            self._write_snapshot()
            self._open_log(reset=True)

    def close(self) -> None:
        self.flush()
        if self._log is not None:
            self._log.close()
            self._log = None
