"""Client state file: an SQLite key/value table, one row per keyword.

Row value is the search token (big-endian, ceil(n/8) bytes) followed by the
4-byte big-endian update counter.  Rows whose key starts with a NUL byte are
reserved: ``\\0meta`` holds (epoch, a_max, x, K1, K2), ``\\0pending`` an
unacknowledged key-update token, ``\\0rotated`` the last rotation time.
"""

from __future__ import annotations

import contextlib
import os
import sqlite3
import struct

from . import group
from .client import ClientState, KeywordState, SecretKey
from .errors import StateError
from .tokens import KeyUpdateToken

META_KEY = b"\x00meta"
PENDING_KEY = b"\x00pending"
ROTATED_KEY = b"\x00rotated"

_META = struct.Struct(">QII32s32s")
_PENDING = struct.Struct(">Q32s")


class SqliteStateStore:
    def __init__(self, path: str | os.PathLike, create: bool = False):
        self.path = os.fspath(path)
        exists = os.path.exists(self.path)
        if create and exists:
            raise StateError(f"state file already exists: {self.path}")
        if not create and not exists:
            raise StateError(f"no state file at {self.path} (run init first)")
        if create:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY, 0o600)
            os.close(fd)
        os.chmod(self.path, 0o600)
        self._db = sqlite3.connect(self.path, isolation_level=None, check_same_thread=False)
        self._db.execute("CREATE TABLE IF NOT EXISTS kv (k BLOB PRIMARY KEY, v BLOB NOT NULL)")
        self._depth = 0

    def close(self) -> None:
        self._db.close()

    @contextlib.contextmanager
    def transaction(self):
        """Group several writes into one commit."""
        if self._depth == 0:
            self._db.execute("BEGIN IMMEDIATE")
        self._depth += 1
        try:
            yield self
        except BaseException:
            self._depth -= 1
            if self._depth == 0:
                self._db.execute("ROLLBACK")
            raise
        self._depth -= 1
        if self._depth == 0:
            self._db.execute("COMMIT")

    def _put(self, k: bytes, v: bytes) -> None:
        self._db.execute("INSERT OR REPLACE INTO kv (k, v) VALUES (?, ?)", (k, v))

    def _get(self, k: bytes) -> bytes | None:
        row = self._db.execute("SELECT v FROM kv WHERE k = ?", (k,)).fetchone()
        return None if row is None else bytes(row[0])

    def _delete(self, k: bytes) -> None:
        self._db.execute("DELETE FROM kv WHERE k = ?", (k,))

    # -- records -------------------------------------------------------------

    def put_keyword(self, w: str, ks: KeywordState) -> None:
        k = w.encode("utf-8")
        if not k or k[0] == 0:
            raise StateError("keywords must be non-empty and must not start with NUL")
        self._put(k, group.bits_to_bytes(group.pgen(), ks.tk) + struct.pack(">I", ks.cnt))

    def put_meta(self, key: SecretKey, a_max: int, x: int) -> None:
        self._put(
            META_KEY,
            _META.pack(key.epoch, a_max, x, group.scalar_to_bytes(key.k1), group.scalar_to_bytes(key.k2)),
        )

    def get_meta(self) -> tuple[SecretKey, int, int]:
        raw = self._get(META_KEY)
        if raw is None or len(raw) != _META.size:
            raise StateError("state file has no valid key record")
        epoch, a_max, x, k1, k2 = _META.unpack(raw)
        return SecretKey(int.from_bytes(k1, "big"), int.from_bytes(k2, "big"), epoch), a_max, x

    def put_pending(self, token: KeyUpdateToken | None) -> None:
        if token is None:
            self._delete(PENDING_KEY)
        else:
            self._put(PENDING_KEY, _PENDING.pack(token.new_epoch, token.to_bytes()))

    def get_pending(self) -> KeyUpdateToken | None:
        raw = self._get(PENDING_KEY)
        if raw is None:
            return None
        new_epoch, delta = _PENDING.unpack(raw)
        return KeyUpdateToken.from_bytes(delta, new_epoch)

    def put_rotated_at(self, ts: float) -> None:
        self._put(ROTATED_KEY, struct.pack(">d", ts))

    def get_rotated_at(self) -> float | None:
        raw = self._get(ROTATED_KEY)
        return None if raw is None else struct.unpack(">d", raw)[0]

    def iter_keywords(self):
        tb = group.pgen().token_bytes
        for k, v in self._db.execute("SELECT k, v FROM kv"):
            k, v = bytes(k), bytes(v)
            if k[:1] == b"\x00":
                continue
            if len(v) != tb + 4:
                raise StateError(f"corrupt state record for {k!r}")
            yield k.decode("utf-8"), KeywordState(int.from_bytes(v[:tb], "big"), struct.unpack(">I", v[tb:])[0])


def create_state(path, security_level: int = 128, a_max: int = 410_000, x: int = 2):
    """Initialise a new state file; returns (key, state)."""
    from .client import setup

    store = SqliteStateStore(path, create=True)
    return setup(security_level, a_max, x, store=store)


def open_state(path):
    """Load (key, state) from an existing state file."""
    store = SqliteStateStore(path)
    key, a_max, x = store.get_meta()
    state = ClientState(group.pgen(), a_max, x, store)
    for w, ks in store.iter_keywords():
        state.load(w, ks)
    return key, state
