"""Server side: encrypted database storage, chained search and key rotation."""

from __future__ import annotations

import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from . import group
from .errors import DuplicateLabel, EpochMismatch, ProtocolError
from .group import GroupElement, GroupParams
from .storage import MemoryBackend, dump_snapshot, load_snapshot
from .tokens import Ciphertext, KeyUpdateToken, SearchTrapdoor

log = logging.getLogger(__name__)


class RWLock:
    """Many readers or one writer; a waiting writer blocks new readers."""

    def __init__(self):
        self._cond = threading.Condition()
        self._readers = 0
        self._writer = False
        self._waiting_writers = 0

    def acquire_read(self):
        with self._cond:
            while self._writer or self._waiting_writers:
                self._cond.wait()
            self._readers += 1

    def release_read(self):
        with self._cond:
            self._readers -= 1
            if not self._readers:
                self._cond.notify_all()

    def acquire_write(self):
        with self._cond:
            self._waiting_writers += 1
            while self._writer or self._readers:
                self._cond.wait()
            self._waiting_writers -= 1
            self._writer = True

    def release_write(self):
        with self._cond:
            self._writer = False
            self._cond.notify_all()

    class _Guard:
        def __init__(self, acquire, release):
            self._acquire, self._release = acquire, release

        def __enter__(self):
            self._acquire()

        def __exit__(self, *exc):
            self._release()

    def read(self):
        return self._Guard(self.acquire_read, self.release_read)

    def write(self):
        return self._Guard(self.acquire_write, self.release_write)


@dataclass
class SearchResponse:
    components: list[GroupElement]
    n_found: int
    epoch: int
    lookups: int = field(default=0, compare=False)

    def __len__(self) -> int:
        return len(self.components)


def _rotate_shard(records, delta: int) -> dict[bytes, tuple[bytes, bytes]]:
    out = {}
    load = GroupElement.from_bytes
    for label, d, c in records:
        out[(load(label) ** delta).to_bytes()] = ((load(d) ** delta).to_bytes(), (load(c) ** delta).to_bytes())
    return out


class EncryptedDatabase:
    """Label → (D, C) map plus the epoch of the key generation it is under.

    ``store`` and ``search`` may run concurrently; ``rotate`` takes the lock
    exclusively so no query sees a partially rotated database.
    """

    def __init__(self, params: GroupParams | None = None, backend=None):
        self.params = params or group.pgen()
        self.backend = backend if backend is not None else MemoryBackend()
        self._lock = RWLock()

    @property
    def epoch(self) -> int:
        return self.backend.epoch

    def __len__(self) -> int:
        return len(self.backend)

    def _check_epoch(self, epoch: int) -> None:
        if epoch != self.backend.epoch:
            raise EpochMismatch(self.backend.epoch, epoch)

    def store(self, ct: Ciphertext, epoch: int) -> None:
        with self._lock.read():
            self._check_epoch(epoch)
            label = ct.label.to_bytes()
            if self.backend.get(label) is not None:
                raise DuplicateLabel("label already present in the database")
            self.backend.put(label, ct.d.to_bytes(), ct.c.to_bytes())

    def store_raw(self, records, epoch: int) -> None:
        """Bulk insert of pre-serialised (L, D, C) triples, for benchmarks."""
        with self._lock.read():
            self._check_epoch(epoch)
            for label, d, c in records:
                self.backend.put(label, d, c)

    def lookup(self, label: GroupElement) -> tuple[GroupElement, GroupElement] | None:
        rec = self.backend.get(label.to_bytes())
        if rec is None:
            return None
        return GroupElement.from_bytes(rec[0]), GroupElement.from_bytes(rec[1])

    def search(self, td: SearchTrapdoor) -> SearchResponse:
        with self._lock.read():
            self._check_epoch(td.epoch)
            params = self.params
            k1 = td.k1
            k1_inv = group.scalar_inv(k1)
            label, msk_d, msk_c = td.label, td.msk_d, td.msk_c
            found: list[GroupElement] = []
            lookups = 0
            limit = len(self.backend) + 1
            while True:
                lookups += 1
                rec = self.lookup(label)
                if rec is None:
                    break
                if len(found) >= limit:
                    raise ProtocolError("search chain does not terminate")
                d, c = rec
                tk = group.decode(params, (d / msk_d) ** k1_inv)
                found.append(c / msk_c)
                label = group.hash_h1(params, tk) ** k1
                msk_d = group.hash_h2(params, tk) ** k1
                msk_c = group.hash_hg(params, tk) ** k1
            n_found = len(found)
            if n_found > td.pad_target:
                log.warning("search found %d results, above pad target %d; returning unpadded", n_found, td.pad_target)
            found.extend(group.random_element() for _ in range(td.pad_target - n_found))
            return SearchResponse(found, n_found, self.backend.epoch, lookups)

    def rotate(self, token: KeyUpdateToken, workers: int = 1) -> None:
        if workers < 1:
            raise ValueError("workers must be at least 1")
        group.check_scalar(token.delta)
        with self._lock.write():
            if token.new_epoch != self.backend.epoch + 1:
                raise EpochMismatch(self.backend.epoch + 1, token.new_epoch)
            delta = token.delta
            if workers == 1:
                shadow = _rotate_shard(self.backend.scan(), delta)
            else:
                shards = [[] for _ in range(workers)]
                for rec in self.backend.scan():
                    shards[int.from_bytes(rec[0][1:9], "big") % workers].append(rec)
                shadow = {}
                with ThreadPoolExecutor(max_workers=workers) as pool:
                    for part in pool.map(_rotate_shard, shards, [delta] * workers):
                        shadow.update(part)
            if len(shadow) != len(self.backend):
                raise ProtocolError("label collision during rotation")
            self.backend.swap_epoch(token.new_epoch, shadow)

    def persist(self) -> bytes:
        with self._lock.read():
            return dump_snapshot(self.backend.epoch, self.backend.scan())

    @classmethod
    def restore(cls, data: bytes, params: GroupParams | None = None) -> EncryptedDatabase:
        epoch, records = load_snapshot(data)
        return cls(params, MemoryBackend(epoch, records))

    def flush(self) -> None:
        with self._lock.write():
            self.backend.flush()

    def close(self) -> None:
        with self._lock.write():
            self.backend.close()
