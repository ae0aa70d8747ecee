"""Scaling benchmarks: per-operation timings across database sizes and
rotation worker counts, plus padded search bandwidth under both policies.

Each measurement is preceded by a warm-up pass and reported as the median
of ``runs`` repetitions, wall clock only.
"""

from __future__ import annotations

import csv
import io
import random
import socket
import statistics
import threading
import time
from dataclasses import dataclass

from cryptography.hazmat.primitives.asymmetric import ec

from . import client, group
from .client import Op, Policy
from .oracle import WorkloadScript, Add, Del
from .server import EncryptedDatabase
from .service import RemoteServer, serve_connection
from .session import BambooClient

CSV_COLUMNS = ("op", "N", "workers", "policy", "median_us", "bytes")


@dataclass(frozen=True)
class Suite:
    sizes: tuple[int, ...]
    workers: tuple[int, ...]
    chains: tuple[int, ...]
    runs: int = 5
    update_batch: int = 200
    a_max: int = 4096
    bandwidth_updates: int = 3000
    bandwidth_keywords: int = 60


SUITES = {
    "desk": Suite(sizes=(1_000, 10_000, 100_000), workers=(1, 2, 4), chains=(100, 1_000, 10_000)),
    "small": Suite(sizes=(1_000, 10_000), workers=(1, 2), chains=(100, 1_000), runs=5,
                   a_max=1024, bandwidth_updates=1000, bandwidth_keywords=30),
    "smoke": Suite(sizes=(100, 1_000), workers=(1, 2), chains=(10, 100), runs=3, update_batch=50,
                   a_max=256, bandwidth_updates=300, bandwidth_keywords=10),
}


@dataclass
class Metric:
    op: str
    N: int
    workers: int
    policy: str
    median_us: float
    bytes: int = 0

    def row(self):
        return (self.op, self.N, self.workers, self.policy, f"{self.median_us:.1f}", self.bytes)


def _median_us(fn, runs: int, warmup: int = 1) -> float:
    for _ in range(warmup):
        fn()
    samples = []
    for _ in range(runs):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
    return statistics.median(samples) * 1e6


def filler_records(n: int):
    """n records of valid, pairwise distinct points (cheap to produce).

    Consecutive multiples of a random point: rotation and lookup costs do
    not depend on how the points were chosen.
    """
    step = group.random_element()
    p = group.random_element()
    out = []
    for _ in range(n):
        a = p * step
        b = a * step
        c = b * step
        p = c
        out.append((a.to_bytes(), b.to_bytes(), c.to_bytes()))
    return out


def filled_database(n: int) -> EncryptedDatabase:
    db = EncryptedDatabase()
    db.store_raw(filler_records(n), db.epoch)
    return db


def time_data_update(n: int, runs: int = 5, batch: int = 200) -> float:
    """Median per-update time (client generation + server store) at size n."""
    db = filled_database(n)
    key, state = client.setup(128, 4096, 2)
    words = [f"w{i}" for i in range(50)]
    counter = iter(range(1, 1 << 60))

    def one_batch():
        for _ in range(batch):
            ct = client.gen_data_update(key, state, Op.ADD, random.choice(words), next(counter))
            db.store(ct, key.epoch)

    return _median_us(one_batch, runs) / batch


def time_rotate(db: EncryptedDatabase, workers: int, runs: int = 5, warmup: int = 1) -> float:
    def once():
        db.rotate(client.KeyUpdateToken(group.random_scalar(), db.epoch + 1), workers)

    return _median_us(once, runs, warmup)


def time_rotate_interleaved(configs, rounds: int = 5, warmup: int = 1) -> dict:
    """Median rotation time per (N, workers), sampling the configs round-robin.

    Interleaving spreads slow drift of the host (frequency scaling, noisy
    neighbours) evenly over all configs, so ratios between them stay honest.
    Small databases are sampled several times per round.
    """
    dbs = {n: filled_database(n) for n in sorted({n for n, _ in configs})}
    biggest = max(dbs)
    samples = {cfg: [] for cfg in configs}

    def once(n, w):
        db = dbs[n]
        t0 = time.perf_counter()
        db.rotate(client.KeyUpdateToken(group.random_scalar(), db.epoch + 1), w)
        return time.perf_counter() - t0

    for n, w in configs:
        for _ in range(warmup):
            once(n, w)
    for _ in range(rounds):
        for n, w in configs:
            reps = max(1, min(10, biggest // n))
            samples[(n, w)].extend(once(n, w) for _ in range(reps))
    return {cfg: statistics.median(v) * 1e6 for cfg, v in samples.items()}


def chain_session(length: int, a_max: int | None = None):
    """One keyword updated ``length`` times; returns (key, state, db)."""
    key, state = client.setup(128, a_max or length, 2)
    db = EncryptedDatabase(state.params)
    for i in range(length):
        db.store(client.gen_data_update(key, state, Op.ADD, "chain", i + 1), key.epoch)
    return key, state, db


def time_search(length: int, runs: int = 5) -> float:
    """Server-side search time over a chain of ``length``, pad target = length."""
    key, state, db = chain_session(length)
    td = client.gen_trapdoor(key, state, "chain", Policy.MAX)
    return _median_us(lambda: db.search(td), runs)


def loopback_pair(db: EncryptedDatabase, workers: int = 1):
    """A RemoteServer talking to ``db`` through a socketpair and a server thread."""
    identity = ec.generate_private_key(ec.SECP256R1())
    a, b = socket.socketpair()
    t = threading.Thread(target=serve_connection, args=(b, db, identity, workers), daemon=True)
    t.start()
    return RemoteServer(connect=lambda: a), t


def bandwidth_compare(updates: int, keywords: int, a_max: int, seed: int = 7, zipf: float = 1.1):
    """Search every keyword once per policy over the wire on a Zipf workload.

    Returns a list of dicts with per-search pad target and measured bytes.
    """
    script = WorkloadScript.generate(seed, updates, keywords, del_ratio=0.1, search_ratio=0.0,
                                     rotations=0, zipf=zipf)
    key, state = client.setup(128, a_max, 2)
    db = EncryptedDatabase(state.params)
    remote, _ = loopback_pair(db)
    session = BambooClient(key, state, remote)
    for step in script.steps:
        if isinstance(step, Add):
            session.add(step.w, step.id)
        elif isinstance(step, Del):
            session.delete(step.w, step.id)
    rows = []
    for w, ks in sorted(state.keywords()):
        entry = {"keyword": w, "cnt": ks.cnt}
        for policy in (Policy.MAX, Policy.ADJUSTABLE):
            session.policy = policy
            td = session.trapdoor(w)
            t0 = time.perf_counter()
            comps = remote.search(td)
            entry[policy.value] = {
                "pad_target": td.pad_target,
                "received": len(comps),
                "bytes": remote.last_search_bytes,
                "payload": remote.last_search_payload,
                "us": (time.perf_counter() - t0) * 1e6,
            }
        rows.append(entry)
    remote.close()
    return rows


def run_scaling(suite: str | Suite = "desk", progress=None) -> list[Metric]:
    s = SUITES[suite] if isinstance(suite, str) else suite
    say = progress or (lambda msg: None)
    metrics: list[Metric] = []
    for n in s.sizes:
        say(f"data_update N={n}")
        metrics.append(Metric("data_update", n, 1, "-", time_data_update(n, s.runs, s.update_batch)))
    say("rotate")
    configs = [(n, w) for n in s.sizes for w in s.workers]
    for (n, w), us in time_rotate_interleaved(configs, s.runs).items():
        metrics.append(Metric("rotate", n, w, "-", us))
    for length in s.chains:
        say(f"search chain={length}")
        metrics.append(Metric("search", length, 1, "-", time_search(length, s.runs)))
    say("bandwidth")
    rows = bandwidth_compare(s.bandwidth_updates, s.bandwidth_keywords, s.a_max)
    for policy in ("max", "adjustable"):
        total = sum(r[policy]["bytes"] for r in rows)
        med = statistics.median(r[policy]["us"] for r in rows)
        metrics.append(Metric("search_bandwidth", len(rows), 1, policy, med, total))
    return metrics


def to_csv(metrics: list[Metric]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(CSV_COLUMNS)
    for m in metrics:
        w.writerow(m.row())
    return buf.getvalue()

