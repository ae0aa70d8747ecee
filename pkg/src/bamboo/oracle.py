"""Plaintext reference index, seeded workload scripts and the conformance run.

Script file format: a ``seed=<u64>`` header, then one step per line::

    add <keyword> <hex id>
    del <keyword> <hex id>
    search <keyword>
    rotate
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Union

from .client import Op
from .errors import UnknownKeyword


@dataclass(frozen=True)
class Add:
    w: str
    id: int


@dataclass(frozen=True)
class Del:
    w: str
    id: int


@dataclass(frozen=True)
class Search:
    w: str


@dataclass(frozen=True)
class Rotate:
    pass


Step = Union[Add, Del, Search, Rotate]


class PlainIndex:
    """keyword -> [(seq, op, id)] with the live set derived by replay."""

    def __init__(self):
        self.history: dict[str, list[tuple[int, Op, int]]] = {}
        self._live: dict[str, set[int]] = {}
        self._seq = 0

    def knows(self, w: str) -> bool:
        return w in self.history

    def live(self, w: str) -> set[int]:
        return self._live.get(w, set())

    def count(self, w: str) -> int:
        return len(self.history.get(w, ()))

    def apply(self, step: Step) -> None:
        if isinstance(step, (Add, Del)):
            op = Op.ADD if isinstance(step, Add) else Op.DEL
            self._seq += 1
            self.history.setdefault(step.w, []).append((self._seq, op, step.id))
            live = self._live.setdefault(step.w, set())
            if op is Op.ADD:
                live.add(step.id)
            else:
                live.discard(step.id)

    def search(self, w: str) -> list[int]:
        return sorted(self.live(w))


def oracle_apply(index: PlainIndex, step: Step) -> None:
    index.apply(step)


def oracle_search(index: PlainIndex, w: str) -> list[int]:
    return index.search(w)


def replay(history: list[tuple[int, Op, int]]) -> list[int]:
    """Independent recomputation of a live set straight from a history."""
    live = []
    for _, op, file_id in sorted(history):
        if op is Op.ADD and file_id not in live:
            live.append(file_id)
        elif op is Op.DEL and file_id in live:
            live.remove(file_id)
    return sorted(live)


def zipf_weights(n: int, s: float) -> list[float]:
    return [1.0 / (k**s) for k in range(1, n + 1)]


@dataclass
class WorkloadScript:
    seed: int
    steps: list[Step] = field(default_factory=list)

    @classmethod
    def generate(
        cls,
        seed: int,
        length: int,
        keywords: int = 100,
        del_ratio: float = 0.3,
        search_ratio: float = 0.02,
        rotations: int = 5,
        zipf: float | None = None,
        id_space: int = 1 << 16,
        only_dels: bool = False,
    ) -> WorkloadScript:
        """Reproducible from its arguments.

        Deletes mostly target a live id of the keyword so they take effect;
        the rest hit random ids (dangling deletes).
        """
        rng = random.Random(seed)
        names = [f"kw{k:04d}" for k in range(keywords)]
        weights = zipf_weights(keywords, zipf) if zipf else None
        rotate_at = set(rng.sample(range(length), min(rotations, length)))
        shadow = PlainIndex()
        steps: list[Step] = []
        for i in range(length):
            if i in rotate_at:
                steps.append(Rotate())
                continue
            w = rng.choices(names, weights)[0] if weights else rng.choice(names)
            r = rng.random()
            if r < search_ratio:
                step: Step = Search(w)
            elif only_dels or rng.random() < del_ratio:
                live = sorted(shadow.live(w))
                if live and not only_dels and rng.random() < 0.8:
                    step = Del(w, rng.choice(live))
                else:
                    step = Del(w, rng.randrange(1, id_space))
            else:
                step = Add(w, rng.randrange(1, id_space))
            shadow.apply(step)
            steps.append(step)
        return cls(seed, steps)

    def dumps(self) -> str:
        lines = [f"seed={self.seed}"]
        for s in self.steps:
            if isinstance(s, Add):
                lines.append(f"add {s.w} {s.id:x}")
            elif isinstance(s, Del):
                lines.append(f"del {s.w} {s.id:x}")
            elif isinstance(s, Search):
                lines.append(f"search {s.w}")
            else:
                lines.append("rotate")
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> WorkloadScript:
        lines = [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
        if not lines or not lines[0].startswith("seed="):
            raise ValueError("script must start with a seed=<u64> header")
        script = cls(int(lines[0][5:]))
        for ln in lines[1:]:
            parts = ln.split()
            if parts[0] == "add" and len(parts) == 3:
                script.steps.append(Add(parts[1], int(parts[2], 16)))
            elif parts[0] == "del" and len(parts) == 3:
                script.steps.append(Del(parts[1], int(parts[2], 16)))
            elif parts[0] == "search" and len(parts) == 2:
                script.steps.append(Search(parts[1]))
            elif parts == ["rotate"]:
                script.steps.append(Rotate())
            else:
                raise ValueError(f"bad script line: {ln!r}")
        return script


@dataclass
class Divergence:
    step: int
    keyword: str
    expected: list[int] | None
    got: list[int] | None


@dataclass
class ConformanceReport:
    steps: int = 0
    searches: int = 0
    aborts: int = 0
    rotations: int = 0
    divergences: int = 0
    first_divergence: Divergence | None = None

    @property
    def ok(self) -> bool:
        return self.divergences == 0


def run_script(script: WorkloadScript, session) -> ConformanceReport:
    """Drive a BambooClient and the oracle side by side.

    A search the client aborts (keyword never updated) conforms only if the
    oracle has no history for the keyword either.
    """
    index = PlainIndex()
    report = ConformanceReport()
    for i, step in enumerate(script.steps):
        report.steps += 1
        if isinstance(step, Add):
            session.add(step.w, step.id)
        elif isinstance(step, Del):
            session.delete(step.w, step.id)
        elif isinstance(step, Rotate):
            session.rotate()
            report.rotations += 1
        else:
            report.searches += 1
            expected = index.search(step.w) if index.knows(step.w) else None
            try:
                got = sorted(session.search(step.w))
            except UnknownKeyword:
                got = None
                report.aborts += 1
            if got != expected:
                report.divergences += 1
                if report.first_divergence is None:
                    report.first_divergence = Divergence(i, step.w, expected, got)
        index.apply(step)
    return report


def run_conformance(seed: int, steps: int, keywords: int = 100, a_max: int = 256, policy="max",
                    workers: int = 1, **gen) -> ConformanceReport:
    """Fresh in-process client/server pair against a generated script."""
    from .client import setup
    from .server import EncryptedDatabase
    from .service import LocalServer
    from .session import BambooClient

    script = WorkloadScript.generate(seed, steps, keywords, **gen)
    key, state = setup(128, a_max, 2)
    session = BambooClient(key, state, LocalServer(EncryptedDatabase(state.params), workers), policy)
    return run_script(script, session)
