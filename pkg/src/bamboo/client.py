"""Client side of the scheme: keyword state, update ciphertexts, trapdoors,
result decryption, key rotation tokens and the two padding policies."""

from __future__ import annotations

import enum
import logging
import secrets
from collections import Counter
from dataclasses import dataclass

from . import group
from .errors import ConfigError, ProtocolError, StateError, UnknownKeyword
from .group import GroupElement, GroupParams
from .tokens import Ciphertext, KeyUpdateToken, SearchTrapdoor

log = logging.getLogger(__name__)

COUNTER_MAX = 2**32 - 1


class Op(enum.IntEnum):
    DEL = 0
    ADD = 1


class Policy(str, enum.Enum):
    MAX = "max"
    ADJUSTABLE = "adjustable"


@dataclass(frozen=True)
class SecretKey:
    k1: int
    k2: int
    epoch: int = 0

    def __post_init__(self):
        group.check_scalar(self.k1)
        group.check_scalar(self.k2)
        if self.epoch < 0:
            raise ValueError("epoch must be non-negative")


@dataclass(frozen=True)
class KeywordState:
    tk: int
    cnt: int


def bucket_of(cnt: int, x: int) -> int:
    """Smallest i >= 0 with x**(i-1) < cnt <= x**i."""
    if cnt < 1:
        raise ValueError("counter must be positive")
    i, bound = 0, 1
    while bound < cnt:
        i += 1
        bound *= x
    return i


class ClientState:
    """Keyword map plus the bucket occupancy index used by adjustable padding.

    ``store`` (see :mod:`bamboo.state_store`) receives every mutation before
    the method returns; without one the state lives in memory only.
    """

    def __init__(self, params: GroupParams, a_max: int, x: int, store=None):
        if a_max < 1:
            raise ConfigError("a_max must be a positive integer")
        if x < 2:
            raise ConfigError("x must be at least 2")
        self.params = params
        self.a_max = a_max
        self.x = x
        self.store = store
        self._keywords: dict[str, KeywordState] = {}
        self._buckets: Counter[int] = Counter()

    def __len__(self) -> int:
        return len(self._keywords)

    def __contains__(self, w: str) -> bool:
        return w in self._keywords

    def get(self, w: str) -> KeywordState | None:
        return self._keywords.get(w)

    def keywords(self):
        return self._keywords.items()

    def bucket_count(self, i: int) -> int:
        return self._buckets[i]

    def set(self, w: str, ks: KeywordState) -> None:
        old = self._keywords.get(w)
        if self.store is not None:
            self.store.put_keyword(w, ks)
        if old is not None:
            b = bucket_of(old.cnt, self.x)
            self._buckets[b] -= 1
            if not self._buckets[b]:
                del self._buckets[b]
        self._keywords[w] = ks
        self._buckets[bucket_of(ks.cnt, self.x)] += 1

    def load(self, w: str, ks: KeywordState) -> None:
        """Insert a record read back from storage (no write-through)."""
        store, self.store = self.store, None
        try:
            self.set(w, ks)
        finally:
            self.store = store

    def rebuild_buckets(self) -> Counter:
        return Counter(bucket_of(ks.cnt, self.x) for ks in self._keywords.values())

    def audit(self) -> bool:
        return self.rebuild_buckets() == +self._buckets


def setup(security_level: int = 128, a_max: int = 410_000, x: int = 2, store=None):
    """Fresh key pair at epoch 0 and an empty state."""
    params = group.pgen(security_level, security_level)
    state = ClientState(params, a_max, x, store)
    key = SecretKey(group.random_scalar(), group.random_scalar(), 0)
    if store is not None:
        store.put_meta(key, a_max, x)
    return key, state


def make_payload(params: GroupParams, op: Op, file_id: int) -> int:
    if not 0 < file_id < (1 << params.id_bits):
        raise ValueError(f"file identifier must be a non-zero {params.id_bits}-bit value")
    return (int(op) << params.id_bits) | file_id


def split_payload(params: GroupParams, payload: int) -> tuple[Op, int]:
    return Op(payload >> params.id_bits), payload & ((1 << params.id_bits) - 1)


def gen_data_update(key: SecretKey, state: ClientState, op: Op, w: str, file_id: int) -> Ciphertext:
    params = state.params
    payload = make_payload(params, Op(op), file_id)
    ks = state.get(w)
    if ks is None:
        tk, cnt = group.random_token(params), 0
    else:
        tk, cnt = ks.tk, ks.cnt
    if cnt >= COUNTER_MAX:
        raise StateError(f"update counter overflow for keyword {w!r}")
    cnt += 1
    tk_new = group.random_token(params)
    label = group.hash_h1(params, tk_new) ** key.k1
    d = (group.encode(params, tk) * group.hash_h2(params, tk_new)) ** key.k1
    c = group.encode(params, payload) ** key.k2 * group.hash_hg(params, tk_new) ** key.k1
    # persisted before the ciphertext leaves this function
    state.set(w, KeywordState(tk_new, cnt))
    return Ciphertext(label, d, c)


def padding_value(state: ClientState, w: str) -> int:
    ks = state.get(w)
    if ks is None:
        raise UnknownKeyword(w)
    i = bucket_of(ks.cnt, state.x)
    if state.bucket_count(i) < 2:
        return state.a_max
    size = state.x**i
    if size > state.a_max:
        return state.a_max
    return size if secrets.randbits(1) else state.a_max


def gen_trapdoor(key: SecretKey, state: ClientState, w: str, policy: Policy = Policy.MAX) -> SearchTrapdoor:
    ks = state.get(w)
    if ks is None:
        raise UnknownKeyword(w)
    params = state.params
    label = group.hash_h1(params, ks.tk) ** key.k1
    msk_d = group.hash_h2(params, ks.tk) ** key.k1
    msk_c = group.hash_hg(params, ks.tk) ** key.k1
    if Policy(policy) is Policy.MAX:
        pad = state.a_max
    else:
        pad = padding_value(state, w)
    return SearchTrapdoor(key.k1, label, msk_d, msk_c, pad, key.epoch)


def decrypt_results(key: SecretKey, state: ClientState, w: str, components: list[GroupElement]) -> set[int]:
    """Decrypt the first cnt components and replay them oldest-first."""
    ks = state.get(w)
    if ks is None:
        raise UnknownKeyword(w)
    if len(components) < ks.cnt:
        raise ProtocolError(f"response has {len(components)} components, expected at least {ks.cnt}")
    params = state.params
    k2_inv = group.scalar_inv(key.k2)
    ops = []
    for comp in components[:ks.cnt]:
        ops.append(split_payload(params, group.decode(params, comp ** k2_inv)))
    result: set[int] = set()
    for op, file_id in reversed(ops):
        if op is Op.ADD:
            result.add(file_id)
        else:
            result.discard(file_id)
    return result


def gen_key_update(key: SecretKey) -> tuple[SecretKey, KeyUpdateToken]:
    delta = group.random_scalar()
    new_key = SecretKey(
        group.scalar_mul(key.k1, delta), group.scalar_mul(key.k2, delta), key.epoch + 1
    )
    return new_key, KeyUpdateToken(delta, key.epoch + 1)


def apply_key_update(key: SecretKey, token: KeyUpdateToken) -> SecretKey:
    if token.new_epoch != key.epoch + 1:
        raise StateError(f"token for epoch {token.new_epoch} does not follow key epoch {key.epoch}")
    return SecretKey(
        group.scalar_mul(key.k1, token.delta), group.scalar_mul(key.k2, token.delta), token.new_epoch
    )
