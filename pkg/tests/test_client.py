import os
import stat

import pytest
from hypothesis import given, settings, strategies as st

from bamboo import client, group
from bamboo.client import KeywordState, Op, Policy, bucket_of
from bamboo.errors import ConfigError, ProtocolError, StateError, UnknownKeyword
from bamboo.server import EncryptedDatabase
from bamboo.state_store import SqliteStateStore, create_state, open_state


def fill(state, w, cnt):
    """Put a keyword at a given counter without generating ciphertexts."""
    state.set(w, KeywordState(group.random_token(state.params), cnt))


def test_setup_defaults():
    key, state = client.setup(128, 410_000, 2)
    assert 1 <= key.k1 < group.ORDER_Q and 1 <= key.k2 < group.ORDER_Q
    assert key.epoch == 0 and len(state) == 0
    assert state.a_max == 410_000 and state.params.n == 128


@pytest.mark.parametrize("a_max,x", [(0, 2), (-5, 2), (10, 1)])
def test_setup_rejects_bad_config(a_max, x):
    with pytest.raises(ConfigError):
        client.setup(128, a_max, x)


def test_setups_distinct():
    keys = [client.setup()[0] for _ in range(100)]
    assert len({(k.k1, k.k2) for k in keys}) == 100


def test_first_update_sets_counter():
    key, state = client.setup(128, 16, 2)
    assert state.get("w") is None
    client.gen_data_update(key, state, Op.ADD, "w", 7)
    assert state.get("w").cnt == 1
    client.gen_data_update(key, state, Op.DEL, "w", 7)
    assert state.get("w").cnt == 2


def test_add_then_del_fresh_labels():
    key, state = client.setup(128, 16, 2)
    a = client.gen_data_update(key, state, Op.ADD, "w", 7)
    b = client.gen_data_update(key, state, Op.DEL, "w", 7)
    assert a.label != b.label and len(a.to_bytes()) == 99


def test_file_id_bounds():
    key, state = client.setup(128, 16, 2)
    for bad in (0, 1 << 127):
        with pytest.raises(ValueError):
            client.gen_data_update(key, state, Op.ADD, "w", bad)
    assert state.get("w") is None


def test_counter_overflow():
    key, state = client.setup(128, 16, 2)
    fill(state, "w", client.COUNTER_MAX)
    with pytest.raises(StateError):
        client.gen_data_update(key, state, Op.ADD, "w", 1)


def test_chain_structure():
    # each D decrypts to the previous token under K1
    key, state = client.setup(128, 16, 2)
    params = state.params
    tokens, cts = [], []
    for i in range(3):
        before = state.get("w")
        cts.append(client.gen_data_update(key, state, Op.ADD, "w", i + 1))
        tokens.append((before.tk if before else None, state.get("w").tk))
    k1_inv = group.scalar_inv(key.k1)
    for (prev_tk, tk), ct in zip(tokens, cts):
        assert ct.label == group.hash_h1(params, tk) ** key.k1
        mask = group.hash_h2(params, tk) ** key.k1
        inner = group.decode(params, (ct.d / mask) ** k1_inv)
        if prev_tk is not None:
            assert inner == prev_tk
    assert tokens[2][0] == tokens[1][1] and tokens[1][0] == tokens[0][1]


def test_trapdoor_unknown_keyword():
    key, state = client.setup()
    with pytest.raises(UnknownKeyword, match="unknown keyword"):
        client.gen_trapdoor(key, state, "never")


def test_trapdoor_policy_max():
    key, state = client.setup(128, 410_000, 2)
    client.gen_data_update(key, state, Op.ADD, "w", 1)
    td = client.gen_trapdoor(key, state, "w", Policy.MAX)
    assert td.pad_target == 410_000 and td.epoch == 0 and td.k1 == key.k1


def test_trapdoor_deterministic():
    key, state = client.setup()
    client.gen_data_update(key, state, Op.ADD, "w", 1)
    a = client.gen_trapdoor(key, state, "w")
    b = client.gen_trapdoor(key, state, "w")
    assert a.label == b.label and a.msk_d == b.msk_d and a.msk_c == b.msk_c


@pytest.mark.parametrize("cnt,x,expected", [
    (1, 2, 0), (2, 2, 1), (3, 2, 2), (4, 2, 2), (5, 2, 3), (8192, 2, 13), (8193, 2, 14),
    (10_000, 2, 14), (16_384, 2, 14), (500_000, 2, 19), (9, 3, 2), (10, 3, 3),
])
def test_bucket_of(cnt, x, expected):
    assert bucket_of(cnt, x) == expected


@settings(max_examples=300, deadline=None)
@given(st.integers(min_value=1, max_value=10**7), st.integers(min_value=2, max_value=10))
def test_bucket_bounds_property(cnt, x):
    i = bucket_of(cnt, x)
    assert cnt <= x**i
    assert i == 0 or x ** (i - 1) < cnt


def test_padding_bucket_partner():
    key, state = client.setup(128, 410_000, 2)
    fill(state, "w", 10_000)
    fill(state, "other", 9_000)
    seen = {client.padding_value(state, "w") for _ in range(200)}
    assert seen == {16_384, 410_000}


def test_padding_unique_occupant():
    key, state = client.setup(128, 410_000, 2)
    fill(state, "w", 10_000)
    fill(state, "other", 5_000)  # bucket 13
    assert {client.padding_value(state, "w") for _ in range(100)} == {410_000}


def test_padding_above_amax():
    key, state = client.setup(128, 410_000, 2)
    fill(state, "w", 500_000)
    fill(state, "other", 400_000)
    assert {client.padding_value(state, "w") for _ in range(50)} == {410_000}


def test_padding_covers_count():
    key, state = client.setup(128, 1 << 20, 2)
    for i, cnt in enumerate([1, 1, 2, 3, 4, 5, 17, 31, 32, 33, 100, 120]):
        fill(state, f"w{i}", cnt)
    for w, ks in state.keywords():
        for _ in range(20):
            assert client.padding_value(state, w) >= ks.cnt


def test_buckets_follow_updates():
    key, state = client.setup(128, 64, 2)
    for i in range(40):
        client.gen_data_update(key, state, Op.ADD, f"w{i % 7}", i + 1)
        assert state.audit()
    assert sum(state.bucket_count(i) for i in range(10)) == 7


def _components(key, state, w, ops):
    for op, fid in ops:
        client.gen_data_update(key, state, op, w, fid)
    # emulate the server: newest-first payloads under K2
    comps = []
    for op, fid in reversed(ops):
        m = client.make_payload(state.params, op, fid)
        comps.append(group.encode(state.params, m) ** key.k2)
    return comps


@pytest.mark.parametrize("ops,expected", [
    ([(Op.ADD, 1), (Op.DEL, 1)], set()),
    ([(Op.DEL, 1)], set()),
    ([(Op.ADD, 1), (Op.ADD, 2), (Op.ADD, 3)], {1, 2, 3}),
    ([(Op.ADD, 1), (Op.DEL, 1), (Op.ADD, 1)], {1}),
    ([(Op.ADD, 1), (Op.ADD, 2), (Op.DEL, 1), (Op.ADD, 1)], {1, 2}),
    ([(Op.DEL, 5), (Op.ADD, 5)], {5}),
])
def test_decrypt_results(ops, expected):
    key, state = client.setup(128, 16, 2)
    comps = _components(key, state, "w", ops)
    padded = comps + [group.random_element() for _ in range(16 - len(comps))]
    assert client.decrypt_results(key, state, "w", padded) == expected


def test_decrypt_short_response():
    key, state = client.setup(128, 16, 2)
    comps = _components(key, state, "w", [(Op.ADD, 1), (Op.ADD, 2)])
    with pytest.raises(ProtocolError):
        client.decrypt_results(key, state, "w", comps[:1])


def test_key_update_homomorphism(params):
    key, _ = client.setup()
    new_key, token = client.gen_key_update(key)
    assert new_key.epoch == 1 and token.new_epoch == 1
    h = group.hash_h1(params, group.random_token(params))
    assert h ** new_key.k1 == (h ** key.k1) ** token.delta
    assert client.apply_key_update(key, token) == new_key


def test_key_update_associative():
    key, _ = client.setup()
    k1, t1 = client.gen_key_update(key)
    k2, t2 = client.gen_key_update(k1)
    combined = group.scalar_mul(t1.delta, t2.delta)
    assert k2.k1 == group.scalar_mul(key.k1, combined)
    assert k2.k2 == group.scalar_mul(key.k2, combined)


def test_apply_key_update_wrong_epoch():
    key, _ = client.setup()
    _, token = client.gen_key_update(key)
    k1 = client.apply_key_update(key, token)
    with pytest.raises(StateError):
        client.apply_key_update(k1, token)


def test_search_after_rotation_decrypts():
    key, state = client.setup(128, 8, 2)
    db = EncryptedDatabase(state.params)
    for fid in (1, 2):
        db.store(client.gen_data_update(key, state, Op.ADD, "w", fid), key.epoch)
    key, token = client.gen_key_update(key)
    db.rotate(token)
    td = client.gen_trapdoor(key, state, "w")
    assert client.decrypt_results(key, state, "w", db.search(td).components) == {1, 2}


# -- persistent state ------------------------------------------------------------


def test_state_store_roundtrip(tmp_path):
    path = tmp_path / "state.db"
    key, state = create_state(path, 128, 1000, 3)
    for i in range(5):
        client.gen_data_update(key, state, Op.ADD, f"w{i % 2}", i + 1)
    state.store.put_rotated_at(123.5)
    state.store.close()
    assert stat.S_IMODE(os.stat(path).st_mode) == 0o600

    key2, state2 = open_state(path)
    assert key2 == key
    assert (state2.a_max, state2.x) == (1000, 3)
    assert {w: ks for w, ks in state2.keywords()} == {w: ks for w, ks in state.keywords()}
    assert state2.audit()
    assert state2.store.get_rotated_at() == 123.5


def test_state_store_transaction_rollback(tmp_path):
    path = tmp_path / "state.db"
    key, state = create_state(path)
    client.gen_data_update(key, state, Op.ADD, "w", 1)
    with pytest.raises(RuntimeError):
        with state.store.transaction():
            state.store.put_keyword("v", KeywordState(5, 1))
            raise RuntimeError("boom")
    state.store.close()
    _, state2 = open_state(path)
    assert "v" not in state2 and "w" in state2


def test_state_store_pending(tmp_path):
    store = SqliteStateStore(tmp_path / "s.db", create=True)
    assert store.get_pending() is None
    key, _ = client.setup()
    _, token = client.gen_key_update(key)
    store.put_pending(token)
    assert store.get_pending() == token
    store.put_pending(None)
    assert store.get_pending() is None


def test_open_missing_state(tmp_path):
    with pytest.raises(StateError):
        open_state(tmp_path / "nope.db")


def test_create_refuses_existing(tmp_path):
    path = tmp_path / "s.db"
    create_state(path)[1].store.close()
    with pytest.raises(StateError):
        create_state(path)
