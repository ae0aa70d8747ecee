"""High-level client session: the four protocols against a server proxy."""

from __future__ import annotations

import time

from . import client
from .client import ClientState, Op, Policy, SecretKey
from .errors import StateError


class BambooClient:
    """Binds a key and state to a server proxy (LocalServer or RemoteServer).

    When the state has a store, the key record is rewritten on every
    rotation, and a key-update token is recorded as pending before it is
    sent so an interrupted rotation can be finished by :meth:`recover`.
    """

    def __init__(self, key: SecretKey, state: ClientState, server, policy: Policy = Policy.MAX):
        self.key = key
        self.state = state
        self.server = server
        self.policy = Policy(policy)

    @property
    def store(self):
        return self.state.store

    def update(self, op: Op, w: str, file_id: int) -> None:
        ct = client.gen_data_update(self.key, self.state, op, w, file_id)
        self.server.data_update(ct, self.key.epoch)

    def add(self, w: str, file_id: int) -> None:
        self.update(Op.ADD, w, file_id)

    def delete(self, w: str, file_id: int) -> None:
        self.update(Op.DEL, w, file_id)

    def ingest(self, pairs, op: Op = Op.ADD) -> int:
        """Bulk updates; state for the whole batch commits before anything is sent."""
        cts = []
        if self.store is not None:
            with self.store.transaction():
                for w, file_id in pairs:
                    cts.append(client.gen_data_update(self.key, self.state, op, w, file_id))
        else:
            cts = [client.gen_data_update(self.key, self.state, op, w, fid) for w, fid in pairs]
        for ct in cts:
            self.server.data_update(ct, self.key.epoch)
        return len(cts)

    def trapdoor(self, w: str):
        return client.gen_trapdoor(self.key, self.state, w, self.policy)

    def search(self, w: str) -> set[int]:
        td = self.trapdoor(w)
        components = self.server.search(td)
        return client.decrypt_results(self.key, self.state, w, components)

    def rotate(self) -> tuple[int, int]:
        old = self.key.epoch
        new_key, token = client.gen_key_update(self.key)
        if self.store is not None:
            self.store.put_pending(token)
        self.server.key_update(token)
        self._commit_key(new_key)
        return old, new_key.epoch

    def _commit_key(self, new_key: SecretKey) -> None:
        self.key = new_key
        if self.store is not None:
            with self.store.transaction():
                self.store.put_meta(new_key, self.state.a_max, self.state.x)
                self.store.put_pending(None)
                self.store.put_rotated_at(time.time())

    def recover(self) -> bool:
        """Finish or discard a pending rotation; True if the key changed."""
        if self.store is None:
            return False
        token = self.store.get_pending()
        if token is None:
            return False
        server_epoch = self.server.epoch()
        if server_epoch == token.new_epoch:
            self._commit_key(client.apply_key_update(self.key, token))
            return True
        if server_epoch == self.key.epoch:
            self.store.put_pending(None)
            return False
        raise StateError(f"server epoch {server_epoch} matches neither the key nor the pending rotation")
