import pytest

from bamboo import client, group
from bamboo.server import EncryptedDatabase
from bamboo.service import LocalServer
from bamboo.session import BambooClient


@pytest.fixture(scope="session")
def params():
    return group.pgen()


@pytest.fixture
def local_session():
    """Factory: in-process client bound to a fresh database."""

    def make(a_max=64, x=2, policy="max", workers=1):
        key, state = client.setup(128, a_max, x)
        db = EncryptedDatabase(state.params)
        return BambooClient(key, state, LocalServer(db, workers), policy), db

    return make
