"""Encrypted keyword index with dynamic updates, chained search and
non-interactive whole-database key rotation."""

from .client import (
    ClientState,
    KeywordState,
    Op,
    Policy,
    SecretKey,
    decrypt_results,
    gen_data_update,
    gen_key_update,
    gen_trapdoor,
    padding_value,
    setup,
)
from .errors import BambooError, EpochMismatch, ProtocolError, StateError, TransportError, UnknownKeyword
from .group import GroupElement, GroupParams, pgen
from .server import EncryptedDatabase, SearchResponse
from .session import BambooClient
from .tokens import Ciphertext, KeyUpdateToken, SearchTrapdoor

__version__ = "0.1.0"
