"""Values exchanged between client and server, with their wire encodings."""

from __future__ import annotations

import struct
from dataclasses import dataclass

from . import group
from .errors import ProtocolError
from .group import ELEMENT_SIZE, SCALAR_SIZE, GroupElement

CIPHERTEXT_SIZE = 3 * ELEMENT_SIZE
TRAPDOOR_SIZE = SCALAR_SIZE + 3 * ELEMENT_SIZE + 4


@dataclass(frozen=True)
class Ciphertext:
    label: GroupElement
    d: GroupElement
    c: GroupElement

    def to_bytes(self) -> bytes:
        return self.label.to_bytes() + self.d.to_bytes() + self.c.to_bytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> Ciphertext:
        if len(data) != CIPHERTEXT_SIZE:
            raise ProtocolError(f"ciphertext must be {CIPHERTEXT_SIZE} bytes, got {len(data)}")
        try:
            parts = [GroupElement.from_bytes(data[i:i + ELEMENT_SIZE]) for i in (0, 33, 66)]
        except group.GroupError as exc:
            raise ProtocolError(str(exc)) from exc
        return cls(*parts)


@dataclass(frozen=True)
class SearchTrapdoor:
    k1: int
    label: GroupElement
    msk_d: GroupElement
    msk_c: GroupElement
    pad_target: int
    epoch: int

    def to_bytes(self) -> bytes:
        """Body encoding; the epoch travels in the frame header."""
        return (
            group.scalar_to_bytes(self.k1)
            + self.label.to_bytes()
            + self.msk_d.to_bytes()
            + self.msk_c.to_bytes()
            + struct.pack(">I", self.pad_target)
        )

    @classmethod
    def from_bytes(cls, data: bytes, epoch: int) -> SearchTrapdoor:
        if len(data) != TRAPDOOR_SIZE:
            raise ProtocolError(f"trapdoor must be {TRAPDOOR_SIZE} bytes, got {len(data)}")
        try:
            k1 = group.scalar_from_bytes(data[:32])
            elems = [GroupElement.from_bytes(data[i:i + ELEMENT_SIZE]) for i in (32, 65, 98)]
        except group.GroupError as exc:
            raise ProtocolError(str(exc)) from exc
        (pad_target,) = struct.unpack(">I", data[131:])
        if pad_target < 1:
            raise ProtocolError("pad target must be positive")
        return cls(k1, *elems, pad_target=pad_target, epoch=epoch)


@dataclass(frozen=True)
class KeyUpdateToken:
    delta: int
    new_epoch: int

    def to_bytes(self) -> bytes:
        return group.scalar_to_bytes(self.delta)

    @classmethod
    def from_bytes(cls, data: bytes, new_epoch: int) -> KeyUpdateToken:
        try:
            return cls(group.scalar_from_bytes(data), new_epoch)
        except group.GroupError as exc:
            raise ProtocolError(str(exc)) from exc
