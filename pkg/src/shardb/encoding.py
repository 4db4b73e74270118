"""Canonical byte encodings and digests.

Every value that ends up in a digest, a ledger, or on the simulated wire is
encoded through these helpers so that all nodes (and all runs) agree on the
exact bytes.  The format is deliberately dumb: big-endian fixed-width
integers, u32 length prefixes for variable payloads, u32 element counts for
sequences.
"""

from __future__ import annotations

import hashlib
import struct
from typing import Iterable

DIGEST_SIZE = 32


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def enc_u8(v: int) -> bytes:
    return struct.pack(">B", v)


def enc_u32(v: int) -> bytes:
    return struct.pack(">I", v)


def enc_u64(v: int) -> bytes:
    return struct.pack(">Q", v)


def enc_i64(v: int) -> bytes:
    return struct.pack(">q", v)


def enc_bytes(b: bytes) -> bytes:
    return enc_u32(len(b)) + b


def enc_str(s: str) -> bytes:
    return enc_bytes(s.encode("utf-8"))


def enc_seq(items: Iterable[bytes]) -> bytes:
    items = list(items)
    return enc_u32(len(items)) + b"".join(items)


class Reader:
    """Cursor over a canonical encoding; raises ValueError on truncation."""

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ValueError("truncated encoding")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u32(self) -> int:
        return struct.unpack(">I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack(">Q", self.take(8))[0]

    def i64(self) -> int:
        return struct.unpack(">q", self.take(8))[0]

    def bytes_(self) -> bytes:
        return self.take(self.u32())

    def str_(self) -> str:
        return self.bytes_().decode("utf-8")

    def seq(self, parse) -> list:
        return [parse(self) for _ in range(self.u32())]

    def done(self) -> bool:
        return self.pos == len(self.data)
