"""Bloom filter used to thin table transfers before cross-shard joins.

Sized at 10 bits and 7 probes per element (~1% false positives).  Probes
use double hashing over sha256 of the element's canonical encoding, with a
fixed seed so every node derives identical filters.  No false negatives:
anything inserted always probes positive.
"""

from __future__ import annotations

import hashlib

from .encoding import enc_u32, enc_u64

BITS_PER_ELEMENT = 10
NUM_PROBES = 7
_SEED = b"shardb-bloom-v1"


class BloomFilter:
    def __init__(self, expected_elements: int):
        self.size = max(8, BITS_PER_ELEMENT * max(1, expected_elements))
        self.bits = 0
        self.inserted = 0

    def _probes(self, element: int):
        digest = hashlib.sha256(_SEED + enc_u64(element)).digest()
        h1 = int.from_bytes(digest[:8], "big")
        h2 = int.from_bytes(digest[8:16], "big") | 1
        for i in range(NUM_PROBES):
            yield (h1 + i * h2) % self.size

    def add(self, element: int) -> None:
        for p in self._probes(element):
            self.bits |= 1 << p
        self.inserted += 1

    def __contains__(self, element: int) -> bool:
        return all(self.bits >> p & 1 for p in self._probes(element))

    def byte_size(self) -> int:
        return 8 + (self.size + 7) // 8  # header + bit array on the wire

    def to_bytes(self) -> bytes:
        nbytes = (self.size + 7) // 8
        return enc_u32(self.size) + enc_u32(self.inserted) + self.bits.to_bytes(nbytes, "big")

    @classmethod
    def from_elements(cls, elements) -> "BloomFilter":
        elements = list(elements)
        bf = cls(len(elements))
        for e in elements:
            bf.add(e)
        return bf
