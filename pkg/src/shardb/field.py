"""Scalar field of the pairing group, plus deterministic cost metering.

The field is Z_R where R is the (prime) order of the curve subgroup used by
the accumulator.  R was chosen with R - 1 divisible by 2^32 so that
polynomial products can run through a radix-2 number-theoretic transform.

Cost metering counts field multiplications analytically (each algorithm adds
the multiplication count it performs).  The meter is what the proof-cost
benchmarks report: it is exactly reproducible, unlike wall-clock time.
"""

from __future__ import annotations

import hashlib

# Subgroup order of the simulation curve (prime, R = c * 2^32 + 1).
R = 4611686078556930049

# Primitive 2^32-th root of unity in Z_R.
NTT_ROOT = 4515752690771411204
NTT_ORDER_LOG2 = 32

# Cost of one field inversion / exponentiation, in multiplications.
INV_COST = 63


class CostMeter:
    """Accumulates an analytic count of field multiplications."""

    __slots__ = ("mults",)

    def __init__(self):
        self.mults = 0

    def add(self, n: int) -> None:
        self.mults += n

    def reset(self) -> None:
        self.mults = 0


METER = CostMeter()


def finv(a: int) -> int:
    """Inverse in Z_R (Fermat); raises ZeroDivisionError on 0."""
    if a % R == 0:
        raise ZeroDivisionError("inverse of zero in scalar field")
    METER.add(INV_COST)
    return pow(a, R - 2, R)


def hash_to_field(data: bytes) -> int:
    """Map arbitrary bytes to Z_R via SHA-256 (bias ~2^-193, irrelevant here)."""
    return int.from_bytes(hashlib.sha256(data).digest(), "big") % R
