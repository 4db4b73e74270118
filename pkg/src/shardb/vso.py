"""Verifiable set operations over a bilinear accumulator.

A set X of scalar-field elements is committed as acc(X) = g^(prod (x+s))
where s is the trapdoor sampled at key generation.  Commitments and all
witnesses are computed from the public powers pk = (g^s, ..., g^(s^q))
without access to s.

Intersection and union proofs share one shape.  With I the claimed
intersection (or U the claimed union) and, per input set X_j,

    intersection:  P_j = char(X_j \\ I)     union:  P_j = char(U \\ X_j)

the proof carries W_j = g^(P_j(s)) and F_j = g^(q_j(s)) where the q_j are
Bezout cofactors with sum q_j * P_j = 1.  The subset equations tie each W_j
to acc(X_j) and acc of the claimed result; the Bezout product ties the
family of complements to "no common element left out".  Verification uses
only pairings of public values.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import pairing, polyops
from .encoding import Reader, enc_seq, enc_u8, enc_u32, enc_u64, sha256
from .errors import CapacityExceededError, InvalidCapacityError
from .field import R, hash_to_field

INTERSECTION = "intersection"
UNION = "union"

# Degree above which the two-set Bezout switches to the evaluation/
# interpolation path (quasi-linear) instead of classical extended Euclid.
_FAST_BEZOUT_MIN = 384


@dataclass(frozen=True)
class PairingContext:
    """Carriers of the pairing setting: prime group order, generators, e."""

    order: int
    g: tuple
    gt: tuple

    def e(self, p1, p2):
        return pairing.pairing(p1, p2)


DEFAULT_CONTEXT = PairingContext(order=R, g=pairing.G, gt=pairing.pairing(pairing.G, pairing.G))


@dataclass
class VsoKeys:
    capacity: int
    pk: list  # pk[i] = g^(s^(i+1)), length == capacity
    sk: int | None = None  # trapdoor; retained only by the harness

    def public(self) -> "VsoKeys":
        return VsoKeys(self.capacity, self.pk, None)


@dataclass(frozen=True)
class AccumulationValue:
    point: tuple
    cardinality: int

    def to_bytes(self) -> bytes:
        return pairing.point_to_bytes(self.point) + enc_u32(self.cardinality)

    @classmethod
    def from_reader(cls, r: Reader) -> "AccumulationValue":
        return cls(pairing.point_from_bytes(r), r.u32())


@dataclass
class SetOpProof:
    op: str
    subset_witnesses: list
    completeness_witnesses: list
    result: list  # sorted field elements, no duplicates

    def to_bytes(self) -> bytes:
        return (
            enc_u8(0 if self.op == INTERSECTION else 1)
            + enc_seq(pairing.point_to_bytes(w) for w in self.subset_witnesses)
            + enc_seq(pairing.point_to_bytes(w) for w in self.completeness_witnesses)
            + enc_seq(enc_u64(x) for x in self.result)
        )

    @classmethod
    def from_reader(cls, r: Reader) -> "SetOpProof":
        op = INTERSECTION if r.u8() == 0 else UNION
        subs = r.seq(pairing.point_from_bytes)
        comps = r.seq(pairing.point_from_bytes)
        result = r.seq(lambda rr: rr.u64())
        return cls(op, subs, comps, result)

    def digest(self) -> bytes:
        return sha256(self.to_bytes())


def normalize_set(elements) -> list[int]:
    return sorted({x % R for x in elements})


def gen_key(capacity: int, seed: int) -> VsoKeys:
    """Deterministic trusted setup: derive s from the seed, emit q powers."""
    if capacity < 1:
        raise InvalidCapacityError(f"capacity must be >= 1, got {capacity}")
    s = 0
    counter = 0
    while s == 0:
        s = hash_to_field(b"vso-trapdoor" + enc_u64(seed) + enc_u64(counter))
        counter += 1
    table = pairing.FixedBaseTable(pairing.G)
    pk = []
    power = 1
    for _ in range(capacity):
        power = power * s % R
        pk.append(table.mult(power))
    return VsoKeys(capacity, pk, s)


def _commit_poly(poly, keys: VsoKeys):
    """g^(poly(s)) from the public powers; degree must fit the capacity."""
    if polyops.is_zero(poly):
        return None
    if len(poly) - 1 > keys.capacity:
        raise CapacityExceededError(
            f"polynomial degree {len(poly) - 1} exceeds key capacity {keys.capacity}"
        )
    bases = [pairing.G] + keys.pk[: len(poly) - 1]
    return pairing.multi_scalar_mult(poly, bases)


def setup(elements, keys: VsoKeys) -> AccumulationValue:
    """Accumulation value of a set; order- and duplicate-insensitive."""
    elems = normalize_set(elements)
    if len(elems) > keys.capacity:
        raise CapacityExceededError(
            f"set of {len(elems)} elements exceeds capacity {keys.capacity}"
        )
    return AccumulationValue(_commit_poly(polyops.char_poly(elems), keys), len(elems))


def _complement_polys(diffs: list[list[int]]) -> tuple[list[list[int]], list[list[int]]]:
    """Characteristic polynomials of the complement sets plus their Bezout
    cofactors.  Large two-set instances share one product tree per side
    between the polynomial build and the cofactor computation."""
    if (
        len(diffs) == 2
        and max(len(d) for d in diffs) > _FAST_BEZOUT_MIN
        and all(diffs)
    ):
        systems = [polyops.PointSystem([(-e) % R for e in d]) for d in diffs]
        polys = [s.root.poly for s in systems]
        return polys, polyops.bezout_pair_systems(systems[0], systems[1])
    polys = [polyops.char_poly(d) for d in diffs]
    return polys, polyops.bezout_family(polys)


def _prove(op: str, sets, keys: VsoKeys) -> tuple[list[int], SetOpProof]:
    if len(sets) < 2:
        raise ValueError(f"{op} needs at least two sets")
    norm = [normalize_set(x) for x in sets]
    for x in norm:
        if len(x) > keys.capacity:
            raise CapacityExceededError(
                f"input set of {len(x)} elements exceeds capacity {keys.capacity}"
            )
    if op == INTERSECTION:
        result = sorted(set(norm[0]).intersection(*map(set, norm[1:])))
        diffs = [sorted(set(x) - set(result)) for x in norm]
    else:
        result = sorted(set().union(*map(set, norm)))
        if len(result) > keys.capacity:
            raise CapacityExceededError(
                f"union of {len(result)} elements exceeds capacity {keys.capacity}"
            )
        diffs = [sorted(set(result) - set(x)) for x in norm]
    polys, cofactors = _complement_polys(diffs)
    subset_witnesses = [_commit_poly(p, keys) for p in polys]
    completeness = [_commit_poly(q, keys) for q in cofactors]
    return result, SetOpProof(op, subset_witnesses, completeness, result)


def prove_intersection(sets, keys: VsoKeys) -> tuple[list[int], SetOpProof]:
    return _prove(INTERSECTION, sets, keys)


def prove_union(sets, keys: VsoKeys) -> tuple[list[int], SetOpProof]:
    return _prove(UNION, sets, keys)


def verify_set_op(accs, result, proof: SetOpProof, keys: VsoKeys):
    """Check a set-operation proof against the input accumulation values.

    Returns (True, None) on accept, (False, reason) on reject.  Needs no
    trapdoor: everything is pairing equations over public values.
    """
    k = len(accs)
    if len(proof.subset_witnesses) != k or len(proof.completeness_witnesses) != k:
        return False, "malformed-proof: witness count does not match input sets"
    if proof.op not in (INTERSECTION, UNION):
        return False, "malformed-proof: unknown operation tag"
    res = [x % R for x in result]
    if sorted(set(res)) != sorted(res):
        return False, "malformed-proof: result has duplicate elements"
    if sorted(res) != list(proof.result):
        return False, "malformed-proof: result does not match proof binding"
    try:
        acc_res = setup(res, keys)
    except CapacityExceededError:
        return False, "capacity-exceeded: result too large to verify"
    g = pairing.G
    if proof.op == INTERSECTION:
        # subset: result must divide every input accumulation
        for acc, w in zip(accs, proof.subset_witnesses):
            if pairing.pairing(acc_res.point, w) != pairing.pairing(acc.point, g):
                return False, "subset-check-failed"
    else:
        # subset: every input accumulation must divide the union result
        for acc, w in zip(accs, proof.subset_witnesses):
            if pairing.pairing(acc.point, w) != pairing.pairing(acc_res.point, g):
                return False, "subset-check-failed"
    prod = pairing.GT_ONE
    for w, f in zip(proof.subset_witnesses, proof.completeness_witnesses):
        prod = pairing.gt_mul(prod, pairing.pairing(w, f))
    if prod != DEFAULT_CONTEXT.gt:
        return False, "completeness-check-failed"
    return True, None
