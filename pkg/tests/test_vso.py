import random

import pytest

from shardb import pairing, vso
from shardb.encoding import Reader
from shardb.errors import CapacityExceededError, InvalidCapacityError
from shardb.field import R

from oracle import oracle_intersection, oracle_union

KEYS = vso.gen_key(160, seed=42)


def test_genkey_shapes_and_determinism():
    k1 = vso.gen_key(1, seed=5)
    assert len(k1.pk) == 1
    assert k1.pk[0] == pairing.scalar_mult(k1.sk, pairing.G)
    k8a, k8b = vso.gen_key(8, seed=9), vso.gen_key(8, seed=9)
    assert k8a.pk == k8b.pk and k8a.sk == k8b.sk
    assert vso.gen_key(8, seed=10).pk != k8a.pk
    # pairing-consistency: e(pk[0], pk[0]) == e(g, pk[1])  (g^s, g^s^2)
    lhs = pairing.pairing(k8a.pk[0], k8a.pk[0])
    rhs = pairing.pairing(pairing.G, k8a.pk[1])
    assert lhs == rhs
    with pytest.raises(InvalidCapacityError):
        vso.gen_key(0, seed=1)


def test_setup_conventions():
    assert vso.setup([], KEYS).point == pairing.G  # empty product
    single = vso.setup([7], KEYS)
    want = pairing.pt_add(pairing.scalar_mult(7, pairing.G), KEYS.pk[0])
    assert single.point == want  # g^(7+s) = g^7 * g^s
    assert single.cardinality == 1
    assert vso.setup([2, 3], KEYS) == vso.setup([3, 2], KEYS)
    assert vso.setup([2, 3, 2], KEYS) == vso.setup([2, 3], KEYS)
    with pytest.raises(CapacityExceededError):
        vso.setup(list(range(200)), KEYS)


def test_setup_homomorphism_with_trapdoor():
    # setup(X + {y}) == setup(X)^(y + s), checkable only with the trapdoor
    xs = [11, 22, 33]
    y = 44
    base = vso.setup(xs, KEYS)
    lifted = pairing.scalar_mult((y + KEYS.sk) % R, base.point)
    assert lifted == vso.setup(xs + [y], KEYS).point


def _verify(sets, result, proof):
    accs = [vso.setup(s, KEYS) for s in sets]
    return vso.verify_set_op(accs, result, proof, KEYS)


def test_intersection_examples():
    res, proof = vso.prove_intersection([[1, 2, 3], [2, 3, 4]], KEYS)
    assert res == [2, 3]
    ok, why = _verify([[1, 2, 3], [2, 3, 4]], res, proof)
    assert ok, why

    res, proof = vso.prove_intersection([[5, 6], [5, 6]], KEYS)
    assert res == [5, 6]
    assert _verify([[5, 6], [5, 6]], res, proof)[0]

    res, proof = vso.prove_intersection([[1, 2], [3, 4]], KEYS)
    assert res == []
    assert _verify([[1, 2], [3, 4]], res, proof)[0]


def test_union_examples():
    res, proof = vso.prove_union([[1, 2], [2, 3]], KEYS)
    assert res == [1, 2, 3]
    assert _verify([[1, 2], [2, 3]], res, proof)[0]

    res, proof = vso.prove_union([[], [9]], KEYS)
    assert res == [9]
    assert _verify([[], [9]], res, proof)[0]

    res, proof = vso.prove_union([[1], [1]], KEYS)
    assert res == [1]
    assert _verify([[1], [1]], res, proof)[0]


def test_roundtrip_property(rng):
    """Randomized families: prove/verify accepts and matches the oracle."""
    for trial in range(60):
        k = rng.randint(2, 6)
        sets = []
        for _ in range(k):
            size = rng.randint(0, 24)
            base = rng.sample(range(1, 10**9), size)
            sets.append(base)
        if trial % 2 and sets[0]:
            shared = rng.sample(sets[0], rng.randint(1, len(sets[0])))
            sets = [s + shared for s in sets]
        accs = [vso.setup(s, KEYS) for s in sets]
        res, proof = vso.prove_intersection(sets, KEYS)
        assert set(res) == oracle_intersection(sets), trial
        ok, why = vso.verify_set_op(accs, res, proof, KEYS)
        assert ok, (trial, why)
        try:
            resu, proofu = vso.prove_union(sets, KEYS)
        except CapacityExceededError:
            continue
        assert set(resu) == oracle_union(sets)
        ok, why = vso.verify_set_op(accs, resu, proofu, KEYS)
        assert ok, (trial, why)


def _tampered_variants(rng, sets, result, proof):
    """One mutation per tamper class; yields (label, accs, result, proof)."""
    accs = [vso.setup(s, KEYS) for s in sets]
    g = pairing.G
    bogus_point = pairing.scalar_mult(rng.randrange(2, R), g)

    extra = max(result, default=0) + rng.randrange(1, 1000)
    yield "add-element", accs, sorted(result + [extra]), vso.SetOpProof(
        proof.op, proof.subset_witnesses, proof.completeness_witnesses,
        sorted(result + [extra]))
    if result:
        smaller = result[:-1]
        yield "drop-element", accs, smaller, vso.SetOpProof(
            proof.op, proof.subset_witnesses, proof.completeness_witnesses, smaller)
        replaced = sorted(smaller + [extra])
        yield "swap-element", accs, replaced, vso.SetOpProof(
            proof.op, proof.subset_witnesses, proof.completeness_witnesses, replaced)
    bad_sub = list(proof.subset_witnesses)
    bad_sub[rng.randrange(len(bad_sub))] = bogus_point
    yield "forge-subset-witness", accs, result, vso.SetOpProof(
        proof.op, bad_sub, proof.completeness_witnesses, result)
    bad_comp = list(proof.completeness_witnesses)
    bad_comp[rng.randrange(len(bad_comp))] = bogus_point
    yield "forge-completeness-witness", accs, result, vso.SetOpProof(
        proof.op, proof.subset_witnesses, bad_comp, result)
    stale = list(accs)
    victim = rng.randrange(len(stale))
    stale[victim] = vso.setup(sets[victim] + [extra + 1], KEYS)
    yield "stale-accumulation", stale, result, proof
    short = vso.SetOpProof(proof.op, proof.subset_witnesses[:-1],
                           proof.completeness_witnesses, result)
    yield "malformed-count", accs, result, short


def test_tamper_suite_rejects_everything(rng):
    rejections = {}
    for trial in range(25):
        k = rng.randint(2, 4)
        sets = [sorted(rng.sample(range(1, 10**6), rng.randint(2, 16)))
                for _ in range(k)]
        shared = rng.sample(sets[0], min(3, len(sets[0])))
        sets = [s + shared for s in sets]
        op = vso.prove_intersection if trial % 2 else vso.prove_union
        result, proof = op(sets, KEYS)
        for label, accs, res, prf in _tampered_variants(rng, sets, result, proof):
            ok, why = vso.verify_set_op(accs, res, prf, KEYS)
            assert not ok, (label, trial)
            rejections[label] = why
    assert len(rejections) >= 6  # every class exercised


def test_malformed_proof_reason():
    res, proof = vso.prove_intersection([[1, 2], [2, 3]], KEYS)
    accs = [vso.setup([1, 2], KEYS), vso.setup([2, 3], KEYS)]
    short = vso.SetOpProof(proof.op, proof.subset_witnesses[:1],
                           proof.completeness_witnesses, res)
    ok, why = vso.verify_set_op(accs, res, short, KEYS)
    assert not ok and "malformed-proof" in why
    dup = vso.SetOpProof(proof.op, proof.subset_witnesses,
                         proof.completeness_witnesses, res + res)
    ok, why = vso.verify_set_op(accs, res + res, dup, KEYS)
    assert not ok and "malformed-proof" in why


def test_proof_serialization_golden(rng):
    res, proof = vso.prove_intersection([[1, 2, 3], [2, 3, 4]], KEYS)
    data = proof.to_bytes()
    back = vso.SetOpProof.from_reader(Reader(data))
    assert back.to_bytes() == data
    assert back.result == proof.result
    # stable across runs: fixed keys and inputs give fixed bytes
    assert proof.digest().hex() == vso.prove_intersection(
        [[1, 2, 3], [2, 3, 4]], KEYS)[1].digest().hex()
    acc = vso.setup([5, 9], KEYS)
    assert vso.AccumulationValue.from_reader(Reader(acc.to_bytes())) == acc
