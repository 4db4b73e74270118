import random

import pytest

from shardb import pairing
from shardb.encoding import Reader
from shardb.field import R


def test_curve_parameters():
    # subgroup order prime-ish checks: tiny Miller-Rabin over fixed bases
    def probably_prime(n):
        if n % 2 == 0:
            return False
        d, s = n - 1, 0
        while d % 2 == 0:
            d //= 2
            s += 1
        for a in (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37):
            x = pow(a, d, n)
            if x in (1, n - 1):
                continue
            for _ in range(s - 1):
                x = x * x % n
                if x == n - 1:
                    break
            else:
                return False
        return True

    assert probably_prime(R)
    assert probably_prime(pairing.P)
    assert pairing.P % 4 == 3
    assert pairing.COFACTOR * R == pairing.P + 1
    assert pairing.is_on_curve(pairing.G)
    assert pairing.scalar_mult(R, pairing.G) is None  # order R


def test_group_laws(rng):
    g = pairing.G
    a, b = rng.randrange(1, R), rng.randrange(1, R)
    pa, pb = pairing.scalar_mult(a, g), pairing.scalar_mult(b, g)
    assert pairing.pt_add(pa, pb) == pairing.scalar_mult((a + b) % R, g)
    assert pairing.pt_add(pa, pairing.pt_neg(pa)) is None
    assert pairing.pt_add(pa, None) == pa
    assert pairing.scalar_mult(0, g) is None


def test_multi_scalar_matches_naive(rng):
    g = pairing.G
    for n in (1, 2, 7, 40, 150):
        pts = [pairing.scalar_mult(rng.randrange(1, R), g) for _ in range(n)]
        ks = [rng.randrange(R) for _ in range(n)]
        naive = None
        for k, pt in zip(ks, pts):
            naive = pairing.pt_add(naive, pairing.scalar_mult(k, pt))
        assert pairing.multi_scalar_mult(ks, pts) == naive


def test_fixed_base_table(rng):
    tbl = pairing.FixedBaseTable(pairing.G)
    for k in [0, 1, 2, 15, 16, 255, rng.randrange(R), R - 1]:
        assert tbl.mult(k) == pairing.scalar_mult(k, pairing.G)


def test_pairing_bilinear_symmetric_nondegenerate(rng):
    g = pairing.G
    e_gg = pairing.pairing(g, g)
    assert e_gg != pairing.GT_ONE
    assert pairing.gt_pow(e_gg, R) == pairing.GT_ONE
    a, b = rng.randrange(1, R), rng.randrange(1, R)
    pa, pb = pairing.scalar_mult(a, g), pairing.scalar_mult(b, g)
    assert pairing.pairing(pa, pb) == pairing.gt_pow(e_gg, a * b % R)
    assert pairing.pairing(pa, pb) == pairing.pairing(pb, pa)
    assert pairing.pairing(None, pa) == pairing.GT_ONE
    # additivity in the first argument
    pc = pairing.pt_add(pa, pb)
    lhs = pairing.pairing(pc, g)
    rhs = pairing.gt_mul(pairing.pairing(pa, g), pairing.pairing(pb, g))
    assert lhs == rhs


def test_point_serialization_roundtrip(rng):
    for _ in range(20):
        pt = pairing.scalar_mult(rng.randrange(1, R), pairing.G)
        data = pairing.point_to_bytes(pt)
        assert len(data) == 10
        assert pairing.point_from_bytes(Reader(data)) == pt
    data = pairing.point_to_bytes(None)
    assert pairing.point_from_bytes(Reader(data)) is None


def test_point_deserialization_rejects_off_curve():
    bad = bytes([2]) + (7).to_bytes(9, "big")  # x=7: 7^3+7 is a non-residue?
    # whichever x we pick, flag/urve checks must not crash; accept either
    try:
        pt = pairing.point_from_bytes(Reader(bad))
        assert pairing.is_on_curve(pt)
    except ValueError:
        pass
    with pytest.raises(ValueError):
        pairing.point_from_bytes(Reader(bytes([9]) + bytes(9)))
