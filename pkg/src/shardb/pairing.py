"""Symmetric bilinear pairing on a simulation-scale supersingular curve.

Curve: E: y^2 = x^3 + x over F_P with P = 336*R - 1 prime, P = 3 mod 4, so E
is supersingular with #E(F_P) = P + 1 = 336*R.  G is a fixed generator of
the subgroup of prime order R.  The pairing is the Tate pairing composed
with the distortion map (x, y) -> (-x, i*y) into E(F_{P^2}), which makes it
symmetric on G x G: e(aG, bG) = e(G, G)^(ab).

The curve is deliberately small (71-bit base field) so millions of group
operations fit in a test-suite run; it provides the algebraic structure the
protocols need, not production cryptographic strength.  sizes aside, all
verification equations are the real ones.

Group elements are affine tuples (x, y) with None for the identity; the
target group lives in F_{P^2} as tuples (a, b) = a + b*i.  Costs are metered
in field multiplications on the shared meter.
"""

from __future__ import annotations

from .encoding import Reader, enc_u8
from .field import METER, R

P = 1549526522395128496463
COFACTOR = 336
G = (272334850606276882961, 350315804575460587510)

GT_ONE = (1, 0)

_RBITS = bin(R)[3:]  # MSB-first bits of R, most significant dropped

# Analytic cost constants (field multiplications per operation).
_COST_DBL = 10
_COST_ADD = 16
_COST_MIXED = 12
_COST_INV = 70
_COST_PAIRING = len(_RBITS) * (_COST_INV + 12) + 4 * _COST_INV

Point = "tuple[int, int] | None"


def _pinv(a: int) -> int:
    return pow(a, P - 2, P)


def is_on_curve(pt) -> bool:
    if pt is None:
        return True
    x, y = pt
    if not (0 <= x < P and 0 <= y < P):
        return False
    return (y * y - (x * x * x + x)) % P == 0


def pt_neg(pt):
    if pt is None:
        return None
    x, y = pt
    return (x, (P - y) % P)


def pt_add(p1, p2):
    """Affine addition; fine for occasional use, scalar paths use Jacobian."""
    if p1 is None:
        return p2
    if p2 is None:
        return p1
    x1, y1 = p1
    x2, y2 = p2
    METER.add(_COST_INV + 4)
    if x1 == x2:
        if (y1 + y2) % P == 0:
            return None
        lam = (3 * x1 * x1 + 1) * _pinv(2 * y1) % P
    else:
        lam = (y2 - y1) * _pinv(x2 - x1) % P
    x3 = (lam * lam - x1 - x2) % P
    return (x3, (lam * (x1 - x3) - y1) % P)


# Jacobian coordinates (X, Y, Z), affine x = X/Z^2, y = Y/Z^3; Z = 0 at infinity.

def _jac_from_affine(pt):
    if pt is None:
        return (1, 1, 0)
    return (pt[0], pt[1], 1)


def _jac_to_affine(pt):
    x, y, z = pt
    if z == 0:
        return None
    METER.add(_COST_INV + 4)
    zi = _pinv(z)
    zi2 = zi * zi % P
    return (x * zi2 % P, y * zi2 * zi % P)


def _jac_dbl(pt):
    x, y, z = pt
    if z == 0 or y == 0:
        return (1, 1, 0)
    METER.add(_COST_DBL)
    ysq = y * y % P
    s = 4 * x * ysq % P
    z2 = z * z % P
    m = (3 * x * x + z2 * z2) % P  # curve a = 1
    nx = (m * m - 2 * s) % P
    ny = (m * (s - nx) - 8 * ysq * ysq) % P
    nz = 2 * y * z % P
    return (nx, ny, nz)


def _jac_add(p1, p2):
    x1, y1, z1 = p1
    x2, y2, z2 = p2
    if z1 == 0:
        return p2
    if z2 == 0:
        return p1
    METER.add(_COST_ADD)
    z1s = z1 * z1 % P
    z2s = z2 * z2 % P
    u1 = x1 * z2s % P
    u2 = x2 * z1s % P
    s1 = y1 * z2s * z2 % P
    s2 = y2 * z1s * z1 % P
    if u1 == u2:
        if s1 != s2:
            return (1, 1, 0)
        return _jac_dbl(p1)
    h = (u2 - u1) % P
    rr = (s2 - s1) % P
    h2 = h * h % P
    h3 = h2 * h % P
    u1h2 = u1 * h2 % P
    nx = (rr * rr - h3 - 2 * u1h2) % P
    ny = (rr * (u1h2 - nx) - s1 * h3) % P
    nz = h * z1 * z2 % P
    return (nx, ny, nz)


def _jac_add_affine(p1, p2):
    """Mixed addition, p2 affine (x, y)."""
    x1, y1, z1 = p1
    if z1 == 0:
        return (p2[0], p2[1], 1)
    METER.add(_COST_MIXED)
    z1s = z1 * z1 % P
    u2 = p2[0] * z1s % P
    s2 = p2[1] * z1s * z1 % P
    if x1 == u2:
        if y1 != s2:
            return (1, 1, 0)
        return _jac_dbl(p1)
    h = (u2 - x1) % P
    rr = (s2 - y1) % P
    h2 = h * h % P
    h3 = h2 * h % P
    u1h2 = x1 * h2 % P
    nx = (rr * rr - h3 - 2 * u1h2) % P
    ny = (rr * (u1h2 - nx) - y1 * h3) % P
    nz = h * z1 % P
    return (nx, ny, nz)


def scalar_mult(k: int, pt):
    """k*pt via Jacobian double-and-add."""
    k %= R
    if k == 0 or pt is None:
        return None
    acc = (1, 1, 0)
    for bit in bin(k)[2:]:
        acc = _jac_dbl(acc)
        if bit == "1":
            acc = _jac_add_affine(acc, pt)
    return _jac_to_affine(acc)


def _batch_to_affine(jacs):
    """Normalize many Jacobian points with one shared inversion."""
    zs = [pt[2] for pt in jacs]
    prefix = [1] * (len(zs) + 1)
    for i, z in enumerate(zs):
        prefix[i + 1] = prefix[i] * (z if z else 1) % P
    METER.add(3 * len(zs) + _COST_INV)
    inv_all = _pinv(prefix[-1])
    out = []
    for i in range(len(zs) - 1, -1, -1):
        x, y, z = jacs[i]
        if z == 0:
            out.append(None)
            continue
        zi = inv_all * prefix[i] % P
        inv_all = inv_all * z % P
        zi2 = zi * zi % P
        out.append((x * zi2 % P, y * zi2 * zi % P))
    out.reverse()
    return out


def multi_scalar_mult(scalars: list[int], points: list) -> "Point":
    """sum scalars[i]*points[i] via Pippenger bucket windows."""
    pairs = [(s % R, pt) for s, pt in zip(scalars, points) if s % R and pt is not None]
    if not pairs:
        return None
    if len(pairs) == 1:
        return scalar_mult(pairs[0][0], pairs[0][1])
    n = len(pairs)
    c = 4 if n < 64 else 5 if n < 256 else 6
    nbuckets = (1 << c) - 1
    nwindows = (R.bit_length() + c - 1) // c
    acc = (1, 1, 0)
    for w in range(nwindows - 1, -1, -1):
        if acc[2] != 0:
            for _ in range(c):
                acc = _jac_dbl(acc)
        shift = w * c
        buckets = [None] * (nbuckets + 1)
        for s, pt in pairs:
            d = (s >> shift) & nbuckets
            if d:
                b = buckets[d]
                buckets[d] = (pt[0], pt[1], 1) if b is None else _jac_add_affine(b, pt)
        running = (1, 1, 0)
        wsum = (1, 1, 0)
        for d in range(nbuckets, 0, -1):
            if buckets[d] is not None:
                running = _jac_add(running, buckets[d])
            wsum = _jac_add(wsum, running)
        acc = _jac_add(acc, wsum)
    return _jac_to_affine(acc)


class FixedBaseTable:
    """Window-4 precomputation for many scalar multiplications of one base."""

    def __init__(self, base):
        self.base = base
        self.windows = (R.bit_length() + 3) // 4
        rows = []
        row_base = _jac_from_affine(base)
        for _ in range(self.windows):
            row = [(1, 1, 0)]
            for d in range(1, 16):
                row.append(_jac_add(row[d - 1], row_base))
            rows.append(row)
            row_base = row[1]
            for _ in range(4):
                row_base = _jac_dbl(row_base)
        flat = _batch_to_affine([pt for row in rows for pt in row])
        self.rows = [flat[i * 16 : (i + 1) * 16] for i in range(self.windows)]

    def mult(self, k: int):
        k %= R
        if k == 0:
            return None
        acc = (1, 1, 0)
        w = 0
        while k:
            d = k & 15
            if d:
                acc = _jac_add_affine(acc, self.rows[w][d])
            k >>= 4
            w += 1
        return _jac_to_affine(acc)


# --- target group F_{P^2} = F_P[i]/(i^2 + 1) ---

def gt_mul(u, v):
    METER.add(4)
    a, b = u
    c, d = v
    return ((a * c - b * d) % P, (a * d + b * c) % P)


def _gt_sqr(u):
    METER.add(3)
    a, b = u
    return ((a - b) * (a + b) % P, 2 * a * b % P)


def gt_inv(u):
    METER.add(_COST_INV + 4)
    a, b = u
    n = _pinv(a * a + b * b)
    return (a * n % P, (P - b) * n % P if b else 0)


def gt_pow(u, e: int):
    e %= R
    out = GT_ONE
    while e:
        if e & 1:
            out = gt_mul(out, u)
        u = _gt_sqr(u)
        e >>= 1
    return out


def pairing(p1, p2):
    """Modified Tate pairing e: G x G -> GT; e(O, .) = e(., O) = 1."""
    if p1 is None or p2 is None:
        return GT_ONE
    METER.add(_COST_PAIRING)
    xq, yq = p2
    xphi = P - xq  # x-coordinate of the distorted point, still in F_P
    f = GT_ONE
    t = p1
    x1, y1 = p1
    for bit in _RBITS:
        xt, yt = t
        lam = (3 * xt * xt + 1) * _pinv(2 * yt) % P
        # line through T (tangent) evaluated at (x_phi, i*yq)
        a, b = f
        fa, fb = (a - b) * (a + b) % P, 2 * a * b % P
        re = (-yt - lam * (xphi - xt)) % P
        f = ((fa * re - fb * yq) % P, (fa * yq + fb * re) % P)
        x3 = (lam * lam - 2 * xt) % P
        t = (x3, (lam * (xt - x3) - yt) % P)
        if bit == "1":
            xt, yt = t
            if xt == x1:
                if (yt + y1) % P == 0:
                    # vertical line: value in F_P, erased by the final power
                    t = None
                    continue
                lam = (3 * xt * xt + 1) * _pinv(2 * yt) % P
            else:
                lam = (y1 - yt) * _pinv(x1 - xt) % P
            re = (-yt - lam * (xphi - xt)) % P
            a, b = f
            f = ((a * re - b * yq) % P, (a * yq + b * re) % P)
            x3 = (lam * lam - xt - x1) % P
            t = (x3, (lam * (xt - x3) - yt) % P)
    # final exponentiation: (P^2 - 1)/R = (P - 1) * COFACTOR
    conj = (f[0], (P - f[1]) % P if f[1] else 0)
    f = gt_mul(conj, gt_inv(f))
    out = GT_ONE
    e = COFACTOR
    while e:
        if e & 1:
            out = gt_mul(out, f)
        f = _gt_sqr(f)
        e >>= 1
    return out


# --- serialization (compressed: parity flag + 9-byte x) ---

_XLEN = 9


def point_to_bytes(pt) -> bytes:
    if pt is None:
        return enc_u8(0) + bytes(_XLEN)
    x, y = pt
    return enc_u8(2 | (y & 1)) + x.to_bytes(_XLEN, "big")


def point_from_bytes(reader: Reader):
    flag = reader.u8()
    xb = reader.take(_XLEN)
    if flag == 0:
        return None
    if flag not in (2, 3):
        raise ValueError("bad point flag")
    x = int.from_bytes(xb, "big")
    if x >= P:
        raise ValueError("point x out of range")
    rhs = (x * x * x + x) % P
    y = pow(rhs, (P + 1) // 4, P)
    if y * y % P != rhs:
        raise ValueError("x not on curve")
    if (y & 1) != (flag & 1):
        y = P - y
    return (x, y)


def gt_to_bytes(u) -> bytes:
    return u[0].to_bytes(_XLEN, "big") + u[1].to_bytes(_XLEN, "big")
