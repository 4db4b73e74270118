"""Polynomial arithmetic over the scalar field.

Polynomials are lists of ints in [0, R), ascending degree, normalized (no
trailing zeros); the zero polynomial is the empty list.  Everything here is
sized for characteristic polynomials of sets: products of (X + e) factors.

Large products/divisions go through an NTT so the whole stack (product
trees, multipoint evaluation, interpolation) is O(n log^2 n) — the shape the
proof-cost benchmark asserts.  Small inputs use schoolbook paths, which are
faster in Python below the crossover.
"""

from __future__ import annotations

from .errors import InternalInvariantError
from .field import METER, NTT_ORDER_LOG2, NTT_ROOT, R, finv

# Crossovers tuned for CPython; correctness does not depend on them.
_NTT_MIN = 64
_NEWTON_MIN = 256
_TREE_MIN = 512

Poly = list  # list[int]


def norm(p: Poly) -> Poly:
    while p and p[-1] == 0:
        p.pop()
    return p


def deg(p: Poly) -> int:
    return len(p) - 1


def is_zero(p: Poly) -> bool:
    return not p


def poly_add(a: Poly, b: Poly) -> Poly:
    if len(a) < len(b):
        a, b = b, a
    out = list(a)
    for i, c in enumerate(b):
        out[i] = (out[i] + c) % R
    return norm(out)


def poly_sub(a: Poly, b: Poly) -> Poly:
    out = list(a) + [0] * (len(b) - len(a))
    for i, c in enumerate(b):
        out[i] = (out[i] - c) % R
    return norm(out)


def poly_scale(a: Poly, k: int) -> Poly:
    k %= R
    if k == 0:
        return []
    METER.add(len(a))
    return norm([c * k % R for c in a])


def eval_at(p: Poly, x: int) -> int:
    """Horner evaluation."""
    METER.add(len(p))
    acc = 0
    for c in reversed(p):
        acc = (acc * x + c) % R
    return acc


_ROOT_CACHE: dict = {}


def _root_table(length: int, invert: bool) -> list[int]:
    key = (length, invert)
    tab = _ROOT_CACHE.get(key)
    if tab is None:
        w = pow(NTT_ROOT, (1 << NTT_ORDER_LOG2) // length, R)
        if invert:
            w = pow(w, R - 2, R)
        half = length >> 1
        tab = [1] * half
        for i in range(1, half):
            tab[i] = tab[i - 1] * w % R
        _ROOT_CACHE[key] = tab
    return tab


def _ntt(vec: list[int], invert: bool) -> None:
    """In-place iterative Cooley-Tukey; len(vec) must be a power of two."""
    n = len(vec)
    j = 0
    for i in range(1, n):
        bit = n >> 1
        while j & bit:
            j ^= bit
            bit >>= 1
        j |= bit
        if i < j:
            vec[i], vec[j] = vec[j], vec[i]
    length = 2
    while length <= n:
        half = length >> 1
        wtab = _root_table(length, invert)
        for start in range(0, n, length):
            hi = start + half
            block_u = vec[start:hi]
            block_v = vec[hi : start + length]
            k = start
            for u, v, wn in zip(block_u, block_v, wtab):
                v = v * wn % R
                vec[k] = (u + v) % R
                vec[k + half] = (u - v) % R
                k += 1
        length <<= 1
    if invert:
        n_inv = pow(n, R - 2, R)
        for i in range(n):
            vec[i] = vec[i] * n_inv % R


def poly_mul(a: Poly, b: Poly) -> Poly:
    if not a or not b:
        return []
    la, lb = len(a), len(b)
    if min(la, lb) < _NTT_MIN:
        METER.add(la * lb)
        out = [0] * (la + lb - 1)
        if la > lb:
            a, b = b, a
            la, lb = lb, la
        for i, ai in enumerate(a):
            if ai:
                for j, bj in enumerate(b):
                    out[i + j] = (out[i + j] + ai * bj) % R
        return norm(out)
    size = 1
    while size < la + lb - 1:
        size <<= 1
    fa = list(a) + [0] * (size - la)
    fb = list(b) + [0] * (size - lb)
    _ntt(fa, False)
    _ntt(fb, False)
    for i in range(size):
        fa[i] = fa[i] * fb[i] % R
    _ntt(fa, True)
    # 2 forward + 1 inverse transform (n/2 log n butterflies each) + n products
    METER.add(3 * (size >> 1) * size.bit_length() + 2 * size)
    return norm(fa[: la + lb - 1])


def poly_deriv(p: Poly) -> Poly:
    METER.add(max(0, len(p) - 1))
    return norm([c * i % R for i, c in enumerate(p)][1:])


def _inv_series(f: Poly, n: int) -> Poly:
    """Power-series inverse of f mod X^n (f[0] != 0), Newton doubling."""
    g = [finv(f[0])]
    prec = 1
    while prec < n:
        prec = min(2 * prec, n)
        fg = poly_mul(f[:prec], g)[:prec]
        two_minus = poly_sub([2], fg)
        g = poly_mul(g, two_minus)[:prec]
    return norm(g[:n])


def poly_divmod(a: Poly, b: Poly) -> tuple[Poly, Poly]:
    """Quotient and remainder; schoolbook below the Newton crossover."""
    if is_zero(b):
        raise ZeroDivisionError("polynomial division by zero")
    if len(a) < len(b):
        return [], list(a)
    qlen = len(a) - len(b) + 1
    if qlen < _NEWTON_MIN or len(b) < 4:
        rem = list(a)
        q = [0] * qlen
        inv_lead = finv(b[-1])
        METER.add(qlen * len(b))
        for i in range(qlen - 1, -1, -1):
            c = rem[i + len(b) - 1] * inv_lead % R
            if c:
                q[i] = c
                for j, bj in enumerate(b):
                    rem[i + j] = (rem[i + j] - c * bj) % R
        return norm(q), norm(rem[: len(b) - 1])
    ra = list(reversed(a))
    rb = list(reversed(b))
    q_rev = poly_mul(ra[: 2 * qlen], _inv_series(rb, qlen))[:qlen]
    q_rev += [0] * (qlen - len(q_rev))
    q = norm(list(reversed(q_rev)))
    rem = poly_sub(a, poly_mul(q, b))
    if deg(rem) >= deg(b):
        raise InternalInvariantError("newton division produced oversized remainder")
    return q, rem


def char_poly(elements) -> Poly:
    """prod (X + e) over the given elements, via a product tree."""
    factors = [[e % R, 1] for e in elements]
    if not factors:
        return [1]
    while len(factors) > 1:
        nxt = []
        for i in range(0, len(factors) - 1, 2):
            nxt.append(poly_mul(factors[i], factors[i + 1]))
        if len(factors) & 1:
            nxt.append(factors[-1])
        factors = nxt
    return factors[0]


class _TreeNode:
    __slots__ = ("poly", "left", "right", "inv")

    def __init__(self, poly, left=None, right=None):
        self.poly = poly
        self.left = left
        self.right = right
        self.inv = None  # cached power-series inverse of the reversed poly


def _build_tree(points: list[int], lo: int, hi: int) -> _TreeNode:
    if hi - lo == 1:
        return _TreeNode([(-points[lo]) % R, 1])
    mid = (lo + hi) // 2
    left = _build_tree(points, lo, mid)
    right = _build_tree(points, mid, hi)
    return _TreeNode(poly_mul(left.poly, right.poly), left, right)


def _node_rem(f: Poly, node: _TreeNode) -> Poly:
    """f mod node.poly, caching the divisor's reversed inverse series.

    Descents evaluate f of degree < 2*deg(node.poly) at every node, so the
    inverse is computed once at full precision and reused by later passes
    over the same tree.
    """
    b = node.poly
    if len(f) < len(b):
        return list(f)
    qlen = len(f) - len(b) + 1
    if qlen < _NEWTON_MIN or len(b) < 4:
        return poly_divmod(f, b)[1]
    prec = len(b) - 1
    if node.inv is None or len(node.inv) < qlen:
        node.inv = _inv_series(list(reversed(b)), max(qlen, prec))
    q_rev = poly_mul(list(reversed(f))[: 2 * qlen], node.inv[:qlen])[:qlen]
    q_rev += [0] * (qlen - len(q_rev))
    q = norm(list(reversed(q_rev)))
    rem = poly_sub(f, poly_mul(q, b))
    if deg(rem) >= deg(b):
        raise InternalInvariantError("tree division produced oversized remainder")
    return rem


class PointSystem:
    """Subproduct tree over a fixed point set, shared by evaluation and
    interpolation so the tree and its cached inverses are built once."""

    def __init__(self, points: list[int]):
        if len(set(points)) != len(points):
            raise InternalInvariantError("points must be distinct")
        self.points = list(points)
        self.root = _build_tree(self.points, 0, len(points)) if points else None
        self._deriv_vals = None
        self._seed_inverses()

    def _seed_inverses(self) -> None:
        """Fill node.inv top-down: only the root pays for a Newton iteration,
        each child inverse is parent inverse times the reversed sibling,
        truncated (1/(ab) * b = 1/a as power series)."""
        root = self.root
        if root is None or len(root.poly) - 1 < _NEWTON_MIN:
            return
        prec = len(root.poly) - 1
        root.inv = _inv_series(list(reversed(root.poly)), prec)
        stack = [root]
        while stack:
            node = stack.pop()
            for child, sibling in ((node.left, node.right), (node.right, node.left)):
                if child is None or child.left is None:
                    continue
                cprec = len(child.poly) - 1
                if cprec < _NEWTON_MIN:
                    continue
                rev_sib = list(reversed(sibling.poly))[:cprec]
                inv = poly_mul(node.inv[:cprec], rev_sib)[:cprec]
                child.inv = inv + [0] * (cprec - len(inv))
                stack.append(child)

    def eval(self, f: Poly) -> list[int]:
        if self.root is None:
            return []
        if len(self.points) < _TREE_MIN or deg(f) < _TREE_MIN:
            return [eval_at(f, x) for x in self.points]
        out: list[int] = []
        self._down(_node_rem(f, self.root), self.root, out)
        return out

    def _down(self, f: Poly, node: _TreeNode, out: list[int]) -> None:
        if node.left is None:
            out.append(f[0] if f else 0)
            return
        if deg(f) < _TREE_MIN:
            self._naive_down(f, node, out)
            return
        self._down(_node_rem(f, node.left), node.left, out)
        self._down(_node_rem(f, node.right), node.right, out)

    def _naive_down(self, f: Poly, node: _TreeNode, out: list[int]) -> None:
        if node.left is None:
            out.append(eval_at(f, (R - node.poly[0]) % R))
            return
        self._naive_down(f, node.left, out)
        self._naive_down(f, node.right, out)

    def interpolate(self, values: list[int]) -> Poly:
        n = len(self.points)
        if len(values) != n:
            raise ValueError("points/values length mismatch")
        if n == 0:
            return []
        if self._deriv_vals is None:
            self._deriv_vals = self.eval(poly_deriv(self.root.poly))
        coeffs = [values[i] * finv(self._deriv_vals[i]) % R for i in range(n)]
        METER.add(n)
        return self._up(self.root, coeffs, 0, n)

    def interpolate_scaled(self, coeffs: list[int]) -> Poly:
        """Interpolate from pre-divided coefficients c_i = v_i / m'(p_i)."""
        if len(coeffs) != len(self.points):
            raise ValueError("coefficient count mismatch")
        if not coeffs:
            return []
        return self._up(self.root, coeffs, 0, len(coeffs))

    def _up(self, node: _TreeNode, coeffs: list[int], lo: int, hi: int) -> Poly:
        if node.left is None:
            return norm([coeffs[lo]])
        mid = (lo + hi) // 2
        lv = self._up(node.left, coeffs, lo, mid)
        rv = self._up(node.right, coeffs, mid, hi)
        return poly_add(poly_mul(lv, node.right.poly), poly_mul(rv, node.left.poly))


def multi_eval(f: Poly, points: list[int]) -> list[int]:
    """Evaluate f at every point (remainder tree above the crossover)."""
    if not points:
        return []
    if len(points) < _TREE_MIN or deg(f) < _TREE_MIN:
        return [eval_at(f, x) for x in points]
    return PointSystem(points).eval(f)


def interpolate(points: list[int], values: list[int]) -> Poly:
    """Unique polynomial of degree < n through the n (point, value) pairs."""
    if not points:
        return []
    return PointSystem(points).interpolate(values)


def poly_xgcd(a: Poly, b: Poly) -> tuple[Poly, Poly, Poly]:
    """Extended Euclid: returns (g, u, v) with u*a + v*b = g, g monic."""
    r0, r1 = list(a), list(b)
    s0, s1 = [1], []
    t0, t1 = [], [1]
    while not is_zero(r1):
        q, rem = poly_divmod(r0, r1)
        r0, r1 = r1, rem
        s0, s1 = s1, poly_sub(s0, poly_mul(q, s1))
        t0, t1 = t1, poly_sub(t0, poly_mul(q, t1))
    if is_zero(r0):
        return [], s0, t0
    lead_inv = finv(r0[-1])
    return poly_scale(r0, lead_inv), poly_scale(s0, lead_inv), poly_scale(t0, lead_inv)


def bezout_family(polys: list[Poly]) -> list[Poly]:
    """Cofactors c_i with sum c_i * polys[i] = 1.

    Raises InternalInvariantError when gcd(polys) != 1 — with honest inputs
    (complement polynomials of a true intersection, or of a true union) the
    gcd is always 1.
    """
    if not polys:
        raise ValueError("need at least one polynomial")
    for p in polys:
        if is_zero(p):
            raise InternalInvariantError("zero polynomial in bezout family")
    # Any constant member makes the identity trivial.
    for i, p in enumerate(polys):
        if deg(p) == 0:
            out = [[] for _ in polys]
            out[i] = [finv(p[0])]
            return out
    g, cof = list(polys[0]), [[1]]
    for p in polys[1:]:
        g2, u, v = poly_xgcd(g, p)
        cof = [poly_mul(c, u) for c in cof]
        cof.append(v)
        g = g2
        if deg(g) == 0:
            break
    if is_zero(g) or deg(g) != 0:
        raise InternalInvariantError("polynomials share a common root")
    scale = finv(g[0])
    cof = [poly_scale(c, scale) for c in cof]
    cof += [[] for _ in range(len(polys) - len(cof))]
    return _normalize_bezout(polys, cof)


def _normalize_bezout(polys: list[Poly], cof: list[Poly]) -> list[Poly]:
    """Shrink cofactor degrees: reduce every cofactor modulo the largest
    member, then recompute that member's cofactor by exact division.  The
    result satisfies deg(c_i) < max_j deg(polys[j]) for every i, so all
    cofactors stay within accumulator capacity whenever the inputs do."""
    jstar = max(range(len(polys)), key=lambda i: (deg(polys[i]), i))
    pstar = polys[jstar]
    if deg(pstar) < 1:
        return cof
    out = list(cof)
    acc = [1]
    for i, (p, c) in enumerate(zip(polys, cof)):
        if i == jstar:
            continue
        out[i] = poly_divmod(c, pstar)[1]
        acc = poly_sub(acc, poly_mul(out[i], p))
    q, rem = poly_divmod(acc, pstar)
    if not is_zero(rem):
        raise InternalInvariantError("bezout normalization left a remainder")
    out[jstar] = q
    return out


def bezout_pair_systems(sys1: PointSystem, sys2: PointSystem) -> list[Poly]:
    """Bezout cofactors q1, q2 with q1*p1 + q2*p2 = 1 for the root
    polynomials p_i of two point systems with disjoint point sets.

    q1 = p1^{-1} mod p2 and q2 = p2^{-1} mod p1, each by evaluation at the
    other polynomial's roots plus interpolation; the two residues already
    satisfy the identity exactly (the difference is a multiple of p1*p2 of
    smaller degree).  With m = p1*p2, the interpolation coefficient of q1 at
    a root t of p2 is 1/(p1(t) * p2'(t)) = 1/m'(t), so a single descent of
    m' per side yields evaluations and denominators together.  O(n log^2 n).
    """
    p1, p2 = sys1.root.poly, sys2.root.poly
    if deg(p1) == 0 or deg(p2) == 0:
        return bezout_family([p1, p2])
    m_deriv = poly_deriv(poly_mul(p1, p2))
    out = []
    for sys in (sys2, sys1):
        mvals = sys.eval(m_deriv)
        if any(v == 0 for v in mvals):
            raise InternalInvariantError("polynomials share a common root")
        out.append(sys.interpolate_scaled([finv(v) for v in mvals]))
    return out


def bezout_pair_from_elements(elems1: list[int], elems2: list[int],
                              p1: Poly, p2: Poly) -> list[Poly]:
    """As bezout_pair_systems, building the point systems from elements
    (roots of the characteristic polynomial of E are the negated elements)."""
    if deg(p1) == 0 or deg(p2) == 0:
        return bezout_family([p1, p2])
    sys1 = PointSystem([(-e) % R for e in elems1])
    sys2 = PointSystem([(-e) % R for e in elems2])
    return bezout_pair_systems(sys1, sys2)
