"""Weighted best approximations to a target vector.

The enumeration sweeps every sign-normalized integer vector below the height
bound.  Residuals are first evaluated in 62-bit fixed point with numpy; any
vector whose residual exceeds ``1/height`` is discarded (no best
approximation can have a larger residual, by Minkowski's theorem applied to
the box of any smaller height).  The survivors go through the exact
selection, where every comparison is certified.
"""
from __future__ import annotations

import csv
import itertools
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterator, Sequence

import numpy as np

from .arith import (
    CertifiedReal,
    Comparison,
    PrecisionExhausted,
    TargetVector,
    WeightVector,
    certified_compare,
    dot,
    dot_residual,
    fixed_point,
    form_rational_value,
    height_key,
    iroot,
    max_bits,
    root_of_key,
)

FIXED_BITS = 62
_SCALE = 1 << FIXED_BITS
_MASK = np.uint64(_SCALE - 1)
_BATCH = 1 << 21


class IntegerRelationFound(ValueError):
    """1, theta_1, ..., theta_n are dependent: v . theta + p == 0."""

    def __init__(self, v, p, suspected=False):
        kind = "suspected integer relation" if suspected else "integer relation"
        super().__init__(f"{kind}: v={tuple(v)}, p={p}")
        self.v = tuple(int(x) for x in v)
        self.p = int(p)
        self.suspected = suspected


@dataclass(frozen=True)
class BestApproximation:
    m: tuple[int, ...]
    height: CertifiedReal
    residual: CertifiedReal
    index: int
    key: int = 0  # height ** weights.height_power, exact


@dataclass(frozen=True)
class BestApproxSequence:
    target: TargetVector
    weights: WeightVector
    entries: tuple[BestApproximation, ...]
    height_bound: Fraction

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, i):
        return self.entries[i]

    @property
    def vectors(self) -> list[tuple[int, ...]]:
        return [e.m for e in self.entries]

    def truncated(self, height_bound) -> "BestApproxSequence":
        """The prefix with heights <= height_bound."""
        hb = Fraction(height_bound)
        L = self.weights.height_power
        keep = tuple(e for e in self.entries if _key_le_bound(e.key, hb, L))
        return BestApproxSequence(self.target, self.weights, keep, min(hb, self.height_bound))


def normalize_sign(v: Sequence[int]) -> tuple[int, ...]:
    for x in v:
        if x:
            return tuple(v) if x > 0 else tuple(-y for y in v)
    return tuple(v)


def _key_le_bound(key: int, bound: Fraction, L: int) -> bool:
    # height <= bound  <=>  key * den**L <= num**L
    return key * bound.denominator ** L <= bound.numerator ** L


def coordinate_bounds(j: WeightVector, bound) -> tuple[int, ...]:
    """Largest |v_i| with |v_i|**(1/j_i) <= bound, per coordinate."""
    b = Fraction(bound)
    if b < 1:
        return (0,) * j.n
    L = j.height_power
    out = []
    for e in j.exponents:
        # max a with a**e * den**L <= num**L
        a = iroot(b.numerator ** L // b.denominator ** L, e)
        while (a + 1) ** e * b.denominator ** L <= b.numerator ** L:
            a += 1
        while a ** e * b.denominator ** L > b.numerator ** L:
            a -= 1
        out.append(a)
    return tuple(out)


def _as_bound(height_bound) -> Fraction:
    if isinstance(height_bound, CertifiedReal):
        v = height_bound.rational_value()
        if v is None:
            raise ValueError("height bound must be exact")
        return v
    if isinstance(height_bound, str):
        return Fraction(height_bound)
    return Fraction(height_bound)


# ---------------------------------------------------------------------------
# vectorized sweep


def _batches(bounds: Sequence[int]) -> Iterator[np.ndarray]:
    """Blocks of sign-normalized nonzero vectors with |v_i| <= bounds[i]."""
    n = len(bounds)
    for lead in range(n):
        if bounds[lead] == 0:
            continue
        rest_axes = [np.arange(-b, b + 1, dtype=np.int64) for b in bounds[lead + 1:]]
        if rest_axes:
            grids = np.meshgrid(*rest_axes, indexing="ij")
            rest = np.stack([g.ravel() for g in grids], axis=1)
        else:
            rest = np.zeros((1, 0), dtype=np.int64)
        g = rest.shape[0]
        step = max(1, _BATCH // g)
        for start in range(1, bounds[lead] + 1, step):
            lead_vals = np.arange(start, min(start + step, bounds[lead] + 1), dtype=np.int64)
            block = np.zeros((lead_vals.size * g, n), dtype=np.int64)
            block[:, lead] = np.repeat(lead_vals, g)
            if rest.shape[1]:
                block[:, lead + 1:] = np.tile(rest, (lead_vals.size, 1))
            yield block


def _filter_block(block, T, W, inv_j, slack):
    acc = np.zeros(block.shape[0], dtype=np.uint64)
    err = np.zeros(block.shape[0], dtype=np.int64)
    for i in range(block.shape[1]):
        col = block[:, i]
        acc += col.astype(np.uint64) * np.uint64(T[i])
        err += np.abs(col) * W[i]
    x = (acc & _MASK).astype(np.int64)
    d = np.minimum(x, _SCALE - x) - err
    absb = np.abs(block).astype(np.float64)
    height = np.max(absb ** inv_j, axis=1)
    keep = d.astype(np.float64) * height <= _SCALE * slack + 4.0 * height
    return block[keep]


def _sweep(theta: TargetVector, j: WeightVector, bounds, workers: int = 1) -> list[tuple[int, ...]]:
    T, W = [], []
    for c in theta:
        t, w = fixed_point(c, FIXED_BITS)
        T.append(t % _SCALE)
        W.append(w)
    inv_j = np.array([float(1 / w) for w in j.weights])
    slack = 1.0 + 1e-6
    blocks = _batches(bounds)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            kept = list(pool.map(lambda b: _filter_block(b, T, W, inv_j, slack), blocks))
    else:
        kept = [_filter_block(b, T, W, inv_j, slack) for b in blocks]
    out = []
    for k in kept:
        out.extend(tuple(int(x) for x in row) for row in k.tolist())
    return out


# ---------------------------------------------------------------------------
# exact selection


class _Candidate:
    __slots__ = ("v", "key", "lo", "hi", "_cr", "_theta")

    def __init__(self, v, key, lo, hi, theta):
        self.v, self.key, self.lo, self.hi = v, key, lo, hi
        self._cr = None
        self._theta = theta

    def certified(self) -> CertifiedReal:
        if self._cr is None:
            self._cr = _residual_cr(self.v, self._theta)
        return self._cr


def _residual_cr(v, theta) -> CertifiedReal:
    r = dot_residual(v, theta)
    if r.is_exact and r.lower == 0:
        s = dot(v, list(theta))
        val = s.rational_value()
        raise IntegerRelationFound(v, -int(val) if val is not None else 0)
    return r


def _fixed_residual(v, T, W) -> tuple[int, int]:
    x = sum(vi * ti for vi, ti in zip(v, T))
    neg = sum(-vi * wi for vi, wi in zip(v, W) if vi < 0)
    pos = sum(vi * wi for vi, wi in zip(v, W) if vi > 0)
    lo, hi = x - neg, x + pos
    if hi - lo >= _SCALE:
        return 0, _SCALE // 2
    base = (lo // _SCALE) * _SCALE
    f, g = lo - base, hi - base
    d = lambda y: min(y % _SCALE, _SCALE - y % _SCALE)
    dmin = 0 if (f == 0 or g >= _SCALE) else min(d(f), d(g))
    half = _SCALE // 2
    dmax = half if (f <= half <= g or f <= 3 * half <= g) else max(d(f), d(g))
    return dmin, dmax


def _less(a: _Candidate, b: _Candidate, theta) -> bool:
    """Certified ||a.theta|| < ||b.theta||."""
    if a.hi < b.lo:
        return True
    if a.lo > b.hi:
        return False
    res = certified_compare(a.certified(), b.certified(), max_bits())
    if res is Comparison.LESS:
        return True
    if res is Comparison.GREATER:
        return False
    # equal residuals mean a relation between a and b whenever the forms say so
    for sgn in (1, -1):
        w = [x + sgn * y for x, y in zip(a.v, b.v)]
        if any(w):
            s = dot(w, list(theta))
            if s.form is not None:
                val = form_rational_value(s.form)
                if val is not None and val.denominator == 1:
                    raise IntegerRelationFound(normalize_sign(w), -int(val))
    raise PrecisionExhausted(
        f"cannot order residuals of v={a.v} and m={b.v} at {max_bits()} bits", where=(a.v, b.v)
    )


def _select(cands: list[_Candidate], theta) -> list[_Candidate]:
    cands.sort(key=lambda c: (c.key, c.v))
    chosen: list[_Candidate] = []
    best: _Candidate | None = None
    for _, grp in itertools.groupby(cands, key=lambda c: c.key):
        grp = list(grp)
        gmin = grp[0]
        for c in grp[1:]:
            if _less(c, gmin, theta):
                gmin = c
        winners = []
        if best is None or _less(gmin, best, theta):
            if all(c is gmin or _less(gmin, c, theta) for c in grp):
                winners.append(gmin)
        if best is None or _less(gmin, best, theta):
            best = gmin
        chosen.extend(winners)
    return chosen


def enumerate_best_approximations(
    theta: TargetVector, j: WeightVector, height_bound, workers: int = 1
) -> BestApproxSequence:
    """All best approximations (sign-normalized) with height <= height_bound."""
    if theta.n != j.n:
        raise ValueError("theta and weights differ in dimension")
    bound = _as_bound(height_bound)
    if theta.all_rational():
        q = theta[0].rational_value()
        v = (q.denominator,) + (0,) * (theta.n - 1)
        raise IntegerRelationFound(v, -q.numerator)
    if bound < 1:
        return BestApproxSequence(theta, j, (), bound)
    bounds = coordinate_bounds(j, bound)
    vecs = _sweep(theta, j, bounds, workers)
    T, W = zip(*(fixed_point(c, FIXED_BITS) for c in theta))
    cands = []
    for v in vecs:
        lo, hi = _fixed_residual(v, T, W)
        cands.append(_Candidate(v, height_key(v, j), lo, hi, theta))
    chosen = _select(cands, theta)
    L = j.height_power
    entries = []
    for idx, c in enumerate(chosen, start=1):
        r = c.certified()
        entries.append(BestApproximation(c.v, root_of_key(c.key, L), r, idx, c.key))
    return BestApproxSequence(theta, j, tuple(entries), bound)


# ---------------------------------------------------------------------------
# continued fractions (n = 1 oracle)


class TerminatingExpansion(ValueError):
    def __init__(self, denominators):
        super().__init__(f"continued fraction terminates after denominators {denominators}")
        self.denominators = list(denominators)


class _NeedBits(Exception):
    pass


def _cf_interval(lo: Fraction, hi: Fraction, depth: int, stop_above=None) -> list[int]:
    a = math.floor(lo)
    if math.floor(hi) != a:
        raise _NeedBits
    lo, hi = lo - a, hi - a
    q_prev, q = 0, 1
    dens = [1]
    while len(dens) < depth:
        if stop_above is not None and dens[-1] > stop_above:
            break
        if lo == 0:
            if hi == 0:
                raise TerminatingExpansion(dens)
            raise _NeedBits
        lo, hi = 1 / hi, 1 / lo
        a = math.floor(lo)
        if math.floor(hi) != a:
            raise _NeedBits
        lo, hi = lo - a, hi - a
        q_prev, q = q, a * q + q_prev
        if q > dens[-1]:
            dens.append(q)
    return dens


def continued_fraction_denominators(x: CertifiedReal, depth: int, stop_above=None) -> list[int]:
    """Distinct convergent denominators 1 = q_0 <= q_1 < q_2 < ... of x."""
    bits = 64
    cap = max_bits()
    while True:
        lo, hi = x.enclosure(bits)
        try:
            return _cf_interval(lo, hi, depth, stop_above)
        except _NeedBits:
            if bits >= cap or (x.source is None and not x.is_exact):
                raise PrecisionExhausted(f"partial quotient undecidable at {bits} bits")
            bits = min(2 * bits, cap)


def best_approximations_from_cf(theta: TargetVector, height_bound) -> BestApproxSequence:
    """n = 1 sequence via convergent denominators; reaches heights the sweep cannot."""
    if theta.n != 1:
        raise ValueError("continued fractions only serve n = 1")
    bound = _as_bound(height_bound)
    j = WeightVector((Fraction(1),))
    if theta.all_rational():
        q = theta[0].rational_value()
        raise IntegerRelationFound((q.denominator,), -q.numerator)
    dens: list[int] = []
    depth = 8
    while True:
        dens = continued_fraction_denominators(theta[0], depth, stop_above=bound)
        if dens[-1] > bound or len(dens) < depth:
            break
        depth *= 2
    entries = []
    for idx, q in enumerate((d for d in dens if d <= bound), start=1):
        entries.append(BestApproximation((q,), CertifiedReal.exact(q), dot_residual((q,), theta), idx, q))
    return BestApproxSequence(theta, j, tuple(entries), bound)


# ---------------------------------------------------------------------------
# verification


@dataclass
class LemmaReport:
    name: str
    rows: list[dict] = field(default_factory=list)

    @property
    def failures(self) -> list[dict]:
        return [r for r in self.rows if r["status"] == "FAIL"]

    @property
    def inconclusive(self) -> list[dict]:
        return [r for r in self.rows if r["status"] == "INCONCLUSIVE"]

    @property
    def passed(self) -> bool:
        return all(r["status"] == "PASS" for r in self.rows)

    def summary(self) -> dict:
        return {
            "check": self.name,
            "checked": len(self.rows),
            "fail": len(self.failures),
            "inconclusive": len(self.inconclusive),
            "pass": self.passed,
        }


def verify_minkowski(seq: BestApproxSequence) -> LemmaReport:
    """zeta_nu * M_{nu+1} <= 1 for consecutive entries."""
    rep = LemmaReport("minkowski")
    one = CertifiedReal.exact(1)
    for a, b in zip(seq.entries, seq.entries[1:]):
        prod = a.residual * b.height
        cmp = certified_compare(prod, one, max_bits())
        prod = prod.refine(96)
        if prod.upper <= 1:
            status = "PASS"
        elif cmp is Comparison.GREATER:
            status = "FAIL"
        elif cmp in (Comparison.LESS, Comparison.EQUAL_EXACT):
            status = "PASS"
        else:
            status = "INCONCLUSIVE"
        rows = {"index": a.index, "lower": prod.lower, "upper": prod.upper, "status": status}
        rep.rows.append(rows)
    return rep


def verify_lacunarity(seq: BestApproxSequence, n: int | None = None) -> LemmaReport:
    """M_{nu + 2*3**n} >= 2 M_nu, decided exactly on integer height keys."""
    n = seq.weights.n if n is None else n
    stride = 2 * 3 ** n
    L = seq.weights.height_power
    rep = LemmaReport("lacunarity")
    ents = seq.entries
    for i in range(len(ents) - stride):
        lhs, rhs = ents[i + stride].key, (2 ** L) * ents[i].key
        rep.rows.append({
            "index": ents[i].index,
            "ratio": Fraction(lhs, rhs),
            "status": "PASS" if lhs >= rhs else "FAIL",
        })
    return rep


# ---------------------------------------------------------------------------
# integer relations


@dataclass(frozen=True)
class RelationResult:
    status: str  # INDEPENDENT_UP_TO_BOUND | RELATION | SUSPECTED_RELATION
    v: tuple[int, ...] | None = None
    p: int | None = None


def check_integer_relation(theta: TargetVector, coeff_bound: int) -> RelationResult:
    """Exhaustive search for v . theta + p == 0 with |v_i| <= coeff_bound."""
    if coeff_bound < 1:
        raise ValueError("coeff_bound must be >= 1")
    n = theta.n
    comps = list(theta)
    cap = max_bits()
    for k in range(1, coeff_bound + 1):
        shell = [v for v in itertools.product(range(-k, k + 1), repeat=n)
                 if max(map(abs, v)) == k and normalize_sign(v) == v]
        shell.sort(key=lambda v: (sum(map(abs, v)), [-x for x in v]))
        for v in shell:
            s = dot(v, comps)
            if s.form is not None:
                # the exact form decides: a relation iff the value is a small integer
                val = form_rational_value(s.form)
                if val is not None and val.denominator == 1 and abs(val) <= n * coeff_bound:
                    return RelationResult("RELATION", v, -int(val))
                continue
            s = s.refine(cap)
            p = -round(s.midpoint)
            if abs(p) <= n * coeff_bound and s.lower <= -p <= s.upper:
                return RelationResult("SUSPECTED_RELATION", v, p)
    return RelationResult("INDEPENDENT_UP_TO_BOUND")


# ---------------------------------------------------------------------------
# export


def sequence_records(seq: BestApproxSequence) -> list[dict]:
    return [
        {
            "index": e.index,
            "m": ",".join(str(x) for x in e.m),
            "height": e.height.to_decimal_string(30),
            "residual": e.residual.to_decimal_string(30),
        }
        for e in seq.entries
    ]


def write_sequence_csv(seq: BestApproxSequence, fh, header_comment: str | None = None) -> None:
    if header_comment:
        fh.write(f"# {header_comment}\n")
    w = csv.DictWriter(fh, fieldnames=["index", "m", "height", "residual"], lineterminator="\n")
    w.writeheader()
    for rec in sequence_records(seq):
        w.writerow(rec)


def write_sequence_jsonl(seq: BestApproxSequence, fh, header: dict | None = None) -> None:
    if header is not None:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
    for rec in sequence_records(seq):
        fh.write(json.dumps(rec, sort_keys=True) + "\n")
