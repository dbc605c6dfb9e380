"""Certified real arithmetic on dyadic intervals.

A :class:`CertifiedReal` is an enclosing interval ``[lower, upper]`` with
dyadic endpoints, optionally backed by a *source* that can recompute the
enclosure at any requested precision.  Quantities derived from refinable
values (sums, integer multiples, distances to the nearest integer, powers)
stay refinable: their sources re-request the inputs at higher precision.

Values built from rationals and quadratic irrationals also carry an exact
symbolic form (a map from squarefree radicand to rational coefficient) so
that zero tests on integer combinations are decided exactly.
"""
from __future__ import annotations

import enum
import math
import os
import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Mapping, Sequence

DEFAULT_BITS = 64


def max_bits() -> int:
    """Precision cap in bits, from ``TWISTEDBAD_MAX_BITS`` (default 512)."""
    return int(os.environ.get("TWISTEDBAD_MAX_BITS", "512"))


class PrecisionExhausted(ArithmeticError):
    """Raised when an interval cannot decide a question at the precision cap."""

    def __init__(self, message: str, *, where=None):
        super().__init__(message)
        self.where = where


class Comparison(enum.Enum):
    LESS = "LESS"
    GREATER = "GREATER"
    EQUAL_EXACT = "EQUAL_EXACT"
    UNDECIDED = "UNDECIDED"


# ---------------------------------------------------------------------------
# dyadic helpers

def floor_dyadic(x: Fraction, bits: int) -> Fraction:
    return Fraction(math.floor(x * (1 << bits)), 1 << bits)


def ceil_dyadic(x: Fraction, bits: int) -> Fraction:
    return Fraction(math.ceil(x * (1 << bits)), 1 << bits)


def iroot(n: int, k: int) -> int:
    """Largest integer r with r**k <= n (n >= 0)."""
    if n < 0:
        raise ValueError("iroot of a negative number")
    if n < 2 or k == 1:
        return n
    if k == 2:
        return math.isqrt(n)
    r = 1 << -(-n.bit_length() // k)
    while True:
        s = ((k - 1) * r + n // r ** (k - 1)) // k
        if s >= r:
            break
        r = s
    while r ** k > n:
        r -= 1
    while (r + 1) ** k <= n:
        r += 1
    return r


def squarefree_split(d: int) -> tuple[int, int]:
    """Write d = f**2 * s with s squarefree; return (f, s)."""
    f, s = 1, 1
    p = 2
    rest = d
    while p * p <= rest:
        e = 0
        while rest % p == 0:
            rest //= p
            e += 1
        f *= p ** (e // 2)
        if e % 2:
            s *= p
        p += 1
    return f, s * rest


# exact symbolic forms: {radicand: coefficient}, radicand 1 is the rational part
ExactForm = Mapping[int, Fraction]


def _form_add(a: ExactForm, b: ExactForm, sb: int = 1) -> dict[int, Fraction]:
    out = dict(a)
    for d, c in b.items():
        out[d] = out.get(d, Fraction(0)) + sb * c
    return {d: c for d, c in out.items() if c != 0}


def _form_scale(a: ExactForm, k) -> dict[int, Fraction]:
    return {d: c * k for d, c in a.items() if c * k != 0}


def form_rational_value(form: ExactForm) -> Fraction | None:
    """The rational value of an exact form, or None when it is irrational."""
    if any(d != 1 for d in form):
        return None
    return Fraction(form.get(1, Fraction(0)))


def _dist_interval(lo: Fraction, hi: Fraction) -> tuple[Fraction, Fraction]:
    """Range of x -> ||x|| over the closed interval [lo, hi]."""
    if hi - lo >= 1:
        return Fraction(0), Fraction(1, 2)
    base = math.floor(lo)
    f, g = lo - base, hi - base

    def d(x):
        return min(x - math.floor(x), math.ceil(x) - x)

    if f == 0 or g >= 1:
        dmin = Fraction(0)
    else:
        dmin = min(d(f), d(g))
    if f <= Fraction(1, 2) <= g or f <= Fraction(3, 2) <= g:
        dmax = Fraction(1, 2)
    else:
        dmax = max(d(f), d(g))
    return Fraction(dmin), Fraction(dmax)


# ---------------------------------------------------------------------------

Source = Callable[[int], "tuple[Fraction, Fraction]"]


@dataclass(frozen=True, eq=False)
class CertifiedReal:
    """Enclosure ``[lower, upper]`` of a real number.

    ``precision_bits`` is the precision actually achieved by the last
    refinement, which can be below the requested one when the source has a
    declared precision limit.
    """

    lower: Fraction
    upper: Fraction
    precision_bits: int = 0
    source: Source | None = field(default=None, repr=False)
    form: ExactForm | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.lower > self.upper:
            raise ValueError(f"empty interval [{self.lower}, {self.upper}]")

    # -- construction -----------------------------------------------------

    @classmethod
    def exact(cls, value) -> "CertifiedReal":
        q = Fraction(value)
        return cls(q, q, DEFAULT_BITS, lambda bits: (q, q), {1: q} if q else {})

    @classmethod
    def opaque(cls, lower, upper) -> "CertifiedReal":
        """An enclosure with no way to refine it."""
        return cls(Fraction(lower), Fraction(upper), 0)

    @classmethod
    def from_source(cls, source: Source, bits: int = DEFAULT_BITS, form=None) -> "CertifiedReal":
        lo, hi = source(bits)
        return cls(lo, hi, _achieved(lo, hi, bits), source, form)

    @classmethod
    def quadratic(cls, a: int, b: int, d: int, c: int, offset: int = 0) -> "CertifiedReal":
        """The number (a + b*sqrt(d))/c + offset."""
        if c == 0 or d < 0:
            raise ValueError("need c != 0 and d >= 0")
        f, s = squarefree_split(d) if d else (0, 1)
        b = b * f
        a = a + offset * c
        if s == 1 or b == 0:
            return cls.exact(Fraction(a + b, c) if s == 1 else Fraction(a, c))
        form = {d_: v for d_, v in ((1, Fraction(a, c)), (s, Fraction(b, c))) if v}

        def src(bits: int) -> tuple[Fraction, Fraction]:
            k = bits + abs(b).bit_length() + 2
            r = math.isqrt(s << (2 * k))
            lo = Fraction(a * (1 << k) + b * r, 1 << k)
            hi = Fraction(a * (1 << k) + b * (r + 1), 1 << k)
            if b < 0:
                lo, hi = hi, lo
            lo, hi = lo / c, hi / c
            if c < 0:
                lo, hi = hi, lo
            return floor_dyadic(lo, bits + 1), ceil_dyadic(hi, bits + 1)

        return cls.from_source(src, DEFAULT_BITS, form)

    @classmethod
    def decimal(cls, text: str, bits: int) -> "CertifiedReal":
        """A real known to lie within 2**-bits of the decimal literal."""
        v = Fraction(text)
        rad = Fraction(1, 1 << bits)

        def src(req: int) -> tuple[Fraction, Fraction]:
            return v - rad, v + rad

        return cls(v - rad, v + rad, bits, src)

    # -- refinement -------------------------------------------------------

    def refine(self, bits: int) -> "CertifiedReal":
        if self.source is None or bits <= self.precision_bits and self.width <= Fraction(1, 1 << bits):
            return self
        lo, hi = self.source(bits)
        lo, hi = max(lo, self.lower), min(hi, self.upper)
        if lo > hi:
            raise ArithmeticError("source produced an interval disjoint from a previous enclosure")
        return CertifiedReal(lo, hi, max(self.precision_bits, _achieved(lo, hi, bits)), self.source, self.form)

    def enclosure(self, bits: int) -> tuple[Fraction, Fraction]:
        r = self.refine(bits)
        return r.lower, r.upper

    @property
    def width(self) -> Fraction:
        return self.upper - self.lower

    @property
    def is_exact(self) -> bool:
        return self.lower == self.upper

    @property
    def midpoint(self) -> Fraction:
        return (self.lower + self.upper) / 2

    def rational_value(self) -> Fraction | None:
        if self.is_exact:
            return self.lower
        if self.form is not None:
            return form_rational_value(self.form)
        return None

    def __float__(self) -> float:
        return float(self.midpoint)

    def __repr__(self) -> str:
        if self.is_exact:
            return f"CertifiedReal({self.lower})"
        return f"CertifiedReal([{float(self.lower)!r}, {float(self.upper)!r}], bits={self.precision_bits})"

    def to_decimal_string(self, digits: int = 30) -> str:
        """Midpoint rendered with ``digits`` significant digits."""
        r = self.refine(int(digits * 3.33) + 16)
        return format_decimal(r.midpoint, digits)

    # -- arithmetic -------------------------------------------------------

    def __neg__(self) -> "CertifiedReal":
        src = None if self.source is None else (lambda b, s=self: _neg(s.enclosure(b)))
        form = None if self.form is None else _form_scale(self.form, -1)
        return CertifiedReal(-self.upper, -self.lower, self.precision_bits, src, form)

    def __add__(self, other) -> "CertifiedReal":
        other = as_certified(other)
        return _combine([(1, self), (1, other)])

    __radd__ = __add__

    def __sub__(self, other) -> "CertifiedReal":
        return _combine([(1, self), (-1, as_certified(other))])

    def __rsub__(self, other) -> "CertifiedReal":
        return _combine([(1, as_certified(other)), (-1, self)])

    def __mul__(self, other) -> "CertifiedReal":
        if isinstance(other, int):
            return _combine([(other, self)])
        other = as_certified(other)
        if other.is_exact and other.lower.denominator == 1:
            return _combine([(int(other.lower), self)])
        return _product(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other) -> "CertifiedReal":
        q = Fraction(other)
        return _product(self, CertifiedReal.exact(1 / q))


def _achieved(lo: Fraction, hi: Fraction, bits: int) -> int:
    w = hi - lo
    if w == 0:
        return bits
    # largest b <= bits with w <= 2**-b
    b = -(w.numerator.bit_length() - w.denominator.bit_length())
    while b > 0 and w > Fraction(1, 1 << b):
        b -= 1
    while b < bits and w <= Fraction(1, 1 << (b + 1)):
        b += 1
    return max(0, min(b, bits))


def _neg(iv):
    return -iv[1], -iv[0]


def as_certified(x) -> CertifiedReal:
    if isinstance(x, CertifiedReal):
        return x
    return CertifiedReal.exact(Fraction(x))


def _combine(terms: Sequence[tuple[int, CertifiedReal]]) -> CertifiedReal:
    """Integer linear combination sum(k * x)."""
    refinable = all(x.source is not None for _, x in terms)
    form = None
    if all(x.form is not None for _, x in terms):
        form = {}
        for k, x in terms:
            form = _form_add(form, x.form, k)

    def evaluate(ivs):
        lo = hi = Fraction(0)
        for (k, _), (a, b) in zip(terms, ivs):
            if k >= 0:
                lo, hi = lo + k * a, hi + k * b
            else:
                lo, hi = lo + k * b, hi + k * a
        return lo, hi

    lo, hi = evaluate([(x.lower, x.upper) for _, x in terms])
    if not refinable:
        return CertifiedReal(lo, hi, _achieved(lo, hi, min(x.precision_bits for _, x in terms)), None, form)
    guard = max(abs(k) for k, _ in terms).bit_length() + len(terms).bit_length() + 2

    def src(bits: int):
        l, h = evaluate([x.enclosure(bits + guard) for _, x in terms])
        return floor_dyadic(l, bits + guard), ceil_dyadic(h, bits + guard)

    if form is not None and form_rational_value(form) is not None:
        v = form_rational_value(form)
        return CertifiedReal.exact(v)
    lo2, hi2 = src(DEFAULT_BITS)
    lo, hi = max(lo, lo2), min(hi, hi2)
    return CertifiedReal(lo, hi, _achieved(lo, hi, DEFAULT_BITS), src, form)


def _mul_iv(a, b):
    ps = [a[0] * b[0], a[0] * b[1], a[1] * b[0], a[1] * b[1]]
    return min(ps), max(ps)


def _product(x: CertifiedReal, y: CertifiedReal) -> CertifiedReal:
    lo, hi = _mul_iv((x.lower, x.upper), (y.lower, y.upper))
    if x.is_exact and y.is_exact:
        return CertifiedReal.exact(lo)
    if x.source is None or y.source is None:
        return CertifiedReal(lo, hi, _achieved(lo, hi, min(x.precision_bits, y.precision_bits)))

    def src(bits: int):
        mag = max(abs(x.lower), abs(x.upper), abs(y.lower), abs(y.upper), Fraction(1))
        guard = math.ceil(mag).bit_length() + 3
        l, h = _mul_iv(x.enclosure(bits + guard), y.enclosure(bits + guard))
        return floor_dyadic(l, bits + guard), ceil_dyadic(h, bits + guard)

    return CertifiedReal.from_source(src)


def format_decimal(q: Fraction, digits: int = 30) -> str:
    """Render a rational with ``digits`` significant digits (round half even)."""
    if q == 0:
        return "0"
    from decimal import Context, Decimal, ROUND_HALF_EVEN

    ctx = Context(prec=digits, rounding=ROUND_HALF_EVEN)
    # enough digits in the quotient so that the final rounding is exact
    wide = Context(prec=digits + 40)
    v = wide.divide(Decimal(int(q.numerator)), Decimal(int(q.denominator)))
    return format(ctx.plus(v), "")


# ---------------------------------------------------------------------------
# domain operations


def dist_to_nearest_int(x: CertifiedReal) -> CertifiedReal:
    """Distance to the nearest integer, ``||x||``, as an enclosure within [0, 1/2]."""
    if x.is_exact:
        lo, hi = _dist_interval(x.lower, x.lower)
        return CertifiedReal.exact(lo)
    if x.form is not None and form_rational_value(x.form) is not None:
        return CertifiedReal.exact(_dist_interval(*(form_rational_value(x.form),) * 2)[0])
    lo, hi = _dist_interval(x.lower, x.upper)
    if x.source is None:
        return CertifiedReal(lo, hi, x.precision_bits)

    def src(bits: int):
        return _dist_interval(*x.enclosure(bits))

    return CertifiedReal(lo, hi, x.precision_bits, src, None)


@dataclass(frozen=True)
class WeightVector:
    """Positive rational weights summing to one.

    Heights ``max |m_i|**(1/j_i)`` are handled exactly through the integer
    key ``max |m_i|**exponents[i]``, which equals ``height**height_power``.
    """

    weights: tuple[Fraction, ...]

    def __post_init__(self):
        w = tuple(Fraction(x) for x in self.weights)
        object.__setattr__(self, "weights", w)
        if not w:
            raise ValueError("empty weight vector")
        if any(x <= 0 for x in w):
            raise ValueError("weights must be positive")
        if sum(w) != 1:
            raise ValueError(f"weights must sum to 1, got {sum(w)}")

    @classmethod
    def parse(cls, text: str) -> "WeightVector":
        return cls(tuple(Fraction(t.strip()) for t in text.split(",")))

    @classmethod
    def uniform(cls, n: int) -> "WeightVector":
        return cls((Fraction(1, n),) * n)

    def __len__(self):
        return len(self.weights)

    @property
    def n(self) -> int:
        return len(self.weights)

    @property
    def j_min(self) -> Fraction:
        return min(self.weights)

    @property
    def j_max(self) -> Fraction:
        return max(self.weights)

    @property
    def height_power(self) -> int:
        return math.lcm(*(w.numerator for w in self.weights))

    @property
    def exponents(self) -> tuple[int, ...]:
        L = self.height_power
        return tuple(L * w.denominator // w.numerator for w in self.weights)

    def __str__(self) -> str:
        return ",".join(str(w) for w in self.weights)


def height_key(m: Sequence[int], j: WeightVector) -> int:
    """``weighted_height(m, j) ** j.height_power`` as an exact integer."""
    return max(abs(int(mi)) ** e for mi, e in zip(m, j.exponents))


def root_of_key(key: int, L: int) -> CertifiedReal:
    """Certified ``key ** (1/L)``."""
    r = iroot(key, L)
    if r ** L == key:
        return CertifiedReal.exact(r)

    def src(bits: int):
        s = iroot(key << (L * bits), L)
        return Fraction(s, 1 << bits), Fraction(s + 1, 1 << bits)

    return CertifiedReal.from_source(src)


def weighted_height(m: Sequence[int], j: WeightVector) -> CertifiedReal:
    """``max_i |m_i|**(1/j_i)``."""
    if len(m) != j.n:
        raise ValueError("dimension mismatch")
    if not any(m):
        raise ValueError("weighted height of the zero vector is undefined")
    return root_of_key(height_key(m, j), j.height_power)


def rational_power(x: CertifiedReal, e: Fraction) -> CertifiedReal:
    """Certified ``x ** e`` for x > 0 and rational e (outward rounded)."""
    e = Fraction(e)
    p, q = e.numerator, e.denominator

    def at(bits: int):
        lo, hi = x.enclosure(bits + 8)
        if lo <= 0:
            raise PrecisionExhausted("rational_power needs a certified positive base")
        vals = []
        for v, up in ((lo, False), (hi, True)):
            w = v ** p
            # floor/ceil of w**(1/q) on a 2**-(bits+4) grid
            k = bits + 4
            num, den = w.numerator << (q * k), w.denominator
            r = iroot(num // den, q)
            if up and (r ** q) * den != num:
                r += 1
            vals.append(Fraction(r, 1 << k))
        return min(vals), max(vals)

    if x.is_exact:
        v = x.lower ** p
        rn, rd = iroot(v.numerator, q), iroot(v.denominator, q)
        if rn ** q == v.numerator and rd ** q == v.denominator:
            return CertifiedReal.exact(Fraction(rn, rd))
    if x.source is None:
        lo, hi = at(x.precision_bits)
        return CertifiedReal(lo, hi, _achieved(lo, hi, x.precision_bits))
    return CertifiedReal.from_source(at)


@dataclass(frozen=True)
class TargetVector:
    components: tuple[CertifiedReal, ...]
    source_description: tuple[str, ...] = ()

    def __len__(self):
        return len(self.components)

    def __getitem__(self, i) -> CertifiedReal:
        return self.components[i]

    def __iter__(self):
        return iter(self.components)

    @property
    def n(self) -> int:
        return len(self.components)

    @classmethod
    def parse(cls, text: str) -> "TargetVector":
        parts = [p.strip() for p in text.split(",") if p.strip()]
        return cls(tuple(parse_real(p) for p in parts), tuple(parts))

    @classmethod
    def of(cls, values: Iterable) -> "TargetVector":
        comps = tuple(as_certified(v) for v in values)
        return cls(comps, tuple(str(c.lower) if c.is_exact else repr(c) for c in comps))

    def all_rational(self) -> bool:
        return all(c.rational_value() is not None for c in self.components)

    def __str__(self) -> str:
        return ",".join(self.source_description)


_QUAD_RE = re.compile(
    r"^\(\s*([+-]?\d+)\s*([+-])\s*(\d+)\s*\*\s*sqrt\(\s*(\d+)\s*\)\s*\)\s*/\s*([+-]?\d+)\s*(?:([+-])\s*(\d+))?$"
)
_DEC_RE = re.compile(r"^([+-]?\d*\.?\d+(?:[eE][+-]?\d+)?)@(\d+)$")


def parse_real(text: str) -> CertifiedReal:
    """Parse ``rational:p/q``, ``quad:(a+b*sqrt(d))/c[+-k]`` or ``decimal:<digits>@<bits>``."""
    kind, _, body = text.strip().partition(":")
    body = body.replace(" ", "")
    if kind == "rational":
        return CertifiedReal.exact(Fraction(body))
    if kind == "quad":
        mt = _QUAD_RE.match(body)
        if not mt:
            raise ValueError(f"bad quadratic irrational: {text!r}")
        a, sign, b, d, c, osign, off = mt.groups()
        bb = int(b) * (1 if sign == "+" else -1)
        offset = 0 if off is None else int(off) * (1 if osign == "+" else -1)
        return CertifiedReal.quadratic(int(a), bb, int(d), int(c), offset)
    if kind == "decimal":
        mt = _DEC_RE.match(body)
        if not mt:
            raise ValueError(f"bad decimal literal: {text!r}")
        return CertifiedReal.decimal(mt.group(1), int(mt.group(2)))
    raise ValueError(f"unknown real grammar {kind!r} in {text!r}")


def dot(m: Sequence[int], x: Sequence[CertifiedReal]) -> CertifiedReal:
    return _combine([(int(mi), xi) for mi, xi in zip(m, x) if mi])


def dot_residual(m: Sequence[int], theta: TargetVector | Sequence[CertifiedReal]) -> CertifiedReal:
    """``||m . theta||``; raises PrecisionExhausted if positivity cannot be certified."""
    if not any(m):
        raise ValueError("dot_residual of the zero vector")
    s = dot(m, list(theta))
    r = dist_to_nearest_int(s)
    if r.is_exact or r.lower > 0:
        return r
    bits = DEFAULT_BITS
    cap = max_bits()
    while r.lower == 0 and not r.is_exact:
        if bits >= cap or r.source is None:
            raise PrecisionExhausted(
                f"cannot certify ||m.theta|| > 0 for m={tuple(m)} at {cap} bits", where=tuple(m)
            )
        bits = min(2 * bits, cap)
        r = r.refine(bits)
    return r


def certified_compare(a: CertifiedReal, b: CertifiedReal, max_bits_: int | None = None) -> Comparison:
    """Three-valued comparison; refines both sides up to ``max_bits_``."""
    cap = max_bits() if max_bits_ is None else max_bits_
    bits = DEFAULT_BITS
    while True:
        if a.upper < b.lower:
            return Comparison.LESS
        if a.lower > b.upper:
            return Comparison.GREATER
        if a.is_exact and b.is_exact and a.lower == b.lower:
            return Comparison.EQUAL_EXACT
        if bits >= cap or (a.source is None and b.source is None):
            return Comparison.UNDECIDED
        bits = min(2 * bits, cap)
        a, b = a.refine(bits), b.refine(bits)


def fixed_point(x: CertifiedReal, bits: int) -> tuple[int, int]:
    """Integers (t, w) with x in [t, t + w] * 2**-bits."""
    lo, hi = x.enclosure(bits)
    t = math.floor(lo * (1 << bits))
    w = math.ceil(hi * (1 << bits)) - t
    return t, w
