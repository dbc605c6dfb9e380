"""Construction of the Cantor-type set K(R).

Boxes at level k have side ``R**(-k*j_i)`` along axis i (exact when
``R**j_i`` is an integer, dyadic round-down otherwise).  Each box is cut into
the grid of ``prod_i floor(R**j_i)`` children anchored at its lower corner,
and children meeting a dual thickening ``|m.x + p| < eps`` (m in the level's
height class) or a coordinate thickening ``q|q x_i - p| < eps`` (q in the
level's denominator class) are discarded.

The child filter works row by row: for every index combination along the
first n-1 axes it solves for the (contiguous) run of last-axis indices a
thickening can reach, in exact integer arithmetic over a common
denominator.  That keeps it linear in the number of rows, which is what
makes the R = 2**26 single-box run feasible.
"""
from __future__ import annotations

import enum
import hashlib
import json
import math
import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Iterator, Sequence

import numpy as np

from .arith import (
    CertifiedReal,
    PrecisionExhausted,
    TargetVector,
    WeightVector,
    floor_dyadic,
    iroot,
    max_bits,
    rational_power,
)
from .bestapprox import (
    BestApproxSequence,
    best_approximations_from_cf,
    enumerate_best_approximations,
)

SWEEP_LIMIT = 1 << 36  # largest height bound handed to the exhaustive sweep


class ConstructionViolation(RuntimeError):
    """A STRICT box has fewer admissible children than the target count."""


class Mode(enum.Enum):
    STRICT = "STRICT"
    EXPLORATORY = "EXPLORATORY"


# ---------------------------------------------------------------------------
# exact helpers on R and the weights


def _pow_floor(R: int, e: Fraction) -> int:
    """floor(R**e) for rational e >= 0."""
    return iroot(R ** e.numerator, e.denominator)


def _pow_is_integer(R: int, e: Fraction) -> bool:
    r = _pow_floor(R, e)
    return r ** e.denominator == R ** e.numerator


def log2_certified(R: int) -> CertifiedReal:
    """log2(R) as an enclosure (exact for powers of two)."""
    if R > 0 and R & (R - 1) == 0:
        return CertifiedReal.exact(R.bit_length() - 1)
    import mpmath

    def src(bits: int):
        with mpmath.workprec(bits + 20):
            v = mpmath.iv.log(mpmath.iv.mpf(R)) / mpmath.iv.log(mpmath.iv.mpf(2))
            return _mpf_fraction(v.a), _mpf_fraction(v.b)

    return CertifiedReal.from_source(src)


def _mpf_fraction(x) -> Fraction:
    import mpmath

    man, exp = mpmath.mpf(x).man_exp
    return Fraction(int(man)) * (Fraction(2) ** int(exp))


def _floor_certified(x: CertifiedReal) -> int:
    bits = 64
    cap = max_bits()
    while True:
        lo, hi = x.enclosure(bits)
        if math.floor(lo) == math.floor(hi):
            return math.floor(lo)
        if bits >= cap:
            raise PrecisionExhausted("floor undecidable at the precision cap")
        bits = min(2 * bits, cap)


def _base_count(R: int, j: WeightVector) -> CertifiedReal:
    # R - sum R**j_i; for n = 1 that is identically 0, so the exact child
    # count floor(R) = R is used instead
    if j.n == 1:
        return CertifiedReal.exact(R)
    Rc = CertifiedReal.exact(R)
    total = CertifiedReal.exact(R)
    for w in j.weights:
        total = total - rational_power(Rc, w)
    return total


def _removal_terms(R: int, j: WeightVector) -> CertifiedReal:
    """2**(n+2) 3**n n (1 + log2 R) R**(1-j_min) + 4 n R**(1-j_min)."""
    n = j.n
    r1 = rational_power(CertifiedReal.exact(R), 1 - j.j_min)
    lg = log2_certified(R)
    return r1 * ((2 ** (n + 2)) * (3 ** n) * n) * (lg + 1) + r1 * (4 * n)


def target_count(R: int, j: WeightVector, n: int | None = None) -> int:
    """Number of children kept per box in STRICT mode (may be <= 0)."""
    if n is not None and n != j.n:
        raise ValueError("n does not match the weights")
    return _floor_certified(_base_count(R, j) - _removal_terms(R, j))


def dimension_condition(R: int, j: WeightVector) -> bool:
    """(R - base)/R + 2**(n+2)3**n n(1+log2 R)R**-j_min + 4n R**-j_min + 1/R <= 1/2."""
    lhs = (CertifiedReal.exact(R) - _base_count(R, j) + _removal_terms(R, j) + 1) / R
    bits = 64
    while True:
        lo, hi = lhs.enclosure(bits)
        if hi <= Fraction(1, 2):
            return True
        if lo > Fraction(1, 2):
            return False
        if bits >= max_bits():
            raise PrecisionExhausted("dimension condition undecidable")
        bits *= 2


def r_exceeds_floor(R: int, j: WeightVector) -> bool:
    """R > 4**(1/j_min)."""
    a, b = j.j_min.numerator, j.j_min.denominator
    return R ** a > 4 ** b


def epsilon_admissible(eps: Fraction, R: int, j: WeightVector) -> bool:
    """eps < 1 / (2 R**(2 j_max))."""
    if eps <= 0:
        return False
    x = 1 / (2 * Fraction(eps))
    a, b = j.j_max.numerator, j.j_max.denominator
    return x.numerator ** b > R ** (2 * a) * x.denominator ** b


def default_epsilon(R: int, j: WeightVector) -> Fraction:
    """Largest power of two strictly below 1/(2 R**(2 j_max))."""
    t = 1
    while not epsilon_admissible(Fraction(1, 1 << t), R, j):
        t += 1
    return Fraction(1, 1 << t)


def minimal_strict_R(j: WeightVector, n: int | None = None, require_dimension: bool = True,
                     max_log2: int = 256) -> int:
    """Smallest power of two R meeting the STRICT requirements."""
    for t in range(1, max_log2 + 1):
        R = 1 << t
        if not r_exceeds_floor(R, j):
            continue
        if target_count(R, j) <= 1:
            continue
        if require_dimension and not dimension_condition(R, j):
            continue
        return R
    raise ValueError("no admissible R below 2**%d" % max_log2)


def coordinate_denominator_range(R: int, j: WeightVector, k: int, i: int) -> range:
    """{q : R**((k-1) j_i / 2) <= q < R**(k j_i / 2)} as a range."""
    if k <= 0:
        return range(1, 1)
    a, b = j.weights[i].numerator, j.weights[i].denominator

    def ceil_root(k_):
        # least q >= 1 with q**(2b) >= R**(k_ a)
        X = R ** (k_ * a) if k_ >= 0 else None
        if X is None:
            return 1
        r = iroot(X, 2 * b)
        return max(1, r if r ** (2 * b) == X else r + 1)

    return range(ceil_root(k - 1), ceil_root(k))


def partition_best_approx(seq: BestApproxSequence, R: int, k_max: int | None = None) -> dict[int, list]:
    """Height classes R**(k-1) <= M < R**k of the sequence entries."""
    L = seq.weights.height_power
    RL = R ** L
    out: dict[int, list] = {}
    for e in seq.entries:
        k, thr = 1, RL
        while e.key >= thr:
            k += 1
            thr *= RL
        out.setdefault(k, []).append(e)
    if k_max is not None:
        for k in range(0, k_max + 1):
            out.setdefault(k, [])
    out.setdefault(0, [])
    return out


# ---------------------------------------------------------------------------
# geometry


@dataclass(frozen=True, order=True)
class Hyperrectangle:
    level: int
    lower: tuple[Fraction, ...]
    sides: tuple[Fraction, ...] = field(compare=False)

    @property
    def upper(self) -> tuple[Fraction, ...]:
        return tuple(a + s for a, s in zip(self.lower, self.sides))

    @property
    def center(self) -> tuple[Fraction, ...]:
        return tuple(a + s / 2 for a, s in zip(self.lower, self.sides))

    @property
    def n(self) -> int:
        return len(self.lower)

    def contains_box(self, other: "Hyperrectangle") -> bool:
        return all(a <= b and b + t <= a + s
                   for a, s, b, t in zip(self.lower, self.sides, other.lower, other.sides))

    def contains_point(self, x: Sequence[Fraction]) -> bool:
        return all(a <= xi <= a + s for a, s, xi in zip(self.lower, self.sides, x))

    def key(self) -> tuple:
        return (self.level, self.lower)


class Geometry:
    """Per-level widths and per-axis child counts for a given R and weights."""

    def __init__(self, R: int, j: WeightVector):
        self.R, self.j = R, j
        self.counts = tuple(_pow_floor(R, w) for w in j.weights)
        self.exact_axes = tuple(_pow_is_integer(R, w) for w in j.weights)
        self._widths: dict[int, tuple[Fraction, ...]] = {}

    def widths(self, k: int) -> tuple[Fraction, ...]:
        if k not in self._widths:
            out = []
            for w, N, ex in zip(self.j.weights, self.counts, self.exact_axes):
                if ex:
                    out.append(Fraction(1, N ** k))
                else:
                    P = 64 + k * self.R.bit_length()
                    # floor(R**(-k w) * 2**P) = floor((2**(P b) / R**(k a)) ** (1/b))
                    a, b = w.numerator, w.denominator
                    out.append(Fraction(iroot((1 << (P * b)) // (self.R ** (k * a)), b), 1 << P))
            self._widths[k] = tuple(out)
        return self._widths[k]

    def root(self) -> Hyperrectangle:
        n = self.j.n
        return Hyperrectangle(0, (Fraction(0),) * n, (Fraction(1),) * n)

    def child(self, H: Hyperrectangle, index: Sequence[int]) -> Hyperrectangle:
        w = self.widths(H.level + 1)
        return Hyperrectangle(H.level + 1, tuple(c + a * s for c, a, s in zip(H.lower, index, w)), w)

    def subdivide(self, H: Hyperrectangle) -> list[Hyperrectangle]:
        """All children of H, lexicographic by lower corner."""
        import itertools

        return [self.child(H, idx) for idx in itertools.product(*(range(N) for N in self.counts))]


def subdivide(H: Hyperrectangle, params: "CantorParams") -> list[Hyperrectangle]:
    return params.geometry.subdivide(H)


# ---------------------------------------------------------------------------
# single-box thickening tests (exact rationals)


def _dist_closed_interval(a: Fraction, b: Fraction) -> Fraction:
    """Distance from [a, b] to the nearest integer."""
    if math.floor(b) >= math.ceil(a):
        return Fraction(0)
    return min(a - math.floor(a), math.ceil(b) - b)


def dual_range(H: Hyperrectangle, m: Sequence[int]) -> tuple[Fraction, Fraction]:
    lo = sum((mi * (a if mi >= 0 else a + s) for mi, a, s in zip(m, H.lower, H.sides)), Fraction(0))
    hi = sum((mi * (a + s if mi >= 0 else a) for mi, a, s in zip(m, H.lower, H.sides)), Fraction(0))
    return lo, hi


def intersects_dual_thickening(H: Hyperrectangle, m: Sequence[int], eps) -> bool:
    """Does H meet {x : |m.x + p| < eps} for some integer p?"""
    a, b = dual_range(H, m)
    return _dist_closed_interval(a, b) < Fraction(eps)


def dual_thickenings_meeting(H: Hyperrectangle, m: Sequence[int], eps) -> list[int]:
    """All p with H meeting |m.x + p| < eps."""
    a, b = dual_range(H, m)
    e = Fraction(eps)
    # p in (-eps - b, eps - a)
    p_lo = math.floor(-e - b) + 1
    p_hi = math.ceil(e - a) - 1
    return list(range(p_lo, p_hi + 1))


def intersects_coord_thickening(H: Hyperrectangle, i: int, q: int, eps) -> bool:
    """Does H meet {x : q|q x_i - p| < eps} for some integer p?"""
    if q < 1:
        raise ValueError("q must be positive")
    a, s = H.lower[i], H.sides[i]
    return q * _dist_closed_interval(q * a, q * (a + s)) < Fraction(eps)


# ---------------------------------------------------------------------------
# fractions with bounded denominators


def best_lower_fraction(x: Fraction, Q: int) -> Fraction:
    """Largest fraction <= x with denominator <= Q."""
    x = Fraction(x)
    a, b = math.floor(x), 1
    c, d = a + 1, 1
    if x == a:
        return Fraction(a)
    while True:
        moved = False
        # move the lower end toward x: (a + k c)/(b + k d) <= x
        num, den = x.numerator * b - a * x.denominator, c * x.denominator - x.numerator * d
        k = min(num // den, (Q - b) // d)
        if k > 0:
            a, b = a + k * c, b + k * d
            moved = True
        if Fraction(a, b) == x:
            return x
        # move the upper end toward x: (c + k a)/(d + k b) > x
        num, den = c * x.denominator - x.numerator * d, x.numerator * b - a * x.denominator
        k = -(-num // den) - 1
        k = min(k, (Q - d) // b)
        if k > 0:
            c, d = c + k * a, d + k * b
            moved = True
        if not moved:
            return Fraction(a, b)


def fractions_in_interval(lo: Fraction, hi: Fraction, Q: int) -> Iterator[Fraction]:
    """Reduced fractions p/q in [lo, hi] with 1 <= q <= Q, increasing."""
    if Q < 1 or lo > hi:
        return
    f = best_lower_fraction(lo, Q)
    a, b = f.numerator, f.denominator
    # right neighbour of a/b in the Farey sequence of order Q
    if b == 1:
        d = Q
    else:
        d0 = (-pow(a, -1, b)) % b
        d = d0 + b * ((Q - d0) // b)
    c = (1 + a * d) // b
    if Fraction(a, b) >= lo:
        yield Fraction(a, b)
    while Fraction(c, d) <= hi:
        yield Fraction(c, d)
        t = (Q + b) // d
        a, b, c, d = c, d, t * c - a, t * d - b


def coordinate_hyperplanes(lo: Fraction, hi: Fraction, qrange: range, eps: Fraction):
    """Hyperplanes x = p/q (q in qrange) whose thickening meets [lo, hi].

    Yields (center, q_min, radius) with q_min the least admissible
    denominator of the center, which gives the widest thickening there.
    """
    if len(qrange) == 0:
        return
    qlo, qhi = qrange.start, qrange.stop
    reach = eps / (qlo * qlo)
    for f in fractions_in_interval(lo - reach, hi + reach, qhi - 1):
        b = f.denominator
        qmin = -(-qlo // b) * b
        if qmin >= qhi:
            continue
        r = eps / (qmin * qmin)
        if f - r < hi and f + r > lo:
            yield f, qmin, r


# ---------------------------------------------------------------------------
# parameters


@dataclass(frozen=True)
class CantorParams:
    n: int
    j: WeightVector
    R: int
    epsilon: Fraction
    theta: TargetVector
    mode: Mode = Mode.EXPLORATORY
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "epsilon", Fraction(self.epsilon))
        if isinstance(self.mode, str):
            object.__setattr__(self, "mode", Mode(self.mode.upper()))
        if self.n != self.j.n or self.n != self.theta.n:
            raise ValueError("n, weights and theta disagree in dimension")
        if self.R < 2:
            raise ValueError("R must be at least 2")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if not 0 <= self.seed < 1 << 64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        object.__setattr__(self, "_geometry", Geometry(self.R, self.j))

    @property
    def geometry(self) -> Geometry:
        return self._geometry  # type: ignore[attr-defined]

    def problems(self) -> list[str]:
        """Parameter constraints that fail; STRICT mode requires none."""
        out = []
        if not r_exceeds_floor(self.R, self.j):
            out.append(f"R={self.R} does not exceed 4**(1/j_min)")
        if not epsilon_admissible(self.epsilon, self.R, self.j):
            out.append(f"epsilon={self.epsilon} is not below 1/(2 R**(2 j_max))")
        if self.mode is Mode.STRICT:
            if target_count(self.R, self.j) <= 1:
                out.append("target count is not above 1")
            elif not dimension_condition(self.R, self.j):
                out.append("R fails the dimension condition")
        return out

    def validate(self) -> "CantorParams":
        if self.mode is Mode.STRICT:
            bad = self.problems()
            if bad:
                raise ValueError("; ".join(bad))
        return self

    def to_text(self, depth: int | None = None) -> str:
        lines = [
            f"n={self.n}",
            "j=" + ",".join(str(w) for w in self.j.weights),
            f"R={self.R}",
            f"epsilon={self.epsilon}",
            f"theta={self.theta}",
            f"mode={self.mode.value}",
            f"seed={self.seed}",
        ]
        if depth is not None:
            lines.append(f"depth={depth}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> tuple["CantorParams", int | None]:
        kv = {}
        for raw in text.splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ValueError(f"malformed line: {raw!r}")
            kv[key.strip()] = value.strip()
        j = WeightVector.parse(kv["j"])
        R = int(kv["R"])
        eps = Fraction(kv["epsilon"]) if "epsilon" in kv else default_epsilon(R, j)
        params = cls(
            n=int(kv.get("n", j.n)),
            j=j,
            R=R,
            epsilon=eps,
            theta=TargetVector.parse(kv["theta"]),
            mode=Mode(kv.get("mode", "EXPLORATORY").upper()),
            seed=int(kv.get("seed", 0)),
        )
        depth = int(kv["depth"]) if "depth" in kv else None
        return params, depth


@dataclass(frozen=True)
class LevelData:
    """Height class and denominator ranges that constrain children of level-k boxes."""

    k: int
    ms: tuple[tuple[int, ...], ...]
    qranges: tuple[range, ...]


# ---------------------------------------------------------------------------
# the child filter


_CELLS_PER_CHUNK = 1 << 22


class _BoxScan:
    """Exact integer scan of the child grid of one box.

    Everything is scaled by a common denominator D, so child corners,
    widths and epsilon become integers and each thickening test is a
    floor division.
    """

    def __init__(self, H: Hyperrectangle, geom: Geometry, eps: Fraction, level: LevelData):
        self.H, self.level, self.eps = H, level, Fraction(eps)
        self.n = H.n
        self.N = geom.counts
        self.w = geom.widths(H.level + 1)
        D = 1
        for x in (*H.lower, *self.w, self.eps):
            D = D * x.denominator // math.gcd(D, x.denominator)
        self.D = D
        self.C = [int(c * D) for c in H.lower]
        self.Wd = [int(x * D) for x in self.w]
        self.E = int(self.eps * D)
        mmax = max((max(abs(v) for v in m) for m in level.ms), default=1)
        mag = 8 * (self.n + 2) * (mmax + 2) * (D + max(self.C) + 1)
        self.dtype = np.int64 if mag < 1 << 62 else object
        self.rows = math.prod(self.N[:-1])
        self.row_chunk = max(1, _CELLS_PER_CHUNK // (self.N[-1] + 1))
        self.axis_bad = [self._axis_bad(i) for i in range(self.n)]

    # coordinate thickenings reduce to per-axis index masks
    def coordinate_hits(self, i: int):
        c, w, N = self.H.lower[i], self.w[i], self.N[i]
        for f, q, r in coordinate_hyperplanes(c, c + N * w, self.level.qranges[i], self.eps):
            a_lo = max(0, math.floor((f - r - c) / w))
            a_hi = min(N - 1, math.ceil((f + r - c) / w) - 1)
            yield f, q, a_lo, a_hi

    def _axis_bad(self, i: int) -> np.ndarray:
        bad = np.zeros(self.N[i], dtype=bool)
        for _, _, a_lo, a_hi in self.coordinate_hits(i):
            if a_lo <= a_hi:
                bad[a_lo:a_hi + 1] = True
        return bad

    def _row_index(self, r0: int, r1: int) -> list[np.ndarray]:
        if self.n == 1:
            return []
        idx = np.unravel_index(np.arange(r0, r1), self.N[:-1])
        return [a.astype(self.dtype) for a in idx]

    def dual_runs(self, m: Sequence[int], r0: int, r1: int):
        """Yield (p, valid, a_lo, a_hi): last-axis index runs hit by Delta(m, p) per row."""
        m = tuple(int(v) for v in m)
        flip = m[-1] < 0
        if flip:
            m = tuple(-v for v in m)
        n, D, E = self.n, self.D, self.E
        idx = self._row_index(r0, r1)
        s_lo = np.zeros(r1 - r0, dtype=self.dtype)
        width = 0
        for i in range(n - 1):
            mi = m[i]
            if mi:
                s_lo = s_lo + mi * (self.C[i] + idx[i] * self.Wd[i])
                if mi < 0:
                    s_lo = s_lo + mi * self.Wd[i]
                width += abs(mi) * self.Wd[i]
        s_hi = s_lo + width
        mn, Cn, Wn, Nn = m[-1], self.C[-1], self.Wd[-1], self.N[-1]
        lo_tot = s_lo + mn * Cn
        hi_tot = s_hi + mn * (Cn + Nn * Wn)
        # integer p with the open interval (-E - pD, E - pD) meeting [lo_tot, hi_tot]
        p_min = (-E - hi_tot) // D + 1
        p_max = -((lo_tot - E) // D) - 1
        if len(p_min) == 0:
            return
        span = int(np.max(p_max - p_min)) if len(p_min) else -1
        for t in range(span + 1):
            p = p_min + t
            valid = p <= p_max
            if not np.any(valid):
                continue
            if mn == 0:
                a_lo = np.zeros(len(p), dtype=np.int64)
                a_hi = np.full(len(p), Nn - 1, dtype=np.int64)
            else:
                A = -E - s_hi - p * D
                B = E - s_lo - p * D
                a_lo = (A - mn * Cn) // (mn * Wn)
                a_hi = -((mn * Cn - B) // (mn * Wn)) - 1
                a_lo = np.maximum(a_lo, 0).astype(np.int64)
                a_hi = np.minimum(a_hi, Nn - 1).astype(np.int64)
                valid = valid & (a_lo <= a_hi)
            yield (-p if flip else p), valid, a_lo, a_hi

    def mask_rows(self, r0: int, r1: int) -> np.ndarray:
        """Survivor mask for rows r0..r1 (rows = index tuples over the first n-1 axes)."""
        Nn = self.N[-1]
        diff = np.zeros((r1 - r0, Nn + 1), dtype=np.int32)
        rows = np.arange(r1 - r0)
        for m in self.level.ms:
            for _, valid, a_lo, a_hi in self.dual_runs(m, r0, r1):
                sel = rows[valid]
                np.add.at(diff, (sel, a_lo[valid]), 1)
                np.add.at(diff, (sel, a_hi[valid] + 1), -1)
        hit = np.cumsum(diff[:, :Nn], axis=1) > 0
        hit |= self.axis_bad[-1][None, :]
        if self.n > 1:
            idx = np.unravel_index(np.arange(r0, r1), self.N[:-1])
            row_bad = np.zeros(r1 - r0, dtype=bool)
            for i in range(self.n - 1):
                row_bad |= self.axis_bad[i][idx[i]]
            hit |= row_bad[:, None]
        return ~hit

    def chunks(self) -> Iterator[tuple[int, int]]:
        for r0 in range(0, self.rows, self.row_chunk):
            yield r0, min(self.rows, r0 + self.row_chunk)

    def mask(self) -> np.ndarray:
        parts = [self.mask_rows(r0, r1) for r0, r1 in self.chunks()]
        return np.concatenate(parts, axis=0).reshape(self.N)

    def count(self, workers: int = 1) -> int:
        if workers > 1:
            from concurrent.futures import ThreadPoolExecutor

            with ThreadPoolExecutor(workers) as ex:
                return int(sum(ex.map(lambda c: int(self.mask_rows(*c).sum()), self.chunks())))
        return int(sum(int(self.mask_rows(r0, r1).sum()) for r0, r1 in self.chunks()))

    def dual_child_counts(self, m: Sequence[int]) -> dict[int, int]:
        """Children of H met by Delta(m, p), per p."""
        out: dict[int, int] = {}
        for r0, r1 in self.chunks():
            for p, valid, a_lo, a_hi in self.dual_runs(m, r0, r1):
                pv, cv = p[valid], (a_hi - a_lo + 1)[valid]
                for val in set(pv.tolist()):
                    out[int(val)] = out.get(int(val), 0) + int(np.sum(cv[pv == val]))
        return out


def survivor_mask(H: Hyperrectangle, level: LevelData, params: CantorParams) -> np.ndarray:
    """Boolean array over the child grid (axis order as in the box)."""
    return _BoxScan(H, params.geometry, params.epsilon, level).mask()


def count_survivors(H: Hyperrectangle, level: LevelData, params: CantorParams, workers: int = 1) -> int:
    """Streaming survivor count; never materializes the children."""
    return _BoxScan(H, params.geometry, params.epsilon, level).count(workers)


def filter_children(H: Hyperrectangle, level: LevelData, params: CantorParams) -> list[Hyperrectangle]:
    """Children of H avoiding every thickening of the level, lexicographic by corner."""
    mask = survivor_mask(H, level, params)
    geom = params.geometry
    return [geom.child(H, tuple(int(a) for a in idx)) for idx in np.argwhere(mask)]


# ---------------------------------------------------------------------------
# the tree


@dataclass
class ChildInfo:
    survivors: list[Hyperrectangle]
    selected: list[Hyperrectangle]


def sequence_for_depth(params: CantorParams, depth: int, workers: int = 1) -> BestApproxSequence:
    """Best approximations needed to expand levels 0..depth-1."""
    bound = params.R ** max(depth - 1, 0)
    if depth <= 1:
        bound = Fraction(1, 2)
    if params.n == 1:
        return best_approximations_from_cf(params.theta, bound)
    if bound > SWEEP_LIMIT:
        raise ValueError(f"height bound {bound} is beyond the exhaustive sweep; supply the sequence")
    return enumerate_best_approximations(params.theta, params.j, bound, workers)


class CantorTree:
    """Lazily expanded tree of surviving boxes.

    ``levels[k]`` holds the materialized level-k boxes (all survivors in
    EXPLORATORY mode, the selected ones in STRICT mode).  Boxes beyond the
    materialized depth are reached through ``children``; expansions are
    cached by (level, corner), and recomputing a key yields the same value.
    """

    def __init__(self, params: CantorParams, depth: int, best_approx: BestApproxSequence,
                 branching: int | None):
        self.params = params
        self.depth = depth
        self.best_approx = best_approx
        self.branching = branching
        self.geometry = params.geometry
        self.levels: list[list[Hyperrectangle]] = [[self.geometry.root()]]
        self._cache: dict[tuple, ChildInfo] = {}
        self._level_data: dict[int, LevelData] = {}
        self._partition = partition_best_approx(best_approx, params.R)
        self._mu: dict[tuple, Fraction] = {}

    @property
    def mode(self) -> Mode:
        return self.params.mode

    @property
    def materialized_depth(self) -> int:
        return len(self.levels) - 1

    @property
    def root(self) -> Hyperrectangle:
        return self.levels[0][0]

    def level_data(self, k: int) -> LevelData:
        if k >= self.depth:
            raise ValueError(f"level {k} is beyond the tree depth {self.depth}")
        if k not in self._level_data:
            ms = tuple(e.m for e in self._partition.get(k, []))
            qr = tuple(coordinate_denominator_range(self.params.R, self.params.j, k, i)
                       for i in range(self.params.n))
            self._level_data[k] = LevelData(k, ms, qr)
        return self._level_data[k]

    def expand(self, H: Hyperrectangle) -> ChildInfo:
        key = H.key()
        info = self._cache.get(key)
        if info is None:
            survivors = filter_children(H, self.level_data(H.level), self.params)
            if self.mode is Mode.STRICT:
                if len(survivors) < self.branching:
                    raise ConstructionViolation(
                        f"box at level {H.level} with corner {_fmt(H.lower)} has "
                        f"{len(survivors)} admissible children, fewer than {self.branching}")
                selected = survivors[: self.branching]
            else:
                selected = survivors
            info = ChildInfo(survivors, selected)
            self._cache.setdefault(key, info)
        return info

    def children(self, H: Hyperrectangle) -> list[Hyperrectangle]:
        return self.expand(H).selected

    def materialize(self, limit: int, workers: int = 1) -> None:
        while self.materialized_depth < self.depth:
            current = self.levels[-1]
            if self.branching is not None and len(current) * self.branching > limit:
                break
            if workers > 1:
                from concurrent.futures import ThreadPoolExecutor

                with ThreadPoolExecutor(workers) as ex:
                    infos = list(ex.map(self.expand, current))
            else:
                infos = [self.expand(H) for H in current]
            nxt = [c for info in infos for c in info.selected]
            if len(nxt) > limit:
                break
            self.levels.append(nxt)
        self._assign_mass()

    def _assign_mass(self) -> None:
        # in EXPLORATORY mode a branch with no descendant at the deepest
        # materialized level carries no mass, so each level still sums to 1
        depth = self.materialized_depth
        live = [set() for _ in range(depth + 1)]
        live[depth] = {H.key() for H in self.levels[depth]}
        for k in range(depth - 1, -1, -1):
            live[k] = {H.key() for H in self.levels[k]
                       if any(c.key() in live[k + 1] for c in self.children(H))}
        mu = {H.key(): Fraction(int(H.key() in live[0])) for H in self.levels[0]}
        for k in range(depth):
            for H in self.levels[k]:
                kids = self.children(H)
                alive = sum(1 for c in kids if c.key() in live[k + 1])
                for c in kids:
                    mu[c.key()] = mu[H.key()] / alive if c.key() in live[k + 1] else Fraction(0)
        self._mu = mu

    def mu(self, H: Hyperrectangle) -> Fraction:
        """Weight of a materialized box (any selected box in STRICT mode)."""
        if self.mode is Mode.STRICT:
            return Fraction(1, self.branching ** H.level)
        try:
            return self._mu[H.key()]
        except KeyError:
            raise KeyError("box is not materialized in this tree") from None

    def child_masses(self, H: Hyperrectangle, mass: Fraction) -> list[tuple[Hyperrectangle, Fraction]]:
        """Selected children of H with their weights, given the weight of H.

        Below the materialized depth the mass is split evenly.
        """
        kids = self.children(H)
        if H.level < self.materialized_depth:
            return [(c, self._mu[c.key()]) for c in kids] if self.mode is Mode.EXPLORATORY else \
                [(c, mass / len(kids)) for c in kids]
        return [(c, mass / len(kids)) for c in kids] if kids else []

    def level_statistics(self) -> list[dict]:
        out = []
        for k, boxes in enumerate(self.levels):
            row = {"level": k, "boxes": len(boxes)}
            if k < self.materialized_depth:
                counts = [len(self.expand(H).survivors) for H in boxes]
                row.update(survivors_min=min(counts), survivors_max=max(counts),
                           survivors_mean=sum(counts) / len(counts))
            out.append(row)
        return out


def _fmt(xs: Iterable[Fraction]) -> str:
    return "(" + ", ".join(str(x) for x in xs) + ")"


def build_tree(params: CantorParams, depth: int, *, best_approx: BestApproxSequence | None = None,
               materialize_limit: int = 20000, workers: int = 1) -> CantorTree:
    """Build K(R) down to ``depth``, materializing levels while they stay small."""
    if depth < 0:
        raise ValueError("depth must be non-negative")
    params.validate()
    branching = target_count(params.R, params.j) if params.mode is Mode.STRICT else None
    if best_approx is None:
        best_approx = sequence_for_depth(params, depth, workers)
    tree = CantorTree(params, depth, best_approx, branching)
    tree.materialize(materialize_limit, workers)
    return tree


# ---------------------------------------------------------------------------
# sampling


@dataclass(frozen=True)
class RandomSelector:
    """Random descent; each stream index gives an independent, reproducible path."""

    seed: int
    stream: int = 0


@dataclass(frozen=True)
class SampledPoint:
    point: tuple[Fraction, ...]
    box: Hyperrectangle
    path: tuple[int, ...]
    mass: Fraction


def stream_rng(seed: int, *labels) -> random.Random:
    """A generator determined by the seed and the labels only."""
    text = ":".join(str(x) for x in (seed, *labels))
    return random.Random(int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "big"))


def _descend_random(tree: CantorTree, depth: int, rng: random.Random):
    # depth-first with shuffled children, so dead ends are backtracked
    root = tree.root
    stack = [(root, Fraction(1), (), None)]
    while stack:
        H, mass, path, _ = stack.pop()
        if H.level == depth:
            return H, mass, path
        kids = list(enumerate(tree.child_masses(H, mass)))
        rng.shuffle(kids)
        for idx, (c, cm) in reversed(kids):
            stack.append((c, cm, path + (idx,), None))
    return None


def sample_point(tree: CantorTree, selector, depth: int) -> SampledPoint:
    """Center of a depth-``depth`` box reached by the selector.

    ``selector`` is a RandomSelector or a sequence of child indices.
    """
    if depth < 0 or depth > tree.depth:
        raise ValueError(f"depth must lie in 0..{tree.depth}")
    if isinstance(selector, RandomSelector):
        rng = stream_rng(selector.seed, "sample", selector.stream)
        found = _descend_random(tree, depth, rng)
        if found is None:
            raise ValueError(f"the tree has no surviving box at level {depth}")
        H, mass, path = found
        return SampledPoint(H.center, H, path, mass)
    path = tuple(int(i) for i in selector)
    if len(path) < depth:
        raise ValueError("path is shorter than the requested depth")
    H, mass = tree.root, Fraction(1)
    for level, i in enumerate(path[:depth]):
        kids = tree.child_masses(H, mass)
        if not 0 <= i < len(kids):
            raise IndexError(f"child index {i} out of range at level {level} ({len(kids)} children)")
        H, mass = kids[i]
    return SampledPoint(H.center, H, path[:depth], mass)


def sample_boxes(tree: CantorTree, level: int, count: int, seed: int | None = None) -> list[Hyperrectangle]:
    """Up to ``count`` distinct level boxes, from the materialized level when available."""
    seed = tree.params.seed if seed is None else seed
    if level <= tree.materialized_depth:
        boxes = tree.levels[level]
        if len(boxes) <= count:
            return list(boxes)
        rng = stream_rng(seed, "boxes", level)
        return sorted(rng.sample(boxes, count))
    seen: dict[tuple, Hyperrectangle] = {}
    for s in range(4 * count):
        if len(seen) >= count:
            break
        try:
            H = sample_point(tree, RandomSelector(seed, s), level).box
        except ValueError:
            break
        seen.setdefault(H.key(), H)
    return sorted(seen.values())


# ---------------------------------------------------------------------------
# counting facts for dual and coordinate thickenings


@dataclass(frozen=True)
class FactCheck:
    fact: str
    level: int
    box: str | None
    subject: str
    value: int
    bound: str
    passed: bool


@dataclass
class FactReport:
    level: int
    boxes_checked: int
    checks: list[FactCheck]

    @property
    def failures(self) -> list[FactCheck]:
        return [c for c in self.checks if not c.passed]

    @property
    def passed(self) -> bool:
        return not self.failures

    def summary(self) -> dict:
        worst: dict[str, dict] = {}
        for c in self.checks:
            w = worst.setdefault(c.fact, {"checks": 0, "max_value": 0, "bound": c.bound, "failures": 0})
            w["checks"] += 1
            w["max_value"] = max(w["max_value"], c.value)
            w["failures"] += 0 if c.passed else 1
        return {"level": self.level, "boxes_checked": self.boxes_checked,
                "status": "PASS" if self.passed else "FAIL", "facts": worst}


def fact1_holds(count: int, R: int, n: int) -> bool:
    """count <= 2 3**n (1 + log2 R), decided as 2**(count - 2 3**n) <= R**(2 3**n)."""
    t = 2 * 3 ** n
    return count <= t or (1 << (count - t)) <= R ** t


def verify_fact_counts(tree: CantorTree, k: int, boxes: Sequence[Hyperrectangle] | None = None,
                       max_boxes: int = 200) -> FactReport:
    """Check the counting facts for level-k boxes and their children."""
    p = tree.params
    n, R, eps = p.n, p.R, p.epsilon
    lev = tree.level_data(k)
    if boxes is None:
        boxes = sample_boxes(tree, k, max_boxes)
    checks = [FactCheck("fact1_class_size", k, None, "M_k", len(lev.ms),
                        f"2*3^{n}*(1+log2({R}))", fact1_holds(len(lev.ms), R, n))]
    b2 = (2 ** n) * n
    b3 = 2 * _pow_floor(R, 1 - p.j.j_min)
    bc = [2 * _pow_floor(R, 1 - w) for w in p.j.weights]
    for H in boxes:
        tag = _fmt(H.lower)
        scan = _BoxScan(H, tree.geometry, eps, lev)
        for m in lev.ms:
            ps = dual_thickenings_meeting(H, m, eps)
            checks.append(FactCheck("fact2_dual_per_box", k, tag, str(m), len(ps), str(b2), len(ps) <= b2))
            for pp, c in sorted(scan.dual_child_counts(m).items()):
                checks.append(FactCheck("fact3_children_per_dual", k, tag, f"{m},{pp}", c, str(b3), c <= b3))
        for i in range(n):
            planes = list(coordinate_hyperplanes(H.lower[i], H.upper[i], lev.qranges[i], eps))
            checks.append(FactCheck("coord_planes_per_box", k, tag, f"axis {i}", len(planes), "2",
                                    len(planes) <= 2))
            others = math.prod(N for l, N in enumerate(tree.geometry.counts) if l != i)
            for f, q, a_lo, a_hi in scan.coordinate_hits(i):
                c = max(0, a_hi - a_lo + 1) * others
                checks.append(FactCheck("coord_children_per_plane", k, tag, f"axis {i}, {f} (q={q})", c,
                                        str(bc[i]), c <= bc[i]))
    return FactReport(k, len(boxes), checks)


# ---------------------------------------------------------------------------
# export


def tree_records(tree: CantorTree) -> Iterator[dict]:
    """One record per materialized box; STRICT mode also lists unselected survivors."""
    last = tree.materialized_depth

    def rec(H, selected, mass):
        expanded = selected and H.level < last
        return {
            "level": H.level,
            "lower": [str(x) for x in H.lower],
            "survivor_count": len(tree.expand(H).survivors) if expanded else None,
            "selected": selected,
            "mu": str(mass) if selected else "0",
        }

    yield rec(tree.root, True, tree.mu(tree.root))
    for k in range(last):
        for H in tree.levels[k]:
            info = tree.expand(H)
            chosen = {c.key() for c in info.selected}
            for c in info.survivors:
                sel = c.key() in chosen
                yield rec(c, sel, tree.mu(c) if sel else Fraction(0))


def write_tree_jsonl(tree: CantorTree, fh, header: dict | None = None) -> None:
    if header is not None:
        fh.write(json.dumps({"record": "header", **header}, sort_keys=True) + "\n")
    for r in tree_records(tree):
        fh.write(json.dumps(r, sort_keys=True) + "\n")
