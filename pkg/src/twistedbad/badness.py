"""Twisted and classical badness functionals over finite q-ranges.

Scans evaluate ``max_i q**j_i * ||q theta_i - eta_i||`` for every q in a
range with 62-bit fixed-point residuals (numpy, exact modular arithmetic)
and float powers carrying an explicit relative margin.  Any q whose lower
bound collapses to zero is re-evaluated with certified arithmetic.
"""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .arith import (
    CertifiedReal,
    Comparison,
    PrecisionExhausted,
    TargetVector,
    WeightVector,
    as_certified,
    certified_compare,
    dist_to_nearest_int,
    dot,
    fixed_point,
    floor_dyadic,
    format_decimal,
    max_bits,
    rational_power,
)
from .bestapprox import BestApproxSequence

FIXED_BITS = 62
_SCALE = 1 << FIXED_BITS
_HALF = _SCALE // 2
_MASK = np.uint64(_SCALE - 1)
_CHUNK = 1 << 20
_REL = 1e-12


@dataclass(frozen=True)
class BadnessProfile:
    functional: str
    value: CertifiedReal
    argmin_q: int
    scan_bound: int
    certified: bool = True

    def to_json(self) -> dict:
        return {
            "functional": self.functional,
            "Q": self.scan_bound,
            "value": format_decimal(self.value.midpoint, 17),
            "value_lower": str(self.value.lower),
            "value_upper": str(self.value.upper),
            "argmin_q": self.argmin_q,
            "certified": self.certified,
        }


@dataclass(frozen=True)
class PropositionConstants:
    gamma: CertifiedReal
    c: CertifiedReal
    bound: CertifiedReal


def as_point(eta, n: int | None = None) -> TargetVector:
    if isinstance(eta, TargetVector):
        return eta
    if isinstance(eta, str):
        return TargetVector.parse(eta)
    pt = TargetVector.of(eta)
    if n is not None and pt.n != n:
        raise ValueError("point has the wrong dimension")
    return pt


# ---------------------------------------------------------------------------
# scanning core


class _Scanner:
    def __init__(self, theta: TargetVector, eta: TargetVector, j: WeightVector):
        if not (theta.n == eta.n == j.n):
            raise ValueError("dimension mismatch")
        self.theta, self.eta, self.j = theta, eta, j
        self.T, self.Wt, self.E, self.We = [], [], [], []
        for th, et in zip(theta, eta):
            t, wt = fixed_point(th, FIXED_BITS)
            e, we = fixed_point(et, FIXED_BITS)
            self.T.append(t % _SCALE)
            self.Wt.append(wt)
            self.E.append(e % _SCALE)
            self.We.append(we)
        self.jf = [float(w) for w in j.weights]

    def bounds(self, q: np.ndarray):
        """Float lower/upper bounds of the functional for each q."""
        qf = q.astype(np.float64)
        lo = np.zeros(q.size)
        hi = np.zeros(q.size)
        for i in range(self.j.n):
            acc = q.astype(np.uint64) * np.uint64(self.T[i]) + np.uint64(_SCALE - self.E[i])
            x = (acc & _MASK).astype(np.int64)
            d = np.minimum(x, _SCALE - x)
            err = q * self.Wt[i] + self.We[i]
            dlo = np.maximum(d - err, 0)
            dhi = np.minimum(d + err, _HALF)
            p = qf ** self.jf[i]
            lo = np.maximum(lo, dlo.astype(np.float64) / _SCALE * p)
            hi = np.maximum(hi, dhi.astype(np.float64) / _SCALE * p)
        return lo * (1 - _REL), hi * (1 + _REL)

    def residual(self, q: int, i: int) -> CertifiedReal:
        return dist_to_nearest_int(dot((q, -1), [self.theta[i], self.eta[i]]))

    def value_enclosure(self, q: int, bits: int = 128) -> tuple[Fraction, Fraction]:
        """Certified enclosure of the functional at a single q."""
        lo = hi = Fraction(0)
        cap = max_bits()
        for i in range(self.j.n):
            r = self.residual(q, i)
            b = bits
            while r.lower == 0 and not r.is_exact:
                if b >= cap or r.source is None:
                    break
                b = min(2 * b, cap)
                r = r.refine(b)
            p = rational_power(CertifiedReal.exact(q), self.j.weights[i]).refine(bits)
            rl, rh = r.refine(bits).lower, r.refine(bits).upper
            lo, hi = max(lo, rl * p.lower), max(hi, rh * p.upper)
        return lo, hi

    def scan(self, q_lo: int, q_hi: int, workers: int = 1):
        """Yield (q array, lower, upper) chunks covering q_lo..q_hi."""
        starts = range(q_lo, q_hi + 1, _CHUNK)

        def work(s):
            q = np.arange(s, min(s + _CHUNK, q_hi + 1), dtype=np.int64)
            lo, hi = self.bounds(q)
            return q, lo, hi

        if workers > 1:
            with ThreadPoolExecutor(workers) as pool:
                yield from pool.map(work, starts)
        else:
            for s in starts:
                yield work(s)


def _profile(name: str, sc: _Scanner, Q: int, workers: int = 1) -> BadnessProfile:
    if Q < 1:
        raise ValueError("Q must be >= 1")
    best_lo = None
    best_hi = None
    arg = None
    for q, lo, hi in sc.scan(1, Q, workers):
        zero = np.nonzero(lo <= 0)[0]
        for idx in zero.tolist():
            qq = int(q[idx])
            elo, ehi = sc.value_enclosure(qq)
            if elo == 0 and ehi > 0:
                raise PrecisionExhausted(f"cannot certify the {name} functional at q={qq}", where=qq)
            lo[idx], hi[idx] = float(elo), float(ehi)
            if ehi == 0:
                lo[idx] = hi[idx] = 0.0
        k = int(np.argmin(hi))
        cl, ch = float(lo.min()), float(hi[k])
        if best_hi is None or ch < best_hi:
            best_hi, arg = ch, int(q[k])
        best_lo = cl if best_lo is None else min(best_lo, cl)
    value = CertifiedReal.opaque(Fraction(min(best_lo, best_hi)), Fraction(best_hi))
    rel = (value.upper - value.lower) / value.upper if value.upper else 0
    return BadnessProfile(name, value, arg, Q, certified=rel <= Fraction(1, 10 ** 9))


def twisted_badness(theta: TargetVector, eta, j: WeightVector, Q: int, workers: int = 1) -> BadnessProfile:
    """min over 1 <= q <= Q of max_i q**j_i * ||q theta_i - eta_i||."""
    sc = _Scanner(theta, as_point(eta, theta.n), j)
    return _profile("twisted", sc, Q, workers)


def classical_badness(theta: TargetVector, j: WeightVector, Q: int, workers: int = 1) -> BadnessProfile:
    """min over 1 <= q <= Q of max_i q**j_i * ||q theta_i||."""
    sc = _Scanner(theta, TargetVector.of([0] * theta.n), j)
    return _profile("classical", sc, Q, workers)


def coordinate_badness(eta_i, Q: int, workers: int = 1) -> BadnessProfile:
    """min over 1 <= q <= Q of q * ||q eta_i||."""
    x = as_certified(eta_i) if not isinstance(eta_i, str) else TargetVector.parse(eta_i)[0]
    sc = _Scanner(TargetVector.of([x]), TargetVector.of([0]), WeightVector((Fraction(1),)))
    return _profile("coordinate", sc, Q, workers)


def dual_badness(eta, seq: BestApproxSequence) -> CertifiedReal:
    """min over the sequence of ||m_nu . eta||."""
    if not seq.entries:
        raise ValueError("empty best-approximation sequence")
    pt = as_point(eta, seq.weights.n)
    vals = [dist_to_nearest_int(dot(e.m, list(pt))).refine(96) for e in seq.entries]
    lo = min(v.lower for v in vals)
    hi = min(v.upper for v in vals)
    if lo == hi:
        return CertifiedReal.exact(lo)
    return CertifiedReal.opaque(lo, hi)


def proposition_bound(gamma, j: WeightVector, n: int | None = None) -> PropositionConstants:
    """gamma, c = min_i (gamma/2)**j_i and the floor gamma*c/(2n)."""
    n = j.n if n is None else n
    g = as_certified(gamma)
    if not (g.lower > 0 and g.upper < 1):
        raise ValueError("gamma must lie in (0, 1)")
    half = g * Fraction(1, 2)
    powers = [rational_power(half, w).refine(128) for w in j.weights]
    c_lo, c_hi = min(p.lower for p in powers), min(p.upper for p in powers)
    c = CertifiedReal.exact(c_lo) if c_lo == c_hi else CertifiedReal.opaque(c_lo, c_hi)
    g128 = g.refine(128)
    bl = g128.lower * c.lower / (2 * n)
    bh = g128.upper * c.upper / (2 * n)
    bound = CertifiedReal.exact(bl) if bl == bh else CertifiedReal.opaque(bl, bh)
    return PropositionConstants(g, c, bound)


@dataclass
class PropositionReport:
    status: str  # PASS | FAIL | PRECONDITION_UNMET
    gamma: Fraction | None = None
    constants: PropositionConstants | None = None
    q_max: int = 0
    min_lower: float | None = None
    argmin_q: int | None = None
    violations: list[int] = field(default_factory=list)
    inconclusive: list[int] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.status == "PASS"

    def to_json(self) -> dict:
        return {
            "status": self.status,
            "gamma": None if self.gamma is None else str(self.gamma),
            "floor": None if self.constants is None else format_decimal(self.constants.bound.midpoint, 17),
            "q_max": self.q_max,
            "min_lower": self.min_lower,
            "argmin_q": self.argmin_q,
            "violations": self.violations,
            "inconclusive": self.inconclusive,
        }


def covered_q_max(gamma: Fraction, seq: BestApproxSequence) -> int:
    """Largest q with q <= gamma / (2 zeta_N), zeta_N the deepest residual."""
    zeta = seq.entries[-1].residual.refine(128)
    return int(Fraction(gamma) / (2 * zeta.upper))


def verify_proposition(theta: TargetVector, eta, j: WeightVector, seq: BestApproxSequence,
                       gamma=None, workers: int = 1) -> PropositionReport:
    """Check the twisted functional stays above gamma*c/(2n) on the covered q-range."""
    pt = as_point(eta, theta.n)
    dual = dual_badness(pt, seq)
    if gamma is None:
        if dual.lower <= 0:
            return PropositionReport("PRECONDITION_UNMET")
        gamma = floor_dyadic(dual.lower * (1 - Fraction(1, 1 << 20)), 80)
    gamma = Fraction(gamma)
    if not (0 < gamma < dual.lower):
        return PropositionReport("PRECONDITION_UNMET", gamma)
    consts = proposition_bound(gamma, j, theta.n)
    floor_hi = float(consts.bound.upper)
    q_max = covered_q_max(gamma, seq)
    if q_max < 1:
        # gamma too small for the sequence depth: the covered range is empty
        return PropositionReport("PRECONDITION_UNMET", gamma, consts, q_max)
    rep = PropositionReport("PASS", gamma, consts, q_max)
    sc = _Scanner(theta, pt, j)
    best = None
    for q, lo, _ in sc.scan(1, q_max, workers):
        k = int(np.argmin(lo))
        if best is None or lo[k] < best[0]:
            best = (float(lo[k]), int(q[k]))
        suspects = np.nonzero(lo <= floor_hi * (1 + 1e-9))[0]
        for idx in suspects.tolist():
            qq = int(q[idx])
            elo, ehi = sc.value_enclosure(qq, 160)
            val = CertifiedReal.opaque(elo, ehi)
            cmp = certified_compare(val, consts.bound, max_bits())
            if cmp is Comparison.GREATER or elo > consts.bound.upper:
                continue
            if ehi <= consts.bound.lower:
                rep.violations.append(qq)
            else:
                rep.inconclusive.append(qq)
    rep.min_lower, rep.argmin_q = best
    if rep.violations:
        rep.status = "FAIL"
    elif rep.inconclusive:
        rep.status = "INCONCLUSIVE"
    return rep


def profiles_json(profiles: Sequence[BadnessProfile]) -> str:
    return "\n".join(json.dumps(p.to_json(), sort_keys=True) for p in profiles) + "\n"
