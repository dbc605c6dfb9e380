from fractions import Fraction

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from twistedbad.arith import CertifiedReal, PrecisionExhausted, TargetVector, WeightVector
from twistedbad.badness import (
    classical_badness,
    coordinate_badness,
    dual_badness,
    proposition_bound,
    twisted_badness,
    verify_proposition,
)
from twistedbad.bestapprox import enumerate_best_approximations

SQRT2M1 = "quad:(0+1*sqrt(2))/1-1"
SQRT3M1 = "quad:(0+1*sqrt(3))/1-1"
GOLDEN = "quad:(-1+1*sqrt(5))/2"


def brute_twisted(theta, eta, j, Q):
    """Direct mpmath scan of min_q max_i q**j_i ||q theta_i - eta_i||."""
    mpmath.mp.dps = 40
    best, arg = None, None
    for q in range(1, Q + 1):
        v = max(
            mpmath.mpf(q) ** (mpmath.mpf(w.numerator) / w.denominator) * abs(q * t - e - mpmath.nint(q * t - e))
            for t, e, w in zip(theta, eta, j.weights)
        )
        if best is None or v < best:
            best, arg = v, q
    return best, arg


def mp_sqrt_m1(d):
    mpmath.mp.dps = 40
    return mpmath.sqrt(d) - int(d ** 0.5)


def inside(prof, value):
    lo, hi = float(prof.value.lower), float(prof.value.upper)
    return lo * (1 - 1e-9) - 1e-15 <= float(value) <= hi * (1 + 1e-9) + 1e-15


# ---------------------------------------------------------------------------
# oracles


@pytest.mark.parametrize("eta", [(Fraction(1, 2), Fraction(1, 3)), (Fraction(1, 7), Fraction(5, 11)), (0, 0)])
@pytest.mark.parametrize("j", ["1/2,1/2", "2/3,1/3"])
def test_twisted_matches_brute(eta, j):
    w = WeightVector.parse(j)
    th = TargetVector.parse(f"{SQRT2M1},{SQRT3M1}")
    prof = twisted_badness(th, list(eta), w, 3000)
    want, arg = brute_twisted([mp_sqrt_m1(2), mp_sqrt_m1(3)], [mpmath.mpf(e.numerator if isinstance(e, Fraction) else e) / (e.denominator if isinstance(e, Fraction) else 1) for e in eta], w, 3000)
    assert inside(prof, want)
    assert prof.argmin_q == arg


@given(st.fractions(min_value=0, max_value=1, max_denominator=50), st.integers(1, 400))
@settings(max_examples=30, deadline=None)
def test_twisted_n1_matches_brute(eta, Q):
    th = TargetVector.parse(GOLDEN)
    prof = twisted_badness(th, [eta], WeightVector.parse("1"), Q)
    mpmath.mp.dps = 40
    g = (mpmath.sqrt(5) - 1) / 2
    want, _ = brute_twisted([g], [mpmath.mpf(eta.numerator) / eta.denominator], WeightVector.parse("1"), Q)
    assert inside(prof, want)


@given(st.integers(1, 300), st.integers(301, 900))
@settings(max_examples=20, deadline=None)
def test_monotone_in_Q(q1, q2):
    th = TargetVector.parse(f"{SQRT2M1},{SQRT3M1}")
    eta = [Fraction(1, 3), Fraction(2, 7)]
    a = twisted_badness(th, eta, WeightVector.uniform(2), q1)
    b = twisted_badness(th, eta, WeightVector.uniform(2), q2)
    assert b.value.upper <= a.value.upper


# ---------------------------------------------------------------------------
# examples


def test_eta_equal_theta_is_zero_at_1():
    th = TargetVector.parse(f"{SQRT2M1},{SQRT3M1}")
    prof = twisted_badness(th, th, WeightVector.uniform(2), 100)
    assert prof.value.upper == 0 and prof.argmin_q == 1


def test_eta_zero_equals_classical():
    th = TargetVector.parse(f"{SQRT2M1},{SQRT3M1}")
    w = WeightVector.uniform(2)
    a, b = twisted_badness(th, [0, 0], w, 5000), classical_badness(th, w, 5000)
    assert (a.value.lower, a.value.upper, a.argmin_q) == (b.value.lower, b.value.upper, b.argmin_q)


def test_golden_twisted_half_positive():
    prof = twisted_badness(TargetVector.parse(GOLDEN), [Fraction(1, 2)], WeightVector.parse("1"), 10 ** 5)
    assert prof.value.lower > 0 and prof.certified


def test_classical_rational_zero_at_2():
    prof = classical_badness(TargetVector.of([Fraction(1, 2)]), WeightVector.parse("1"), 10)
    assert prof.value.upper == 0 and prof.argmin_q == 2


def test_golden_classical_min_and_tail():
    # the finite minimum sits at q = 1; the tail approaches 1/sqrt(5) from above
    prof = classical_badness(TargetVector.parse(GOLDEN), WeightVector.parse("1"), 10 ** 5)
    assert prof.argmin_q == 1 and abs(float(prof.value.upper) - 0.3819660113) < 1e-9
    mpmath.mp.dps = 40
    g = (mpmath.sqrt(5) - 1) / 2
    tail = [q * abs(q * g - mpmath.nint(q * g)) for q in (10946, 17711, 28657, 46368, 75025)]
    assert all(0.447213 < float(t) < 0.4473 for t in tail)


def test_sqrt_pair_classical_positive():
    prof = classical_badness(TargetVector.parse(f"{SQRT2M1},{SQRT3M1}"), WeightVector.uniform(2), 10 ** 4)
    assert prof.value.lower > 0


def test_coordinate_examples():
    p = coordinate_badness(Fraction(1, 2), 10)
    assert p.value.upper == 0 and p.argmin_q == 2
    p = coordinate_badness(GOLDEN, 10 ** 5)
    assert abs(float(p.value.upper) - 0.3819660113) < 1e-9
    with pytest.raises(PrecisionExhausted):
        coordinate_badness("decimal:0.707106@12", 10 ** 5)


def test_dual_examples():
    th = TargetVector.parse(f"{SQRT2M1},{SQRT3M1}")
    seq = enumerate_best_approximations(th, WeightVector.uniform(2), 10 ** 4)
    assert dual_badness([0, 0], seq).upper == 0
    one = type(seq)(seq.target, seq.weights, seq.entries[:1], seq.height_bound)
    m = one.entries[0].m
    eta = [Fraction(1, 2 * m[0]), 0] if m[0] else [0, Fraction(1, 2 * m[1])]
    d = dual_badness(eta, one)
    assert d.is_exact and d.lower == Fraction(1, 2)
    rng = np.random.default_rng(7)
    deep = enumerate_best_approximations(th, WeightVector.uniform(2), 10 ** 6)
    for _ in range(5):
        pt = [Fraction(int(x), 1 << 30) for x in rng.integers(1, 1 << 30, size=2)]
        assert dual_badness(pt, deep).lower > 0


def test_proposition_constants():
    c = proposition_bound(Fraction(1, 10), WeightVector.uniform(2))
    assert abs(float(c.c.midpoint) - 0.05 ** 0.5) < 1e-12
    assert abs(float(c.bound.midpoint) - 0.005590169943749474) < 1e-12
    c = proposition_bound(Fraction(1, 2), WeightVector.parse("1"))
    assert c.c.lower == Fraction(1, 4) and c.bound.lower == Fraction(1, 16)


def test_verify_proposition_pass_and_precondition():
    th = TargetVector.parse(f"{SQRT2M1},{SQRT3M1}")
    w = WeightVector.uniform(2)
    seq = enumerate_best_approximations(th, w, 10 ** 5)
    rep = verify_proposition(th, [Fraction(357913941, 1 << 30), Fraction(6421, 1 << 15)], w, seq)
    assert rep.status == "PASS" and rep.q_max >= 1 and not rep.violations
    assert rep.min_lower >= float(rep.constants.bound.lower)
    assert verify_proposition(th, th, w, seq).status == "PRECONDITION_UNMET"
