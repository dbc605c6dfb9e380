from fractions import Fraction

import mpmath
import pytest
from hypothesis import given, settings, strategies as st

from twistedbad.arith import (
    CertifiedReal,
    Comparison,
    PrecisionExhausted,
    TargetVector,
    WeightVector,
    certified_compare,
    dist_to_nearest_int,
    dot_residual,
    fixed_point,
    height_key,
    iroot,
    max_bits,
    parse_real,
    rational_power,
    weighted_height,
)


def brute_dist(x):
    return abs(x - round(x))


# ---------------------------------------------------------------------------
# distance to the nearest integer


@pytest.mark.parametrize("x, want", [(Fraction(1, 2), Fraction(1, 2)), (Fraction(3), 0), (Fraction(9, 4), Fraction(1, 4))])
def test_dist_examples(x, want):
    r = dist_to_nearest_int(CertifiedReal.exact(x))
    assert r.is_exact and r.lower == want


@given(st.fractions(min_value=-50, max_value=50))
def test_dist_exact_matches_brute(x):
    r = dist_to_nearest_int(CertifiedReal.exact(x))
    assert r.lower == r.upper == brute_dist(x)


@given(st.integers(-20, 20), st.integers(1, 9).filter(lambda b: b != 0), st.sampled_from([2, 3, 5, 6, 7, 10]),
       st.integers(1, 7))
def test_dist_of_quadratic_encloses_truth(a, b, d, c):
    x = CertifiedReal.quadratic(a, b, d, c)
    mpmath.mp.dps = 60
    truth = (a + b * mpmath.sqrt(d)) / c
    truth_d = abs(truth - mpmath.nint(truth))
    r = dist_to_nearest_int(x).refine(128)
    assert 0 <= r.lower <= r.upper <= Fraction(1, 2)
    lo, hi = mpmath.mpf(r.lower.numerator) / r.lower.denominator, mpmath.mpf(r.upper.numerator) / r.upper.denominator
    assert lo - mpmath.mpf(2) ** -120 <= truth_d <= hi + mpmath.mpf(2) ** -120


# ---------------------------------------------------------------------------
# heights


@pytest.mark.parametrize("m, j, want", [((3, -2), "1/2,1/2", 9), ((1, 0), "1/2,1/2", 1), ((5,), "1", 5)])
def test_weighted_height_examples(m, j, want):
    h = weighted_height(m, WeightVector.parse(j))
    assert h.is_exact and h.lower == want


def test_weighted_height_rejects_zero():
    with pytest.raises(ValueError):
        weighted_height((0, 0), WeightVector.uniform(2))


def test_weight_vector_validation():
    with pytest.raises(ValueError):
        WeightVector.parse("1/2,1/3")
    with pytest.raises(ValueError):
        WeightVector.parse("3/2,-1/2")
    j = WeightVector.parse("2/3,1/3")
    assert (j.j_min, j.j_max, j.n) == (Fraction(1, 3), Fraction(2, 3), 2)


@given(st.lists(st.integers(-30, 30), min_size=2, max_size=2).filter(any))
def test_height_sign_symmetry_and_key(m):
    j = WeightVector.parse("2/3,1/3")
    a, b = weighted_height(m, j), weighted_height([-x for x in m], j)
    assert a.lower == b.lower and a.upper == b.upper
    # key = height ** L exactly; compare against a float evaluation
    L = j.height_power
    h = max(abs(m[0]) ** 1.5, abs(m[1]) ** 3.0)
    assert height_key(m, j) == pytest.approx(h ** L, rel=1e-9)
    assert a.lower <= Fraction(h).limit_denominator(10 ** 9) + Fraction(1, 10 ** 6)


@given(st.integers(0, 10 ** 40), st.integers(1, 7))
def test_iroot(n, k):
    r = iroot(n, k)
    assert r ** k <= n < (r + 1) ** k


@given(st.integers(2, 10 ** 6), st.fractions(min_value=Fraction(-3), max_value=Fraction(3), max_denominator=12))
@settings(max_examples=50)
def test_rational_power_encloses(R, e):
    x = rational_power(CertifiedReal.exact(R), e).refine(100)
    mpmath.mp.dps = 50
    truth = mpmath.mpf(R) ** (mpmath.mpf(e.numerator) / e.denominator)
    lo = mpmath.mpf(x.lower.numerator) / x.lower.denominator
    hi = mpmath.mpf(x.upper.numerator) / x.upper.denominator
    assert lo <= truth * (1 + mpmath.mpf(10) ** -40) and truth <= hi * (1 + mpmath.mpf(10) ** -40)


# ---------------------------------------------------------------------------
# residuals


def test_dot_residual_examples():
    assert dot_residual((1,), TargetVector.of([Fraction(1, 4)])).lower == Fraction(1, 4)
    r = dot_residual((2, 1), TargetVector.of([Fraction(1, 3), Fraction(1, 3)]))
    assert r.is_exact and r.lower == 0
    g = dot_residual((1,), TargetVector.parse("decimal:0.6180339887@30"))
    assert abs(float(g) - 0.3819660113) < 1e-8


def test_dot_residual_sign_symmetry():
    th = TargetVector.parse("quad:(0+1*sqrt(2))/1-1,quad:(0+1*sqrt(3))/1-1")
    for m in [(1, 1), (2, -3), (5, 7)]:
        a, b = dot_residual(m, th).refine(100), dot_residual(tuple(-x for x in m), th).refine(100)
        assert a.lower == b.lower and a.upper == b.upper


def test_dot_residual_exhausts_on_coarse_decimal():
    # 2**-8 around 0.5 cannot certify ||2x|| > 0
    th = TargetVector.parse("decimal:0.5@8")
    with pytest.raises(PrecisionExhausted):
        dot_residual((2,), th)


def test_dot_residual_rejects_zero_vector():
    with pytest.raises(ValueError):
        dot_residual((0,), TargetVector.of([Fraction(1, 3)]))


# ---------------------------------------------------------------------------
# comparisons and refinement


def test_compare_examples():
    third, half = CertifiedReal.exact(Fraction(1, 3)), CertifiedReal.exact(Fraction(1, 2))
    assert certified_compare(third, half, 64) is Comparison.LESS
    assert certified_compare(half, third, 64) is Comparison.GREATER
    assert certified_compare(CertifiedReal.exact(Fraction(2, 4)), half, 64) is Comparison.EQUAL_EXACT


def test_compare_below_resolution_is_undecided():
    cap = max_bits()
    # an opaque real whose width is at the resolution limit
    x = CertifiedReal.opaque(Fraction(1, 3), Fraction(1, 3) + Fraction(1, 1 << cap))
    y = x + CertifiedReal.exact(Fraction(1, 1 << (cap + 5)))
    assert certified_compare(x, y, cap) is Comparison.UNDECIDED


def test_compare_refines_quadratics():
    a = parse_real("quad:(0+1*sqrt(2))/1")
    b = CertifiedReal.exact(Fraction(14142135623730951, 10 ** 16))
    assert certified_compare(a, b, 256) is Comparison.LESS


@given(st.integers(64, 400), st.integers(64, 400))
@settings(max_examples=30)
def test_refinement_is_monotone(b1, b2):
    x = parse_real("quad:(1+1*sqrt(5))/2")
    lo, hi = sorted((b1, b2))
    a, b = x.refine(lo), x.refine(lo).refine(hi)
    assert a.lower <= b.lower <= b.upper <= a.upper
    assert b.width <= Fraction(1, 1 << hi) or b.width <= a.width


def test_refine_meets_precision_contract():
    x = parse_real("quad:(0+1*sqrt(3))/1-1")
    for bits in (64, 128, 300):
        r = x.refine(bits)
        assert r.lower <= r.upper and r.upper - r.lower <= Fraction(1, 1 << bits)


def test_quadratic_arithmetic_stays_exact():
    phi = parse_real("quad:(1+1*sqrt(5))/2")
    psi = parse_real("quad:(1-1*sqrt(5))/2")
    s = phi + psi
    assert s.is_exact and s.lower == 1
    z = phi - phi
    assert z.is_exact and z.lower == 0


def test_parse_grammar():
    assert parse_real("rational:3/7").lower == Fraction(3, 7)
    q = parse_real("quad:(0+1*sqrt(2))/1-1")
    assert abs(float(q) - (2 ** 0.5 - 1)) < 1e-15
    d = parse_real("decimal:0.25@10")
    assert d.lower <= Fraction(1, 4) <= d.upper and d.upper - d.lower <= Fraction(2, 1 << 10)
    for bad in ("float:1.0", "quad:sqrt(2)", "decimal:1.5"):
        with pytest.raises(ValueError):
            parse_real(bad)


def test_fixed_point_encloses():
    x = parse_real("quad:(0+1*sqrt(2))/1-1")
    t, w = fixed_point(x, 62)
    assert Fraction(t, 1 << 62) <= x.refine(200).lower and x.refine(200).upper <= Fraction(t + w, 1 << 62)
