import io
import itertools
import json
from fractions import Fraction

import mpmath
import pytest
from hypothesis import given, settings, strategies as st

from twistedbad.arith import CertifiedReal, TargetVector, WeightVector, height_key, parse_real
from twistedbad.bestapprox import (
    BestApproximation,
    BestApproxSequence,
    IntegerRelationFound,
    PrecisionExhausted,
    TerminatingExpansion,
    best_approximations_from_cf,
    check_integer_relation,
    continued_fraction_denominators,
    enumerate_best_approximations,
    verify_lacunarity,
    verify_minkowski,
    write_sequence_csv,
    write_sequence_jsonl,
)

SQRT2M1 = "quad:(0+1*sqrt(2))/1-1"
SQRT3M1 = "quad:(0+1*sqrt(3))/1-1"


def brute_best(theta_f, j, bound):
    """Best approximations by direct scan in high-precision floats."""
    mpmath.mp.dps = 50
    n = len(theta_f)
    L = j.height_power
    b = [int(bound ** float(w)) + 1 for w in j.weights]
    vecs = []
    for v in itertools.product(*(range(-x, x + 1) for x in b)):
        if not any(v):
            continue
        first = next(x for x in v if x)
        if first < 0:
            continue
        key = height_key(v, j)
        if key > bound ** L:
            continue
        s = sum(mpmath.mpf(a) * t for a, t in zip(v, theta_f))
        vecs.append((key, abs(s - mpmath.nint(s)), v))
    vecs.sort()
    out, best = [], None
    for key, group in itertools.groupby(vecs, key=lambda t: t[0]):
        group = list(group)
        gmin = min(r for _, r, _ in group)
        if best is None or gmin < best:
            out.extend(v for _, r, v in group if r == gmin)
            best = gmin
    return out


# ---------------------------------------------------------------------------
# examples


def test_golden_decimal_bound_15():
    th = TargetVector.parse("decimal:0.6180339887@60")
    seq = enumerate_best_approximations(th, WeightVector.parse("1"), 15)
    assert seq.vectors == [(1,), (2,), (3,), (5,), (8,), (13,)]


def test_sqrt2_bound_30():
    seq = enumerate_best_approximations(TargetVector.parse(SQRT2M1), WeightVector.parse("1"), 30)
    assert seq.vectors == [(1,), (2,), (5,), (12,), (29,)]


def test_half_bound_is_empty():
    seq = enumerate_best_approximations(TargetVector.parse(f"{SQRT2M1},{SQRT3M1}"), WeightVector.uniform(2), Fraction(1, 2))
    assert len(seq) == 0


def test_rational_theta_raises_relation():
    with pytest.raises(IntegerRelationFound):
        enumerate_best_approximations(TargetVector.of([Fraction(1, 3)]), WeightVector.parse("1"), 10)


def test_cf_examples():
    assert continued_fraction_denominators(parse_real("decimal:0.6180339887@60"), 6) == [1, 2, 3, 5, 8, 13]
    assert continued_fraction_denominators(parse_real(SQRT2M1), 5) == [1, 2, 5, 12, 29]
    with pytest.raises(TerminatingExpansion):
        continued_fraction_denominators(CertifiedReal.exact(Fraction(1, 3)), 4)


def test_cf_exhausts_on_coarse_decimal():
    with pytest.raises(PrecisionExhausted):
        continued_fraction_denominators(parse_real("decimal:0.6180339887@20"), 40)


# ---------------------------------------------------------------------------
# oracles


@pytest.mark.parametrize("d", [2, 3, 5, 6, 7, 10, 11])
def test_sweep_matches_cf(d):
    th = TargetVector.parse(f"quad:(0+1*sqrt({d}))/1-{int(d ** 0.5)}")
    a = enumerate_best_approximations(th, WeightVector.parse("1"), 5000).vectors
    b = best_approximations_from_cf(th, 5000).vectors
    assert a == b


@pytest.mark.parametrize("j", ["1/2,1/2", "2/3,1/3"])
def test_sweep_matches_brute_force_n2(j):
    w = WeightVector.parse(j)
    th = TargetVector.parse(f"{SQRT2M1},{SQRT3M1}")
    mpmath.mp.dps = 50
    tf = [mpmath.sqrt(2) - 1, mpmath.sqrt(3) - 1]
    got = enumerate_best_approximations(th, w, 60).vectors
    assert got == brute_best(tf, w, 60)


@given(st.integers(1, 40), st.integers(1, 40), st.integers(2, 200))
@settings(max_examples=25, deadline=None)
def test_sweep_matches_brute_force_rational_pairs(a, b, bound):
    # irrational pair built from sqrt(2) and sqrt(3) with random small offsets
    w = WeightVector.uniform(2)
    th = TargetVector.parse(f"quad:({a}+1*sqrt(2))/{a + 3},quad:({b}+1*sqrt(3))/{b + 5}")
    mpmath.mp.dps = 50
    tf = [(a + mpmath.sqrt(2)) / (a + 3), (b + mpmath.sqrt(3)) / (b + 5)]
    assert enumerate_best_approximations(th, w, bound).vectors == brute_best(tf, w, bound)


def test_residuals_strictly_decrease():
    th = TargetVector.parse(f"{SQRT2M1},{SQRT3M1}")
    seq = enumerate_best_approximations(th, WeightVector.uniform(2), 2000)
    for a, b in zip(seq.entries, seq.entries[1:]):
        assert a.key <= b.key
        assert b.residual.refine(128).upper <= a.residual.refine(128).lower or a.key == b.key


def test_workers_do_not_change_result():
    th = TargetVector.parse(f"{SQRT2M1},{SQRT3M1}")
    w = WeightVector.uniform(2)
    assert enumerate_best_approximations(th, w, 3000, workers=1).vectors == \
        enumerate_best_approximations(th, w, 3000, workers=2).vectors


# ---------------------------------------------------------------------------
# lemma checks


def test_minkowski_passes_on_enumerated():
    for spec, j in [(SQRT2M1, "1"), (f"{SQRT2M1},{SQRT3M1}", "1/2,1/2"), (f"{SQRT2M1},{SQRT3M1}", "2/3,1/3")]:
        seq = enumerate_best_approximations(TargetVector.parse(spec), WeightVector.parse(j), 3000)
        rep = verify_minkowski(seq)
        assert rep.passed and rep.rows


def _fake(entries):
    th = TargetVector.parse(SQRT2M1)
    w = WeightVector.parse("1")
    ents = tuple(
        BestApproximation((h,), CertifiedReal.exact(h), CertifiedReal.exact(r), i + 1, h)
        for i, (h, r) in enumerate(entries)
    )
    return BestApproxSequence(th, w, ents, Fraction(100))


def test_minkowski_fabricated_fail():
    rep = verify_minkowski(_fake([(1, Fraction(1, 2)), (3, Fraction(1, 10))]))
    assert not rep.passed and len(rep.failures) == 1


def test_lacunarity_fibonacci():
    fib = [1, 2, 3, 5, 8, 13, 21, 34, 55, 89, 144]
    rep = verify_lacunarity(_fake([(f, Fraction(1, 2 * f)) for f in fib]))
    assert rep.passed and len(rep.rows) == len(fib) - 6


def test_lacunarity_short_sequence_is_empty():
    rep = verify_lacunarity(_fake([(1, Fraction(1, 3)), (2, Fraction(1, 5))]))
    assert rep.rows == [] and rep.passed


def test_lacunarity_enumerated():
    seq = enumerate_best_approximations(TargetVector.parse(SQRT3M1), WeightVector.parse("1"), 10 ** 5)
    rep = verify_lacunarity(seq)
    assert rep.rows and rep.passed
    # n = 2 needs 19 entries before the first pair; at height 10**6 there are fewer
    th = TargetVector.parse(f"{SQRT2M1},{SQRT3M1}")
    seq = enumerate_best_approximations(th, WeightVector.uniform(2), 10 ** 6)
    assert len(seq) < 19 and verify_lacunarity(seq).passed


# ---------------------------------------------------------------------------
# integer relations


def test_relation_examples():
    r = check_integer_relation(TargetVector.of([Fraction(1, 2), Fraction(1, 3)]), 3)
    assert r.status == "RELATION" and r.v == (2, 0) and r.p == -1
    r = check_integer_relation(TargetVector.parse(f"{SQRT2M1},{SQRT3M1}"), 10)
    assert r.status == "INDEPENDENT_UP_TO_BOUND"
    r = check_integer_relation(TargetVector.parse("quad:(-1+1*sqrt(5))/2,quad:(3-1*sqrt(5))/2"), 3)
    assert r.status == "RELATION" and r.v == (1, 1) and r.p == -1


# ---------------------------------------------------------------------------
# export


def test_export_formats_are_deterministic():
    th = TargetVector.parse(SQRT2M1)
    seq = enumerate_best_approximations(th, WeightVector.parse("1"), 100)
    a, b = io.StringIO(), io.StringIO()
    write_sequence_csv(seq, a, "cfg")
    write_sequence_csv(seq, b, "cfg")
    assert a.getvalue() == b.getvalue()
    lines = a.getvalue().splitlines()
    assert lines[0] == "# cfg" and lines[1] == "index,m,height,residual"
    assert [ln.split(",")[1] for ln in lines[2:]] == ["1", "2", "5", "12", "29", "70"]
    j = io.StringIO()
    write_sequence_jsonl(seq, j, {"tool": "x"})
    recs = [json.loads(x) for x in j.getvalue().splitlines()]
    assert recs[0] == {"tool": "x"} and recs[-1]["m"] == "70"
