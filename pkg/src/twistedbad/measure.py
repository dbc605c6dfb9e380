"""The natural measure on K(R), covering sums and the dimension lower bound.

Masses are exact rationals.  The covering sum of a cube S at level k adds
the masses of all level-k tree boxes meeting S; it is an upper bound for the
outer measure of S, which is the direction the mass distribution principle
needs.  Comparisons against ``2**n * l**(n - lambda)`` are made in logarithms
with mpmath interval arithmetic.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import mpmath

from .arith import CertifiedReal, PrecisionExhausted, WeightVector, ceil_dyadic, floor_dyadic, max_bits, rational_power
from .cantor import (
    CantorTree,
    Hyperrectangle,
    Mode,
    RandomSelector,
    dimension_condition,
    r_exceeds_floor,
    sample_point,
    stream_rng,
    target_count,
)

GRID_BITS = 40  # cube corners and sides live on a dyadic grid this fine (relative to the level)


@dataclass(frozen=True)
class MeasureWeights:
    tree: CantorTree

    @property
    def branching(self) -> int | None:
        return self.tree.branching


@dataclass(frozen=True)
class Cube:
    lower: tuple[Fraction, ...]
    side: Fraction

    def meets(self, H: Hyperrectangle) -> bool:
        return all(a <= c + self.side and c <= a + s for a, s, c in zip(H.lower, H.sides, self.lower))


@dataclass(frozen=True)
class CubeMeasure:
    level: int
    mass: Fraction
    boxes: int


# ---------------------------------------------------------------------------
# masses


def mu_of_box(weights: MeasureWeights, H: Hyperrectangle) -> Fraction:
    """Mass of a tree box; raises KeyError for boxes outside the tree."""
    tree = weights.tree
    node, mass = tree.root, Fraction(1)
    if H.level == 0:
        if H.key() != node.key():
            raise KeyError("box is not in the tree")
        return mass
    while node.level < H.level:
        nxt = None
        for c, cm in tree.child_masses(node, mass):
            if c.contains_box(H):
                nxt = (c, cm)
                break
        if nxt is None:
            raise KeyError("box is not in the tree")
        node, mass = nxt
    if node.key() != H.key():
        raise KeyError("box is not in the tree")
    return mass


def _pow_compare(l: Fraction, R: int, e: Fraction) -> int:
    """Sign of l - R**e for rational e, exactly."""
    a, b = e.numerator, e.denominator
    # compare l**b with R**a
    lhs = l ** b
    rhs = Fraction(R) ** a
    return (lhs > rhs) - (lhs < rhs)


def level_for_side(l: Fraction, R: int, j: WeightVector) -> int:
    """The k with R**(-(k+1) j_min) < l < R**(-k j_min)."""
    l = Fraction(l)
    if not 0 < l < 1:
        raise ValueError("cube side must lie in (0, 1)")
    jm = j.j_min
    k = 0
    while True:
        upper = _pow_compare(l, R, -k * jm)
        lower = _pow_compare(l, R, -(k + 1) * jm)
        if upper < 0 and lower > 0:
            return k
        if upper >= 0:
            raise ValueError(f"side {l} sits on a bracket endpoint")
        k += 1


def mu_of_cube(weights: MeasureWeights, S: Cube, level: int | None = None) -> CubeMeasure:
    """Covering sum of S over the level-k tree boxes meeting it."""
    tree = weights.tree
    p = tree.params
    k = level_for_side(S.side, p.R, p.j) if level is None else level
    if k > tree.depth:
        raise ValueError(f"level {k} needs a tree of depth {k}, have {tree.depth}")
    total, count = Fraction(0), 0
    stack = [(tree.root, Fraction(1))]
    while stack:
        H, mass = stack.pop()
        if not S.meets(H) or mass == 0:
            continue
        if H.level == k:
            total += mass
            count += 1
            continue
        stack.extend(tree.child_masses(H, mass))
    return CubeMeasure(k, total, count)


# ---------------------------------------------------------------------------
# lambda and the bound


def _fraction(x) -> Fraction:
    man, exp = mpmath.mpf(x).man_exp
    return Fraction(int(man)) * Fraction(2) ** int(exp)


def lambda_of(R: int, j: WeightVector) -> CertifiedReal:
    """(1 + ln 2) / (j_min ln R)."""
    if R < 2:
        raise ValueError("R must be at least 2")
    jm = j.j_min

    def src(bits: int):
        with mpmath.workprec(bits + 30):
            iv = mpmath.iv
            v = (1 + iv.log(2)) * jm.denominator / (jm.numerator * iv.log(iv.mpf(R)))
            return _fraction(v.a), _fraction(v.b)

    return CertifiedReal.from_source(src)


def strict_threshold_met(R: int, j: WeightVector) -> bool:
    return r_exceeds_floor(R, j) and target_count(R, j) > 1 and dimension_condition(R, j)


def dimension_lower_bound(R: int, j: WeightVector, n: int | None = None, *, check: bool = True) -> CertifiedReal:
    """n - lambda(R); refuses R where the construction is not guaranteed."""
    n = j.n if n is None else n
    if n != j.n:
        raise ValueError("n does not match the weights")
    if check and not strict_threshold_met(R, j):
        raise ValueError(f"R={R} is below the threshold where the bound is established")
    return CertifiedReal.exact(n) - lambda_of(R, j)


@dataclass(frozen=True)
class DimensionCheckParams:
    R: int
    j: WeightVector
    k0: int
    l0: Fraction
    lam: CertifiedReal
    n: int
    k_min: int

    @classmethod
    def derive(cls, R: int, j: WeightVector) -> "DimensionCheckParams":
        jm = j.j_min
        # k0: k (j_i - j_min) > j_min for every j_i != j_min
        k0 = 0
        for w in j.weights:
            if w != jm:
                k0 = max(k0, math.floor(jm / (w - jm)) + 1)
        k_min = max(k0 + 1, math.ceil(math.log(R)))
        l0 = floor_dyadic(rational_power(CertifiedReal.exact(R), -k_min * jm).lower, 64 + 2 * k_min * R.bit_length()) / 2
        return cls(R, j, k0, l0, lambda_of(R, j), j.n, k_min)


# ---------------------------------------------------------------------------
# mass distribution check


def _log_iv(x: Fraction):
    return mpmath.iv.log(mpmath.iv.mpf(x.numerator)) - mpmath.iv.log(mpmath.iv.mpf(x.denominator))


def _mass_vs_bound(mass: Fraction, l: Fraction, n: int, lam: CertifiedReal) -> tuple[str, float]:
    """Compare mass with 2**n l**(n - lam); returns (status, mass / l**(n - lam))."""
    if mass == 0:
        return "PASS", 0.0
    bits = 96
    while True:
        with mpmath.workprec(bits):
            iv = mpmath.iv
            lo, hi = lam.enclosure(bits)
            lam_iv = iv.mpf([mpmath.mpf(lo.numerator) / lo.denominator, mpmath.mpf(hi.numerator) / hi.denominator])
            lhs = _log_iv(mass)
            rhs = n * iv.log(2) + (n - lam_iv) * _log_iv(l)
            ratio = float(mpmath.exp(mpmath.mpf(lhs.mid) - (n - mpmath.mpf(lam_iv.mid)) * mpmath.mpf(_log_iv(l).mid)))
            if lhs.b <= rhs.a:
                return "PASS", ratio
            if lhs.a > rhs.b:
                return "FAIL", ratio
        if bits >= max_bits():
            return "INCONCLUSIVE", ratio
        bits *= 2


def _intermediate_ok(mass: Fraction, l: Fraction, k: int, tree: CantorTree) -> bool:
    # mass <= 2**n l**n R**j_min R**k / b**k, the covering-count estimate
    p = tree.params
    b = tree.branching
    rhs = rational_power(CertifiedReal.exact(p.R), p.j.j_min) * (Fraction(2 ** p.n) * l ** p.n * Fraction(p.R ** k, b ** k))
    bits = 64
    while True:
        lo, hi = rhs.enclosure(bits)
        if mass <= lo:
            return True
        if mass > hi:
            return False
        if bits >= max_bits():
            raise PrecisionExhausted("intermediate inequality undecidable")
        bits *= 2


def _count_bound(l: Fraction, k: int, tree: CantorTree) -> CertifiedReal:
    # 2**n l**(n-1) prod_{j_i != j_min} R**(k j_i)
    p = tree.params
    out = CertifiedReal.exact(Fraction(2 ** p.n) * l ** (p.n - 1))
    for w in p.j.weights:
        if w != p.j.j_min:
            out = out * rational_power(CertifiedReal.exact(p.R), k * w)
    return out


def _side_bracket(R: int, j: WeightVector, k: int, cap: Fraction | None, bits: int) -> tuple[Fraction, Fraction]:
    Rc = CertifiedReal.exact(R)
    lo = ceil_dyadic(rational_power(Rc, -(k + 1) * j.j_min).upper, bits) + Fraction(1, 1 << bits)
    hi = floor_dyadic(rational_power(Rc, -k * j.j_min).lower, bits) - Fraction(1, 1 << bits)
    if cap is not None:
        hi = min(hi, cap - Fraction(1, 1 << bits))
    return lo, hi


@dataclass
class MassCheckReport:
    mode: str
    levels: list[int]
    samples: int
    l_range: tuple[str, str] | None
    lam: CertifiedReal
    bound_constant: int
    max_ratio: float
    failures: int
    inconclusive: int
    intermediate_failures: int | None
    count_bound_failures: int
    fallback: str | None
    rows: list[dict] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.failures == 0 and self.inconclusive == 0 and not self.intermediate_failures

    def to_json(self) -> dict:
        return {
            "samples": self.samples,
            "levels": self.levels,
            "l_range": list(self.l_range) if self.l_range else None,
            "lambda": self.lam.to_decimal_string(20),
            "bound_constant": self.bound_constant,
            "max_ratio": self.max_ratio,
            "failures": self.failures,
            "inconclusive": self.inconclusive,
            "intermediate_failures": self.intermediate_failures,
            "count_bound_failures": self.count_bound_failures,
            "mode": self.mode,
            "claim": self.mode == Mode.STRICT.value,
            "fallback": self.fallback,
            "pass": self.passed,
        }


def mass_distribution_check(weights: MeasureWeights, params: DimensionCheckParams, num_samples: int,
                            seed: int, levels: Sequence[int] | None = None) -> MassCheckReport:
    """Sample cubes around tree points and test mu(S) <= 2**n l**(n - lambda)."""
    tree = weights.tree
    p = tree.params
    n = p.n
    if levels is None:
        levels = [params.k_min]
    levels = list(levels)
    for k in levels:
        if k < params.k_min:
            raise ValueError(f"level {k} is below the admissible minimum {params.k_min}")
        if k > tree.depth:
            raise ValueError(f"level {k} needs a tree of depth {k}")
    strict = tree.mode is Mode.STRICT
    report = MassCheckReport(p.mode.value, levels, 0, None, params.lam, 2 ** n, 0.0, 0, 0,
                             0 if strict else None, 0, None)
    if num_samples <= 0:
        return report
    if any(k > tree.materialized_depth for k in levels):
        report.fallback = "sampled branches (levels beyond the materialized depth)"
    l_min = l_max = None
    for k in levels:
        bits = GRID_BITS + 2 * (k + 1) * p.R.bit_length()
        lo, hi = _side_bracket(p.R, p.j, k, params.l0, bits)
        if lo >= hi:
            raise ValueError(f"no admissible cube side at level {k}")
        for s in range(num_samples):
            rng = stream_rng(seed, "cube", k, s)
            # the first cube of each level sits at the lower edge of the bracket
            u = Fraction(0) if s == 0 else Fraction(rng.randrange(1, 1 << 30), 1 << 30)
            l = lo + floor_dyadic((hi - lo) * u, bits)
            pt = sample_point(tree, RandomSelector(seed, f"cube-{k}-{s}"), k).point
            offs = [Fraction(rng.randrange(0, 1 << 30), 1 << 30) for _ in range(n)]
            cube = Cube(tuple(x - l * o for x, o in zip(pt, offs)), l)
            cm = mu_of_cube(weights, cube, k)
            status, ratio = _mass_vs_bound(cm.mass, l, n, params.lam)
            cb = _count_bound(l, k, tree)
            count_ok = cm.boxes <= cb.enclosure(64)[1]
            inter = _intermediate_ok(cm.mass, l, k, tree) if strict else None
            report.samples += 1
            report.max_ratio = max(report.max_ratio, ratio)
            report.failures += status == "FAIL"
            report.inconclusive += status == "INCONCLUSIVE"
            report.count_bound_failures += not count_ok
            if strict and not inter:
                report.intermediate_failures += 1
            l_min = l if l_min is None else min(l_min, l)
            l_max = l if l_max is None else max(l_max, l)
            if status != "PASS" or (strict and not inter) or not count_ok:
                report.rows.append({"level": k, "sample": s, "side": str(l), "mass": str(cm.mass),
                                    "boxes": cm.boxes, "status": status, "ratio": ratio,
                                    "intermediate_ok": inter, "count_ok": count_ok})
    report.l_range = (str(l_min), str(l_max))
    return report


# ---------------------------------------------------------------------------
# empirical dimension


@dataclass(frozen=True)
class DimensionEstimate:
    slope: float
    stderr: float
    ci: tuple[float, float]
    residual: float
    points: int
    reference: float | None
    consistent: bool | None

    def to_json(self) -> dict:
        return {"slope": self.slope, "stderr": self.stderr, "ci": list(self.ci), "residual": self.residual,
                "points": self.points, "reference": self.reference, "consistent": self.consistent}


def fit_loglog(log_l: Sequence[float], log_mu: Sequence[float], reference: float | None = None,
               z: float = 1.96) -> DimensionEstimate:
    """Least-squares slope of log mu against log l with a normal-approximation interval."""
    import numpy as np

    x = np.asarray(log_l, dtype=float)
    y = np.asarray(log_mu, dtype=float)
    if len(x) < 2 or np.ptp(x) == 0:
        raise ValueError("need points at two or more distinct scales")
    A = np.vstack([x, np.ones_like(x)]).T
    coef, res, *_ = np.linalg.lstsq(A, y, rcond=None)
    slope = float(coef[0])
    resid = y - A @ coef
    dof = max(len(x) - 2, 1)
    s2 = float(resid @ resid) / dof
    stderr = math.sqrt(s2 / float(((x - x.mean()) ** 2).sum()))
    ci = (slope - z * stderr, slope + z * stderr)
    consistent = None if reference is None else ci[1] >= reference
    return DimensionEstimate(slope, stderr, ci, float(math.sqrt(float(resid @ resid))), len(x), reference, consistent)


def empirical_dimension(tree: CantorTree, depths: Sequence[int], samples_per_depth: int = 20,
                        seed: int | None = None) -> DimensionEstimate:
    """Fit mu(S) ~ l**s over cubes of half the box size centred on tree boxes."""
    depths = sorted(set(depths))
    if len(depths) < 2:
        raise ValueError("need at least two depths")
    p = tree.params
    seed = p.seed if seed is None else seed
    weights = MeasureWeights(tree)
    xs, ys = [], []
    for d in depths:
        bits = GRID_BITS + 2 * (d + 1) * p.R.bit_length()
        w = floor_dyadic(rational_power(CertifiedReal.exact(p.R), -d * p.j.j_min).lower, bits)
        l = w / 2
        for s in range(samples_per_depth):
            sp = sample_point(tree, RandomSelector(seed, f"dim-{d}-{s}"), d)
            cube = Cube(tuple(c - l / 2 for c in sp.point), l)
            cm = mu_of_cube(weights, cube, level_for_side(l, p.R, p.j))
            if cm.mass > 0:
                xs.append(math.log(l))
                ys.append(math.log(cm.mass.numerator) - math.log(cm.mass.denominator))
    ref = None
    if tree.mode is Mode.STRICT:
        ref = float(dimension_lower_bound(p.R, p.j, check=False))
    return fit_loglog(xs, ys, ref)
