import math
from fractions import Fraction

import numpy as np
import pytest


def _encloses(iv, q: Fraction) -> bool:
    return Fraction(float(iv.lo)) <= q <= Fraction(float(iv.hi))


# --- Tests for Interval arithmetic ---

def test_rational_enclosure_is_tight():
    from models.rigor import Interval
    """1/3 is not a float; its enclosure is one ulp wide and contains it."""
    third = Interval.from_rational(1, 3)
    assert _encloses(third, Fraction(1, 3))
    assert float(third.hi) == np.nextafter(float(third.lo), np.inf)


def test_exact_float_stays_a_point():
    from models.rigor import Interval
    half = Interval.from_fraction(Fraction(1, 2))
    assert float(half.lo) == float(half.hi) == 0.5


def test_arithmetic_encloses_exact_rationals():
    from models.rigor import Interval
    """Sums, products and quotients of rational enclosures contain the exact result."""
    a = Interval.from_rational(1, 3)
    b = Interval.from_rational(2, 7)
    assert _encloses(a + b, Fraction(1, 3) + Fraction(2, 7))
    assert _encloses(a - b, Fraction(1, 3) - Fraction(2, 7))
    assert _encloses(a * b, Fraction(2, 21))
    assert _encloses(a / b, Fraction(7, 6))
    assert _encloses(1.0 - a, Fraction(2, 3))


def test_vectorized_operations_keep_shape():
    from models.rigor import Interval
    x = Interval(np.array([0.0, 1.0, 2.0]), np.array([0.5, 1.5, 2.5]))
    y = x * x + 1.0
    assert y.shape == (3,)
    assert np.all(y.lo <= np.array([1.0, 2.0, 5.0]))
    assert np.all(y.hi >= np.array([1.25, 3.25, 7.25]))


def test_division_by_zero_interval_raises():
    from models.rigor import Interval
    from utils.exceptions import DomainError
    with pytest.raises(DomainError):
        Interval(1.0) / Interval(-1.0, 1.0)


def test_inverted_or_infinite_endpoints_rejected():
    from models.rigor import Interval
    from utils.exceptions import DomainError
    with pytest.raises(DomainError):
        Interval(1.0, 0.0)
    with pytest.raises(DomainError):
        Interval(0.0, math.inf)


def test_even_power_of_straddling_interval():
    from models.rigor import Interval, pow_int
    sq = pow_int(Interval(-2.0, 1.0), 2)
    assert float(sq.lo) == 0.0
    assert float(sq.hi) >= 4.0


def test_negative_power_is_reciprocal():
    from models.rigor import Interval, pow_int
    inv = pow_int(Interval(2.0, 4.0), -1)
    assert float(inv.lo) <= 0.25 and float(inv.hi) >= 0.5


def test_abs_and_mig():
    from models.rigor import Interval
    x = Interval(-3.0, 2.0)
    assert float(abs(x).lo) == 0.0
    assert float(abs(x).hi) == 3.0
    assert float(Interval(2.0, 5.0).mig()) == 2.0


def test_hull_and_intersect():
    from models.rigor import Interval
    from utils.exceptions import DomainError
    a, b = Interval(0.0, 1.0), Interval(0.5, 2.0)
    assert float(Interval.hull(a, b).hi) == 2.0
    assert float(a.intersect(b).lo) == 0.5
    with pytest.raises(DomainError):
        a.intersect(Interval(3.0, 4.0))


def test_sum_encloses_exact_sum():
    from models.rigor import Interval
    vals = [Fraction(1, k) for k in range(1, 200)]
    iv = Interval(np.array([float(Interval.from_fraction(v).lo) for v in vals]),
                  np.array([float(Interval.from_fraction(v).hi) for v in vals]))
    assert _encloses(iv.sum(), sum(vals))


# --- Tests for elementary functions ---

def test_sin_cos_enclose_point_values():
    from models.rigor import Interval, iv_cos, iv_sin
    xs = np.linspace(-10.0, 10.0, 401)
    s = iv_sin(Interval.point(xs))
    c = iv_cos(Interval.point(xs))
    assert np.all(s.lo <= np.sin(xs)) and np.all(np.sin(xs) <= s.hi)
    assert np.all(c.lo <= np.cos(xs)) and np.all(np.cos(xs) <= c.hi)


def test_sin_reaches_extremum_inside_interval():
    from models.rigor import Interval, iv_sin
    s = iv_sin(Interval(1.0, 2.0))
    assert float(s.hi) == 1.0
    assert float(s.lo) <= math.sin(1.0)


def test_wide_argument_gives_full_range():
    from models.rigor import Interval, iv_cos
    c = iv_cos(Interval(0.0, 10.0))
    assert float(c.lo) == -1.0 and float(c.hi) == 1.0


def test_sin_of_pi_encloses_zero():
    from models.rigor import PI, iv_sin
    assert bool(iv_sin(PI).contains(0.0))


def test_exp_encloses_and_overflow_raises():
    from models.rigor import Interval, iv_exp
    from utils.exceptions import DomainError
    e = iv_exp(Interval(1.0))
    assert float(e.lo) <= math.e <= float(e.hi)
    with pytest.raises(DomainError):
        iv_exp(Interval(1000.0))


def test_functional_forms():
    from models.rigor import Interval, iv_arith, iv_elem
    from utils.exceptions import DomainError
    a, b = Interval(1.0), Interval(2.0)
    assert float(iv_arith("add", a, b).lo) == 3.0
    assert float(iv_arith("neg", a).hi) == -1.0
    assert float(iv_elem("pow_int", b, 3).hi) == 8.0
    with pytest.raises(DomainError):
        iv_arith("mul", a)
    with pytest.raises(DomainError):
        iv_elem("tan", a)
    with pytest.raises(DomainError):
        iv_elem("pow_int", a)


# --- Tests for random nesting and containment ---

def _random_intervals(rng, n, lo=-4.0, hi=4.0):
    from models.rigor import Interval
    a = rng.uniform(lo, hi, n)
    b = rng.uniform(lo, hi, n)
    return Interval(np.minimum(a, b), np.maximum(a, b))


def _random_points(rng, iv):
    xs = iv.lo + rng.uniform(0.0, 1.0, iv.lo.shape) * (iv.hi - iv.lo)
    return np.clip(xs, iv.lo, iv.hi)


def _shrink(rng, iv):
    """A random sub-interval cutting between 1% and 40% off each side."""
    from models.rigor import Interval
    width = iv.hi - iv.lo
    lo = iv.lo + rng.uniform(0.01, 0.4, width.shape) * width
    hi = iv.hi - rng.uniform(0.01, 0.4, width.shape) * width
    return Interval(lo, hi)


def _away_from_zero(rng, n):
    from models.rigor import Interval
    sign = np.where(rng.uniform(size=n) < 0.5, -1.0, 1.0)
    a = rng.uniform(0.25, 3.0, n)
    b = rng.uniform(0.25, 3.0, n)
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    return Interval(np.where(sign > 0, lo, -hi), np.where(sign > 0, hi, -lo))


@pytest.mark.parametrize("op", ["add", "sub", "mul", "div", "neg", "abs"])
def test_arith_is_inclusion_monotone(op):
    from models.rigor import iv_arith
    rng = np.random.default_rng(11)
    outer_a = _random_intervals(rng, 2000)
    outer_b = _away_from_zero(rng, 2000) if op == "div" else _random_intervals(rng, 2000)
    inner = iv_arith(op, _shrink(rng, outer_a), _shrink(rng, outer_b))
    outer = iv_arith(op, outer_a, outer_b)
    assert np.all(inner.subset(outer))


@pytest.mark.parametrize("fn,n", [("sin", None), ("cos", None), ("exp", None),
                                  ("pow_int", 2), ("pow_int", 3), ("pow_int", -2)])
def test_elementary_is_inclusion_monotone(fn, n):
    from models.rigor import iv_elem
    rng = np.random.default_rng(12)
    outer = _away_from_zero(rng, 2000) if n is not None and n < 0 \
        else _random_intervals(rng, 2000)
    assert np.all(iv_elem(fn, _shrink(rng, outer), n).subset(iv_elem(fn, outer, n)))


@pytest.mark.parametrize("op", ["add", "sub", "mul", "div"])
def test_arith_contains_random_points(op):
    """The correctly rounded point result never leaves an outward-rounded enclosure."""
    from models.rigor import iv_arith
    rng = np.random.default_rng(21)
    a = _random_intervals(rng, 10_000)
    b = _away_from_zero(rng, 10_000) if op == "div" else _random_intervals(rng, 10_000)
    x, y = _random_points(rng, a), _random_points(rng, b)
    values = {"add": x + y, "sub": x - y, "mul": x * y, "div": x / y}[op]
    assert np.all(iv_arith(op, a, b).contains(values))


@pytest.mark.parametrize("fn,exact", [("sin", np.sin), ("cos", np.cos), ("exp", np.exp)])
def test_elementary_contains_random_points(fn, exact):
    from models.rigor import iv_elem
    rng = np.random.default_rng(22)
    a = _random_intervals(rng, 10_000)
    assert np.all(iv_elem(fn, a).contains(exact(_random_points(rng, a))))


def test_integer_power_contains_random_points():
    from models.rigor import iv_elem
    rng = np.random.default_rng(23)
    a = _random_intervals(rng, 10_000, -2.0, 2.0)
    xs = _random_points(rng, a)
    for n in (2, 3, 5):
        enc = iv_elem("pow_int", a, n)
        for k in range(0, 10_000, 7):
            q = Fraction(float(xs[k])) ** n
            assert Fraction(float(enc.lo[k])) <= q <= Fraction(float(enc.hi[k]))


# --- Tests for floating error bookkeeping ---

def test_upward_helpers_dominate():
    from models.rigor import gamma, mul_up, sum_up, UNIT_ROUNDOFF
    vals = [0.1] * 10
    assert Fraction(sum_up(vals)) >= sum(Fraction(v) for v in vals)
    assert Fraction(mul_up(0.1, 0.3)) >= Fraction(0.1) * Fraction(0.3)
    assert gamma(10) >= 10 * UNIT_ROUNDOFF


def test_kahan_cumsum_error_bound_holds():
    from models.rigor import kahan_cumsum
    """Every computed prefix is within err of the exact rational prefix."""
    rng = np.random.default_rng(7)
    xs = rng.standard_normal(2000) * 10.0 ** rng.integers(-8, 8, 2000)
    sums, err = kahan_cumsum(xs)
    exact = Fraction(0)
    for x, s in zip(xs, sums):
        exact += Fraction(float(x))
        assert abs(Fraction(float(s)) - exact) <= Fraction(err)


def test_kahan_cumsum_columns():
    from models.rigor import kahan_cumsum
    xs = np.ones((5, 3))
    sums, err = kahan_cumsum(xs)
    assert sums.shape == (5, 3)
    assert np.all(sums[-1] == 5.0)
    assert np.shape(err) == (3,)


def test_kahan_cumsum_empty():
    from models.rigor import kahan_cumsum
    sums, err = kahan_cumsum([])
    assert sums.size == 0 and err == 0.0


# --- Tests for ErrorVector ---

def test_error_vector_radius_accumulates():
    from models.rigor import ErrorVector
    a = ErrorVector(np.array([1.0, -2.0]), 1e-10)
    b = ErrorVector(np.array([0.5, 0.5]), 2e-10)
    c = a + b
    assert np.allclose(c.mid, [1.5, -1.5])
    assert c.rad >= 3e-10
    assert a.scale(-2.0).rad >= 2e-10


def test_vector_norm_bounds():
    from models.rigor import ErrorVector, vec_norm_bound
    from utils.exceptions import DomainError
    v = ErrorVector(np.array([3.0, -4.0]), 0.5)
    assert vec_norm_bound(v, "sup") >= 4.5
    assert vec_norm_bound(v, "l1") >= 8.0
    assert v.norm_bound() == vec_norm_bound(v)
    with pytest.raises(DomainError):
        vec_norm_bound(v, "l2")


def test_negative_radius_rejected():
    from models.rigor import ErrorVector
    from utils.exceptions import DomainError
    with pytest.raises(DomainError):
        ErrorVector(np.zeros(2), -1.0)
