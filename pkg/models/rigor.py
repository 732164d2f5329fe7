"""
Interval arithmetic, compensated summation and error-carrying vectors.

Interval endpoints are numpy arrays, so one Interval can hold a whole grid
of enclosures and every operation is vectorized. Outward rounding is done
by stepping to the neighbouring float, but only when an error-free
transformation shows that the floating result is not exact; exact results
(small integers, dyadic rationals) therefore stay point intervals.
"""

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Tuple, Union

import numpy as np

from utils.exceptions import DomainError

UNIT_ROUNDOFF = 2.0 ** -53
_SPLITTER = 134217729.0  # 2**27 + 1
_SAFE_LOW = 2.0 ** -960
_SAFE_HIGH = 2.0 ** 900
_ELEM_ULPS = 4.0 * 2.0 ** -52
_ABS_FLOOR = 1e-300

Number = Union[int, float, np.ndarray]


def _down(x):
    return np.nextafter(x, -np.inf)


def _up(x):
    return np.nextafter(x, np.inf)


def _two_sum(a, b):
    s = a + b
    bb = s - a
    err = (a - (s - bb)) + (b - bb)
    return s, err


def _split(a):
    c = _SPLITTER * a
    hi = c - (c - a)
    return hi, a - hi


def _two_prod(a, b):
    p = a * b
    ah, al = _split(a)
    bh, bl = _split(b)
    err = ((ah * bh - p) + ah * bl + al * bh) + al * bl
    return p, err


def _rd(s, err, trusted):
    # err is the exact residual true - s where trusted
    return np.where(trusted & (err >= 0), s, _down(s))


def _ru(s, err, trusted):
    return np.where(trusted & (err <= 0), s, _up(s))


def _in_safe_range(x):
    ax = np.abs(x)
    return (x == 0) | ((ax >= _SAFE_LOW) & (ax <= _SAFE_HIGH))


def _add_bounds(a, b):
    with np.errstate(all="ignore"):
        s, err = _two_sum(a, b)
    trusted = np.isfinite(err) & _in_safe_range(s)
    return _rd(s, err, trusted), _ru(s, err, trusted)


def _mul_bounds(a, b):
    with np.errstate(all="ignore"):
        p, err = _two_prod(a, b)
    zero_factor = (a == 0) | (b == 0)
    trusted = zero_factor | (np.isfinite(err) & _in_safe_range(p)
                             & (np.abs(a) <= _SAFE_HIGH) & (np.abs(b) <= _SAFE_HIGH))
    err = np.where(zero_factor, 0.0, err)
    return _rd(p, err, trusted), _ru(p, err, trusted)


def _div_bounds(a, b):
    with np.errstate(all="ignore"):
        q = a / b
        p, err = _two_prod(q, b)
        residual = (a - p) - err
    direction = np.sign(residual) * np.sign(b)
    trusted = np.isfinite(residual) & _in_safe_range(q) & (np.abs(b) <= _SAFE_HIGH) \
        & ((np.abs(b) >= _SAFE_LOW))
    return _rd(q, direction, trusted), _ru(q, direction, trusted)


def _widen(values):
    """Enclosure of a libm result assumed accurate to a couple of ulps."""
    d = np.abs(values) * _ELEM_ULPS + _ABS_FLOOR
    return _down(values - d), _up(values + d)


class Interval:
    """
    Closed enclosure [lo, hi], vectorized over numpy arrays of endpoints.

    Every operation returns an Interval containing the exact real result for
    all members of the operands.
    """

    __slots__ = ("lo", "hi")
    __array_priority__ = 1000

    def __init__(self, lo, hi=None):
        lo = np.asarray(lo, dtype=float)
        hi = lo if hi is None else np.asarray(hi, dtype=float)
        if lo.shape != hi.shape:
            lo, hi = np.broadcast_arrays(lo, hi)
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise DomainError("interval endpoints must be finite", operation="construct")
        if np.any(lo > hi):
            raise DomainError("interval lower bound exceeds upper bound", operation="construct")
        self.lo = lo
        self.hi = hi

    @classmethod
    def _make(cls, lo, hi) -> "Interval":
        if np.isnan(lo).any() or np.isnan(hi).any():
            raise DomainError("interval operation produced NaN", operation="arith")
        out = object.__new__(cls)
        out.lo = lo
        out.hi = hi
        return out

    # ---- constructors ----

    @classmethod
    def point(cls, x) -> "Interval":
        x = np.asarray(x, dtype=float)
        return cls(x, x)

    @classmethod
    def from_fraction(cls, q: Fraction) -> "Interval":
        """Tightest float enclosure of an exact rational."""
        q = Fraction(q)
        f = float(q)  # correctly rounded
        exact = Fraction(f)
        if exact == q:
            return cls(f, f)
        if exact < q:
            return cls(f, float(_up(f)))
        return cls(float(_down(f)), f)

    @classmethod
    def from_rational(cls, num: int, den: int = 1) -> "Interval":
        return cls.from_fraction(Fraction(num, den))

    @classmethod
    def hull(cls, a: "Interval", b: "Interval") -> "Interval":
        return cls._make(np.minimum(a.lo, b.lo), np.maximum(a.hi, b.hi))

    # ---- accessors ----

    @property
    def shape(self):
        return self.lo.shape

    @property
    def size(self) -> int:
        return self.lo.size

    def __len__(self) -> int:
        return len(self.lo)

    def __getitem__(self, key) -> "Interval":
        return Interval._make(self.lo[key], self.hi[key])

    @property
    def mid(self) -> np.ndarray:
        return 0.5 * self.lo + 0.5 * self.hi

    @property
    def rad(self) -> np.ndarray:
        """Upper bound on the distance from mid to either endpoint."""
        m = self.mid
        return np.maximum(_up(self.hi - m), _up(m - self.lo))

    @property
    def width(self) -> np.ndarray:
        return _up(self.hi - self.lo)

    def mag(self) -> np.ndarray:
        return np.maximum(np.abs(self.lo), np.abs(self.hi))

    def mig(self) -> np.ndarray:
        straddles = (self.lo <= 0) & (self.hi >= 0)
        return np.where(straddles, 0.0, np.minimum(np.abs(self.lo), np.abs(self.hi)))

    def contains(self, x) -> np.ndarray:
        return (self.lo <= x) & (x <= self.hi)

    def subset(self, other: "Interval") -> np.ndarray:
        return (other.lo <= self.lo) & (self.hi <= other.hi)

    def overlaps(self, other: "Interval") -> np.ndarray:
        return (self.lo <= other.hi) & (other.lo <= self.hi)

    def intersect(self, other: "Interval") -> "Interval":
        lo = np.maximum(self.lo, other.lo)
        hi = np.minimum(self.hi, other.hi)
        if np.any(lo > hi):
            raise DomainError("empty intersection", operation="intersect")
        return Interval._make(lo, hi)

    def clip(self, lo: float, hi: float) -> "Interval":
        """Intersect with [lo, hi], assuming the true value lies there."""
        new_lo = np.clip(self.lo, lo, hi)
        new_hi = np.clip(self.hi, lo, hi)
        return Interval._make(new_lo, new_hi)

    def sum(self) -> "Interval":
        """Enclosure of the sum of all components."""
        n = self.lo.size
        if n == 0:
            return Interval(0.0)
        g = gamma(n)
        lo = float(np.sum(self.lo))
        hi = float(np.sum(self.hi))
        slack_lo = g * float(np.sum(np.abs(self.lo)))
        slack_hi = g * float(np.sum(np.abs(self.hi)))
        return Interval(float(_down(lo - _up(slack_lo))), float(_up(hi + _up(slack_hi))))

    def upper(self) -> float:
        """Largest upper endpoint as a Python float."""
        return float(np.max(self.hi))

    def __repr__(self) -> str:
        if self.lo.ndim == 0:
            return f"Interval([{float(self.lo)!r}, {float(self.hi)!r}])"
        return f"Interval(shape={self.lo.shape}, lo={self.lo!r}, hi={self.hi!r})"

    # ---- arithmetic ----

    @staticmethod
    def _coerce(other) -> "Interval":
        if isinstance(other, Interval):
            return other
        return Interval.point(other)

    def __neg__(self) -> "Interval":
        return Interval._make(-self.hi, -self.lo)

    def __pos__(self) -> "Interval":
        return self

    def __abs__(self) -> "Interval":
        return Interval._make(self.mig(), self.mag())

    def __add__(self, other) -> "Interval":
        other = Interval._coerce(other)
        lo, _ = _add_bounds(self.lo, other.lo)
        _, hi = _add_bounds(self.hi, other.hi)
        return Interval._make(lo, hi)

    __radd__ = __add__

    def __sub__(self, other) -> "Interval":
        return self + (-Interval._coerce(other))

    def __rsub__(self, other) -> "Interval":
        return Interval._coerce(other) + (-self)

    def __mul__(self, other) -> "Interval":
        other = Interval._coerce(other)
        candidates = [
            _mul_bounds(self.lo, other.lo),
            _mul_bounds(self.lo, other.hi),
            _mul_bounds(self.hi, other.lo),
            _mul_bounds(self.hi, other.hi),
        ]
        lo = np.minimum.reduce([c[0] for c in candidates])
        hi = np.maximum.reduce([c[1] for c in candidates])
        return Interval._make(lo, hi)

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Interval":
        other = Interval._coerce(other)
        if np.any((other.lo <= 0) & (other.hi >= 0)):
            raise DomainError("division by an interval containing zero", operation="div")
        candidates = [
            _div_bounds(self.lo, other.lo),
            _div_bounds(self.lo, other.hi),
            _div_bounds(self.hi, other.lo),
            _div_bounds(self.hi, other.hi),
        ]
        lo = np.minimum.reduce([c[0] for c in candidates])
        hi = np.maximum.reduce([c[1] for c in candidates])
        return Interval._make(lo, hi)

    def __rtruediv__(self, other) -> "Interval":
        return Interval._coerce(other) / self

    def __pow__(self, n: int) -> "Interval":
        return pow_int(self, n)


def _point_power(x: np.ndarray, n: int) -> Interval:
    result = Interval.point(np.ones_like(x))
    base = Interval.point(x)
    while n:
        if n & 1:
            result = result * base
        n >>= 1
        if n:
            base = base * base
    return result


def pow_int(a: Interval, n: int) -> Interval:
    """Range of x**n over a for an integer n."""
    if int(n) != n:
        raise DomainError("only integer powers are supported", operation="pow_int")
    n = int(n)
    if n == 0:
        return Interval.point(np.ones_like(a.lo))
    if n < 0:
        return 1.0 / pow_int(a, -n)
    if n % 2 == 1:
        return Interval._make(_point_power(a.lo, n).lo, _point_power(a.hi, n).hi)
    return Interval._make(_point_power(a.mig(), n).lo, _point_power(a.mag(), n).hi)


# Certified enclosure of pi and pi/2
PI = Interval(float(_down(math.pi)), float(_up(math.pi)))
HALF_PI = PI / 2.0


def _contains_residue(lo_t, hi_t, residue: int) -> np.ndarray:
    """True where some integer n = residue (mod 4) lies in [lo_t, hi_t]."""
    n = np.ceil((lo_t - residue) / 4.0) * 4.0 + residue
    return n <= hi_t


def _trig(a: Interval, fn, max_residue: int, min_residue: int) -> Interval:
    v_lo = fn(a.lo)
    v_hi = fn(a.hi)
    lo = np.minimum(_widen(v_lo)[0], _widen(v_hi)[0])
    hi = np.maximum(_widen(v_lo)[1], _widen(v_hi)[1])
    t_lo = (Interval.point(a.lo) / HALF_PI).lo
    t_hi = (Interval.point(a.hi) / HALF_PI).hi
    wide = (t_hi - t_lo >= 4.0) | (np.maximum(np.abs(a.lo), np.abs(a.hi)) > 1e15)
    hi = np.where(wide | _contains_residue(t_lo, t_hi, max_residue), 1.0, hi)
    lo = np.where(wide | _contains_residue(t_lo, t_hi, min_residue), -1.0, lo)
    return Interval._make(np.clip(lo, -1.0, 1.0), np.clip(hi, -1.0, 1.0))


def iv_sin(a: Interval) -> Interval:
    return _trig(a, np.sin, max_residue=1, min_residue=3)


def iv_cos(a: Interval) -> Interval:
    return _trig(a, np.cos, max_residue=0, min_residue=2)


def iv_exp(a: Interval) -> Interval:
    with np.errstate(over="raise"):
        try:
            lo = _widen(np.exp(a.lo))[0]
            hi = _widen(np.exp(a.hi))[1]
        except FloatingPointError as exc:
            raise DomainError("exp overflow", operation="exp", cause=exc) from exc
    return Interval._make(np.maximum(lo, 0.0), hi)


_ARITH = {
    "add": lambda a, b: a + b,
    "sub": lambda a, b: a - b,
    "mul": lambda a, b: a * b,
    "div": lambda a, b: a / b,
    "neg": lambda a, b: -a,
    "abs": lambda a, b: abs(a),
}

_ELEM = {
    "sin": lambda a, n: iv_sin(a),
    "cos": lambda a, n: iv_cos(a),
    "exp": lambda a, n: iv_exp(a),
    "pow_int": lambda a, n: pow_int(a, n),
}


def iv_arith(op: str, a: Interval, b: Optional[Interval] = None) -> Interval:
    """Functional form of the interval operators."""
    if op not in _ARITH:
        raise DomainError(f"unknown interval operation {op!r}", operation=op)
    if op not in ("neg", "abs") and b is None:
        raise DomainError(f"operation {op!r} needs two operands", operation=op)
    return _ARITH[op](a, b)


def iv_elem(fn: str, a: Interval, n: Optional[int] = None) -> Interval:
    """Enclosure of sin, cos, exp or an integer power over a."""
    if fn not in _ELEM:
        raise DomainError(f"unknown elementary function {fn!r}", operation=fn)
    if fn == "pow_int" and n is None:
        raise DomainError("pow_int needs an exponent", operation=fn)
    return _ELEM[fn](a, n)


# ============== Floating error bookkeeping ==============

def gamma(n: int) -> float:
    """Upper bound on n*u/(1 - n*u), the classical summation error factor."""
    nu = n * UNIT_ROUNDOFF
    if nu >= 0.5:
        raise DomainError("summation length too large for double precision", operation="gamma")
    return float(_up(_up(nu) / _down(1.0 - nu)))


def round_up(x: float) -> float:
    """Next float above a nonnegative computed quantity."""
    return float(_up(float(x)))


def sum_up(values) -> float:
    """Upper bound on the exact sum of floats."""
    return float(_up(math.fsum(float(v) for v in values)))


def mul_up(*factors: float) -> float:
    """Upper bound on a product of nonnegative floats."""
    out = 1.0
    for f in factors:
        out = float(_up(out * float(f)))
    return out


def kahan_cumsum(xs) -> Tuple[np.ndarray, Union[float, np.ndarray]]:
    """
    Compensated running sums (Neumaier's variant of Kahan summation).

    Works along axis 0, so a 2-D input is summed column by column. The
    returned err bounds |computed prefix - exact prefix| for every prefix
    (per column for 2-D input).
    """
    xs = np.asarray(xs, dtype=float)
    if xs.shape[0] == 0:
        return xs.copy(), 0.0

    sums = np.empty_like(xs)
    s = np.zeros(xs.shape[1:])
    c = np.zeros(xs.shape[1:])
    for i in range(xs.shape[0]):
        x = xs[i]
        t = s + x
        c = c + np.where(np.abs(s) >= np.abs(x), (s - t) + x, (x - t) + s)
        s = t
        sums[i] = s + c

    n = xs.shape[0]
    factor = 4.0 * UNIT_ROUNDOFF + 4.0 * n * UNIT_ROUNDOFF ** 2
    total = np.sum(np.abs(xs), axis=0) * (1.0 + gamma(n))
    err = _up(_up(total) * factor)
    if np.ndim(err) == 0:
        return sums, float(err)
    return sums, err


@dataclass(frozen=True)
class ErrorVector:
    """Vectors within a uniform componentwise radius of mid."""

    mid: np.ndarray
    rad: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "mid", np.asarray(self.mid, dtype=float))
        if not (self.rad >= 0) or not math.isfinite(self.rad):
            raise DomainError("error radius must be finite and nonnegative", operation="vector")

    def __len__(self) -> int:
        return len(self.mid)

    def _rounding(self, values: np.ndarray) -> float:
        if values.size == 0:
            return 0.0
        return float(np.max(np.abs(values))) * UNIT_ROUNDOFF

    def __add__(self, other: "ErrorVector") -> "ErrorVector":
        mid = self.mid + other.mid
        return ErrorVector(mid, sum_up([self.rad, other.rad, self._rounding(mid)]))

    def __sub__(self, other: "ErrorVector") -> "ErrorVector":
        mid = self.mid - other.mid
        return ErrorVector(mid, sum_up([self.rad, other.rad, self._rounding(mid)]))

    def scale(self, alpha: float) -> "ErrorVector":
        mid = alpha * self.mid
        return ErrorVector(mid, sum_up([mul_up(abs(alpha), self.rad), self._rounding(mid)]))

    def norm_bound(self, norm: str = "sup") -> float:
        return vec_norm_bound(self, norm)


def vec_norm_bound(v: ErrorVector, norm: str = "sup") -> float:
    """Certified upper bound on the sup or l1 norm of every vector in v."""
    if norm == "sup":
        if v.mid.size == 0:
            return round_up(v.rad) if v.rad else 0.0
        return sum_up([float(np.max(np.abs(v.mid))), v.rad])
    if norm == "l1":
        n = v.mid.size
        base = float(np.sum(np.abs(v.mid))) * (1.0 + gamma(max(n, 1)))
        return sum_up([base, mul_up(n, v.rad)])
    raise DomainError(f"unknown norm {norm!r}", operation="vec_norm_bound")
