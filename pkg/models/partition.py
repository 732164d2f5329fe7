"""
Cubic-bump partition of unity on [0, 1] and the two projections built on it.

Nodes are a_i = i/m. The bump phi_i(x) = phi(m x - i) uses the C^1 cubic
phi(t) = 1 - 3t^2 + 2|t|^3 on [-1, 1]. kappa is twice the sum of the
half-step bumps centred at the cell midpoints: it vanishes at every node,
has unit mass, sup 2 and derivative sup 6m.

Two discrete spaces are represented:
- NodalFunction: sum v_i phi_i + c kappa (the C^1 -> C^0 scheme).
- C1Primitive: c0 + sum d_i e_i with e_i the primitive of phi_i from 0
  (the C^2 -> C^1 scheme). Its derivative is the nodal function with
  values d and no kappa part.
"""

from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Tuple, Union

import numpy as np

from models.rigor import (
    UNIT_ROUNDOFF,
    ErrorVector,
    Interval,
    gamma,
    kahan_cumsum,
    mul_up,
    sum_up,
)
from utils.exceptions import ConfigurationError


@dataclass(frozen=True)
class PartitionScheme:
    m: int

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 3:
            raise ConfigurationError(f"partition size must be an integer >= 3, got {self.m}",
                                     config_key="run.m")

    @property
    def eta(self) -> float:
        return 1.0 / self.m

    @cached_property
    def nodes(self) -> np.ndarray:
        return np.arange(self.m + 1, dtype=float) / self.m

    @cached_property
    def node_intervals(self) -> Interval:
        return Interval.point(np.arange(self.m + 1, dtype=float)) / float(self.m)

    @cached_property
    def weights_interval(self) -> Interval:
        """Enclosures of w_i = integral of phi_i."""
        w = Interval.point(np.ones(self.m + 1)) / float(self.m)
        lo, hi = w.lo.copy(), w.hi.copy()
        lo[[0, -1]] *= 0.5
        hi[[0, -1]] *= 0.5
        return Interval(lo, hi)

    @cached_property
    def weights(self) -> np.ndarray:
        return self.weights_interval.mid

    @cached_property
    def primitive_integrals(self) -> Interval:
        """Enclosures of I_i = integral over [0, 1] of e_i = integral of (1 - x) phi_i."""
        m = self.m
        num = (m - np.arange(m + 1)).astype(float)
        den = np.full(m + 1, float(m * m))
        num[0], den[0] = 10.0 * m - 3.0, 20.0 * m * m
        num[m], den[m] = 3.0, 20.0 * m * m
        return Interval.point(num) / Interval.point(den)

    @cached_property
    def prime_coefficients(self) -> Tuple[np.ndarray, np.ndarray]:
        """(a_i, b_i) with f_i = a_i e_i - b_i e_{i+1} spanning the primitive space."""
        m = self.m
        a = np.full(m + 1, 0.5)
        a[0] = a[m] = 1.0
        b = np.full(m + 1, 0.5)
        b[m - 1] = 1.0
        b[m] = 0.0
        return a, b

    def cell_of(self, x: np.ndarray) -> np.ndarray:
        """Cell index floor(m x) clipped to 0..m-1."""
        return np.clip(np.floor(np.asarray(x) * self.m), 0, self.m - 1).astype(np.int64)


# ============== Kernels on the reference cubic ==============

def _horner_p(s: np.ndarray) -> Interval:
    """P(s) = 1 - 3 s^2 + 2 s^3 at points s in [0, 1]."""
    si = Interval.point(s)
    return 1.0 + si * si * (2.0 * si - 3.0)


def _horner_q(s: np.ndarray) -> Interval:
    """Q(s) = 6 s (1 - s) = -P'(s) at points s in [0, 1]."""
    si = Interval.point(s)
    return 6.0 * si * (1.0 - si)


def _horner_e(s: np.ndarray) -> Interval:
    """E(s) = integral of phi from -1 to s, at points s in [-1, 1]."""
    si = Interval.point(s)
    cube_term = -1.0 + 0.5 * Interval.point(np.abs(s))
    return 0.5 + si * (1.0 + si * si * cube_term)


def reference_bump(t: Interval) -> Interval:
    s_lo = np.minimum(t.mig(), 1.0)
    s_hi = np.minimum(t.mag(), 1.0)
    lo = np.clip(_horner_p(s_hi).lo, 0.0, 1.0)
    hi = np.clip(_horner_p(s_lo).hi, 0.0, 1.0)
    return Interval(np.minimum(lo, hi), hi)


def _q_range(a: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    qa, qb = _horner_q(a), _horner_q(b)
    lo = np.maximum(np.minimum(qa.lo, qb.lo), 0.0)
    hi = np.where((a <= 0.5) & (b >= 0.5), 1.5, np.maximum(qa.hi, qb.hi))
    return lo, np.minimum(hi, 1.5)


def reference_bump_slope(t: Interval) -> Interval:
    """Enclosure of phi'(t), the derivative in t."""
    lo = np.full(t.shape, np.inf)
    hi = np.full(t.shape, -np.inf)

    left = (t.lo < 0) & (t.hi > -1)
    a = np.clip(-np.minimum(t.hi, 0.0), 0.0, 1.0)
    b = np.clip(-t.lo, 0.0, 1.0)
    q_lo, q_hi = _q_range(np.minimum(a, b), b)
    lo = np.where(left, np.minimum(lo, q_lo), lo)
    hi = np.where(left, np.maximum(hi, q_hi), hi)

    right = (t.hi > 0) & (t.lo < 1)
    a = np.clip(np.maximum(t.lo, 0.0), 0.0, 1.0)
    b = np.clip(t.hi, 0.0, 1.0)
    q_lo, q_hi = _q_range(np.minimum(a, b), b)
    lo = np.where(right, np.minimum(lo, -q_hi), lo)
    hi = np.where(right, np.maximum(hi, -q_lo), hi)

    touches_zero = ~(left | right) | (t.lo <= -1) | (t.hi >= 1) | t.contains(0.0)
    lo = np.where(touches_zero, np.minimum(lo, 0.0), lo)
    hi = np.where(touches_zero, np.maximum(hi, 0.0), hi)
    return Interval(lo, hi)


def _as_index(i, shape) -> np.ndarray:
    return np.broadcast_to(np.asarray(i, dtype=np.int64), shape)


def bump_eval(scheme: PartitionScheme, i, x: Interval, order: int = 0) -> Interval:
    """Enclosure of phi_i(x) (order 0) or phi_i'(x) (order 1)."""
    x = x.clip(0.0, 1.0)
    idx = _as_index(i, x.shape).astype(float)
    t = x * float(scheme.m) - Interval.point(idx)
    if order == 0:
        return reference_bump(t)
    if order == 1:
        return reference_bump_slope(t) * float(scheme.m)
    raise ValueError("bump order must be 0 or 1")


def reference_primitive(t: Interval) -> Interval:
    """Enclosure of E(t), the integral of phi from -1 to t (constant outside [-1, 1])."""
    lo_t = np.clip(t.lo, -1.0, 1.0)
    hi_t = np.clip(t.hi, -1.0, 1.0)
    low = _horner_e(lo_t).lo
    return Interval(low, np.maximum(_horner_e(hi_t).hi, low))


def primitive_offset(i) -> np.ndarray:
    """E(-i): the part of phi_i lying left of 0."""
    return np.where(np.asarray(i) == 0, 0.5, 0.0)


def primitive_eval(scheme: PartitionScheme, i, x: Interval) -> Interval:
    """Enclosure of e_i(x), the integral of phi_i from 0 to x."""
    x = x.clip(0.0, 1.0)
    idx = _as_index(i, x.shape)
    t = x * float(scheme.m) - Interval.point(idx.astype(float))
    e = reference_primitive(t) - Interval.point(primitive_offset(idx))
    return e / float(scheme.m)


def kappa_eval(scheme: PartitionScheme, x: Interval, order: int = 0) -> Interval:
    """Enclosure of kappa(x) or kappa'(x)."""
    m = scheme.m
    x = x.clip(0.0, 1.0)
    u = x * float(2 * m)
    if np.any(u.width > 2.0):
        bound = 2.0 if order == 0 else 6.0 * m
        wide = u.width > 2.0
        narrow = kappa_eval(scheme, x[~wide], order) if np.any(~wide) else None
        lo = np.where(wide, 0.0 if order == 0 else -bound, 0.0)
        hi = np.full(x.shape, bound)
        if narrow is not None:
            lo[~wide], hi[~wide] = narrow.lo, narrow.hi
        return Interval(lo, hi)

    centre = 2.0 * np.floor((u.mid - 1.0) / 2.0 + 0.5) + 1.0
    total = Interval.point(np.zeros(x.shape))
    for shift in (-2.0, 0.0, 2.0):
        o = centre + shift
        valid = (o >= 1) & (o <= 2 * m - 1)
        t = u - Interval.point(o)
        term = reference_bump(t) if order == 0 else reference_bump_slope(t)
        term = Interval(np.where(valid, term.lo, 0.0), np.where(valid, term.hi, 0.0))
        total = total + term
    if order == 0:
        return 2.0 * total
    return total * float(4 * m)


# ============== Discrete functions ==============

def _widen(iv: Interval, r) -> Interval:
    return iv + Interval(-np.asarray(r, dtype=float), np.asarray(r, dtype=float))


@dataclass(frozen=True)
class NodalFunction:
    """sum v_i phi_i + c kappa; rad is a uniform radius on v and c."""

    v: np.ndarray
    c: float = 0.0
    rad: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "v", np.asarray(self.v, dtype=float))
        object.__setattr__(self, "c", float(self.c))

    @property
    def m(self) -> int:
        return len(self.v) - 1

    @classmethod
    def zeros(cls, m: int) -> "NodalFunction":
        return cls(np.zeros(m + 1), 0.0, 0.0)

    @classmethod
    def from_error_vector(cls, vec: ErrorVector) -> "NodalFunction":
        return cls(vec.mid[:-1], float(vec.mid[-1]), vec.rad)

    def as_error_vector(self) -> ErrorVector:
        return ErrorVector(np.append(self.v, self.c), self.rad)

    def __add__(self, other: "NodalFunction") -> "NodalFunction":
        return NodalFunction.from_error_vector(self.as_error_vector() + other.as_error_vector())

    def scale(self, alpha: float) -> "NodalFunction":
        return NodalFunction.from_error_vector(self.as_error_vector().scale(alpha))

    def integral(self, scheme: PartitionScheme) -> Interval:
        """Enclosure of the mass sum v_i w_i + c."""
        coeffs = _widen(Interval.point(self.v), self.rad)
        return (coeffs * scheme.weights_interval).sum() + _widen(Interval(self.c), self.rad)


@dataclass(frozen=True)
class C1Primitive:
    """c0 + sum d_i e_i; rad is a uniform radius on c0 and d."""

    c0: float
    d: np.ndarray
    rad: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "d", np.asarray(self.d, dtype=float))
        object.__setattr__(self, "c0", float(self.c0))

    @property
    def m(self) -> int:
        return len(self.d) - 1

    @classmethod
    def from_error_vector(cls, vec: ErrorVector) -> "C1Primitive":
        return cls(float(vec.mid[-1]), vec.mid[:-1], vec.rad)

    def as_error_vector(self) -> ErrorVector:
        return ErrorVector(np.append(self.d, self.c0), self.rad)

    def derivative(self) -> NodalFunction:
        return NodalFunction(self.d, 0.0, self.rad)

    def integral(self, scheme: PartitionScheme) -> Interval:
        """Enclosure of c0 + sum d_i I_i."""
        coeffs = _widen(Interval.point(self.d), self.rad)
        return (coeffs * scheme.primitive_integrals).sum() + _widen(Interval(self.c0), self.rad)


DiscreteFunction = Union[NodalFunction, C1Primitive]


def _candidates(scheme: PartitionScheme, x: Interval):
    p = scheme.cell_of(x.mid)
    for off in (-1, 0, 1, 2):
        j = p + off
        valid = (j >= 0) & (j <= scheme.m)
        yield np.clip(j, 0, scheme.m), valid


def _nodal_sum(scheme: PartitionScheme, coeffs: np.ndarray, x: Interval, order: int) -> Interval:
    total = Interval.point(np.zeros(x.shape))
    for j, valid in _candidates(scheme, x):
        term = bump_eval(scheme, j, x, order) * Interval.point(np.where(valid, coeffs[j], 0.0))
        total = total + term
    return total


def _check_narrow(scheme: PartitionScheme, x: Interval) -> None:
    if np.any(x.width > 0.5 / scheme.m):
        raise ValueError("evaluation points must be narrower than half a cell")


def eval_nodal(g: DiscreteFunction, x: Interval, order: int = 0) -> Interval:
    """Pointwise enclosure of g (order 0) or g' (order 1)."""
    scheme = PartitionScheme(g.m)
    _check_narrow(scheme, x)
    if isinstance(g, NodalFunction):
        value = _nodal_sum(scheme, g.v, x, order) + kappa_eval(scheme, x, order) * g.c
        slack = 3.0 * g.rad if order == 0 else 9.0 * g.m * g.rad
        return _widen(value, slack)

    if order == 1:
        return eval_nodal(g.derivative(), x, 0)

    w = scheme.weights
    contributions = g.d * w
    prefix, err = kahan_cumsum(contributions)
    prefix_err = sum_up([err, gamma(2) * float(np.sum(np.abs(contributions)))]) \
        + float(np.max(np.abs(g.d))) * float(np.max(scheme.weights_interval.rad))
    p = scheme.cell_of(x.mid)
    # e_j(x) = w_j for every j <= p - 2; candidates p-1..p+2 are evaluated exactly
    full_upto = p - 2
    base = np.where(full_upto >= 0, prefix[np.clip(full_upto, 0, scheme.m)], 0.0)
    value = Interval.point(base) + g.c0
    for j, valid in _candidates(scheme, x):
        keep = valid & (j >= p - 1)
        term = primitive_eval(scheme, j, x) * Interval.point(np.where(keep, g.d[j], 0.0))
        value = value + term
    return _widen(value, sum_up([prefix_err, 2.0 * g.rad]))


def derivative_bound(g: DiscreteFunction) -> float:
    """Certified bound on sup |g'|."""
    if isinstance(g, NodalFunction):
        m = g.m
        dv = float(np.max(np.abs(np.diff(g.v)))) if m > 0 else 0.0
        return sum_up([mul_up(1.5 * m, dv) * (1 + 2 * UNIT_ROUNDOFF),
                       mul_up(6.0 * m, abs(g.c)), mul_up(9.0 * m, g.rad)])
    return sum_up([float(np.max(np.abs(g.d))), g.rad])


def second_derivative_bound(g: C1Primitive) -> float:
    """Certified bound on sup |g''| for a primitive (derivative has no kappa part)."""
    m = g.m
    dd = float(np.max(np.abs(np.diff(g.d))))
    return sum_up([mul_up(1.5 * m, dd) * (1 + 2 * UNIT_ROUNDOFF), mul_up(3.0 * m, g.rad)])


def norm_bounds(g: DiscreteFunction) -> Tuple[float, float]:
    """Certified (sup norm, C^1 norm) upper bounds."""
    if isinstance(g, NodalFunction):
        sup = sum_up([float(np.max(np.abs(g.v))), 2.0 * abs(g.c), 3.0 * g.rad])
        return sup, sum_up([sup, derivative_bound(g)])

    scheme = PartitionScheme(g.m)
    w = scheme.weights
    contributions = g.d * w
    prefix, err = kahan_cumsum(contributions)
    # sum_{j <= p-1} d_j w_j for p = 0..m-1
    before = np.concatenate([[0.0], prefix[:-2]])
    cell = np.abs(g.c0 + before) + np.abs(g.d[:-1]) * w[:-1] + np.abs(g.d[1:]) * w[1:]
    slack = sum_up([err, gamma(g.m + 4) * (abs(g.c0) + float(np.sum(np.abs(contributions)))),
                    2.0 * g.rad])
    sup = sum_up([float(np.max(cell)) * (1 + 4 * UNIT_ROUNDOFF), slack])
    return sup, sum_up([sup, derivative_bound(g)])


# ============== Projections ==============

def project_c0(
    scheme: PartitionScheme,
    f: Callable[[Interval], Interval],
    integral: Interval,
) -> NodalFunction:
    """Nodal values f(a_i) plus the kappa coefficient that restores the mass."""
    values = f(scheme.node_intervals)
    c = Interval(integral.lo, integral.hi) - (values * scheme.weights_interval).sum()
    rad = max(float(np.max(values.rad)), float(c.rad))
    return NodalFunction(values.mid, float(c.mid), rad)


def project_c1(
    scheme: PartitionScheme,
    derivative: Callable[[Interval], Interval],
    integral: Interval,
) -> C1Primitive:
    """Derivative values f'(a_i) and the constant that restores the mass."""
    slopes = derivative(scheme.node_intervals)
    c0 = Interval(integral.lo, integral.hi) - (slopes * scheme.primitive_integrals).sum()
    rad = max(float(np.max(slopes.rad)), float(c0.rad))
    return C1Primitive(float(c0.mid), slopes.mid, rad)


# ============== Basis change for the primitive space ==============

def basis_change(coeffs: ErrorVector, target: str) -> ErrorVector:
    """
    Convert primitive-space coefficients between the bases.

    Layout is (m+1 coefficients, constant). target="B" maps coefficients on
    the compactly supported f_i to coefficients on e_i; target="B'" is the
    inverse, a compensated cumulative sum.
    """
    mid = coeffs.mid
    body, const = mid[:-1], mid[-1]
    m = len(body) - 1

    if target == "B":
        d = np.empty_like(body)
        d[0] = body[0]
        d[1:m] = 0.5 * (body[1:m] - body[0:m - 1])
        d[m] = body[m] - body[m - 1]
        rounding = float(np.max(np.abs(d))) * UNIT_ROUNDOFF
        rad = sum_up([2.0 * coeffs.rad, rounding])
        return ErrorVector(np.append(d, const), rad)

    if target == "B'":
        scaled = body.copy()
        scaled[1:m] *= 2.0
        beta, err = kahan_cumsum(scaled)
        rad = sum_up([err, mul_up(2.0 * m, coeffs.rad)])
        return ErrorVector(np.append(beta, const), rad)

    raise ValueError(f"unknown basis {target!r}")


# ============== Text export ==============

def to_text(g: NodalFunction) -> str:
    """Rows 'i, a_i, v_i' then a trailing 'kappa, c, rad' line."""
    scheme = PartitionScheme(g.m)
    rows = [f"{i}, {a!r}, {v!r}" for i, (a, v) in enumerate(zip(scheme.nodes, g.v))]
    rows.append(f"kappa, {g.c!r}, {g.rad!r}")
    return "\n".join(rows) + "\n"


def from_text(text: str) -> NodalFunction:
    lines = [ln for ln in text.strip().splitlines() if ln.strip()]
    values = [float(ln.split(",")[2]) for ln in lines[:-1]]
    _, c, rad = (part.strip() for part in lines[-1].split(","))
    return NodalFunction(np.array(values), float(c), float(rad))


def sample(g: DiscreteFunction, xs: np.ndarray, order: int = 0) -> np.ndarray:
    """Midpoint values of g on a grid of points."""
    return eval_nodal(g, Interval.point(np.asarray(xs, dtype=float)), order).mid
