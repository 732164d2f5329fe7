"""
Expanding circle maps.

A map is given by one smooth expression T on [0, 1] together with its
branch breakpoints 0 = d_0 < ... < d_D = 1, with T(d_k) = k. Branch k is
x -> T(x) - k on [d_k, d_{k+1}], increasing and onto [0, 1].
"""

import hashlib
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import sympy as sp

from models.rigor import Interval
from models.symbolic import IntervalOracle, X, compile_interval, derivatives
from utils.exceptions import ConfigurationError, NoConvergence, NotExpanding
from utils.logger import get_rigor_logger, log_function_call

logger = get_rigor_logger()


@dataclass(frozen=True)
class BranchSpec:
    """One full branch: T - index on domain, plus derivative oracles."""

    index: int
    domain: Interval
    eval_k: Tuple[IntervalOracle, IntervalOracle, IntervalOracle, IntervalOracle]

    def value(self, x: Interval) -> Interval:
        return self.eval_k[0](x) - float(self.index)


@dataclass(frozen=True)
class MapModel:
    branches: Tuple[BranchSpec, ...]
    degree: int
    expression: Optional[sp.Expr] = None
    breakpoints: Tuple[Fraction, ...] = ()
    name: str = "map"
    oracles: Tuple[IntervalOracle, ...] = field(default=(), repr=False)

    @classmethod
    def from_expression(
        cls,
        expr: sp.Expr,
        degree: Optional[int] = None,
        breakpoints: Optional[Sequence[Fraction]] = None,
        name: str = "map",
    ) -> "MapModel":
        """Build a model from a sympy expression in x."""
        exprs = derivatives(expr, 3, X)
        oracles = tuple(compile_interval(e, X) for e in exprs)

        if degree is None:
            image_of_one = oracles[0](Interval(1.0))
            degree = int(round(float(image_of_one.mid)))
        if degree < 1:
            raise ConfigurationError(f"map degree must be positive, got {degree}",
                                     config_key="map.degree")

        if breakpoints is None:
            breakpoints = [Fraction(k, degree) for k in range(degree + 1)]
        breakpoints = tuple(Fraction(b) for b in breakpoints)
        if len(breakpoints) != degree + 1 or breakpoints[0] != 0 or breakpoints[-1] != 1:
            raise ConfigurationError("breakpoints must run from 0 to 1 with degree+1 entries",
                                     config_key="map.breakpoints")
        if any(a >= b for a, b in zip(breakpoints[:-1], breakpoints[1:])):
            raise ConfigurationError("breakpoints must be strictly increasing",
                                     config_key="map.breakpoints")

        ends = [Interval.from_fraction(b) for b in breakpoints]
        for k, end in enumerate(ends):
            image = oracles[0](end)
            if not bool(image.contains(float(k))):
                raise ConfigurationError(
                    f"T({breakpoints[k]}) = {image!r} does not enclose {k}; "
                    "branch endpoints must map to integers with T(0) = 0",
                    config_key="map.breakpoints",
                )

        branches = tuple(
            BranchSpec(index=k, domain=Interval(float(ends[k].lo), float(ends[k + 1].hi)),
                       eval_k=oracles)
            for k in range(degree)
        )
        return cls(branches=branches, degree=degree, expression=expr,
                   breakpoints=breakpoints, name=name, oracles=oracles)

    def derivative(self, x: Interval, order: int) -> Interval:
        """Enclosure of T^(order) over x (order 0..3)."""
        return self.oracles[order](x)

    @property
    def identifier(self) -> str:
        """Stable hash of the map definition."""
        text = f"{self.expression}|{','.join(str(b) for b in self.breakpoints)}"
        return hashlib.sha256(text.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class DerivativeBounds:
    """Certified sup bounds on 1/T', |T''|/T'^2 and |T'''|/T'^3."""

    lam: float
    B: float
    T3: float
    min_derivative: float = 0.0
    cells: int = 0


def _cell_bounds(model: MapModel, cells: Interval):
    d1 = model.derivative(cells, 1)
    d2 = model.derivative(cells, 2)
    d3 = model.derivative(cells, 3)
    return d1, d2, d3


@log_function_call(logger)
def certify_expanding(model: MapModel, depth: int = 12, refine: int = 8) -> DerivativeBounds:
    """
    Certify inf T' > 1 and bound the distortion quantities.

    [0, 1] is cut into 2**depth cells; cells whose T' enclosure is not above
    1 are bisected up to `refine` more times before giving up.
    """
    n = 2 ** depth
    edges = np.arange(n + 1, dtype=float) / n
    cells = Interval(edges[:-1], edges[1:])

    accepted: List[Interval] = []
    for level in range(refine + 1):
        d1 = model.derivative(cells, 1)
        good = d1.lo > 1.0
        if np.any(good):
            accepted.append(cells[good])
        bad = ~good
        if not np.any(bad):
            break
        failing = cells[bad]
        if level == refine:
            i = int(np.argmin(d1.lo[bad]))
            sub = (float(failing.lo[i]), float(failing.hi[i]))
            deriv = (float(d1.lo[bad][i]), float(d1.hi[bad][i]))
            logger.warning("Expansion not certified", extra={"subinterval": sub,
                                                              "derivative": deriv})
            raise NotExpanding(f"T' enclosure {deriv} is not above 1 on {sub}",
                               subinterval=sub, derivative=deriv)
        mid = failing.mid
        cells = Interval(np.concatenate([failing.lo, mid]), np.concatenate([mid, failing.hi]))

    leaves = Interval(np.concatenate([c.lo for c in accepted]),
                      np.concatenate([c.hi for c in accepted]))
    d1, d2, d3 = _cell_bounds(model, leaves)
    lam = (1.0 / d1).upper()
    B = (abs(d2) / (d1 * d1)).upper()
    T3 = (abs(d3) / (d1 * d1 * d1)).upper()
    bounds = DerivativeBounds(lam=lam, B=B, T3=T3, min_derivative=float(np.min(d1.lo)),
                              cells=leaves.size)
    logger.info("Expansion certified", extra={"lambda": lam, "B": B, "T3": T3,
                                              "cells": leaves.size})
    return bounds


def _newton_branch(branch: BranchSpec, target: Interval, tol: float, max_iter: int) -> Interval:
    shape = target.shape
    X_lo = np.full(shape, float(branch.domain.lo))
    X_hi = np.full(shape, float(branch.domain.hi))
    f, df = branch.eval_k[0], branch.eval_k[1]
    goal = target + float(branch.index)

    for _ in range(max_iter):
        box = Interval(X_lo, X_hi)
        if np.all(box.width <= tol):
            break
        c = box.mid
        fc = f(Interval.point(c)) - goal
        step = Interval.point(c) - fc / df(box)
        new_lo = np.maximum(X_lo, step.lo)
        new_hi = np.minimum(X_hi, step.hi)
        disjoint = new_lo > new_hi
        new_lo = np.where(disjoint, X_lo, new_lo)
        new_hi = np.where(disjoint, X_hi, new_hi)

        # bisect where Newton did not halve the box
        slow = (new_hi - new_lo) > 0.5 * (X_hi - X_lo)
        right = slow & (fc.hi < 0)
        left = slow & (fc.lo > 0)
        new_lo = np.where(right, np.maximum(new_lo, c), new_lo)
        new_hi = np.where(left, np.minimum(new_hi, c), new_hi)

        if np.array_equal(new_lo, X_lo) and np.array_equal(new_hi, X_hi):
            break
        X_lo, X_hi = new_lo, new_hi

    result = Interval(X_lo, X_hi)
    widest = float(np.max(result.width)) if result.size else 0.0
    if widest > tol:
        raise NoConvergence(
            f"interval Newton stalled at width {widest:.3e} on branch {branch.index}",
            branch=branch.index, width=widest, tol=tol,
        )
    return result


def preimages(model: MapModel, y: Interval, tol: float = 1e-12, max_iter: int = 80) -> List[Interval]:
    """One enclosure per branch of the preimage of every point of y."""
    y = y.clip(0.0, 1.0)
    return [_newton_branch(branch, y, tol, max_iter) for branch in model.branches]


def transfer_eval(
    model: MapModel,
    f: Callable[[Interval], Interval],
    x: Interval,
    tol: float = 1e-12,
) -> Interval:
    """(Lf)(x) = sum over preimages y of f(y) / T'(y)."""
    total = None
    for y in preimages(model, x, tol):
        term = f(y) / model.derivative(y, 1)
        total = term if total is None else total + term
    return total


def iterate_distortion(bounds: DerivativeBounds, k: int) -> Tuple[float, float]:
    """
    Distortion bounds for the k-th iterate.

    Returns ((1 - lam^(k+1))/(1 - lam) * B, Z) with
    Z = (T3 + 3 lam B^2/(1 - lam)) / (1 - lam^2), which holds for every k.
    """
    if k < 1:
        raise ValueError("iterate index must be at least 1")
    lam = Interval(bounds.lam)
    B = Interval(bounds.B)
    one_minus = 1.0 - lam
    Bk = (1.0 - lam ** (k + 1)) / one_minus * B
    Z = (Interval(bounds.T3) + 3.0 * lam * B * B / one_minus) / (1.0 - lam * lam)
    return Bk.upper(), Z.upper()
