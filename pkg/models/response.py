"""
Linear response: the perturbation operator applied to the density, the
truncated Neumann sum and the three-part error budget.

    ||h_hat - h_appr||_inf <= tail + (operator powers discrepancy) + (L_hat h approximation)

All three summands are upper bounds in the sup norm; `total` also covers
the rounding of the accumulated sum.
"""

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
import sympy as sp

from models.certificates import (
    AuditEntry,
    EquilibriumCertificate,
    LYConstants,
    operator_distance,
    range_distance,
    tail_value,
)
from models.dynamics import MapModel, transfer_eval
from models.operator import DensityResult, DiscretizedOperator, matvec
from models.partition import (
    NodalFunction,
    PartitionScheme,
    derivative_bound,
    eval_nodal,
    norm_bounds,
    project_c0,
    second_derivative_bound,
)
from models.rigor import ErrorVector, Interval, mul_up, round_up, sum_up
from models.symbolic import X, compile_interval, derivatives, enclose_constant, kernel_moment
from utils.exceptions import ConfigurationError
from utils.logger import get_certificate_logger, log_operation

logger = get_certificate_logger()

STOCHASTIC = "stochastic"
DETERMINISTIC = "deterministic"


@dataclass(frozen=True)
class PerturbationSpec:
    """
    Stochastic: convolution noise of size gamma (or a kernel j on [-1/2, 1/2]).
    Deterministic: T_eps = T0 + eps S, with the exact density h if known.
    """

    kind: str
    gamma: Optional[Interval] = field(default=None, repr=False)
    gamma_symbolic: bool = False
    kernel: Optional[sp.Expr] = None
    direction: Optional[sp.Expr] = None
    density: Optional[sp.Expr] = None

    @classmethod
    def stochastic(cls, gamma: Optional[float] = None, kernel: Optional[sp.Expr] = None,
                   symbolic: bool = False) -> "PerturbationSpec":
        if kernel is not None:
            enclosure = enclose_constant(kernel_moment(kernel))
        elif gamma is not None:
            enclosure = Interval(float(gamma))
        elif symbolic:
            enclosure = Interval(1.0)
        else:
            raise ConfigurationError("stochastic perturbation needs gamma or a kernel",
                                     config_key="perturbation.gamma")
        if not enclosure.lo > 0:
            raise ConfigurationError(f"noise size must be positive, got {enclosure!r}",
                                     config_key="perturbation.gamma")
        return cls(kind=STOCHASTIC, gamma=enclosure, gamma_symbolic=symbolic, kernel=kernel)

    @classmethod
    def deterministic(cls, direction: sp.Expr, density: Optional[sp.Expr] = None) -> "PerturbationSpec":
        if direction is None:
            raise ConfigurationError("deterministic perturbation needs a direction S",
                                     config_key="perturbation.direction")
        return cls(kind=DETERMINISTIC, direction=direction, density=density)

    @property
    def gamma_factor(self) -> Optional[str]:
        return "gamma" if self.gamma_symbolic else None


@dataclass(frozen=True)
class LhatResult:
    f_eta: NodalFunction
    approx_err: float
    c1_bound: float
    gamma_factor: Optional[str] = None


@dataclass(frozen=True)
class StepNorm:
    """Certified norms of one computed iterate and the error made producing the next."""

    sup: float
    deriv: float
    local: float = 0.0
    c1_only: bool = False

    @property
    def c1(self) -> float:
        return self.sup if self.c1_only else round_up(self.sup + self.deriv)

    @classmethod
    def from_c1(cls, c1: float, local: float = 0.0) -> "StepNorm":
        return cls(sup=c1, deriv=0.0, local=local, c1_only=True)


@dataclass(frozen=True)
class ResponseCertificate:
    h_appr: Optional[NodalFunction]
    summand1: float
    summand2: float
    summand3: float
    total: float
    l_star: int
    m: int
    per_step_norms: List[float] = field(default_factory=list)
    rounding: float = 0.0
    gamma_factor: Optional[str] = None

    def within(self, tau: float) -> bool:
        return self.total <= tau

    def audit_entries(self) -> List[AuditEntry]:
        sizes = (("m", float(self.m)), ("l_star", float(self.l_star)))
        return [
            AuditEntry("response.l_star", "first multiple of n1 with tail below tau/2",
                       float(self.l_star)),
            AuditEntry("response.summand1", "n1 (aG + bM)/b rho^k/(1-rho) ||L_hat h||_C1",
                       self.summand1, sizes),
            AuditEntry("response.summand2",
                       "M sum_j (l*-1-j) (min(dist ||x_j||_C1, range dist) + 3 local_j)",
                       self.summand2, sizes),
            AuditEntry("response.summand3", "(1 + (l*-1) M) approx_err", self.summand3, sizes),
            AuditEntry("response.rounding", "3 rad(h_appr)", self.rounding),
            AuditEntry("response.total", "summand1 + summand2 + summand3 + rounding", self.total,
                       (("summand1", self.summand1), ("summand2", self.summand2),
                        ("summand3", self.summand3), ("rounding", self.rounding))),
        ]


# ============== Perturbation operator ==============

def lhat_stochastic(density: DensityResult, pert: PerturbationSpec, ly: LYConstants) -> LhatResult:
    """f_eta = gamma h_eta' with the kappa part that makes it zero-average."""
    if pert.kind != STOCHASTIC:
        raise ConfigurationError("lhat_stochastic needs a stochastic perturbation",
                                 config_key="perturbation.kind")
    h = density.h
    scheme = PartitionScheme(h.m)
    gamma = pert.gamma
    slopes = Interval.point(h.d)
    values = slopes * gamma
    drift = -(slopes * scheme.weights_interval).sum() * gamma
    rad = sum_up([float(np.max(values.rad)), float(drift.rad), mul_up(gamma.upper(), h.rad)])
    f_eta = NodalFunction(values.mid, float(drift.mid), rad)

    g_up = gamma.upper()
    approx_err = sum_up([mul_up(g_up, density.err_c1), 2.0 * abs(f_eta.c), 3.0 * rad])
    _, h_c1 = norm_bounds(h)
    density_c1 = min(ly.density_c1, sum_up([h_c1, density.err_c1]))
    c1_bound = mul_up(g_up, ly.D, density_c1)

    logger.info("Stochastic perturbation applied", extra={"approx_err": approx_err,
                                                          "c1_bound": c1_bound})
    return LhatResult(f_eta=f_eta, approx_err=approx_err, c1_bound=c1_bound,
                      gamma_factor=pert.gamma_factor)


def _cells(depth: int) -> Interval:
    n = 2 ** depth
    edges = np.arange(n + 1, dtype=float) / n
    return Interval(edges[:-1], edges[1:])


@dataclass(frozen=True)
class _Weights:
    """Sup norms of P = S'/T', Q = S/T', R = S T''/T'^2 and their derivatives."""

    P: float
    Q: float
    R: float
    dP: float
    dQ: float
    dR: float

    def value(self, h0: float, h1: float) -> float:
        return sum_up([mul_up(h0, sum_up([self.P, self.R])), mul_up(h1, self.Q)])

    def slope(self, h0: float, h1: float, h2: float) -> float:
        return sum_up([mul_up(h1, sum_up([self.P, self.dQ, self.R])),
                       mul_up(h0, sum_up([self.dP, self.dR])), mul_up(h2, self.Q)])


def _weight_parts(model: MapModel, s_oracles, y: Interval):
    s0, s1, s2 = (o(y) for o in s_oracles[:3])
    t1, t2, t3 = (model.derivative(y, k) for k in (1, 2, 3))
    inv = 1.0 / t1
    curv = t2 * inv * inv
    P = s1 * inv
    Q = s0 * inv
    R = s0 * curv
    dP = s2 * inv - s1 * curv
    dQ = s1 * inv - s0 * curv
    dR = s1 * curv + s0 * t3 * inv * inv - 2.0 * s0 * curv * t2 * inv
    return P, Q, R, dP, dQ, dR


def _weight_norms(model: MapModel, s_oracles, depth: int) -> _Weights:
    parts = _weight_parts(model, s_oracles, _cells(depth))
    return _Weights(*(float(np.max(p.mag())) for p in parts))


def lhat_deterministic(
    model: MapModel,
    pert: PerturbationSpec,
    scheme: PartitionScheme,
    ly: LYConstants,
    density: Optional[DensityResult] = None,
    depth: int = 12,
) -> LhatResult:
    """
    f_eta = projection of L(-h S'/T' - h' S/T' + h S T''/T'^2).

    h is the exact density from the perturbation spec when given, otherwise
    the certified approximation from fixed_density.
    """
    if pert.kind != DETERMINISTIC:
        raise ConfigurationError("lhat_deterministic needs a deterministic perturbation",
                                 config_key="perturbation.kind")
    s_oracles = [compile_interval(e, X) for e in derivatives(pert.direction, 2, X)]
    weights = _weight_norms(model, s_oracles, depth)

    if pert.density is not None:
        h_oracles = [compile_interval(e, X) for e in derivatives(pert.density, 2, X)]
        cells = _cells(depth)
        approx_norms = tuple(float(np.max(o(cells).mag())) for o in h_oracles)
        true_norms = approx_norms
        h_err = 0.0

        def h_val(y):
            return h_oracles[0](y)

        def h_slope(y):
            return h_oracles[1](y)
    elif density is not None:
        h = density.h
        sup, c1 = norm_bounds(h)
        deriv = derivative_bound(h)
        approx_norms = (sup, deriv, second_derivative_bound(h))
        h0 = min(ly.M, sum_up([sup, density.err_c1]))
        h1 = min(ly.density_c1, sum_up([deriv, density.err_c1]))
        true_norms = (h0, h1, mul_up(ly.D, sum_up([h0, h1])))
        h_err = density.err_c1

        def h_val(y):
            return eval_nodal(h, y, 0)

        def h_slope(y):
            return eval_nodal(h, y, 1)
    else:
        raise ConfigurationError("deterministic perturbation needs a density",
                                 config_key="perturbation.density")

    def g(y: Interval) -> Interval:
        P, Q, R = _weight_parts(model, s_oracles, y)[:3]
        hy = h_val(y)
        return -(hy * P) - h_slope(y) * Q + hy * R

    with log_operation(logger, "lhat_deterministic", m=scheme.m):
        f_eta = project_c0(scheme, lambda x: transfer_eval(model, g, x), Interval(0.0))

    M, lam, B = ly.M, ly.lam, ly.B
    g_sup = weights.value(approx_norms[0], approx_norms[1])
    g_slope = weights.slope(*approx_norms)
    projection = mul_up(3.0 / scheme.m, M, sum_up([mul_up(lam, g_slope), mul_up(B, g_sup)]))
    h_part = mul_up(M, sum_up([weights.P, weights.Q, weights.R]), h_err)
    approx_err = sum_up([projection, h_part, 3.0 * f_eta.rad])

    t_sup = weights.value(true_norms[0], true_norms[1])
    t_slope = weights.slope(*true_norms)
    c1_bound = sum_up([mul_up(M, t_sup), mul_up(M, lam, t_slope), mul_up(M, B, t_sup)])

    logger.info("Deterministic perturbation applied", extra={"approx_err": approx_err,
                                                             "c1_bound": c1_bound})
    return LhatResult(f_eta=f_eta, approx_err=approx_err, c1_bound=c1_bound)


# ============== Neumann sum ==============

def response_sum(
    op: DiscretizedOperator,
    f_eta: NodalFunction,
    l_star: int,
) -> Tuple[NodalFunction, List[StepNorm]]:
    """
    h_appr = sum_{i < l_star} of the computed iterates x_i, x_0 = f_eta.

    Each step is taken from the exact midpoint vector of the previous one;
    the recorded local error is the radius of that single product.
    """
    if l_star < 1:
        raise ValueError("l_star must be at least 1")
    x = f_eta.as_error_vector().mid.copy()
    acc = ErrorVector(np.zeros_like(x))
    steps: List[StepNorm] = []

    with log_operation(logger, "response_sum", m=op.scheme.m, l_star=l_star):
        for j in range(l_star):
            current = NodalFunction.from_error_vector(ErrorVector(x))
            sup, _ = norm_bounds(current)
            deriv = derivative_bound(current)
            acc = acc + ErrorVector(x)
            local = 0.0
            if j < l_star - 1:
                nxt = matvec(op, ErrorVector(x))
                local = nxt.rad
                x = nxt.mid
            steps.append(StepNorm(sup=sup, deriv=deriv, local=local))

    return NodalFunction.from_error_vector(acc), steps


# ============== Error budget ==============

def discrepancy(
    ly: LYConstants,
    scheme: PartitionScheme,
    steps: List[StepNorm],
    l_star: int,
    refine: bool = True,
) -> float:
    """M sum_j (l* - 1 - j) [||(L - L_eta) x_j|| + 3 local_j]."""
    dist = operator_distance(ly, scheme)
    terms = []
    for j, step in enumerate(steps[:max(l_star - 1, 0)]):
        general = mul_up(dist, step.c1)
        if refine and not step.c1_only:
            general = min(general, range_distance(ly, scheme, step.sup, step.deriv))
        per_step = sum_up([general, 3.0 * step.local])
        terms.append(mul_up(float(l_star - 1 - j), per_step))
    return mul_up(ly.M, sum_up(terms)) if terms else 0.0


def error_budget(
    cert: EquilibriumCertificate,
    ly: LYConstants,
    scheme: PartitionScheme,
    lhat: LhatResult,
    steps: List[StepNorm],
    l_star: int,
    h_appr: Optional[NodalFunction] = None,
    refine: bool = True,
) -> ResponseCertificate:
    """Three summands and their outward-rounded total."""
    if l_star % cert.n1 != 0:
        raise ValueError(f"l_star {l_star} is not a multiple of n1 = {cert.n1}")
    summand1 = tail_value(cert, lhat.c1_bound, l_star // cert.n1) if lhat.c1_bound else 0.0
    summand2 = discrepancy(ly, scheme, steps, l_star, refine)
    summand3 = mul_up(sum_up([1.0, mul_up(float(l_star - 1), ly.M)]), lhat.approx_err)
    rounding = 3.0 * h_appr.rad if h_appr is not None else 0.0
    total = round_up(sum_up([summand1, summand2, summand3, rounding]))

    logger.info("Error budget", extra={"summand1": summand1, "summand2": summand2,
                                       "summand3": summand3, "total": total,
                                       "l_star": l_star})
    return ResponseCertificate(
        h_appr=h_appr, summand1=summand1, summand2=summand2, summand3=summand3, total=total,
        l_star=l_star, m=scheme.m, per_step_norms=[s.c1 for s in steps], rounding=rounding,
        gamma_factor=lhat.gamma_factor,
    )
