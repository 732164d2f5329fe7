"""
Analytic constants and the convergence-to-equilibrium certificate.

Strong norm is C^1, weak norm is C^0 throughout. Every constant is
evaluated in interval arithmetic and reported by its upper endpoint, so
loosening an input can only loosen an output.
"""

import math
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from models.dynamics import DerivativeBounds, iterate_distortion
from models.operator import DiscretizedOperator, PowerNormTrace, norm_V_powers
from models.partition import PartitionScheme
from models.rigor import Interval, round_up
from utils.exceptions import NoContraction
from utils.logger import get_certificate_logger, log_function_call

logger = get_certificate_logger()

# projection constants: ||(Id - Pi) f||_inf <= K eta ||f'||_inf and ||Pi||_inf <= P
PROJECTION_K = 3.0
PROJECTION_P = 5.0

_RESOLVENT_STEPS = 16
_AB_FLOOR = 1e-12


def _iv(x) -> Interval:
    return Interval(float(x))


def _up(x: Interval) -> float:
    return float(x.upper())


@dataclass(frozen=True)
class AuditEntry:
    id: str
    formula_ref: str
    value: float
    inputs: Tuple[Tuple[str, float], ...] = ()

    def render(self) -> str:
        args = " ".join(f"{k}={v!r}" for k, v in self.inputs)
        return f"{self.id}, {self.formula_ref}, {self.value!r}, {args}"


# ============== Lasota-Yorke constants ==============

@dataclass(frozen=True)
class LYConstants:
    """
    Lasota-Yorke data for the transfer operator.

    C and D hold for every iterate:
        ||L^n f||_{C^1} <= M lam^n ||f||_{C^1} + C ||f||_inf
        ||L^n f||_{C^2} <= M lam^(2n) ||f||_{C^2} + D ||f||_{C^1}
    C_step and D_step are the single-step coefficients.
    """

    lam: float
    B: float
    M: float
    C: float
    D: float
    Z: float
    T3: float = 0.0
    C_step: float = 0.0
    D_step: float = 0.0
    n: int = 1

    @property
    def variation_pair(self) -> Tuple[float, float]:
        """(lam, B) in Var(L f) <= lam Var(f) + B ||f||_1."""
        return self.lam, self.B

    @property
    def c1_pair(self) -> Tuple[float, float]:
        return round_up(self.M * self.lam ** self.n), self.C

    @property
    def c2_pair(self) -> Tuple[float, float]:
        return round_up(self.M * self.lam ** (2 * self.n)), self.D

    @property
    def growth(self) -> float:
        """Bound on ||L^n||_{C^1 -> C^1} for every n."""
        return max(1.0, self.C, self.M)

    @property
    def density_c1(self) -> float:
        """Bound on the C^1 norm of the invariant density."""
        return _up(_iv(self.C) * self.M)

    def audit_entries(self) -> List[AuditEntry]:
        base = (("lam", self.lam), ("B", self.B))
        return [
            AuditEntry("ly.lambda", "sup 1/T'", self.lam),
            AuditEntry("ly.B", "sup |T''|/T'^2", self.B),
            AuditEntry("ly.T3", "sup |T'''|/T'^3", self.T3),
            AuditEntry("ly.M", "1 + B/(1-lam)", self.M, base),
            AuditEntry("ly.Z", "(T3 + 3 lam B^2/(1-lam))/(1-lam^2)", self.Z,
                       base + (("T3", self.T3),)),
            AuditEntry("ly.C", "B M/(1-lam) + M", self.C, base + (("M", self.M),)),
            AuditEntry("ly.D", "max(3 lam B M/(1-lam), 3 M (B/(1-lam))^2 + M Z) + M lam + C",
                       self.D, base + (("M", self.M), ("Z", self.Z), ("C", self.C))),
            AuditEntry("ly.C_step", "lam B + (1-lam) M", self.C_step, base + (("M", self.M),)),
            AuditEntry("ly.D_step", "lam M + C_step + 3 max(1, B^2) M + M T3", self.D_step,
                       base + (("M", self.M), ("T3", self.T3))),
        ]


def ly_constants(db: DerivativeBounds, n: int = 1) -> LYConstants:
    """All Lasota-Yorke constants from the certified derivative bounds."""
    lam, B, T3 = _iv(db.lam), _iv(db.B), _iv(db.T3)
    one_minus = 1.0 - lam
    if not one_minus.lo > 0:
        raise NoContraction(f"lambda = {db.lam} is not below 1", best_rho=db.lam)

    M = 1.0 + B / one_minus
    _, Z_up = iterate_distortion(db, 1)
    Z = _iv(Z_up)
    C = B * M / one_minus + M
    D_max = Interval.hull(3.0 * lam * B * M / one_minus,
                          3.0 * M * (B / one_minus) ** 2 + M * Z)
    D = Interval(D_max.hi) + M * lam + C
    C_step = lam * B + one_minus * M
    D_step = lam * M + C_step + 3.0 * max(1.0, _up(B * B)) * M + M * T3

    ly = LYConstants(lam=db.lam, B=db.B, M=_up(M), C=_up(C), D=_up(D), Z=_up(Z), T3=db.T3,
                     C_step=_up(C_step), D_step=_up(D_step), n=n)
    logger.info("Lasota-Yorke constants", extra={"lam": ly.lam, "B": ly.B, "M": ly.M,
                                                 "C": ly.C, "D": ly.D})
    return ly


@dataclass(frozen=True)
class DiscreteLY:
    k: int
    lambda_eta: float
    C_eta: float
    mu_eta: float
    D_eta: float

    @property
    def usable(self) -> bool:
        return self.lambda_eta < 1.0 and self.mu_eta < 1.0


def discrete_ly(ly: LYConstants, scheme: PartitionScheme, k: int) -> DiscreteLY:
    """Lasota-Yorke pairs of the discretized operator of the k-th iterate."""
    if k < 1:
        raise ValueError("iterate must be at least 1")
    m = float(scheme.m)
    eta = Interval(1.0) / m
    lam, B, M, Z = _iv(ly.lam), _iv(ly.B), _iv(ly.M), _iv(ly.Z)
    lam_k = lam ** k
    lam_2k = lam ** (2 * k)
    one_minus = 1.0 - lam
    bm = B * M / one_minus
    cubic = 3.0 * B * B * M + M * Z

    lambda_eta = (4.5 + 2.0 * eta) * 4.5 * M * lam_k + 10.0 * M * eta
    C_eta = (5.5 + 2.0 * eta) * 5.0 * bm + 5.0 * M - lambda_eta
    mu_eta = 2.25 * lam_2k * M + (bm + M + lam_k * B + 1.5 * lam_2k * M + 2.5 * cubic * eta) * eta
    a = bm + 1.5 * cubic + M + lam_k * B + cubic * eta
    b = lam_k * (2.0 * M + 4.5 * B * M + B) + M * (3.0 * B * B + Z + 1.0 + B / one_minus) \
        + eta * (3.0 * lam_k * B * M + cubic)
    D_eta = Interval(max(_up(a), _up(b))) - mu_eta

    return DiscreteLY(k=k, lambda_eta=_up(lambda_eta), C_eta=_up(C_eta), mu_eta=_up(mu_eta),
                      D_eta=_up(D_eta))


@log_function_call(logger)
def choose_discrete_iterate(ly: LYConstants, scheme: PartitionScheme, k_max: int = 64) -> Optional[DiscreteLY]:
    """Smallest iterate whose discrete pairs are usable, or None."""
    for k in range(1, k_max + 1):
        dly = discrete_ly(ly, scheme, k)
        if dly.usable:
            return dly
    return None


# ============== Operator approximation ==============

def operator_distance(ly: LYConstants, scheme: PartitionScheme) -> float:
    """Bound on ||L - L_eta||_{C^1 -> C^0}."""
    delta = Interval(PROJECTION_K) / float(scheme.m)
    M = _iv(ly.M)
    return _up(delta * (M * ly.lam + PROJECTION_P * M + ly.C))


def range_distance(ly: LYConstants, scheme: PartitionScheme, sup: float, deriv: float) -> float:
    """Bound on ||(L - L_eta) u||_inf for u already in the discrete space."""
    delta = Interval(PROJECTION_K) / float(scheme.m)
    M = _iv(ly.M)
    return _up(delta * (M * ly.lam * deriv + M * ly.B * sup))


@dataclass(frozen=True)
class DistancePair:
    strong: float
    weak: float

    @property
    def total(self) -> float:
        return round_up(self.strong + self.weak)


@dataclass(frozen=True)
class ApproxBound:
    """
    Data of ||(L - L_d) f||_w <= K d (A lam1 + P M) ||f||_s + K d B ||f||_w.

    per_power[i-1] bounds the weak norm of L_d^i on zero-average functions.
    """

    K: float
    P: float
    A: float
    lambda1: float
    Bly: float
    M: float
    delta: float
    per_power: Tuple[float, ...] = ()
    M_delta: Optional[float] = None


def approx_bound(ly: LYConstants, scheme: PartitionScheme,
                 per_power: Sequence[float] = (), M_delta: Optional[float] = None) -> ApproxBound:
    return ApproxBound(K=PROJECTION_K, P=PROJECTION_P, A=ly.M, lambda1=ly.lam, Bly=ly.C,
                       M=ly.M, delta=_up(Interval(1.0) / float(scheme.m)),
                       per_power=tuple(per_power), M_delta=M_delta)


def _power_sum(ab: ApproxBound, n: int, norms: List[float]) -> DistancePair:
    Kd = _iv(ab.K) * ab.delta
    lam1 = _iv(ab.lambda1)
    A = _iv(ab.A)
    front = A * lam1 + _iv(ab.P) * ab.M
    strong = Interval(0.0)
    weak = Interval(0.0)
    for k in range(1, n + 1):
        Cnk = _iv(norms[n - k])
        if k == 1:
            strong = strong + Cnk * front
            weak = weak + Cnk * ab.Bly
        else:
            strong = strong + Cnk * front * A * lam1 ** (k - 1)
            weak = weak + Cnk * (front * ab.Bly + _iv(ab.Bly) * ab.M)
    return DistancePair(strong=_up(Kd * strong), weak=_up(Kd * weak))


def power_distance(ab: ApproxBound, n: int) -> DistancePair:
    """
    Bound on ||(L^n - L_d^n) f||_w as a (strong, weak) coefficient pair.

    Uses the computed per-power norms when C_1..C_{n-1} are available and
    the uniform M_delta otherwise; when both apply the pair with the
    smaller sum is returned.
    """
    if n < 1:
        raise ValueError("power must be at least 1")
    candidates = []
    if len(ab.per_power) >= n - 1:
        candidates.append(_power_sum(ab, n, [1.0] + list(ab.per_power[:n - 1])))
    if ab.M_delta is not None:
        candidates.append(_power_sum(ab, n, [1.0] + [max(1.0, ab.M_delta)] * (n - 1)))
    if not candidates:
        raise ValueError(f"power {n} needs per-power norms or M_delta")
    return min(candidates, key=lambda pair: pair.total)


# ============== Equilibrium certificate ==============

@dataclass(frozen=True)
class EquilibriumCertificate:
    """
    ||L^(k n1) g||_(a,b) <= rho^k ||g||_(a,b) for zero-average g, where
    ||g||_(a,b) = a ||g||_{C^1} + b ||g||_inf.
    """

    n1: int
    lambda2: float
    mat2: Tuple[Tuple[float, float], Tuple[float, float]]
    rho: float
    a: float
    b: float
    C1: float
    C1_strong: float
    growth: float = 1.0
    weak_bound: float = 1.0
    strong_resolvent: float = math.inf
    distance: Optional[DistancePair] = None
    approx: Optional[ApproxBound] = field(default=None, repr=False)
    per_power: Tuple[float, ...] = field(default=(), repr=False)

    def eigen_inequality_holds(self) -> bool:
        """Re-check (a,b) mat2 <= rho (a,b) in interval arithmetic."""
        (m11, m12), (m21, m22) = self.mat2
        a, b = _iv(self.a), _iv(self.b)
        first = (a * m11 + b * m21) / a
        second = (a * m12 + b * m22) / b
        return _up(first) <= self.rho and _up(second) <= self.rho

    def audit_entries(self) -> List[AuditEntry]:
        (m11, m12), (m21, m22) = self.mat2
        mats = (("m11", m11), ("m12", m12), ("m21", m21), ("m22", m22))
        return [
            AuditEntry("equilibrium.n1", "first n with rho below target", float(self.n1)),
            AuditEntry("equilibrium.lambda2", "restricted power norm at n1", self.lambda2),
            AuditEntry("equilibrium.rho", "max_j ((a,b) mat2)_j / (a,b)_j", self.rho,
                       mats + (("a", self.a), ("b", self.b))),
            AuditEntry("equilibrium.C1", "1/b", self.C1, (("b", self.b),)),
            AuditEntry("equilibrium.C1_strong", "1/a", self.C1_strong, (("a", self.a),)),
            AuditEntry("equilibrium.strong_resolvent",
                       "sum of strong norms of mat2 powers over one block, geometric tail",
                       self.strong_resolvent, (("rho", self.rho), ("n1", float(self.n1)))),
        ]


def _rho_for(mat: np.ndarray, a: float, b: float) -> float:
    A, Bw = _iv(a), _iv(b)
    first = (A * mat[0, 0] + Bw * mat[1, 0]) / A
    second = (A * mat[0, 1] + Bw * mat[1, 1]) / Bw
    return max(_up(first), _up(second))


def _left_weights(mat: np.ndarray) -> Tuple[float, float]:
    values, vectors = np.linalg.eig(mat.T)
    lead = int(np.argmax(values.real))
    v = np.abs(vectors[:, lead].real)
    v = np.maximum(v, _AB_FLOOR)
    v = v / v.sum()
    return float(v[0]), float(v[1])


def _strong_sum(mat: np.ndarray, x: Tuple[float, float], a: float, b: float, rho: float) -> Interval:
    s, w = _iv(x[0]), _iv(x[1])
    total = Interval(0.0)
    for _ in range(_RESOLVENT_STEPS):
        total = total + s
        s, w = s * mat[0, 0] + w * mat[0, 1], s * mat[1, 0] + w * mat[1, 1]
    tail = (s * a + w * b) / a / (1.0 - _iv(rho))
    return total + tail


def certify_matrix(
    mat2,
    n1: int = 1,
    lambda2: float = 0.0,
    growth: float = 1.0,
    weak_bound: float = 1.0,
    ab_search: bool = True,
) -> EquilibriumCertificate:
    """
    Certified contraction rate of a nonnegative 2x2 majorant.

    With ab_search the weights come from the leading left eigenvector; a
    degenerate eigenvector is compared against (1/2, 1/2) and the more
    balanced of two equally good weightings is kept.
    """
    mat = np.asarray(mat2, dtype=float)
    if mat.shape != (2, 2) or np.any(mat < 0):
        raise ValueError("majorant must be a nonnegative 2x2 matrix")

    candidates = [(0.5, 0.5)]
    if ab_search:
        candidates.insert(0, _left_weights(mat))
    scored = [(_rho_for(mat, a, b), a, b) for a, b in candidates]
    best = min(r for r, _, _ in scored)
    close = [s for s in scored if s[0] <= best * (1.0 + 1e-9) + 1e-300]
    rho, a, b = max(close, key=lambda s: min(s[1], s[2]))

    C1 = _up(Interval(1.0) / b)
    C1_strong = _up(Interval(1.0) / a)
    if rho < 1.0:
        r0 = _strong_sum(mat, (1.0, 1.0), a, b, rho)
        rr = _strong_sum(mat, (growth, weak_bound), a, b, rho)
        resolvent = _up(r0 + float(n1 - 1) * rr)
    else:
        resolvent = math.inf

    return EquilibriumCertificate(
        n1=n1, lambda2=lambda2,
        mat2=((float(mat[0, 0]), float(mat[0, 1])), (float(mat[1, 0]), float(mat[1, 1]))),
        rho=rho, a=a, b=b, C1=C1, C1_strong=C1_strong, growth=growth, weak_bound=weak_bound,
        strong_resolvent=resolvent,
    )


def equilibrium_matrix(ly: LYConstants, ab: ApproxBound, n1: int, lambda2: float) -> Tuple[np.ndarray, DistancePair]:
    dist = power_distance(ab, n1)
    top_left = _up(_iv(ly.M) * _iv(ly.lam) ** n1)
    bottom_right = _up(_iv(dist.weak) + lambda2)
    mat = np.array([[top_left, ly.C], [dist.strong, bottom_right]])
    return mat, dist


def _certificate_at(ly: LYConstants, ab: ApproxBound, n1: int, lambda2: float,
                    ab_search: bool) -> EquilibriumCertificate:
    mat, dist = equilibrium_matrix(ly, ab, n1, lambda2)
    cert = certify_matrix(mat, n1=n1, lambda2=lambda2, growth=ly.growth, weak_bound=ly.M,
                          ab_search=ab_search)
    return replace(cert, distance=dist, approx=ab, per_power=ab.per_power)


def equilibrium(
    op: DiscretizedOperator,
    ly: LYConstants,
    ab_search: bool = True,
    cap: int = 32,
    rho_target: float = 0.05,
    threads: int = 1,
    trace: Optional[PowerNormTrace] = None,
) -> EquilibriumCertificate:
    """
    Find n1 and certify convergence to equilibrium.

    The restricted power norms are computed once up to the cap. n1 is the
    first power with rho below rho_target, located by doubling and then
    bisection; failing that the power with the smallest rho is used.
    """
    if trace is None or len(trace.bounds) < cap:
        trace = norm_V_powers(op, cap, threads)
    ab = approx_bound(ly, op.scheme, trace.bounds[:cap])
    cache = {}

    def cert_at(n: int) -> EquilibriumCertificate:
        if n not in cache:
            cache[n] = _certificate_at(ly, ab, n, trace.bound(n), ab_search)
        return cache[n]

    found = None
    previous = 0
    n = 1
    while True:
        probe = min(n, cap)
        if cert_at(probe).rho < rho_target:
            found = probe
            break
        if probe == cap:
            break
        previous = probe
        n *= 2

    if found is not None:
        lo, hi = previous, found
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if cert_at(mid).rho < rho_target:
                hi = mid
            else:
                lo = mid
        cert = cert_at(hi)
    else:
        for n in range(1, cap + 1):
            cert_at(n)
        cert = min(cache.values(), key=lambda c: c.rho)
        if not cert.rho < 1.0:
            raise NoContraction(f"no power up to {cap} gives a contracting certificate",
                                cap=cap, best_rho=cert.rho)
        logger.warning("rho target not reached", extra={"rho_target": rho_target,
                                                        "rho": cert.rho, "n1": cert.n1})

    logger.info("Equilibrium certified", extra={"n1": cert.n1, "rho": cert.rho,
                                                "lambda2": cert.lambda2, "C1": cert.C1})
    return cert


# ============== Truncation length ==============

def tail_value(cert: EquilibriumCertificate, lhat_c1_bound: float, k: int) -> float:
    """Bound on the weak norm of sum_{i >= k n1} L^i f for zero-average f."""
    if not cert.rho < 1.0:
        return math.inf
    rho = _iv(cert.rho)
    block = float(cert.n1) * (_iv(cert.a) * cert.growth + _iv(cert.b) * cert.weak_bound) / cert.b
    return _up(block * rho ** k / (1.0 - rho) * lhat_c1_bound)


def tail_length(cert: EquilibriumCertificate, lhat_c1_bound: float, tau: float) -> Tuple[int, float]:
    """Smallest l* = k n1 (k >= 1) whose tail bound is at most tau, and that bound."""
    k = 1
    tail = tail_value(cert, lhat_c1_bound, k)
    if math.isinf(tau) or lhat_c1_bound == 0.0:
        return cert.n1 * k, tail
    if not cert.rho < 1.0:
        raise NoContraction("tail length needs rho below 1", best_rho=cert.rho)
    while tail > tau:
        k += 1
        tail = tail_value(cert, lhat_c1_bound, k)
    return cert.n1 * k, tail
