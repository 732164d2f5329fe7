"""
Finite-rank approximations of the transfer operator.

Two schemes are assembled as sparse midpoint matrices with a per-entry
radius:

- "c0": coefficients (v_0..v_m, c) of sum v_i phi_i + c kappa, i.e. the
  projection onto nodal values plus the mass-restoring kappa direction.
- "c1": input coefficients on the compactly supported primitives
  f_j = a_j e_j - b_j e_{j+1} plus the constant 1, output coefficients
  (d_0..d_m, c0) of c0 + sum d_i e_i.

Row m+1 is the mass row in both schemes and is filled from the closed-form
integrals, since the transfer operator preserves total mass.
"""

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
import pandas as pd
import scipy.sparse as sps
from joblib import Parallel, delayed

from models.dynamics import MapModel, preimages
from models.partition import (
    C1Primitive,
    PartitionScheme,
    basis_change,
    eval_nodal,
    kappa_eval,
    norm_bounds,
    primitive_offset,
    reference_bump,
    reference_primitive,
    second_derivative_bound,
)
from models.rigor import (
    UNIT_ROUNDOFF,
    ErrorVector,
    Interval,
    gamma,
    kahan_cumsum,
    mul_up,
    round_up,
    sum_up,
)
from utils.exceptions import ContractionNotCertified, ParseError
from utils.logger import get_operator_logger, log_operation

logger = get_operator_logger()

KIND_C0 = "c0"
KIND_C1 = "c1"
KINDS = (KIND_C0, KIND_C1)

_ROW_BLOCK = 1024
_COLUMN_BLOCK = 256
# relative slack on the handful of float operations in a radius formula
_RAD_INFLATE = 1.0 + 16.0 * UNIT_ROUNDOFF


@dataclass(frozen=True)
class DiscretizedOperator:
    scheme: PartitionScheme
    kind: str
    mat: sps.csr_matrix
    entry_rad: float
    map_id: str = ""
    rad_mat: Optional[sps.csr_matrix] = field(default=None, repr=False)

    @property
    def dim(self) -> int:
        return self.scheme.m + 2

    @cached_property
    def abs_mat(self) -> sps.csr_matrix:
        return abs(self.mat).tocsr()

    @cached_property
    def pattern(self) -> sps.csr_matrix:
        p = self.mat.copy().tocsr()
        p.data = np.ones_like(p.data)
        return p

    @cached_property
    def radii(self) -> sps.csr_matrix:
        """Per-entry radii; the uniform entry_rad where none were stored."""
        if self.rad_mat is not None:
            return self.rad_mat.tocsr()
        return (self.pattern * self.entry_rad).tocsr()

    @cached_property
    def row_gamma(self) -> np.ndarray:
        """Summation error factor of each row, from its own length."""
        nu = (np.diff(self.pattern.indptr) + 1) * UNIT_ROUNDOFF
        if np.any(nu >= 0.5):
            raise ValueError("row too long for double precision summation")
        return nu / (1.0 - nu) * _RAD_INFLATE

    @cached_property
    def row_abs(self) -> np.ndarray:
        """Upper bounds on the row sums of |exact entries|."""
        sums = np.asarray(self.abs_mat.sum(axis=1)).ravel()
        rads = np.asarray(self.radii.sum(axis=1)).ravel()
        return (sums + rads) * (1.0 + self.row_gamma) * _RAD_INFLATE

    @property
    def nnz(self) -> int:
        return int(self.mat.nnz)


@dataclass(frozen=True)
class DensityResult:
    h: C1Primitive
    err_c1: float
    residual_c1: float = 0.0
    iterations: int = 0
    mass_defect: float = 0.0
    projection: float = 0.0


@dataclass(frozen=True)
class PowerNormTrace:
    """Per-step certified bounds for n = 1..len(bounds)."""

    bounds: List[float]
    one_norms: List[float]
    computed: List[float]
    local_errors: List[float]

    def bound(self, n: int) -> float:
        if n < 1 or n > len(self.bounds):
            raise ValueError(f"power {n} outside 1..{len(self.bounds)}")
        return self.bounds[n - 1]


# ============== Assembly ==============

def _prime_eval(scheme: PartitionScheme, j: np.ndarray, y: Interval) -> Tuple[Interval, Interval]:
    """Enclosures of f_j(y) and f_j'(y) for the compactly supported primitives."""
    m = scheme.m
    a_all, b_all = scheme.prime_coefficients
    a = Interval.point(a_all[j])
    b = Interval.point(b_all[j])
    t = y * float(m) - Interval.point(j.astype(float))
    e0 = reference_primitive(t) - Interval.point(primitive_offset(j))
    e1 = reference_primitive(t - 1.0)
    value = (a * e0 - b * e1) / float(m)
    slope = a * reference_bump(t) - b * reference_bump(t - 1.0)
    return value, slope


def _collect(rows, cols, term: Interval, valid: np.ndarray, out: list) -> None:
    keep = valid & ~((term.lo == 0.0) & (term.hi == 0.0))
    if np.any(keep):
        out.append((rows[keep], cols[keep], term.lo[keep], term.hi[keep]))


def _assemble_block(model: MapModel, scheme: PartitionScheme, kind: str, rows: np.ndarray):
    """Entries of the rows `rows`, plus the dense last column for those rows."""
    m = scheme.m
    nodes = scheme.node_intervals[rows]
    entries: list = []
    last = Interval.point(np.zeros(rows.shape))

    for y in preimages(model, nodes):
        d1 = model.derivative(y, 1)
        p = scheme.cell_of(y.mid)
        if kind == KIND_C0:
            for off in (-1, 0, 1, 2):
                j = p + off
                valid = (j >= 0) & (j <= m)
                jc = np.clip(j, 0, m)
                t = y * float(m) - Interval.point(jc.astype(float))
                _collect(rows, jc, reference_bump(t) / d1, valid, entries)
            last = last + kappa_eval(scheme, y) / d1
        else:
            inv_sq = 1.0 / (d1 * d1)
            curvature = model.derivative(y, 2) / (d1 * d1 * d1)
            for off in (-2, -1, 0, 1, 2):
                j = p + off
                valid = (j >= 0) & (j <= m)
                jc = np.clip(j, 0, m)
                value, slope = _prime_eval(scheme, jc, y)
                _collect(rows, jc, slope * inv_sq - value * curvature, valid, entries)
            last = last - curvature
    return entries, last


def _merge(entries: list, shape: Tuple[int, int], max_dup: int):
    """Sum duplicate (row, col) enclosures with a summation slack."""
    rows = np.concatenate([e[0] for e in entries])
    cols = np.concatenate([e[1] for e in entries])
    lo = np.concatenate([e[2] for e in entries])
    hi = np.concatenate([e[3] for e in entries])
    keys = rows.astype(np.int64) * shape[1] + cols
    uniq, inverse = np.unique(keys, return_inverse=True)
    n = uniq.size
    lo_sum = np.bincount(inverse, weights=lo, minlength=n)
    hi_sum = np.bincount(inverse, weights=hi, minlength=n)
    mag = np.bincount(inverse, weights=np.maximum(np.abs(lo), np.abs(hi)), minlength=n)
    slack = gamma(max_dup) * mag
    merged = Interval(lo_sum, hi_sum) + Interval(-slack, slack)
    return uniq // shape[1], uniq % shape[1], merged


def _column_sums(rows, cols, values: Interval, weights: Interval, ncols: int) -> Interval:
    """Enclosures of sum_r weights_r * values_rj for every column j."""
    prod = values * weights[rows]
    lo = np.bincount(cols, weights=prod.lo, minlength=ncols)
    hi = np.bincount(cols, weights=prod.hi, minlength=ncols)
    counts = np.bincount(cols, minlength=ncols)
    mag = np.bincount(cols, weights=prod.mag(), minlength=ncols)
    slack = gamma(int(counts.max()) + 1) * mag
    return Interval(lo, hi) + Interval(-slack, slack)


def assemble(
    model: MapModel,
    scheme: PartitionScheme,
    kind: str = KIND_C0,
    threads: int = 1,
) -> DiscretizedOperator:
    """Certified sparse representation of the projected transfer operator."""
    if kind not in KINDS:
        raise ValueError(f"unknown scheme kind {kind!r}")
    m = scheme.m
    dim = m + 2

    with log_operation(logger, "assemble", m=m, kind=kind, degree=model.degree):
        blocks = [np.arange(s, min(s + _ROW_BLOCK, m + 1)) for s in range(0, m + 1, _ROW_BLOCK)]
        results = Parallel(n_jobs=threads, prefer="threads")(
            delayed(_assemble_block)(model, scheme, kind, rows) for rows in blocks
        )
        entries = [e for block_entries, _ in results for e in block_entries]
        last = Interval(np.concatenate([r[1].lo for r in results]),
                        np.concatenate([r[1].hi for r in results]))

        rows, cols, body = _merge(entries, (dim, dim), max(model.degree, 1) + 1)

        if kind == KIND_C0:
            weights = scheme.weights_interval
            masses = weights
            last_mass = Interval(1.0)
        else:
            weights = scheme.primitive_integrals
            a, b = scheme.prime_coefficients
            shifted = Interval(np.append(weights.lo[1:], 0.0), np.append(weights.hi[1:], 0.0))
            masses = Interval.point(a) * weights - Interval.point(b) * shifted
            last_mass = Interval(1.0)

        col_sums = _column_sums(rows, cols, body, weights, m + 1)
        mass_row = masses - col_sums
        last_sum = (last * weights).sum()
        corner = last_mass - last_sum

        node_idx = np.arange(m + 1)
        all_rows = np.concatenate([rows, node_idx, np.full(m + 1, m + 1), [m + 1]])
        all_cols = np.concatenate([cols, np.full(m + 1, m + 1), node_idx, [m + 1]])
        all_lo = np.concatenate([body.lo, last.lo, mass_row.lo, np.atleast_1d(corner.lo)])
        all_hi = np.concatenate([body.hi, last.hi, mass_row.hi, np.atleast_1d(corner.hi)])
        enclosure = Interval(all_lo, all_hi)

        mid = sps.csr_matrix((enclosure.mid, (all_rows, all_cols)), shape=(dim, dim))
        rad = sps.csr_matrix((enclosure.rad, (all_rows, all_cols)), shape=(dim, dim))
        entry_rad = round_up(float(np.max(enclosure.rad)))

        logger.info("Operator assembled", extra={"kind": kind, "m": m, "nnz": mid.nnz,
                                                  "entry_rad": entry_rad})
    return DiscretizedOperator(scheme=scheme, kind=kind, mat=mid, entry_rad=entry_rad,
                               map_id=model.identifier, rad_mat=rad)


# ============== Rigorous products ==============

def _to_prime_block(X: np.ndarray, rad: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Column-wise change from (d, c0) to coefficients on the f_j and 1."""
    m = X.shape[0] - 2
    scaled = X[:-1].copy()
    scaled[1:m] *= 2.0
    beta, err = kahan_cumsum(scaled)
    out = np.vstack([beta, X[-1:]])
    return out, (np.asarray(err) + 2.0 * m * rad) * _RAD_INFLATE


def matvec_block(op: DiscretizedOperator, X: np.ndarray, rad: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Apply op to every column of X; rad holds one uniform radius per column."""
    X = np.asarray(X, dtype=float)
    rad = np.asarray(rad, dtype=float)
    if X.shape[0] != op.dim:
        raise ValueError(f"dimension mismatch: operator {op.dim}, vectors {X.shape[0]}")
    if op.kind == KIND_C1:
        X, rad = _to_prime_block(X, rad)

    Y = op.mat @ X
    absX = np.abs(X)
    # rounding of the product, then exact-entry and input uncertainty, row by row
    bound = op.row_gamma[:, None] * (op.abs_mat @ absX)
    bound += op.radii @ absX
    bound += op.row_abs[:, None] * rad[None, :]
    bound *= (1.0 + op.row_gamma)[:, None]
    out_rad = np.max(bound, axis=0) * _RAD_INFLATE + np.max(np.abs(Y), axis=0) * UNIT_ROUNDOFF
    return np.asarray(Y), out_rad


def matvec(op: DiscretizedOperator, g: ErrorVector) -> ErrorVector:
    """Certified product; the result encloses (exact operator) applied to every vector in g."""
    Y, rad = matvec_block(op, g.mid[:, None], np.array([g.rad]))
    return ErrorVector(Y[:, 0], round_up(float(rad[0])))


# ============== Norms restricted to zero-average functions ==============

def _push_columns(op: DiscretizedOperator, X0: np.ndarray, n: int) -> Tuple[np.ndarray, np.ndarray]:
    """Row sums of |X_k| and summed local errors for k = 1..n."""
    row_sums = np.empty((n, X0.shape[0]))
    local = np.empty(n)
    X = X0
    exact = np.zeros(X0.shape[1])
    for k in range(n):
        X, step_rad = matvec_block(op, X, exact)
        row_sums[k] = np.sum(np.abs(X), axis=1)
        # coefficient radius r gives a function error of at most 3r
        local[k] = 3.0 * float(np.sum(step_rad)) * (1.0 + gamma(X.shape[1]))
    return row_sums, local


def norm_V_powers(op: DiscretizedOperator, n: int, threads: int = 1) -> PowerNormTrace:
    """
    Certified sup-norm bounds of op^k on zero-average functions, k = 1..n.

    The zero-average space is spanned by psi_i = phi_i - w_i kappa with
    coefficients g(a_i), so sup_x sum_i |op^k psi_i (x)| bounds the norm.
    Each step is taken on exact midpoint inputs; the local errors are fed
    back through the already certified lower powers.
    """
    if op.kind != KIND_C0:
        raise ValueError("restricted power norms are defined for the c0 scheme")
    if n < 1:
        raise ValueError("power must be at least 1")
    m = op.scheme.m
    dim = op.dim
    w = op.scheme.weights

    with log_operation(logger, "norm_V_powers", m=m, n=n, threads=threads):
        starts = range(0, m + 1, _COLUMN_BLOCK)

        def initial(s: int) -> np.ndarray:
            idx = np.arange(s, min(s + _COLUMN_BLOCK, m + 1))
            X0 = np.zeros((dim, idx.size))
            X0[idx, np.arange(idx.size)] = 1.0
            X0[m + 1, :] = -w[idx]
            return X0

        results = Parallel(n_jobs=threads, prefer="threads")(
            delayed(_push_columns)(op, initial(s), n) for s in starts
        )
        row_sums = sum(r[0] for r in results) * (1.0 + gamma(len(results) + 1))
        local_v = [sum_up(r[1][k] for r in results) for k in range(n)]
        computed = [
            round_up((float(np.max(row_sums[k, :m + 1])) + 2.0 * float(row_sums[k, m + 1]))
                     * (1.0 + gamma(m + 2)) * _RAD_INFLATE)
            for k in range(n)
        ]

        ones = np.zeros((dim, 1))
        ones[:m + 1, 0] = 1.0
        one_sup: List[float] = []
        local_one: List[float] = []
        X = ones
        for _ in range(n):
            X, step_rad = matvec_block(op, X, np.zeros(1))
            one_sup.append(sum_up([float(np.max(np.abs(X[:m + 1, 0]))), 2.0 * abs(X[m + 1, 0])]))
            local_one.append(3.0 * float(step_rad[0]) * _RAD_INFLATE)

        # the kappa entries of psi_i are rounded weights
        start_err = sum_up(2.0 * op.scheme.weights_interval.width) * _RAD_INFLATE
        if 2.0 * start_err >= 1.0:
            raise ContractionNotCertified("spanning set error too large", rho=None)

        U = [1.0]
        K = [1.0]
        for k in range(1, n + 1):
            feed_one = sum_up(mul_up(2.0 * U[k - j] + K[k - j], local_one[j - 1])
                              for j in range(1, k + 1))
            K_k = sum_up([one_sup[k - 1], feed_one])
            feed_v = sum_up(mul_up(2.0 * U[k - j] + K[k - j], local_v[j - 1])
                            for j in range(1, k + 1))
            numer = sum_up([computed[k - 1], feed_v, mul_up(K_k, start_err)])
            U_k = round_up(numer / (1.0 - 2.0 * start_err) * _RAD_INFLATE)
            U.append(U_k)
            K.append(K_k)

        logger.info("Restricted power norms", extra={"n": n, "last": U[-1],
                                                     "min": min(U[1:])})
    return PowerNormTrace(bounds=U[1:], one_norms=K[1:], computed=computed, local_errors=local_v)


def norm_V_power(op: DiscretizedOperator, n: int, threads: int = 1) -> float:
    """Certified bound on the sup norm of op^n restricted to zero-average functions."""
    return norm_V_powers(op, n, threads).bound(n)


# ============== Invariant density ==============

def _float_step(op: DiscretizedOperator, x: np.ndarray) -> np.ndarray:
    beta = basis_change(ErrorVector(x), "B'").mid
    return np.asarray(op.mat @ beta)


def image_curvature_bound(model: MapModel, h: C1Primitive) -> float:
    """
    Certified bound on sup |(L h)''| by direct enclosure.

    On each branch, with y the preimage,
    (L h)'' = sum h''/T'^3 - 3 h' T''/T'^4 - h T'''/T'^4 + 3 h T''^2/T'^5,
    enclosed over cells a quarter of a partition cell wide and summed
    over branches.
    """
    m = h.m
    edges = np.arange(4 * m + 1, dtype=float) / (4 * m)
    y = Interval(edges[:-1], edges[1:])

    h0 = eval_nodal(h, y, 0)
    h1 = eval_nodal(h, y, 1)
    h2 = eval_nodal(h.derivative(), y, 1)
    inv = 1.0 / model.derivative(y, 1)
    d2 = model.derivative(y, 2)
    d3 = model.derivative(y, 3)
    inner = h2 - 3.0 * h1 * d2 * inv - h0 * d3 * inv + 3.0 * h0 * d2 * d2 * inv * inv
    size = (inner * inv * inv * inv).mag()

    per_branch = []
    for branch in model.branches:
        on_branch = (y.hi >= float(branch.domain.lo)) & (y.lo <= float(branch.domain.hi))
        per_branch.append(float(np.max(size[on_branch])))
    return sum_up(per_branch)


def fixed_density(
    op_c1: DiscretizedOperator,
    ly,
    cert,
    model: Optional[MapModel] = None,
    tol: float = 1e-13,
    max_iter: int = 200,
) -> DensityResult:
    """
    Numeric fixed point of the c1 scheme with a certified C^1 distance to
    the true invariant density.

    `ly` supplies the analytic constants and `cert` the contraction
    certificate whose strong resolvent bound controls the error. With the
    map model, the projection term uses a direct enclosure of (L h)''
    wherever it beats the Lasota-Yorke bound.

    Iteration stops once a step changes x by less than tol relative to
    |x|, or once the change stops shrinking at the rounding floor.
    """
    if op_c1.kind != KIND_C1:
        raise ValueError("fixed_density expects the c1 scheme")
    if not cert.rho < 1.0:
        raise ContractionNotCertified(f"contraction rate {cert.rho} is not below 1", rho=cert.rho)
    scheme = op_c1.scheme
    m = scheme.m

    x = np.zeros(op_c1.dim)
    x[m + 1] = 1.0
    change = previous = np.inf
    iterations = 0
    for iterations in range(1, max_iter + 1):
        nxt = _float_step(op_c1, x)
        change = float(np.max(np.abs(nxt - x)))
        x = nxt
        if change <= tol * max(1.0, float(np.max(np.abs(x)))):
            break
        if iterations > 2 and change >= previous:
            logger.debug("Fixed-point iteration at rounding floor",
                         extra={"iterations": iterations, "change": change})
            break
        previous = change
    else:
        logger.warning("Fixed-point iteration hit the cap", extra={"max_iter": max_iter,
                                                                    "change": change})

    h = C1Primitive.from_error_vector(ErrorVector(x))
    residual = matvec(op_c1, ErrorVector(x)) - ErrorVector(x)
    _, residual_c1 = norm_bounds(C1Primitive.from_error_vector(residual))

    sup, h_c1 = norm_bounds(h)
    h_c2 = sum_up([h_c1, second_derivative_bound(h)])
    curvature = sum_up([mul_up(ly.M, ly.lam, ly.lam, h_c2), mul_up(ly.D, h_c1)])
    if model is not None:
        curvature = min(curvature, image_curvature_bound(model, h))
    projection = mul_up(3.0 / m, curvature) * _RAD_INFLATE

    mass = h.integral(scheme)
    mass_defect = round_up(float(max(abs(mass.lo - 1.0), abs(mass.hi - 1.0))))

    err = sum_up([mul_up(cert.strong_resolvent, sum_up([residual_c1, projection])),
                  mul_up(mass_defect, ly.density_c1)])
    logger.info("Invariant density certified", extra={"m": m, "iterations": iterations,
                                                      "residual": residual_c1,
                                                      "projection": projection, "err_c1": err})
    return DensityResult(h=h, err_c1=err, residual_c1=residual_c1, iterations=iterations,
                         mass_defect=mass_defect, projection=projection)


# ============== Triplet export ==============

def export_operator(op: DiscretizedOperator, path: Union[str, Path]) -> Path:
    """Write 'row, col, mid, rad' triplets behind a header recording m, kind and map hash."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    coo = op.mat.tocoo()
    rad = op.rad_mat.tocsr() if op.rad_mat is not None else None
    rads = np.asarray(rad[coo.row, coo.col]).ravel() if rad is not None \
        else np.full(coo.nnz, op.entry_rad)
    order = np.lexsort((coo.col, coo.row))
    frame = pd.DataFrame({"row": coo.row[order], "col": coo.col[order],
                          "mid": coo.data[order], "rad": rads[order]})
    with open(path, "w", newline="") as fh:
        fh.write(f"# m={op.scheme.m}, kind={op.kind}, map_hash={op.map_id}, "
                 f"entry_rad={op.entry_rad!r}\n")
        frame.to_csv(fh, index=False, float_format="%.17g")
    return path


def _parse_header(line: str) -> dict:
    body = line.lstrip("#").strip()
    fields = {}
    for part in body.split(","):
        if "=" not in part:
            raise ParseError(f"malformed operator header {line!r}", line=1)
        key, value = part.split("=", 1)
        fields[key.strip()] = value.strip()
    for key in ("m", "kind", "map_hash", "entry_rad"):
        if key not in fields:
            raise ParseError(f"operator header is missing {key!r}", line=1)
    return fields


def import_operator(path: Union[str, Path]) -> DiscretizedOperator:
    """Read a triplet file written by export_operator; midpoints are bit-identical."""
    path = Path(path)
    with open(path) as fh:
        header = _parse_header(fh.readline())
    m = int(header["m"])
    dim = m + 2
    frame = pd.read_csv(path, comment="#", skipinitialspace=True, float_precision="round_trip")
    rows = frame["row"].to_numpy(dtype=np.int64)
    cols = frame["col"].to_numpy(dtype=np.int64)
    mid = sps.csr_matrix((frame["mid"].to_numpy(dtype=float), (rows, cols)), shape=(dim, dim))
    rad = sps.csr_matrix((frame["rad"].to_numpy(dtype=float), (rows, cols)), shape=(dim, dim))
    return DiscretizedOperator(scheme=PartitionScheme(m), kind=header["kind"], mat=mid,
                               entry_rad=float(header["entry_rad"]), map_id=header["map_hash"],
                               rad_mat=rad)

