"""
Run artifacts: certificate, CSV samples and audit log.

Everything written here is a pure function of the run's numbers, so two
runs of the same config produce byte-identical files. Timestamps and
correlation ids stay in the logs.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Union

import numpy as np
import pandas as pd
import yaml

from models.certificates import AuditEntry, DiscreteLY, EquilibriumCertificate, LYConstants
from models.operator import DensityResult
from models.partition import DiscreteFunction, sample
from models.response import ResponseCertificate

CERTIFICATE_FILE = "certificate.yaml"
RESPONSE_FILE = "response.csv"
DENSITY_FILE = "density.csv"
AUDIT_FILE = "audit.log"

STATUS_OK = "certified"
STATUS_OVER_BUDGET = "budget_exceeded"
STATUS_FAILED = "failed"


@dataclass
class RunRecord:
    """What a run has established so far; partial records are written on failure."""

    map_info: Dict[str, Any] = field(default_factory=dict)
    ly: Optional[LYConstants] = None
    discrete: Optional[DiscreteLY] = None
    equilibrium: Optional[EquilibriumCertificate] = None
    density: Optional[DensityResult] = None
    response: Optional[ResponseCertificate] = None
    tau: Optional[float] = None
    status: str = STATUS_OK
    error: Optional[Dict[str, Any]] = None
    audit: List[AuditEntry] = field(default_factory=list)

    def add_audit(self, entries: Iterable[AuditEntry]) -> None:
        self.audit.extend(entries)


def _num(x) -> float:
    return float(x)


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (bool, int, float, str)) or obj is None:
        return obj
    if isinstance(obj, np.generic):
        return obj.item()
    return str(obj)


def certificate_dict(record: RunRecord) -> Dict[str, Any]:
    """Plain-data view of the record, floats only, no timestamps."""
    out: Dict[str, Any] = {"status": record.status, "map": dict(record.map_info)}
    if record.ly is not None:
        ly = record.ly
        out["lasota_yorke"] = {"lambda": _num(ly.lam), "B": _num(ly.B), "M": _num(ly.M),
                               "C": _num(ly.C), "D": _num(ly.D), "Z": _num(ly.Z),
                               "T3": _num(ly.T3), "C_step": _num(ly.C_step),
                               "D_step": _num(ly.D_step)}
    if record.discrete is not None:
        d = record.discrete
        out["discrete_lasota_yorke"] = {"k": int(d.k), "lambda_eta": _num(d.lambda_eta),
                                        "C_eta": _num(d.C_eta), "mu_eta": _num(d.mu_eta),
                                        "D_eta": _num(d.D_eta)}
    if record.equilibrium is not None:
        c = record.equilibrium
        out["equilibrium"] = {
            "n1": int(c.n1), "lambda2": _num(c.lambda2), "rho": _num(c.rho),
            "a": _num(c.a), "b": _num(c.b), "C1": _num(c.C1), "C1_strong": _num(c.C1_strong),
            "strong_resolvent": _num(c.strong_resolvent),
            "mat2": [[_num(v) for v in row] for row in c.mat2],
            "eigen_inequality_holds": bool(c.eigen_inequality_holds()),
        }
    if record.density is not None:
        d = record.density
        out["density"] = {"err_c1": _num(d.err_c1), "residual_c1": _num(d.residual_c1),
                          "iterations": int(d.iterations), "mass_defect": _num(d.mass_defect),
                          "projection": _num(d.projection),
                          "m": int(d.h.m)}
    if record.response is not None:
        r = record.response
        out["response"] = {
            "m": int(r.m), "l_star": int(r.l_star),
            "summand1": _num(r.summand1), "summand2": _num(r.summand2),
            "summand3": _num(r.summand3), "rounding": _num(r.rounding), "total": _num(r.total),
            "gamma_factor": r.gamma_factor,
            "per_step_norms": [_num(v) for v in r.per_step_norms],
        }
        if record.tau is not None:
            out["response"]["tau"] = _num(record.tau)
            out["response"]["within_tau"] = bool(r.within(record.tau))
    if record.error is not None:
        out["error"] = _plain(record.error)
    return out


def write_certificate(record: RunRecord, out_dir: Union[str, Path]) -> Path:
    path = Path(out_dir) / CERTIFICATE_FILE
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        yaml.safe_dump(certificate_dict(record), fh, sort_keys=True, default_flow_style=False)
    return path


def write_audit_log(record: RunRecord, out_dir: Union[str, Path]) -> Path:
    """One constant per line: 'id, formula_ref, value, inputs'."""
    path = Path(out_dir) / AUDIT_FILE
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [entry.render() for entry in record.audit]
    if record.error is not None:
        lines.append(f"error, {record.error.get('error_code')}, nan, "
                     f"message={record.error.get('message')!r}")
    path.write_text("\n".join(lines) + "\n")
    return path


def sample_grid(samples: int) -> np.ndarray:
    return np.arange(samples, dtype=float) / samples


def write_samples(g: DiscreteFunction, path: Union[str, Path], samples: int) -> Path:
    """CSV with header 'x,value' of g on a uniform grid."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    xs = sample_grid(samples)
    frame = pd.DataFrame({"x": xs, "value": sample(g, xs)})
    frame.to_csv(path, index=False, float_format="%.17g")
    return path


def read_samples(path: Union[str, Path]) -> pd.DataFrame:
    return pd.read_csv(path, float_precision="round_trip")
