"""
Linear Response Certifier - Pipeline Orchestrator

This module runs the end-to-end flow for one config:
1. Certify the map (Lasota-Yorke constants).
2. Certify convergence to equilibrium from a discretized operator.
3. Compute the invariant density with a C^1 error bound (when needed).
4. Apply the perturbation, sum the Neumann series, assemble the budget.

Each stage logs through log_operation; whatever has been established when
a stage fails is still written to the certificate and audit log.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict

from models.certificates import (
    AuditEntry,
    choose_discrete_iterate,
    equilibrium,
    ly_constants,
    tail_length,
)
from models.operator import (
    KIND_C0,
    KIND_C1,
    DiscretizedOperator,
    assemble,
    export_operator,
    fixed_density,
)
from models.partition import PartitionScheme
from models.response import (
    DETERMINISTIC,
    error_budget,
    lhat_deterministic,
    lhat_stochastic,
    response_sum,
)
from pipelines import artifacts
from pipelines.run_config import RunPlan
from utils.exceptions import (
    EXIT_BUDGET_EXCEEDED,
    EXIT_OK,
    CertificationError,
    exit_code_for,
    get_error_summary,
)
from utils.logger import get_pipeline_logger, log_exception, log_operation, run_scope

logger = get_pipeline_logger()

STAGE_CERTIFY = "certify"
STAGE_DENSITY = "density"
STAGE_RESPONSE = "response"
STAGES = (STAGE_CERTIFY, STAGE_DENSITY, STAGE_RESPONSE)


@dataclass
class RunOutcome:
    exit_code: int
    record: artifacts.RunRecord
    files: Dict[str, Path] = field(default_factory=dict)


class _Operators:
    """Assembles each (kind, m) operator at most once per run."""

    def __init__(self, plan: RunPlan):
        self.plan = plan
        self._cache: Dict[tuple, DiscretizedOperator] = {}

    def get(self, kind: str, m: int) -> DiscretizedOperator:
        key = (kind, m)
        if key not in self._cache:
            self._cache[key] = assemble(self.plan.model, PartitionScheme(m), kind,
                                        threads=self.plan.threads)
        return self._cache[key]


def _map_info(plan: RunPlan) -> dict:
    return {"name": plan.model.name, "identifier": plan.model.identifier,
            "expression": str(plan.model.expression), "degree": int(plan.model.degree),
            "perturbation": plan.perturbation.kind}


def _needs_density(plan: RunPlan, stage: str) -> bool:
    if stage == STAGE_DENSITY:
        return True
    if stage != STAGE_RESPONSE:
        return False
    return plan.perturbation.kind != DETERMINISTIC or plan.perturbation.density is None


def _run_stages(plan: RunPlan, stage: str, record: artifacts.RunRecord, ops: _Operators) -> None:
    settings = plan.settings

    with log_operation(logger, "certify_map", map=plan.model.name):
        ly = ly_constants(plan.bounds)
        record.ly = ly
        record.add_audit(ly.audit_entries())

    contraction_scheme = PartitionScheme(settings.m_contraction)
    record.discrete = choose_discrete_iterate(ly, contraction_scheme)
    with log_operation(logger, "equilibrium", m=settings.m_contraction):
        cert = equilibrium(ops.get(KIND_C0, settings.m_contraction), ly,
                           ab_search=settings.ab_search, cap=settings.n1_cap,
                           rho_target=settings.rho_target, threads=plan.threads)
        record.equilibrium = cert
        record.add_audit(cert.audit_entries())
    if stage == STAGE_CERTIFY:
        return

    density = None
    if _needs_density(plan, stage):
        with log_operation(logger, "fixed_density", m=settings.m):
            density = fixed_density(ops.get(KIND_C1, settings.m), ly, cert, model=plan.model)
        record.density = density
        record.add_audit([
            AuditEntry("density.residual_c1", "||L_eta h - h||_C1", density.residual_c1),
            AuditEntry("density.mass_defect", "|integral of h - 1|", density.mass_defect),
            AuditEntry("density.projection",
                       "(3/m) min(M lam^2 ||h||_C2 + D ||h||_C1, sup |(L h)''|)",
                       density.projection),
            AuditEntry("density.err_c1", "R_L (residual + projection) + mass defect C M",
                       density.err_c1,
                       (("residual", density.residual_c1),
                        ("projection", density.projection),
                        ("strong_resolvent", cert.strong_resolvent))),
        ])
    if stage == STAGE_DENSITY:
        return

    scheme = PartitionScheme(settings.m)
    with log_operation(logger, "lhat", kind=plan.perturbation.kind, m=settings.m):
        if plan.perturbation.kind == DETERMINISTIC:
            lhat = lhat_deterministic(plan.model, plan.perturbation, scheme, ly, density=density,
                                      depth=plan.config.map.depth)
        else:
            lhat = lhat_stochastic(density, plan.perturbation, ly)
    record.add_audit([
        AuditEntry("lhat.approx_err", "||f_eta - L_hat h||_inf", lhat.approx_err),
        AuditEntry("lhat.c1_bound", "||L_hat h||_C1", lhat.c1_bound),
    ])

    # half of tau for the tail, the rest for the two discretization summands
    l_star, _ = tail_length(cert, lhat.c1_bound, settings.tau / 2.0)
    op = ops.get(KIND_C0, settings.m)
    with log_operation(logger, "response_sum", m=settings.m, l_star=l_star):
        h_appr, steps = response_sum(op, lhat.f_eta, l_star)
    response = error_budget(cert, ly, scheme, lhat, steps, l_star, h_appr=h_appr)
    record.response = response
    record.add_audit(response.audit_entries())
    if not response.within(settings.tau):
        record.status = artifacts.STATUS_OVER_BUDGET


def run_pipeline(plan: RunPlan, stage: str = STAGE_RESPONSE) -> RunOutcome:
    """
    Run the stages up to `stage` and write the artifacts.

    Exit codes: 0 certified within tau, 1 certified but above tau,
    2 certification failure, 3 configuration failure.
    """
    if stage not in STAGES:
        raise ValueError(f"unknown stage {stage!r}; expected one of {STAGES}")
    with run_scope():
        return _execute(plan, stage)


def _execute(plan: RunPlan, stage: str) -> RunOutcome:
    settings = plan.settings
    record = artifacts.RunRecord(map_info=_map_info(plan), tau=settings.tau)
    ops = _Operators(plan)
    exit_code = EXIT_OK

    logger.info("Starting pipeline", extra={"stage": stage, "m": settings.m,
                                            "out": str(plan.out_dir)})
    try:
        _run_stages(plan, stage, record, ops)
        if record.status == artifacts.STATUS_OVER_BUDGET:
            exit_code = EXIT_BUDGET_EXCEEDED
    except CertificationError as exc:
        log_exception(logger, exc, {"stage": stage})
        summary = get_error_summary(exc)
        summary.pop("timestamp", None)
        record.status = artifacts.STATUS_FAILED
        record.error = summary
        exit_code = exit_code_for(exc)

    files = {"certificate": artifacts.write_certificate(record, plan.out_dir),
             "audit": artifacts.write_audit_log(record, plan.out_dir)}
    if record.density is not None:
        files["density"] = artifacts.write_samples(
            record.density.h, plan.out_dir / artifacts.DENSITY_FILE, settings.samples)
    if record.response is not None:
        files["response"] = artifacts.write_samples(
            record.response.h_appr, plan.out_dir / artifacts.RESPONSE_FILE, settings.samples)

    logger.info("Pipeline finished", extra={"stage": stage, "exit_code": exit_code,
                                            "status": record.status})
    return RunOutcome(exit_code=exit_code, record=record, files=files)


def export_operators(plan: RunPlan, kinds=(KIND_C0,)) -> Dict[str, Path]:
    """Assemble and write the operator of each kind at the run's m."""
    files = {}
    for kind in kinds:
        with log_operation(logger, "export_operator", kind=kind, m=plan.settings.m):
            op = assemble(plan.model, PartitionScheme(plan.settings.m), kind,
                          threads=plan.threads)
            name = f"operator_{kind}_m{plan.settings.m}.txt"
            files[kind] = export_operator(op, plan.out_dir / name)
    return files

