"""
Pydantic Schemas for Run Configuration

Run configs are YAML files with three sections:

    map:           the circle map, as an expression in x (and eps for a family)
    perturbation:  stochastic noise or a deterministic direction
    run:           partition size, target budget and output settings

These models only check shape and ranges. Turning expressions into
oracles, and certifying that the map expands, happens in
pipelines.run_config.
"""

from enum import Enum
from typing import List, Optional

from pydantic import BaseModel, Field, field_validator, model_validator


# ============== ENUMS ==============

class PerturbationKind(str, Enum):
    """Supported perturbation families."""
    STOCHASTIC = "stochastic"
    DETERMINISTIC = "deterministic"


# ============== MAP SCHEMAS ==============

class MapSpec(BaseModel):
    """Circle map T (or a family T_eps) given by one expression on [0, 1]."""
    expression: str = Field(..., min_length=1, description="Map expression in x, optionally eps")
    degree: Optional[int] = Field(None, ge=1, le=4096, description="Number of branches")
    breakpoints: Optional[List[str]] = Field(
        None, description="Branch endpoints as exact rationals, e.g. ['0', '1/2', '1']"
    )
    depth: int = Field(12, ge=4, le=22, description="Bisection depth for derivative bounds")
    name: str = Field("map", min_length=1, description="Label used in logs and certificates")

    @field_validator("expression")
    @classmethod
    def clean_expression(cls, v: str) -> str:
        return v.strip()

    @model_validator(mode="after")
    def check_breakpoints(self):
        if self.breakpoints is not None and self.degree is not None:
            if len(self.breakpoints) != self.degree + 1:
                raise ValueError("breakpoints must have degree + 1 entries")
        return self


# ============== PERTURBATION SCHEMAS ==============

class PerturbationSpec(BaseModel):
    """
    Config form of a perturbation.

    Stochastic runs give either gamma, a kernel j(xi) on [-1/2, 1/2], or
    neither with gamma_symbolic set, in which case results carry a gamma
    factor. Deterministic runs take the direction S from an explicit
    expression or from d/deps of the map expression at eps = 0.
    """
    kind: PerturbationKind = Field(..., description="stochastic or deterministic")
    gamma: Optional[float] = Field(None, gt=0, description="First absolute moment of the noise")
    kernel: Optional[str] = Field(None, description="Noise kernel j(xi), unit mass on [-1/2, 1/2]")
    gamma_symbolic: bool = Field(False, description="Report results per unit gamma")
    direction: Optional[str] = Field(None, description="Deterministic direction S(x)")
    density: Optional[str] = Field(None, description="Exact invariant density h(x), if known")

    @model_validator(mode="after")
    def check_kind(self):
        if self.kind == PerturbationKind.STOCHASTIC:
            given = sum(x is not None for x in (self.gamma, self.kernel))
            if given > 1:
                raise ValueError("give either gamma or kernel, not both")
            if given == 0 and not self.gamma_symbolic:
                raise ValueError("stochastic perturbation needs gamma, kernel or gamma_symbolic")
        elif self.gamma is not None or self.kernel is not None:
            raise ValueError("gamma and kernel only apply to stochastic perturbations")
        return self


# ============== RUN SCHEMAS ==============

class RunSettings(BaseModel):
    """Discretization, budget and output settings."""
    m: int = Field(4096, ge=3, le=2 ** 24, description="Partition size for the response sum")
    m_contraction: Optional[int] = Field(
        None, ge=3, le=2 ** 24, description="Partition size for the contraction certificate"
    )
    tau: float = Field(0.05, gt=0, description="Target bound on the response error")
    n1_cap: int = Field(32, ge=1, le=512, description="Largest power tried for the contraction")
    rho_target: float = Field(0.05, gt=0, lt=1, description="Contraction rate to aim for")
    ab_search: bool = Field(True, description="Search the (a, b) weights of the certificate")
    samples: int = Field(1000, ge=2, le=10 ** 7, description="Points in the CSV outputs")
    threads: Optional[int] = Field(None, ge=1, le=256, description="Worker threads")
    out: Optional[str] = Field(None, description="Output directory")

    @model_validator(mode="after")
    def default_contraction_size(self):
        if self.m_contraction is None:
            self.m_contraction = self.m
        return self


class RunConfig(BaseModel):
    """A complete run: map, perturbation and settings."""
    map: MapSpec
    perturbation: PerturbationSpec
    run: RunSettings = Field(default_factory=RunSettings)
