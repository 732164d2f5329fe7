"""
Run configuration loading.

Reads the YAML run config, validates it with the pydantic schemas, turns
the expressions into a certified map model and a perturbation, and applies
command-line overrides on top.

    plan = load_config("pipelines/config.yaml", m=1024)
"""

from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

import sympy as sp
import yaml
from pydantic import ValidationError

from models.dynamics import DerivativeBounds, MapModel, certify_expanding
from models.response import PerturbationSpec
from models.symbolic import EPS, X, XI, parse_expression, split_family
from utils import schemas
from utils.config import default_out_dir, default_threads
from utils.exceptions import ConfigurationError, ParseError
from utils.logger import get_pipeline_logger

logger = get_pipeline_logger()


@dataclass(frozen=True)
class RunPlan:
    """A validated run: settings plus the objects the pipeline works on."""

    config: schemas.RunConfig
    model: MapModel
    perturbation: PerturbationSpec
    bounds: DerivativeBounds
    threads: int
    out_dir: Path
    source: Optional[Path] = None

    @property
    def settings(self) -> schemas.RunSettings:
        return self.config.run


def _key_lines(text: str) -> Dict[str, int]:
    """1-based line of every 'section.key' in the document."""
    try:
        root = yaml.compose(text)
    except yaml.YAMLError:
        return {}
    lines: Dict[str, int] = {}

    def walk(node, prefix: str) -> None:
        if not isinstance(node, yaml.MappingNode):
            return
        for key, value in node.value:
            name = f"{prefix}{key.value}"
            lines[name] = key.start_mark.line + 1
            walk(value, name + ".")

    walk(root, "")
    return lines


def _load_yaml(text: str) -> dict:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        column = mark.column + 1 if mark is not None else None
        raise ParseError(f"malformed config: {getattr(exc, 'problem', exc)}", line=line,
                         column=column, cause=exc) from exc
    if not isinstance(data, dict):
        raise ParseError("config must be a mapping with map, perturbation and run sections",
                         line=1, column=1)
    return data


def _validate(data: dict, lines: Dict[str, int]) -> schemas.RunConfig:
    try:
        return schemas.RunConfig.model_validate(data)
    except ValidationError as exc:
        first = exc.errors()[0]
        key = ".".join(str(part) for part in first["loc"])
        raise ConfigurationError(f"invalid config at {key or 'top level'}: {first['msg']}",
                                 config_key=key, details={"line": lines.get(key)}) from exc


def _breakpoints(spec: schemas.MapSpec) -> Optional[Tuple[Fraction, ...]]:
    if spec.breakpoints is None:
        return None
    try:
        return tuple(Fraction(str(b)) for b in spec.breakpoints)
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigurationError(f"breakpoints must be exact rationals: {exc}",
                                 config_key="map.breakpoints") from exc


def _perturbation(cfg: schemas.RunConfig, direction: sp.Expr,
                  lines: Dict[str, int]) -> PerturbationSpec:
    spec = cfg.perturbation
    if spec.kind == schemas.PerturbationKind.STOCHASTIC:
        kernel = None
        if spec.kernel is not None:
            kernel = parse_expression(spec.kernel, (XI,), line=lines.get("perturbation.kernel"))
        return PerturbationSpec.stochastic(gamma=spec.gamma, kernel=kernel,
                                           symbolic=spec.gamma_symbolic)

    if spec.direction is not None:
        direction = parse_expression(spec.direction, (X,),
                                     line=lines.get("perturbation.direction"))
    if direction == 0:
        raise ConfigurationError("deterministic perturbation needs a direction: give "
                                 "perturbation.direction or an eps term in map.expression",
                                 config_key="perturbation.direction")
    density = None
    if spec.density is not None:
        density = parse_expression(spec.density, (X,), line=lines.get("perturbation.density"))
    return PerturbationSpec.deterministic(direction, density=density)


def parse_config(
    text: str,
    source: Optional[Path] = None,
    overrides: Optional[dict] = None,
) -> RunPlan:
    """
    Validate a YAML run config and build the map model.

    The map expression may contain eps; the unperturbed map is its value at
    eps = 0 and the deterministic direction its eps-derivative there.
    Raises ParseError with a line number for malformed text and
    NotExpanding when the declared map does not expand.
    """
    lines = _key_lines(text)
    data = _load_yaml(text)
    if overrides:
        run = dict(data.get("run") or {})
        run.update({k: v for k, v in overrides.items() if v is not None})
        data = {**data, "run": run}
    cfg = _validate(data, lines)

    expr = parse_expression(cfg.map.expression, (X, EPS), line=lines.get("map.expression"))
    t0, direction = split_family(expr)
    model = MapModel.from_expression(t0, degree=cfg.map.degree,
                                     breakpoints=_breakpoints(cfg.map), name=cfg.map.name)
    bounds = certify_expanding(model, depth=cfg.map.depth)
    perturbation = _perturbation(cfg, direction, lines)

    threads = cfg.run.threads or default_threads()
    out_dir = Path(cfg.run.out or default_out_dir())
    logger.info("Config parsed", extra={"map": cfg.map.name, "degree": model.degree,
                                        "kind": perturbation.kind, "m": cfg.run.m,
                                        "tau": cfg.run.tau})
    return RunPlan(config=cfg, model=model, perturbation=perturbation, bounds=bounds,
                   threads=threads, out_dir=out_dir, source=source)


def load_config(path: Union[str, Path], **overrides) -> RunPlan:
    """Read a config file; keyword overrides replace entries of the run section."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}", config_key="config") from exc
    return parse_config(text, source=path, overrides=overrides)

