import numpy as np
import pytest
import yaml

DOUBLING_CONFIG = """\
map:
  name: doubling
  expression: "2*x + (eps/16)*(cos(4*pi*x) + cos(8*pi*x)/4)"
  degree: 2
  depth: 8
perturbation:
  kind: deterministic
  density: "1"
run:
  m: 1024
  tau: 1.0
  n1_cap: 16
  samples: 200
"""

NOISE_CONFIG = """\
map:
  name: degree8
  expression: "8*x + 0.0025*(sin(16*pi*x) + sin(32*pi*x)/4)"
  degree: 8
  depth: 10
perturbation:
  kind: stochastic
  gamma_symbolic: true
run:
  m: 1024
  tau: 10.0
  n1_cap: 16
  samples: 100
"""


def _exact_response(xs):
    return 3 * np.pi / 16 * np.sin(2 * np.pi * xs) + np.pi / 16 * np.sin(4 * np.pi * xs)


@pytest.fixture
def doubling_config(tmp_path):
    path = tmp_path / "doubling.yaml"
    path.write_text(DOUBLING_CONFIG)
    return path


# --- Tests for schemas ---

def test_contraction_size_defaults_to_m():
    from utils.schemas import RunSettings
    assert RunSettings(m=512).m_contraction == 512
    assert RunSettings(m=512, m_contraction=128).m_contraction == 128


def test_perturbation_schema_rules():
    from pydantic import ValidationError
    from utils.schemas import PerturbationSpec
    with pytest.raises(ValidationError):
        PerturbationSpec(kind="stochastic", gamma=0.1, kernel="1")
    with pytest.raises(ValidationError):
        PerturbationSpec(kind="stochastic")
    with pytest.raises(ValidationError):
        PerturbationSpec(kind="deterministic", gamma=0.1)
    assert PerturbationSpec(kind="stochastic", gamma_symbolic=True).gamma is None


def test_breakpoints_must_match_degree():
    from pydantic import ValidationError
    from utils.schemas import MapSpec
    with pytest.raises(ValidationError):
        MapSpec(expression="2*x", degree=2, breakpoints=["0", "1"])
    assert MapSpec(expression="  2*x ").expression == "2*x"


# --- Tests for parse_config ---

def test_parse_doubling_config():
    from models.symbolic import X
    from pipelines.run_config import parse_config
    import sympy as sp
    plan = parse_config(DOUBLING_CONFIG)
    assert plan.settings.m == 1024 and plan.settings.m_contraction == 1024
    assert plan.model.degree == 2
    assert plan.perturbation.kind == "deterministic"
    expected = (sp.cos(4 * sp.pi * X) + sp.cos(8 * sp.pi * X) / 4) / 16
    assert sp.simplify(plan.perturbation.direction - expected) == 0
    assert plan.perturbation.density == 1
    assert plan.threads == 1
    assert str(plan.out_dir) == "runs/latest"


def test_overrides_replace_run_entries():
    from pipelines.run_config import parse_config
    plan = parse_config(DOUBLING_CONFIG, overrides={"m": 256, "out": "elsewhere", "tau": None})
    assert plan.settings.m == 256
    assert plan.settings.tau == 1.0
    assert str(plan.out_dir) == "elsewhere"


def test_out_dir_from_environment(monkeypatch):
    from pipelines.run_config import parse_config
    monkeypatch.setenv("LRC_OUT_DIR", "/tmp/lrc-env")
    monkeypatch.setenv("LRC_THREADS", "3")
    plan = parse_config(DOUBLING_CONFIG)
    assert str(plan.out_dir) == "/tmp/lrc-env"
    assert plan.threads == 3


def test_malformed_yaml_reports_line():
    from pipelines.run_config import parse_config
    from utils.exceptions import ParseError
    with pytest.raises(ParseError) as info:
        parse_config("map:\n  expression: [2*x\nrun:\n  m: 8\n")
    assert info.value.line is not None and info.value.line >= 2


def test_non_mapping_config_rejected():
    from pipelines.run_config import parse_config
    from utils.exceptions import ParseError
    with pytest.raises(ParseError):
        parse_config("- just\n- a list\n")


def test_bad_expression_reports_line():
    from pipelines.run_config import parse_config
    from utils.exceptions import ParseError
    text = DOUBLING_CONFIG.replace('"2*x + (eps/16)', '"2*x + y*(eps/16)')
    with pytest.raises(ParseError) as info:
        parse_config(text)
    assert info.value.line == 3


def test_schema_error_reports_key_and_line():
    from pipelines.run_config import parse_config
    from utils.exceptions import ConfigurationError, ParseError
    with pytest.raises(ConfigurationError) as info:
        parse_config(DOUBLING_CONFIG.replace("tau: 1.0", "tau: -1.0"))
    assert not isinstance(info.value, ParseError)
    assert info.value.details["config_key"] == "run.tau"
    assert info.value.details["line"] == 11


def test_non_expanding_map_rejected():
    from pipelines.run_config import parse_config
    from utils.exceptions import NotExpanding
    text = DOUBLING_CONFIG.replace('"2*x + (eps/16)*(cos(4*pi*x) + cos(8*pi*x)/4)"',
                                   '"2*x + 0.3*sin(2*pi*x) + eps*sin(2*pi*x)"')
    with pytest.raises(NotExpanding):
        parse_config(text)


def test_deterministic_run_needs_direction():
    from pipelines.run_config import parse_config
    from utils.exceptions import ConfigurationError
    text = DOUBLING_CONFIG.replace('"2*x + (eps/16)*(cos(4*pi*x) + cos(8*pi*x)/4)"', '"2*x"')
    with pytest.raises(ConfigurationError):
        parse_config(text)
    plan = parse_config(text.replace('  density: "1"', '  density: "1"\n  direction: "sin(2*pi*x)"'))
    assert plan.perturbation.direction is not None


def test_noise_config_with_kernel():
    from pipelines.run_config import parse_config
    text = NOISE_CONFIG.replace("gamma_symbolic: true", 'kernel: "6*(1/4 - xi**2)"')
    plan = parse_config(text)
    assert float(plan.perturbation.gamma.lo) <= 3 / 16 <= float(plan.perturbation.gamma.hi)
    assert plan.perturbation.gamma_factor is None


def test_missing_config_file(tmp_path):
    from pipelines.run_config import load_config
    from utils.exceptions import ConfigurationError
    with pytest.raises(ConfigurationError):
        load_config(tmp_path / "nope.yaml")


# --- Tests for run_pipeline ---

def test_certify_stage(run_dir):
    from pipelines import artifacts
    from pipelines.orchestrator import run_pipeline
    from pipelines.run_config import parse_config
    plan = parse_config(DOUBLING_CONFIG, overrides={"out": str(run_dir)})
    outcome = run_pipeline(plan, stage="certify")
    assert outcome.exit_code == 0
    assert set(outcome.files) == {"certificate", "audit"}

    cert = yaml.safe_load((run_dir / artifacts.CERTIFICATE_FILE).read_text())
    assert cert["status"] == "certified"
    assert cert["equilibrium"]["rho"] < 1.0
    assert cert["equilibrium"]["eigen_inequality_holds"] is True
    assert cert["lasota_yorke"]["lambda"] == pytest.approx(0.5)
    assert "response" not in cert

    audit = (run_dir / artifacts.AUDIT_FILE).read_text().splitlines()
    assert audit[0].startswith("ly.lambda, ")
    assert any(line.startswith("equilibrium.rho, ") for line in audit)


def test_certify_is_deterministic(tmp_path):
    from pipelines import artifacts
    from pipelines.orchestrator import run_pipeline
    from pipelines.run_config import parse_config
    texts = []
    for name in ("a", "b"):
        plan = parse_config(DOUBLING_CONFIG, overrides={"out": str(tmp_path / name)})
        run_pipeline(plan, stage="certify")
        texts.append((tmp_path / name / artifacts.CERTIFICATE_FILE).read_bytes())
    assert texts[0] == texts[1]


def test_response_stage_matches_exact_response(run_dir):
    from pipelines import artifacts
    from pipelines.orchestrator import run_pipeline
    from pipelines.run_config import parse_config
    plan = parse_config(DOUBLING_CONFIG, overrides={"out": str(run_dir)})
    outcome = run_pipeline(plan)
    response = outcome.record.response
    assert response is not None
    assert outcome.exit_code == (0 if response.total <= 1.0 else 1)
    assert outcome.record.density is None
    assert "density" not in outcome.files

    frame = artifacts.read_samples(run_dir / artifacts.RESPONSE_FILE)
    assert list(frame.columns) == ["x", "value"]
    assert len(frame) == 200
    assert frame["x"].iloc[1] == pytest.approx(1 / 200)
    actual = float(np.max(np.abs(frame["value"] - _exact_response(frame["x"].to_numpy()))))
    assert actual <= response.total

    cert = yaml.safe_load((run_dir / artifacts.CERTIFICATE_FILE).read_text())
    assert cert["response"]["tau"] == 1.0
    assert cert["response"]["l_star"] % cert["equilibrium"]["n1"] == 0
    assert cert["response"]["total"] == pytest.approx(response.total)


def test_budget_above_tau_exits_one(run_dir):
    from pipelines.orchestrator import run_pipeline
    from pipelines.run_config import parse_config
    plan = parse_config(DOUBLING_CONFIG, overrides={"out": str(run_dir), "tau": 1e-6})
    outcome = run_pipeline(plan)
    assert outcome.exit_code == 1
    assert outcome.record.status == "budget_exceeded"
    assert (run_dir / "response.csv").exists()


def test_failed_certificate_is_still_written(run_dir):
    from pipelines.orchestrator import run_pipeline
    from pipelines.run_config import parse_config
    plan = parse_config(DOUBLING_CONFIG, overrides={"out": str(run_dir), "m": 16, "n1_cap": 4})
    outcome = run_pipeline(plan)
    assert outcome.exit_code == 2
    cert = yaml.safe_load((run_dir / "certificate.yaml").read_text())
    assert cert["status"] == "failed"
    assert "lasota_yorke" in cert and "equilibrium" not in cert
    assert cert["error"]["error_type"] == "NoContraction"
    assert "timestamp" not in cert["error"]
    assert (run_dir / "audit.log").read_text().splitlines()[-1].startswith("error, ")


def test_unknown_stage_rejected():
    from pipelines.orchestrator import run_pipeline
    from pipelines.run_config import parse_config
    with pytest.raises(ValueError):
        run_pipeline(parse_config(DOUBLING_CONFIG), stage="everything")


def test_noise_run_reports_per_unit_gamma(run_dir):
    from pipelines import artifacts
    from pipelines.orchestrator import run_pipeline
    from pipelines.run_config import parse_config
    plan = parse_config(NOISE_CONFIG, overrides={"out": str(run_dir)})
    outcome = run_pipeline(plan)
    assert outcome.exit_code in (0, 1)
    cert = yaml.safe_load((run_dir / artifacts.CERTIFICATE_FILE).read_text())
    assert cert["response"]["gamma_factor"] == "gamma"
    assert cert["density"]["m"] == 1024


def test_response_stage_is_deterministic(tmp_path):
    from pipelines import artifacts
    from pipelines.orchestrator import run_pipeline
    from pipelines.run_config import parse_config
    outputs = []
    for name in ("a", "b"):
        plan = parse_config(DOUBLING_CONFIG, overrides={"out": str(tmp_path / name)})
        run_pipeline(plan)
        outputs.append(tuple((tmp_path / name / f).read_bytes()
                             for f in (artifacts.CERTIFICATE_FILE, artifacts.RESPONSE_FILE,
                                       artifacts.AUDIT_FILE)))
    assert outputs[0] == outputs[1]


def test_discretization_summands_shrink_as_m_doubles(tmp_path):
    """With the contraction certificate held at m = 1024 only the response partition changes."""
    from pipelines.orchestrator import run_pipeline
    from pipelines.run_config import parse_config
    text = DOUBLING_CONFIG.replace("  m: 1024\n", "  m: 1024\n  m_contraction: 1024\n")
    responses = []
    for m in (1024, 2048):
        plan = parse_config(text, overrides={"out": str(tmp_path / str(m)), "m": m})
        responses.append(run_pipeline(plan).record.response)
    coarse, fine = responses
    assert fine.l_star == coarse.l_star
    assert fine.summand2 + fine.summand3 <= coarse.summand2 + coarse.summand3
    assert fine.total <= coarse.total


def test_noise_budget_shrinks_as_m_doubles(tmp_path):
    from pipelines.orchestrator import run_pipeline
    from pipelines.run_config import parse_config
    text = NOISE_CONFIG.replace("  m: 1024\n", "  m: 1024\n  m_contraction: 1024\n")
    records = []
    for m in (1024, 2048):
        plan = parse_config(text, overrides={"out": str(tmp_path / str(m)), "m": m})
        outcome = run_pipeline(plan)
        records.append(outcome.record)
    coarse, fine = records
    assert fine.density.err_c1 < coarse.density.err_c1
    assert fine.response.total < coarse.response.total


@pytest.mark.slow
def test_shipped_config_meets_its_target(run_dir):
    """The default doubling run certifies tau = 0.05 and the exact response sits inside."""
    from pipelines import artifacts
    from pipelines.local_runner import CONFIG_PATH
    from pipelines.orchestrator import run_pipeline
    from pipelines.run_config import load_config
    plan = load_config(CONFIG_PATH, out=str(run_dir), threads=4)
    outcome = run_pipeline(plan)
    response = outcome.record.response
    assert outcome.exit_code == 0
    assert response.total <= 0.05
    assert outcome.record.equilibrium.rho < 0.05

    frame = artifacts.read_samples(run_dir / artifacts.RESPONSE_FILE)
    actual = float(np.max(np.abs(frame["value"] - _exact_response(frame["x"].to_numpy()))))
    assert actual <= response.total

    density = artifacts.read_samples(run_dir / artifacts.DENSITY_FILE)
    assert np.allclose(density["value"], 1.0, atol=0.1)


# --- Tests for the command line ---

def test_cli_certify(doubling_config, run_dir, capsys):
    from pipelines.local_runner import main
    code = main(["certify", "--config", str(doubling_config), "--out", str(run_dir)])
    assert code == 0
    printed = capsys.readouterr().out.split()
    assert str(run_dir / "certificate.yaml") in printed


def test_cli_missing_config(tmp_path):
    from pipelines.local_runner import main
    assert main(["certify", "--config", str(tmp_path / "nope.yaml")]) == 3


def test_cli_export_operator(doubling_config, run_dir):
    from models.operator import import_operator
    from pipelines.local_runner import main
    code = main(["export-operator", "--config", str(doubling_config), "--m", "32",
                 "--out", str(run_dir), "--kind", "c0", "--kind", "c1"])
    assert code == 0
    for kind in ("c0", "c1"):
        op = import_operator(run_dir / f"operator_{kind}_m32.txt")
        assert op.kind == kind and op.scheme.m == 32


def test_cli_rejects_unknown_kind(doubling_config):
    from pipelines.local_runner import main
    with pytest.raises(SystemExit):
        main(["export-operator", "--config", str(doubling_config), "--kind", "c2"])


def test_cli_export_failure_exits_two(doubling_config, run_dir, monkeypatch):
    """Assembly failures in export-operator map to the certification exit code."""
    import pipelines.local_runner as runner
    from utils.exceptions import NoConvergence

    def fail(plan, kinds):
        raise NoConvergence("preimage did not narrow", branch=0, width=1e-3, tol=1e-12)

    monkeypatch.setattr(runner, "export_operators", fail)
    code = runner.main(["export-operator", "--config", str(doubling_config),
                        "--out", str(run_dir)])
    assert code == 2
    assert not (run_dir / "operator_c0_m1024.txt").exists()
