import json
import logging

import pytest


# --- Tests for the exception hierarchy ---

def test_exit_codes_follow_hierarchy():
    from utils.exceptions import (
        ConfigurationError,
        NoContraction,
        NotExpanding,
        ParseError,
        exit_code_for,
    )
    assert exit_code_for(ConfigurationError("bad")) == 3
    assert exit_code_for(ParseError("bad", line=2, column=4)) == 3
    assert exit_code_for(NotExpanding("flat", subinterval=(0.4, 0.6))) == 2
    assert exit_code_for(NoContraction("slow", cap=8, best_rho=1.2)) == 2


def test_error_payload():
    from utils.exceptions import ParseError, get_error_summary
    err = ParseError("unknown name", line=3, column=6, config_key="map.expression")
    data = err.to_dict()
    assert data["error_type"] == "ParseError"
    assert data["error_code"] == "PARSE_ERROR"
    assert data["details"]["line"] == 3 and data["details"]["config_key"] == "map.expression"
    assert "(line 3, column 6)" in data["message"]
    plain = get_error_summary(ValueError("oops"))
    assert plain["error_code"] == "UNKNOWN"


def test_domain_error_records_operation():
    from models.rigor import Interval
    from utils.exceptions import DomainError
    with pytest.raises(DomainError) as info:
        Interval(1.0) / Interval(-1.0, 1.0)
    assert info.value.details["operation"] == "div"


# --- Tests for settings ---

def test_get_setting_casts_and_falls_back(monkeypatch):
    from utils.config import default_threads, get_setting
    monkeypatch.setenv("LRC_THREADS", "4")
    assert default_threads() == 4
    monkeypatch.setenv("LRC_THREADS", "many")
    assert default_threads() == 1
    monkeypatch.setenv("LRC_THREADS", "")
    assert get_setting("LRC_THREADS", "fallback") == "fallback"


# --- Tests for logging ---

def test_structured_formatter_json():
    from utils.logger import StructuredFormatter
    record = logging.LogRecord("lrc.test", logging.INFO, __file__, 10, "assembled", (), None)
    record.extra_data = {"m": 64}
    data = json.loads(StructuredFormatter(include_json=True).format(record))
    assert data["message"] == "assembled"
    assert data["extra"] == {"m": 64}


def test_structured_formatter_text():
    from utils.logger import StructuredFormatter
    record = logging.LogRecord("lrc.test", logging.WARNING, __file__, 10, "rho high", (), None)
    record.extra_data = {"rho": 0.7}
    line = StructuredFormatter().format(record)
    assert "WARNING" in line and line.endswith("| rho=0.7")


def test_log_operation_reraises():
    from utils.logger import get_logger, log_operation
    logger = get_logger("lrc.test_operation")
    with pytest.raises(RuntimeError):
        with log_operation(logger, "explode", m=8):
            raise RuntimeError("boom")


def test_log_function_call_keeps_result():
    from utils.logger import get_logger, log_function_call
    logger = get_logger("lrc.test_calls", level=logging.DEBUG)

    @log_function_call(logger)
    def double(x):
        return 2 * x

    assert double(21) == 42
    assert double.__name__ == "double"


def test_run_scope_shares_id_across_stages():
    from utils.logger import get_correlation_id, get_logger, log_operation, run_scope
    logger = get_logger("lrc.test_scope")
    with run_scope("run42") as run_id:
        assert run_id == "run42"
        with log_operation(logger, "stage", m=8):
            assert get_correlation_id() == "run42"
        assert get_correlation_id() == "run42"
    assert get_correlation_id() != "run42"


def test_text_formatter_shortens_floats():
    from utils.logger import StructuredFormatter
    record = logging.LogRecord("lrc.test", logging.INFO, __file__, 10, "budget", (), None)
    record.extra_data = {"total": 0.012345678901234}
    assert StructuredFormatter().format(record).endswith("| total=0.0123457")
