"""
Structured Logging for the Linear Response Certifier

Features:
- Text or JSON lines on stderr
- One correlation id per run, shared by all of its stages
- Timed stage context manager and a debug decorator for kernels
- Rendering of CertificationError payloads

Nothing written here ends up in certificates, so artifacts stay
bit-identical between runs.
"""

import functools
import json
import logging
import os
import threading
import time
import uuid
from contextlib import contextmanager
from datetime import datetime, timezone
from typing import Any, Callable, Dict, Optional

_context = threading.local()

LEVEL_ENV = "LRC_LOG_LEVEL"
JSON_ENV = "LRC_LOG_JSON"


def get_correlation_id() -> str:
    """Current run id; a fresh one is made outside any run."""
    if getattr(_context, "correlation_id", None) is None:
        _context.correlation_id = uuid.uuid4().hex[:8]
    return _context.correlation_id


def set_correlation_id(correlation_id: Optional[str]):
    _context.correlation_id = correlation_id


def clear_correlation_id():
    _context.correlation_id = None


def _has_correlation_id() -> bool:
    return getattr(_context, "correlation_id", None) is not None


def _render(value: Any) -> str:
    # certified bounds are long floats; six digits is enough in a log line
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


class StructuredFormatter(logging.Formatter):
    """
    `timestamp | run id | LEVEL | logger | message | k=v ...` lines,
    or one JSON object per line with include_json.
    """

    def __init__(self, include_json: bool = False):
        super().__init__()
        self.include_json = include_json

    def format(self, record: logging.LogRecord) -> str:
        fields = getattr(record, "extra_data", None) or {}
        stamp = datetime.now(timezone.utc).isoformat()

        if self.include_json:
            payload = {
                "timestamp": stamp,
                "level": record.levelname,
                "logger": record.name,
                "message": record.getMessage(),
                "correlation_id": get_correlation_id(),
                "location": f"{record.module}:{record.lineno}",
            }
            if fields:
                payload["extra"] = fields
            if record.exc_info and record.exc_info[0] is not None:
                payload["exception"] = {"type": record.exc_info[0].__name__,
                                        "message": str(record.exc_info[1])}
            return json.dumps(payload, default=str)

        line = (f"{stamp} | {get_correlation_id()} | {record.levelname:8s} | "
                f"{record.name:16s} | {record.getMessage()}")
        if fields:
            line += " | " + " ".join(f"{k}={_render(v)}" for k, v in fields.items())
        if record.exc_info and record.exc_info[0] is not None:
            line += f" | exception={record.exc_info[0].__name__}: {record.exc_info[1]}"
        return line


class ContextLogger(logging.Logger):
    """Logger whose `extra` dict becomes structured fields on the line."""

    def _log_fields(self, level: int, msg: str, args, exc_info=None, fields=None):
        if not self.isEnabledFor(level):
            return
        super()._log(level, msg, args, exc_info=exc_info,
                     extra={"extra_data": dict(fields or {})})

    def debug(self, msg: str, *args, extra: Optional[Dict[str, Any]] = None, **kwargs):
        self._log_fields(logging.DEBUG, msg, args, fields=extra)

    def info(self, msg: str, *args, extra: Optional[Dict[str, Any]] = None, **kwargs):
        self._log_fields(logging.INFO, msg, args, fields=extra)

    def warning(self, msg: str, *args, extra: Optional[Dict[str, Any]] = None, **kwargs):
        self._log_fields(logging.WARNING, msg, args, fields=extra)

    def error(self, msg: str, *args, exc_info=False, extra: Optional[Dict[str, Any]] = None,
              **kwargs):
        self._log_fields(logging.ERROR, msg, args, exc_info=exc_info, fields=extra)


def _level_from_env(default: int) -> int:
    name = os.getenv(LEVEL_ENV)
    if not name:
        return default
    resolved = logging.getLevelName(name.upper())
    return resolved if isinstance(resolved, int) else default


def get_logger(name: str, level: int = logging.INFO, json_format: bool = None) -> ContextLogger:
    """
    Get or create a structured logger.

    Args:
        name: Logger name, `lrc.<component>` inside the package
        level: Logging level, overridden by LRC_LOG_LEVEL
        json_format: JSON lines instead of text; defaults to LRC_LOG_JSON

    Returns:
        ContextLogger writing to stderr
    """
    logging.setLoggerClass(ContextLogger)
    logger = logging.getLogger(name)
    if logger.handlers:
        return logger

    if json_format is None:
        json_format = os.getenv(JSON_ENV, "0").lower() in ("1", "true", "yes")
    level = _level_from_env(level)
    logger.setLevel(level)

    handler = logging.StreamHandler()
    handler.setFormatter(StructuredFormatter(include_json=json_format))
    handler.setLevel(level)
    logger.addHandler(handler)
    logger.propagate = False
    return logger


@contextmanager
def run_scope(run_id: Optional[str] = None):
    """
    Correlation id for one pipeline run.

    Stages opened inside the scope share the id; it is removed on exit.
    """
    previous = getattr(_context, "correlation_id", None)
    set_correlation_id(run_id or uuid.uuid4().hex[:8])
    try:
        yield get_correlation_id()
    finally:
        set_correlation_id(previous)


@contextmanager
def log_operation(logger: logging.Logger, operation: str, **context):
    """
    Log start, completion and failure of a stage with its duration.

    Usage:
        with log_operation(logger, "assemble", m=4096, kind="c0"):
            ...

    Outside a run_scope the stage gets its own correlation id.
    """
    owns_id = not _has_correlation_id()
    if owns_id:
        set_correlation_id(uuid.uuid4().hex[:8])
    start = time.perf_counter()
    logger.info(f"Starting: {operation}", extra=context)

    try:
        yield
    except Exception as exc:
        logger.error(f"Failed: {operation}",
                     extra={**context, "duration_seconds": round(time.perf_counter() - start, 3),
                            "error": f"{type(exc).__name__}: {exc}"})
        raise
    else:
        logger.info(f"Completed: {operation}",
                    extra={**context, "duration_seconds": round(time.perf_counter() - start, 3)})
    finally:
        if owns_id:
            clear_correlation_id()


def log_function_call(logger: logging.Logger = None):
    """
    Debug-level entry/exit tracing with timing.

    Usage:
        @log_function_call(logger)
        def certify_expanding(model, depth):
            ...
    """
    def decorator(func: Callable):
        log = logger or get_logger(func.__module__)

        @functools.wraps(func)
        def wrapper(*args, **kwargs):
            name = func.__qualname__
            log.debug(f"Calling {name}", extra={"kwargs": sorted(kwargs)})
            start = time.perf_counter()
            try:
                result = func(*args, **kwargs)
            except Exception as exc:
                log.debug(f"Raised from {name}",
                          extra={"error": type(exc).__name__,
                                 "duration_seconds": round(time.perf_counter() - start, 3)})
                raise
            log.debug(f"Completed {name}",
                      extra={"duration_seconds": round(time.perf_counter() - start, 3)})
            return result

        return wrapper
    return decorator


# ============== Exception Integration ==============

def log_exception(logger: logging.Logger, exception: Exception, context: Dict[str, Any] = None):
    """
    Log a CertificationError by its payload; anything else with a traceback.
    """
    context = context or {}
    if hasattr(exception, "to_dict"):
        payload = exception.to_dict()
        logger.error(f"[{payload['error_code']}] {payload['message']}",
                     extra={**context, **payload.get("details", {})})
    else:
        logger.error(f"[{type(exception).__name__}] {exception}", exc_info=True, extra=context)


# ============== Component Loggers ==============

def get_rigor_logger() -> ContextLogger:
    """Map certification and interval kernels."""
    return get_logger("lrc.rigor")


def get_operator_logger() -> ContextLogger:
    return get_logger("lrc.operator")


def get_certificate_logger() -> ContextLogger:
    """Analytic constants, certificates and budgets."""
    return get_logger("lrc.certificate")


def get_pipeline_logger() -> ContextLogger:
    return get_logger("lrc.pipeline")
