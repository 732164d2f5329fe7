import os
from dotenv import load_dotenv

# Load environment variables from .env file for local runs
load_dotenv()


def get_setting(key, default=None, cast=None):
    """
    Retrieves a configuration value.

    Priority:
    1. Environment Variables (os.getenv), including values from .env
    2. Default value

    A cast (int, float, ...) is applied to environment strings; a value that
    fails to cast falls back to the default.
    """
    value = os.getenv(key)
    if value is None or value == "":
        return default
    if cast is None:
        return value
    try:
        return cast(value)
    except (TypeError, ValueError):
        return default


def default_threads() -> int:
    """Worker threads for column-parallel kernels."""
    return max(1, get_setting("LRC_THREADS", 1, int))


def default_out_dir() -> str:
    """Directory for certificates, CSVs and audit logs."""
    return get_setting("LRC_OUT_DIR", "runs/latest")
