"""
Environment configuration
Reads .env / process environment with defaults; CLI flags and the run
config file take precedence over these values.
"""
import os
import subprocess
from typing import Dict

from dotenv import load_dotenv

from src import __version__, console

load_dotenv()

DEFAULTS: Dict[str, str] = {
    "HAL_SEED": "0",
    "HAL_JOBS": "1",
    "HAL_OUT_DIR": "runs",
    "HAL_VERBOSITY": "normal",
    "HAL_MAX_WORKERS_CAP": "8",
}


def _int_env(key: str) -> int:
    raw = os.getenv(key, DEFAULTS[key])
    try:
        return int(raw)
    except ValueError:
        console.warn(f"{key}={raw!r} is not an integer, using {DEFAULTS[key]}")
        return int(DEFAULTS[key])


def default_seed() -> int:
    return _int_env("HAL_SEED")


def default_jobs() -> int:
    return max(1, _int_env("HAL_JOBS"))


def max_workers_cap() -> int:
    return max(1, _int_env("HAL_MAX_WORKERS_CAP"))


def default_out_dir() -> str:
    return os.getenv("HAL_OUT_DIR", DEFAULTS["HAL_OUT_DIR"])


def print_configuration_check():
    """Print which environment keys are set and which fall back to defaults"""
    console.rule()
    console.check("CONFIGURATION CHECK")
    console.rule()
    for key, default in DEFAULTS.items():
        value = os.getenv(key)
        if value is not None:
            console.success(f"{key}: {value}")
        else:
            console.warn(f"{key}: not set (default {default})")
    console.rule()


def software_version() -> str:
    """`git describe --always --dirty` when available, else the package version"""
    root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
    try:
        result = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            cwd=root, capture_output=True, text=True, timeout=5, check=True,
        )
        described = result.stdout.strip()
        if described:
            return described
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__
