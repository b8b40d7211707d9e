"""
Console status output
Emoji-prefixed, coloured messages with a verbosity switch read from HAL_VERBOSITY
"""
import os
import sys

from colorama import Fore, Style, init

init(autoreset=True)

_LEVELS = {"quiet": 0, "normal": 1, "debug": 2}


def verbosity() -> int:
    """Current verbosity level (0 quiet, 1 normal, 2 debug)"""
    return _LEVELS.get(os.getenv("HAL_VERBOSITY", "normal").lower(), 1)


def set_verbosity(level: str):
    """Override verbosity for this process and its workers"""
    if level not in _LEVELS:
        raise ValueError(f"unknown verbosity '{level}'")
    os.environ["HAL_VERBOSITY"] = level


def _emit(prefix: str, color: str, message: str, minimum: int, stream=None):
    if verbosity() < minimum:
        return
    print(f"{color}{prefix} {message}{Style.RESET_ALL}", file=stream or sys.stdout)


def info(message: str):
    _emit("ℹ️ ", Fore.WHITE, message, 1)


def step(message: str):
    _emit("🚀", Fore.CYAN, message, 1)


def success(message: str):
    _emit("✅", Fore.GREEN, message, 1)


def stats(message: str):
    _emit("📊", Fore.BLUE, message, 1)


def check(message: str):
    _emit("🔍", Fore.MAGENTA, message, 1)


def warn(message: str):
    _emit("⚠️ ", Fore.YELLOW, message, 1, sys.stderr)


def debug(message: str):
    _emit("🔧", Style.DIM, message, 2)


def error(message: str):
    # errors always print, even when quiet
    _emit("❌", Fore.RED, message, 0, sys.stderr)


def rule(width: int = 50):
    if verbosity() >= 1:
        print("-" * width)
