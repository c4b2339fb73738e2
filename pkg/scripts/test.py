"""
UniEdit. Licensed under the GNU GPL-3.0.
See <https://www.gnu.org/licenses/gpl-3.0.html> for details.

Usage: python scripts/test.py [--fast] [--nox]
"""

from __future__ import annotations

import subprocess
import sys
import time
from pathlib import Path
from typing import NoReturn

GREEN = "\033[92m"
RESET = "\033[0m"

PROJECT_ROOT = Path(__file__).resolve().parent.parent
CHECK_TARGETS = [str(PROJECT_ROOT / name) for name in ("uniedit", "tests", "scripts")]


def run_step(label: str, cmd: list[str]) -> None:
    """Run one check; on failure print its output and exit with its return code."""
    print("=" * 60)
    print(f"Running {label}...")
    print(" > " + " ".join(cmd))
    start_time = time.perf_counter()
    try:
        subprocess.run(cmd, check=True, capture_output=True, text=True, cwd=PROJECT_ROOT)
    except FileNotFoundError:
        print(f" {cmd[0]} is not installed (pip install -r requirements-dev.txt)")
        sys.exit(1)
    except subprocess.CalledProcessError as e:
        print(f" {label} failed.")
        if e.stdout:
            print(f" stdout:\n{e.stdout}")
        if e.stderr:
            print(f" stderr:\n{e.stderr}")
        sys.exit(e.returncode)
    print(f"{GREEN} {label} was successful! ({time.perf_counter() - start_time:.0f} seconds){RESET}")


def main() -> NoReturn:
    options = set(sys.argv[1:])
    if sys.version_info < (3, 9):
        print(f"Error: Python 3.9 or higher is required (current: {sys.version})")
        sys.exit(1)

    run_step("ruff", ["ruff", "check", *CHECK_TARGETS])
    run_step("pyright", ["pyright", *CHECK_TARGETS])
    run_step("mypy", ["mypy", *CHECK_TARGETS])
    run_step("vulture", ["vulture"])

    pytest_cmd = ["pytest", "-n", "auto"]
    if "--fast" in options:
        pytest_cmd += ["-m", "not slow"]
    run_step("pytest", pytest_cmd)
    if "--nox" in options:
        run_step("nox", ["nox", "--stop-on-first-error"])

    print(f"{GREEN}All checks passed.{RESET}")
    sys.exit(0)


if __name__ == "__main__":
    main()
