"""Compute (or load from cache) every acceptance criterion and print one line each.

Usage: python scripts/run_acceptance.py [criterion numbers...]
Results are cached in results/acceptance; delete that directory to recompute.
"""

import sys
import time
import warnings
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "tests"))

import acceptance_cases as ac  # noqa: E402


def main(argv):
    wanted = {int(a) for a in argv} or set(range(1, 11))
    failed = 0
    for k, fn in enumerate(ac.CRITERIA, start=1):
        if k not in wanted:
            continue
        t0 = time.perf_counter()
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            check = fn()
        failed += not check.passed
        print(f"{check.line()}  ({time.perf_counter() - t0:.0f}s)", flush=True)
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
