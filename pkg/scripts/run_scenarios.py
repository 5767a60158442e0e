"""Run builtin scenarios and print their checks with wall-clock time.

    python scripts/run_scenarios.py [name ...]
"""

import sys
import time

from granflow.scenarios import builtin_scenarios, run_scenario


def main(names):
    for s in builtin_scenarios():
        if names and s.name not in names:
            continue
        t0 = time.perf_counter()
        _, res = run_scenario(s)
        secs = time.perf_counter() - t0
        print(f"{'PASS' if res.passed else 'FAIL'} {s.name} ({s.cfg.n_steps} steps, {secs:.1f}s): {s.description}")
        for c in res.checks:
            print("    " + c.line())
        for w in res.warnings[:3]:
            print("    warning: " + w)


if __name__ == "__main__":
    main(sys.argv[1:])
