"""Acceptance criteria, each at its stated tolerance and runtime budget.

A one-line PASS/FAIL summary per criterion is printed at the end of the run.
"""

import time

import pytest

from granflow.io import write_timeseries_csv
from granflow.scenarios import builtin_scenarios, run_scenario
from granflow.verification import (lemma_checks, mms_checks, monotonicity_checks, residual_checks,
                                   truncation_checks)

from .conftest import ACCEPTANCE_LINES


def record(key, checks, elapsed=None, budget=None):
    passed = all(c.passed for c in checks)
    parts = [f"{c.name}={c.value:.4g}" for c in checks]
    if budget is not None:
        in_time = elapsed < budget
        passed = passed and in_time
        parts.append(f"runtime={elapsed:.2f}s/<{budget:g}s")
    ACCEPTANCE_LINES[key] = (passed, " ".join(parts))
    failing = [c.line() for c in checks if not c.passed]
    assert not failing, failing
    if budget is not None:
        assert elapsed < budget, f"runtime {elapsed:.2f}s exceeds {budget}s"


def timed(fn, *args, **kwargs):
    t0 = time.perf_counter()
    out = fn(*args, **kwargs)
    return out, time.perf_counter() - t0


@pytest.fixture(scope="session")
def scenario_runs(tmp_path_factory):
    """Every builtin scenario run twice: ``name -> (state, result, seconds, csv_a, csv_b)``."""
    root = tmp_path_factory.mktemp("scenarios")
    out = {}
    for s in builtin_scenarios():
        (state, res), secs = timed(run_scenario, s)
        _, res_b = run_scenario(s)
        a, b = root / f"{s.name}_a.csv", root / f"{s.name}_b.csv"
        write_timeseries_csv(str(a), res.rows)
        write_timeseries_csv(str(b), res_b.rows)
        out[s.name] = (state, res, secs, a.read_bytes(), b.read_bytes())
    return out


def scenario_check(runs, name, check_name):
    return next(c for c in runs[name][1].checks if c.name == check_name)


def test_criterion_01_residual_decay():
    checks, secs = timed(residual_checks)
    record(1, checks, secs, 1.0)


def test_criterion_02_monotonicity():
    checks, secs = timed(monotonicity_checks, 100_000)
    record(2, checks, secs, 5.0)


def test_criterion_03_energy_inequality(scenario_runs):
    _, res, secs, _, _ = scenario_runs["newtonian-mms"]
    assert len(res.rows) == 200
    checks = [scenario_check(scenario_runs, "newtonian-mms", n)
              for n in ("energy_slack_fraction", "plastic_dissipation_nonnegative", "slip_dissipation_nonnegative")]
    record(3, checks, secs, 60.0)


def test_criterion_04_divergence_constraint(scenario_runs):
    checks = []
    for name in scenario_runs:
        for n in ("divergence", "boundary_normal"):
            c = scenario_check(scenario_runs, name, n)
            c = type(c)(f"{name}:{n}", c.passed, c.value, c.threshold)
            checks.append(c)
    assert max(c.value for c in checks if c.name.endswith("divergence")) <= 1e-10
    record(4, checks)


def test_criterion_05_mms_order():
    checks, secs = timed(mms_checks, (32, 64, 128))
    record(5, checks, secs, 300.0)


def test_criterion_06_heat_decay(scenario_runs):
    secs = scenario_runs["heat-decay"][2]
    record(6, [scenario_check(scenario_runs, "heat-decay", "heat_decay_amplitude")], secs, 10.0)


def test_criterion_07_quiescence(scenario_runs):
    _, res, secs, _, _ = scenario_runs["quiescent-plug"]
    assert len(res.rows) == 500
    record(7, [scenario_check(scenario_runs, "quiescent-plug", "quiescent_vmax")], secs, 60.0)


def test_criterion_08_stick_branch(scenario_runs):
    checks = [scenario_check(scenario_runs, "slip-threshold", n)
              for n in ("stick_branch_velocity", "stick_faces_present", "slip_faces_present")]
    record(8, checks)


def test_criterion_09_truncation():
    checks, secs = timed(truncation_checks, 1000)
    record(9, checks, secs, 10.0)


def test_criterion_10_lemma_harness():
    checks, secs = timed(lemma_checks)
    record(10, checks, secs, 30.0)


def test_criterion_11_determinism(scenario_runs):
    from granflow.scenarios import Check
    checks = [Check(f"{name}:identical_csv", a == b, float(a == b), 1.0)
              for name, (_, _, _, a, b) in scenario_runs.items()]
    record(11, checks)


def test_scenario_oracles_all_pass(scenario_runs):
    failing = [f"{name}: {c.line()}" for name, (_, res, _, _, _) in scenario_runs.items()
               for c in res.checks if not c.passed]
    assert not failing, failing
