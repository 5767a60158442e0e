"""Property suite driven by ``granflow verify`` and the acceptance tests."""

from __future__ import annotations

import numpy as np

from .analysis import (DegenerateField, decreasing_within, lemma_families, lemma_harness, layer_integrals,
                       monotonicity_certificate, truncation_level_select, truncation_report)
from .fields import Grid, ScalarField, VectorField
from .rheology import bulk_implicit_residual, plastic_stress_reg, tensor_norm, viscous_stress_activated
from .scenarios import Check, mms_convergence_study, run_scenario, scenario_by_name

N_VALUES = [2**k for k in range(9)]
MONOTONE_TOL = -1e-12
HALVING_RATIO = 0.55
# ratio (n|D|+1)/(2n|D|+1) <= 0.55 needs n|D| >= 4.5 at n = 1
HALVING_MIN_NORM = 4.5


def _sym(rng, m, d=3):
    a = rng.normal(size=(m, d, d))
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def plastic_map(tau=1.3, reg_n=64, sign=1.0):
    return lambda D: sign * plastic_stress_reg(D, np.full(D.shape[0], tau), reg_n)


def monotonicity_checks(n_pairs=100_000, rng=None, fault=None):
    rng = np.random.default_rng(1) if rng is None else rng
    sign = -1.0 if fault == "plastic-sign" else 1.0
    checks = []
    value = monotonicity_certificate(plastic_map(sign=sign), n_pairs, rng=rng)
    checks.append(Check("monotonicity_plastic", value >= MONOTONE_TOL, value, MONOTONE_TOL))
    for q in (1.5, 2.0, 3.0):
        value = monotonicity_certificate(lambda D: viscous_stress_activated(D, 0.5, 0.2, q), n_pairs, rng=rng)
        checks.append(Check(f"monotonicity_viscous_q{q:g}", value >= MONOTONE_TOL, value, MONOTONE_TOL))
    return checks


def frozen_samples(m=100, rng=None, min_norm=HALVING_MIN_NORM, max_norm=100.0):
    """Random ``(D, tau)`` with ``|D|`` log-uniform in ``[min_norm, max_norm]``."""
    rng = np.random.default_rng(2) if rng is None else rng
    D = _sym(rng, m)
    target = np.exp(rng.uniform(np.log(min_norm), np.log(max_norm), m))
    D = D / tensor_norm(D)[:, None, None] * target[:, None, None]
    tau = rng.uniform(0.1, 10.0, m)
    return D, tau


def residual_decay(D, tau, n_values=N_VALUES):
    """Array ``res[k, i]`` of the implicit bulk residual at ``n_values[k]``."""
    return np.array([bulk_implicit_residual(plastic_stress_reg(D, tau, n), D, tau) for n in n_values])


def residual_checks(rng=None):
    D, tau = frozen_samples(rng=rng)
    res = residual_decay(D, tau)
    n = np.array(N_VALUES, dtype=float)[:, None]
    excess = float(np.max(res - tau[None, :] / n))
    ratio = float(np.max(res[1:] / res[:-1]))
    return [Check("residual_bound_tau_over_n", excess <= 1e-12, excess, 0.0),
            Check("residual_halving_ratio", ratio <= HALVING_RATIO, ratio, HALVING_RATIO)]


def random_smooth_field(grid: Grid, rng, amplitude=1.0, modes=3):
    """Random trigonometric field sampled on faces (not constrained)."""
    coeffs = rng.normal(size=(grid.dim, modes, modes, 2))
    phase = rng.uniform(0, 2 * np.pi, size=(grid.dim, modes, modes))
    L = grid.lengths

    def fn(*X):
        out = []
        for a in range(grid.dim):
            acc = np.zeros_like(X[0])
            for k in range(modes):
                for j in range(modes):
                    arg = np.pi * (k * X[0] / L[0] + j * X[1] / L[1]) + phase[a, k, j]
                    acc = acc + coeffs[a, k, j, 0] * np.cos(arg) + coeffs[a, k, j, 1] * np.sin(arg)
            out.append(amplitude * acc / modes)
        return out
    return VectorField.sample(grid, fn, constrained=False)


def truncation_checks(n_fields=1000, grid=None, rng=None, N_values=(4, 8, 16)):
    rng = np.random.default_rng(3) if rng is None else rng
    grid = grid or Grid.box(16, 16)
    worst_mag = worst_ident = worst_div = worst_grad = worst_layer = 0.0
    for _ in range(n_fields):
        amp = float(np.exp(rng.uniform(0.0, 6.0)))
        w = random_smooth_field(grid, rng, amplitude=amp)
        lam = float(amp * rng.uniform(0.05, 1.0))
        rep = truncation_report(w, lam)
        worst_mag = max(worst_mag, rep.max_magnitude / lam - 1.0)
        worst_ident = max(worst_ident, rep.identity_violation)
        worst_div = max(worst_div, rep.div_violation)
        worst_grad = max(worst_grad, rep.grad_bound_ratio)
        diag = ScalarField(grid, np.exp(rng.normal(size=grid.shape)))
        total = float(np.sum(diag.values) * grid.cell_volume)
        for N in N_values:
            try:
                lam_sel = truncation_level_select(w, diag, N)
            except DegenerateField:
                continue
            i_star = int(round(np.log(lam_sel) / np.log(N)))
            picked = layer_integrals(w, diag, N)[i_star - 1]
            worst_layer = max(worst_layer, picked - total / N)
    return [Check("truncation_linf_bound", worst_mag <= 1e-12, worst_mag, 1e-12),
            Check("truncation_identity", worst_ident == 0.0, worst_ident, 0.0),
            Check("truncation_divergence_unflagged", worst_div <= 1e-12, worst_div, 1e-12),
            Check("truncation_gradient_bound", worst_grad <= 2.0, worst_grad, 2.0),
            Check("truncation_layer_selection", worst_layer <= 0.0, worst_layer, 0.0)]


def lemma_checks(n_values=N_VALUES):
    checks = []
    for fam in lemma_families():
        rep = lemma_harness(fam, n_values)
        for label, series in (("c1", rep.residual_c1), ("c3", rep.residual_c3)):
            mono = decreasing_within(series, 0.1)
            final = series[-1] / series[0] if series[0] > 0 else 0.0
            checks.append(Check(f"lemma_{fam.name}_{label}_monotone", mono, float(mono), 1.0))
            checks.append(Check(f"lemma_{fam.name}_{label}_decay", final <= 1e-2, final, 1e-2))
    return checks


def mms_checks(sizes=(32, 64, 128)):
    errors, orders = mms_convergence_study(sizes)
    worst = float(min(orders))
    return [Check("mms_velocity_order", worst >= 1.9, worst, 1.9)]


def scenario_checks(names=("heat-decay", "newtonian-mms")):
    out = []
    for name in names:
        _, res = run_scenario(scenario_by_name(name))
        out += [Check(f"{name}:{c.name}", c.passed, c.value, c.threshold) for c in res.checks]
    return out


def run_suite(fault=None, quick=False):
    """Run every property group; returns the list of checks in execution order."""
    checks = []
    checks += monotonicity_checks(20_000 if quick else 100_000, fault=fault)
    checks += residual_checks()
    checks += truncation_checks(100 if quick else 1000)
    checks += lemma_checks()
    checks += scenario_checks()
    checks += mms_checks((16, 32, 64) if quick else (32, 64, 128))
    return checks
