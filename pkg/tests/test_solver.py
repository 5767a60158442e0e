import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from granflow.closures import FieldSpec, NavierSlipMMS, initial_pore_pressure
from granflow.fields import Grid, ScalarField, VectorField, divergence, gradient, mac_operators
from granflow.rheology import RheologyParams, SlipParams
from granflow.solver import (CFLWarning, PicardNoConvergence, PoissonNoConvergence, SimConfig, SimState,
                             fluid_velocity, leray_project, momentum_step, simulate, step)

from . import oracles


def random_face_field(grid, rng):
    x = rng.normal(size=mac_operators(grid).n_unknowns)
    return VectorField.from_interior(grid, x)


# ---------------------------------------------------------------- configuration

@pytest.mark.parametrize("kwargs", [dict(dt=0), dict(dt=1.0, t_end=0.5), dict(picard_tol=2.0), dict(picard_max=0),
                                    dict(permeability=0), dict(rho_f=-1), dict(advection_scheme="weno"),
                                    dict(linear_solver="gmres")])
def test_sim_config_rejects_invalid(kwargs):
    with pytest.raises(ValueError):
        SimConfig(grid=Grid.box(4, 4), **kwargs)


def test_step_count():
    assert SimConfig(grid=Grid.box(4, 4), dt=0.1, t_end=1.0).n_steps == 10


# ---------------------------------------------------------------- projection

@settings(max_examples=25)
@given(st.integers(4, 16), st.integers(4, 16), st.integers(0, 2**31))
def test_projection_is_solenoidal_and_idempotent(nx, ny, seed):
    g = Grid.box(nx, ny, 1.0, ny / nx)
    w = random_face_field(g, np.random.default_rng(seed))
    v, _ = leray_project(w)
    assert np.abs(divergence(v).values).max() <= 1e-10
    v2, psi2 = leray_project(v)
    assert (v2 - v).max_abs() <= 1e-10
    assert np.abs(psi2.values).max() <= 1e-10


def test_projection_removes_gradients_and_is_orthogonal():
    g = Grid.box(12, 10, 1.2, 1.0)
    rng = np.random.default_rng(0)
    phi = ScalarField(g, rng.normal(size=g.shape))
    grad = gradient(phi)
    v, _ = leray_project(grad)
    assert v.max_abs() <= 1e-10
    w = random_face_field(g, rng)
    pw, _ = leray_project(w)
    r = w - pw
    inner = sum(np.sum(a * b) for a, b in zip(pw.components, r.components))
    assert abs(inner) <= 1e-10 * w.l2_norm() ** 2 / g.cell_volume


def test_projection_3d_and_cg_agree():
    g = Grid.box(5, 4, nz=6)
    w = random_face_field(g, np.random.default_rng(1))
    a, _ = leray_project(w)
    b, _ = leray_project(w, method="cg")
    assert np.abs(divergence(a).values).max() <= 1e-10
    assert (a - b).max_abs() <= 1e-9


def test_projection_reports_failure(monkeypatch):
    import granflow.solver as solver
    g = Grid.box(6, 6)

    class Broken:
        def solve(self, rhs):
            return np.zeros_like(rhs)
    monkeypatch.setattr(solver, "poisson_solver", lambda *a: Broken())
    w = random_face_field(g, np.random.default_rng(2))
    with pytest.raises(PoissonNoConvergence):
        leray_project(w)


# ---------------------------------------------------------------- momentum step

def test_rest_is_a_fixed_point():
    cfg = SimConfig(grid=Grid.box(8, 8), dt=0.01, t_end=0.05)
    pf0 = ScalarField(cfg.grid, np.full(cfg.grid.shape, 0.3))
    out = simulate(cfg, pf0=pf0)
    assert out.v.max_abs() == 0.0
    np.testing.assert_allclose(out.p_f.values, 0.3, atol=1e-13)
    assert np.abs(out.p.values).max() == 0.0


def test_constant_force_is_balanced_by_pressure():
    # a uniform force is a gradient: the transient dies out and p absorbs it
    cfg = SimConfig(grid=Grid.box(8, 8), rheology=RheologyParams(q_star=0.0), dt=0.05, t_end=2.0,
                    body_force_spec=FieldSpec("constant", {"bx": 1.0, "by": -2.0}))
    out = simulate(cfg)
    assert out.v.max_abs() <= 1e-6
    x, y = cfg.grid.cell_centers()
    expected = x - 2 * y
    # incremental projection leaves an O(dt) pressure boundary layer
    np.testing.assert_allclose(out.p.values - out.p.values.mean(), expected - expected.mean(), atol=2e-3)


def test_gradient_force_relaxes_to_rest():
    cfg = SimConfig(grid=Grid.box(12, 12), rheology=RheologyParams(q_star=0.0), dt=0.05, t_end=2.0,
                    body_force_spec=FieldSpec("gradient", {"amplitude": 1.0}))
    out = simulate(cfg)
    assert out.v.max_abs() <= 1e-6


def test_plug_holds_under_weak_rotational_force():
    cfg = SimConfig(grid=Grid.box(12, 12), rheology=RheologyParams(reg_n=100_000), dt=0.01, t_end=0.2,
                    body_force_spec=FieldSpec("rotational", {"amplitude": 0.1}),
                    lithostatic_spec=FieldSpec("constant", {"value": 100.0}))
    assert simulate(cfg).v.max_abs() <= 1e-6


def test_fluidized_material_moves_under_the_same_force():
    cfg = SimConfig(grid=Grid.box(12, 12), rheology=RheologyParams(reg_n=1000), dt=0.01, t_end=0.2,
                    body_force_spec=FieldSpec("rotational", {"amplitude": 0.1}),
                    lithostatic_spec=FieldSpec("constant", {"value": 100.0}))
    pf0 = ScalarField(cfg.grid, np.full(cfg.grid.shape, 200.0))
    cfg = SimConfig(**{**cfg.__dict__, "freeze_pore_pressure": True})
    assert simulate(cfg, pf0=pf0).v.max_abs() > 1e-3


def test_cfl_warning():
    g = Grid.box(8, 8)
    cfg = SimConfig(grid=g, dt=0.5, t_end=0.5, rheology=RheologyParams(q_star=0.0))
    psi = np.zeros((9, 9))
    psi[4, 4] = 1.0
    state = SimState.initial(g, VectorField.from_streamfunction(g, psi))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        new = momentum_step(state, cfg)
    assert any(issubclass(w.category, CFLWarning) for w in caught)
    assert new.info["cfl_warning"] and new.info["cfl"] > 0.5


def test_picard_failure_is_reported_with_step():
    cfg = SimConfig(grid=Grid.box(8, 8), dt=0.01, t_end=0.02, picard_max=1,
                    body_force_spec=FieldSpec("rotational", {"amplitude": 5.0}))
    with pytest.raises(PicardNoConvergence) as info:
        simulate(cfg)
    assert info.value.step == 0 and info.value.iterations == 1


def test_simulate_rejects_penetrating_initial_velocity():
    g = Grid.box(4, 4)
    u = np.zeros((5, 4))
    u[0, 0] = 1.0
    with pytest.raises(ValueError):
        simulate(SimConfig(grid=g), VectorField(g, (u, np.zeros((4, 5))), constrained=False))


def test_simulate_is_deterministic_and_observed():
    cfg = SimConfig(grid=Grid.box(8, 8), dt=0.01, t_end=0.03,
                    body_force_spec=FieldSpec("rotational", {"amplitude": 3.0}))
    seen = []
    a = simulate(cfg, observers=[lambda k, prev, new, c: seen.append((k, prev.t, new.t))])
    b = simulate(cfg)
    assert [s[0] for s in seen] == [0, 1, 2]
    assert seen[-1][2] == pytest.approx(0.03)
    for x, y in zip(a.v.components, b.v.components):
        np.testing.assert_array_equal(x, y)
    assert np.abs(divergence(a.v).values).max() <= 1e-10
    assert a.v.max_boundary_normal() == 0.0


def test_three_dimensional_step_runs():
    g = Grid.box(4, 4, nz=4)
    cfg = SimConfig(grid=g, dt=0.01, t_end=0.01, slip=SlipParams(0.1, 0.1, 1.0),
                    body_force_spec=FieldSpec("rotational", {"amplitude": 3.0}))
    out = simulate(cfg)
    assert out.v.max_abs() > 0
    assert np.abs(divergence(out.v).values).max() <= 1e-10


# ---------------------------------------------------------------- pore pressure

@pytest.mark.parametrize("nx,lx", [(16, 1.0), (32, 2.0)])
def test_pore_pressure_cosine_mode_matches_backward_euler(nx, lx):
    g = Grid.box(nx, 4, lx, 1.0)
    cfg = SimConfig(grid=g, dt=1e-3, t_end=2e-2, freeze_velocity=True)
    pf0 = initial_pore_pressure(FieldSpec("cosine", {"amplitude": 1.0}), g)
    out = simulate(cfg, pf0=pf0)
    factor = oracles.heat_mode_factor(nx, lx, cfg.dt, cfg.n_steps)
    np.testing.assert_allclose(out.p_f.values, factor * pf0.values, rtol=1e-10, atol=1e-13)


def test_pore_pressure_follows_lithostatic_rate():
    g = Grid.box(6, 6)
    spec = FieldSpec("constant", {"value": 1.0, "rate": 2.0})
    cfg = SimConfig(grid=g, dt=0.01, t_end=0.1, freeze_velocity=True, lithostatic_spec=spec,
                    include_ps_rate=True)
    out = simulate(cfg)
    np.testing.assert_allclose(out.p_f.values, 0.2, rtol=1e-10)
    cfg_off = SimConfig(**{**cfg.__dict__, "include_ps_rate": False})
    assert np.abs(simulate(cfg_off).p_f.values).max() < 1e-14


def test_pore_pressure_mass_is_conserved_without_sources():
    g = Grid.box(10, 10)
    cfg = SimConfig(grid=g, dt=0.01, t_end=0.1, freeze_velocity=True)
    pf0 = ScalarField(g, np.random.default_rng(3).normal(size=g.shape))
    out = simulate(cfg, pf0=pf0)
    assert out.p_f.values.sum() == pytest.approx(pf0.values.sum(), abs=1e-10)
    assert np.ptp(out.p_f.values) < np.ptp(pf0.values)


def test_frozen_pore_pressure_is_untouched():
    g = Grid.box(6, 6)
    cfg = SimConfig(grid=g, dt=0.01, t_end=0.01, freeze_pore_pressure=True)
    pf0 = ScalarField(g, np.random.default_rng(4).normal(size=g.shape))
    np.testing.assert_array_equal(step(SimState.initial(g, pf0=pf0), cfg).p_f.values, pf0.values)


# ---------------------------------------------------------------- fluid velocity

def test_fluid_velocity_at_rest_is_zero():
    g = Grid.box(6, 6)
    cfg = SimConfig(grid=g)
    state = SimState.initial(g, pf0=ScalarField(g, np.full(g.shape, 4.0)))
    assert fluid_velocity(state, cfg).max_abs() == 0.0


def test_fluid_velocity_darcy_flux():
    g = Grid.box(8, 8)
    cfg = SimConfig(grid=g, alpha_drag=2.0, porosity_spec=FieldSpec("constant", {"phi0": 0.4}))
    pf = ScalarField.sample(g, lambda x, y: 3.0 * x)
    vf = fluid_velocity(SimState.initial(g, pf0=pf), cfg)
    u = vf.components[0]
    np.testing.assert_allclose(u[1:-1], -0.4 * 3.0 / 2.0, rtol=1e-12)
    assert np.all(u[[0, -1]] == 0) and np.abs(vf.components[1]).max() < 1e-12


def test_fluid_velocity_hydrostatic_balance():
    g = Grid.box(8, 8)
    cfg = SimConfig(grid=g, rho_f=2.0, body_force_spec=FieldSpec("constant", {"by": -1.0}))
    pf = ScalarField.sample(g, lambda x, y: -2.0 * y)
    assert fluid_velocity(SimState.initial(g, pf0=pf), cfg).max_abs() <= 1e-12


# ---------------------------------------------------------------- manufactured solution

def test_manufactured_forcing_matches_symbolic():
    mms = NavierSlipMMS(gamma=1.3, nu=0.5)
    sym = oracles.navier_slip_mms(gamma=1.3, nu=0.5)
    x, y = np.random.default_rng(5).uniform(0, 1, size=(2, 50))
    bx, by = mms.forcing(x, y)
    np.testing.assert_allclose(bx, sym["bx"](x, y), rtol=1e-11, atol=1e-12)
    np.testing.assert_allclose(by, sym["by"](x, y), rtol=1e-11, atol=1e-12)
    u, v = mms.velocity(x, y)
    np.testing.assert_allclose(u, sym["u"](x, y), atol=1e-13)


def test_manufactured_solution_satisfies_navier_slip():
    sym = oracles.navier_slip_mms(gamma=1.3, nu=0.5)
    s = np.linspace(0.05, 0.95, 19)
    np.testing.assert_allclose(np.abs(sym["shear"](s, 0 * s)), 1.3 * np.abs(sym["u"](s, 0 * s)), atol=1e-12)
    np.testing.assert_allclose(np.abs(sym["shear"](0 * s, s)), 1.3 * np.abs(sym["v"](0 * s, s)), atol=1e-12)
    np.testing.assert_allclose(sym["v"](s, 0 * s), 0.0, atol=1e-14)
