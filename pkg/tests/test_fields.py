import numpy as np
import pytest
from hypothesis import given, strategies as st

from granflow.fields import (Grid, ScalarField, SymTensorField, VectorField, advect_scalar, convective_term,
                             convective_term_truncated, divergence, g_cutoff, gradient, laplacian_neumann,
                             mac_operators, sym_gradient)

grids2d = st.builds(lambda nx, ny, lx, ly: Grid.box(nx, ny, lx, ly),
                    st.integers(4, 12), st.integers(4, 12), st.floats(0.5, 3), st.floats(0.5, 3))


def random_streamfunction_field(grid, rng):
    psi = np.zeros(tuple(n + 1 for n in grid.shape))
    psi[1:-1, 1:-1] = rng.normal(size=tuple(n - 1 for n in grid.shape))
    return VectorField.from_streamfunction(grid, psi)


# ---------------------------------------------------------------- containers

@pytest.mark.parametrize("shape,lengths", [((3, 8), (1, 1)), ((8, 8), (0, 1)), ((8,), (1,)), ((8, 8), (1, -2))])
def test_grid_rejects_invalid(shape, lengths):
    with pytest.raises(ValueError):
        Grid(shape, lengths)


def test_grid_geometry():
    g = Grid.box(8, 4, 2.0, 1.0)
    assert g.spacing == (0.25, 0.25) and g.cell_volume == 0.0625 and g.n_cells == 32
    assert g.face_shape(0) == (9, 4) and g.edge_shape(0, 1) == (9, 5)
    assert Grid.box(4, 4, nz=5).dim == 3


def test_scalar_field_rejects_bad_values():
    g = Grid.box(4, 4)
    with pytest.raises(ValueError):
        ScalarField(g, np.zeros((4, 5)))
    with pytest.raises(ValueError):
        ScalarField(g, np.full((4, 4), np.nan))


def test_constrained_vector_field_requires_zero_normal_flux():
    g = Grid.box(4, 4)
    u = np.zeros((5, 4))
    u[0, 1] = 1.0
    with pytest.raises(ValueError):
        VectorField(g, (u, np.zeros((4, 5))))
    VectorField(g, (u, np.zeros((4, 5))), constrained=False)


def test_interior_roundtrip():
    g = Grid.box(5, 6)
    rng = np.random.default_rng(0)
    x = rng.normal(size=mac_operators(g).n_unknowns)
    np.testing.assert_array_equal(VectorField.from_interior(g, x).interior_vector(), x)


def test_sym_tensor_structural_symmetry():
    g = Grid.box(4, 4, nz=4)
    T = SymTensorField(g, np.random.default_rng(1).normal(size=(6, 4, 4, 4)))
    M = T.matrix()
    np.testing.assert_array_equal(M, np.swapaxes(M, -1, -2))
    np.testing.assert_allclose(SymTensorField.from_matrix(g, M).entries, T.entries)
    np.testing.assert_allclose(T.norm(), np.sqrt(np.sum(M**2, axis=(-2, -1))))


# ---------------------------------------------------------------- symmetric gradient

def test_sym_gradient_of_constant_is_zero():
    g = Grid.box(6, 6)
    v = VectorField.sample(g, lambda x, y: (np.full_like(x, 2.0), np.full_like(x, -1.0)), constrained=False)
    assert np.abs(sym_gradient(v).entries).max() < 1e-13


def test_sym_gradient_of_linear_field():
    g = Grid.box(8, 6, 2.0, 1.0)
    v = VectorField.sample(g, lambda x, y: (x, -y), constrained=False)
    D = sym_gradient(v)
    np.testing.assert_allclose(D.component(0, 0), 1.0, atol=1e-12)
    np.testing.assert_allclose(D.component(1, 1), -1.0, atol=1e-12)
    np.testing.assert_allclose(D.component(0, 1), 0.0, atol=1e-12)


def test_sym_gradient_shear_converges_at_second_order():
    errs = []
    for n in (16, 32, 64):
        g = Grid.box(n, n)
        v = VectorField.sample(g, lambda x, y: (np.sin(np.pi * y), 0 * x), constrained=False)
        y = g.cell_centers()[1]
        errs.append(np.abs(sym_gradient(v).component(0, 1) - 0.5 * np.pi * np.cos(np.pi * y)).max())
    orders = np.log2(np.array(errs[:-1]) / errs[1:])
    assert orders.min() >= 1.9


# ---------------------------------------------------------------- divergence

def test_divergence_of_constant_and_linear():
    g = Grid.box(6, 5, 1.0, 2.0)
    v = VectorField.sample(g, lambda x, y: (np.ones_like(x), 3 * np.ones_like(x)), constrained=False)
    assert np.abs(divergence(v).values).max() < 1e-12
    w = VectorField.sample(g, lambda x, y: (x, y), constrained=False)
    np.testing.assert_allclose(divergence(w).values, 2.0, atol=1e-12)


@given(grids2d, st.integers(0, 2**31))
def test_streamfunction_fields_are_discretely_solenoidal(grid, seed):
    v = random_streamfunction_field(grid, np.random.default_rng(seed))
    assert np.abs(divergence(v).values).max() <= 1e-12 * max(1.0, v.max_abs() / min(grid.spacing))


def test_divergence_converges_at_second_order():
    errs = []
    for n in (16, 32, 64):
        g = Grid.box(n, n)
        v = VectorField.sample(g, lambda x, y: (np.sin(2 * x) * y, np.cos(x * y)), constrained=False)
        x, y = g.cell_centers()
        exact = 2 * np.cos(2 * x) * y - x * np.sin(x * y)
        errs.append(np.abs(divergence(v).values - exact).max())
    assert np.log2(np.array(errs[:-1]) / errs[1:]).min() >= 1.9


@given(grids2d, st.integers(0, 2**31))
def test_divergence_and_gradient_are_adjoint(grid, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=mac_operators(grid).n_unknowns)
    v = VectorField.from_interior(grid, x)
    s = ScalarField(grid, rng.normal(size=grid.shape))
    vol = grid.cell_volume
    lhs = np.sum(s.values * divergence(v).values) * vol
    rhs = sum(np.sum(gc * vc) for gc, vc in zip(gradient(s).components, v.components)) * vol
    assert abs(lhs + rhs) <= 1e-10 * (1 + abs(lhs))


def test_sparse_divergence_matches_array_operator_3d():
    g = Grid.box(4, 5, nz=6)
    x = np.random.default_rng(2).normal(size=mac_operators(g).n_unknowns)
    np.testing.assert_allclose(mac_operators(g).divergence_matrix @ x,
                               divergence(VectorField.from_interior(g, x)).values.ravel(), atol=1e-12)


# ---------------------------------------------------------------- laplacian

def test_laplacian_constant_and_conservation():
    g = Grid.box(7, 9)
    assert np.abs(laplacian_neumann(ScalarField(g, np.full(g.shape, 3.0))).values).max() < 1e-12
    s = ScalarField(g, np.random.default_rng(3).normal(size=g.shape))
    assert abs(laplacian_neumann(s).values.sum()) < 1e-10


def test_laplacian_cosine_mode():
    errs = []
    for n in (16, 32, 64):
        g = Grid.box(n, n // 2, 2.0, 1.0)
        s = ScalarField.sample(g, lambda x, y: np.cos(np.pi * x / 2.0))
        errs.append(np.abs(laplacian_neumann(s).values + (np.pi / 2.0) ** 2 * s.values).max())
    assert errs[-1] < 2e-3
    assert np.log2(np.array(errs[:-1]) / errs[1:]).min() >= 1.9


# ---------------------------------------------------------------- advection

def test_advection_trivial_cases():
    g = Grid.box(8, 8)
    v = random_streamfunction_field(g, np.random.default_rng(4))
    assert np.abs(advect_scalar(ScalarField(g, np.full(g.shape, 2.0)), v).values).max() < 1e-12
    s = ScalarField(g, np.random.default_rng(5).normal(size=g.shape))
    assert np.all(advect_scalar(s, VectorField.zeros(g)).values == 0)


@pytest.mark.parametrize("scheme", ["upwind", "central"])
def test_advection_exact_for_linear(scheme):
    g = Grid.box(8, 8)
    s = ScalarField.sample(g, lambda x, y: x)
    v = VectorField.sample(g, lambda x, y: (np.ones_like(x), 0 * x), constrained=False)
    out = advect_scalar(s, v, scheme).values
    np.testing.assert_allclose(out[1:-1, :], 1.0, atol=1e-12)


def test_advection_rejects_unknown_scheme():
    g = Grid.box(4, 4)
    with pytest.raises(ValueError):
        advect_scalar(ScalarField.zeros(g), VectorField.zeros(g), "spectral")


# ---------------------------------------------------------------- cutoff and convection

def test_cutoff_shape():
    n = 10.0
    u = np.linspace(0, 40, 4001)
    G = g_cutoff(u, n)
    assert np.all(G[u <= n] == 1.0) and np.all(G[u >= 2 * n] == 0.0)
    assert g_cutoff(1.5 * n, n) == pytest.approx(0.5)
    assert np.all(np.diff(G) <= 0)
    slope = np.abs(np.diff(G) / np.diff(u)).max()
    assert slope == pytest.approx(1.5 / n, rel=1e-3) and slope <= 2 / n


def test_convection_untruncated_when_slow_and_killed_when_fast():
    g = Grid.box(12, 12)
    v = random_streamfunction_field(g, np.random.default_rng(6)).scaled(1e-3)
    full = convective_term(v)
    trunc = convective_term_truncated(v, 64)
    for a in range(2):
        np.testing.assert_array_equal(trunc.components[a], full[a])
    fast = VectorField.sample(g, lambda x, y: (np.full_like(x, 100.0), np.full_like(x, 100.0)), constrained=False)
    assert trunc.max_abs() > 0
    assert convective_term_truncated(fast, 64).max_abs() == 0.0


def test_convection_is_energy_neutral_for_solenoidal_fields():
    g = Grid.box(10, 14, 1.0, 1.4)
    v = random_streamfunction_field(g, np.random.default_rng(7))
    conv = convective_term(v)
    work = sum(np.sum(c * u) for c, u in zip(conv, v.components))
    assert abs(work) <= 1e-10 * sum(np.sum(np.abs(c * u)) for c, u in zip(conv, v.components))
