"""Projection time stepping for the regularised pressure-activated Bingham system.

One step advances, in order:

1. momentum predictor: explicit truncated convection, secant (Kacanov) Picard
   iteration on the regularised stress and slip law, implicit in the velocity;
2. discrete Leray projection with incremental pressure update;
3. pore pressure: backward-Euler diffusion, explicit upwind advection.

The wall slip law is imposed through a wall velocity ``u_w`` per tangential
boundary face solving ``mu_w (u_1 - u_w)/h = s_n(u_w)``, where ``u_1`` is the
adjacent interior face value. The wall enters the linear system as a Robin
diagonal ``s_n(u_w)/(u_1 h)``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import closures
from .closures import FieldSpec
from .fields import (Grid, ScalarField, VectorField, advect_scalar, convective_term_truncated,
                     divergence, mac_operators)
from .rheology import RheologyParams, SlipParams, secant_viscosity, slip_magnitude, slip_secant, yield_stress


class SolverError(RuntimeError):
    """Base class; ``step`` is set by :func:`simulate` when raised mid-run."""

    step = None


class PicardNoConvergence(SolverError):
    def __init__(self, residual, iterations):
        super().__init__(f"Picard iteration stalled after {iterations} iterations (residual {residual:.3e})")
        self.residual = residual
        self.iterations = iterations


class PoissonNoConvergence(SolverError):
    def __init__(self, residual, iterations=None):
        super().__init__(f"Poisson solve failed (residual {residual:.3e})")
        self.residual = residual
        self.iterations = iterations


class CFLWarning(UserWarning):
    pass


@dataclass(frozen=True)
class SimConfig:
    grid: Grid
    rheology: RheologyParams = field(default_factory=RheologyParams)
    slip: SlipParams = field(default_factory=SlipParams)
    dt: float = 1e-3
    t_end: float = 1e-2
    picard_tol: float = 1e-8
    picard_max: int = 200
    poisson_tol: float = 1e-10
    alpha_drag: float = 1.0
    porosity_spec: FieldSpec = field(default_factory=lambda: FieldSpec("constant", {"phi0": 0.3}))
    body_force_spec: FieldSpec = field(default_factory=FieldSpec)
    lithostatic_spec: FieldSpec = field(default_factory=lambda: FieldSpec("constant", {"value": 0.0}))
    rho_s: float = 1.0
    rho_f: float = 1.0
    permeability: float = 1.0
    include_ps_rate: bool = False
    advection_scheme: str = "upwind"
    linear_solver: str = "direct"
    freeze_velocity: bool = False
    freeze_pore_pressure: bool = False
    picard_floor: float = 1e-12
    cfl_limit: float = 0.5

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be > 0, got {self.dt}")
        if not self.t_end >= self.dt * (1 - 1e-12):
            raise ValueError("t_end must be >= dt")
        for name in ("picard_tol", "poisson_tol"):
            if not 0 < getattr(self, name) < 1:
                raise ValueError(f"{name} must lie in (0, 1)")
        if int(self.picard_max) < 1:
            raise ValueError("picard_max must be >= 1")
        for name in ("alpha_drag", "rho_s", "permeability"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if self.rho_f < 0:
            raise ValueError("rho_f must be >= 0")
        if self.advection_scheme not in ("upwind", "central"):
            raise ValueError(f"unknown advection scheme {self.advection_scheme!r}")
        if self.linear_solver not in ("direct", "cg"):
            raise ValueError(f"unknown linear solver {self.linear_solver!r}")

    @property
    def n_steps(self):
        return max(1, int(np.floor(self.t_end / self.dt + 1e-9)))


@dataclass
class SimState:
    t: float
    v: VectorField
    p: ScalarField
    p_f: ScalarField
    info: dict = field(default_factory=dict)

    @classmethod
    def initial(cls, grid, v0=None, pf0=None):
        return cls(0.0, v0 if v0 is not None else VectorField.zeros(grid),
                   ScalarField.zeros(grid), pf0 if pf0 is not None else ScalarField.zeros(grid))


# ---------------------------------------------------------------------------
# Linear solves
# ---------------------------------------------------------------------------

class PoissonSolver:
    """Neumann Poisson solver ``L psi = r`` on cells, psi normalised to zero mean."""

    def __init__(self, grid, method="direct", tol=1e-10):
        self.ops = mac_operators(grid)
        self.method = method
        self.tol = tol
        L = self.ops.laplacian_matrix
        if method == "direct":
            pinned = L.tolil()
            pinned[0, :] = 0.0
            pinned[:, 0] = 0.0
            pinned[0, 0] = 1.0
            self._pinned = pinned.tocsr()
            self._lu = spla.splu(self._pinned.tocsc(), permc_spec="MMD_AT_PLUS_A")
        else:
            self._neg = (-L).tocsr()
            diag = self._neg.diagonal()
            self._precond = sp.diags(1.0 / np.where(diag > 0, diag, 1.0))

    def solve(self, rhs):
        r = rhs - rhs.mean()
        if self.method == "direct":
            rp = r.copy()
            rp[0] = 0.0
            psi = self._lu.solve(rp)
            psi += self._lu.solve(rp - self._pinned @ psi)
        else:
            # absolute stopping rule: the projected divergence must meet tol
            psi, info = spla.cg(self._neg, -r, rtol=0.0, atol=1e-2 * self.tol,
                                maxiter=10 * r.size, M=self._precond)
            if info != 0:
                res = float(np.linalg.norm(self._neg @ psi + r))
                raise PoissonNoConvergence(res, info)
        return psi - psi.mean()


_POISSON_CACHE = {}


def poisson_solver(grid, method="direct", tol=1e-10):
    key = (grid, method, tol)
    if key not in _POISSON_CACHE:
        _POISSON_CACHE[key] = PoissonSolver(grid, method, tol)
    return _POISSON_CACHE[key]


def leray_project(v_star: VectorField, poisson_tol=1e-10, method="direct"):
    """Discrete Helmholtz projection. Returns ``(v, psi)`` with ``v = v_star - grad psi``.

    Raises :class:`PoissonNoConvergence` when the projected field misses the
    divergence tolerance.
    """
    grid = v_star.grid
    ops = mac_operators(grid)
    x = v_star.interior_vector()
    rhs = ops.divergence_matrix @ x
    psi = poisson_solver(grid, method, poisson_tol).solve(rhs)
    x_new = x - ops.gradient_matrix @ psi
    residual = float(np.max(np.abs(ops.divergence_matrix @ x_new))) if x_new.size else 0.0
    if residual > poisson_tol:
        raise PoissonNoConvergence(residual)
    return VectorField.from_interior(grid, x_new), ScalarField(grid, psi.reshape(grid.shape))


# ---------------------------------------------------------------------------
# Strain, secant viscosities and wall velocities
# ---------------------------------------------------------------------------

@dataclass
class WallState:
    u1: np.ndarray
    uw: np.ndarray
    mu: np.ndarray
    coeff: np.ndarray  # Robin diagonal s_n(u_w)/u_1 (per unit length)


@dataclass
class StrainState:
    """Staggered strain-rate data for one velocity iterate.

    ``cell_diag[a]`` is ``D_aa`` at cells, ``edge_shear[pair]`` is ``D_ab`` on
    edges including wall values, ``cell_norm``/``edge_norm`` are ``|D|``.
    """

    cell_diag: list
    edge_shear: dict
    cell_norm: np.ndarray
    edge_norm: dict
    tau_cell: np.ndarray
    tau_edge: dict
    mu_cell: tuple
    mu_edge: dict
    walls: list


def _wall_velocity(u1, mu, h, slip: SlipParams, reg_n):
    """Solve ``mu (u1 - uw)/h = s_n(uw)`` for ``uw`` (same sign as ``u1``)."""
    a = np.abs(u1)
    sign = np.sign(u1)
    if slip.s_star == 0.0 and slip.beta_star == 0.0:
        uw = mu * a / (mu + slip.gamma_star * h)
        coeff = slip.gamma_star * mu / (mu + slip.gamma_star * h)
        return sign * uw, np.broadcast_to(coeff, a.shape).astype(float)
    lo = np.zeros_like(a)
    hi = a.copy()
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        f = slip_magnitude(mid, slip, reg_n) - mu * (a - mid) / h
        hi = np.where(f > 0, mid, hi)
        lo = np.where(f > 0, lo, mid)
    uw = 0.5 * (lo + hi)
    c0 = slip_secant(np.zeros_like(a), slip, reg_n)
    with np.errstate(divide="ignore", invalid="ignore"):
        coeff = np.where(a > 0, slip_magnitude(uw, slip, reg_n) / np.where(a > 0, a, 1.0),
                         c0 * mu / (mu + c0 * h))
    return sign * uw, coeff


def _norms(ops, cell_diag, edge_shear):
    cell_sq = sum(d * d for d in cell_diag)
    cell_r2 = cell_sq.copy()
    edge_sq_cells = {}
    for p in ops.pairs:
        edge_sq_cells[p] = ops.edge_to_cell[p] @ (edge_shear[p] ** 2)
        cell_r2 += 2.0 * edge_sq_cells[p]
    edge_r2 = {}
    for p in ops.pairs:
        r2 = 2.0 * edge_shear[p] ** 2 + ops.cell_to_edge[p] @ cell_sq
        for q in ops.pairs:
            if q != p:
                r2 += 2.0 * (ops.cell_to_edge[p] @ edge_sq_cells[q])
        edge_r2[p] = r2
    return np.sqrt(cell_r2), {p: np.sqrt(r) for p, r in edge_r2.items()}


def strain_state(x, tau_cell, cfg: SimConfig, uw_guess=None, passes=2) -> StrainState:
    """Evaluate strain rates and secant viscosities at interior velocity vector ``x``.

    ``uw_guess`` seeds the wall velocities; ``passes`` alternates wall solve
    and viscosity update.
    """
    ops = mac_operators(cfg.grid)
    rheo, slip = cfg.rheology, cfg.slip
    cell_diag = [ops.cell_strain[a] @ x for a in range(cfg.grid.dim)]
    edge_base = {p: ops.edge_strain[p] @ x for p in ops.pairs}
    tau_edge = {p: ops.cell_to_edge[p] @ tau_cell for p in ops.pairs}
    blocks = ops.wall_blocks
    u1 = [x[b.unknowns] for b in blocks]
    uw = list(uw_guess) if uw_guess is not None else [u.copy() for u in u1]
    walls = None
    for _ in range(max(1, passes)):
        edge_shear = {p: e.copy() for p, e in edge_base.items()}
        for b, u, w in zip(blocks, u1, uw):
            sgn = 1.0 if b.side == 0 else -1.0
            edge_shear[b.pair][b.edges] = sgn * (u - w) / b.h
        cell_norm, edge_norm = _norms(ops, cell_diag, edge_shear)
        mu_cell = secant_viscosity(cell_norm, tau_cell, rheo)
        mu_edge = {p: secant_viscosity(edge_norm[p], tau_edge[p], rheo) for p in ops.pairs}
        walls = []
        new_uw = []
        for b, u in zip(blocks, u1):
            mp, mv = mu_edge[b.pair]
            mu_w = mp[b.edges] + mv[b.edges]
            w, coeff = _wall_velocity(u, mu_w, b.h, slip, rheo.reg_n)
            walls.append(WallState(u, w, mu_w, coeff))
            new_uw.append(w)
        uw = new_uw
    # final consistent shear with the solved wall velocities
    edge_shear = {p: e.copy() for p, e in edge_base.items()}
    for b, w in zip(blocks, walls):
        sgn = 1.0 if b.side == 0 else -1.0
        edge_shear[b.pair][b.edges] = sgn * (w.u1 - w.uw) / b.h
    cell_norm, edge_norm = _norms(ops, cell_diag, edge_shear)
    return StrainState(cell_diag, edge_shear, cell_norm, edge_norm, tau_cell, tau_edge,
                       mu_cell, mu_edge, walls)


def viscous_matrix(ss: StrainState, cfg: SimConfig):
    """Secant operator ``A`` (per unit volume) built from frozen coefficients."""
    ops = mac_operators(cfg.grid)
    n = ops.n_unknowns
    A = sp.csr_matrix((n, n))
    mu_c = ss.mu_cell[0] + ss.mu_cell[1]
    for a in range(cfg.grid.dim):
        D = ops.cell_strain[a]
        A = A + D.T @ sp.diags(mu_c) @ D
    for p in ops.pairs:
        mu_e = (ss.mu_edge[p][0] + ss.mu_edge[p][1]) * ops.edge_mask(p, "interior")
        E = ops.edge_strain[p]
        A = A + 2.0 * (E.T @ sp.diags(mu_e) @ E)
    diag = np.zeros(n)
    for b, w in zip(ops.wall_blocks, ss.walls):
        np.add.at(diag, b.unknowns, w.coeff / b.h)
    return (A + sp.diags(diag)).tocsc()


def _coefficient_key(ss: StrainState, ops):
    parts = [ss.mu_cell[0] + ss.mu_cell[1]]
    parts += [(ss.mu_edge[p][0] + ss.mu_edge[p][1]) * ops.edge_mask(p, "interior") for p in ops.pairs]
    parts += [w.coeff for w in ss.walls]
    return np.concatenate(parts)


class StepWorkspace:
    """Per-run cache of the last momentum factorisation."""

    def __init__(self):
        self.key = None
        self.lu = None
        self.factorizations = 0

    def solve(self, key, build, rhs):
        if self.key is None or key.shape != self.key.shape or not np.array_equal(key, self.key):
            self.lu = spla.splu(build(), permc_spec="MMD_AT_PLUS_A")
            self.key = key
            self.factorizations += 1
        return self.lu.solve(rhs)


# ---------------------------------------------------------------------------
# Steps
# ---------------------------------------------------------------------------

def cell_yield_stress(p_f: ScalarField, cfg: SimConfig, t):
    p_s = closures.lithostatic(cfg.lithostatic_spec, cfg.grid, t)
    return yield_stress(p_s.values, p_f.values, cfg.rheology.q_star).ravel()


def cfl_number(v: VectorField, cfg: SimConfig):
    h = min(cfg.grid.spacing)
    return v.max_abs() * cfg.dt / h


def momentum_step(state: SimState, cfg: SimConfig, workspace: StepWorkspace | None = None) -> SimState:
    if cfg.freeze_velocity:
        return replace(state, t=state.t + cfg.dt, info={**state.info, "picard_iterations": 0})
    workspace = workspace or StepWorkspace()
    grid = cfg.grid
    ops = mac_operators(grid)
    dt, rho = cfg.dt, cfg.rho_s
    t_new = state.t + dt

    info = dict(state.info)
    cfl = cfl_number(state.v, cfg)
    info["cfl"] = cfl
    if cfl > cfg.cfl_limit:
        warnings.warn(f"CFL number {cfl:.3f} exceeds {cfg.cfl_limit}", CFLWarning, stacklevel=2)
        info["cfl_warning"] = True

    x_old = state.v.interior_vector()
    b = closures.body_force(cfg.body_force_spec, grid, t_new).interior_vector()
    conv = convective_term_truncated(state.v, cfg.rheology.reg_n).interior_vector()
    rhs = rho * x_old / dt + rho * (b - conv) - ops.gradient_matrix @ state.p.values.ravel()
    tau = cell_yield_stress(state.p_f, cfg, state.t)

    mass = sp.identity(ops.n_unknowns, format="csc") * (rho / dt)
    x = x_old.copy()
    uw = state.info.get("_wall_velocity")
    prev_key = None
    residual = np.inf
    for it in range(1, int(cfg.picard_max) + 1):
        ss = strain_state(x, tau, cfg, uw_guess=uw)
        uw = [w.uw for w in ss.walls]
        key = _coefficient_key(ss, ops)
        if prev_key is not None and np.array_equal(key, prev_key):
            residual = 0.0
            break
        x_new = workspace.solve(key, lambda: mass + viscous_matrix(ss, cfg), rhs)
        change = float(np.linalg.norm(x_new - x))
        scale = max(float(np.linalg.norm(x_new)), cfg.picard_floor)
        x = x_new
        prev_key = key
        residual = change / scale
        if residual <= cfg.picard_tol:
            break
    else:
        raise PicardNoConvergence(residual, int(cfg.picard_max))
    info["picard_iterations"] = it
    info["picard_residual"] = residual

    v_star = VectorField.from_interior(grid, x)
    v_new, psi = leray_project(v_star, cfg.poisson_tol, cfg.linear_solver)
    p_new = ScalarField(grid, state.p.values + rho * psi.values / dt)
    ss = strain_state(v_new.interior_vector(), tau, cfg, uw_guess=uw)
    info["_wall_velocity"] = [w.uw for w in ss.walls]
    return SimState(t_new, v_new, p_new, state.p_f, info)


def _diffusion_factor(grid, dt, K):
    key = (grid, dt, K)
    lu = _DIFFUSION_CACHE.get(key)
    if lu is None:
        L = mac_operators(grid).laplacian_matrix
        M = sp.identity(grid.n_cells, format="csc") / dt - K * L
        lu = spla.splu(M.tocsc(), permc_spec="MMD_AT_PLUS_A")
        _DIFFUSION_CACHE[key] = lu
    return lu


_DIFFUSION_CACHE = {}


def pore_pressure_source(state: SimState, cfg: SimConfig, t):
    """``-K rho_f div b + v.grad p_s`` (plus ``dp_s/dt`` when enabled), at cells."""
    grid = cfg.grid
    b = closures.body_force(cfg.body_force_spec, grid, t)
    b0 = VectorField.from_interior(grid, b.interior_vector())
    src = -cfg.permeability * cfg.rho_f * divergence(b0).values
    p_s = closures.lithostatic(cfg.lithostatic_spec, grid, t)
    src = src + advect_scalar(p_s, state.v, cfg.advection_scheme).values
    if cfg.include_ps_rate:
        src = src + closures.lithostatic_rate(cfg.lithostatic_spec)
    return src


def pore_pressure_step(state: SimState, cfg: SimConfig) -> SimState:
    """Advance ``p_f`` by one step using the velocity already in ``state``.

    ``state.t`` is taken as the new time level.
    """
    if cfg.freeze_pore_pressure:
        return state
    grid = cfg.grid
    pf = state.p_f
    adv = advect_scalar(pf, state.v, cfg.advection_scheme).values
    rhs = pf.values / cfg.dt - adv + pore_pressure_source(state, cfg, state.t)
    lu = _diffusion_factor(grid, cfg.dt, cfg.permeability)
    new = lu.solve(rhs.ravel())
    if not np.all(np.isfinite(new)):
        raise PoissonNoConvergence(float("nan"))
    return replace(state, p_f=ScalarField(grid, new.reshape(grid.shape)))


def fluid_velocity(state: SimState, cfg: SimConfig) -> VectorField:
    """Diagnostic fluid velocity ``v - (phi/alpha)(grad p_f - rho_f b)`` on faces.

    The Darcy flux is taken as zero on boundary faces (impermeable walls).
    """
    grid = cfg.grid
    ops = mac_operators(grid)
    phi = closures.porosity(cfg.porosity_spec)(state.p.values - state.p_f.values)
    b = closures.body_force(cfg.body_force_spec, grid, state.t).interior_vector()
    grad_pf = ops.gradient_matrix @ state.p_f.values.ravel()
    darcy = ops.cell_to_face_average(phi.ravel()) * (grad_pf - cfg.rho_f * b) / cfg.alpha_drag
    return VectorField.from_interior(grid, state.v.interior_vector() - darcy)


def step(state: SimState, cfg: SimConfig, workspace: StepWorkspace | None = None) -> SimState:
    new = momentum_step(state, cfg, workspace)
    return pore_pressure_step(new, cfg)


def simulate(cfg: SimConfig, v0: VectorField | None = None, pf0: ScalarField | None = None,
             observers=()) -> SimState:
    """Run to ``t_end``. Observers are called as ``obs(step_index, prev, new, cfg)``.

    ``v0`` is projected once before stepping.
    """
    grid = cfg.grid
    v0 = v0 if v0 is not None else VectorField.zeros(grid)
    if v0.max_boundary_normal() != 0.0:
        raise ValueError("initial velocity must satisfy v.n = 0")
    v0, _ = leray_project(v0, cfg.poisson_tol, cfg.linear_solver)
    state = SimState.initial(grid, v0, pf0.copy() if pf0 is not None else None)
    workspace = StepWorkspace()
    for k in range(cfg.n_steps):
        try:
            new = step(state, cfg, workspace)
        except SolverError as err:
            err.step = k
            raise
        new = replace(new, t=(k + 1) * cfg.dt)
        for obs in observers:
            obs(k, state, new, cfg)
        state = new
    return state
