"""Verification instruments.

* ``linf_truncate`` / ``truncation_level_select``: the radial L-infinity
  truncation and the layer choice used to build admissible test functions.
* ``lemma_harness``: regularised plastic/viscous laws on synthetic families
  converging to a limit, measuring how fast the limit relation is attained.
* ``energy_report`` / ``EnergyMonitor``: discrete energy balance per step.
* ``mms_error`` / ``observed_order``: manufactured-solution error metrics.
* ``monotonicity_certificate``: sampled monotonicity of the stress maps.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import closures
from .fields import ScalarField, VectorField, divergence, mac_operators
from .rheology import (bulk_implicit_residual, plastic_stress_reg, slip_magnitude, tensor_norm,
                       viscous_stress_activated, yield_stress)
from .solver import SimConfig, SimState, cell_yield_stress, pore_pressure_source, strain_state


class DegenerateField(ValueError):
    """No cell reaches the lowest truncation layer; callers fall back to ``lambda = N``."""


# ---------------------------------------------------------------------------
# L-infinity truncation
# ---------------------------------------------------------------------------

def _face_pair_max(c, axis):
    n = c.shape[axis]
    lo = np.abs(np.take(c, range(n - 1), axis=axis))
    hi = np.abs(np.take(c, range(1, n), axis=axis))
    return np.maximum(lo, hi)


def cell_magnitude(w: VectorField):
    """Cell envelope ``|w| = sqrt(sum_a max(|w_a^-|, |w_a^+|)^2)`` over the two faces per axis.

    Bounding each component by its larger face value makes the truncated
    field provably satisfy ``|T(w)| <= lambda`` in the same measure.
    """
    return np.sqrt(sum(_face_pair_max(c, a) ** 2 for a, c in enumerate(w.components)))


def _face_factors(scale, grid, axis):
    """Face factor = min of the adjacent cell factors (single cell on the boundary)."""
    pad = [(0, 0)] * grid.dim
    pad[axis] = (1, 1)
    ext = np.pad(scale, pad, mode="edge")
    n = ext.shape[axis]
    return np.minimum(np.take(ext, range(n - 1), axis=axis), np.take(ext, range(1, n), axis=axis))


def linf_truncate(w: VectorField, lam: float) -> VectorField:
    """Radial truncation ``w min(1, lambda/|w|)``; the identity where ``|w| <= lambda``."""
    if not lam > 0:
        raise ValueError(f"lambda must be > 0, got {lam}")
    mag = cell_magnitude(w)
    with np.errstate(divide="ignore"):
        scale = np.where(mag > lam, lam / np.where(mag > 0, mag, 1.0), 1.0)
    comps = tuple(c * _face_factors(scale, w.grid, a) for a, c in enumerate(w.components))
    return VectorField(w.grid, comps, w.constrained)


def _collocated(w: VectorField):
    return w.cell_average()


def _grad_norm(arr, h):
    """Frobenius norm of the cell-centred gradient of a ``(d, *shape)`` array."""
    total = np.zeros(arr.shape[1:])
    for comp in arr:
        for k in range(arr.shape[0]):
            total += np.gradient(comp, h[k], axis=k, edge_order=2) ** 2
    return np.sqrt(total)


@dataclass
class TruncationReport:
    lam: float
    pre_norm: float
    post_norm: float
    max_magnitude: float
    identity_violation: float
    div_violation: float
    grad_bound_ratio: float
    flagged_fraction: float


def truncation_report(w: VectorField, lam: float) -> TruncationReport:
    """Check the truncation properties at level ``lam``.

    The gradient bound ``|grad T(w)| <= 2 lambda |grad w|/|w|`` is evaluated
    on collocated cell fields over cells with ``|w| > lambda``.
    """
    grid = w.grid
    t = linf_truncate(w, lam)
    mag = cell_magnitude(w)
    untouched = mag <= lam
    # faces whose adjacent cells are all below lambda must be unchanged
    ident = 0.0
    for a, (c0, c1) in enumerate(zip(w.components, t.components)):
        mask = _face_factors(untouched.astype(float), grid, a) > 0
        if mask.any():
            ident = max(ident, float(np.max(np.abs(c1 - c0)[mask])))
    div_t = divergence(t).values
    div_w = divergence(w).values
    unflagged = np.ones(grid.shape, dtype=bool)
    for a in range(grid.dim):
        f = _face_factors(untouched.astype(float), grid, a) > 0
        n = f.shape[a]
        unflagged &= np.take(f, range(n - 1), axis=a) & np.take(f, range(1, n), axis=a)
    div_violation = float(np.max(np.abs(div_t - div_w)[unflagged])) if unflagged.any() else 0.0

    wc = _collocated(w)
    cmag = np.sqrt(np.sum(wc**2, axis=0))
    tc = wc * np.where(cmag > lam, lam / np.where(cmag > 0, cmag, 1.0), 1.0)
    flagged = cmag > lam
    ratio = 0.0
    if flagged.any():
        gw = _grad_norm(wc, grid.spacing)
        gt = _grad_norm(tc, grid.spacing)
        bound = 2.0 * lam * gw / np.where(cmag > 0, cmag, 1.0)
        sel = flagged & (bound > 1e-14)
        if sel.any():
            ratio = float(np.max(gt[sel] / bound[sel]))
    return TruncationReport(lam=float(lam), pre_norm=w.l2_norm(), post_norm=t.l2_norm(),
                            max_magnitude=float(np.max(cell_magnitude(t))), identity_violation=ident,
                            div_violation=div_violation, grad_bound_ratio=ratio,
                            flagged_fraction=float(np.mean(~untouched)))


def layer_integrals(w: VectorField, diagnostic: ScalarField, N: int):
    """Integrals of ``diagnostic`` over layers ``N^i <= |w| < N^(i+1)``, i = 1..N (last closed)."""
    mag = cell_magnitude(w)
    vol = w.grid.cell_volume
    out = np.zeros(N)
    for i in range(1, N + 1):
        lo, hi = float(N) ** i, float(N) ** (i + 1)
        sel = (mag >= lo) & ((mag < hi) if i < N else (mag <= hi))
        out[i - 1] = float(np.sum(diagnostic.values[sel]) * vol)
    return out


def truncation_level_select(w: VectorField, diagnostic: ScalarField, N: int) -> float:
    """Return ``lambda = N^i*`` with ``i*`` the layer of least diagnostic mass (smallest on ties)."""
    N = int(N)
    if N < 2:
        raise ValueError("N must be >= 2")
    if not np.any(cell_magnitude(w) > N):
        raise DegenerateField(f"|w| <= {N} everywhere")
    ints = layer_integrals(w, diagnostic, N)
    i_star = int(np.argmin(ints)) + 1
    return float(N) ** i_star


def truncation_diagnostic(p1, Z_n, Z_bar, V_n, V_bar, grad_vn, grad_v):
    """Pointwise ``|p1|^2 + |Z_n|^2 + |Z|^2 + |V_n|^2 + |V|^2 + |grad v_n|^2 + |grad v|^2``."""
    return (np.asarray(p1) ** 2 + tensor_norm(Z_n) ** 2 + tensor_norm(Z_bar) ** 2 + tensor_norm(V_n) ** 2
            + tensor_norm(V_bar) ** 2 + tensor_norm(grad_vn) ** 2 + tensor_norm(grad_v) ** 2)


# ---------------------------------------------------------------------------
# Convergence of the regularised laws
# ---------------------------------------------------------------------------

@dataclass
class LemmaFamily:
    """Synthetic sequence ``D_n = D + E/n``, ``p_f,n = p_f + g/n`` on a set of points.

    ``D``, ``E`` have shape ``(m, d, d)``; ``p_f``, ``g``, ``p_s`` shape ``(m,)``.
    """

    name: str
    D: np.ndarray
    p_f: np.ndarray
    p_s: np.ndarray
    E: np.ndarray
    g: np.ndarray
    q_star: float = 1.0
    delta_star: float = 0.0
    weights: np.ndarray | None = None

    def member(self, n):
        return self.D + self.E / n, self.p_f + self.g / n

    @property
    def w(self):
        return np.full(self.D.shape[0], 1.0 / self.D.shape[0]) if self.weights is None else self.weights


@dataclass
class LemmaRunReport:
    n_values: list
    residual_c1: list
    residual_c3: list
    pairing_gap: list

    def __post_init__(self):
        lengths = {len(self.n_values), len(self.residual_c1), len(self.residual_c3), len(self.pairing_gap)}
        if len(lengths) != 1:
            raise ValueError("report lists must have equal length")
        if not all(np.isfinite(v) for v in self.residual_c1 + self.residual_c3 + self.pairing_gap):
            raise ValueError("non-finite entry in lemma report")


def _sym(rng, m, d):
    a = rng.normal(size=(m, d, d))
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def _unit_scale(D, lo, hi, rng):
    r = tensor_norm(D)[:, None, None]
    target = rng.uniform(lo, hi, size=(D.shape[0], 1, 1))
    return D / r * target


def lemma_families(rng=None, m=400, d=3, delta_star=0.25):
    """Three families: frozen, converging, and converging with a plug (``D = 0``) region."""
    rng = np.random.default_rng(0) if rng is None else rng
    D = _unit_scale(_sym(rng, m, d), 1.0, 3.0, rng)
    p_s = rng.uniform(1.0, 2.0, m)
    p_f = rng.uniform(0.0, 0.9, m)
    zeros_t = np.zeros_like(D)
    zeros_s = np.zeros(m)
    frozen = LemmaFamily("frozen", D, p_f, p_s, zeros_t, zeros_s, delta_star=delta_star)
    converging = LemmaFamily("converging", D, p_f, p_s, _sym(rng, m, d), rng.normal(size=m) * 0.1,
                             delta_star=delta_star)
    plug_D = D.copy()
    plug_D[: m // 2] = 0.0
    plugged = LemmaFamily("plug", plug_D, p_f, p_s, _sym(rng, m, d), rng.normal(size=m) * 0.1,
                          delta_star=delta_star)
    return [frozen, converging, plugged]


def lemma_harness(family: LemmaFamily, n_values) -> LemmaRunReport:
    """Evaluate the limit relations along the family for each ``n``.

    ``residual_c1``: weighted mean of the implicit bulk residual of
    ``(Z_n, D)`` with the limiting yield stress. ``residual_c3``: weighted RMS
    of ``V_n - (1 - delta/|D|)^+ D``. ``pairing_gap``: ``int Z_n:D_n - int tau|D|``.
    """
    w = family.w
    tau_lim = yield_stress(family.p_s, family.p_f, family.q_star)
    V_lim = viscous_stress_activated(family.D, 0.5, family.delta_star, 2.0)
    c1, c3, gap = [], [], []
    for n in n_values:
        D_n, pf_n = family.member(n)
        tau_n = yield_stress(family.p_s, pf_n, family.q_star)
        Z_n = plastic_stress_reg(D_n, tau_n, n)
        V_n = viscous_stress_activated(D_n, 0.5, family.delta_star, 2.0)
        c1.append(float(np.sum(w * bulk_implicit_residual(Z_n, family.D, tau_lim))))
        c3.append(float(np.sqrt(np.sum(w * tensor_norm(V_n - V_lim) ** 2))))
        pair = np.sum(Z_n * D_n, axis=(-2, -1))
        gap.append(float(np.sum(w * (pair - tau_lim * tensor_norm(family.D)))))
    return LemmaRunReport(list(n_values), c1, c3, gap)


def decreasing_within(values, noise=0.1):
    """Monotone non-increase allowing each step to rise by ``noise`` relative."""
    return all(b <= a * (1.0 + noise) + 1e-300 for a, b in zip(values, values[1:]))


# ---------------------------------------------------------------------------
# Energy balance
# ---------------------------------------------------------------------------

def _quadrature(ss, ops, grid, weight=None):
    """Staggered quadrature of ``mu |D|^2`` (``weight`` = None gives ``|D|^2``).

    ``weight`` is ``(cell_values, {pair: edge_values})``. Cells carry the
    diagonal entries, edges the shear entries; wall edges count half.
    """
    vol = grid.cell_volume
    wc = 1.0 if weight is None else weight[0]
    total = float(np.sum(wc * sum(d * d for d in ss.cell_diag)) * vol)
    for p in ops.pairs:
        we = 1.0 if weight is None else weight[1][p]
        sq = 2.0 * ss.edge_shear[p] ** 2 * we
        interior = ops.edge_mask(p, "interior")
        wall = ops.edge_mask(p, "wall")
        total += float((np.sum(sq[interior]) + 0.5 * np.sum(sq[wall])) * vol)
    return total


def dissipation_terms(state: SimState, cfg: SimConfig, tau_cell=None):
    """Return ``(|Dv|^2, plastic, viscous, slip)`` integrals and the strain state."""
    grid = cfg.grid
    ops = mac_operators(grid)
    if tau_cell is None:
        tau_cell = cell_yield_stress(state.p_f, cfg, state.t)
    ss = strain_state(state.v.interior_vector(), tau_cell, cfg, uw_guess=state.info.get("_wall_velocity"))
    d2 = _quadrature(ss, ops, grid)
    plastic = _quadrature(ss, ops, grid, (ss.mu_cell[0], {p: ss.mu_edge[p][0] for p in ops.pairs}))
    viscous = _quadrature(ss, ops, grid, (ss.mu_cell[1], {p: ss.mu_edge[p][1] for p in ops.pairs}))
    slip = 0.0
    for b, w in zip(ops.wall_blocks, ss.walls):
        s = slip_magnitude(np.abs(w.uw), cfg.slip, cfg.rheology.reg_n)
        slip += float(np.sum(s * np.abs(w.uw)) * grid.cell_volume / b.h)
    return d2, plastic, viscous, slip, ss


def energy_report(state_prev: SimState, state_next: SimState, cfg: SimConfig) -> dict:
    """Terms of the discrete energy inequality and the pore-pressure balance for one step.

    ``slack = max(0, lhs - rhs)`` where ``lhs`` is the kinetic rate plus the
    Newtonian, plastic and slip dissipation and ``rhs`` the forcing work plus
    the activation allowance. ``margin = rhs - lhs``.
    """
    grid = cfg.grid
    ops = mac_operators(grid)
    vol = grid.cell_volume
    dt = cfg.dt
    rho = cfg.rho_s
    rheo = cfg.rheology
    ke_prev = 0.5 * rho * state_prev.v.l2_norm() ** 2
    ke_next = 0.5 * rho * state_next.v.l2_norm() ** 2
    tau = cell_yield_stress(state_prev.p_f, cfg, state_prev.t)
    d2, plastic, viscous, slip, _ = dissipation_terms(state_next, cfg, tau)
    if rheo.q_exponent == 2.0:
        newtonian = rheo.nu_star * d2
        allowance = 3.0 * rheo.nu_star * rheo.delta_star**2 * grid.volume
    else:
        newtonian = viscous
        allowance = 0.0
    b = closures.body_force(cfg.body_force_spec, grid, state_next.t)
    x_next = state_next.v.interior_vector()
    forcing = float(rho * np.dot(b.interior_vector(), x_next) * vol)
    kinetic_rate = (ke_next - ke_prev) / dt
    dissipation = newtonian + plastic + slip
    lhs = kinetic_rate + dissipation
    rhs = forcing + allowance
    div_max = float(np.max(np.abs(divergence(state_next.v).values)))

    pf0, pf1 = state_prev.p_f.values, state_next.p_f.values
    pf_rate = 0.5 * (np.sum(pf1**2) - np.sum(pf0**2)) * vol / dt
    grad = ops.gradient_matrix @ pf1.ravel()
    pf_diss = cfg.permeability * float(np.sum(grad**2) * vol)
    src = pore_pressure_source(state_next, cfg, state_next.t)
    pf_forcing = float(np.sum(src * pf1) * vol)
    return {
        "t": float(state_next.t),
        "kinetic_energy": float(ke_next),
        "kinetic_rate": float(kinetic_rate),
        "strain_norm_sq": float(d2),
        "newtonian_dissipation": float(newtonian),
        "plastic_dissipation": float(plastic),
        "viscous_dissipation": float(viscous),
        "slip_dissipation": float(slip),
        "forcing_work": forcing,
        "allowance": float(allowance),
        "dissipation": float(dissipation),
        "slack": float(max(0.0, lhs - rhs)),
        "margin": float(rhs - lhs),
        "v_max": float(state_next.v.max_abs()),
        "div_max": div_max,
        "boundary_normal_max": float(state_next.v.max_boundary_normal()),
        "pf_l2": float(state_next.p_f.l2_norm()),
        "pf_rate": float(pf_rate),
        "pf_dissipation": pf_diss,
        "pf_forcing": pf_forcing,
        "pf_balance": float(pf_rate + pf_diss - pf_forcing),
        "picard_iterations": int(state_next.info.get("picard_iterations", 0)),
    }


@dataclass
class EnergyMonitor:
    """Observer collecting one energy report per step plus the Gronwall bound.

    Tracks ``Y = rho |v|^2 + int 2 D`` against ``exp(t) (Y_0 + int (rho |b|^2 + 2 A))``
    where ``D`` is the dissipation and ``A`` the activation allowance.
    """

    rows: list = field(default_factory=list)
    _dissipated: float = 0.0
    _source: float = 0.0
    _y0: float | None = None

    def __call__(self, k, prev, new, cfg):
        row = energy_report(prev, new, cfg)
        if self._y0 is None:
            self._y0 = cfg.rho_s * prev.v.l2_norm() ** 2
        b = closures.body_force(cfg.body_force_spec, cfg.grid, new.t)
        b_int = VectorField.from_interior(cfg.grid, b.interior_vector())
        self._dissipated += 2.0 * row["dissipation"] * cfg.dt
        self._source += (cfg.rho_s * b_int.l2_norm() ** 2 + 2.0 * row["allowance"]) * cfg.dt
        row["gronwall_lhs"] = cfg.rho_s * new.v.l2_norm() ** 2 + self._dissipated
        row["gronwall_bound"] = float(np.exp(new.t) * (self._y0 + self._source))
        row["cfl"] = float(new.info.get("cfl", 0.0))
        self.rows.append(row)

    def columns(self):
        return list(self.rows[0]) if self.rows else []


# ---------------------------------------------------------------------------
# Manufactured solutions
# ---------------------------------------------------------------------------

def mms_error(state: SimState, exact, norm="L2", field_name="v"):
    """Error of ``state`` against ``exact(t, *coords)``.

    For ``field_name="v"`` the exact callable returns one array per component
    and the comparison runs over interior faces; for ``"p"``/``"p_f"`` it
    returns cell values.
    """
    grid = state.v.grid
    vol = grid.cell_volume
    if field_name == "v":
        ex = VectorField.sample(grid, lambda *X: exact(state.t, *X), constrained=True)
        diff = state.v.interior_vector() - ex.interior_vector()
    elif field_name in ("p", "p_f"):
        values = getattr(state, field_name).values
        diff = (values - np.broadcast_to(exact(state.t, *grid.cell_centers()), grid.shape)).ravel()
    else:
        raise ValueError(f"unknown field {field_name!r}")
    if norm == "L2":
        return float(np.sqrt(np.sum(diff**2) * vol))
    if norm == "Linf":
        return float(np.max(np.abs(diff))) if diff.size else 0.0
    raise ValueError(f"unknown norm {norm!r}")


def observed_order(errors, spacings):
    errors = np.asarray(errors, dtype=float)
    spacings = np.asarray(spacings, dtype=float)
    return list(np.log(errors[:-1] / errors[1:]) / np.log(spacings[:-1] / spacings[1:]))


# ---------------------------------------------------------------------------
# Monotonicity certificates
# ---------------------------------------------------------------------------

def monotonicity_certificate(stress_map, n_pairs=100_000, dim=3, rng=None, scale=3.0):
    """Minimum of ``(S(D) - S(E)):(D - E) / (1 + |D| + |E|)^2`` over random pairs.

    Monotone maps give a value ``>= -1e-12``.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    A = _sym(rng, n_pairs, dim) * scale * rng.uniform(0, 1, (n_pairs, 1, 1))
    B = _sym(rng, n_pairs, dim) * scale * rng.uniform(0, 1, (n_pairs, 1, 1))
    # include near-coincident and near-zero pairs
    k = n_pairs // 4
    B[:k] = A[:k] + 1e-6 * _sym(rng, k, dim)
    A[k:2 * k] *= 1e-8
    inner = np.sum((stress_map(A) - stress_map(B)) * (A - B), axis=(-2, -1))
    norm = (1.0 + tensor_norm(A) + tensor_norm(B)) ** 2
    return float(np.min(inner / norm))
