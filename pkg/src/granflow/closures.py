"""Named data generators: body force, lithostatic pressure, porosity, initial fields.

Every generator is selected by a ``FieldSpec(kind, params)`` so configs stay
declarative. Unknown kinds or parameters raise ``ValueError``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fields import Grid, ScalarField, VectorField


@dataclass(frozen=True)
class FieldSpec:
    kind: str = "zero"
    params: dict = field(default_factory=dict)

    def get(self, name, default):
        return float(self.params.get(name, default))


def _check_params(spec, allowed):
    extra = set(spec.params) - set(allowed)
    if extra:
        raise ValueError(f"{spec.kind}: unknown parameters {sorted(extra)}")


# ---------------------------------------------------------------------------
# Manufactured Newtonian solution with Navier slip
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NavierSlipMMS:
    """Steady streamfunction ``psi = f(x) f(y)`` on the unit square.

    ``f(s) = g + c g^2`` with ``g = s(1-s)`` and ``c = 1 + gamma/(2 nu)``,
    so that ``2 nu D_xy = gamma u`` holds on every wall and the pressure is
    zero. The matching body force is ``(v.grad)v - nu lap v``.
    """

    gamma: float = 1.0
    nu: float = 0.5

    @property
    def c(self):
        return 1.0 + self.gamma / (2.0 * self.nu)

    def f(self, s, k=0):
        g = s * (1.0 - s)
        g1 = 1.0 - 2.0 * s
        c = self.c
        if k == 0:
            return g + c * g * g
        if k == 1:
            return g1 * (1.0 + 2.0 * c * g)
        if k == 2:
            return -2.0 + 2.0 * c * (g1 * g1 - 2.0 * g)
        if k == 3:
            return 2.0 * c * (-4.0 * g1 - 2.0 * g1)
        raise ValueError(k)

    def psi(self, x, y):
        return self.f(x) * self.f(y)

    def velocity(self, x, y):
        return self.f(x) * self.f(y, 1), -self.f(x, 1) * self.f(y)

    def forcing(self, x, y):
        f = self.f
        u, v = self.velocity(x, y)
        ux, uy = f(x, 1) * f(y, 1), f(x) * f(y, 2)
        vx, vy = -f(x, 2) * f(y), -f(x, 1) * f(y, 1)
        lap_u = f(x, 2) * f(y, 1) + f(x) * f(y, 3)
        lap_v = -f(x, 3) * f(y) - f(x, 1) * f(y, 2)
        return (u * ux + v * uy - self.nu * lap_u, u * vx + v * vy - self.nu * lap_v)


# ---------------------------------------------------------------------------
# Body force b(t, x), sampled on all faces (boundary normals included)
# ---------------------------------------------------------------------------

def body_force(spec: FieldSpec, grid: Grid, t: float) -> VectorField:
    kind = spec.kind
    d = grid.dim
    if kind == "zero":
        _check_params(spec, [])
        return VectorField.zeros(grid, constrained=False)
    if kind == "constant":
        _check_params(spec, ["bx", "by", "bz"])
        vals = [spec.get(k, 0.0) for k in ("bx", "by", "bz")[:d]]
        return VectorField(grid, tuple(np.full(grid.face_shape(a), vals[a]) for a in range(d)), False)
    if kind == "rotational":
        # solid-body rotation about the domain centre: divergence free, not a gradient
        _check_params(spec, ["amplitude"])
        amp = spec.get("amplitude", 1.0)
        cx, cy = grid.lengths[0] / 2, grid.lengths[1] / 2

        def fn(*X):
            comps = [-amp * (X[1] - cy), amp * (X[0] - cx)]
            return comps + [np.zeros_like(X[0])] * (d - 2)
        return VectorField.sample(grid, fn, constrained=False)
    if kind == "gradient":
        # b = A grad(cos(pi x/lx) cos(pi y/ly))
        _check_params(spec, ["amplitude"])
        amp = spec.get("amplitude", 1.0)
        lx, ly = grid.lengths[:2]

        def fn(*X):
            kx, ky = np.pi / lx, np.pi / ly
            bx = -amp * kx * np.sin(kx * X[0]) * np.cos(ky * X[1])
            by = -amp * ky * np.cos(kx * X[0]) * np.sin(ky * X[1])
            return [bx, by] + [np.zeros_like(X[0])] * (d - 2)
        return VectorField.sample(grid, fn, constrained=False)
    if kind == "mms_newtonian":
        _check_params(spec, ["gamma", "nu"])
        if d != 2:
            raise ValueError("mms_newtonian forcing is 2D only")
        mms = NavierSlipMMS(spec.get("gamma", 1.0), spec.get("nu", 0.5))
        return VectorField.sample(grid, lambda x, y: mms.forcing(x, y), constrained=False)
    raise ValueError(f"unknown body force kind {kind!r}")


# ---------------------------------------------------------------------------
# Lithostatic pressure p_s(t, x)
# ---------------------------------------------------------------------------

def lithostatic(spec: FieldSpec, grid: Grid, t: float) -> ScalarField:
    """Returns ``p_s`` at cell centres; ``rate`` adds a uniform linear-in-time loading."""
    kind = spec.kind
    rate = spec.get("rate", 0.0)
    if kind == "constant":
        _check_params(spec, ["value", "rate"])
        base = np.full(grid.shape, spec.get("value", 0.0))
    elif kind == "linear_depth":
        # p_s = top + weight * (ly - y)
        _check_params(spec, ["top", "weight", "rate"])
        y = grid.cell_centers()[1]
        base = spec.get("top", 0.0) + spec.get("weight", 1.0) * (grid.lengths[1] - y)
    else:
        raise ValueError(f"unknown lithostatic kind {kind!r}")
    return ScalarField(grid, base + rate * t)


def lithostatic_rate(spec: FieldSpec) -> float:
    return spec.get("rate", 0.0)


# ---------------------------------------------------------------------------
# Porosity closure phi(p - p_f)
# ---------------------------------------------------------------------------

def porosity(spec: FieldSpec):
    kind = spec.kind
    if kind == "constant":
        _check_params(spec, ["phi0"])
        phi0 = spec.get("phi0", 0.3)
        if not 0.0 <= phi0 <= 1.0:
            raise ValueError("phi0 must lie in [0, 1]")
        return lambda pi: np.full_like(np.asarray(pi, dtype=float), phi0)
    if kind == "exponential":
        _check_params(spec, ["phi_min", "phi_max", "pi_ref"])
        lo, hi, ref = spec.get("phi_min", 0.05), spec.get("phi_max", 0.4), spec.get("pi_ref", 1.0)
        if not (0.0 <= lo <= hi <= 1.0 and ref > 0):
            raise ValueError("need 0 <= phi_min <= phi_max <= 1 and pi_ref > 0")
        return lambda pi: np.clip(lo + (hi - lo) * np.exp(-np.asarray(pi, dtype=float) / ref), lo, hi)
    raise ValueError(f"unknown porosity kind {kind!r}")


# ---------------------------------------------------------------------------
# Initial data
# ---------------------------------------------------------------------------

def initial_velocity(spec: FieldSpec, grid: Grid) -> VectorField:
    kind = spec.kind
    if kind == "zero":
        _check_params(spec, [])
        return VectorField.zeros(grid)
    if kind == "mms_newtonian":
        _check_params(spec, ["gamma", "nu"])
        mms = NavierSlipMMS(spec.get("gamma", 1.0), spec.get("nu", 0.5))
        return VectorField.from_streamfunction(grid, mms.psi)
    if kind == "vortex":
        # psi = A sin^2(pi x/lx) sin^2(pi y/ly): no-flux, discretely solenoidal
        _check_params(spec, ["amplitude"])
        amp = spec.get("amplitude", 1.0)
        lx, ly = grid.lengths[:2]
        return VectorField.from_streamfunction(
            grid, lambda x, y: amp * np.sin(np.pi * x / lx) ** 2 * np.sin(np.pi * y / ly) ** 2)
    raise ValueError(f"unknown initial velocity kind {kind!r}")


def initial_pore_pressure(spec: FieldSpec, grid: Grid) -> ScalarField:
    kind = spec.kind
    if kind in ("zero", "constant"):
        _check_params(spec, ["value"])
        return ScalarField(grid, np.full(grid.shape, spec.get("value", 0.0)))
    if kind == "cosine":
        _check_params(spec, ["amplitude", "mode", "mean"])
        amp, mode, mean = spec.get("amplitude", 1.0), spec.get("mode", 1.0), spec.get("mean", 0.0)
        x = grid.cell_centers()[0]
        return ScalarField(grid, mean + amp * np.cos(mode * np.pi * x / grid.lengths[0]))
    if kind == "disk":
        # value_in inside a ball of given radius around (cx, cy), value_out elsewhere
        _check_params(spec, ["value_in", "value_out", "cx", "cy", "radius"])
        X = grid.cell_centers()
        cx = spec.get("cx", grid.lengths[0] / 2)
        cy = spec.get("cy", grid.lengths[1] / 2)
        r = np.hypot(X[0] - cx, X[1] - cy)
        inside = r < spec.get("radius", 0.25)
        return ScalarField(grid, np.where(inside, spec.get("value_in", 1.0), spec.get("value_out", 0.0)))
    raise ValueError(f"unknown initial pore-pressure kind {kind!r}")
