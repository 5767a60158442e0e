"""Constitutive maps for a pore-pressure-activated Bingham-type solid matrix.

All functions are pure and vectorised. Tensors are arrays of shape
``(..., d, d)`` (d = 2 or 3) and tangent vectors arrays of shape ``(..., k)``.
The tensor norm is Frobenius throughout, so that ``|S:D| <= |S||D|`` pairs
with the dissipation ``S:D``.

Bulk law (regularised with index ``n``)::

    tau   = q_star * (p_s - p_f)^+
    Z_n   = tau * D / (|D| + 1/n)
    V     = 2 nu_star |D|^(q-2) (|D| - delta_star)^+ D/|D|
    S     = Z_n + V

Boundary law::

    s_n(v) = s_star v / (|v| + 1/n) + gamma_star (|v| - beta_star)^+ v/|v|
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Lower clamp on |D| in the |D|^(q-2) prefactor when q < 2 and delta_star = 0.
_Q_CLAMP = 1e-14


@dataclass(frozen=True)
class RheologyParams:
    nu_star: float = 0.5
    delta_star: float = 0.0
    q_star: float = 1.0
    q_exponent: float = 2.0
    reg_n: int = 64

    def __post_init__(self):
        if not self.nu_star > 0:
            raise ValueError(f"nu_star must be > 0, got {self.nu_star}")
        if not self.delta_star >= 0:
            raise ValueError(f"delta_star must be >= 0, got {self.delta_star}")
        if not self.q_star >= 0:
            raise ValueError(f"q_star must be >= 0, got {self.q_star}")
        if not self.q_exponent > 1:
            raise ValueError(f"q_exponent must be > 1, got {self.q_exponent}")
        if int(self.reg_n) != self.reg_n or self.reg_n < 1:
            raise ValueError(f"reg_n must be a positive integer, got {self.reg_n}")
        object.__setattr__(self, "reg_n", int(self.reg_n))


@dataclass(frozen=True)
class SlipParams:
    s_star: float = 0.0
    beta_star: float = 0.0
    gamma_star: float = 1.0

    def __post_init__(self):
        for name in ("s_star", "beta_star", "gamma_star"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")


@dataclass(frozen=True)
class StressSplit:
    """Plastic part ``Z``, activated viscous part ``V`` and their sum ``S``."""

    Z: np.ndarray
    V: np.ndarray
    S: np.ndarray


def tensor_norm(D):
    D = np.asarray(D, dtype=float)
    return np.sqrt(np.sum(D * D, axis=(-2, -1)))


def vector_norm(v):
    v = np.asarray(v, dtype=float)
    return np.sqrt(np.sum(v * v, axis=-1))


def yield_stress(p_s, p_f, q_star):
    """Pressure-activated yield stress ``q_star * max(p_s - p_f, 0)``."""
    return q_star * np.maximum(np.asarray(p_s, dtype=float) - p_f, 0.0)


def plastic_stress_reg(D, tau, reg_n):
    """Regularised plastic stress ``tau D / (|D| + 1/n)``.

    The ``1/n`` shift removes the singularity at ``D = 0``; the result has
    norm strictly below ``tau`` whenever ``tau > 0``.
    """
    D = np.asarray(D, dtype=float)
    tau = np.asarray(tau, dtype=float)
    scale = tau / (tensor_norm(D) + 1.0 / reg_n)
    return scale[..., None, None] * D


def _activated_scalar(r, nu_star, delta_star, q_exponent):
    """Magnitude ``2 nu |D|^(q-2) (|D| - delta)^+`` of the viscous stress."""
    r = np.asarray(r, dtype=float)
    excess = np.maximum(r - delta_star, 0.0)
    if q_exponent == 2.0:
        return 2.0 * nu_star * excess
    base = np.maximum(r, _Q_CLAMP) if q_exponent < 2.0 else r
    with np.errstate(divide="ignore", invalid="ignore"):
        out = 2.0 * nu_star * np.power(base, q_exponent - 2.0) * excess
    return np.where(excess > 0.0, out, 0.0)


def viscous_stress_activated(D, nu_star, delta_star, q_exponent):
    """Activated viscous stress ``2 nu |D|^(q-2) (|D| - delta)^+ D/|D|``, zero at D = 0."""
    D = np.asarray(D, dtype=float)
    r = tensor_norm(D)
    mag = _activated_scalar(r, nu_star, delta_star, q_exponent)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(r > 0.0, mag / np.where(r > 0.0, r, 1.0), 0.0)
    return scale[..., None, None] * D


def bulk_implicit_residual(Z, D, tau):
    """Distance functional of ``(Z, D)`` from the implicit plastic graph.

    Returns ``(|Z| - tau)^+ + | |D| Z - tau D |``, zero exactly on the graph.
    """
    Z = np.asarray(Z, dtype=float)
    D = np.asarray(D, dtype=float)
    tau = np.asarray(tau, dtype=float)
    gap = tensor_norm(D)[..., None, None] * Z - tau[..., None, None] * D
    return np.maximum(tensor_norm(Z) - tau, 0.0) + tensor_norm(gap)


def slip_traction_reg(v_tau, slip: SlipParams, reg_n):
    v_tau = np.asarray(v_tau, dtype=float)
    r = vector_norm(v_tau)
    return slip_secant(r, slip, reg_n)[..., None] * v_tau


def slip_implicit_residual(z, v_tau, s_star):
    z = np.asarray(z, dtype=float)
    v_tau = np.asarray(v_tau, dtype=float)
    gap = vector_norm(v_tau)[..., None] * z - s_star * v_tau
    return np.maximum(vector_norm(z) - s_star, 0.0) + vector_norm(gap)


def slip_magnitude(r, slip: SlipParams, reg_n):
    """Scalar law ``|s_n(v)|`` as a function of ``r = |v|``."""
    r = np.asarray(r, dtype=float)
    return slip.s_star * r / (r + 1.0 / reg_n) + slip.gamma_star * np.maximum(r - slip.beta_star, 0.0)


def slip_secant(r, slip: SlipParams, reg_n):
    """Secant coefficient ``c`` with ``s_n(v) = c(|v|) v``; finite at ``|v| = 0``."""
    r = np.asarray(r, dtype=float)
    plastic = slip.s_star / (r + 1.0 / reg_n)
    with np.errstate(divide="ignore", invalid="ignore"):
        friction = np.where(r > 0.0, np.maximum(1.0 - slip.beta_star / np.where(r > 0, r, 1.0), 0.0), 0.0)
    if slip.beta_star == 0.0:
        friction = np.ones_like(r)
    return plastic + slip.gamma_star * friction


def secant_viscosity(r, tau, params: RheologyParams):
    """Split secant viscosities ``(mu_plastic, mu_viscous)`` with ``S = (mu_p + mu_v) D``.

    ``r`` is ``|D|``. Both parts are finite and non-negative; at ``r = 0`` the
    continuous extension is used (``tau n`` for the plastic part).
    """
    r = np.asarray(r, dtype=float)
    mu_p = np.asarray(tau, dtype=float) / (r + 1.0 / params.reg_n)
    q = params.q_exponent
    if params.delta_star == 0.0 and q <= 2.0:
        base = np.maximum(r, _Q_CLAMP) if q < 2.0 else np.ones_like(r)
        mu_v = 2.0 * params.nu_star * (np.power(base, q - 2.0) if q < 2.0 else base)
    else:
        mag = _activated_scalar(r, params.nu_star, params.delta_star, q)
        with np.errstate(divide="ignore", invalid="ignore"):
            mu_v = np.where(r > 0.0, mag / np.where(r > 0.0, r, 1.0), 0.0)
    return mu_p, mu_v


def total_stress(D, p_f, p_s, params: RheologyParams) -> StressSplit:
    tau = yield_stress(p_s, p_f, params.q_star)
    Z = plastic_stress_reg(D, tau, params.reg_n)
    V = viscous_stress_activated(D, params.nu_star, params.delta_star, params.q_exponent)
    return StressSplit(Z=Z, V=V, S=Z + V)
