"""Independent reference computations for the tests.

Each oracle is written from the closed-form definitions with plain Python
loops or sympy, sharing no code with the package.
"""

import math

import sympy as sp


def frob(M):
    return math.sqrt(sum(x * x for row in M for x in row))


def plastic_reg(D, tau, n):
    s = tau / (frob(D) + 1.0 / n)
    return [[s * x for x in row] for row in D]


def bulk_residual(Z, D, tau):
    nz, nd = frob(Z), frob(D)
    gap = [[nd * z - tau * d for z, d in zip(rz, rd)] for rz, rd in zip(Z, D)]
    return max(nz - tau, 0.0) + frob(gap)


def activated(D, nu, delta, q):
    r = frob(D)
    if r == 0.0:
        return [[0.0] * len(D) for _ in D]
    s = 2 * nu * r ** (q - 2) * max(r - delta, 0.0) / r
    return [[s * x for x in row] for row in D]


def slip_reg(v, s_star, beta, gamma, n):
    r = math.sqrt(sum(x * x for x in v))
    coeff = s_star / (r + 1.0 / n)
    if r > 0:
        coeff += gamma * max(r - beta, 0.0) / r
    return [coeff * x for x in v]


def navier_slip_mms(gamma=1.0, nu=0.5):
    """Symbolic velocity and forcing of the manufactured Navier-slip flow."""
    x, y = sp.symbols("x y")
    c = 1 + sp.Rational(1) * gamma / (2 * nu)
    f = lambda s: s * (1 - s) * (1 + c * s * (1 - s))  # noqa: E731
    psi = f(x) * f(y)
    u, v = sp.diff(psi, y), -sp.diff(psi, x)
    bx = u * sp.diff(u, x) + v * sp.diff(u, y) - nu * (sp.diff(u, x, 2) + sp.diff(u, y, 2))
    by = u * sp.diff(v, x) + v * sp.diff(v, y) - nu * (sp.diff(v, x, 2) + sp.diff(v, y, 2))
    shear = nu * (sp.diff(u, y) + sp.diff(v, x))
    return {k: sp.lambdify((x, y), e, "numpy") for k, e in
            dict(u=u, v=v, bx=bx, by=by, shear=shear).items()}


def heat_mode_factor(nx, lx, dt, steps):
    """Backward-Euler amplitude factor of the first discrete cosine mode."""
    h = lx / nx
    lam = (2.0 / h * math.sin(math.pi * h / (2 * lx))) ** 2
    return (1.0 + dt * lam) ** (-steps)
