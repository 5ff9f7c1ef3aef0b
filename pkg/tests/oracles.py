"""Independent reference computations used by the tests.

Nothing here calls into conechain: these are the second route for every
cross-check.
"""
import itertools
import math

import mpmath
import numpy as np
from scipy import integrate


def entrywise_ratio_distance(A, B):
    """Hilbert distance in the cone of nonnegative matrices, by brute force over entry pairs."""
    A = np.asarray(A, dtype=float).ravel()
    B = np.asarray(B, dtype=float).ravel()
    best = 0.0
    for i in range(len(A)):
        for j in range(len(A)):
            if A[i] == 0 or B[j] == 0:
                if (A[i] == 0) != (B[i] == 0):
                    return math.inf
                continue
            best = max(best, math.log(B[i] / A[i]) - math.log(B[j] / A[j]))
    return best


def orthant_distance(x, y):
    r = [math.log(b / a) for a, b in zip(x, y)]
    return max(r) - min(r)


def mp_log_pairing(u, mats, v, dps=50):
    """log (u, T_{n-1} ... T_0 v) in extended precision."""
    with mpmath.workdps(dps):
        f = mpmath.matrix([mpmath.mpf(float(x)) for x in v])
        for T in mats:
            f = mpmath.matrix(np.asarray(T).tolist()) * f
        z = sum(mpmath.mpf(float(a)) * f[i] for i, a in enumerate(u))
        return float(mpmath.log(z))


def enumerate_chain(u, mats, v):
    """Brute-force joint law over all site configurations (site 0 .. n).

    Returns a dict: configuration tuple (x_0, ..., x_n) -> probability.
    """
    d = len(v)
    n = len(mats)
    probs = {}
    for cfg in itertools.product(range(d), repeat=n + 1):
        w = v[cfg[0]] * u[cfg[n]]
        for k, T in enumerate(mats):
            w *= T[cfg[k + 1], cfg[k]]
        probs[cfg] = w
    tot = sum(probs.values())
    return {k: p / tot for k, p in probs.items()}


def series_coefficients(r, kappa, n_max):
    """Taylor coefficients of (1 - r x) / ((1 - kappa) - r x) via sympy."""
    import sympy as sp
    x = sp.symbols("x")
    expr = (1 - sp.Rational(r) * x) / ((1 - sp.Rational(kappa)) - sp.Rational(r) * x)
    ser = sp.series(expr, x, 0, n_max + 1).removeO()
    return [float(ser.coeff(x, k)) for k in range(n_max + 1)]


# ---------------------------------------------------------------------------
# Jellium Gibbs integrals by direct quadrature

def constant_background_energy(x, q, rho0, L):
    """Total energy of point charges in a uniform background on [-L, L]."""
    x = np.asarray(x, dtype=float)
    bb = rho0**2 * (2 * L) ** 3 / 3
    pp = sum(q[i] * q[j] * abs(x[i] - x[j]) for i in range(len(x)) for j in range(len(x)) if i != j)
    pb = sum(q[i] * rho0 * ((x[i] + L) ** 2 + (L - x[i]) ** 2) / 2 for i in range(len(x)))
    return -0.5 * bb - 0.5 * pp + pb


def sinusoidal_background_energy_factory(rho0, amp, L):
    """Energy function for rho(t) = rho0 (1 + amp sin t), built from sympy integrals."""
    import sympy as sp
    X, Y, Z = sp.symbols("X Y Z", real=True)
    rho = rho0 * (1 + amp * sp.sin(Y))
    phi = sp.integrate(rho * (X - Y), (Y, -L, X)) + sp.integrate(rho * (Y - X), (Y, X, L))
    phi_f = sp.lambdify(X, sp.simplify(phi), "math")
    rho_z = rho0 * (1 + amp * sp.sin(Z))
    inner = sp.integrate(rho * (Z - Y), (Y, -L, Z))
    bb = float(2 * sp.integrate(rho_z * inner, (Z, -L, L)))
    total = float(sp.integrate(rho, (Y, -L, L)))

    def energy(x, q):
        pp = sum(q[i] * q[j] * abs(x[i] - x[j]) for i in range(len(x)) for j in range(len(x)) if i != j)
        pb = sum(q[i] * phi_f(x[i]) for i in range(len(x)))
        return -0.5 * bb - 0.5 * pp + pb

    return energy, total


def ordered_gibbs_log_integral(energy, N, L, beta, shift):
    """log of int_{-L<x_1<...<x_N<L} exp(-beta (E(x) - shift)) dx, plus -beta shift."""
    opts = {"epsabs": 1e-13, "epsrel": 1e-11, "limit": 200}
    if N == 2:
        f = lambda x2, x1: math.exp(-beta * (energy([x1, x2]) - shift))
        val = integrate.nquad(f, [lambda x1: (x1, L), (-L, L)], opts=[opts, opts])[0]
    elif N == 3:
        f = lambda x3, x2, x1: math.exp(-beta * (energy([x1, x2, x3]) - shift))
        val = integrate.nquad(f, [lambda x2, x1: (x2, L), lambda x1: (x1, L), (-L, L)],
                              opts=[opts, opts, opts])[0]
    else:
        raise ValueError("N must be 2 or 3")
    return math.log(val) - beta * shift
