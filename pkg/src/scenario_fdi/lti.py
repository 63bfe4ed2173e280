"""Linear time-invariant helpers shared by the signature engine and the filter runtime.

Scalar polynomials are passed as ascending coefficient vectors ``[a_0, ..., a_l]``.
Simulation uses exact discretization with a first-order hold on the input, so
responses are exact for the piecewise-linear interpolant of sampled inputs.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import expm

from .errors import UnstableDenominator

__all__ = [
    "poly_roots",
    "check_stable",
    "companion_realization",
    "foh_discretize",
    "simulate_states",
    "sinusoid_zero_state",
    "poly_from_roots",
]


def poly_roots(a) -> np.ndarray:
    a = np.trim_zeros(np.asarray(a, dtype=float), "b")
    if a.size <= 1:
        return np.zeros(0, dtype=complex)
    return np.roots(a[::-1])


def poly_from_roots(roots, lead: float = 1.0) -> np.ndarray:
    """Ascending real coefficients of ``lead * prod (p - r)``."""
    roots = np.asarray(roots)
    if roots.size == 0:
        return np.array([float(lead)])
    c = np.real_if_close(np.poly(roots), tol=1e6)
    return lead * np.asarray(c, dtype=float)[::-1]


def check_stable(a, margin: float = 1e-9) -> np.ndarray:
    """Raise :class:`UnstableDenominator` unless every root has real part below ``-margin``."""
    a = np.trim_zeros(np.asarray(a, dtype=float), "b")
    if a.size == 0:
        raise UnstableDenominator("denominator is identically zero")
    r = poly_roots(a)
    if r.size and np.max(r.real) >= -margin:
        raise UnstableDenominator(f"denominator root with real part {np.max(r.real):.3e} >= -{margin:g}")
    return r


def companion_realization(a):
    """Controllable canonical realization of ``1/a(p)``.

    State ``x_i`` holds the ``i``-th derivative of the output ``w = a^{-1}(p)u``
    (``i = 0 .. l-1``), so ``p^i / a(p)`` is read off state ``i`` directly and
    ``p^l / a(p) = (u - sum_i a_i x_i) / a_l``.

    Returns ``(A, b, a_norm)`` with ``a_norm`` the coefficients scaled to a monic
    polynomial (``a_norm[-1] == 1``) and ``b`` already divided by the leading coefficient.
    """
    a = np.trim_zeros(np.asarray(a, dtype=float), "b")
    lead = a[-1]
    ell = a.size - 1
    A = np.zeros((ell, ell))
    if ell:
        A[:-1, 1:] = np.eye(ell - 1)
        A[-1, :] = -a[:-1] / lead
    b = np.zeros(ell)
    if ell:
        b[-1] = 1.0 / lead
    return A, b, a / lead


def foh_discretize(A, B, dt):
    """Exact discretization with first-order hold.

    Returns ``(Phi, G0, G1)`` with ``x[k+1] = Phi x[k] + G0 u[k] + G1 u[k+1]``.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float)
    if B.ndim == 1:
        B = B[:, None]
    n, m = B.shape
    if n == 0:
        return np.zeros((0, 0)), np.zeros((0, m)), np.zeros((0, m))
    M = np.zeros((n + 2 * m, n + 2 * m))
    M[:n, :n] = A * dt
    M[:n, n:n + m] = B * dt
    M[n:n + m, n + m:] = np.eye(m)
    E = expm(M)
    Phi = E[:n, :n]
    Ga = E[:n, n:n + m]
    Gb = E[:n, n + m:]
    return Phi, Ga - Gb, Gb


def simulate_states(Phi, G0, G1, u, x0=None):
    """Propagate ``x[k+1] = Phi x[k] + G0 u[k] + G1 u[k+1]``.

    ``u`` has shape ``(m, N, ...)``; returns states of shape ``(n, N, ...)``.
    """
    u = np.asarray(u, dtype=float)
    n = Phi.shape[0]
    N = u.shape[1]
    batch = u.shape[2:]
    X = np.zeros((n, N) + batch)
    if n == 0:
        return X
    drive = np.tensordot(G0, u[:, :-1], axes=1) + np.tensordot(G1, u[:, 1:], axes=1)
    x = np.zeros((n,) + batch) if x0 is None else np.array(x0, dtype=float)
    X[:, 0] = x
    flat = x.reshape(n, -1)
    dflat = drive.reshape(n, N - 1, -1)
    out = X.reshape(n, N, -1)
    for k in range(N - 1):
        flat = Phi @ flat + dflat[:, k]
        out[:, k + 1] = flat
    return X


def sinusoid_zero_state(A, b, nu, cos_amp, sin_amp, t):
    """States of ``x' = A x + b u`` from rest for ``u = cos_amp cos(nu t) + sin_amp sin(nu t)``.

    Evaluated exactly on the uniform grid ``t`` (``t[0] == 0``). Vectorized over
    inputs: ``nu``, ``cos_amp``, ``sin_amp`` are 1-D arrays of equal length ``q``;
    the result has shape ``(n, len(t), q)``.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    nu = np.asarray(nu, dtype=float)
    U = np.asarray(cos_amp, dtype=float) - 1j * np.asarray(sin_amp, dtype=float)
    n = A.shape[0]
    N = t.size
    q = nu.size
    if n == 0:
        return np.zeros((0, N, q))
    # particular (steady) solution x_p(t) = Re(V e^{j nu t}), V = (j nu I - A)^{-1} b U
    V = np.empty((n, q), dtype=complex)
    eye = np.eye(n)
    for i in range(q):
        V[:, i] = np.linalg.solve(1j * nu[i] * eye - A, b) * U[i]
    phase = np.exp(1j * np.outer(t, nu))  # (N, q)
    X = np.real(V[:, None, :] * phase[None, :, :])
    # homogeneous correction -e^{A t} x_p(0), stepped with the exact transition matrix
    dt = t[1] - t[0] if N > 1 else 0.0
    Phi = expm(A * dt)
    h = -np.real(V)
    X[:, 0, :] += h
    for k in range(1, N):
        h = Phi @ h
        X[:, k, :] += h
    return X
