"""Signature matrices of nonlinearity signals.

Two routes to the matrix ``Q`` with ``||a^{-1}(p) N(p) e||^2 = Nbar Q Nbar^T``:

* the basis route: project ``e`` on a Fourier basis, differentiate with the
  matrix ``D`` and weight with the Gram matrix ``G`` of the filtered basis,
  ``Q_B = Dbar G Dbar^T``;
* the exact route: build ``psi`` whose component ``(i, l)`` is ``p^i / a(p)``
  applied to channel ``l`` of ``e`` and integrate ``psi psi^T``.

The exact route is the reference the basis route is checked against.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np

from .errors import DimensionError, ImproperTransferFunction, NonPsdInput
from .lti import check_stable, companion_realization, foh_discretize, poly_roots, \
    simulate_states, sinusoid_zero_state
from .polymatrix import PolyMatrix
from .signals import SampledSignal, integrate, l2_norm

__all__ = [
    "BasisSpec",
    "ProjectionCoefficients",
    "SignatureMatrix",
    "ErrorBoundReport",
    "make_fourier_basis",
    "project",
    "gram_matrix",
    "dbar_matrix",
    "signature_matrix",
    "signature_matrix_exact",
    "psi_signal",
    "hinf_norm",
    "error_bound",
]


@dataclass(frozen=True, eq=False)
class BasisSpec:
    """Fourier basis ``b_0 .. b_k`` on ``[0, T]`` in the ordering ``{1, sin wt, cos wt, sin 2wt, ...}``.

    ``D`` satisfies ``d/dt B(t) = D B(t)`` with ``B = [b_0, ..., b_k]^T``.
    """

    k: int
    T: float
    D: np.ndarray
    freqs: np.ndarray      # angular frequency of each b_i
    is_sin: np.ndarray     # True for sine terms
    scale: np.ndarray      # amplitude of each b_i
    orthonormal: bool = True
    kind: str = "fourier"

    @property
    def size(self) -> int:
        return self.k + 1

    @property
    def omega(self) -> float:
        return 2.0 * np.pi / self.T

    def evaluate(self, t) -> np.ndarray:
        """Basis values, shape ``(k + 1, len(t))``."""
        t = np.asarray(t, dtype=float)
        arg = np.outer(self.freqs, t)
        vals = np.where(self.is_sin[:, None], np.sin(arg), np.cos(arg))
        return self.scale[:, None] * vals


def make_fourier_basis(k: int, T: float, orthonormal: bool = True) -> BasisSpec:
    """Fourier basis with ``k / 2`` harmonics of ``w = 2 pi / T``.

    ``b_i = cos(i/2 w t)`` for even ``i`` and ``sin((i+1)/2 w t)`` for odd ``i``,
    scaled to be orthonormal on ``[0, T]`` unless ``orthonormal=False``.
    """
    if k < 0 or k % 2:
        raise ValueError(f"k must be a nonnegative even integer, got {k}")
    if T <= 0:
        raise ValueError("horizon must be positive")
    w = 2.0 * np.pi / T
    idx = np.arange(k + 1)
    harmonic = (idx + 1) // 2
    is_sin = idx % 2 == 1
    freqs = harmonic * w
    D = np.zeros((k + 1, k + 1))
    for q in range(1, k // 2 + 1):
        s, c = 2 * q - 1, 2 * q
        D[s, c] = q * w     # d/dt sin = qw cos
        D[c, s] = -q * w    # d/dt cos = -qw sin
    if orthonormal:
        scale = np.full(k + 1, np.sqrt(2.0 / T))
        scale[0] = 1.0 / np.sqrt(T)
    else:
        scale = np.ones(k + 1)
    return BasisSpec(k, float(T), D, freqs, is_sin, scale, orthonormal)


@dataclass(frozen=True, eq=False)
class ProjectionCoefficients:
    """``beta[l, i]`` is the coefficient of ``b_i`` in channel ``l``; ``delta`` the L2 residual."""

    beta: np.ndarray
    delta: float
    e_norm: float


def _check_grid(e: SampledSignal, T: float):
    if abs(e.t[0]) > 1e-12 or not np.isclose(e.T, T, rtol=1e-9, atol=1e-12):
        raise DimensionError(f"signal covers [{e.t[0]}, {e.t[-1]}], basis horizon is {T}")


def project(e: SampledSignal, basis: BasisSpec) -> ProjectionCoefficients:
    """Orthogonal projection of every channel of ``e`` onto the basis span.

    Coefficients are inner products ``<b_i, e_l>`` (Simpson on the sample grid),
    so the basis must be orthonormal.
    """
    if not basis.orthonormal:
        raise ValueError("projection by inner products needs an orthonormal basis")
    _check_grid(e, basis.T)
    B = basis.evaluate(e.t)
    beta = integrate(e.values[:, None, :] * B[None, :, :], e.t)
    resid = e.values - beta @ B
    return ProjectionCoefficients(beta, l2_norm(resid, e.t), l2_norm(e.values, e.t))


def _as_coeffs(a) -> np.ndarray:
    if isinstance(a, PolyMatrix):
        if a.shape != (1, 1):
            raise DimensionError("denominator must be a 1x1 polynomial")
        return a.coeffs[:, 0, 0].copy()
    return np.asarray(a, dtype=float)


def _gram_grid(basis: BasisSpec, n_intervals: int) -> np.ndarray:
    return np.linspace(0.0, basis.T, n_intervals + 1)


def _filtered_basis(basis: BasisSpec, a, t) -> np.ndarray:
    """Zero-state response of ``1/a(p)`` to every basis function, shape ``(k + 1, len(t))``."""
    A, b, _ = companion_realization(a)
    lead = np.trim_zeros(a, "b")[-1]
    if A.shape[0] == 0:
        return basis.evaluate(t) / lead
    cos_amp = np.where(basis.is_sin, 0.0, basis.scale)
    sin_amp = np.where(basis.is_sin, basis.scale, 0.0)
    X = sinusoid_zero_state(A, b, basis.freqs, cos_amp, sin_amp, t)
    return X[0].T


def _gram_on_grid(W, t) -> np.ndarray:
    G = integrate(W[:, None, :] * W[None, :, :], t)
    return 0.5 * (G + G.T)


def gram_matrix(basis: BasisSpec, a, mode: str = "zero_state", rtol: float = 1e-8,
                max_intervals: int = 2 ** 17) -> np.ndarray:
    """Gram matrix ``G_ij = <a^{-1}(p) b_i, a^{-1}(p) b_j>`` on ``[0, T]``.

    Modes
    -----
    ``"zero_state"``
        Each ``b_i`` is passed through ``1/a(p)`` from rest (exact response on a
        grid) and the inner products are taken by Simpson quadrature; the grid
        is doubled until the matrix changes by less than ``rtol`` relative.
    ``"periodic"``
        ``1/a(p)`` acting on the periodic extension (steady state); commutes
        with ``D`` and is diagonal, ``G_ii = |a(j nu_i)|^{-2}``.
    ``"identity"``
        The conservative choice ``G = I``.
    """
    a = _as_coeffs(a)
    check_stable(a)
    if mode == "identity":
        return np.eye(basis.size)
    if mode == "periodic":
        if not basis.orthonormal:
            raise ValueError("periodic mode needs an orthonormal basis")
        vals = np.polynomial.polynomial.polyval(1j * basis.freqs, a)
        return np.diag(1.0 / np.abs(vals) ** 2)
    if mode != "zero_state":
        raise ValueError(f"unknown Gram mode {mode!r}")
    return _gram_zero_state(basis.k, basis.T, basis.orthonormal, tuple(a), rtol, max_intervals)


@lru_cache(maxsize=16)
def _gram_zero_state(k, T, orthonormal, a_tuple, rtol, max_intervals):
    basis = make_fourier_basis(k, T, orthonormal)
    a = np.asarray(a_tuple)
    nu_max = max(basis.freqs.max(), 1.0)
    decay = max(np.max(np.abs(poly_roots(a))), 1.0) if a.size > 1 else 1.0
    n = int(2 ** np.ceil(np.log2(max(64.0, 8 * T * max(nu_max, decay)))))
    prev = _gram_on_grid(_filtered_basis(basis, a, _gram_grid(basis, n)), _gram_grid(basis, n))
    while 2 * n <= max_intervals:
        n *= 2
        t = _gram_grid(basis, n)
        G = _gram_on_grid(_filtered_basis(basis, a, t), t)
        change = np.linalg.norm(G - prev) / max(np.linalg.norm(G), 1e-300)
        prev = G
        if change < rtol:
            break
    prev.setflags(write=False)
    return prev


def dbar_matrix(beta, D, d_N: int) -> np.ndarray:
    """Stack ``[beta; beta D; ...; beta D^dN]`` (power-major blocks of ``n_r`` rows)."""
    beta = np.atleast_2d(np.asarray(beta, dtype=float))
    D = np.asarray(D, dtype=float)
    if beta.shape[1] != D.shape[0]:
        raise DimensionError(f"beta has {beta.shape[1]} columns, D is {D.shape}")
    blocks = [beta]
    for _ in range(d_N):
        blocks.append(blocks[-1] @ D)
    return np.vstack(blocks)


@dataclass(frozen=True, eq=False)
class SignatureMatrix:
    """Symmetric PSD matrix ``Q`` of size ``n_r (d_N + 1)``."""

    Q: np.ndarray
    provenance: str = "basis"
    horizon: float = float("nan")
    scenario_id: Optional[str] = None
    meta: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        Q = np.asarray(self.Q, dtype=float)
        if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
            raise DimensionError(f"signature matrix must be square, got {Q.shape}")
        Q = 0.5 * (Q + Q.T)
        Q.setflags(write=False)
        object.__setattr__(self, "Q", Q)

    @property
    def dim(self) -> int:
        return self.Q.shape[0]

    def check_psd(self, rtol: float = 1e-10) -> None:
        if not self.Q.size:
            return
        w = np.linalg.eigvalsh(self.Q)
        scale = max(abs(w[0]), abs(w[-1]))
        if w[0] < -rtol * scale:
            raise NonPsdInput(f"eigenvalue {w[0]:.3e} below -{rtol:g} * {scale:.3e}")

    def quad(self, Nbar) -> float:
        Nbar = np.asarray(Nbar, dtype=float).ravel()
        return float(Nbar @ self.Q @ Nbar)


@dataclass(frozen=True)
class ErrorBoundReport:
    """Constants of the basis-approximation error bound ``||Q_x - Q_B||_2 < Cbar * delta``."""

    delta: float
    C: float
    Ctilde: float
    Cbar: float
    bound: float
    e_norm: float
    hinf_inv_a: float


def hinf_norm(a, numerator: Optional[PolyMatrix] = None, n_grid: int = 2048) -> float:
    """``sup_w sigma_max(numerator(jw) / a(jw))`` (numerator defaults to 1).

    Dense log-spaced sweep over ``[1e-4, 1e4]`` times the spectral scale of
    ``a``, plus ``w = 0`` and the high-frequency limit, then golden-section
    refinement around every local maximum of the sweep.
    """
    a = _as_coeffs(a)
    roots = check_stable(a)
    a = np.trim_zeros(a, "b")
    if numerator is None:
        num = np.ones((1, 1, 1))
    else:
        num = numerator.trimmed().coeffs
    if num.shape[0] - 1 > a.size - 1:
        raise ImproperTransferFunction("numerator degree exceeds denominator degree")

    def gain(w):
        s = 1j * w
        Nv = np.zeros(num.shape[1:], dtype=complex)
        for c in num[::-1]:
            Nv = Nv * s + c
        av = np.polynomial.polynomial.polyval(s, a)
        return np.linalg.norm(Nv, 2) / abs(av)

    scale = float(np.max(np.abs(roots))) if roots.size else 1.0
    scale = max(scale, 1e-12)
    grid = np.concatenate([[0.0], np.logspace(-4, 4, n_grid) * scale])
    vals = np.array([gain(w) for w in grid])
    best = float(vals.max())
    if num.shape[0] - 1 == a.size - 1:
        best = max(best, float(np.linalg.norm(num[-1], 2) / abs(a[-1])))
    golden = (np.sqrt(5.0) - 1.0) / 2.0
    for i in range(len(grid)):
        left = vals[i - 1] if i > 0 else -np.inf
        right = vals[i + 1] if i + 1 < len(grid) else -np.inf
        if vals[i] < left or vals[i] < right:
            continue
        lo = grid[max(i - 1, 0)]
        hi = grid[min(i + 1, len(grid) - 1)]
        x1 = hi - golden * (hi - lo)
        x2 = lo + golden * (hi - lo)
        f1, f2 = gain(x1), gain(x2)
        for _ in range(80):
            if f1 > f2:
                hi, x2, f2 = x2, x1, f1
                x1 = hi - golden * (hi - lo)
                f1 = gain(x1)
            else:
                lo, x1, f1 = x1, x2, f2
                x2 = lo + golden * (hi - lo)
                f2 = gain(x2)
            if hi - lo <= 1e-12 * max(1.0, hi):
                break
        best = max(best, f1, f2)
    return best


def error_bound(delta: float, e_norm: float, a, n_r: int, d_N: int) -> ErrorBoundReport:
    h = hinf_norm(a)
    C = np.sqrt(n_r * (d_N + 1)) * h
    Cbar = (1.0 + 2.0 * e_norm) * C * h
    return ErrorBoundReport(float(delta), float(C), float(C), float(Cbar), float(Cbar * delta),
                            float(e_norm), float(h))


def signature_matrix(e: SampledSignal, basis: BasisSpec, a, d_N: int, gram_mode: str = "zero_state",
                     G: Optional[np.ndarray] = None, scenario_id=None):
    """Basis-route signature matrix ``Q_B = Dbar G Dbar^T`` and its error-bound report."""
    a = _as_coeffs(a)
    check_stable(a)
    if d_N > np.trim_zeros(a, "b").size - 1:
        raise ImproperTransferFunction("numerator degree exceeds denominator degree")
    proj = project(e, basis)
    if G is None:
        G = gram_matrix(basis, a, gram_mode)
    Dbar = dbar_matrix(proj.beta, basis.D, d_N)
    Q = Dbar @ G @ Dbar.T
    report = error_bound(proj.delta, proj.e_norm, a, e.n_channels, d_N)
    sig = SignatureMatrix(Q, "basis", basis.T, scenario_id, {"gram_mode": gram_mode, "k": basis.k})
    return sig, report


def psi_signal(e: SampledSignal, a, d_N: int) -> np.ndarray:
    """``psi`` of shape ``(n_r (d_N + 1), N)``; row ``i * n_r + l`` is ``p^i / a(p)`` applied to ``e_l``.

    All filters start at rest; derivative states of one shared ``1/a(p)``
    realization supply every power of ``p``.
    """
    a = np.trim_zeros(_as_coeffs(a), "b")
    check_stable(a)
    ell = a.size - 1
    if d_N > ell:
        raise ImproperTransferFunction(f"d_N={d_N} exceeds denominator degree {ell}")
    n_r = e.n_channels
    A, b, a_monic = companion_realization(a)
    Phi, G0, G1 = foh_discretize(A, b, e.dt)
    X = simulate_states(Phi, G0, G1, e.values[None, :, :].transpose(0, 2, 1))  # (ell, N, n_r)
    rows = []
    for i in range(d_N + 1):
        if i < ell:
            rows.append(X[i].T)
        else:
            top = e.values / a[-1] - np.tensordot(a_monic[:-1], X, axes=1).T
            rows.append(top)
    return np.vstack(rows)


def signature_matrix_exact(e: SampledSignal, a, d_N: int, scenario_id=None) -> SignatureMatrix:
    """Reference signature matrix ``Q_x = int psi psi^T dt`` (Simpson on the sample grid)."""
    psi = psi_signal(e, a, d_N)
    t = e.t - e.t[0]
    Q = _weighted_gram(psi, t)
    return SignatureMatrix(Q, "exact", e.T, scenario_id)


def _simpson_weights(t) -> np.ndarray:
    return integrate(np.eye(t.size), t)


def _weighted_gram(psi, t) -> np.ndarray:
    w = _simpson_weights_cached(t.size, float(t[-1] - t[0]))
    return (psi * w) @ psi.T


@lru_cache(maxsize=8)
def _simpson_weights_cached(n: int, T: float) -> np.ndarray:
    # weights of scipy's composite Simpson rule, recovered by integrating unit vectors in chunks
    t = np.linspace(0.0, T, n)
    w = np.empty(n)
    chunk = 512
    for s in range(0, n, chunk):
        stop = min(s + chunk, n)
        E = np.zeros((stop - s, n))
        E[np.arange(stop - s), np.arange(s, stop)] = 1.0
        w[s:stop] = integrate(E, t)
    w.setflags(write=False)
    return w
