"""Polynomial matrices in the differential operator ``p``.

A :class:`PolyMatrix` stores ``M(p) = M_0 + M_1 p + ... + M_d p^d`` as a
coefficient array of shape ``(d + 1, rows, cols)``, lowest power first.
Scalar polynomials such as a filter denominator are 1x1 instances.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError

__all__ = ["PolyMatrix", "eval_poly_matrix", "scalar_poly"]


@dataclass(frozen=True, eq=False)
class PolyMatrix:
    """Real polynomial matrix with coefficients ordered by ascending power.

    Parameters
    ----------
    coeffs : array_like
        Array of shape ``(d + 1, rows, cols)``. A 2-D array is taken as a
        constant (degree 0) matrix.
    """

    coeffs: np.ndarray

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float)
        if c.ndim == 2:
            c = c[None]
        if c.ndim != 3 or c.shape[0] < 1:
            raise DimensionError(f"coefficients must have shape (d+1, rows, cols), got {c.shape}")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def from_list(cls, mats) -> "PolyMatrix":
        """Build from a list ``[M_0, M_1, ...]`` of equally shaped matrices."""
        mats = [np.atleast_2d(np.asarray(m, dtype=float)) for m in mats]
        shapes = {m.shape for m in mats}
        if len(shapes) != 1:
            raise DimensionError(f"coefficient matrices differ in shape: {sorted(shapes)}")
        return cls(np.stack(mats))

    @classmethod
    def zeros(cls, rows: int, cols: int, degree: int = 0) -> "PolyMatrix":
        return cls(np.zeros((degree + 1, rows, cols)))

    @property
    def degree(self) -> int:
        return self.coeffs.shape[0] - 1

    @property
    def shape(self) -> tuple[int, int]:
        return self.coeffs.shape[1], self.coeffs.shape[2]

    @property
    def rows(self) -> int:
        return self.coeffs.shape[1]

    @property
    def cols(self) -> int:
        return self.coeffs.shape[2]

    def __call__(self, s):
        return eval_poly_matrix(self, s)

    def __getitem__(self, idx) -> "PolyMatrix":
        rows, cols = idx
        c = self.coeffs[:, rows, cols]
        if c.ndim == 1:
            c = c[:, None, None]
        elif c.ndim == 2:
            # one of the indices was an integer; restore the dropped axis
            if isinstance(rows, (int, np.integer)):
                c = c[:, None, :]
            else:
                c = c[:, :, None]
        return PolyMatrix(c)

    def trimmed(self, tol: float = 0.0) -> "PolyMatrix":
        """Drop leading coefficient matrices whose entries are all within ``tol`` of zero."""
        d = self.degree
        while d > 0 and np.all(np.abs(self.coeffs[d]) <= tol):
            d -= 1
        return PolyMatrix(self.coeffs[: d + 1])

    def padded(self, degree: int) -> "PolyMatrix":
        if degree < self.degree:
            raise ValueError("cannot pad to a lower degree")
        extra = np.zeros((degree - self.degree,) + self.shape)
        return PolyMatrix(np.concatenate([self.coeffs, extra]))

    def hstack(self, other: "PolyMatrix") -> "PolyMatrix":
        if self.rows != other.rows:
            raise DimensionError(f"row mismatch {self.rows} != {other.rows}")
        d = max(self.degree, other.degree)
        return PolyMatrix(np.concatenate([self.padded(d).coeffs, other.padded(d).coeffs], axis=2))

    def __matmul__(self, other: "PolyMatrix") -> "PolyMatrix":
        if self.cols != other.rows:
            raise DimensionError(f"cannot multiply {self.shape} by {other.shape}")
        out = np.zeros((self.degree + other.degree + 1, self.rows, other.cols))
        for i, a in enumerate(self.coeffs):
            for j, b in enumerate(other.coeffs):
                out[i + j] += a @ b
        return PolyMatrix(out)

    def __neg__(self) -> "PolyMatrix":
        return PolyMatrix(-self.coeffs)

    def to_list(self) -> list:
        return self.coeffs.tolist()

    def __repr__(self):
        return f"PolyMatrix(shape={self.shape}, degree={self.degree})"


def eval_poly_matrix(M: PolyMatrix, s) -> np.ndarray:
    """Evaluate ``sum_i M_i s^i`` at a scalar ``s`` (Horner scheme)."""
    out = np.zeros(M.shape, dtype=complex)
    for c in M.coeffs[::-1]:
        out = out * s + c
    return out


def scalar_poly(coeffs_ascending) -> PolyMatrix:
    """1x1 polynomial from ascending coefficients ``[c_0, c_1, ...]``."""
    c = np.asarray(coeffs_ascending, dtype=float).reshape(-1, 1, 1)
    return PolyMatrix(c)
