"""Per-cell affine center map fitted by least squares."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DegenerateFit(ValueError):
    def __init__(self, message, cell=None):
        super().__init__(message if cell is None else f"cell {cell}: {message}")
        self.cell = cell


@dataclass(frozen=True)
class AffineMap:
    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        A = np.array(self.A, dtype=float).reshape(2, 2)
        b = np.array(self.b, dtype=float).reshape(2)
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
            raise ValueError("affine map entries must be finite")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @classmethod
    def identity(cls):
        return cls(np.eye(2), np.zeros(2))

    def __call__(self, truth):
        return np.asarray(truth) @ self.A.T + self.b

    def __eq__(self, other):
        return (isinstance(other, AffineMap) and np.array_equal(self.A, other.A)
                and np.array_equal(self.b, other.b))


def fit_affine(truth, perceived, cell=None) -> AffineMap:
    """Least-squares fit of ``perceived ~ A @ truth + b`` via QR of the design [truth | 1].

    ``truth`` and ``perceived`` are (N, 2) arrays.  Raises :class:`DegenerateFit`
    for fewer than three samples or collinear truths.
    """
    truth = np.asarray(truth, dtype=float).reshape(-1, 2)
    perceived = np.asarray(perceived, dtype=float).reshape(-1, 2)
    n = truth.shape[0]
    if n < 3:
        raise DegenerateFit(f"need at least 3 samples, got {n}", cell)
    design = np.hstack([truth, np.ones((n, 1))])
    q, r = np.linalg.qr(design)
    diag = np.abs(np.diag(r))
    if diag.min() <= 1e-10 * diag.max():
        raise DegenerateFit("design matrix is rank deficient (collinear ground truths)", cell)
    coef = np.linalg.solve(r, q.T @ perceived)  # rows: [A^T ; b]
    return AffineMap(coef[:2].T, coef[2])


def residual_orthogonality(truth, perceived, fit: AffineMap) -> float:
    """max |design^T (perceived - fitted)|, zero at the exact least-squares solution."""
    truth = np.asarray(truth, dtype=float)
    design = np.hstack([truth, np.ones((truth.shape[0], 1))])
    return float(np.abs(design.T @ (np.asarray(perceived) - fit(truth))).max())
