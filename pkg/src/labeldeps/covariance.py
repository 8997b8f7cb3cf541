"""Observed covariance estimation and matrix utilities.

Everything here operates on the m x m covariance of the observed sources:
estimating it from votes, measuring its effective rank, shifting it to
diagonal dominance, and inverting it with an optional ridge.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NotPositiveDefiniteError, SingularMatrixError, ValidationError
from .mrf import LabelMatrix

#: Added to the diagonal-dominance shift so dominance is strict, not tied.
SDD_PAD = 1e-9

#: Eigenvalues above this (negative) floor count as zero rather than an error.
PSD_TOL = -1e-10


@dataclass(frozen=True)
class CovarianceMatrix:
    """Symmetric m x m covariance with validation at construction."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ValidationError(f"covariance must be square, got shape {v.shape}")
        if not np.isfinite(v).all():
            raise ValidationError("covariance entries must be finite")
        if v.size and np.abs(v - v.T).max() > 1e-12:
            raise ValidationError("covariance must be symmetric within 1e-12")
        object.__setattr__(self, "values", v)

    @property
    def m(self) -> int:
        return self.values.shape[0]


def _matrix(a) -> np.ndarray:
    if isinstance(a, CovarianceMatrix):
        return a.values
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ValidationError(f"expected a square matrix, got shape {arr.shape}")
    return arr


def empirical_covariance(labels) -> tuple[CovarianceMatrix, np.ndarray]:
    """Sample covariance of the source votes, plus the per-source mean vector.

    Computes ``(1/n) V V^T - v v^T`` where ``V`` is the m x n vote matrix and
    ``v`` its row means.  Requires n >= 2 and spin entries.  Tiny negative
    eigenvalues (inside the PSD tolerance) are clipped to zero; anything more
    negative raises, since the formula is PSD in exact arithmetic.
    """
    if not isinstance(labels, LabelMatrix):
        labels = LabelMatrix(values=np.asarray(labels))
    if labels.n < 2:
        raise ValidationError(f"need at least 2 samples to estimate a covariance, got {labels.n}")
    v = labels.values.astype(np.float64)
    mean = v.mean(axis=1)
    cov = (v @ v.T) / labels.n - np.outer(mean, mean)
    cov = (cov + cov.T) / 2.0
    w, q = np.linalg.eigh(cov)
    if w.min() < PSD_TOL:
        raise NotPositiveDefiniteError(
            f"sample covariance has eigenvalue {w.min():.3e} below the PSD tolerance"
        )
    if w.min() < 0:
        cov = (q * np.clip(w, 0.0, None)) @ q.T
        cov = (cov + cov.T) / 2.0
    return CovarianceMatrix(values=cov), mean


def effective_rank(a) -> float:
    """trace(A) / ||A||, the spectral-norm-normalized trace of a PSD matrix."""
    mat = _matrix(a)
    w = np.linalg.eigvalsh(mat)
    if w.min() < PSD_TOL:
        raise ValidationError(f"effective rank needs a PSD matrix; eigenvalue {w.min():.3e} found")
    top = w.max()
    if top <= 0.0:
        raise ValidationError("effective rank is undefined for the zero matrix")
    return float(np.trace(mat) / top)


def sdd_shift(a, pad: float = SDD_PAD) -> tuple[CovarianceMatrix, float]:
    """Add the smallest diagonal shift making the matrix strictly diagonally dominant.

    Returns the shifted matrix together with the shift ``nu``; off-diagonal
    entries are untouched.  The shift equals the worst row's dominance deficit
    (floored at zero) plus ``pad``.
    """
    mat = _matrix(a)
    off = np.abs(mat).sum(axis=1) - np.abs(np.diag(mat))
    deficit = off - np.diag(mat)
    nu = float(max(0.0, deficit.max() if deficit.size else 0.0) + pad)
    return CovarianceMatrix(values=mat + nu * np.eye(mat.shape[0])), nu


def invert_psd(a, ridge: float = 0.0) -> CovarianceMatrix:
    """Inverse of ``A + ridge*I`` via symmetric eigendecomposition."""
    if ridge < 0:
        raise ValidationError(f"ridge must be >= 0, got {ridge}")
    mat = _matrix(a)
    mat = mat + ridge * np.eye(mat.shape[0])
    w, q = np.linalg.eigh(mat)
    if w.min() <= 1e-10:
        raise SingularMatrixError(
            f"matrix is singular to working precision (smallest eigenvalue {w.min():.3e})"
        )
    inv = (q / w) @ q.T
    return CovarianceMatrix(values=(inv + inv.T) / 2.0)


def spectral_norm(a) -> float:
    """Largest absolute eigenvalue of a symmetric matrix."""
    w = np.linalg.eigvalsh(_matrix(a))
    return float(np.abs(w).max()) if w.size else 0.0
