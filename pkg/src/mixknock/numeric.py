"""Numeric substrate: covariance models, Cholesky, Gaussian sampling, normal scores."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import DimensionMismatch, InputError, NotPositiveDefinite
from .rng import SeededStream

PIVOT_FLOOR = 1e-12
COV_KINDS = ("independent", "equicorrelated", "ar1")


@dataclass(frozen=True)
class CovarianceSpec:
    """Parametric covariance family used by the simulations.

    ``scale`` multiplies the correlation matrix; the simulation design uses
    ``1 / n`` so that columns have roughly unit Euclidean norm.
    """

    p: int
    kind: str = "independent"
    rho: float = 0.0
    scale: float = 1.0

    def __post_init__(self):
        if self.p < 1:
            raise InputError("p must be positive")
        if self.kind not in COV_KINDS:
            raise InputError(f"unknown covariance kind {self.kind!r}; expected one of {COV_KINDS}")
        if self.scale <= 0:
            raise InputError("scale must be positive")
        if self.kind != "independent" and not -1.0 < self.rho < 1.0:
            raise InputError("rho must lie in (-1, 1)")

    def matrix(self) -> np.ndarray:
        p, rho = self.p, self.rho
        if self.kind == "independent":
            corr = np.eye(p)
        elif self.kind == "equicorrelated":
            corr = np.full((p, p), rho)
            np.fill_diagonal(corr, 1.0)
        else:
            idx = np.arange(p)
            corr = rho ** np.abs(idx[:, None] - idx[None, :])
        return self.scale * corr

    def min_eigenvalue(self) -> float:
        """Smallest eigenvalue of the correlation matrix (closed form where known)."""
        if self.kind == "independent" or self.p == 1:
            return 1.0
        if self.kind == "equicorrelated":
            return min(1.0 - self.rho, 1.0 + (self.p - 1) * self.rho)
        return float(np.linalg.eigvalsh(self.matrix() / self.scale)[0])


def cholesky(matrix) -> np.ndarray:
    """Lower Cholesky factor ``L`` with ``L @ L.T == matrix``.

    Raises :class:`NotPositiveDefinite` when a pivot falls below
    ``1e-12 * max(diag(matrix))``.
    """
    a = np.asarray(matrix, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {a.shape}")
    scale = max(np.abs(a).max(), np.finfo(float).tiny)
    if np.abs(a - a.T).max() > 1e-10 * scale:
        raise InputError("matrix is not symmetric")
    a = 0.5 * (a + a.T)
    diag_max = a.diagonal().max()
    if diag_max <= 0:
        raise NotPositiveDefinite("matrix has no positive diagonal entry")
    try:
        chol = np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from None
    pivots = chol.diagonal() ** 2
    if pivots.min() <= PIVOT_FLOOR * diag_max:
        raise NotPositiveDefinite(
            f"pivot {pivots.min():.3g} below floor {PIVOT_FLOOR * diag_max:.3g}"
        )
    return chol


def sample_mvn(stream: SeededStream, mean, chol, n: int) -> np.ndarray:
    """Draw ``n`` rows i.i.d. from N(mean, chol @ chol.T)."""
    mean = np.asarray(mean, dtype=float)
    chol = np.asarray(chol, dtype=float)
    if mean.ndim != 1 or chol.shape != (mean.size, mean.size):
        raise DimensionMismatch(f"mean shape {mean.shape} incompatible with factor {chol.shape}")
    z = stream.generator().standard_normal((n, mean.size))
    return mean + z @ chol.T


def normal_score_transform(column) -> np.ndarray:
    """Map values to Gaussian quantiles ``Phi^-1((rank - 0.5) / n)``.

    Ties receive their average rank, so equal inputs map to equal outputs.
    """
    x = np.asarray(column, dtype=float)
    if x.ndim != 1 or x.size < 2:
        raise InputError("normal score transform needs a vector of length >= 2")
    ranks = stats.rankdata(x, method="average")
    return stats.norm.ppf((ranks - 0.5) / x.size)
