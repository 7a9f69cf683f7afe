"""Comparator selectors: BH/BY on regression t-tests and permutation lasso."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .data import Categorical, MixedDataMatrix, as_response
from .enet import DesignSpec, fit_path, lambda_grid_for
from .errors import DimensionMismatch, InputError, RankDeficient
from .rng import SeededStream

DEFAULT_PERMUTATIONS = 100


@dataclass(frozen=True)
class PValueSet:
    p_values: np.ndarray
    source: str = "ols-t"

    def __post_init__(self):
        p = np.asarray(self.p_values, dtype=float)
        if p.ndim != 1 or np.any(np.isnan(p)) or np.any((p < 0) | (p > 1)):
            raise InputError("p-values must be a vector in [0, 1] without NaN")
        object.__setattr__(self, "p_values", p)


def regression_pvalues(X: MixedDataMatrix, y) -> PValueSet:
    """Two-sided OLS t-test p-value per variable.

    A categorical variable gets the smallest p-value among its dummy
    columns times its level count, capped at 1.
    """
    y = as_response(y)
    D, groups = X.encode()
    n, d = D.shape
    if y.size != n:
        raise DimensionMismatch(f"response has {y.size} rows, covariates have {n}")
    if n <= d + 1:
        raise RankDeficient(f"need n > d + 1 for OLS, got n={n}, d={d}")
    A = np.column_stack([np.ones(n), D])
    Q, R = np.linalg.qr(A)
    diag = np.abs(np.diag(R))
    if diag.min() <= 1e-10 * diag.max():
        raise RankDeficient("design matrix is rank deficient")
    coef = np.linalg.solve(R, Q.T @ y)
    resid = y - A @ coef
    dof = n - d - 1
    s2 = resid @ resid / dof
    Rinv = np.linalg.inv(R)
    se = np.sqrt(s2 * np.sum(Rinv**2, axis=1))
    with np.errstate(divide="ignore", invalid="ignore"):
        t = coef / se
    t = np.where(se > 0, t, np.where(coef != 0, np.inf, 0.0))
    pv = 2.0 * stats.t.sf(np.abs(t[1:]), dof)
    out = np.ones(X.p)
    for j in range(X.p):
        pj = pv[groups == j]
        if isinstance(X.columns[j], Categorical):
            out[j] = min(1.0, pj.min() * X.columns[j].n_levels)
        else:
            out[j] = pj[0]
    return PValueSet(out)


def _pvals(p) -> np.ndarray:
    return p.p_values if isinstance(p, PValueSet) else np.asarray(p, dtype=float)


def bh_select(pvals, q: float) -> tuple:
    """Benjamini-Hochberg step-up: indices with ``p <= p_(k*)``."""
    if not 0.0 < q < 1.0:
        raise InputError("q must lie in (0, 1)")
    p = _pvals(pvals)
    m = p.size
    if m == 0:
        return ()
    srt = np.sort(p)
    ok = np.flatnonzero(srt <= q * np.arange(1, m + 1) / m)
    if ok.size == 0:
        return ()
    return tuple(int(j) for j in np.flatnonzero(p <= srt[ok[-1]]))


def by_select(pvals, q: float) -> tuple:
    """Benjamini-Yekutieli: BH at level ``q / H_m``."""
    if not 0.0 < q < 1.0:
        raise InputError("q must lie in (0, 1)")
    m = _pvals(pvals).size
    h = float(np.sum(1.0 / np.arange(1, m + 1))) if m else 1.0
    return bh_select(pvals, q / h)


def _selection_counts(design: DesignSpec, grid: np.ndarray, groups: np.ndarray):
    fits = fit_path(design, 1.0, grid)
    counts = np.empty(grid.size, dtype=np.int64)
    for l, f in enumerate(fits):
        counts[l] = np.unique(groups[f.beta != 0]).size
    return counts, fits


def permutation_lasso(X: MixedDataMatrix, y, q: float = 0.2, B_perm: int = DEFAULT_PERMUTATIONS,
                      stream: SeededStream | None = None, return_details: bool = False):
    """Lasso selection with a permutation estimate of the false discovery rate.

    All fits share the lambda grid of the original-data lasso path.  At
    each lambda the estimate is the mean number of variables selected with
    permuted ``y`` divided by ``max(1, number selected with the real y)``;
    the selection at the smallest lambda whose estimate is ``<= q`` is
    returned (empty if none qualifies).
    """
    if B_perm < 10:
        raise InputError("B_perm must be at least 10")
    if not 0.0 < q < 1.0:
        raise InputError("q must lie in (0, 1)")
    y = as_response(y)
    if stream is None:
        stream = SeededStream(0)
    D, groups = X.encode()
    design = DesignSpec.gaussian(D, y)
    grid = lambda_grid_for(design, 1.0)
    counts, fits = _selection_counts(design, grid, groups)
    rng = stream.generator()
    perm_counts = np.zeros(grid.size)
    for _ in range(B_perm):
        yp = y[rng.permutation(y.size)]
        c, _ = _selection_counts(DesignSpec.gaussian(D, yp), grid, groups)
        perm_counts += c
    fdr_hat = perm_counts / B_perm / np.maximum(1, counts)
    ok = np.flatnonzero(fdr_hat <= q)
    if ok.size == 0:
        selected = ()
    else:
        beta = fits[ok[-1]].beta
        selected = tuple(int(j) for j in np.unique(groups[beta != 0]))
    if return_details:
        return selected, {"lambda_grid": grid, "fdr_hat": fdr_hat, "counts": counts}
    return selected
