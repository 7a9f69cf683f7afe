"""Elastic-net fitting for Gaussian and multinomial responses.

Objective, on internally standardized covariates::

    (1/n) sum_i loss(y_i, eta_i) + lam * ((1 - alpha) |b|^2 / 2 + alpha |b|_1)

with squared-error loss ``(y - eta)^2 / 2`` or the multinomial negative
log-likelihood.  Intercepts are never penalized.  Coefficients are reported
on the original covariate scale.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DegenerateFit, DimensionMismatch, InputError, NonConvergence
from ..rng import SeededStream
from . import _kernels

DEFAULT_ALPHA = 0.5
DEFAULT_FOLDS = 10
N_LAMBDA = 100
TOL = 1e-7
MAX_CYCLES = 10_000
# intercept given to a class that never occurs in the training data
_ABSENT_CLASS_LOGIT = -30.0


@dataclass(frozen=True)
class DesignSpec:
    """Regression problem: covariates ``X`` (already dummy-coded) and response.

    For ``family="multinomial"`` the response holds integer class codes in
    ``range(n_classes)``.
    """

    X: np.ndarray
    y: np.ndarray
    family: str = "gaussian"
    n_classes: int = 0
    standardize: bool = True

    def __post_init__(self):
        X = np.ascontiguousarray(self.X, dtype=float)
        if X.ndim != 2:
            raise DimensionMismatch("X must be two-dimensional")
        n, d = X.shape
        if n < 2 or d < 1:
            raise InputError(f"need n >= 2 and d >= 1, got {X.shape}")
        if self.family == "gaussian":
            y = np.asarray(self.y, dtype=float)
        elif self.family == "multinomial":
            y = np.asarray(self.y).astype(np.int64)
            k = self.n_classes or int(y.max()) + 1
            if k < 2:
                raise InputError("multinomial response needs at least 2 classes")
            if y.min() < 0 or y.max() >= k:
                raise InputError("class codes out of range")
            object.__setattr__(self, "n_classes", k)
        else:
            raise InputError(f"unknown family {self.family!r}")
        if y.shape != (n,):
            raise DimensionMismatch(f"response has shape {y.shape}, expected ({n},)")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @classmethod
    def gaussian(cls, X, y, standardize=True) -> "DesignSpec":
        return cls(X, y, "gaussian", 0, standardize)

    @classmethod
    def multinomial(cls, X, codes, n_classes=0, standardize=True) -> "DesignSpec":
        return cls(X, codes, "multinomial", n_classes, standardize)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def subset(self, rows) -> "DesignSpec":
        return DesignSpec(self.X[rows], self.y[rows], self.family, self.n_classes, self.standardize)


@dataclass(frozen=True)
class ElasticNetFit:
    family: str
    beta: np.ndarray
    intercept: np.ndarray | float
    lam: float
    alpha: float
    nnz: int
    objective: float
    sigma2_hat: float | None = None
    # standardized-scale internals, used by KKT checks and knockoff statistics
    beta_std: np.ndarray = field(default=None, repr=False)
    kept: np.ndarray = field(default=None, repr=False)
    cycles: int = 0

    @property
    def d(self) -> int:
        return self.beta.shape[0]


@dataclass(frozen=True)
class CvResult:
    lambda_grid: np.ndarray
    cv_loss: np.ndarray
    cv_se: np.ndarray
    lambda_min: float
    index_min: int
    folds: np.ndarray = field(repr=False, default=None)


class _Prepared:
    """Standardized copy of a design plus cached cross-products."""

    def __init__(self, design: DesignSpec):
        X = design.X
        n = design.n
        mean = X.mean(axis=0)
        Xc = X - mean
        if design.standardize:
            scale = np.sqrt((Xc ** 2).mean(axis=0))
        else:
            scale = np.ones(design.d)
        kept = np.flatnonzero(scale > 1e-10 * np.maximum(1.0, np.abs(mean)))
        self.n = n
        self.d = design.d
        self.kept = kept
        self.mean = mean[kept]
        self.scale = scale[kept]
        Xs = Xc[:, kept] / self.scale
        self.Xs = np.ascontiguousarray(Xs)
        self.Xt = np.ascontiguousarray(Xs.T)
        self.G = self.Xt @ self.Xs / n
        self.family = design.family
        if design.family == "gaussian":
            y = design.y
            self.ybar = y.mean()
            yc = y - self.ybar
            self.c = self.Xt @ yc / n
            self.yy = float(yc @ yc / n)
        else:
            self.K = design.n_classes
            counts = np.bincount(design.y, minlength=self.K)
            self.present = np.flatnonzero(counts > 0)
            self.codes = design.y
            self.freq = counts / n

    def lambda_max(self, alpha: float) -> float:
        a = max(alpha, 1e-3)
        if self.Xs.shape[1] == 0:
            return 1.0
        if self.family == "gaussian":
            lm = np.abs(self.c).max() / a
        else:
            Y = np.zeros((self.n, self.K))
            Y[np.arange(self.n), self.codes] = 1.0
            R = Y - self.freq
            lm = np.abs(self.Xt @ R).max() / self.n / a
        return float(lm) if lm > 0 else 1e-8


def lambda_grid_for(design: DesignSpec, alpha: float = DEFAULT_ALPHA, n_lambda: int = N_LAMBDA) -> np.ndarray:
    """Default decreasing grid: ``n_lambda`` log-spaced values below lambda_max."""
    prep = _Prepared(design)
    return _default_grid(prep, alpha, n_lambda)


def _default_grid(prep: _Prepared, alpha: float, n_lambda: int = N_LAMBDA) -> np.ndarray:
    lmax = prep.lambda_max(alpha)
    ratio = 1e-4 if prep.n > prep.d else 1e-2
    return np.geomspace(lmax, lmax * ratio, n_lambda)


def _check_grid(grid) -> np.ndarray:
    grid = np.asarray(grid, dtype=float).ravel()
    if grid.size == 0 or np.any(grid < 0) or np.any(np.diff(grid) >= 0):
        raise InputError("lambda grid must be a nonempty strictly decreasing sequence of values >= 0")
    return grid


def _solve(prep: _Prepared, lambdas: np.ndarray, alpha: float, trace=None):
    """Standardized-scale path.  Returns ``(B, b0, status)``.

    Gaussian: ``B`` is ``L x d_kept``, ``b0`` length L.  Multinomial: ``B`` is
    ``L x d_kept x K`` and ``b0`` is ``L x K``.
    """
    tr = np.zeros(0) if trace is None else trace
    L = lambdas.size
    dk = prep.Xs.shape[1]
    if prep.family == "gaussian":
        if dk == 0:
            return np.zeros((L, 0)), np.full(L, prep.ybar), np.ones(L, dtype=np.int64)
        B, status = _kernels.gaussian_path(prep.G, prep.c, prep.yy, lambdas, float(alpha),
                                           TOL, MAX_CYCLES, np.zeros(dk), tr)
        return B, np.full(L, prep.ybar), status
    K = prep.K
    present = prep.present
    Bs = np.zeros((L, dk, K))
    b0s = np.full((L, K), _ABSENT_CLASS_LOGIT)
    if present.size == 1:
        b0s[:, present[0]] = 0.0
        return Bs, b0s, np.ones(L, dtype=np.int64)
    Zt = np.vstack([np.ones((1, prep.n)), prep.Xt])
    if present.size == 2:
        lo, hi = present
        y01 = (prep.codes == hi).astype(float)
        f = y01.mean()
        theta0 = np.zeros(dk + 1)
        theta0[0] = np.log(f / (1 - f))
        T, status = _kernels.logistic_path(Zt, y01, lambdas, float(alpha), 0.5, TOL, MAX_CYCLES,
                                           theta0, tr)
        Bs[:, :, hi] = 0.5 * T[:, 1:]
        Bs[:, :, lo] = -0.5 * T[:, 1:]
        b0s[:, hi] = 0.5 * T[:, 0]
        b0s[:, lo] = -0.5 * T[:, 0]
        return Bs, b0s, status
    remap = np.full(K, -1)
    remap[present] = np.arange(present.size)
    codes = remap[prep.codes]
    logf = np.log(prep.freq[present])
    theta0 = np.zeros((dk + 1, present.size))
    theta0[0] = logf - logf.mean()
    T, status = _kernels.multinomial_path(Zt, codes, lambdas, float(alpha), TOL, MAX_CYCLES,
                                          theta0, tr)
    Bs[:, :, present] = T[:, 1:, :]
    b0s[:, present] = T[:, 0, :]
    return Bs, b0s, status


def _raise_if_failed(status, lambdas):
    bad = np.flatnonzero(status <= 0)
    if bad.size:
        raise NonConvergence(
            f"coordinate descent hit the {MAX_CYCLES}-cycle cap at lambda={lambdas[bad[0]]:.4g}"
        )


def _to_original(prep: _Prepared, Bstd, b0std):
    """Map standardized coefficients back to the input scale (full width d)."""
    if prep.family == "gaussian":
        beta = np.zeros(prep.d)
        beta[prep.kept] = Bstd / prep.scale
        intercept = float(b0std - (prep.mean * beta[prep.kept]).sum())
        return beta, intercept
    K = prep.K
    beta = np.zeros((prep.d, K))
    beta[prep.kept] = Bstd / prep.scale[:, None]
    intercept = b0std - prep.mean @ beta[prep.kept]
    return beta, intercept


def _gauss_loss(prep, y, Bstd, b0std):
    r = y - (b0std + prep.Xs @ Bstd)
    return 0.5 * float(r @ r) / prep.n


def _multinomial_loss(prep, Bstd, b0std):
    eta = b0std + prep.Xs @ Bstd
    m = eta.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(eta - m).sum(axis=1))
    return float(np.mean(lse - eta[np.arange(prep.n), prep.codes]))


def _make_fit(prep: _Prepared, design: DesignSpec, Bstd, b0std, lam, alpha, cycles) -> ElasticNetFit:
    beta, intercept = _to_original(prep, Bstd, b0std)
    pen = lam * ((1 - alpha) * 0.5 * np.sum(Bstd ** 2) + alpha * np.abs(Bstd).sum())
    nnz = int(np.count_nonzero(Bstd))
    sigma2 = None
    if prep.family == "gaussian":
        loss = _gauss_loss(prep, design.y, Bstd, b0std)
        rss = 2.0 * loss * prep.n
        if prep.n - nnz >= 1:
            sigma2 = rss / (prep.n - nnz)
    else:
        loss = _multinomial_loss(prep, Bstd, b0std)
    return ElasticNetFit(
        family=prep.family,
        beta=beta,
        intercept=intercept,
        lam=float(lam),
        alpha=float(alpha),
        nnz=nnz,
        objective=loss + pen,
        sigma2_hat=sigma2,
        beta_std=np.array(Bstd, copy=True),
        kept=prep.kept,
        cycles=int(cycles),
    )


def fit_path(design: DesignSpec, alpha: float = DEFAULT_ALPHA, lambda_grid=None,
             trace: np.ndarray | None = None) -> list[ElasticNetFit]:
    """Fit the elastic net along a decreasing lambda grid with warm starts.

    When ``lambda_grid`` is omitted a 100-point log-spaced grid from
    ``lambda_max`` down to ``1e-4 * lambda_max`` (``1e-2`` when ``n <= d``)
    is used.  ``trace``, if given, receives the penalized objective after
    every coordinate-descent cycle (Gaussian) or proximal Newton step
    (multinomial), concatenated over the path.
    """
    if not 0.0 <= alpha <= 1.0:
        raise InputError("alpha must lie in [0, 1]")
    prep = _Prepared(design)
    grid = _default_grid(prep, alpha) if lambda_grid is None else _check_grid(lambda_grid)
    B, b0, status = _solve(prep, grid, alpha, trace)
    _raise_if_failed(status, grid)
    return [_make_fit(prep, design, B[l], b0[l], grid[l], alpha, status[l]) for l in range(grid.size)]


def _fold_ids(n: int, folds: int, stream: SeededStream) -> np.ndarray:
    return stream.generator().permutation(np.arange(n) % folds)


def cross_validate(design: DesignSpec, alpha: float = DEFAULT_ALPHA, folds: int = DEFAULT_FOLDS,
                   stream: SeededStream | None = None, lambda_grid=None) -> CvResult:
    """K-fold cross-validation over a shared lambda grid.

    Out-of-fold deviance is squared error (Gaussian) or the negative
    log-likelihood of the held-out class (multinomial).  ``cv_loss`` is the
    average over all observations; ``cv_se`` the standard error of the
    per-fold averages.
    """
    n = design.n
    if not 3 <= folds <= n:
        raise InputError(f"folds must be between 3 and n={n}, got {folds}")
    if stream is None:
        stream = SeededStream(0)
    prep_full = _Prepared(design)
    grid = _default_grid(prep_full, alpha) if lambda_grid is None else _check_grid(lambda_grid)
    fold_of = _fold_ids(n, folds, stream)
    losses = np.empty((n, grid.size))
    for f in range(folds):
        test = fold_of == f
        train = ~test
        if train.sum() < 2:
            raise InputError("a training fold has fewer than 2 observations")
        prep = _Prepared(design.subset(train))
        B, b0, status = _solve(prep, grid, alpha)
        _raise_if_failed(status, grid)
        Xte = design.X[test]
        if design.family == "gaussian":
            beta = np.zeros((grid.size, design.d))
            beta[:, prep.kept] = B / prep.scale
            icpt = b0 - beta[:, prep.kept] @ prep.mean
            pred = Xte @ beta.T + icpt
            losses[test] = (design.y[test][:, None] - pred) ** 2
        else:
            yte = design.y[test]
            for l in range(grid.size):
                beta, icpt = _to_original(prep, B[l], b0[l])
                eta = icpt + Xte @ beta
                m = eta.max(axis=1, keepdims=True)
                lse = m[:, 0] + np.log(np.exp(eta - m).sum(axis=1))
                losses[test, l] = lse - eta[np.arange(yte.size), yte]
    cv_loss = losses.mean(axis=0)
    fold_means = np.array([losses[fold_of == f].mean(axis=0) for f in range(folds)])
    cv_se = fold_means.std(axis=0, ddof=1) / np.sqrt(folds)
    i_min = int(np.argmin(cv_loss))
    return CvResult(grid, cv_loss, cv_se, float(grid[i_min]), i_min, fold_of)


def fit_cv(design: DesignSpec, alpha: float = DEFAULT_ALPHA, folds: int = DEFAULT_FOLDS,
           stream: SeededStream | None = None) -> tuple[ElasticNetFit, CvResult]:
    """Cross-validate, then refit on all data and return the fit at ``lambda_min``."""
    folds = min(folds, design.n)
    cv = cross_validate(design, alpha, folds, stream)
    prep = _Prepared(design)
    grid = cv.lambda_grid[: cv.index_min + 1]
    B, b0, status = _solve(prep, grid, alpha)
    _raise_if_failed(status, grid)
    fit = _make_fit(prep, design, B[-1], b0[-1], grid[-1], alpha, status[-1])
    return fit, cv


def predict(fit: ElasticNetFit, X_new) -> np.ndarray:
    """Linear predictions (Gaussian) or class-probability rows (multinomial)."""
    X_new = np.asarray(X_new, dtype=float)
    if X_new.ndim != 2 or X_new.shape[1] != fit.d:
        raise DimensionMismatch(f"expected {fit.d} columns, got shape {X_new.shape}")
    eta = fit.intercept + X_new @ fit.beta
    if fit.family == "gaussian":
        return eta
    eta = eta - eta.max(axis=1, keepdims=True)
    P = np.exp(eta)
    return P / P.sum(axis=1, keepdims=True)


def residual_variance(fit: ElasticNetFit, design: DesignSpec) -> float:
    """``RSS / (n - s)`` with ``s`` the number of nonzero coefficients.

    Raises :class:`DegenerateFit` (carrying the ``RSS / n`` fallback as its
    ``fallback`` attribute) when ``n - s < 1``.
    """
    if fit.family != "gaussian":
        raise InputError("residual variance is defined for the gaussian family only")
    r = design.y - predict(fit, design.X)
    rss = float(r @ r)
    dof = design.n - fit.nnz
    if dof < 1:
        err = DegenerateFit(f"n - nnz = {dof} < 1")
        err.fallback = rss / design.n
        raise err
    return rss / dof


def kkt_violation(fit: ElasticNetFit, design: DesignSpec) -> float:
    """Largest violation of the stationarity conditions on the standardized scale."""
    prep = _Prepared(design)
    if not np.array_equal(prep.kept, fit.kept):
        raise InputError("fit does not belong to this design")
    B = fit.beta_std
    if prep.family == "gaussian":
        r = design.y - (prep.ybar + prep.Xs @ B)
        grad = prep.Xt @ r / prep.n
        B2, grad2 = B[:, None], grad[:, None]
    else:
        b0 = _std_intercept(prep, fit)
        eta = b0 + prep.Xs @ B
        eta -= eta.max(axis=1, keepdims=True)
        P = np.exp(eta)
        P /= P.sum(axis=1, keepdims=True)
        Y = np.zeros_like(P)
        Y[np.arange(prep.n), prep.codes] = 1.0
        cols = prep.present
        B2 = B[:, cols]
        grad2 = (prep.Xt @ (Y - P))[:, cols] / prep.n
    lam, a = fit.lam, fit.alpha
    l1, l2 = lam * a, lam * (1 - a)
    zero = B2 == 0
    viol = np.where(
        zero,
        np.maximum(np.abs(grad2) - l1, 0.0),
        np.abs(grad2 - l2 * B2 - l1 * np.sign(B2)),
    )
    return float(viol.max()) if viol.size else 0.0


def _std_intercept(prep, fit):
    # intercept on the standardized scale
    return fit.intercept + prep.mean @ fit.beta[prep.kept]


def multinomial_nll(beta, intercept, X, codes) -> float:
    """Mean multinomial negative log-likelihood (no penalty)."""
    eta = intercept + X @ beta
    m = eta.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(eta - m).sum(axis=1))
    return float(np.mean(lse - eta[np.arange(len(codes)), codes]))


def multinomial_nll_grad(beta, intercept, X, codes):
    """Gradient of :func:`multinomial_nll` w.r.t. ``(beta, intercept)``."""
    n = X.shape[0]
    eta = intercept + X @ beta
    eta -= eta.max(axis=1, keepdims=True)
    P = np.exp(eta)
    P /= P.sum(axis=1, keepdims=True)
    Y = np.zeros_like(P)
    Y[np.arange(n), codes] = 1.0
    R = P - Y
    return X.T @ R / n, R.mean(axis=0)
