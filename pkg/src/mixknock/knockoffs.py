"""Knockoff generators.

Two constructions are provided:

* Gaussian model-X knockoffs for continuous covariates with a known (or
  estimated) covariance, using the equicorrelated choice of ``s``.
* Sequential knockoffs for mixed continuous/categorical tables.  Columns are
  visited one at a time; each is regressed on every other original column
  and on the knockoffs produced so far, and its knockoff is drawn from the
  fitted conditional model.

Neither generator sees the response.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Categorical, Continuous, MixedDataMatrix
from .enet import DesignSpec, fit_cv, predict, residual_variance
from .errors import CollinearityError, DegenerateFit, DimensionMismatch, InputError, NotPositiveDefinite
from .numeric import cholesky
from .rng import SeededStream

SHRINK_FACTOR = 0.95
MAX_SHRINK = 20
PROB_FLOOR = 1e-12
MAX_R2 = 0.999
MAX_PAIR_CORR = 0.99


def equi_s(sigma) -> np.ndarray:
    """Equicorrelated ``s``: ``min(2 * lambda_min(corr), 1)`` times each variance."""
    sigma = np.asarray(sigma, dtype=float)
    cholesky(sigma)  # raises NotPositiveDefinite
    sd = np.sqrt(np.diag(sigma))
    corr = sigma / np.outer(sd, sd)
    lam_min = float(np.linalg.eigvalsh(corr)[0])
    return min(2.0 * lam_min, 1.0) * sd**2


@dataclass(frozen=True)
class GaussianKnockoffModel:
    """Conditional law of ``X_knock | X`` for jointly Gaussian knockoffs.

    ``cond_coef = I - Sigma^-1 diag(s)`` gives the conditional mean
    ``X @ cond_coef``; ``cond_chol`` factors the conditional covariance
    ``2 diag(s) - diag(s) Sigma^-1 diag(s)``.
    """

    sigma: np.ndarray
    s: np.ndarray
    cond_coef: np.ndarray = field(repr=False)
    cond_chol: np.ndarray = field(repr=False)
    shrink_steps: int = 0

    @classmethod
    def build(cls, sigma, s=None) -> "GaussianKnockoffModel":
        """Precompute the conditional law, shrinking ``s`` if ``V`` is singular.

        When the Cholesky factorization of ``V`` fails, ``s`` is multiplied
        by 0.95 and retried, at most 20 times; the count is kept in
        ``shrink_steps``.
        """
        sigma = np.asarray(sigma, dtype=float)
        p = sigma.shape[0]
        if sigma.shape != (p, p):
            raise DimensionMismatch("sigma must be square")
        s = equi_s(sigma) if s is None else np.asarray(s, dtype=float)
        if s.shape != (p,):
            raise DimensionMismatch(f"s has shape {s.shape}, expected ({p},)")
        if np.any(s < 0) or np.any(s > 2 * np.diag(sigma)):
            raise InputError("s must satisfy 0 <= s_j <= 2 * sigma_jj")
        sigma_inv = np.linalg.inv(sigma)
        for step in range(MAX_SHRINK + 1):
            coef = np.eye(p) - sigma_inv * s[None, :]
            V = 2.0 * np.diag(s) - (s[:, None] * sigma_inv) * s[None, :]
            V = 0.5 * (V + V.T)
            if not np.any(s):
                return cls(sigma, s, coef, np.zeros((p, p)), step)
            try:
                chol = cholesky(V)
            except NotPositiveDefinite:
                if step == MAX_SHRINK:
                    raise
                s = s * SHRINK_FACTOR
                continue
            return cls(sigma, s, coef, chol, step)
        raise AssertionError("unreachable")

    def joint_covariance(self) -> np.ndarray:
        off = self.sigma - np.diag(self.s)
        return np.block([[self.sigma, off], [off, self.sigma]])


def estimate_covariance(X) -> np.ndarray:
    """Sample covariance plus a ridge of ``1e-6 * trace / p``."""
    X = np.asarray(X, dtype=float)
    S = np.cov(X, rowvar=False).reshape(X.shape[1], X.shape[1])
    p = S.shape[0]
    return S + 1e-6 * np.trace(S) / p * np.eye(p)


def gaussian_knockoffs(X, model: GaussianKnockoffModel, stream: SeededStream) -> np.ndarray:
    """Draw each knockoff row from ``N(x_i @ cond_coef, V)``."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != model.s.size:
        raise DimensionMismatch(f"X has shape {X.shape}, model has p={model.s.size}")
    mu = X @ model.cond_coef.T
    z = stream.generator().standard_normal(X.shape)
    return mu + z @ model.cond_chol.T


def gaussian_knockoff_data(data: MixedDataMatrix, stream: SeededStream, sigma=None) -> MixedDataMatrix:
    """Gaussian knockoffs of an all-continuous table.

    ``sigma`` defaults to the shrunken sample covariance of the data.
    """
    if not data.all_continuous:
        raise InputError("the gaussian generator needs all-continuous covariates; "
                         "use the sequential generator for categorical columns")
    X = data.numeric()
    if sigma is None:
        sigma = estimate_covariance(X)
    model = GaussianKnockoffModel.build(sigma)
    Xk = gaussian_knockoffs(X, model, stream)
    cols = tuple(Continuous(c.name, Xk[:, j]) for j, c in enumerate(data.columns))
    meta = {"generator": "gaussian", "shrink_steps": model.shrink_steps,
            "sigma_known": sigma is not None, "stream": stream.to_dict()}
    return MixedDataMatrix(cols, meta)


def check_collinearity(data: MixedDataMatrix) -> None:
    """Raise :class:`CollinearityError` if two variables have ``|corr| > 0.99``.

    Dummy columns of the same factor are not compared with each other.
    """
    D, groups = data.encode()
    sd = D.std(axis=0)
    ok = sd > 0
    if ok.sum() < 2:
        return
    C = np.corrcoef(D[:, ok], rowvar=False)
    g = groups[ok]
    C[g[:, None] == g[None, :]] = 0.0
    i, j = np.unravel_index(np.argmax(np.abs(C)), C.shape)
    if abs(C[i, j]) > MAX_PAIR_CORR:
        a, b = data.names[g[i]], data.names[g[j]]
        raise CollinearityError(f"columns {a!r} and {b!r} have correlation {C[i, j]:.4f}")


def sequential_knockoffs(data: MixedDataMatrix, alpha: float = 0.5,
                         stream: SeededStream | None = None, order: str = "input",
                         folds: int = 10) -> MixedDataMatrix:
    """Sequential knockoffs for a mixed-type table.

    For each column ``j`` (in input order, or a seeded shuffle when
    ``order="shuffle"``) a cross-validated elastic net regresses ``X_j`` on
    the other original columns and on the knockoffs already generated.
    Continuous columns are drawn from ``N(fitted mean, RSS / (n - nnz))``,
    categorical ones from the fitted class probabilities.

    The returned table has the input's column names, types and level sets;
    ``meta["order"]`` records the processing order.
    """
    if data.p < 2:
        raise InputError("sequential knockoffs need at least 2 columns")
    if order not in ("input", "shuffle"):
        raise InputError(f"order must be 'input' or 'shuffle', got {order!r}")
    if stream is None:
        stream = SeededStream(0)
    check_collinearity(data)
    p, n = data.p, data.n
    seq = np.arange(p)
    if order == "shuffle":
        seq = stream.child(0).generator().permutation(p)
    blocks = [data.encode([j])[0] for j in range(p)]
    knock_blocks: dict[int, np.ndarray] = {}
    out_cols: list = [None] * p
    degenerate = []
    for j in seq:
        j = int(j)
        parts = [blocks[k] for k in range(p) if k != j]
        parts += [knock_blocks[k] for k in seq if int(k) in knock_blocks]
        Z = np.hstack(parts)
        col = data.columns[j]
        cv_stream = stream.child(1).child(j)
        rng = stream.child(2).child(j).generator()
        if isinstance(col, Continuous):
            design = DesignSpec.gaussian(Z, col.values)
            fit, _ = fit_cv(design, alpha, folds, cv_stream)
            mean = predict(fit, Z)
            resid = col.values - mean
            tss = float(np.sum((col.values - col.values.mean()) ** 2))
            if tss > 0 and 1.0 - float(resid @ resid) / tss > MAX_R2:
                raise CollinearityError(f"column {col.name!r} is reproduced by the others "
                                        f"with R^2 > {MAX_R2}")
            try:
                var = residual_variance(fit, design)
            except DegenerateFit as exc:
                var = exc.fallback
                degenerate.append(col.name)
            new = Continuous(col.name, mean + np.sqrt(var) * rng.standard_normal(n))
        else:
            design = DesignSpec.multinomial(Z, col.codes, col.n_levels)
            fit, _ = fit_cv(design, alpha, folds, cv_stream)
            P = np.maximum(predict(fit, Z), PROB_FLOOR)
            P /= P.sum(axis=1, keepdims=True)
            codes = _draw_categorical(P, rng)
            new = Categorical(col.name, codes, col.levels)
        out_cols[j] = new
        knock_blocks[j] = MixedDataMatrix((new,)).encode()[0]
    meta = {"generator": "sequential", "order_mode": order, "order": [int(k) for k in seq],
            "alpha": alpha, "stream": stream.to_dict(), "degenerate_variance": degenerate}
    return MixedDataMatrix(tuple(out_cols), meta)


def _draw_categorical(P: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One draw per row from the categorical law in that row."""
    u = rng.random(P.shape[0])
    cdf = np.cumsum(P, axis=1)
    codes = (u[:, None] > cdf).sum(axis=1)
    return np.minimum(codes, P.shape[1] - 1)
