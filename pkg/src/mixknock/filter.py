"""Knockoff filter: feature statistics and the knockoffs+ threshold."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import MixedDataMatrix, as_response
from .enet import DesignSpec, fit_cv
from .errors import DimensionMismatch, InputError
from .knockoffs import gaussian_knockoff_data, sequential_knockoffs
from .rng import SeededStream

GENERATORS = ("sequential", "gaussian")
STAT_KINDS = ("max_abs", "group_norm")
DEFAULT_Q = 0.2


@dataclass(frozen=True)
class FeatureStatistics:
    w: np.ndarray
    stat_kind: str
    lambda_used: float


@dataclass(frozen=True)
class SelectionResult:
    """Selected indices (0-based, sorted) and the threshold that produced them."""

    selected: tuple
    threshold: float
    q: float
    w: np.ndarray
    meta: dict = field(default_factory=dict, compare=False)

    def to_dict(self, names=None) -> dict:
        out = {
            "selected": [int(j) for j in self.selected],
            "threshold": None if np.isinf(self.threshold) else float(self.threshold),
            "q": self.q,
            "w": [float(v) for v in self.w],
        }
        if names is not None:
            out["selected_names"] = [names[j] for j in self.selected]
        out.update(self.meta)
        return out


def _variable_scores(beta: np.ndarray, groups: np.ndarray, p: int, kind: str) -> np.ndarray:
    out = np.zeros(p)
    if kind == "max_abs":
        np.maximum.at(out, groups, np.abs(beta))
    else:
        np.add.at(out, groups, beta**2)
        out = np.sqrt(out)
    return out


def feature_statistics(X: MixedDataMatrix, X_knock: MixedDataMatrix, y, alpha: float = 0.5,
                       stream: SeededStream | None = None, stat_kind: str = "max_abs",
                       folds: int = 10) -> FeatureStatistics:
    """``W_j = |b_j| - |b~_j|`` from a cross-validated elastic net of ``y`` on ``[X, X~]``.

    Coefficients are read on the standardized scale at ``lambda_min``.  For a
    categorical variable ``|b_j|`` is the largest absolute dummy coefficient
    (``stat_kind="max_abs"``) or the Euclidean norm of its dummy
    coefficients (``"group_norm"``).  The ``2p`` variable blocks are placed
    in a seeded random order before fitting.
    """
    if stat_kind not in STAT_KINDS:
        raise InputError(f"stat_kind must be one of {STAT_KINDS}")
    if not X.compatible_with(X_knock):
        raise DimensionMismatch("knockoff table does not match the covariate table")
    y = as_response(y)
    if y.size != X.n:
        raise DimensionMismatch(f"response has {y.size} rows, covariates have {X.n}")
    if stream is None:
        stream = SeededStream(0)
    p = X.p
    D, groups = X.encode()
    Dk, _ = X_knock.encode()
    # block b < p is original variable b, block p + b its knockoff
    starts = np.searchsorted(groups, np.arange(p))
    ends = np.append(starts[1:], groups.size)
    order = stream.child(0).generator().permutation(2 * p)
    cols, owner = [], []
    for b in order:
        src, j = (D, b) if b < p else (Dk, b - p)
        cols.append(src[:, starts[j]:ends[j]])
        owner.extend([b] * (ends[j] - starts[j]))
    Z = np.hstack(cols)
    owner = np.asarray(owner)
    fit, cv = fit_cv(DesignSpec.gaussian(Z, y), alpha, folds, stream.child(1))
    beta = np.zeros(Z.shape[1])
    beta[fit.kept] = fit.beta_std
    score = _variable_scores(beta, owner, 2 * p, stat_kind)
    return FeatureStatistics(score[:p] - score[p:], stat_kind, float(fit.lam))


def knockoff_threshold(w, q: float) -> float:
    """Knockoffs+ threshold; ``inf`` when no candidate qualifies."""
    w = np.asarray(w, dtype=float)
    if not 0.0 < q < 1.0:
        raise InputError("q must lie in (0, 1)")
    if not np.all(np.isfinite(w)):
        raise InputError("statistics must be finite")
    cands = np.unique(np.abs(w[w != 0]))
    if cands.size == 0:
        return np.inf
    neg = np.sort(-w[w < 0])   # magnitudes of negative statistics
    pos = np.sort(w[w > 0])
    n_neg = neg.size - np.searchsorted(neg, cands, side="left")
    n_pos = pos.size - np.searchsorted(pos, cands, side="left")
    ratio = (1.0 + n_neg) / np.maximum(1, n_pos)
    ok = np.flatnonzero(ratio <= q)
    return float(cands[ok[0]]) if ok.size else np.inf


def knockoff_plus_select(w, q: float = DEFAULT_Q) -> SelectionResult:
    """Select ``{j : W_j >= tau}`` with the knockoffs+ threshold ``tau``.

    ``tau`` is the smallest nonzero ``|W_j|`` with
    ``(1 + #{W <= -t}) / max(1, #{W >= t}) <= q``.
    """
    if isinstance(w, FeatureStatistics):
        w = w.w
    w = np.asarray(w, dtype=float)
    tau = knockoff_threshold(w, q)
    selected = tuple(int(j) for j in np.flatnonzero(w >= tau)) if np.isfinite(tau) else ()
    return SelectionResult(selected, tau, q, w)


def make_knockoffs(X: MixedDataMatrix, generator: str, stream: SeededStream,
                   alpha: float = 0.5, sigma=None) -> MixedDataMatrix:
    """Dispatch to the chosen knockoff generator."""
    if generator == "sequential":
        return sequential_knockoffs(X, alpha, stream)
    if generator == "gaussian":
        return gaussian_knockoff_data(X, stream, sigma)
    raise InputError(f"generator must be one of {GENERATORS}, got {generator!r}")


def run_filter(X: MixedDataMatrix, y, q: float = DEFAULT_Q, generator: str = "sequential",
               stream: SeededStream | None = None, alpha: float = 0.5, sigma=None,
               stat_kind: str = "max_abs", knockoffs: MixedDataMatrix | None = None) -> SelectionResult:
    """Generate knockoffs, compute statistics and apply knockoffs+.

    ``stream.child(0)`` drives the generator and ``stream.child(1)`` the
    statistics.  Pre-computed ``knockoffs`` (made from ``stream.child(0)``)
    may be passed to skip generation.
    """
    if not 0.0 < q < 1.0:
        raise InputError("q must lie in (0, 1)")
    if stream is None:
        stream = SeededStream(0)
    if knockoffs is None:
        knockoffs = make_knockoffs(X, generator, stream.child(0), alpha, sigma)
    stats = feature_statistics(X, knockoffs, y, alpha, stream.child(1), stat_kind)
    res = knockoff_plus_select(stats, q)
    meta = {"generator": generator, "stream": stream.to_dict(), "alpha": alpha,
            "stat_kind": stat_kind, "lambda_used": stats.lambda_used}
    return SelectionResult(res.selected, res.threshold, q, res.w, meta)
