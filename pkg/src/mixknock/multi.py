"""Multiple knockoffs: repeated filter runs and the consensus selection."""
from __future__ import annotations

import csv
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import MixedDataMatrix, as_response
from .errors import InputError, NumericalError
from .filter import DEFAULT_Q, run_filter
from .rng import SeededStream, stream_id_for

RETRY_TAG = 0xFFFF


@dataclass(frozen=True)
class SelectionMatrix:
    """``B x p`` indicators; row ``b`` marks the variables chosen by draw ``b``."""

    indicators: np.ndarray
    draw_seeds: list
    variable_names: list
    failed: np.ndarray = field(default=None)

    def __post_init__(self):
        ind = np.asarray(self.indicators, dtype=np.int8)
        if ind.ndim != 2:
            raise InputError("indicators must be a B x p matrix")
        if not np.isin(ind, (0, 1)).all():
            raise InputError("indicators must be 0/1")
        object.__setattr__(self, "indicators", ind)
        failed = np.zeros(ind.shape[0], dtype=bool) if self.failed is None else np.asarray(self.failed, bool)
        object.__setattr__(self, "failed", failed)

    @classmethod
    def from_sets(cls, sets, p: int, names=None) -> "SelectionMatrix":
        ind = np.zeros((len(sets), p), dtype=np.int8)
        for b, s in enumerate(sets):
            ind[b, list(s)] = 1
        names = names or [f"X{j + 1}" for j in range(p)]
        return cls(ind, [None] * len(sets), list(names))

    @property
    def B(self) -> int:
        return self.indicators.shape[0]

    @property
    def p(self) -> int:
        return self.indicators.shape[1]

    def counts(self) -> np.ndarray:
        return self.indicators.sum(axis=0).astype(np.int64)

    def frequency(self) -> np.ndarray:
        return self.counts() / max(self.B, 1)

    def selected_sets(self) -> list[tuple]:
        return [tuple(np.flatnonzero(row)) for row in self.indicators]


@dataclass(frozen=True)
class ConsensusResult:
    selected: tuple
    r_hat: float
    trace: list          # (r, F(r), S(r)) per grid value
    frequency: np.ndarray

    def to_dict(self, names=None) -> dict:
        out = {
            "selected": [int(j) for j in self.selected],
            "r_hat": self.r_hat,
            "trace": [{"r": r, "frequent": list(map(int, F)), "consensus": list(map(int, S))}
                      for r, F, S in self.trace],
            "frequency": [float(f) for f in self.frequency],
        }
        if names is not None:
            out["selected_names"] = [names[j] for j in self.selected]
        return out


def draw_stream(master_seed: int, b: int, replicate: int = 0) -> SeededStream:
    return SeededStream(master_seed, stream_id_for(replicate, b))


def _one_draw(args):
    X, y, q, generator, stream, alpha, sigma = args
    try:
        res = run_filter(X, y, q, generator, stream, alpha, sigma)
        return res.selected, stream.to_dict(), False
    except NumericalError:
        retry = stream.child(RETRY_TAG)
        try:
            res = run_filter(X, y, q, generator, retry, alpha, sigma)
            return res.selected, retry.to_dict(), False
        except NumericalError:
            return (), retry.to_dict(), True


def run_multi(X: MixedDataMatrix, y, q: float = DEFAULT_Q, B: int = 1000,
              generator: str = "sequential", master_seed: int = 0, replicate: int = 0,
              alpha: float = 0.5, sigma=None, threads: int = 1) -> SelectionMatrix:
    """Run ``B`` knockoff filters on independent knockoff draws.

    Draw ``b`` uses stream id ``replicate * 2**20 + b`` under ``master_seed``,
    so draw 0 reproduces :func:`run_filter` on that stream.  A draw that
    fails numerically is retried once on a fresh sub-stream and otherwise
    recorded as an empty selection with ``failed[b]`` set.  Results do not
    depend on ``threads``.
    """
    if B < 1:
        raise InputError("B must be at least 1")
    y = as_response(y)
    jobs = [(X, y, q, generator, draw_stream(master_seed, b, replicate), alpha, sigma) for b in range(B)]
    if threads > 1 and B > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            out = list(pool.map(_one_draw, jobs, chunksize=max(1, B // (4 * threads))))
    else:
        out = [_one_draw(job) for job in jobs]
    ind = np.zeros((B, X.p), dtype=np.int8)
    for b, (sel, _, _) in enumerate(out):
        ind[b, list(sel)] = 1
    return SelectionMatrix(ind, [o[1] for o in out], X.names, np.array([o[2] for o in out]))


def filter_frequent(mat: SelectionMatrix, r: float) -> tuple:
    """Variables selected in strictly more than ``r * B`` draws."""
    thr = round(r * mat.B, 9)
    return tuple(int(j) for j in np.flatnonzero(mat.counts() > thr))


def default_r_grid(B: int) -> np.ndarray:
    """0.5 to 1 in steps of ``min(0.05, 1 / (2B))``."""
    step = min(0.05, 1.0 / (2 * B))
    k = int(round(0.5 / step))
    return np.round(0.5 + step * np.arange(k + 1), 12)


def _mode_set(sets: list[tuple]) -> tuple:
    # most frequent; then the larger set; then the lexicographically smallest
    counts = Counter(sets)
    return min(counts.items(), key=lambda kv: (-kv[1], -len(kv[0]), kv[0]))[0]


def consensus_select(mat: SelectionMatrix, r_grid=None) -> ConsensusResult:
    """Consensus set ``S(r_hat)`` with ``r_hat`` maximizing ``|S(r)|``.

    ``S(r)`` is the most frequent of the sets ``F(r) & S_b``; ties go to
    the larger set, then the lexicographically smallest.  Ties in ``|S(r)|``
    go to the smaller ``r``.
    """
    grid = default_r_grid(mat.B) if r_grid is None else np.asarray(r_grid, dtype=float)
    if grid.size == 0 or np.any(np.diff(grid) <= 0):
        raise InputError("r_grid must be a nonempty increasing sequence")
    sets = mat.selected_sets()
    trace = []
    best, r_hat = None, float(grid[0])
    for r in grid:
        F = filter_frequent(mat, r)
        keep = set(F)
        S = _mode_set([tuple(j for j in s if j in keep) for s in sets]) if sets else ()
        trace.append((float(r), F, S))
        if best is None or len(S) > len(best):
            best, r_hat = S, float(r)
    return ConsensusResult(tuple(int(j) for j in best), r_hat, trace, mat.frequency())


def heatmap_order(mat: SelectionMatrix, order: str = "by-frequency") -> list[int]:
    if order == "input":
        return list(range(mat.p))
    if order != "by-frequency":
        raise InputError("order must be 'by-frequency' or 'input'")
    return [int(j) for j in np.argsort(-mat.counts(), kind="stable")]


def export_heatmap(mat: SelectionMatrix, order: str = "by-frequency"):
    """Long-format heatmap rows and the per-variable frequency table.

    Returns ``(rows, freq)``: ``rows`` holds ``(variable, draw, selected)``
    for every draw and variable, variables following ``order``; ``freq``
    holds ``(variable, frequency)`` in the same order.
    """
    idx = heatmap_order(mat, order)
    names = mat.variable_names
    freq_all = mat.frequency()
    rows = [(names[j], b, int(mat.indicators[b, j])) for j in idx for b in range(mat.B)]
    freq = [(names[j], float(freq_all[j])) for j in idx]
    return rows, freq


def write_heatmap(mat: SelectionMatrix, path, order: str = "by-frequency") -> Path:
    """Write ``variable,draw,selected`` to ``path`` and ``variable,freq`` beside it."""
    path = Path(path)
    rows, freq = export_heatmap(mat, order)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["variable", "draw", "selected"])
        w.writerows(rows)
    side = path.with_name(path.stem + "_freq.csv")
    with open(side, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["variable", "freq"])
        w.writerows((v, repr(f)) for v, f in freq)
    return side
