"""Simulation harness: designs, sparse responses, scoring and campaigns.

Random streams are keyed so that configurations differing only in the
amplitude ``a`` (or in ``q``/methods) share, replicate by replicate, the
same design, non-null set and noise draw.  Knockoffs generated for one such
configuration are reused by the others.
"""
from __future__ import annotations

import csv
import hashlib
import itertools
import json
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .baselines import bh_select, by_select, permutation_lasso, regression_pvalues
from .data import Categorical, Continuous, MixedDataMatrix
from .errors import InputError, MixKnockError
from .filter import make_knockoffs, run_filter
from .multi import consensus_select, run_multi
from .numeric import CovarianceSpec, cholesky, sample_mvn
from .rng import SeededStream, stream_id_for

METHODS = ("knockoff_seq", "knockoff_mx", "multi_seq", "multi_mx", "bh", "by", "perm_lasso")
CSV_COLUMNS = ("config_id", "method", "replicate", "fdp", "tpp", "selected_count", "runtime_ms")
DATA_TAG = 1 << 31
PERM_TAG = (1 << 31) + 1


@dataclass(frozen=True)
class SimConfig:
    n: int = 500
    p: int = 50
    p_b: int = 0
    rho: float = 0.5
    cov_kind: str = "ar1"
    p_nn: int = 10
    a: float = 4.0
    n_sim: int = 100
    q: float = 0.2
    methods: tuple = ("knockoff_seq",)
    B: int = 0
    master_seed: int = 0
    alpha: float = 0.5
    B_perm: int = 100

    def __post_init__(self):
        object.__setattr__(self, "methods", tuple(self.methods))
        if self.n < 2 or self.p < 2:
            raise InputError("need n >= 2 and p >= 2")
        if not 0 <= self.p_b <= self.p:
            raise InputError("p_b must lie in [0, p]")
        if not 0 <= self.p_nn <= self.p:
            raise InputError("p_nn must lie in [0, p]")
        if self.n_sim < 1:
            raise InputError("n_sim must be positive")
        if not 0.0 < self.q < 1.0:
            raise InputError("q must lie in (0, 1)")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise InputError(f"unknown methods {sorted(unknown)}; choose from {METHODS}")
        if any(m.startswith("multi") for m in self.methods) and self.B < 1:
            raise InputError("multi methods need B >= 1")
        self.covariance()  # validates rho against cov_kind

    def covariance(self) -> CovarianceSpec:
        spec = CovarianceSpec(self.p, self.cov_kind, self.rho, 1.0 / self.n)
        if spec.min_eigenvalue() <= 0:
            raise InputError(f"rho={self.rho} gives a singular {self.cov_kind} covariance for p={self.p}")
        return spec

    def to_dict(self) -> dict:
        d = asdict(self)
        d["methods"] = list(self.methods)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        names = {f.name for f in fields(cls)}
        extra = set(d) - names
        if extra:
            raise InputError(f"unknown config keys {sorted(extra)}")
        return cls(**d)

    @property
    def config_id(self) -> str:
        return _digest(self.to_dict())[:12]

    def design_key(self) -> int:
        """Stream key shared by configs that generate the same data."""
        keys = ("n", "p", "p_b", "rho", "cov_kind", "p_nn", "master_seed")
        d = self.to_dict()
        if self.cov_kind == "independent":
            d["rho"] = 0.0
        return int(_digest({k: d[k] for k in keys})[:8], 16)


@dataclass(frozen=True)
class TruthAssignment:
    non_null: tuple
    beta: np.ndarray

    def __post_init__(self):
        support = tuple(int(j) for j in np.flatnonzero(self.beta))
        if tuple(sorted(self.non_null)) != support:
            raise InputError("beta support must equal the non-null set")


@dataclass(frozen=True)
class ScoreRecord:
    config_id: str
    method: str
    replicate: int
    fdp: float
    tpp: float
    selected_count: int
    runtime_ms: int | None = None
    data_digest: str = ""
    error: str | None = None
    selected: tuple = field(default=(), repr=False)


def _digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()


def data_stream(config: SimConfig, replicate: int) -> SeededStream:
    return SeededStream(config.master_seed, stream_id_for(replicate, 0), (DATA_TAG, config.design_key()))


def simulate_design(config: SimConfig, stream: SeededStream) -> MixedDataMatrix:
    """Gaussian design with covariance scaled by ``1/n`` and ``p_b`` binarized columns.

    A binarized column is ``(1(x > 0) - 1/2) * 2 / sqrt(n)``, i.e. values
    ``-1/sqrt(n)`` and ``+1/sqrt(n)``, so every column has variance ``1/n``.
    It is stored as a categorical column whose levels are those two numbers.
    """
    n, p = config.n, config.p
    sigma = config.covariance().matrix()
    X = sample_mvn(stream.child(0), np.zeros(p), cholesky(sigma), n)
    binary = np.sort(stream.child(1).generator().choice(p, config.p_b, replace=False))
    h = 1.0 / np.sqrt(n)
    cols = []
    for j in range(p):
        name = f"X{j + 1}"
        if j in binary:
            cols.append(Categorical(name, (X[:, j] > 0).astype(np.int64), (-h, h)))
        else:
            cols.append(Continuous(name, X[:, j]))
    return MixedDataMatrix(tuple(cols), {"binarized": [int(j) for j in binary]})


def make_truth(config: SimConfig, stream: SeededStream) -> TruthAssignment:
    """``p_nn`` non-null indices drawn at random, each with coefficient ``+a``."""
    idx = np.sort(stream.generator().choice(config.p, config.p_nn, replace=False))
    beta = np.zeros(config.p)
    beta[idx] = config.a
    if config.a == 0:
        idx = idx[:0]
    return TruthAssignment(tuple(int(j) for j in idx), beta)


def simulate_response(X, truth: TruthAssignment, stream: SeededStream) -> np.ndarray:
    """``y ~ N(X beta, I)``."""
    X = np.asarray(X, dtype=float)
    if X.shape[1] != truth.beta.size:
        raise InputError("beta length must match the design")
    return X @ truth.beta + stream.generator().standard_normal(X.shape[0])


def score(selected, truth: TruthAssignment) -> tuple[float, float]:
    """``(|S^ \\ S| / max(|S^|, 1), |S^ & S| / max(|S|, 1))``."""
    sel = set(int(j) for j in selected)
    S = set(truth.non_null)
    fdp = len(sel - S) / max(len(sel), 1)
    tpp = len(sel & S) / max(len(S), 1)
    return fdp, tpp


def simulate_replicate(config: SimConfig, replicate: int):
    """Design, truth and response for one replicate."""
    st = data_stream(config, replicate)
    X = simulate_design(config, st)
    truth = make_truth(config, st.child(2))
    y = simulate_response(X.numeric(), truth, st.child(3))
    return X, truth, y


def _data_digest(X: MixedDataMatrix, y=None) -> str:
    h = hashlib.sha256(np.ascontiguousarray(X.numeric()).tobytes())
    if y is not None:
        h.update(np.ascontiguousarray(y).tobytes())
    return h.hexdigest()[:16]


class _KnockoffCache:
    def __init__(self):
        self._store = {}

    def get(self, X, generator, stream, alpha, sigma):
        key = (_data_digest(X), generator, stream, alpha, sigma is None)
        if key not in self._store:
            self._store[key] = make_knockoffs(X, generator, stream, alpha, sigma)
        return self._store[key]


def _as_continuous(X: MixedDataMatrix) -> MixedDataMatrix:
    return MixedDataMatrix.from_array(X.numeric(), X.names)


def _run_method(method, config, replicate, X, y, sigma, cache):
    fstream = SeededStream(config.master_seed, stream_id_for(replicate, 0))
    if method == "knockoff_seq":
        ko = cache.get(X, "sequential", fstream.child(0), config.alpha, None)
        return run_filter(X, y, config.q, "sequential", fstream, config.alpha, knockoffs=ko).selected
    if method == "knockoff_mx":
        Xc = _as_continuous(X)
        sig = sigma if X.all_continuous else None
        ko = cache.get(Xc, "gaussian", fstream.child(0), config.alpha, sig)
        return run_filter(Xc, y, config.q, "gaussian", fstream, config.alpha, sig, knockoffs=ko).selected
    if method in ("multi_seq", "multi_mx"):
        gen = "sequential" if method == "multi_seq" else "gaussian"
        Xm = X if gen == "sequential" else _as_continuous(X)
        sig = sigma if (gen == "gaussian" and X.all_continuous) else None
        mat = run_multi(Xm, y, config.q, config.B, gen, config.master_seed, replicate, config.alpha, sig)
        return consensus_select(mat).selected
    if method in ("bh", "by"):
        pv = regression_pvalues(X, y)
        return bh_select(pv, config.q) if method == "bh" else by_select(pv, config.q)
    if method == "perm_lasso":
        stream = SeededStream(config.master_seed, stream_id_for(replicate, 0), (PERM_TAG,))
        return permutation_lasso(X, y, config.q, config.B_perm, stream)
    raise InputError(f"unknown method {method!r}")


def _replicate_task(args):
    grid, replicate = args
    cache = _KnockoffCache()
    out = []
    for config in grid:
        if replicate >= config.n_sim:
            continue
        X, truth, y = simulate_replicate(config, replicate)
        digest = _data_digest(X, y)
        sigma = config.covariance().matrix()
        for method in config.methods:
            t0 = time.perf_counter()
            try:
                sel = tuple(_run_method(method, config, replicate, X, y, sigma, cache))
                fdp, tpp = score(sel, truth)
                err = None
            except MixKnockError as exc:
                sel, fdp, tpp = (), float("nan"), float("nan")
                err = f"{type(exc).__name__}: {exc}"
            except Exception as exc:  # noqa: BLE001 - record and continue the campaign
                sel, fdp, tpp = (), float("nan"), float("nan")
                err = f"{type(exc).__name__}: {exc}\n{traceback.format_exc(limit=3)}"
            ms = int(round(1000 * (time.perf_counter() - t0)))
            out.append(ScoreRecord(config.config_id, method, replicate, fdp, tpp, len(sel), ms,
                                   digest, err, sel))
    return out


def run_campaign(grid, methods=None, threads: int = 1, progress=None) -> list[ScoreRecord]:
    """Run every method on every replicate of every configuration.

    ``methods`` overrides the per-config method lists.  Replicates run in
    parallel when ``threads > 1``; the returned records are sorted by
    configuration (grid order), method and replicate, and do not depend on
    ``threads`` apart from ``runtime_ms``.
    """
    grid = list(grid)
    if not grid:
        raise InputError("the configuration grid is empty")
    if methods is not None:
        grid = [SimConfig.from_dict({**c.to_dict(), "methods": tuple(methods)}) for c in grid]
    ids = [c.config_id for c in grid]
    if len(set(ids)) != len(ids):
        raise InputError("the configuration grid contains duplicates")
    n_rep = max(c.n_sim for c in grid)
    tasks = [(grid, r) for r in range(n_rep)]
    records = []
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            for i, recs in enumerate(pool.map(_replicate_task, tasks)):
                records.extend(recs)
                if progress:
                    progress(i + 1, n_rep)
    else:
        for i, task in enumerate(tasks):
            records.extend(_replicate_task(task))
            if progress:
                progress(i + 1, n_rep)
    order = {cid: k for k, cid in enumerate(ids)}
    morder = {m: k for k, m in enumerate(METHODS)}
    records.sort(key=lambda r: (order[r.config_id], morder[r.method], r.replicate))
    return records


def expand_grid(spec: dict) -> list[SimConfig]:
    """Configs from ``{"base": {...}, "vary": {field: [values, ...]}}``.

    The Cartesian product of the ``vary`` lists is taken over the keys in
    sorted order, the last key varying fastest, so the grid does not depend
    on how the JSON object was written.
    """
    base = dict(spec.get("base", {}))
    vary = spec.get("vary", {})
    keys = sorted(vary)
    out = []
    for values in itertools.product(*(vary[k] for k in keys)):
        d = {**base, **dict(zip(keys, values))}
        if "methods" in d:
            d["methods"] = tuple(d["methods"])
        out.append(SimConfig.from_dict(d))
    return out


def summarize(records, grid) -> list[dict]:
    """Mean FDP/TPP with standard errors per (config, method)."""
    by_id = {c.config_id: c for c in grid}
    groups: dict = {}
    for r in records:
        groups.setdefault((r.config_id, r.method), []).append(r)
    rows = []
    for (cid, method), recs in groups.items():
        fdp = np.array([r.fdp for r in recs if r.error is None])
        tpp = np.array([r.tpp for r in recs if r.error is None])
        k = fdp.size
        c = by_id[cid]
        rows.append({
            "config_id": cid, "method": method, "cov_kind": c.cov_kind, "rho": c.rho,
            "p_b": c.p_b, "a": c.a, "n_ok": k, "n_failed": len(recs) - k,
            "mean_fdp": float(fdp.mean()) if k else float("nan"),
            "se_fdp": float(fdp.std(ddof=1) / np.sqrt(k)) if k > 1 else float("nan"),
            "mean_tpp": float(tpp.mean()) if k else float("nan"),
            "se_tpp": float(tpp.std(ddof=1) / np.sqrt(k)) if k > 1 else float("nan"),
        })
    return rows


def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and np.isnan(v)):
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_records(records, path, record_runtime: bool = False) -> None:
    """Campaign CSV; ``runtime_ms`` is left empty unless ``record_runtime``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in records:
            w.writerow([r.config_id, r.method, r.replicate, _fmt(r.fdp), _fmt(r.tpp),
                        r.selected_count, r.runtime_ms if record_runtime else ""])


def write_sidecar(records, grid, path) -> None:
    """Resolved configs, seeds, data digests and per-record errors as JSON."""
    digests: dict = {}
    errors = []
    for r in records:
        digests.setdefault(r.config_id, {})[str(r.replicate)] = r.data_digest
        if r.error:
            errors.append({"config_id": r.config_id, "method": r.method,
                           "replicate": r.replicate, "error": r.error.splitlines()[0]})
    doc = {
        "configs": {c.config_id: c.to_dict() for c in grid},
        "data_digests": digests,
        "errors": errors,
        "stream_convention": "stream_id = replicate * 2**20 + draw",
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def write_curves(summary, path) -> None:
    cols = ["config_id", "method", "cov_kind", "rho", "p_b", "a", "n_ok", "n_failed",
            "mean_fdp", "se_fdp", "mean_tpp", "se_tpp"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for row in summary:
            w.writerow([_fmt(row[c]) for c in cols])
