"""CSV ingestion with schema inference, and run manifests."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .data import Categorical, Continuous, MixedDataMatrix
from .errors import InputError
from .numeric import normal_score_transform

log = logging.getLogger(__name__)

MISSING = frozenset({"", "na", "nan", "null", "none", "."})
MAX_AUTO_LEVELS = 10
TYPES = ("continuous", "categorical", "auto")
TRANSFORMS = ("none", "normal_score")
ROLES = ("covariate", "response", "drop")


@dataclass(frozen=True)
class ColumnSchema:
    name: str
    declared_type: str = "auto"
    transform: str = "none"
    role: str = "covariate"

    def __post_init__(self):
        if self.declared_type not in TYPES:
            raise InputError(f"column {self.name!r}: type must be one of {TYPES}")
        if self.transform not in TRANSFORMS:
            raise InputError(f"column {self.name!r}: transform must be one of {TRANSFORMS}")
        if self.role not in ROLES:
            raise InputError(f"column {self.name!r}: role must be one of {ROLES}")

    @classmethod
    def from_dict(cls, d: dict) -> "ColumnSchema":
        d = dict(d)
        if "type" in d:
            d["declared_type"] = d.pop("type")
        try:
            return cls(**d)
        except TypeError as exc:
            raise InputError(f"bad schema entry {d}: {exc}") from None


@dataclass
class IngestReport:
    rows_read: int
    rows_dropped: int
    types: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def _is_missing(v: str) -> bool:
    return v.strip().lower() in MISSING


def _try_float(values):
    try:
        return np.array([float(v) for v in values])
    except ValueError:
        return None


def ingest_csv(path, response: str | None = None, schema=None):
    """Read a mixed-type CSV.

    Returns ``(data, y, report)``.  Column roles and types come from
    ``schema`` (a list of :class:`ColumnSchema` or dicts) where given; the
    response may also be named by ``response``.  Rows with a missing value
    in any used column are dropped.  ``auto`` columns become categorical
    when non-numeric or with at most 10 distinct values.  Categorical
    levels keep their first-appearance order.
    """
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except (OSError, UnicodeDecodeError, csv.Error) as exc:
        raise InputError(f"cannot read {path}: {exc}") from None
    if not rows or not rows[0]:
        raise InputError(f"{path} has no header row")
    header = [h.strip() for h in rows[0]]
    if len(set(header)) != len(header):
        raise InputError(f"{path} has duplicate column names")
    body = [r for r in rows[1:] if any(c.strip() for c in r)]
    for i, r in enumerate(body):
        if len(r) != len(header):
            raise InputError(f"{path}: data row {i + 1} has {len(r)} fields, header has {len(header)}")

    entries = {}
    for s in schema or ():
        s = s if isinstance(s, ColumnSchema) else ColumnSchema.from_dict(s)
        if s.name not in header:
            raise InputError(f"schema names column {s.name!r}, which is not in {path}")
        entries[s.name] = s
    if response is not None:
        if response not in header:
            raise InputError(f"response column {response!r} not found; columns are {header}")
        old = entries.get(response, ColumnSchema(response))
        entries[response] = ColumnSchema(response, old.declared_type, old.transform, "response")
    resp = [name for name, s in entries.items() if s.role == "response"]
    if len(resp) != 1:
        raise InputError("exactly one response column is required (use --response)")
    resp = resp[0]
    used = [h for h in header if entries.get(h, ColumnSchema(h)).role != "drop"]
    pos = {h: k for k, h in enumerate(header)}

    keep = [r for r in body if not any(_is_missing(r[pos[h]]) for h in used)]
    dropped = len(body) - len(keep)
    if dropped:
        log.warning("dropped %d of %d rows with missing values", dropped, len(body))
    if not keep:
        raise InputError(f"{path}: no rows left after removing missing values")

    report = IngestReport(len(body), dropped)
    y = _try_float([r[pos[resp]].strip() for r in keep])
    if y is None:
        raise InputError(f"response column {resp!r} must be numeric")
    if entries[resp].transform == "normal_score":
        y = normal_score_transform(y)
    cols = []
    for h in used:
        if h == resp:
            continue
        s = entries.get(h, ColumnSchema(h))
        raw = [r[pos[h]].strip() for r in keep]
        num = _try_float(raw)
        kind = s.declared_type
        if kind == "auto":
            kind = "categorical" if num is None or len(set(raw)) <= MAX_AUTO_LEVELS else "continuous"
        if kind == "continuous":
            if num is None:
                raise InputError(f"column {h!r} is declared continuous but has non-numeric values")
            if s.transform == "normal_score":
                num = normal_score_transform(num)
            cols.append(Continuous(h, num))
        else:
            if s.transform != "none":
                raise InputError(f"column {h!r}: transforms apply to continuous columns only")
            col = Categorical.from_labels(h, raw)
            if col.n_levels < 2:
                raise InputError(f"categorical column {h!r} has a single level; drop it")
            cols.append(col)
        report.types[h] = kind
    if not cols:
        raise InputError("no covariate columns")
    return MixedDataMatrix(tuple(cols)), y, report


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    """Everything needed to repeat a command; timestamps live only here."""

    command: str
    config: dict
    master_seed: int
    input_digests: dict
    tool_version: str = __version__
    timing: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)

    def write(self, path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")

    @classmethod
    def read(cls, path) -> "RunManifest":
        try:
            d = json.loads(Path(path).read_text())
            return cls(**d)
        except (OSError, ValueError, TypeError) as exc:
            raise InputError(f"cannot read manifest {path}: {exc}") from None
