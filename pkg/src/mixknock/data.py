"""Typed covariate tables with continuous and categorical columns."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .errors import DimensionMismatch, InputError


@dataclass(frozen=True)
class Continuous:
    name: str
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1:
            raise DimensionMismatch(f"column {self.name!r} must be one-dimensional")
        if not np.all(np.isfinite(v)):
            raise InputError(f"column {self.name!r} has non-finite values")
        object.__setattr__(self, "values", v)

    def __len__(self):
        return self.values.size

    def take(self, rows) -> "Continuous":
        return Continuous(self.name, self.values[rows])


@dataclass(frozen=True)
class Categorical:
    """Factor column stored as integer codes into ``levels``.

    ``levels[0]`` is the reference level for treatment coding.
    """

    name: str
    codes: np.ndarray
    levels: tuple

    def __post_init__(self):
        c = np.asarray(self.codes)
        if c.ndim != 1:
            raise DimensionMismatch(f"column {self.name!r} must be one-dimensional")
        c = c.astype(np.int64)
        if len(self.levels) < 2:
            raise InputError(f"categorical column {self.name!r} needs at least 2 levels")
        if len(set(self.levels)) != len(self.levels):
            raise InputError(f"categorical column {self.name!r} has duplicate levels")
        if c.size and (c.min() < 0 or c.max() >= len(self.levels)):
            raise InputError(f"codes of column {self.name!r} fall outside its level set")
        object.__setattr__(self, "codes", c)
        object.__setattr__(self, "levels", tuple(self.levels))

    @classmethod
    def from_labels(cls, name: str, labels: Sequence) -> "Categorical":
        """Build from raw labels; levels are kept in first-appearance order."""
        levels: dict = {}
        codes = np.empty(len(labels), dtype=np.int64)
        for i, lab in enumerate(labels):
            codes[i] = levels.setdefault(lab, len(levels))
        return cls(name, codes, tuple(levels))

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    def labels(self) -> np.ndarray:
        return np.asarray(self.levels, dtype=object)[self.codes]

    def one_hot(self) -> np.ndarray:
        out = np.zeros((self.codes.size, self.n_levels))
        out[np.arange(self.codes.size), self.codes] = 1.0
        return out

    def __len__(self):
        return self.codes.size

    def take(self, rows) -> "Categorical":
        return Categorical(self.name, self.codes[rows], self.levels)


Column = Union[Continuous, Categorical]


@dataclass(frozen=True)
class MixedDataMatrix:
    columns: tuple
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        cols = tuple(self.columns)
        if not cols:
            raise InputError("a data matrix needs at least one column")
        n = len(cols[0])
        names = [c.name for c in cols]
        if len(set(names)) != len(names):
            raise InputError("column names must be unique")
        for c in cols:
            if len(c) != n:
                raise DimensionMismatch(f"column {c.name!r} has length {len(c)}, expected {n}")
        object.__setattr__(self, "columns", cols)

    @classmethod
    def from_array(cls, X, names=None) -> "MixedDataMatrix":
        """All-continuous matrix from an ``n x p`` array."""
        X = np.asarray(X, dtype=float)
        if X.ndim != 2:
            raise DimensionMismatch("expected a 2-d array")
        if names is None:
            names = [f"X{j + 1}" for j in range(X.shape[1])]
        return cls(tuple(Continuous(nm, X[:, j].copy()) for j, nm in enumerate(names)))

    @property
    def n(self) -> int:
        return len(self.columns[0])

    @property
    def p(self) -> int:
        return len(self.columns)

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    def is_categorical(self, j: int) -> bool:
        return isinstance(self.columns[j], Categorical)

    @property
    def all_continuous(self) -> bool:
        return not any(isinstance(c, Categorical) for c in self.columns)

    def schema(self) -> list[tuple]:
        """Column names with types and level sets, for structural comparison."""
        return [
            (c.name, "categorical", c.levels) if isinstance(c, Categorical) else (c.name, "continuous", None)
            for c in self.columns
        ]

    def numeric(self) -> np.ndarray:
        """``n x p`` float matrix; categorical labels must themselves be numbers."""
        out = np.empty((self.n, self.p))
        for j, c in enumerate(self.columns):
            if isinstance(c, Continuous):
                out[:, j] = c.values
            else:
                try:
                    lv = np.asarray(c.levels, dtype=float)
                except (TypeError, ValueError):
                    raise InputError(
                        f"categorical column {c.name!r} has non-numeric levels; no numeric coding"
                    ) from None
                out[:, j] = lv[c.codes]
        return out

    def encode(self, columns: Sequence[int] | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Treatment-coded design matrix.

        Returns ``(D, groups)`` where ``groups[k]`` is the index (into this
        matrix) of the variable that design column ``k`` came from.
        Categorical columns contribute ``K - 1`` indicator columns, the first
        level being the reference.
        """
        idx = range(self.p) if columns is None else columns
        blocks, groups = [], []
        for j in idx:
            c = self.columns[j]
            if isinstance(c, Continuous):
                blocks.append(c.values[:, None])
                groups.append(j)
            else:
                blocks.append(c.one_hot()[:, 1:])
                groups.extend([j] * (c.n_levels - 1))
        if not blocks:
            return np.empty((self.n, 0)), np.empty(0, dtype=np.int64)
        return np.hstack(blocks), np.asarray(groups, dtype=np.int64)

    def take_rows(self, rows) -> "MixedDataMatrix":
        return MixedDataMatrix(tuple(c.take(rows) for c in self.columns), dict(self.meta))

    def with_column(self, j: int, column: Column) -> "MixedDataMatrix":
        cols = list(self.columns)
        cols[j] = column
        return MixedDataMatrix(tuple(cols), dict(self.meta))

    def compatible_with(self, other: "MixedDataMatrix") -> bool:
        if self.n != other.n or self.p != other.p:
            return False
        for a, b in zip(self.columns, other.columns):
            if type(a) is not type(b):
                return False
            if isinstance(a, Categorical) and a.levels != b.levels:
                return False
        return True


def rename_columns(data: MixedDataMatrix, suffix: str) -> MixedDataMatrix:
    cols = []
    for c in data.columns:
        if isinstance(c, Continuous):
            cols.append(Continuous(c.name + suffix, c.values))
        else:
            cols.append(Categorical(c.name + suffix, c.codes, c.levels))
    return MixedDataMatrix(tuple(cols))


def as_response(y) -> np.ndarray:
    """Coerce a response to a float vector or raise."""
    y = np.asarray(y, dtype=float)
    if y.ndim != 1:
        raise DimensionMismatch("response must be one-dimensional")
    if not np.all(np.isfinite(y)):
        raise InputError("response has non-finite values")
    return y
