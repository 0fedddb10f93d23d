"""Flat sample tables.

A SampleTable is an ordered set of equal-length float columns, one row per
joint draw. Vector-valued variables occupy consecutive columns named
``name__0, name__1, ...``. The per-row loss of the predictor under audit
lives in the reserved column ``__loss``; estimators require it, simulators
produce it.

CSV round trips preserve column order and values to full double precision.
Missing values are never imputed: a hole in the data is an error that names
the row and column.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import ConfigError

LOSS_COLUMN = "__loss"


@dataclass
class SampleTable:
    """Equal-length float columns keyed by name, insertion-ordered."""

    columns: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        clean: dict[str, np.ndarray] = {}
        n = None
        for name, values in self.columns.items():
            arr = np.asarray(values, dtype=float).reshape(-1)
            if n is None:
                n = arr.shape[0]
            elif arr.shape[0] != n:
                raise ConfigError(
                    f"column {name!r} has {arr.shape[0]} rows, expected {n}"
                )
            bad = np.flatnonzero(~np.isfinite(arr))
            if bad.size:
                raise ConfigError(
                    f"column {name!r} has a missing or non-finite value at row {int(bad[0])}"
                )
            clean[name] = arr
        self.columns = clean

    @property
    def n(self) -> int:
        for arr in self.columns.values():
            return arr.shape[0]
        return 0

    @property
    def names(self) -> list[str]:
        return list(self.columns.keys())

    def column(self, name: str) -> np.ndarray:
        if name not in self.columns:
            raise ConfigError(f"table has no column {name!r}; columns are {self.names}")
        return self.columns[name]

    def matrix(self, names: list[str]) -> np.ndarray:
        """Columns stacked as (n, len(names))."""
        if not names:
            return np.zeros((self.n, 0))
        return np.column_stack([self.column(name) for name in names])

    @property
    def loss(self) -> np.ndarray:
        if LOSS_COLUMN not in self.columns:
            raise ConfigError(
                f"table has no {LOSS_COLUMN!r} column; estimators need the per-row loss"
            )
        return self.columns[LOSS_COLUMN]

    def with_column(self, name: str, values) -> "SampleTable":
        cols = dict(self.columns)
        cols[name] = values
        return SampleTable(cols)

    def take(self, index) -> "SampleTable":
        return SampleTable({name: arr[index] for name, arr in self.columns.items()})

    def to_csv(self, path) -> None:
        pd.DataFrame(self.columns).to_csv(path, index=False, float_format="%.17g")

    @staticmethod
    def from_csv(path, require_loss: bool = True) -> "SampleTable":
        try:
            frame = pd.read_csv(path, float_precision="round_trip")
        except pd.errors.ParserError as err:
            raise ConfigError(f"malformed CSV {path}: {err}") from err
        for name in frame.columns:
            col = pd.to_numeric(frame[name], errors="coerce")
            bad = np.flatnonzero(col.isna().to_numpy())
            if bad.size:
                raise ConfigError(
                    f"CSV {path}: column {name!r} row {int(bad[0])} is missing or non-numeric"
                )
            frame[name] = col
        table = SampleTable({name: frame[name].to_numpy(dtype=float) for name in frame.columns})
        if require_loss and LOSS_COLUMN not in table.columns:
            raise ConfigError(f"CSV {path} lacks the required {LOSS_COLUMN!r} column")
        return table
