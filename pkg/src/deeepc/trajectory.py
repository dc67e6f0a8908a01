"""Trajectory data model, CSV ingestion, normalization, and windowing."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from deeepc.errors import (
    DimensionMismatch,
    EmptyFile,
    InsufficientHistory,
    LengthMismatch,
    MissingColumn,
    NonNumericCell,
)


def _fmt(x: float) -> str:
    # repr gives the shortest string that round-trips the float exactly,
    # which keeps CSV output byte-stable across runs
    return repr(float(x))


@dataclass(frozen=True)
class Trajectory:
    """Time-indexed sequence of fixed-dimension vectors.

    values has one row per time step; dt is the sampling interval in seconds.
    """

    values: np.ndarray
    dt: float
    labels: tuple[str, ...] = ()

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2 or values.shape[0] < 1:
            raise DimensionMismatch(f"expected a non-empty 2-D array, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("trajectory contains non-finite entries")
        if self.dt <= 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        if not self.labels:
            object.__setattr__(
                self, "labels", tuple(f"x{i}" for i in range(values.shape[1]))
            )
        elif len(self.labels) != values.shape[1]:
            raise DimensionMismatch("label count does not match column count")

    @property
    def n_steps(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def window(self, start: int, stop: int) -> "Trajectory":
        return Trajectory(self.values[start:stop].copy(), self.dt, self.labels)


def window_ini(t: Trajectory, k: int, t_ini: int) -> Trajectory:
    """Return the T_ini rows immediately preceding time index k."""
    if t_ini < 1:
        raise ValueError("T_ini must be >= 1")
    if k < t_ini:
        raise InsufficientHistory(f"need {t_ini} steps of history, have {k}")
    return t.window(k - t_ini, k)


@dataclass(frozen=True)
class Dataset:
    """Open-loop input/output/cost data with a hankel/train row split."""

    u: Trajectory
    y: Trajectory
    c: Trajectory
    hankel_rows: int

    def __post_init__(self):
        n = self.u.n_steps
        if self.y.n_steps != n or self.c.n_steps != n:
            raise LengthMismatch("u, y, c must have equal row counts")
        if not (self.u.dt == self.y.dt == self.c.dt):
            raise LengthMismatch("u, y, c must share the same dt")
        if self.c.dim != 1:
            raise DimensionMismatch("cost trajectory must have one column")
        if not (1 <= self.hankel_rows <= n):
            raise ValueError(f"hankel_rows={self.hankel_rows} out of range for {n} rows")

    @property
    def n_steps(self) -> int:
        return self.u.n_steps

    def hankel_split(self) -> "Dataset":
        T = self.hankel_rows
        return Dataset(self.u.window(0, T), self.y.window(0, T), self.c.window(0, T), T)

    def train_split(self) -> "Dataset":
        T, n = self.hankel_rows, self.n_steps
        if T == n:
            raise ValueError("dataset has no training rows beyond the hankel split")
        m = n - T
        return Dataset(self.u.window(T, n), self.y.window(T, n), self.c.window(T, n), m)


@dataclass(frozen=True)
class Normalizer:
    """Per-column affine normalization x -> (x - shift) / scale."""

    shift: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        shift = np.asarray(self.shift, dtype=float)
        scale = np.asarray(self.scale, dtype=float)
        if shift.shape != scale.shape or shift.ndim != 1:
            raise DimensionMismatch("shift and scale must be 1-D with equal length")
        if np.any(scale <= 0):
            raise ValueError("scale entries must be positive")
        shift.setflags(write=False)
        scale.setflags(write=False)
        object.__setattr__(self, "shift", shift)
        object.__setattr__(self, "scale", scale)

    def normalize(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.shift) / self.scale

    def denormalize(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=float) * self.scale + self.shift


SCALE_FLOOR = 1e-8


def fit_normalizer(values: np.ndarray) -> Normalizer:
    """Per-column mean/std normalizer; std floored so constant columns survive."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise ValueError("cannot fit a normalizer on empty data")
    shift = values.mean(axis=0)
    scale = values.std(axis=0, ddof=1) if values.shape[0] > 1 else np.zeros(values.shape[1])
    scale = np.maximum(scale, SCALE_FLOOR)
    return Normalizer(shift, scale)


@dataclass(frozen=True)
class ColumnSchema:
    """Maps CSV header names to signal roles."""

    u_cols: tuple[str, ...]
    y_cols: tuple[str, ...]
    c_col: str
    dt: float = 1.0
    hankel_rows: int | None = field(default=None)


def load_csv(path: str, schema: ColumnSchema) -> Dataset:
    """Parse a one-header-line CSV into a validated Dataset."""
    with open(path, "r", newline="") as fh:
        return _parse_csv(fh, schema)


def loads_csv(text: str, schema: ColumnSchema) -> Dataset:
    return _parse_csv(io.StringIO(text), schema)


def _parse_csv(fh, schema: ColumnSchema) -> Dataset:
    reader = csv.reader(fh)
    try:
        header = next(reader)
    except StopIteration:
        raise EmptyFile("file has no header row")
    header = [h.strip() for h in header]
    wanted = list(schema.u_cols) + list(schema.y_cols) + [schema.c_col]
    for col in wanted:
        if col not in header:
            raise MissingColumn(col)
    idx = {col: header.index(col) for col in wanted}

    rows: list[list[float]] = []
    for r, rec in enumerate(reader):
        if not rec or all(not cell.strip() for cell in rec):
            continue
        vals = []
        for col in wanted:
            cell = rec[idx[col]].strip()
            try:
                v = float(cell)
            except ValueError:
                raise NonNumericCell(r, col, cell)
            if not np.isfinite(v):
                raise NonNumericCell(r, col, cell)
            vals.append(v)
        rows.append(vals)
    if not rows:
        raise EmptyFile("file has no data rows")

    data = np.array(rows, dtype=float)
    nu, ny = len(schema.u_cols), len(schema.y_cols)
    u = Trajectory(data[:, :nu], schema.dt, tuple(schema.u_cols))
    y = Trajectory(data[:, nu : nu + ny], schema.dt, tuple(schema.y_cols))
    c = Trajectory(data[:, nu + ny :], schema.dt, (schema.c_col,))
    hankel_rows = schema.hankel_rows if schema.hankel_rows is not None else data.shape[0]
    return Dataset(u, y, c, hankel_rows)


def save_csv(path: str, d: Dataset) -> None:
    """Write a Dataset back to CSV; exact float round-trip via repr formatting."""
    header = list(d.u.labels) + list(d.y.labels) + list(d.c.labels)
    mat = np.hstack([d.u.values, d.y.values, d.c.values])
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in mat:
            fh.write(",".join(_fmt(v) for v in row) + "\n")
