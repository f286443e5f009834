"""Ordinary least squares forecasters for the concrete-strength case study.

Predictors use the v-indexing v1..v8 (0-based here: v1 is index 0)::

    v1 Cement             v5 Superplasticizer
    v2 Coarse Aggregate   v6 Fine Aggregate
    v3 Fly Ash            v7 Blast Furnace Slag
    v4 Water              v8 Age

The source CSV lists columns in UCI order and is mapped by name.
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DatasetFormatError, IndexOutOfRange, RankDeficientDesign, TooFewRows

PREDICTOR_NAMES = (
    "Cement",
    "Coarse Aggregate",
    "Fly Ash",
    "Water",
    "Superplasticizer",
    "Fine Aggregate",
    "Blast Furnace Slag",
    "Age",
)
OUTCOME_NAME = "Compressive Strength"
COLUMN_NAMES = PREDICTOR_NAMES + (OUTCOME_NAME,)

UCI_ORDER = (
    "Cement",
    "Blast Furnace Slag",
    "Fly Ash",
    "Water",
    "Superplasticizer",
    "Coarse Aggregate",
    "Fine Aggregate",
    "Age",
    "Compressive Strength",
)

# header keyword -> canonical name; checked against a normalized header cell
_HEADER_KEYS = {
    "cement": "Cement",
    "blast furnace slag": "Blast Furnace Slag",
    "slag": "Blast Furnace Slag",
    "fly ash": "Fly Ash",
    "water": "Water",
    "superplasticizer": "Superplasticizer",
    "coarse aggregate": "Coarse Aggregate",
    "fine aggregate": "Fine Aggregate",
    "age": "Age",
    "strength": "Compressive Strength",
}

MODELS = {
    "M1": (0, 1, 2, 3),
    "M2": (4, 5, 6, 7),
    "M3": (2, 3, 4, 5),
    "MF": (0, 1, 2, 3, 4, 5, 6, 7),
}

RANK_RTOL = 1e-10


@dataclass(frozen=True)
class Dataset:
    """K rows of the eight predictors (v-order) and the outcome."""

    predictors: np.ndarray
    outcome: np.ndarray
    column_names: tuple = COLUMN_NAMES

    def __post_init__(self):
        x = np.array(self.predictors, dtype=float)
        y = np.array(self.outcome, dtype=float).reshape(-1)
        if x.ndim != 2 or x.shape[0] != y.size:
            raise DatasetFormatError("predictor matrix and outcome length disagree")
        if y.size == 0:
            raise DatasetFormatError("dataset has no rows")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise DatasetFormatError("dataset contains non-finite values")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "predictors", x)
        object.__setattr__(self, "outcome", y)

    @property
    def n_rows(self) -> int:
        return self.outcome.size


@dataclass(frozen=True)
class LinearModel:
    predictor_indices: tuple
    coefficients: np.ndarray
    rss: float
    condition: float

    @property
    def intercept(self) -> float:
        return float(self.coefficients[0])

    @property
    def slopes(self) -> np.ndarray:
        return self.coefficients[1:]


def _canonical(header_cell: str) -> str | None:
    text = re.sub(r"\s+", " ", re.sub(r"[_\-]", " ", header_cell.lower())).strip()
    # longer keys first so "blast furnace slag" wins over "slag"
    for key in sorted(_HEADER_KEYS, key=len, reverse=True):
        if re.search(rf"\b{key}\b", text):
            return _HEADER_KEYS[key]
    return None


def load_concrete_csv(path, require_positive_outcome: bool = True) -> Dataset:
    """Read the nine-column concrete CSV; columns are matched by name."""
    path = Path(path)
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DatasetFormatError(f"{path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetFormatError(f"{path}: empty file") from None
        names = [_canonical(h) for h in header]
        missing = [n for n in COLUMN_NAMES if names.count(n) == 0]
        dupes = sorted({n for n in names if n is not None and names.count(n) > 1})
        if missing or dupes or len(header) != 9:
            raise DatasetFormatError(
                f"{path}: expected 9 columns named {', '.join(UCI_ORDER)}; "
                f"missing {missing}, duplicated {dupes}"
            )
        position = {n: names.index(n) for n in COLUMN_NAMES}
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 9:
                raise DatasetFormatError(f"{path}:{lineno}: expected 9 fields, got {len(row)}")
            try:
                rows.append([float(row[position[n]]) for n in COLUMN_NAMES])
            except ValueError as exc:
                raise DatasetFormatError(f"{path}:{lineno}: {exc}") from None
    if not rows:
        raise DatasetFormatError(f"{path}: no data rows")
    data = np.array(rows)
    if require_positive_outcome and np.any(data[:, 8] <= 0.0):
        raise DatasetFormatError(f"{path}: compressive strength must be positive")
    return Dataset(data[:, :8], data[:, 8])


def write_concrete_csv(d: Dataset, path):
    """Write ``d`` in UCI column order (the inverse of ``load_concrete_csv``)."""
    position = {n: i for i, n in enumerate(COLUMN_NAMES)}
    full = np.column_stack([d.predictors, d.outcome])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(UCI_ORDER)
        for row in full:
            w.writerow([repr(float(row[position[n]])) for n in UCI_ORDER])


def _rows(d: Dataset, row_mask) -> np.ndarray:
    if row_mask is None:
        return np.arange(d.n_rows)
    mask = np.asarray(row_mask)
    if mask.dtype == bool:
        if mask.size != d.n_rows:
            raise IndexOutOfRange("boolean row mask has the wrong length")
        return np.flatnonzero(mask)
    mask = mask.astype(int).reshape(-1)
    if mask.size and (mask.min() < 0 or mask.max() >= d.n_rows):
        raise IndexOutOfRange("row index out of range")
    return mask


def _check_indices(d: Dataset, predictor_indices) -> tuple:
    idx = tuple(int(i) for i in predictor_indices)
    if len(set(idx)) != len(idx):
        raise ValueError("predictor indices must be distinct")
    if any(i < 0 or i >= d.predictors.shape[1] for i in idx):
        raise IndexOutOfRange(f"predictor index out of range in {idx}")
    return idx


def design_matrix(d: Dataset, predictor_indices, rows) -> np.ndarray:
    return np.column_stack([np.ones(len(rows)), d.predictors[np.ix_(rows, list(predictor_indices))]])


def fit_ols(d: Dataset, predictor_indices, row_mask=None) -> LinearModel:
    """Least squares with intercept via Householder QR."""
    idx = _check_indices(d, predictor_indices)
    rows = _rows(d, row_mask)
    if rows.size < len(idx) + 2:
        raise TooFewRows(f"{rows.size} rows for {len(idx)} predictors plus intercept")
    a = design_matrix(d, idx, rows)
    y = d.outcome[rows]
    qm, r = np.linalg.qr(a, mode="reduced")
    diag = np.abs(np.diag(r))
    if diag.min() <= RANK_RTOL * diag.max():
        raise RankDeficientDesign(
            f"design is rank deficient (|R_ii| range {diag.min():.3e} .. {diag.max():.3e})"
        )
    coef = np.linalg.solve(r, qm.T @ y)
    # one step of iterative refinement against the original design
    resid = y - a @ coef
    coef = coef + np.linalg.solve(r, qm.T @ resid)
    resid = y - a @ coef
    return LinearModel(
        predictor_indices=idx,
        coefficients=coef,
        rss=float(resid @ resid),
        condition=float(np.linalg.cond(r)),
    )


def predict(m: LinearModel, d: Dataset, row_mask=None) -> np.ndarray:
    _check_indices(d, m.predictor_indices)
    rows = _rows(d, row_mask)
    return m.intercept + d.predictors[np.ix_(rows, list(m.predictor_indices))] @ m.slopes
