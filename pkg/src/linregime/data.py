"""Dataset container, CSV ingestion and the linear decision rule.

A dataset holds an n x l covariate matrix (optionally with a leading
constant-1 column), a binary treatment vector and a scalar outcome vector.
Regimes are indexed by a unit-norm coefficient vector: treat exactly when
the covariate projection onto the coefficients is strictly positive.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import DataError

UNIT_NORM_TOL = 1e-10


@dataclass(frozen=True)
class ColumnConfig:
    """Column-role mapping for CSV ingestion.

    ``covariates`` lists the covariate columns in the order they should
    appear in the design matrix (after the optional constant column).
    """

    outcome: str
    treatment: str
    covariates: list[str]
    intercept: bool = True
    standardize: bool = False

    def __post_init__(self):
        if not self.covariates:
            raise DataError("config must name at least one covariate column")
        names = [self.outcome, self.treatment, *self.covariates]
        if len(set(names)) != len(names):
            raise DataError("column roles overlap: %r" % (names,))

    @classmethod
    def from_json(cls, path: str | Path) -> "ColumnConfig":
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
        return cls(
            outcome=raw["outcome"],
            treatment=raw["treatment"],
            covariates=list(raw["covariates"]),
            intercept=bool(raw.get("intercept", True)),
            standardize=bool(raw.get("standardize", False)),
        )


@dataclass(frozen=True)
class Dataset:
    """Immutable observational sample (covariates, binary treatment, outcome).

    ``standardization`` maps covariate name -> (mean, sd) for columns that
    were rescaled at load time, so reports can translate coefficients back
    to the original units.
    """

    covariates: np.ndarray
    treatments: np.ndarray
    outcomes: np.ndarray
    column_names: tuple[str, ...]
    has_intercept: bool = False
    standardization: dict[str, tuple[float, float]] | None = None

    def __post_init__(self):
        cov = np.ascontiguousarray(np.asarray(self.covariates, dtype=np.float64))
        trt = np.asarray(self.treatments)
        out = np.asarray(self.outcomes, dtype=np.float64)
        if cov.ndim != 2:
            raise DataError("covariates must be a 2-d matrix")
        n = cov.shape[0]
        if n < 1:
            raise DataError("dataset must contain at least one observation")
        if trt.shape != (n,) or out.shape != (n,):
            raise DataError(
                "component lengths disagree: covariates %d, treatments %d, outcomes %d"
                % (n, trt.shape[0] if trt.ndim == 1 else -1, out.shape[0] if out.ndim == 1 else -1)
            )
        if not np.all(np.isin(trt, (0, 1))):
            bad = int(np.flatnonzero(~np.isin(trt, (0, 1)))[0])
            raise DataError("non-binary treatment at row %d: %r" % (bad + 1, trt[bad]))
        trt = trt.astype(np.int64)
        if not np.all(np.isfinite(cov)):
            raise DataError("covariates contain non-finite values")
        if not np.all(np.isfinite(out)):
            raise DataError("outcomes contain non-finite values")
        if len(self.column_names) != cov.shape[1]:
            raise DataError("column_names length does not match covariate count")
        if self.has_intercept and not np.all(cov[:, 0] == 1.0):
            raise DataError("intercept requested but column 0 is not identically 1")
        for arr in (cov, trt, out):
            arr.setflags(write=False)
        object.__setattr__(self, "covariates", cov)
        object.__setattr__(self, "treatments", trt)
        object.__setattr__(self, "outcomes", out)
        object.__setattr__(self, "column_names", tuple(self.column_names))

    @property
    def n(self) -> int:
        return self.covariates.shape[0]

    @property
    def n_covariates(self) -> int:
        return self.covariates.shape[1]

    def subset(self, indices: np.ndarray) -> "Dataset":
        """Row-subset copy (used by resampling); preserves metadata."""
        return Dataset(
            covariates=self.covariates[indices],
            treatments=self.treatments[indices],
            outcomes=self.outcomes[indices],
            column_names=self.column_names,
            has_intercept=self.has_intercept,
            standardization=self.standardization,
        )


@dataclass(frozen=True)
class RegimeParameter:
    """Unit-norm coefficient vector indexing a linear regime."""

    coef: np.ndarray

    def __post_init__(self):
        coef = np.asarray(self.coef, dtype=np.float64)
        if coef.ndim != 1 or coef.size < 1:
            raise DataError("regime coefficients must be a non-empty vector")
        norm = float(np.linalg.norm(coef))
        if abs(norm - 1.0) > UNIT_NORM_TOL:
            raise DataError("regime coefficients must have unit norm (got %.12g)" % norm)
        coef.setflags(write=False)
        object.__setattr__(self, "coef", coef)

    @classmethod
    def normalized(cls, vec) -> "RegimeParameter":
        vec = np.asarray(vec, dtype=np.float64)
        norm = float(np.linalg.norm(vec))
        if norm == 0.0 or not math.isfinite(norm):
            raise DataError("cannot normalize a zero or non-finite coefficient vector")
        return cls(vec / norm)

    @property
    def dim(self) -> int:
        return self.coef.size


def _coef_array(regime) -> np.ndarray:
    if isinstance(regime, RegimeParameter):
        return regime.coef
    return np.asarray(regime, dtype=np.float64)


def decide(x, regime) -> int:
    """Treatment decision for one covariate vector: 1 iff x'coef > 0.

    Projections exactly on the boundary map to 0, so ties are deterministic.
    """
    x = np.asarray(x, dtype=np.float64)
    coef = _coef_array(regime)
    if x.shape != coef.shape:
        raise DataError("dimension mismatch: x has %d entries, coefficients %d" % (x.size, coef.size))
    return int(float(x @ coef) > 0.0)


def decisions(covariates: np.ndarray, regime) -> np.ndarray:
    """Vectorized `decide` over the rows of a covariate matrix."""
    cov = np.asarray(covariates, dtype=np.float64)
    coef = _coef_array(regime)
    if cov.shape[1] != coef.size:
        raise DataError("dimension mismatch: %d covariate columns, %d coefficients" % (cov.shape[1], coef.size))
    return (cov @ coef > 0.0).astype(np.int64)


@dataclass(frozen=True)
class OverlapReport:
    """Counts of propensity estimates outside the acceptable overlap band."""

    n: int
    bounds: tuple[float, float]
    n_below: int
    n_above: int
    violation_indices: np.ndarray = field(repr=False)

    @property
    def n_violations(self) -> int:
        return self.n_below + self.n_above

    @property
    def ok(self) -> bool:
        return self.n_violations == 0

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "bounds": list(self.bounds),
            "n_below": self.n_below,
            "n_above": self.n_above,
            "n_violations": self.n_violations,
        }


def validate_overlap(e_hat, bounds: tuple[float, float] = (0.01, 0.99)) -> OverlapReport:
    """Diagnostic scan for estimated propensities outside [c1, c2].

    Purely informational: it never mutates or raises on violations.
    """
    c1, c2 = bounds
    if not (0.0 < c1 < c2 < 1.0):
        raise DataError("overlap bounds must satisfy 0 < c1 < c2 < 1")
    e = np.asarray(e_hat, dtype=np.float64)
    below = e < c1
    above = e > c2
    return OverlapReport(
        n=e.size,
        bounds=(float(c1), float(c2)),
        n_below=int(below.sum()),
        n_above=int(above.sum()),
        violation_indices=np.flatnonzero(below | above),
    )


def load_csv(path: str | Path, config: ColumnConfig) -> Dataset:
    """Parse a headered CSV into a validated Dataset.

    Cell-level problems are reported with their data-row (1-based) and
    column name. Standardization, when requested, maps each non-intercept
    covariate to sample mean 0 and sample standard deviation 1 (ddof=1),
    recording the affine map on the returned dataset.
    """
    path = Path(path)
    if not path.exists():
        raise DataError("file not found: %s" % path)
    with open(path, newline="", encoding="utf-8-sig") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError("empty file: %s" % path) from None
        header = [h.strip() for h in header]
        col_index = {}
        for name in [config.outcome, config.treatment, *config.covariates]:
            if name not in header:
                raise DataError("missing column %r in %s" % (name, path.name))
            col_index[name] = header.index(name)

        y_rows, a_rows, x_rows = [], [], []
        for row_no, row in enumerate(reader, start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError("row %d has %d cells, expected %d" % (row_no, len(row), len(header)))

            def cell(name: str) -> float:
                raw = row[col_index[name]].strip()
                try:
                    return float(raw)
                except ValueError:
                    raise DataError(
                        "non-numeric cell at row %d, column %r: %r" % (row_no, name, raw)
                    ) from None

            a_val = cell(config.treatment)
            if a_val not in (0.0, 1.0):
                raise DataError("non-binary treatment at row %d: %r" % (row_no, a_val))
            y_rows.append(cell(config.outcome))
            a_rows.append(int(a_val))
            x_rows.append([cell(name) for name in config.covariates])

    if not y_rows:
        raise DataError("empty file: %s has a header but no data rows" % path.name)

    x = np.asarray(x_rows, dtype=np.float64)
    standardization = None
    if config.standardize:
        standardization = {}
        for j, name in enumerate(config.covariates):
            mean = float(np.mean(x[:, j]))
            sd = float(np.std(x[:, j], ddof=1)) if x.shape[0] > 1 else 0.0
            if sd == 0.0:
                raise DataError("cannot standardize constant column %r" % name)
            x[:, j] = (x[:, j] - mean) / sd
            standardization[name] = (mean, sd)

    names = list(config.covariates)
    if config.intercept:
        x = np.hstack([np.ones((x.shape[0], 1)), x])
        names = ["intercept"] + names

    return Dataset(
        covariates=x,
        treatments=np.asarray(a_rows, dtype=np.int64),
        outcomes=np.asarray(y_rows, dtype=np.float64),
        column_names=tuple(names),
        has_intercept=config.intercept,
        standardization=standardization,
    )
