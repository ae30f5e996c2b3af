"""Panel data model, CSV ingestion, and design-matrix construction.

The estimation substrate is a two-period panel: pre/post outcomes, a binary
treatment indicator, and named covariate columns. Design matrices always
carry an intercept in column 0 and are rank-checked at build time.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import (
    InvalidSpec,
    MissingColumn,
    NonBinaryTreatment,
    NonFiniteValue,
    RankDeficient,
    UnknownTerm,
    ValidationError,
)

RANK_RTOL = 1e-10


@dataclass(frozen=True)
class PanelDataset:
    """Per-unit pre/post outcomes, treatment indicator, and covariates.

    All columns share length n >= 2 and contain only finite values. A
    constant treatment column is allowed here; estimators reject it when
    they actually need both groups.
    """

    y0: np.ndarray
    y1: np.ndarray
    d: np.ndarray
    covariates: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "y0", np.asarray(self.y0, dtype=np.float64))
        object.__setattr__(self, "y1", np.asarray(self.y1, dtype=np.float64))
        object.__setattr__(self, "d", np.asarray(self.d, dtype=np.float64))
        covs = {k: np.asarray(v, dtype=np.float64) for k, v in self.covariates.items()}
        object.__setattr__(self, "covariates", covs)
        n = self.y0.shape[0]
        if n < 2:
            raise ValidationError("dataset needs at least 2 rows")
        for name, col in [("y0", self.y0), ("y1", self.y1), ("d", self.d)] + list(covs.items()):
            if col.shape != (n,):
                raise ValidationError(f"column '{name}' has length {col.shape[0]}, expected {n}")
            if not np.all(np.isfinite(col)):
                row = int(np.flatnonzero(~np.isfinite(col))[0])
                raise NonFiniteValue(f"non-finite value in column '{name}', row {row}")
        bad = np.flatnonzero((self.d != 0.0) & (self.d != 1.0))
        if bad.size:
            raise NonBinaryTreatment(
                f"treatment column contains {self.d[bad[0]]!r} at row {int(bad[0])}; expected 0 or 1"
            )

    @property
    def n(self) -> int:
        return self.y0.shape[0]

    @property
    def dy(self) -> np.ndarray:
        """Outcome evolution y1 - y0."""
        return self.y1 - self.y0

    @property
    def n_treat(self) -> int:
        return int(self.d.sum())

    @property
    def n_control(self) -> int:
        return self.n - self.n_treat

    def permuted(self, order: np.ndarray) -> "PanelDataset":
        """Row-permuted copy (estimators should be invariant to this)."""
        return PanelDataset(
            self.y0[order],
            self.y1[order],
            self.d[order],
            {k: v[order] for k, v in self.covariates.items()},
        )

    def to_csv(self, path) -> None:
        """Echo the dataset as CSV with shortest round-trip float formatting."""
        names = ["y0", "y1", "d"] + list(self.covariates)
        cols = [self.y0, self.y1, self.d] + list(self.covariates.values())
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(names)
            for i in range(self.n):
                writer.writerow([repr(float(c[i])) for c in cols])


@dataclass(frozen=True)
class Term:
    """One design-matrix column recipe: raw, square, or pairwise product."""

    kind: str
    names: tuple[str, ...]

    def label(self) -> str:
        if self.kind == "raw":
            return self.names[0]
        if self.kind == "square":
            return f"{self.names[0]}^2"
        return f"{self.names[0]}:{self.names[1]}"


def raw(name: str) -> Term:
    return Term("raw", (name,))


def square(name: str) -> Term:
    return Term("square", (name,))


def interact(a: str, b: str) -> Term:
    # product is symmetric; normalize so interact(a,b) == interact(b,a)
    lo, hi = sorted((a, b))
    return Term("interact", (lo, hi))


@dataclass(frozen=True)
class CovariateSpec:
    """Ordered covariate transforms; the intercept is implicit and first."""

    terms: tuple[Term, ...]

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        seen = set()
        for t in self.terms:
            if t in seen:
                raise InvalidSpec(f"duplicate term '{t.label()}'")
            seen.add(t)

    @classmethod
    def all_raw(cls, ds: PanelDataset) -> "CovariateSpec":
        """Linear spec: one raw term per covariate column, in column order."""
        return cls(tuple(raw(name) for name in ds.covariates))

    @classmethod
    def from_text(cls, text: str) -> "CovariateSpec":
        """Parse a spec file: one directive per line.

        Directives: ``raw NAME``, ``square NAME``, ``interact NAME NAME``.
        Blank lines and ``#`` comments are ignored.
        """
        terms = []
        for lineno, line in enumerate(text.splitlines(), start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            parts = stripped.split()
            kind, args = parts[0].lower(), parts[1:]
            if kind == "raw" and len(args) == 1:
                terms.append(raw(args[0]))
            elif kind == "square" and len(args) == 1:
                terms.append(square(args[0]))
            elif kind == "interact" and len(args) == 2:
                terms.append(interact(args[0], args[1]))
            else:
                raise InvalidSpec(f"line {lineno}: cannot parse {line.strip()!r}")
        return cls(tuple(terms))

    @classmethod
    def from_file(cls, path) -> "CovariateSpec":
        with open(path, encoding="utf-8") as fh:
            return cls.from_text(fh.read())


@dataclass(frozen=True)
class DesignMatrix:
    """n-by-k matrix whose first column is identically 1, with labels."""

    x: np.ndarray
    column_names: tuple[str, ...]

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def k(self) -> int:
        return self.x.shape[1]


def load_csv(path, y0="y0", y1="y1", d="d") -> PanelDataset:
    """Read a header CSV into a PanelDataset.

    The named columns become the outcomes and treatment; every other column
    becomes a covariate, in file order. The treatment column must hold
    exactly 0 or 1. Errors report the offending row and column.
    """
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MissingColumn(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        for name in (y0, y1, d):
            if name not in header:
                raise MissingColumn(f"{path}: column '{name}' not found in header")
        columns: list[list[float]] = [[] for _ in header]
        for rownum, row in enumerate(reader):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != len(header):
                raise NonFiniteValue(
                    f"{path}: row {rownum} has {len(row)} fields, expected {len(header)}"
                )
            for j, cell in enumerate(row):
                try:
                    value = float(cell)
                except ValueError:
                    raise NonFiniteValue(
                        f"{path}: row {rownum}, column '{header[j]}': {cell!r} is not a number"
                    ) from None
                if not math.isfinite(value):
                    raise NonFiniteValue(
                        f"{path}: row {rownum}, column '{header[j]}': non-finite value"
                    )
                columns[j].append(value)
    data = {name: np.array(col, dtype=np.float64) for name, col in zip(header, columns)}
    d_col = data[d]
    bad = np.flatnonzero((d_col != 0.0) & (d_col != 1.0))
    if bad.size:
        raise NonBinaryTreatment(
            f"{path}: row {int(bad[0])}, column '{d}': value {d_col[bad[0]]} is not 0 or 1"
        )
    covs = {name: data[name] for name in header if name not in (y0, y1, d)}
    return PanelDataset(data[y0], data[y1], d_col, covs)


def build_design(ds: PanelDataset, spec: CovariateSpec) -> DesignMatrix:
    """Assemble the intercept-first design matrix for a covariate spec.

    Column 0 is the intercept; the remaining columns follow spec order.
    Rank is checked with a pivoted QR at relative tolerance 1e-10; a
    deficiency names the first dependent column.
    """
    n = ds.n
    cols = [np.ones(n)]
    names = ["const"]
    for t in spec.terms:
        for name in t.names:
            if name not in ds.covariates:
                raise UnknownTerm(f"term '{t.label()}' references unknown column '{name}'")
        if t.kind == "raw":
            cols.append(ds.covariates[t.names[0]])
        elif t.kind == "square":
            cols.append(ds.covariates[t.names[0]] ** 2)
        else:
            cols.append(ds.covariates[t.names[0]] * ds.covariates[t.names[1]])
        names.append(t.label())
    x = np.column_stack(cols)
    k = x.shape[1]
    if n < k:
        raise RankDeficient(f"design has {k} columns but only {n} rows", column=names[-1])
    _check_rank(x, names)
    return DesignMatrix(x, tuple(names))


def _check_rank(x: np.ndarray, names: list[str]) -> None:
    r, pivots = scipy.linalg.qr(x, mode="r", pivoting=True)
    diag = np.abs(np.diag(r))
    if diag[0] == 0.0:
        raise RankDeficient("design matrix is identically zero", column=names[0])
    rank = int(np.count_nonzero(diag > RANK_RTOL * diag[0]))
    if rank < x.shape[1]:
        dependent = names[pivots[rank]]
        raise RankDeficient(
            f"design matrix is rank deficient: column '{dependent}' is linearly "
            f"dependent on the others",
            column=dependent,
        )


@dataclass(frozen=True)
class OverlapReport:
    """Advisory propensity-overlap diagnostics; never mutates data."""

    min_pi: float
    max_pi: float
    n_extreme_controls: int
    max_control_odds: float

    def lines(self) -> list[str]:
        return [
            f"propensity range: [{self.min_pi:.6f}, {self.max_pi:.6f}]",
            f"controls with pi > 0.99: {self.n_extreme_controls}",
            f"largest control odds pi/(1-pi): {self.max_control_odds:.4f}",
        ]


def overlap_report(pi_hat, d) -> OverlapReport:
    """Summarize fitted propensities: range, extreme controls, largest odds."""
    pi_hat = np.asarray(pi_hat, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    if pi_hat.shape != d.shape:
        raise ValueError("pi_hat and d must have the same length")
    if np.any(pi_hat <= 0.0) or np.any(pi_hat >= 1.0):
        raise ValueError("fitted propensities must lie strictly inside (0, 1)")
    ctrl = d == 0.0
    odds = pi_hat[ctrl] / (1.0 - pi_hat[ctrl])
    return OverlapReport(
        min_pi=float(pi_hat.min()),
        max_pi=float(pi_hat.max()),
        n_extreme_controls=int(np.count_nonzero(pi_hat[ctrl] > 0.99)),
        max_control_odds=float(odds.max()) if odds.size else 0.0,
    )
