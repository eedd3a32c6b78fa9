"""Dataset ingestion, column-role schema, and cross-fitting fold plans.

A mediation sample carries five column blocks: baseline covariates W,
a scalar treatment A, post-treatment intermediates Z, mediators M, and a
scalar outcome Y.  An optional sixth block ``zpi`` holds the matched
permutation of Z (see :mod:`rieszmed.permute`).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np


class SchemaError(ValueError):
    """A role refers to a column that the source does not provide."""


class ParseError(ValueError):
    """A cell could not be read as a finite number."""


class ValidationError(ValueError):
    """Data passed parsing but violates a dataset invariant."""


@dataclass(frozen=True)
class ColumnRoles:
    """Maps dataset columns onto the five roles.

    ``intermediate`` may be empty; effect families that need the Z block
    reject such datasets downstream.
    """

    covariates: tuple[str, ...]
    treatment: str
    intermediate: tuple[str, ...]
    mediators: tuple[str, ...]
    outcome: str

    def __post_init__(self):
        object.__setattr__(self, "covariates", tuple(self.covariates))
        object.__setattr__(self, "intermediate", tuple(self.intermediate))
        object.__setattr__(self, "mediators", tuple(self.mediators))
        if not self.mediators:
            raise SchemaError("at least one mediator column is required")
        groups = [
            list(self.covariates),
            [self.treatment],
            list(self.intermediate),
            list(self.mediators),
            [self.outcome],
        ]
        flat = [c for g in groups for c in g]
        if len(set(flat)) != len(flat):
            seen, dupes = set(), set()
            for c in flat:
                (dupes if c in seen else seen).add(c)
            raise SchemaError(f"column roles overlap: {sorted(dupes)}")

    @property
    def all_columns(self) -> tuple[str, ...]:
        return (
            *self.covariates,
            self.treatment,
            *self.intermediate,
            *self.mediators,
            self.outcome,
        )


def _frozen(arr: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(arr, dtype=np.float64)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class MediationDataset:
    """Immutable numeric sample with role-tagged blocks.

    ``w``, ``z``, ``m`` are (n, p) matrices (p may be 0 for ``w``/``z``);
    ``a`` and ``y`` are length-n vectors.  ``zpi`` is either None or a
    row-permutation of ``z``.
    """

    w: np.ndarray
    a: np.ndarray
    z: np.ndarray
    m: np.ndarray
    y: np.ndarray
    treatment_kind: str = "binary"
    zpi: np.ndarray | None = None

    def __post_init__(self):
        w = np.atleast_2d(np.asarray(self.w, dtype=np.float64))
        if np.asarray(self.w).ndim == 1:
            w = w.T
        z = np.asarray(self.z, dtype=np.float64)
        if z.ndim == 1:
            z = z.reshape(-1, 1) if z.size else z.reshape(len(self.a), 0)
        m = np.asarray(self.m, dtype=np.float64)
        if m.ndim == 1:
            m = m.reshape(-1, 1)
        a = np.asarray(self.a, dtype=np.float64).reshape(-1)
        y = np.asarray(self.y, dtype=np.float64).reshape(-1)
        n = len(a)
        for name, block in (("w", w), ("z", z), ("m", m), ("y", y)):
            if block.shape[0] != n:
                raise ValidationError(f"block {name!r} has {block.shape[0]} rows, expected {n}")
        blocks = [w, a, z, m, y]
        zpi = self.zpi
        if zpi is not None:
            zpi = np.asarray(zpi, dtype=np.float64)
            if zpi.ndim == 1:
                zpi = zpi.reshape(-1, 1)
            if zpi.shape != z.shape:
                raise ValidationError(f"zpi shape {zpi.shape} does not match z shape {z.shape}")
            blocks.append(zpi)
        for block in blocks:
            if not np.all(np.isfinite(block)):
                raise ValidationError("dataset contains missing or non-finite values")
        if self.treatment_kind not in ("binary", "continuous"):
            raise ValidationError(f"unknown treatment_kind {self.treatment_kind!r}")
        if self.treatment_kind == "binary" and not np.all((a == 0.0) | (a == 1.0)):
            bad = a[(a != 0.0) & (a != 1.0)][0]
            raise ValidationError(f"binary treatment contains value {bad!r} outside {{0, 1}}")
        object.__setattr__(self, "w", _frozen(w))
        object.__setattr__(self, "a", _frozen(a))
        object.__setattr__(self, "z", _frozen(z))
        object.__setattr__(self, "m", _frozen(m))
        object.__setattr__(self, "y", _frozen(y))
        object.__setattr__(self, "zpi", None if zpi is None else _frozen(zpi))

    @property
    def n(self) -> int:
        return self.a.shape[0]

    def with_zpi(self, zpi: np.ndarray) -> "MediationDataset":
        return replace(self, zpi=zpi)

    def subset(self, idx: np.ndarray) -> "MediationDataset":
        return MediationDataset(
            w=self.w[idx],
            a=self.a[idx],
            z=self.z[idx],
            m=self.m[idx],
            y=self.y[idx],
            treatment_kind=self.treatment_kind,
            zpi=None if self.zpi is None else self.zpi[idx],
        )


@dataclass(frozen=True)
class FoldPlan:
    """Partition of {0..n-1} into J folds of near-equal size."""

    J: int
    assignment: np.ndarray
    seed: int

    def __post_init__(self):
        assignment = np.asarray(self.assignment, dtype=np.int64)
        assignment.flags.writeable = False
        object.__setattr__(self, "assignment", assignment)

    @property
    def n(self) -> int:
        return self.assignment.shape[0]

    def validation_indices(self, j: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == j)

    def training_indices(self, j: int) -> np.ndarray:
        idx = np.flatnonzero(self.assignment != j)
        if idx.size == 0:
            # J=1 in-sample plan: train on everything.
            return np.arange(self.n)
        return idx

    @staticmethod
    def insample(n: int) -> "FoldPlan":
        """Single-fold plan: nuisances fitted and evaluated on the full sample."""
        return FoldPlan(J=1, assignment=np.zeros(n, dtype=np.int64), seed=0)


def make_folds(n: int, J: int, seed: int) -> FoldPlan:
    """Random balanced partition, deterministic given seed.

    Fold sizes differ by at most one.  Requires 2 <= J <= n.
    """
    if not (2 <= J <= n):
        raise ValueError(f"fold count J={J} must satisfy 2 <= J <= n={n}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    assignment = np.empty(n, dtype=np.int64)
    assignment[order] = np.arange(n) % J
    return FoldPlan(J=J, assignment=assignment, seed=seed)


def load_csv(path, roles: ColumnRoles, treatment_kind: str = "binary") -> MediationDataset:
    """Read an RFC-4180 CSV with a header row into a validated dataset.

    Rows are preserved in file order and ``zpi`` is left unset.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file, expected a header row") from None
        positions = {}
        for name in roles.all_columns:
            if name not in header:
                raise SchemaError(f"column {name!r} not found in {path}")
            positions[name] = header.index(name)
        rows = []
        for ridx, row in enumerate(reader):
            parsed = []
            for name in roles.all_columns:
                pos = positions[name]
                if pos >= len(row):
                    raise ParseError(f"{path}: row {ridx} is missing column {name!r}")
                cell = row[pos].strip()
                try:
                    value = float(cell)
                except ValueError:
                    raise ParseError(
                        f"{path}: row {ridx}, column {name!r}: cannot parse {cell!r}"
                    ) from None
                if not np.isfinite(value):
                    raise ParseError(f"{path}: row {ridx}, column {name!r}: non-finite value")
                parsed.append(value)
            rows.append(parsed)
    if not rows:
        raise ValidationError(f"{path}: no data rows")
    mat = np.asarray(rows, dtype=np.float64)
    pw = len(roles.covariates)
    pz = len(roles.intermediate)
    pm = len(roles.mediators)
    return MediationDataset(
        w=mat[:, :pw].reshape(len(rows), pw),
        a=mat[:, pw],
        z=mat[:, pw + 1 : pw + 1 + pz].reshape(len(rows), pz),
        m=mat[:, pw + 1 + pz : pw + 1 + pz + pm],
        y=mat[:, pw + 1 + pz + pm],
        treatment_kind=treatment_kind,
    )


def write_csv(dataset: MediationDataset, roles: ColumnRoles, path) -> None:
    """Write the role blocks back to CSV with full float precision."""
    header = list(roles.all_columns)
    cols = [dataset.w[:, j] for j in range(dataset.w.shape[1])]
    cols.append(dataset.a)
    cols.extend(dataset.z[:, j] for j in range(dataset.z.shape[1]))
    cols.extend(dataset.m[:, j] for j in range(dataset.m.shape[1]))
    cols.append(dataset.y)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(dataset.n):
            writer.writerow([repr(float(col[i])) for col in cols])
