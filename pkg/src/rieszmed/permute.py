"""Construction of the matched intermediate column ``zpi``.

The Z block is re-paired with rows whose (A, W) values are as close as
possible, under the constraint that no row keeps its own Z.  Formally this
is a minimum-cost assignment over derangements: the zero-trace doubly
stochastic polytope is the convex hull of derangement matrices, so a linear
assignment with an infinite diagonal solves the relaxation exactly.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .data import MediationDataset

# Full distance matrices above this size are blocked into sub-problems.
EXACT_SIZE_LIMIT = 20_000


@dataclass(frozen=True)
class DistanceMatrix:
    """Symmetric pairwise distances on standardized (A, W)."""

    d: np.ndarray
    metric: str = "standardized_euclidean"

    def __post_init__(self):
        d = np.asarray(self.d, dtype=np.float64)
        if d.ndim != 2 or d.shape[0] != d.shape[1]:
            raise ValueError(f"distance matrix must be square, got {d.shape}")
        d.flags.writeable = False
        object.__setattr__(self, "d", d)

    @property
    def n(self) -> int:
        return self.d.shape[0]


@dataclass(frozen=True)
class PermutationPlan:
    """A derangement of row indices and its total matching cost."""

    perm: np.ndarray
    total_cost: float
    approximate: bool = False

    def __post_init__(self):
        perm = np.asarray(self.perm, dtype=np.int64)
        perm.flags.writeable = False
        object.__setattr__(self, "perm", perm)

    @property
    def n(self) -> int:
        return self.perm.shape[0]

    def is_derangement(self) -> bool:
        p = self.perm
        return bool(
            len(p) >= 2
            and np.array_equal(np.sort(p), np.arange(len(p)))
            and np.all(p != np.arange(len(p)))
        )


def _standardized_aw(dataset: MediationDataset) -> np.ndarray:
    x = np.column_stack([dataset.a, dataset.w])
    sd = x.std(axis=0)
    out = np.zeros_like(x)
    nz = sd > 0
    out[:, nz] = (x[:, nz] - x[:, nz].mean(axis=0)) / sd[nz]
    return out


def build_distance(dataset: MediationDataset) -> DistanceMatrix:
    """Pairwise Euclidean distances between standardized (A, W) rows.

    Each coordinate is scaled to unit sample variance; constant columns
    contribute zero.
    """
    if dataset.n < 2:
        raise ValueError(f"need at least 2 rows to build a distance matrix, got {dataset.n}")
    x = _standardized_aw(dataset)
    sq = np.sum(x**2, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    np.maximum(d2, 0.0, out=d2)
    d = np.sqrt(d2)
    np.fill_diagonal(d, 0.0)
    d = 0.5 * (d + d.T)
    return DistanceMatrix(d=d)


def solve_zero_trace_assignment(dmat: DistanceMatrix) -> PermutationPlan:
    """Minimum-cost derangement for the given distance matrix."""
    n = dmat.n
    if n < 2:
        raise ValueError("derangements require n >= 2")
    cost = dmat.d.copy()
    np.fill_diagonal(cost, np.inf)
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty(n, dtype=np.int64)
    perm[rows] = cols
    total = float(dmat.d[np.arange(n), perm].sum())
    return PermutationPlan(perm=perm, total_cost=total)


def apply_permutation(dataset: MediationDataset, plan: PermutationPlan) -> MediationDataset:
    """Attach ``zpi`` with row i taken from Z row ``perm[i]``."""
    if plan.n != dataset.n:
        raise ValueError(f"permutation length {plan.n} does not match n={dataset.n}")
    return dataset.with_zpi(dataset.z[plan.perm])


def _stratum_ids(dataset: MediationDataset) -> np.ndarray:
    aw = np.column_stack([dataset.a, dataset.w])
    _, ids = np.unique(aw, axis=0, return_inverse=True)
    return ids


def _within_stratum_derangement(ids: np.ndarray) -> np.ndarray | None:
    """Cyclic shift inside each (A, W) stratum; None if any stratum is a singleton."""
    n = len(ids)
    perm = np.empty(n, dtype=np.int64)
    order = np.argsort(ids, kind="stable")
    sorted_ids = ids[order]
    boundaries = np.flatnonzero(np.diff(sorted_ids)) + 1
    start = 0
    for stop in [*boundaries, n]:
        members = order[start:stop]
        if len(members) < 2:
            return None
        perm[members] = np.roll(members, -1)
        start = stop
    return perm


def _blocked_assignment(dataset: MediationDataset, block_size: int) -> PermutationPlan:
    """Median-split the standardized (A, W) space and solve each block exactly."""
    x = _standardized_aw(dataset)
    n = len(x)
    blocks: list[np.ndarray] = []

    def split(idx: np.ndarray, depth: int) -> None:
        if len(idx) <= block_size:
            blocks.append(idx)
            return
        col = depth % x.shape[1]
        vals = x[idx, col]
        med = np.median(vals)
        left = idx[vals <= med]
        right = idx[vals > med]
        if len(left) < 2 or len(right) < 2:
            half = len(idx) // 2
            order = idx[np.argsort(vals, kind="stable")]
            left, right = order[:half], order[half:]
        split(left, depth + 1)
        split(right, depth + 1)

    split(np.arange(n), 0)
    perm = np.empty(n, dtype=np.int64)
    total = 0.0
    for idx in blocks:
        sub = dataset.subset(idx)
        plan = solve_zero_trace_assignment(build_distance(sub))
        perm[idx] = idx[plan.perm]
        total += plan.total_cost
    return PermutationPlan(perm=perm, total_cost=total, approximate=True)


def construct_zpi(
    dataset: MediationDataset,
    block_size: int = 4096,
    force_assignment: bool = False,
) -> tuple[MediationDataset, PermutationPlan]:
    """Build ``zpi`` on the full sample and return (dataset, plan).

    When every exact (A, W) stratum has at least two members the optimum has
    cost zero and is found directly without a distance matrix.  Singleton
    strata fall back to the full assignment (matching across nearest strata;
    the incurred cost is reported on the plan, not hidden).  Above
    ``EXACT_SIZE_LIMIT`` rows the problem is solved block-wise and the plan
    is flagged approximate.
    """
    if dataset.n < 2:
        raise ValueError("constructing zpi requires n >= 2")
    if dataset.z.shape[1] == 0:
        raise ValueError("dataset has no Z block to permute")
    if not force_assignment:
        perm = _within_stratum_derangement(_stratum_ids(dataset))
        if perm is not None:
            plan = PermutationPlan(perm=perm, total_cost=0.0)
            return apply_permutation(dataset, plan), plan
    if dataset.n <= EXACT_SIZE_LIMIT:
        plan = solve_zero_trace_assignment(build_distance(dataset))
    else:
        warnings.warn(
            f"n={dataset.n} exceeds the exact assignment limit; using blocked approximation",
            stacklevel=2,
        )
        plan = _blocked_assignment(dataset, block_size)
    return apply_permutation(dataset, plan), plan


def permutation_diagnostics(dataset: MediationDataset, plan: PermutationPlan) -> dict:
    """JSON-ready summary: cost, derangement flag, per-stratum discrepancy."""
    ids = _stratum_ids(dataset)
    n_strata = int(ids.max()) + 1 if len(ids) else 0
    counts = np.bincount(ids, minlength=n_strata)
    zpi = dataset.z[plan.perm]
    worst = 0.0
    total_mismatch = 0
    for s in range(n_strata):
        members = np.flatnonzero(ids == s)
        orig = np.sort(dataset.z[members], axis=0)
        perm = np.sort(zpi[members], axis=0)
        mism = int(np.sum(np.any(orig != perm, axis=1)))
        total_mismatch += mism
        worst = max(worst, mism / len(members))
    return {
        "n": int(dataset.n),
        "total_cost": float(plan.total_cost),
        "is_derangement": plan.is_derangement(),
        "approximate": bool(plan.approximate),
        "n_strata": int(n_strata),
        "n_singleton_strata": int(np.sum(counts == 1)),
        "stratum_mismatch_rows": int(total_mismatch),
        "max_stratum_discrepancy": float(worst),
    }
