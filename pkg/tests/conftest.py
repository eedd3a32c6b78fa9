import numpy as np
import pytest

from rieszmed.data import MediationDataset
from rieszmed.oracle import DiscreteDGP, random_dgp


@pytest.fixture
def small_dgp() -> DiscreteDGP:
    """Deterministic 2x2x2x2 fixture with comfortable positivity."""
    return random_dgp(12345, floor=0.25)


@pytest.fixture
def null_z_dgp() -> DiscreteDGP:
    """Single-point Z support: the four-index functional collapses."""
    base = random_dgp(99, nz=1, floor=0.25)
    return base


def grid_dataset(seed: int, n_extra: int = 400, tiles: int = 3) -> MediationDataset:
    """Discrete dataset containing every (w, a, z, m) cell at least `tiles`
    times plus random rows; guarantees positive empirical frequencies."""
    rng = np.random.default_rng(seed)
    cells = np.array(
        [(w, a, z, m) for w in (0.0, 1.0) for a in (0.0, 1.0) for z in (0.0, 1.0) for m in (0.0, 1.0)]
    )
    grid = np.tile(cells, (tiles, 1))
    extra = np.column_stack(
        [
            rng.integers(0, 2, n_extra),
            rng.integers(0, 2, n_extra),
            rng.integers(0, 2, n_extra),
            rng.integers(0, 2, n_extra),
        ]
    ).astype(float)
    rows = np.vstack([grid, extra])
    rng.shuffle(rows)
    y = rng.normal(size=len(rows)) + rows @ np.array([0.3, 0.5, -0.2, 0.4])
    return MediationDataset(
        w=rows[:, 0:1], a=rows[:, 1], z=rows[:, 2:3], m=rows[:, 3:4], y=y, treatment_kind="binary"
    )


def balanced_grid(tiles: int = 2, seed: int = 0) -> MediationDataset:
    """Every (w, a, z, m) combination appears exactly `tiles` times."""
    rng = np.random.default_rng(seed)
    cells = np.array(
        [
            (w, a, z, m)
            for w in (0.0, 1.0)
            for a in (0.0, 1.0)
            for z in (0.0, 1.0)
            for m in (0.0, 1.0)
        ]
    )
    rows = np.tile(cells, (tiles, 1))
    y = rng.normal(size=len(rows))
    return MediationDataset(
        w=rows[:, 0:1], a=rows[:, 1], z=rows[:, 2:3], m=rows[:, 3:4], y=y, treatment_kind="binary"
    )


def product_augmented(seed: int = 0, n_z: int = 2, n_m: int = 2) -> MediationDataset:
    """Augmented sample where the matched column is empirically independent
    of M given (A, W) and shares the Z conditional exactly: within each
    (a, w) stratum every observed (z, m) row is paired with every stratum z
    value as the matched column."""
    rng = np.random.default_rng(seed)
    w_rows, a_rows, z_rows, m_rows, zpi_rows = [], [], [], [], []
    for w in (0.0, 1.0):
        for a in (0.0, 1.0):
            extra = int(rng.integers(1, 3))
            pairs = [(float(z), float(m)) for z in range(n_z) for m in range(n_m)]
            pairs += [
                (float(rng.integers(0, n_z)), float(rng.integers(0, n_m))) for _ in range(extra)
            ]
            s = len(pairs)
            zs = np.array([p[0] for p in pairs])
            ms = np.array([p[1] for p in pairs])
            for j in range(s):
                for k in range(s):
                    w_rows.append(w)
                    a_rows.append(a)
                    z_rows.append(zs[j])
                    m_rows.append(ms[j])
                    zpi_rows.append(zs[k])
    n = len(w_rows)
    y = rng.normal(size=n)
    return MediationDataset(
        w=np.array(w_rows).reshape(-1, 1),
        a=np.array(a_rows),
        z=np.array(z_rows).reshape(-1, 1),
        m=np.array(m_rows).reshape(-1, 1),
        y=y,
        treatment_kind="binary",
        zpi=np.array(zpi_rows).reshape(-1, 1),
    )



@pytest.fixture
def discrete_sample() -> MediationDataset:
    return grid_dataset(7)
