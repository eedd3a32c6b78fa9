"""Exact brute-force evaluation on fully specified discrete distributions.

Everything here is computed by explicit nested sums over finite supports,
deliberately sharing no code with the estimation path: agreement between
the two is evidence, not tautology.  Supports are kept tiny (a handful of
points per block) so enumeration is instant.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .data import MediationDataset


class PositivityError(ValueError):
    """A closed-form density ratio hit a zero-probability cell."""


def _point_matrix(points) -> np.ndarray:
    pts = [tuple(np.atleast_1d(np.asarray(p, dtype=np.float64))) for p in points]
    width = len(pts[0])
    if any(len(p) != width for p in pts):
        raise ValueError("support points must share a common width")
    return np.asarray(pts, dtype=np.float64)


@dataclass(frozen=True)
class DiscreteDGP:
    """Finite-support data law with full conditional tables.

    Support points for W, Z, M may be vectors (tuples); A levels are
    scalars.  ``ey`` stores E[Y | A, Z, M, W]; sampling adds mean-zero
    two-point noise of half-width ``y_noise``.

    Table axis order: ``pw[w]``, ``pa[a, w]``, ``pz[z, a, w]``,
    ``pm[m, a, z, w]``, ``ey[a, z, m, w]``.
    """

    w_points: tuple
    a_levels: tuple
    z_points: tuple
    m_points: tuple
    pw: np.ndarray
    pa: np.ndarray
    pz: np.ndarray
    pm: np.ndarray
    ey: np.ndarray
    y_noise: float = 0.5

    def __post_init__(self):
        for name in ("pw", "pa", "pz", "pm", "ey"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "w_points", tuple(map(tuple, _point_matrix(self.w_points))))
        object.__setattr__(self, "a_levels", tuple(float(a) for a in self.a_levels))
        object.__setattr__(self, "z_points", tuple(map(tuple, _point_matrix(self.z_points))))
        object.__setattr__(self, "m_points", tuple(map(tuple, _point_matrix(self.m_points))))
        nw, na, nz, nm = self.nw, self.na, self.nz, self.nm
        if self.pw.shape != (nw,):
            raise ValueError(f"pw must have shape ({nw},)")
        if self.pa.shape != (na, nw):
            raise ValueError(f"pa must have shape ({na}, {nw})")
        if self.pz.shape != (nz, na, nw):
            raise ValueError(f"pz must have shape ({nz}, {na}, {nw})")
        if self.pm.shape != (nm, na, nz, nw):
            raise ValueError(f"pm must have shape ({nm}, {na}, {nz}, {nw})")
        if self.ey.shape != (na, nz, nm, nw):
            raise ValueError(f"ey must have shape ({na}, {nz}, {nm}, {nw})")
        for name, arr, axis in (
            ("pw", self.pw, 0),
            ("pa", self.pa, 0),
            ("pz", self.pz, 0),
            ("pm", self.pm, 0),
        ):
            if np.any(arr < 0):
                raise ValueError(f"{name} contains negative probabilities")
            sums = arr.sum(axis=axis)
            if np.max(np.abs(sums - 1.0)) > 1e-12:
                raise ValueError(f"{name} rows do not sum to 1 (max dev {np.max(np.abs(sums-1)):.2e})")

    @property
    def nw(self) -> int:
        return len(self.w_points)

    @property
    def na(self) -> int:
        return len(self.a_levels)

    @property
    def nz(self) -> int:
        return len(self.z_points)

    @property
    def nm(self) -> int:
        return len(self.m_points)

    def a_index(self, level) -> int:
        for i, a in enumerate(self.a_levels):
            if a == float(level):
                return i
        raise ValueError(f"treatment level {level!r} not in support {self.a_levels}")

    # ------------------------------------------------------------------ sampling

    def sample(self, n: int, seed: int, zpi: str | None = None) -> MediationDataset:
        """Draw an i.i.d. sample; ``zpi='exact'`` adds an independent draw
        from P(z | a, w) as the matched column."""
        rng = np.random.default_rng(seed)

        def categorical(cond_probs: np.ndarray) -> np.ndarray:
            # cond_probs: (n, k) per-row distributions
            cum = np.cumsum(cond_probs, axis=1)
            u = rng.uniform(size=len(cond_probs))
            return (u[:, None] > cum).sum(axis=1).clip(max=cond_probs.shape[1] - 1)

        iw = categorical(np.broadcast_to(self.pw, (n, self.nw)))
        ia = categorical(self.pa[:, iw].T)
        iz = categorical(self.pz[:, ia, iw].T)
        izp = categorical(self.pz[:, ia, iw].T)
        im = categorical(self.pm[:, ia, iz, iw].T)
        wmat = _point_matrix(self.w_points)[iw]
        zmat = _point_matrix(self.z_points)[iz]
        mmat = _point_matrix(self.m_points)[im]
        avec = np.asarray(self.a_levels)[ia]
        mean = self.ey[ia, iz, im, iw]
        y = mean + self.y_noise * rng.choice([-1.0, 1.0], size=n)
        kind = "binary" if set(self.a_levels) <= {0.0, 1.0} else "continuous"
        zpi_mat = _point_matrix(self.z_points)[izp] if zpi == "exact" else None
        return MediationDataset(
            w=wmat, a=avec, z=zmat, m=mmat, y=y, treatment_kind=kind, zpi=zpi_mat
        )

    # ------------------------------------------------------------------ io

    def to_json_dict(self) -> dict:
        return {
            "w_points": [list(p) for p in self.w_points],
            "a_levels": list(self.a_levels),
            "z_points": [list(p) for p in self.z_points],
            "m_points": [list(p) for p in self.m_points],
            "pw": self.pw.tolist(),
            "pa": self.pa.tolist(),
            "pz": self.pz.tolist(),
            "pm": self.pm.tolist(),
            "ey": self.ey.tolist(),
            "y_noise": self.y_noise,
        }

    @staticmethod
    def from_json_dict(obj: dict) -> "DiscreteDGP":
        return DiscreteDGP(
            w_points=[tuple(p) for p in obj["w_points"]],
            a_levels=tuple(obj["a_levels"]),
            z_points=[tuple(p) for p in obj["z_points"]],
            m_points=[tuple(p) for p in obj["m_points"]],
            pw=np.asarray(obj["pw"]),
            pa=np.asarray(obj["pa"]),
            pz=np.asarray(obj["pz"]),
            pm=np.asarray(obj["pm"]),
            ey=np.asarray(obj["ey"]),
            y_noise=float(obj.get("y_noise", 0.5)),
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json_dict(), fh, indent=1)

    @staticmethod
    def load(path) -> "DiscreteDGP":
        with open(path, encoding="utf-8") as fh:
            return DiscreteDGP.from_json_dict(json.load(fh))


# ---------------------------------------------------------------------- psi

def exact_psi_natural(dgp: DiscreteDGP, levels) -> float:
    """Nested enumeration of the three-index functional."""
    if len(levels) != 3:
        raise ValueError("natural targets take three levels")
    a1, a2, a3 = (dgp.a_index(a) for a in levels)
    total = 0.0
    for iw in range(dgp.nw):
        acc_w = 0.0
        for iz in range(dgp.nz):
            acc_z = 0.0
            for im in range(dgp.nm):
                acc_z += dgp.pm[im, a2, iz, iw] * dgp.ey[a1, iz, im, iw]
            acc_w += dgp.pz[iz, a3, iw] * acc_z
        total += dgp.pw[iw] * acc_w
    return float(total)


def exact_psi_randomized(dgp: DiscreteDGP, levels) -> float:
    """Four-index functional; the matched-column nesting becomes an
    explicit inner integral over P(z' | a2, w)."""
    if len(levels) != 4:
        raise ValueError("randomized targets take four levels")
    a1, a2, a3, a4 = (dgp.a_index(a) for a in levels)
    total = 0.0
    for iw in range(dgp.nw):
        acc_w = 0.0
        for iz in range(dgp.nz):
            acc_z = 0.0
            for im in range(dgp.nm):
                inner = 0.0
                for izp in range(dgp.nz):
                    inner += dgp.pz[izp, a2, iw] * dgp.ey[a1, izp, im, iw]
                acc_z += dgp.pm[im, a3, iz, iw] * inner
            acc_w += dgp.pz[iz, a4, iw] * acc_z
        total += dgp.pw[iw] * acc_w
    return float(total)


def exact_psi(dgp: DiscreteDGP, family: str, levels) -> float:
    if family == "natural":
        return exact_psi_natural(dgp, levels)
    if family == "randomized":
        return exact_psi_randomized(dgp, levels)
    raise ValueError(f"unknown family {family!r}")


# ---------------------------------------------------------------------- alpha

def _require_positive(prob: float, what: str) -> float:
    if prob <= 0.0:
        raise PositivityError(f"zero probability at {what}")
    return prob


def exact_alpha(
    dgp: DiscreteDGP,
    family: str,
    k: int,
    levels,
    ia: int,
    iw: int,
    iz: int | None = None,
    im: int | None = None,
) -> float:
    """Closed-form density-ratio weight at a support point (index form)."""
    pa = _require_positive(dgp.pa[ia, iw], f"P(a={dgp.a_levels[ia]} | w#{iw})")
    if family == "natural":
        a1, a2, a3 = (dgp.a_index(a) for a in levels)
        if k == 1:
            return (1.0 if ia == a3 else 0.0) / pa
        if k == 2:
            pz_obs = _require_positive(dgp.pz[iz, ia, iw], f"P(z#{iz} | a, w#{iw})")
            if ia != a2:
                return 0.0
            return dgp.pz[iz, a3, iw] / pz_obs / pa
        if k == 3:
            pz_obs = _require_positive(dgp.pz[iz, ia, iw], f"P(z#{iz} | a, w#{iw})")
            pm_obs = _require_positive(dgp.pm[im, ia, iz, iw], f"P(m#{im} | a, z#{iz}, w#{iw})")
            if ia != a1:
                return 0.0
            return (
                (dgp.pm[im, a2, iz, iw] / pm_obs)
                * (dgp.pz[iz, a3, iw] / pz_obs)
                / pa
            )
        raise ValueError("natural chains have k in {1, 2, 3}")
    if family == "randomized":
        a1, a2, a3, a4 = (dgp.a_index(a) for a in levels)
        if k == 1:
            return (1.0 if ia == a4 else 0.0) / pa
        if k == 2:
            pz_obs = _require_positive(dgp.pz[iz, ia, iw], f"P(z#{iz} | a, w#{iw})")
            if ia != a3:
                return 0.0
            return dgp.pz[iz, a4, iw] / pz_obs / pa
        if k == 3:
            pm_marg = 0.0
            for izz in range(dgp.nz):
                pm_marg += dgp.pm[im, ia, izz, iw] * dgp.pz[izz, ia, iw]
            pm_marg = _require_positive(pm_marg, f"P(m#{im} | a, w#{iw})")
            if ia != a2:
                return 0.0
            numer = 0.0
            for izz in range(dgp.nz):
                numer += dgp.pm[im, a3, izz, iw] * dgp.pz[izz, a4, iw]
            return numer / pm_marg / pa
        if k == 4:
            pz_obs = _require_positive(dgp.pz[iz, ia, iw], f"P(z#{iz} | a, w#{iw})")
            pm_obs = _require_positive(dgp.pm[im, ia, iz, iw], f"P(m#{im} | a, z#{iz}, w#{iw})")
            if ia != a1:
                return 0.0
            numer = 0.0
            for izz in range(dgp.nz):
                numer += dgp.pm[im, a3, izz, iw] * dgp.pz[izz, a4, iw]
            return (dgp.pz[iz, a2, iw] / pz_obs) * (numer / pm_obs) / pa
        raise ValueError("randomized chains have k in {1, 2, 3, 4}")
    raise ValueError(f"unknown family {family!r}")


def exact_alpha_tables(dgp: DiscreteDGP, family: str, levels) -> list[np.ndarray]:
    """All representer tables alpha_1..alpha_K, in chain order."""
    nw, na, nz, nm = dgp.nw, dgp.na, dgp.nz, dgp.nm
    kmax = 3 if family == "natural" else 4
    tables = []
    for k in range(1, kmax + 1):
        if k == 1:
            t = np.zeros((na, nw))
            for ia in range(na):
                for iw in range(nw):
                    t[ia, iw] = exact_alpha(dgp, family, 1, levels, ia, iw)
        elif k == 2:
            t = np.zeros((na, nz, nw))
            for ia in range(na):
                for iz in range(nz):
                    for iw in range(nw):
                        t[ia, iz, iw] = exact_alpha(dgp, family, 2, levels, ia, iw, iz=iz)
        elif k == 3 and family == "natural":
            t = np.zeros((na, nz, nm, nw))
            for ia in range(na):
                for iz in range(nz):
                    for im in range(nm):
                        for iw in range(nw):
                            t[ia, iz, im, iw] = exact_alpha(
                                dgp, family, 3, levels, ia, iw, iz=iz, im=im
                            )
        elif k == 3:
            t = np.zeros((na, nm, nw))
            for ia in range(na):
                for im in range(nm):
                    for iw in range(nw):
                        t[ia, im, iw] = exact_alpha(dgp, family, 3, levels, ia, iw, im=im)
        else:
            t = np.zeros((na, nz, nm, nw))
            for ia in range(na):
                for iz in range(nz):
                    for im in range(nm):
                        for iw in range(nw):
                            t[ia, iz, im, iw] = exact_alpha(
                                dgp, family, 4, levels, ia, iw, iz=iz, im=im
                            )
        tables.append(t)
    return tables


# ---------------------------------------------------------------------- theta

def exact_theta_chain(dgp: DiscreteDGP, family: str, levels) -> list[np.ndarray]:
    """True regression tables in fit order (outermost last): [theta_K..theta_1]."""
    return exact_tilde_theta_chain(dgp, family, levels, overrides={})


def exact_tilde_theta_chain(
    dgp: DiscreteDGP, family: str, levels, overrides: dict[int, np.ndarray]
) -> list[np.ndarray]:
    """Sequential regression tables where slot k may be overridden.

    A non-overridden slot is the exact conditional expectation of the
    pseudo-outcome built from the slot above it (override included), which
    is the sense in which a slot can be "correct" when an earlier
    regression is wrong.
    """
    nw, na, nz, nm = dgp.nw, dgp.na, dgp.nz, dgp.nm
    if family == "natural":
        a1, a2, a3 = (dgp.a_index(a) for a in levels)
        theta3 = overrides.get(3, dgp.ey)
        b3 = theta3[a1]  # (nz, nm, nw)
        if 2 in overrides:
            theta2 = overrides[2]
        else:
            theta2 = np.zeros((na, nz, nw))
            for ia in range(na):
                for iz in range(nz):
                    for iw in range(nw):
                        acc = 0.0
                        for im in range(nm):
                            acc += dgp.pm[im, ia, iz, iw] * b3[iz, im, iw]
                        theta2[ia, iz, iw] = acc
        b2 = theta2[a2]  # (nz, nw)
        if 1 in overrides:
            theta1 = overrides[1]
        else:
            theta1 = np.zeros((na, nw))
            for ia in range(na):
                for iw in range(nw):
                    acc = 0.0
                    for iz in range(nz):
                        acc += dgp.pz[iz, ia, iw] * b2[iz, iw]
                    theta1[ia, iw] = acc
        return [theta3, theta2, theta1]
    if family == "randomized":
        a1, a2, a3, a4 = (dgp.a_index(a) for a in levels)
        theta4 = overrides.get(4, dgp.ey)
        b4 = theta4[a1]  # function of (z_pi, m, w)
        if 3 in overrides:
            theta3 = overrides[3]
        else:
            # Z_pi | (A, W) has law P(z | a, w) and is independent of M.
            theta3 = np.zeros((na, nm, nw))
            for ia in range(na):
                for im in range(nm):
                    for iw in range(nw):
                        acc = 0.0
                        for iz in range(nz):
                            acc += dgp.pz[iz, ia, iw] * b4[iz, im, iw]
                        theta3[ia, im, iw] = acc
        b3 = theta3[a2]  # (nm, nw)
        if 2 in overrides:
            theta2 = overrides[2]
        else:
            theta2 = np.zeros((na, nz, nw))
            for ia in range(na):
                for iz in range(nz):
                    for iw in range(nw):
                        acc = 0.0
                        for im in range(nm):
                            acc += dgp.pm[im, ia, iz, iw] * b3[im, iw]
                        theta2[ia, iz, iw] = acc
        b2 = theta2[a3]
        if 1 in overrides:
            theta1 = overrides[1]
        else:
            theta1 = np.zeros((na, nw))
            for ia in range(na):
                for iw in range(nw):
                    acc = 0.0
                    for iz in range(nz):
                        acc += dgp.pz[iz, ia, iw] * b2[iz, iw]
                    theta1[ia, iw] = acc
        return [theta4, theta3, theta2, theta1]
    raise ValueError(f"unknown family {family!r}")


# ---------------------------------------------------------------------- functionals

def exact_psi_functional(dgp: DiscreteDGP, family: str, levels, k: int, table: np.ndarray) -> float:
    """The nested-mean linear functional applied to an arbitrary slot table."""
    nw, nz, nm = dgp.nw, dgp.nz, dgp.nm
    if family == "natural":
        a1, a2, a3 = (dgp.a_index(a) for a in levels)
        total = 0.0
        for iw in range(nw):
            if k == 1:
                total += dgp.pw[iw] * table[a3, iw]
            elif k == 2:
                acc = 0.0
                for iz in range(nz):
                    acc += dgp.pz[iz, a3, iw] * table[a2, iz, iw]
                total += dgp.pw[iw] * acc
            elif k == 3:
                acc = 0.0
                for iz in range(nz):
                    inner = 0.0
                    for im in range(nm):
                        inner += dgp.pm[im, a2, iz, iw] * table[a1, iz, im, iw]
                    acc += dgp.pz[iz, a3, iw] * inner
                total += dgp.pw[iw] * acc
            else:
                raise ValueError("natural functionals have k in {1, 2, 3}")
        return total
    if family == "randomized":
        a1, a2, a3, a4 = (dgp.a_index(a) for a in levels)
        total = 0.0
        for iw in range(nw):
            if k == 1:
                total += dgp.pw[iw] * table[a4, iw]
            elif k == 2:
                acc = 0.0
                for iz in range(nz):
                    acc += dgp.pz[iz, a4, iw] * table[a3, iz, iw]
                total += dgp.pw[iw] * acc
            elif k == 3:
                acc = 0.0
                for iz in range(nz):
                    inner = 0.0
                    for im in range(nm):
                        inner += dgp.pm[im, a3, iz, iw] * table[a2, im, iw]
                    acc += dgp.pz[iz, a4, iw] * inner
                total += dgp.pw[iw] * acc
            elif k == 4:
                acc = 0.0
                for iz in range(nz):
                    inner_m = 0.0
                    for im in range(nm):
                        inner_z = 0.0
                        for izp in range(nz):
                            inner_z += dgp.pz[izp, a2, iw] * table[a1, izp, im, iw]
                        inner_m += dgp.pm[im, a3, iz, iw] * inner_z
                    acc += dgp.pz[iz, a4, iw] * inner_m
                total += dgp.pw[iw] * acc
            else:
                raise ValueError("randomized functionals have k in {1, 2, 3, 4}")
        return total
    raise ValueError(f"unknown family {family!r}")


def exact_riesz_pairing(dgp: DiscreteDGP, family: str, levels, k: int, table: np.ndarray) -> float:
    """E[alpha_k(X) * table(X)] enumerated over the joint law."""
    total = 0.0
    for iw in range(dgp.nw):
        for ia in range(dgp.na):
            p_aw = dgp.pw[iw] * dgp.pa[ia, iw]
            if p_aw == 0.0:
                continue
            if k == 1:
                total += p_aw * exact_alpha(dgp, family, 1, levels, ia, iw) * table[ia, iw]
                continue
            for iz in range(dgp.nz):
                p_zaw = p_aw * dgp.pz[iz, ia, iw]
                if p_zaw == 0.0:
                    continue
                if k == 2:
                    total += (
                        p_zaw
                        * exact_alpha(dgp, family, 2, levels, ia, iw, iz=iz)
                        * table[ia, iz, iw]
                    )
                    continue
                for im in range(dgp.nm):
                    p_full = p_zaw * dgp.pm[im, ia, iz, iw]
                    if p_full == 0.0:
                        continue
                    if family == "natural" or k == 4:
                        alpha = exact_alpha(dgp, family, k, levels, ia, iw, iz=iz, im=im)
                        total += p_full * alpha * table[ia, iz, im, iw]
                    else:
                        alpha = exact_alpha(dgp, family, 3, levels, ia, iw, im=im)
                        total += p_full * alpha * table[ia, im, iw]
    return total


# ---------------------------------------------------------------------- gradient mean

def exact_phi_bar_mean(
    dgp: DiscreteDGP,
    family: str,
    levels,
    thetas: list[np.ndarray],
    alphas: list[np.ndarray],
) -> float:
    """E[phi-bar] under the joint law for arbitrary plug-in tables.

    ``thetas`` in chain order [theta_K..theta_1]; ``alphas`` [alpha_1..alpha_K].
    """
    nw, na, nz, nm = dgp.nw, dgp.na, dgp.nz, dgp.nm
    total = 0.0
    if family == "natural":
        a1, a2, a3 = (dgp.a_index(a) for a in levels)
        theta3, theta2, theta1 = thetas
        alpha1, alpha2, alpha3 = alphas
        for iw in range(nw):
            for ia in range(na):
                for iz in range(nz):
                    for im in range(nm):
                        p = (
                            dgp.pw[iw]
                            * dgp.pa[ia, iw]
                            * dgp.pz[iz, ia, iw]
                            * dgp.pm[im, ia, iz, iw]
                        )
                        if p == 0.0:
                            continue
                        phi = (
                            alpha3[ia, iz, im, iw] * (dgp.ey[ia, iz, im, iw] - theta3[ia, iz, im, iw])
                            + alpha2[ia, iz, iw] * (theta3[a1, iz, im, iw] - theta2[ia, iz, iw])
                            + alpha1[ia, iw] * (theta2[a2, iz, iw] - theta1[ia, iw])
                            + theta1[a3, iw]
                        )
                        total += p * phi
        return total
    if family == "randomized":
        a1, a2, a3, a4 = (dgp.a_index(a) for a in levels)
        theta4, theta3, theta2, theta1 = thetas
        alpha1, alpha2, alpha3, alpha4 = alphas
        for iw in range(nw):
            for ia in range(na):
                for iz in range(nz):
                    for izp in range(nz):
                        for im in range(nm):
                            p = (
                                dgp.pw[iw]
                                * dgp.pa[ia, iw]
                                * dgp.pz[iz, ia, iw]
                                * dgp.pz[izp, ia, iw]
                                * dgp.pm[im, ia, iz, iw]
                            )
                            if p == 0.0:
                                continue
                            phi = (
                                alpha4[ia, iz, im, iw]
                                * (dgp.ey[ia, iz, im, iw] - theta4[ia, iz, im, iw])
                                + alpha3[ia, im, iw]
                                * (theta4[a1, izp, im, iw] - theta3[ia, im, iw])
                                + alpha2[ia, iz, iw] * (theta3[a2, im, iw] - theta2[ia, iz, iw])
                                + alpha1[ia, iw] * (theta2[a3, iz, iw] - theta1[ia, iw])
                                + theta1[a4, iw]
                            )
                            total += p * phi
        return total
    raise ValueError(f"unknown family {family!r}")


# ---------------------------------------------------------------------- fixtures

def random_dgp(
    seed: int,
    nw: int = 2,
    na: int = 2,
    nz: int = 2,
    nm: int = 2,
    floor: float = 0.15,
    y_noise: float = 0.5,
) -> DiscreteDGP:
    """Random fixture with probabilities bounded away from zero."""
    rng = np.random.default_rng(seed)

    def simplex(shape, axis=0):
        raw = rng.uniform(floor, 1.0, size=shape)
        return raw / raw.sum(axis=axis, keepdims=True)

    return DiscreteDGP(
        w_points=[(float(i),) for i in range(nw)],
        a_levels=tuple(float(i) for i in range(na)),
        z_points=[(float(i),) for i in range(nz)],
        m_points=[(float(i),) for i in range(nm)],
        pw=simplex((nw,)),
        pa=simplex((na, nw)),
        pz=simplex((nz, na, nw)),
        pm=simplex((nm, na, nz, nw)),
        ey=rng.uniform(-1.0, 1.0, size=(na, nz, nm, nw)),
        y_noise=y_noise,
    )


def empirical_dgp(dataset: MediationDataset, y_noise: float = 0.0) -> DiscreteDGP:
    """Tabulate a discrete sample into conditional frequency tables.

    Cells never observed get probability zero; querying closed forms at
    such cells raises PositivityError.
    """
    w_points, iw = np.unique(dataset.w, axis=0, return_inverse=True)
    a_levels, ia = np.unique(dataset.a, return_inverse=True)
    z_points, iz = np.unique(dataset.z, axis=0, return_inverse=True)
    m_points, im = np.unique(dataset.m, axis=0, return_inverse=True)
    nw, na, nz, nm = len(w_points), len(a_levels), len(z_points), len(m_points)
    pw = np.bincount(iw, minlength=nw).astype(float)
    pw /= pw.sum()
    caw = np.zeros((na, nw))
    np.add.at(caw, (ia, iw), 1.0)
    czaw = np.zeros((nz, na, nw))
    np.add.at(czaw, (iz, ia, iw), 1.0)
    cmazw = np.zeros((nm, na, nz, nw))
    np.add.at(cmazw, (im, ia, iz, iw), 1.0)
    ysum = np.zeros((na, nz, nm, nw))
    np.add.at(ysum, (ia, iz, im, iw), dataset.y)
    ycnt = np.zeros((na, nz, nm, nw))
    np.add.at(ycnt, (ia, iz, im, iw), 1.0)

    def norm(counts, axis=0):
        tot = counts.sum(axis=axis, keepdims=True)
        safe = np.where(tot > 0, tot, 1.0)
        out = counts / safe
        # empty conditionals get a uniform placeholder so rows still sum to 1
        shape = list(counts.shape)
        k = shape[axis]
        out = np.where(tot > 0, out, 1.0 / k)
        return out

    return DiscreteDGP(
        w_points=[tuple(p) for p in w_points],
        a_levels=tuple(a_levels),
        z_points=[tuple(p) for p in z_points],
        m_points=[tuple(p) for p in m_points],
        pw=pw,
        pa=norm(caw),
        pz=norm(czaw),
        pm=norm(cmazw),
        ey=np.where(ycnt > 0, ysum / np.maximum(ycnt, 1.0), 0.0),
        y_noise=y_noise,
    )
