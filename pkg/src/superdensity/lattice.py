"""Nested lattices of half-open cells in ``[-R, R)^n`` and Lambda-distributions.

Level ``k`` cells have side ``beta**-k``; with integer ``beta`` every
level-(k+1) cell sits in exactly one level-k cell.  A Lambda-distribution
orders points of a finite cloud so that, for every level ``k``, the first
``N_k`` points meet each occupied k-cell exactly once.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np


class OutOfBoxError(ValueError):
    pass


@dataclass(frozen=True)
class LatticeSpec:
    n: int
    R: int
    beta: int
    K: int

    def __post_init__(self):
        for name in ("n", "R", "beta", "K"):
            v = getattr(self, name)
            if int(v) != v:
                raise ValueError(f"{name} must be an integer")
        if self.n < 1 or self.R < 1 or self.beta < 2 or self.K < 0:
            raise ValueError("need n >= 1, R >= 1, beta >= 2 and K >= 0")

    def side(self, k: int) -> int:
        """Cells per axis at level ``k``."""
        return 2 * self.R * self.beta ** k

    def count(self, k: int) -> int:
        return self.side(k) ** self.n

    def width(self, k: int) -> float:
        return float(self.beta) ** -k


@dataclass(frozen=True)
class CellId:
    level: int
    index: tuple

    def bounds(self, spec: LatticeSpec):
        """Exact corners as fractions: ``[lo, hi)`` per axis."""
        w = Fraction(1, spec.beta ** self.level)
        lo = tuple(i * w for i in self.index)
        return lo, tuple(a + w for a in lo)

    def float_bounds(self, spec: LatticeSpec):
        lo, hi = self.bounds(spec)
        return np.array([float(a) for a in lo]), np.array([float(b) for b in hi])

    def parent(self, spec: LatticeSpec) -> "CellId":
        if self.level == 0:
            raise ValueError("level-0 cells have no parent")
        return CellId(self.level - 1, tuple(i // spec.beta for i in self.index))


def _check_box(X: np.ndarray, spec: LatticeSpec):
    if X.ndim != 2 or X.shape[1] != spec.n:
        raise ValueError(f"expected points of dimension {spec.n}")
    if not np.all(np.isfinite(X)) or np.any(X < -spec.R) or np.any(X >= spec.R):
        raise OutOfBoxError(f"points must lie in [-{spec.R}, {spec.R})^{spec.n}")


def cell_of(x, k: int, spec: LatticeSpec) -> CellId:
    """The level-``k`` cell containing ``x``, using exact rational arithmetic."""
    x = np.asarray(x, dtype=float).reshape(-1)
    _check_box(x.reshape(1, -1), spec)
    scale = spec.beta ** k
    return CellId(k, tuple(int((Fraction(float(v)) * scale).__floor__()) for v in x))


def cell_indices(X, k: int, spec: LatticeSpec) -> np.ndarray:
    """Vectorised ``cell_of``: integer indices, shape ``(m, n)``.

    Float floors are exact away from cell faces; coordinates within rounding
    distance of a face are redone in rational arithmetic.
    """
    X = np.asarray(X, dtype=float)
    _check_box(X, spec)
    scale = spec.beta ** k
    Y = X * float(scale)
    idx = np.floor(Y).astype(np.int64)
    near = np.abs(Y - np.rint(Y)) <= 1e-9 * np.maximum(1.0, np.abs(Y))
    for i, d in zip(*np.nonzero(near)):
        idx[i, d] = int((Fraction(float(X[i, d])) * scale).__floor__())
    return idx


def cell_keys(idx: np.ndarray, k: int, spec: LatticeSpec) -> np.ndarray:
    """Scalar keys for cell indices; rows compare equal iff keys do."""
    side = spec.side(k)
    shifted = idx + spec.R * spec.beta ** k
    if side ** spec.n < 2 ** 62:
        return np.ravel_multi_index(tuple(shifted.T), (side,) * spec.n)
    # too many cells for a flat int64 key: fall back to row-unique labels
    _, inv = np.unique(shifted, axis=0, return_inverse=True)
    return inv.reshape(-1).astype(np.int64)


def lexicographic_order(S: np.ndarray) -> np.ndarray:
    return np.lexsort(S.T[::-1])


@dataclass(frozen=True)
class LambdaDistribution:
    spec: LatticeSpec
    points: np.ndarray       # (N_K, n), P_1 first
    counts: tuple            # N_1, ..., N_K
    intro_level: np.ndarray  # level at which each P_j was introduced
    source_index: np.ndarray  # row of each P_j in the input cloud

    def prefix(self, k: int) -> np.ndarray:
        """``P_1, ..., P_{N_k}``."""
        if k < 1 or k > self.spec.K:
            raise ValueError(f"level must be in 1..{self.spec.K}")
        return self.points[: self.counts[k - 1]]

    def n_at(self, k: int) -> int:
        return self.counts[k - 1]


def lambda_distribution(S, spec: LatticeSpec) -> LambdaDistribution:
    """Order a finite cloud into a Lambda-distribution for levels ``1..K``.

    Occupied cells keep the point inherited from their parent; a cell with no
    inherited point takes the lexicographically smallest cloud point in it.
    New points of a level are appended in lexicographic order.
    """
    S = np.asarray(S, dtype=float)
    if S.ndim == 1:
        S = S.reshape(-1, spec.n)
    if S.shape[0] == 0:
        raise ValueError("empty cloud")
    _check_box(S, spec)
    order = lexicographic_order(S)
    Ss = S[order]
    chosen = np.empty(0, dtype=np.int64)   # rows of Ss
    levels: list[np.ndarray] = []
    counts = []
    for k in range(1, spec.K + 1):
        keys = cell_keys(cell_indices(Ss, k, spec), k, spec)
        uniq, first = np.unique(keys, return_index=True)
        taken = np.isin(uniq, keys[chosen]) if chosen.size else np.zeros(uniq.size, bool)
        fresh = np.sort(first[~taken])
        chosen = np.concatenate([chosen, fresh])
        levels.append(np.full(fresh.size, k, dtype=np.int64))
        counts.append(int(chosen.size))
    intro = np.concatenate(levels) if levels else np.empty(0, np.int64)
    return LambdaDistribution(spec, Ss[chosen], tuple(counts), intro, order[chosen])


def exactly_one_violations(dist: LambdaDistribution, S) -> list[tuple]:
    """Levels and cells where the defining property fails (empty list if none)."""
    S = np.asarray(S, dtype=float).reshape(-1, dist.spec.n)
    spec = dist.spec
    bad = []
    for k in range(1, spec.K + 1):
        occ = np.unique(cell_keys(cell_indices(S, k, spec), k, spec))
        pk = cell_keys(cell_indices(dist.prefix(k), k, spec), k, spec)
        cells, cnt = np.unique(pk, return_counts=True)
        if np.any(cnt != 1):
            bad.extend((k, int(c), "multiple") for c in cells[cnt != 1])
        missing = np.setdiff1d(occ, cells)
        bad.extend((k, int(c), "missing") for c in missing)
        extra = np.setdiff1d(cells, occ)
        bad.extend((k, int(c), "outside cloud") for c in extra)
        if len(occ) != dist.n_at(k):
            bad.append((k, -1, "count"))
    return bad


def level_centers(spec: LatticeSpec, k: int, lo: Sequence[float] = None, hi: Sequence[float] = None):
    """Centres of level-``k`` cells, optionally only those inside the box ``[lo, hi]``."""
    w = spec.width(k)
    side = spec.side(k)
    axis = -spec.R + w * (np.arange(side) + 0.5)
    axes = []
    for d in range(spec.n):
        a = axis
        if lo is not None:
            a = a[(a > lo[d]) & (a < hi[d])]
        axes.append(a)
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.reshape(-1) for m in mesh], axis=1)


def write_distribution_csv(path, dist: LambdaDistribution):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["j"] + [f"x{d}" for d in range(dist.spec.n)] + ["level"])
        for j, (p, lev) in enumerate(zip(dist.points, dist.intro_level), start=1):
            w.writerow([j] + [repr(float(v)) for v in p] + [int(lev)])
