"""Exact set descriptions on R^n.

Every region answers three kinds of question:

* ``contains(x)`` / ``contains_many(X)`` -- pointwise membership,
* ``classify(lo, hi)`` -- a three-valued verdict on axis-aligned boxes
  (``INSIDE``, ``OUTSIDE`` or ``UNKNOWN``), used by the cell quadrature,
* ``contains_ball(c, r)`` -- whether an open ball lies in the region.

Primitive regions are open.  Box verdicts ignore measure-zero boundary
contact, so a cell sharing a face with a half-space boundary is reported as
inside; every downstream consumer integrates, which makes this harmless.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

INSIDE = np.int8(1)
OUTSIDE = np.int8(0)
UNKNOWN = np.int8(-1)


class DimensionError(ValueError):
    pass


def _as_points(X, dim: int) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.shape[1] != dim:
        raise DimensionError(f"expected points of dimension {dim}, got {X.shape[1]}")
    return X


def _as_point(x, dim: int) -> np.ndarray:
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != dim:
        raise DimensionError(f"expected a point of dimension {dim}, got {x.shape[0]}")
    return x


def combine_and(*codes: np.ndarray) -> np.ndarray:
    """Three-valued conjunction of box verdicts."""
    out = np.full(np.shape(codes[0]), INSIDE, dtype=np.int8)
    for c in codes:
        out = np.where((out == OUTSIDE) | (c == OUTSIDE), OUTSIDE,
                       np.where((out == INSIDE) & (c == INSIDE), INSIDE, UNKNOWN)).astype(np.int8)
    return out


def combine_or(*codes: np.ndarray) -> np.ndarray:
    out = np.full(np.shape(codes[0]), OUTSIDE, dtype=np.int8)
    for c in codes:
        out = np.where((out == INSIDE) | (c == INSIDE), INSIDE,
                       np.where((out == OUTSIDE) & (c == OUTSIDE), OUTSIDE, UNKNOWN)).astype(np.int8)
    return out


def negate(code: np.ndarray) -> np.ndarray:
    return np.where(code == INSIDE, OUTSIDE, np.where(code == OUTSIDE, INSIDE, UNKNOWN)).astype(np.int8)


class Region:
    """Base class; subclasses are immutable."""

    dim: int

    def contains(self, x) -> bool:
        return bool(self.contains_many(_as_point(x, self.dim)[None, :])[0])

    def contains_many(self, X) -> np.ndarray:
        raise NotImplementedError

    def classify(self, lo, hi) -> np.ndarray:
        raise NotImplementedError

    def contains_ball(self, c, r: float) -> bool:
        # conservative default: the bounding box of the ball must be inside
        c = _as_point(c, self.dim)
        return bool(self.classify((c - r)[None, :], (c + r)[None, :])[0] == INSIDE)

    def bbox(self):
        """(lo, hi) of a box containing the region, or None when unbounded."""
        return None

    @property
    def certified(self) -> bool:
        """True when ``classify`` verdicts are exact rather than sampled."""
        return True

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class HalfSpace(Region):
    """Open half-space ``{x : normal . x < offset}``."""

    normal: np.ndarray
    offset: float = 0.0

    def __post_init__(self):
        nrm = np.asarray(self.normal, dtype=float).reshape(-1)
        length = np.linalg.norm(nrm)
        if length == 0:
            raise ValueError("half-space normal must be nonzero")
        object.__setattr__(self, "normal", nrm / length)
        object.__setattr__(self, "offset", float(self.offset) / length)

    @property
    def dim(self) -> int:
        return self.normal.shape[0]

    def contains_many(self, X):
        return _as_points(X, self.dim) @ self.normal < self.offset

    def classify(self, lo, hi):
        lo = _as_points(lo, self.dim)
        hi = _as_points(hi, self.dim)
        mid = 0.5 * (lo + hi) @ self.normal
        spread = 0.5 * (hi - lo) @ np.abs(self.normal)
        out = np.full(lo.shape[0], UNKNOWN, dtype=np.int8)
        out[mid + spread <= self.offset] = INSIDE
        out[mid - spread >= self.offset] = OUTSIDE
        return out

    def contains_ball(self, c, r):
        return float(_as_point(c, self.dim) @ self.normal) + r <= self.offset

    def to_dict(self):
        return {"type": "halfspace", "normal": self.normal.tolist(), "offset": self.offset}


@dataclass(frozen=True, eq=False)
class Ball(Region):
    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float).reshape(-1))
        if not self.radius > 0:
            raise ValueError("ball radius must be positive")
        object.__setattr__(self, "radius", float(self.radius))

    @property
    def dim(self):
        return self.center.shape[0]

    def contains_many(self, X):
        d = _as_points(X, self.dim) - self.center
        return np.einsum("ij,ij->i", d, d) < self.radius ** 2

    def classify(self, lo, hi):
        lo = _as_points(lo, self.dim)
        hi = _as_points(hi, self.dim)
        near = np.clip(self.center, lo, hi) - self.center
        far = np.maximum(np.abs(lo - self.center), np.abs(hi - self.center))
        dmin = np.einsum("ij,ij->i", near, near)
        dmax = np.einsum("ij,ij->i", far, far)
        r2 = self.radius ** 2
        out = np.full(lo.shape[0], UNKNOWN, dtype=np.int8)
        out[dmax <= r2] = INSIDE
        out[dmin >= r2] = OUTSIDE
        return out

    def contains_ball(self, c, r):
        return float(np.linalg.norm(_as_point(c, self.dim) - self.center)) + r <= self.radius

    def bbox(self):
        return self.center - self.radius, self.center + self.radius

    def distance_to_complement(self, X):
        d = np.linalg.norm(_as_points(X, self.dim) - self.center, axis=1)
        return np.maximum(self.radius - d, 0.0)

    def to_dict(self):
        return {"type": "ball", "center": self.center.tolist(), "radius": self.radius}


@dataclass(frozen=True, eq=False)
class Box(Region):
    """Open box ``prod (lo_i, hi_i)``."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float).reshape(-1)
        hi = np.asarray(self.hi, dtype=float).reshape(-1)
        if lo.shape != hi.shape:
            raise DimensionError("box corners differ in dimension")
        if np.any(lo > hi):
            raise ValueError("box requires lo <= hi componentwise")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self):
        return self.lo.shape[0]

    def contains_many(self, X):
        X = _as_points(X, self.dim)
        return np.all((X > self.lo) & (X < self.hi), axis=1)

    def classify(self, lo, hi):
        lo = _as_points(lo, self.dim)
        hi = _as_points(hi, self.dim)
        out = np.full(lo.shape[0], UNKNOWN, dtype=np.int8)
        out[np.all((lo >= self.lo) & (hi <= self.hi), axis=1)] = INSIDE
        out[np.any((hi <= self.lo) | (lo >= self.hi), axis=1)] = OUTSIDE
        return out

    def contains_ball(self, c, r):
        c = _as_point(c, self.dim)
        return bool(np.all(c - r >= self.lo) and np.all(c + r <= self.hi))

    def bbox(self):
        return self.lo.copy(), self.hi.copy()

    def distance_to_complement(self, X):
        X = _as_points(X, self.dim)
        d = np.minimum(X - self.lo, self.hi - X).min(axis=1)
        return np.maximum(d, 0.0)

    def volume(self) -> float:
        return float(np.prod(self.hi - self.lo))

    def to_dict(self):
        return {"type": "box", "lo": self.lo.tolist(), "hi": self.hi.tolist()}


@dataclass(frozen=True, eq=False)
class Predicate(Region):
    """A region given by a membership callback.

    ``classify_fn(lo, hi)``, when supplied, must return exact box verdicts.
    Without it boxes are judged by sampling corners and the centre; a box
    whose samples disagree is UNKNOWN, otherwise the common value is used and
    the region reports ``certified = False``.
    """

    dim: int
    func: Callable[[np.ndarray], np.ndarray]
    box: Optional[tuple] = None
    classify_fn: Optional[Callable] = None
    lipschitz_boundary: bool = False
    name: str = "predicate"
    params: dict = field(default_factory=dict)

    def contains_many(self, X):
        return np.asarray(self.func(_as_points(X, self.dim)), dtype=bool)

    def classify(self, lo, hi):
        lo = _as_points(lo, self.dim)
        hi = _as_points(hi, self.dim)
        if self.classify_fn is not None:
            return np.asarray(self.classify_fn(lo, hi), dtype=np.int8)
        m, n = lo.shape
        corners = np.array(np.meshgrid(*[[0.0, 1.0]] * n, indexing="ij")).reshape(n, -1).T
        probes = np.vstack([corners, np.full((1, n), 0.5)])
        pts = lo[:, None, :] + probes[None, :, :] * (hi - lo)[:, None, :]
        inside = self.func(pts.reshape(-1, n)).reshape(m, -1)
        out = np.full(m, UNKNOWN, dtype=np.int8)
        out[inside.all(axis=1)] = INSIDE
        out[~inside.any(axis=1)] = OUTSIDE
        return out

    @property
    def certified(self):
        return self.classify_fn is not None

    def bbox(self):
        if self.box is None:
            return None
        return np.asarray(self.box[0], float), np.asarray(self.box[1], float)

    def to_dict(self):
        return {"type": "predicate", "name": self.name, "params": dict(self.params)}


class _Composite(Region):
    parts: tuple

    def __init__(self, parts: Sequence[Region]):
        parts = tuple(parts)
        if not parts:
            raise ValueError("composite region needs at least one part")
        dims = {p.dim for p in parts}
        if len(dims) != 1:
            raise DimensionError("parts of a composite region differ in dimension")
        self.parts = parts
        self.dim = dims.pop()

    @property
    def certified(self):
        return all(p.certified for p in self.parts)


class Union(_Composite):
    def contains_many(self, X):
        X = _as_points(X, self.dim)
        out = np.zeros(X.shape[0], dtype=bool)
        for p in self.parts:
            out |= p.contains_many(X)
        return out

    def classify(self, lo, hi):
        return combine_or(*[p.classify(lo, hi) for p in self.parts])

    def contains_ball(self, c, r):
        if any(p.contains_ball(c, r) for p in self.parts):
            return True
        return Region.contains_ball(self, c, r)

    def bbox(self):
        boxes = [p.bbox() for p in self.parts]
        if any(b is None for b in boxes):
            return None
        return np.min([b[0] for b in boxes], axis=0), np.max([b[1] for b in boxes], axis=0)

    def to_dict(self):
        return {"type": "union", "parts": [p.to_dict() for p in self.parts]}


class Intersection(_Composite):
    def contains_many(self, X):
        X = _as_points(X, self.dim)
        out = np.ones(X.shape[0], dtype=bool)
        for p in self.parts:
            out &= p.contains_many(X)
        return out

    def classify(self, lo, hi):
        return combine_and(*[p.classify(lo, hi) for p in self.parts])

    def contains_ball(self, c, r):
        return all(p.contains_ball(c, r) for p in self.parts)

    def bbox(self):
        boxes = [b for b in (p.bbox() for p in self.parts) if b is not None]
        if not boxes:
            return None
        return np.max([b[0] for b in boxes], axis=0), np.min([b[1] for b in boxes], axis=0)

    def to_dict(self):
        return {"type": "intersection", "parts": [p.to_dict() for p in self.parts]}


class Complement(Region):
    def __init__(self, inner: Region):
        self.inner = inner
        self.dim = inner.dim

    def contains_many(self, X):
        return ~self.inner.contains_many(X)

    def classify(self, lo, hi):
        return negate(self.inner.classify(lo, hi))

    def contains_ball(self, c, r):
        inner = self.inner
        if isinstance(inner, Ball):
            return float(np.linalg.norm(_as_point(c, self.dim) - inner.center)) >= r + inner.radius
        return Region.contains_ball(self, c, r)

    @property
    def certified(self):
        return self.inner.certified

    def to_dict(self):
        return {"type": "complement", "inner": self.inner.to_dict()}


class Everything(Region):
    """The whole space R^n."""

    def __init__(self, dim: int):
        self.dim = int(dim)

    def contains_many(self, X):
        return np.ones(_as_points(X, self.dim).shape[0], dtype=bool)

    def classify(self, lo, hi):
        return np.full(_as_points(lo, self.dim).shape[0], INSIDE, dtype=np.int8)

    def contains_ball(self, c, r):
        return True

    def to_dict(self):
        return {"type": "everything", "dim": self.dim}


# ---------------------------------------------------------------------------
# Union of balls with a multi-scale hash grid


class _Grid:
    """Uniform hash grid over one radius class of balls."""

    def __init__(self, centers: np.ndarray, radii: np.ndarray, ids: np.ndarray, cell: float):
        self.centers = centers
        self.radii = radii
        self.ids = ids
        self.cell = float(cell)
        self.rmax = float(radii.max())
        n = centers.shape[1]
        self.origin = centers.min(axis=0) - self.rmax - self.cell
        top = centers.max(axis=0) + self.rmax + self.cell
        self.shape = tuple(int(s) for s in np.floor((top - self.origin) / self.cell).astype(np.int64) + 2)
        if float(np.prod(np.array(self.shape, dtype=float))) >= 2.0 ** 62:
            raise OverflowError("hash grid key space exceeds int64")
        lo_idx = self._idx(centers - radii[:, None])
        hi_idx = self._idx(centers + radii[:, None])
        span = int((hi_idx - lo_idx).max()) + 1
        offsets = np.array(np.meshgrid(*[np.arange(span)] * n, indexing="ij")).reshape(n, -1).T
        keys, owners = [], []
        for off in offsets:
            idx = lo_idx + off
            ok = np.all(idx <= hi_idx, axis=1)
            if not ok.any():
                continue
            # keep only grid cells the ball actually meets
            clo = self.origin + idx[ok] * self.cell
            near = np.clip(centers[ok], clo, clo + self.cell) - centers[ok]
            meets = np.einsum("ij,ij->i", near, near) < radii[ok] ** 2
            sel = np.flatnonzero(ok)[meets]
            keys.append(self._key(idx[sel]))
            owners.append(sel)
        keys = np.concatenate(keys)
        owners = np.concatenate(owners)
        order = np.argsort(keys, kind="stable")
        keys = keys[order]
        self.members = owners[order]
        self.keys, self.starts = np.unique(keys, return_index=True)
        self.stops = np.append(self.starts[1:], keys.shape[0])

    def _idx(self, X):
        return np.floor((X - self.origin) / self.cell).astype(np.int64)

    def _key(self, idx):
        idx = np.clip(idx, 0, np.array(self.shape) - 1)
        return np.ravel_multi_index(idx.T, self.shape)

    def _lookup(self, keys):
        """Expand grid keys into (query position, member) pairs."""
        pos = np.searchsorted(self.keys, keys)
        pos = np.minimum(pos, self.keys.shape[0] - 1)
        hit = self.keys[pos] == keys
        q = np.flatnonzero(hit)
        counts = self.stops[pos[q]] - self.starts[pos[q]]
        rows = np.repeat(q, counts)
        first = np.repeat(self.starts[pos[q]], counts)
        within = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
        return rows, self.members[first + within]

    def query(self, X):
        idx = self._idx(X)
        valid = np.all((idx >= 0) & (idx < np.array(self.shape)), axis=1)
        out = np.zeros(X.shape[0], dtype=bool)
        if not valid.any():
            return out
        vq = np.flatnonzero(valid)
        rows, balls = self._lookup(self._key(idx[vq]))
        d = X[vq[rows]] - self.centers[balls]
        inside = np.einsum("ij,ij->i", d, d) < self.radii[balls] ** 2
        out[vq[rows[inside]]] = True
        return out

    def _pairs_ball_centric(self, lo, h, origin):
        """Pairs for boxes lying on a common lattice of spacing ``h``."""
        n = lo.shape[1]
        bidx = np.rint((lo - origin) / h).astype(np.int64)
        bmin = bidx.min(axis=0)
        bshape = bidx.max(axis=0) - bmin + 1
        bkeys = np.ravel_multi_index((bidx - bmin).T, bshape)
        order = np.argsort(bkeys)
        sorted_keys = bkeys[order]
        # balls near the union of boxes
        near = np.all((self.centers + self.radii[:, None] > lo.min(axis=0))
                      & (self.centers - self.radii[:, None] < lo.max(axis=0) + h), axis=1)
        sel = np.flatnonzero(near)
        if sel.size == 0:
            return np.empty(0, np.int64), np.empty(0, np.int64)
        c = self.centers[sel]
        r = self.radii[sel]
        blo = np.floor((c - r[:, None] - origin) / h).astype(np.int64)
        bhi = np.floor((c + r[:, None] - origin) / h).astype(np.int64)
        span = int((bhi - blo).max()) + 1
        offsets = np.array(np.meshgrid(*[np.arange(span)] * n, indexing="ij")).reshape(n, -1).T
        rows_all, balls_all = [], []
        for off in offsets:
            idx = blo + off
            ok = np.all((idx <= bhi) & (idx >= bmin) & (idx < bmin + bshape), axis=1)
            if not ok.any():
                continue
            k = np.ravel_multi_index((idx[ok] - bmin).T, bshape)
            pos = np.searchsorted(sorted_keys, k)
            pos = np.minimum(pos, sorted_keys.shape[0] - 1)
            hit = sorted_keys[pos] == k
            rows_all.append(order[pos[hit]])
            balls_all.append(sel[np.flatnonzero(ok)[hit]])
        if not rows_all:
            return np.empty(0, np.int64), np.empty(0, np.int64)
        return np.concatenate(rows_all), np.concatenate(balls_all)

    def _pairs_cell_centric(self, lo, hi):
        n = lo.shape[1]
        ilo = np.clip(self._idx(lo), 0, np.array(self.shape) - 1)
        ihi = np.clip(self._idx(hi), 0, np.array(self.shape) - 1)
        counts = np.prod(ihi - ilo + 1, axis=1)
        box = np.repeat(np.arange(lo.shape[0]), counts)
        within = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
        ext = (ihi - ilo + 1)[box]
        cells = np.empty((box.shape[0], n), dtype=np.int64)
        rem = within
        for d in range(n - 1, -1, -1):
            cells[:, d] = ilo[box, d] + rem % ext[:, d]
            rem = rem // ext[:, d]
        rows, balls = self._lookup(self._key(cells))
        rows = box[rows]
        # a ball registered in several cells of one box appears repeatedly; harmless
        return rows, balls

    def classify_pairs(self, lo, hi):
        m, n = lo.shape
        h = hi[0] - lo[0]
        lattice = np.allclose(hi - lo, h, rtol=1e-12, atol=0)
        cell_cost = float(np.prod(np.floor(h / self.cell) + 2)) * m
        # ball-centric enumeration loops over the boxes one ball can touch
        span_cost = float(np.prod(np.floor(2 * self.rmax / h) + 2))
        if lattice and span_cost <= 256 and cell_cost > 4.0 * self.centers.shape[0]:
            origin = lo.min(axis=0)
            snapped = np.allclose(np.rint((lo - origin) / h) * h + origin, lo, rtol=0,
                                  atol=1e-9 * float(h.max()))
            if snapped:
                return self._pairs_ball_centric(lo, h, origin)
        return self._pairs_cell_centric(lo, hi)


class BallUnionIndex:
    """Indexed union of open balls.

    Balls are grouped into dyadic radius classes, one hash grid per class.
    The grid spacing of a class is the larger of its diameter bound and the
    mean spacing of its centres, so every ball touches at most ``2^n`` grid
    cells and a cell holds O(1) balls for scattered inputs.
    """

    def __init__(self, centers, radii, dim: Optional[int] = None):
        radii = np.asarray(radii, dtype=float).reshape(-1)
        if radii.size == 0:
            if dim is None:
                c = np.asarray(centers, dtype=float)
                dim = c.shape[1] if c.ndim == 2 and c.shape[1] else None
            if dim is None:
                raise ValueError("an empty ball union needs an explicit dimension")
            centers = np.empty((0, dim))
        centers = np.asarray(centers, dtype=float).reshape(radii.size, -1) if radii.size else centers
        if np.any(radii <= 0):
            raise ValueError("ball radii must be positive")
        self.centers = centers
        self.radii = radii
        self.dim = centers.shape[1]
        self.grids: list[_Grid] = []
        if radii.size == 0:
            return
        cls = np.floor(np.log2(radii)).astype(np.int64)
        for c in np.unique(cls):
            ids = np.flatnonzero(cls == c)
            cc = centers[ids]
            rr = radii[ids]
            ext = np.maximum(cc.max(axis=0) - cc.min(axis=0), 2 * rr.max())
            spacing = float(np.prod(ext) / ids.size) ** (1.0 / self.dim)
            cell = max(2.0 * float(rr.max()), spacing)
            self.grids.append(_Grid(cc, rr, ids, cell))

    def __len__(self):
        return self.radii.size

    def query(self, X) -> np.ndarray:
        X = _as_points(X, self.dim)
        out = np.zeros(X.shape[0], dtype=bool)
        for g in self.grids:
            rest = ~out
            if not rest.any():
                break
            out[rest] = g.query(X[rest])
        return out

    def query_linear(self, X) -> np.ndarray:
        """Brute-force membership; the reference for ``query``."""
        X = _as_points(X, self.dim)
        out = np.zeros(X.shape[0], dtype=bool)
        for c, r in zip(self.centers, self.radii):
            d = X - c
            out |= np.einsum("ij,ij->i", d, d) < r * r
        return out

    def classify(self, lo, hi) -> np.ndarray:
        lo = _as_points(lo, self.dim)
        hi = _as_points(hi, self.dim)
        m = lo.shape[0]
        hits = np.zeros(m, dtype=bool)
        covers = np.zeros(m, dtype=bool)
        if m == 0:
            return np.empty(0, dtype=np.int8)
        for g in self.grids:
            rows, balls = g.classify_pairs(lo, hi)
            if rows.size == 0:
                continue
            c = g.centers[balls]
            r2 = g.radii[balls] ** 2
            blo, bhi = lo[rows], hi[rows]
            near = np.clip(c, blo, bhi) - c
            far = np.maximum(np.abs(blo - c), np.abs(bhi - c))
            dmin = np.einsum("ij,ij->i", near, near)
            dmax = np.einsum("ij,ij->i", far, far)
            hits[rows[dmin < r2]] = True
            covers[rows[dmax <= r2]] = True
        out = np.full(m, OUTSIDE, dtype=np.int8)
        out[hits] = UNKNOWN
        out[covers] = INSIDE
        return out

    def grid_membership_ok(self) -> bool:
        """Every ball is listed in every grid cell it meets."""
        for g in self.grids:
            for b in range(g.centers.shape[0]):
                c, r = g.centers[b], g.radii[b]
                lo = g._idx(c - r)
                hi = g._idx(c + r)
                rng = [np.arange(a, z + 1) for a, z in zip(lo, hi)]
                for idx in np.array(np.meshgrid(*rng, indexing="ij")).reshape(self.dim, -1).T:
                    clo = g.origin + idx * g.cell
                    near = np.clip(c, clo, clo + g.cell) - c
                    if near @ near < r * r:
                        key = g._key(idx[None, :])[0]
                        pos = np.searchsorted(g.keys, key)
                        if pos >= g.keys.size or g.keys[pos] != key:
                            return False
                        if b not in g.members[g.starts[pos]:g.stops[pos]]:
                            return False
        return True


def build_ball_union(balls=None, centers=None, radii=None, dim: Optional[int] = None) -> BallUnionIndex:
    """Index a list of ``(center, radius)`` pairs, or parallel arrays."""
    if balls is not None:
        balls = list(balls)
        if not balls:
            return BallUnionIndex(np.empty((0, dim or 0)), np.empty(0), dim=dim)
        centers = np.array([np.asarray(c, float).reshape(-1) for c, _ in balls])
        radii = np.array([float(r) for _, r in balls])
    return BallUnionIndex(centers, radii, dim=dim)


class BallUnion(Region):
    """Region view of a :class:`BallUnionIndex`."""

    def __init__(self, index: BallUnionIndex):
        self.index = index
        self.dim = index.dim

    def contains_many(self, X):
        return self.index.query(X)

    def classify(self, lo, hi):
        return self.index.classify(lo, hi)

    def contains_ball(self, c, r):
        c = _as_point(c, self.dim)
        d = np.linalg.norm(self.index.centers - c, axis=1)
        return bool(np.any(d + r <= self.index.radii))

    def bbox(self):
        if len(self.index) == 0:
            return np.zeros(self.dim), np.zeros(self.dim)
        return ((self.index.centers - self.index.radii[:, None]).min(axis=0),
                (self.index.centers + self.index.radii[:, None]).max(axis=0))

    def to_dict(self):
        return {"type": "ballunion",
                "centers": self.index.centers.tolist(),
                "radii": self.index.radii.tolist()}


# ---------------------------------------------------------------------------
# Lipschitz-certified regions


def lipschitz_region(dim: int, value: Callable[[np.ndarray], np.ndarray], threshold: float,
                     lipschitz: float = 1.0, name: str = "sublevel", params=None, box=None) -> Predicate:
    """``{x : value(x) < threshold}`` for a ``lipschitz``-Lipschitz ``value``."""

    def func(X):
        return value(X) < threshold

    def classify(lo, hi):
        mid = 0.5 * (lo + hi)
        rad = lipschitz * 0.5 * np.linalg.norm(hi - lo, axis=1)
        v = value(mid)
        out = np.full(lo.shape[0], UNKNOWN, dtype=np.int8)
        out[v + rad < threshold] = INSIDE
        out[v - rad >= threshold] = OUTSIDE
        return out

    return Predicate(dim=dim, func=func, box=box, classify_fn=classify, lipschitz_boundary=True,
                     name=name, params=dict(params or {}))


def distance_to_complement(region: Region, X) -> np.ndarray:
    fn = getattr(region, "distance_to_complement", None)
    if fn is None:
        raise NotImplementedError(f"no distance function for {type(region).__name__}")
    return fn(X)


def distance_to_box(lo, hi, X) -> np.ndarray:
    X = np.asarray(X, float)
    gap = np.maximum(np.maximum(lo - X, X - hi), 0.0)
    return np.linalg.norm(gap, axis=1)


# ---------------------------------------------------------------------------
# Named predicates and JSON round trip

PREDICATES: dict[str, Callable[..., Predicate]] = {}


def register_predicate(name: str):
    def deco(factory):
        PREDICATES[name] = factory
        return factory
    return deco


@register_predicate("cusp")
def cusp_region(alpha: float = 3.0, dim: int = 2) -> Predicate:
    """The thin set ``{(t, s) : t >= 0, 0 <= s <= t**alpha}`` in R^2.

    For ``dim > 2`` the remaining coordinates are free, giving a cylinder over the cusp.
    """
    alpha = float(alpha)
    if int(dim) != dim or dim < 2:
        raise ValueError("cusp needs dim >= 2")

    def func(X):
        t, s = X[:, 0], X[:, 1]
        tp = np.maximum(t, 0.0)
        return (t >= 0) & (s >= 0) & (s <= tp ** alpha)

    def classify(lo, hi):
        t0, s0 = np.maximum(lo[:, 0], 0.0), lo[:, 1]
        t1, s1 = hi[:, 0], hi[:, 1]
        out = np.full(lo.shape[0], UNKNOWN, dtype=np.int8)
        inside = (lo[:, 0] >= 0) & (s0 >= 0) & (s1 <= t0 ** alpha)
        outside = (t1 <= 0) | (s1 <= 0) | (s0 >= np.maximum(t1, 0.0) ** alpha)
        out[inside] = INSIDE
        out[outside] = OUTSIDE
        return out

    params = {"alpha": alpha} if dim == 2 else {"alpha": alpha, "dim": int(dim)}
    return Predicate(dim=int(dim), func=func, classify_fn=classify, name="cusp", params=params)


@register_predicate("cusp_complement")
def cusp_complement(alpha: float = 3.0, dim: int = 2) -> Region:
    """``R^dim`` minus the cusp; its complement ratio at 0 decays like r^(alpha-1)."""
    return Complement(cusp_region(alpha, dim))


@register_predicate("parabola_band")
def parabola_band() -> Predicate:
    """``{(a, b) : a >= 0, |b - a^2| <= a^4}``."""

    def func(X):
        a, b = X[:, 0], X[:, 1]
        return (a >= 0) & (np.abs(b - a * a) <= a ** 4)

    def classify(lo, hi):
        a0, a1 = lo[:, 0], hi[:, 0]
        b0, b1 = lo[:, 1], hi[:, 1]
        ap = np.maximum(a0, 0.0)
        out = np.full(lo.shape[0], UNKNOWN, dtype=np.int8)
        # b - a^2 ranges over [b0 - a1^2, b1 - a0^2] when a0 >= 0
        inside = (a0 >= 0) & (b0 - a1 * a1 >= -a0 ** 4) & (b1 - a0 * a0 <= a0 ** 4)
        a1p = np.maximum(a1, 0.0)
        outside = (a1 < 0) | (b0 - a1p * a1p > a1p ** 4) | (b1 - ap * ap < -a1p ** 4)
        out[inside] = INSIDE
        out[outside] = OUTSIDE
        return out

    return Predicate(dim=2, func=func, classify_fn=classify, name="parabola_band")


def region_from_dict(d: dict) -> Region:
    kind = d["type"]
    if kind == "halfspace":
        return HalfSpace(d["normal"], d.get("offset", 0.0))
    if kind == "ball":
        return Ball(d["center"], d["radius"])
    if kind == "box":
        return Box(d["lo"], d["hi"])
    if kind == "union":
        return Union([region_from_dict(p) for p in d["parts"]])
    if kind == "intersection":
        return Intersection([region_from_dict(p) for p in d["parts"]])
    if kind == "complement":
        return Complement(region_from_dict(d["inner"]))
    if kind == "everything":
        return Everything(d["dim"])
    if kind == "ballunion":
        radii = np.asarray(d["radii"], float)
        centers = np.asarray(d["centers"], float)
        return BallUnion(BallUnionIndex(centers, radii, dim=d.get("dim")))
    if kind == "predicate":
        name = d["name"]
        if name not in PREDICATES:
            raise KeyError(f"unregistered predicate {name!r}")
        return PREDICATES[name](**d.get("params", {}))
    raise ValueError(f"unknown region type {kind!r}")


def unit_ball_volume(n: int) -> float:
    return math.pi ** (n / 2) / math.gamma(n / 2 + 1)
