"""Radon measure models and certified ball measures."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np

from . import quadrature
from .regions import (Ball, Box, DimensionError, Everything, Intersection, Region, combine_and,
                      INSIDE, OUTSIDE, UNKNOWN, _as_point, unit_ball_volume)


class SupportError(ValueError):
    """Raised when a ball around the query point has zero measure."""


@dataclass(frozen=True)
class MeasureInterval:
    lower: float
    upper: float
    estimate: Optional[float] = None
    flags: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "lower", float(self.lower))
        object.__setattr__(self, "upper", float(self.upper))
        if self.estimate is not None:
            object.__setattr__(self, "estimate", float(self.estimate))
        if not (math.isfinite(self.lower) and math.isfinite(self.upper)):
            raise ValueError("interval bounds must be finite")
        if self.lower > self.upper:
            raise ValueError(f"lower {self.lower} exceeds upper {self.upper}")
        if self.estimate is None:
            object.__setattr__(self, "estimate", 0.5 * (self.lower + self.upper))

    @property
    def width(self) -> float:
        return self.upper - self.lower

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.lower + self.upper)

    def contains(self, value: float, slack: float = 0.0) -> bool:
        return self.lower - slack <= value <= self.upper + slack

    def overlaps(self, other: "MeasureInterval", slack: float = 0.0) -> bool:
        return self.lower <= other.upper + slack and other.lower <= self.upper + slack

    def __add__(self, other: "MeasureInterval") -> "MeasureInterval":
        return MeasureInterval(self.lower + other.lower, self.upper + other.upper,
                               self.estimate + other.estimate, self.flags | other.flags)

    def scaled(self, c: float) -> "MeasureInterval":
        lo, hi = sorted((c * self.lower, c * self.upper))
        return MeasureInterval(lo, hi, c * self.estimate, self.flags)

    def divide(self, other: "MeasureInterval") -> "MeasureInterval":
        """Outer bound of the quotient of two nonnegative intervals."""
        if other.lower <= 0:
            raise ZeroDivisionError("denominator interval reaches zero")
        est = self.estimate / other.estimate if other.estimate > 0 else self.midpoint / other.midpoint
        lo, hi = self.lower / other.upper, self.upper / other.lower
        return MeasureInterval(lo, hi, min(max(est, lo), hi), self.flags | other.flags)

    @staticmethod
    def exact(value: float) -> "MeasureInterval":
        return MeasureInterval(value, value, value)


@dataclass(frozen=True)
class FrameBounds:
    """Two-sided growth bound ``r^p / C <= mu(B_r(x)) <= C r^q`` for ``r < r_bar``."""

    C: float
    p: float
    q: float
    r_bar: float

    def __post_init__(self):
        for name in ("C", "p", "q", "r_bar"):
            if not getattr(self, name) > 0:
                raise ValueError(f"frame bound {name} must be positive")

    def check_dimension(self, n: int):
        if self.q > min(n, self.p):
            raise ValueError(f"frame bounds need q <= min(n, p): q={self.q}, n={n}, p={self.p}")


@dataclass(frozen=True)
class QuadratureOptions:
    tol: float = 1e-4
    max_depth: int = quadrature.DEFAULT_MAX_DEPTH
    max_cells: int = quadrature.DEFAULT_MAX_CELLS
    seed: int = 0
    mc_points: int = 1 << 16
    # use omega_n r^n for unrestricted, unweighted Lebesgue balls
    closed_form: bool = False


DEFAULT_OPTIONS = QuadratureOptions()


def _opts(opts: Optional[QuadratureOptions], **kw) -> QuadratureOptions:
    opts = opts or DEFAULT_OPTIONS
    kw = {k: v for k, v in kw.items() if v is not None}
    return replace(opts, **kw) if kw else opts


def _from_cells(res: quadrature.CellIntegral, k: int = 0, clip=True) -> MeasureInterval:
    lo, hi, est = res.interval(k)
    if clip:
        lo = max(lo, 0.0)
        hi = max(hi, lo)
        est = min(max(est, lo), hi)
    return MeasureInterval(lo, hi, est, frozenset(res.flags))


class Measure:
    dim: int

    def _restricted(self, E: Optional[Region], x: np.ndarray, r: float,
                    opts: QuadratureOptions) -> MeasureInterval:
        raise NotImplementedError

    def _region(self, E: Region, opts: QuadratureOptions) -> MeasureInterval:
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError


class WeightedLebesgue(Measure):
    """``w L^n``, optionally restricted to a box; ``density=None`` means w = 1."""

    def __init__(self, dim: int, density: Optional[Callable] = None, box=None, name: str = "lebesgue",
                 params: Optional[dict] = None, check_grid: int = 16):
        self.dim = int(dim)
        self.density = density
        self.box = None if box is None else Box(*box) if not isinstance(box, Box) else box
        self.name = name
        self.params = dict(params or {})
        if density is not None and self.box is not None:
            axes = [np.linspace(a, b, check_grid) for a, b in zip(self.box.lo, self.box.hi)]
            pts = np.stack([g.reshape(-1) for g in np.meshgrid(*axes, indexing="ij")], axis=1)
            if np.any(np.asarray(density(pts)) < 0):
                raise ValueError("density must be nonnegative")

    @property
    def translation_invariant(self) -> bool:
        return self.density is None and self.box is None

    def _restricted(self, E, x, r, opts):
        if opts.closed_form and E is None and self.translation_invariant:
            return MeasureInterval.exact(lebesgue_ball_volume(self.dim, r))
        parts = [Ball(x, r)] + ([E] if E is not None else [])
        return self._integrate(parts, opts)

    def _region(self, E, opts):
        return self._integrate([E], opts)

    def _integrate(self, parts, opts):
        if self.box is not None:
            parts = parts + [self.box]
        region = parts[0] if len(parts) == 1 else Intersection(parts)
        lo = hi = None
        for p in parts:
            bb = p.bbox()
            if bb is None:
                continue
            lo = bb[0] if lo is None else np.maximum(lo, bb[0])
            hi = bb[1] if hi is None else np.minimum(hi, bb[1])
        if lo is None:
            raise ValueError("integration region is unbounded")
        if np.any(hi <= lo):
            return MeasureInterval.exact(0.0)
        if self.dim >= 4:
            return self._monte_carlo(region, lo, hi, opts)
        res = quadrature.integrate_set(region.classify, region.contains_many, lo, hi, (self.density,),
                                       tol=opts.tol, max_depth=opts.max_depth,
                                       max_cells=opts.max_cells, certified=region.certified)
        return _from_cells(res)

    def _monte_carlo(self, region, lo, hi, opts):
        n = self.dim
        per_axis = max(2, int(round(opts.mc_points ** (1.0 / n))))
        rng = np.random.default_rng(opts.seed)
        idx = np.stack([g.reshape(-1) for g in np.meshgrid(*[np.arange(per_axis)] * n, indexing="ij")],
                       axis=1)
        u = (idx + rng.random(idx.shape)) / per_axis
        pts = lo + u * (hi - lo)
        w = np.ones(pts.shape[0]) if self.density is None else np.asarray(self.density(pts), float)
        vals = w * region.contains_many(pts)
        vol = float(np.prod(hi - lo))
        est = vol * vals.mean()
        se = vol * vals.std(ddof=1) / math.sqrt(vals.size)
        return MeasureInterval(max(est - 3 * se, 0.0), est + 3 * se, est, frozenset({"probabilistic"}))

    def to_dict(self):
        d = {"type": "lebesgue" if self.density is None else "weighted_lebesgue", "dim": self.dim}
        if self.density is not None:
            d["density"] = self.name
            d["params"] = self.params
        if self.box is not None:
            d["box"] = [self.box.lo.tolist(), self.box.hi.tolist()]
        return d


class SurfaceMeasure(Measure):
    """``weight * H^k`` carried by a chart ``phi: G -> R^n`` (area formula).

    The chart object supplies ``k``, ``n``, ``G`` (a bounded region of R^k),
    ``phi``, ``jacobian_factor`` and ``lipschitz`` (an upper bound for the
    operator norm of Dphi on G).
    """

    def __init__(self, chart, weight: Optional[Callable] = None):
        self.chart = chart
        self.weight = weight
        self.dim = chart.n

    def _restricted(self, E, x, r, opts):
        return self._integrate(E, x, r, opts)

    def _region(self, E, opts):
        return self._integrate(E, None, None, opts)

    def _integrate(self, E, x, r, opts):
        ch = self.chart
        G = ch.G
        L = float(ch.lipschitz)

        def classify(lo, hi):
            mid = 0.5 * (lo + hi)
            c = ch.phi(mid)
            rad = L * 0.5 * np.linalg.norm(hi - lo, axis=1)
            codes = [G.classify(lo, hi)]
            if x is not None:
                d = np.linalg.norm(c - x, axis=1)
                ball = np.full(lo.shape[0], UNKNOWN, dtype=np.int8)
                ball[d + rad <= r] = INSIDE
                ball[d - rad >= r] = OUTSIDE
                codes.append(ball)
            if E is not None:
                codes.append(E.classify(c - rad[:, None], c + rad[:, None]))
            return combine_and(*codes)

        def member(Y):
            P = ch.phi(Y)
            ok = G.contains_many(Y)
            if x is not None:
                ok &= np.einsum("ij,ij->i", P - x, P - x) < r * r
            if E is not None:
                ok &= E.contains_many(P)
            return ok

        def density(Y):
            j = ch.jacobian_factor(Y)
            return j if self.weight is None else j * self.weight(Y)

        lo, hi = G.bbox()
        certified = E is None or E.certified
        res = quadrature.integrate_set(classify, member, lo, hi, (density,), tol=opts.tol,
                                       max_depth=opts.max_depth, max_cells=opts.max_cells,
                                       certified=certified)
        return _from_cells(res)

    def to_dict(self):
        return {"type": "surface", "chart": self.chart.name, "params": dict(self.chart.params)}


class Restriction(Measure):
    """``mu`` restricted to a region."""

    def __init__(self, base: Measure, region: Region):
        if base.dim != region.dim:
            raise DimensionError("restriction region has the wrong dimension")
        self.base = base
        self.region = region
        self.dim = base.dim

    def _restricted(self, E, x, r, opts):
        F = self.region if E is None else Intersection([self.region, E])
        return self.base._restricted(F, x, r, opts)

    def _region(self, E, opts):
        return self.base._region(Intersection([self.region, E]), opts)

    def to_dict(self):
        return {"type": "restriction", "base": self.base.to_dict(), "region": self.region.to_dict()}


class Dirac(Measure):
    def __init__(self, atom):
        self.atom = np.asarray(atom, dtype=float).reshape(-1)
        self.dim = self.atom.shape[0]

    def _restricted(self, E, x, r, opts):
        inside = float(np.linalg.norm(self.atom - x)) < r
        if inside and E is not None:
            inside = E.contains(self.atom)
        return MeasureInterval.exact(1.0 if inside else 0.0)

    def _region(self, E, opts):
        return MeasureInterval.exact(1.0 if E.contains(self.atom) else 0.0)

    def to_dict(self):
        return {"type": "dirac", "atom": self.atom.tolist()}


class Sum(Measure):
    def __init__(self, parts: Sequence[Measure]):
        parts = list(parts)
        if not parts:
            raise ValueError("sum of measures needs at least one part")
        if len({p.dim for p in parts}) != 1:
            raise DimensionError("summands differ in dimension")
        self.parts = parts
        self.dim = parts[0].dim

    def _restricted(self, E, x, r, opts):
        out = MeasureInterval.exact(0.0)
        for p in self.parts:
            out = out + p._restricted(E, x, r, opts)
        return out

    def _region(self, E, opts):
        out = MeasureInterval.exact(0.0)
        for p in self.parts:
            out = out + p._region(E, opts)
        return out

    def to_dict(self):
        return {"type": "sum", "parts": [p.to_dict() for p in self.parts]}


def ball_measure(mu: Measure, x, r: float, tol: Optional[float] = None,
                 opts: Optional[QuadratureOptions] = None, **kw) -> MeasureInterval:
    """Certified interval for ``mu(B_r(x))``."""
    return restricted_ball_measure(mu, None, x, r, tol=tol, opts=opts, **kw)


def restricted_ball_measure(mu: Measure, E: Optional[Region], x, r: float, tol: Optional[float] = None,
                            opts: Optional[QuadratureOptions] = None, **kw) -> MeasureInterval:
    """Certified interval for ``mu(B_r(x) & E)``."""
    if not r > 0:
        raise ValueError("radius must be positive")
    x = _as_point(x, mu.dim)
    if E is not None and E.dim != mu.dim:
        raise DimensionError(f"region dimension {E.dim} differs from measure dimension {mu.dim}")
    if isinstance(E, Everything) or (E is not None and E.certified and E.contains_ball(x, r)):
        E = None
    return mu._restricted(E, x, float(r), _opts(opts, tol=tol, **kw))


def measure_of(mu: Measure, E: Region, tol: Optional[float] = None,
               opts: Optional[QuadratureOptions] = None, **kw) -> MeasureInterval:
    """Certified interval for ``mu(E)``; ``E`` must be bounded."""
    if E.dim != mu.dim:
        raise DimensionError(f"region dimension {E.dim} differs from measure dimension {mu.dim}")
    return mu._region(E, _opts(opts, tol=tol, **kw))


def in_support(mu: Measure, x, radii: Sequence[float], tol: Optional[float] = None) -> bool:
    """One-sided proxy for ``x in spt mu``: every probed ball has positive measure."""
    return all(ball_measure(mu, x, r, tol=tol).upper > 0 for r in radii)


def lebesgue(n: int) -> WeightedLebesgue:
    return WeightedLebesgue(n)


def lebesgue_ball_volume(n: int, r: float) -> float:
    return unit_ball_volume(n) * r ** n
