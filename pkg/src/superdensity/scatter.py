"""Scattered sets: small open sets that every support ball meets at rate r^h.

The construction places, at lattice level ``k``, balls of radius
``rho_k = (eps / (C beta^(k m)))^(1/q)`` around the Lambda-distribution
points whose ball fits inside ``Omega``.  Only levels ``1..K_max`` are
stored; every report states this truncation.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence

import mpmath
import numpy as np
from scipy.spatial import cKDTree
from scipy.stats import qmc

from . import density
from .lattice import LambdaDistribution, LatticeSpec, lambda_distribution
from .measures import (FrameBounds, Measure, MeasureInterval, QuadratureOptions, WeightedLebesgue,
                       ball_measure, measure_of, restricted_ball_measure)
from .regions import (BallUnion, BallUnionIndex, Box, Complement, Intersection, Region, Union,
                      distance_to_box, lipschitz_region)


class HypothesisError(ValueError):
    """A hypothesis of the construction fails; the message names the inequality."""


class ConstructionError(RuntimeError):
    pass


_DPS = 50
MAX_BETA_DIGITS = 1000


def _mp(x) -> mpmath.mpf:
    return mpmath.mpf(x) if not isinstance(x, (int,)) else mpmath.mpf(int(x))


def critical_exponent(n: int, p: float, q: float) -> float:
    """``np/q - q``; zero exactly when ``p = q = n``."""
    return n * p / q - q


@dataclass(frozen=True)
class ScatterParams:
    frame: FrameBounds
    n: int
    R: int
    epsilon: float
    h: float
    m: float
    beta: int
    lower_bound_constant: float
    beta_terms: tuple

    def rho(self, k: int) -> float:
        f = self.frame
        return math.exp((math.log(self.epsilon) - math.log(f.C) - k * self.m * math.log(self.beta)) / f.q)

    def chain_bound(self) -> float:
        """``2^n R^n eps / (beta^(m-n) - 1)``."""
        return (2 * self.R) ** self.n * self.epsilon / (self.beta ** (self.m - self.n) - 1.0)

    def to_dict(self) -> dict:
        f = self.frame
        return {"C": f.C, "p": f.p, "q": f.q, "r_bar": f.r_bar, "n": self.n, "R": self.R,
                "epsilon": self.epsilon, "h": self.h, "m": self.m, "beta": self.beta,
                "lower_bound_constant": self.lower_bound_constant,
                "beta_terms": list(self.beta_terms)}


def _beta_terms_mp(frame: FrameBounds, n: int, R: int, epsilon: float, m) -> list:
    C, q, rb = _mp(frame.C), _mp(frame.q), _mp(frame.r_bar)
    eps = _mp(epsilon)
    return [
        (mpmath.mpf(2 * R) ** n + 1) ** (1 / (m - n)),
        (eps / C) ** (1 / q) + mpmath.sqrt(n),
        (eps / (C * rb ** q)) ** (1 / m),
    ]


def _working_dps(n: int, R: int, m_minus_n: float) -> int:
    """Digits needed to floor the largest beta bound exactly."""
    digits = math.log10((2 * R) ** n + 1) / m_minus_n
    if digits > MAX_BETA_DIGITS:
        raise ConstructionError(f"beta would need about {digits:.3g} digits; m - n = {m_minus_n:.3g} is too small")
    return _DPS + int(math.ceil(digits))


def scatter_parameters(frame: FrameBounds, n: int, R: int, epsilon: float, h: float) -> ScatterParams:
    """Derive ``m``, ``beta`` and the lower-bound constant; rejects violated hypotheses."""
    if int(R) != R or R < 1:
        raise HypothesisError(f"R must be a positive integer, got {R}")
    if not epsilon > 0:
        raise HypothesisError(f"epsilon must be positive, got {epsilon}")
    if frame.q > min(n, frame.p):
        raise HypothesisError(f"q <= min(n, p) violated: q={frame.q}, n={n}, p={frame.p}")
    crit = critical_exponent(n, frame.p, frame.q)
    if not h > crit:
        raise HypothesisError(f"h > np/q - q violated: h={h} must exceed np/q - q = {crit} strictly")
    dps = _working_dps(n, int(R), (h + frame.q) * frame.q / frame.p - n)
    with mpmath.workdps(dps):
        p, q = _mp(frame.p), _mp(frame.q)
        m = (_mp(h) + q) * q / p
        terms = _beta_terms_mp(frame, n, int(R), epsilon, m)
        top = max(terms)
        c = mpmath.ceil(top)
        # smallest integer strictly above the maximum; an exact tie moves up by one
        tie = abs(top - c) < mpmath.mpf(10) ** (mpmath.mag(top) * 0.30103 - _DPS + 10)
        beta = int(c) + 1 if tie else int(mpmath.floor(top)) + 1
        beta = max(beta, 2)
        C = _mp(frame.C)
        eps = _mp(epsilon)
        const = eps ** (p / q) / (C ** (2 + p / q) * mpmath.mpf(beta) ** (q + _mp(h)))
        params = ScatterParams(frame, int(n), int(R), float(epsilon), float(h), float(m), beta,
                               float(const), tuple(float(t) for t in terms))
    bad = [c for c in check_beta(params) if not c[3]]
    if bad:
        raise ConstructionError(f"beta selection failed: {bad}")
    return params


def check_beta(params: ScatterParams) -> list[tuple]:
    """Re-check the three strict inequalities on ``beta`` in high precision.

    Returns ``(name, beta, bound, ok)`` rows.
    """
    f = params.frame
    with mpmath.workdps(_working_dps(params.n, params.R, params.m - params.n)):
        m = (_mp(params.h) + _mp(f.q)) * _mp(f.q) / _mp(f.p)
        terms = _beta_terms_mp(f, params.n, params.R, params.epsilon, m)
        b = mpmath.mpf(params.beta)
        names = ("(2^n R^n + 1)^(1/(m-n))", "(eps/C)^(1/q) + sqrt(n)", "(eps/(C rbar^q))^(1/m)")
        return [(nm, params.beta, float(t), bool(b > t)) for nm, t in zip(names, terms)]


def proof_chain(params: ScatterParams, gamma_counts: Sequence[int]) -> dict:
    """Evaluate each link of ``C sum #Gamma_k rho_k^q <= 2^n R^n eps/(beta^(m-n)-1) < eps``."""
    f = params.frame
    frame_sum = math.fsum(f.C * c * params.rho(k) ** f.q for k, c in enumerate(gamma_counts, start=1))
    lattice_sum = math.fsum(f.C * (2 * params.R) ** params.n * params.beta ** (k * params.n)
                            * params.rho(k) ** f.q for k in range(1, len(gamma_counts) + 1))
    chain = params.chain_bound()
    return {"frame_sum": frame_sum, "lattice_sum": lattice_sum, "chain_bound": chain,
            "epsilon": params.epsilon,
            "links_ok": frame_sum <= lattice_sum * (1 + 1e-12) and lattice_sum <= chain * (1 + 1e-12)
            and chain < params.epsilon}


# ---------------------------------------------------------------------------
# construction


@dataclass
class ScatterLevel:
    k: int
    rho: float
    centers: np.ndarray
    measure: Optional[MeasureInterval] = None   # summed ball measures of this level

    @property
    def count(self) -> int:
        return int(self.centers.shape[0])

    @cached_property
    def tree(self) -> cKDTree:
        return cKDTree(self.centers)


@dataclass
class ScatteredSet:
    params: ScatterParams
    omega: Region
    K_max: int
    distribution: Optional[LambdaDistribution]
    levels: list
    measure_upper_bound: float
    frame_upper_bound: float
    flags: set = field(default_factory=set)

    @property
    def empty(self) -> bool:
        return all(lv.count == 0 for lv in self.levels)

    @property
    def truncation_scale(self) -> float:
        """Smallest scale ``beta^(-K_max+1)`` at which bounds are verified."""
        return float(self.params.beta) ** (-self.K_max + 1)

    def balls(self, max_level: Optional[int] = None):
        lv = [l for l in self.levels if l.count and (max_level is None or l.k <= max_level)]
        if not lv:
            return np.empty((0, self.params.n)), np.empty(0)
        return (np.concatenate([l.centers for l in lv]),
                np.concatenate([np.full(l.count, l.rho) for l in lv]))

    def balls_near(self, x, r: float, max_level: Optional[int] = None):
        """Balls meeting ``B_r(x)``, from levels up to ``max_level``."""
        cs, rs = [], []
        for lv in self.levels:
            if lv.count == 0 or (max_level is not None and lv.k > max_level):
                continue
            idx = lv.tree.query_ball_point(x, r + lv.rho)
            if idx:
                cs.append(lv.centers[np.sort(idx)])
                rs.append(np.full(len(idx), lv.rho))
        if not cs:
            return np.empty((0, self.params.n)), np.empty(0)
        return np.concatenate(cs), np.concatenate(rs)

    @cached_property
    def region(self) -> Region:
        c, r = self.balls()
        return BallUnion(BallUnionIndex(c, r, dim=self.params.n))

    def level_rows(self) -> list[dict]:
        return [{"level": lv.k, "gamma_count": lv.count, "rho": lv.rho,
                 "measure_bound": lv.measure.upper if lv.measure else self.params.frame.C * lv.count
                 * lv.rho ** self.params.frame.q} for lv in self.levels]


def balls_inside(region: Region, centers: np.ndarray, rho: float) -> np.ndarray:
    """Mask of centres whose open ``rho``-ball lies in ``region``."""
    fn = getattr(region, "distance_to_complement", None)
    if fn is not None:
        return fn(centers) >= rho
    return np.array([region.contains_ball(c, rho) for c in centers], dtype=bool)


def support_cloud(omega: Region, spec: LatticeSpec, level: Optional[int] = None) -> np.ndarray:
    """One point in every level-``K`` cell meeting ``omega``.

    For a box the point is the centre of (cell & box), so every cell meeting
    the box is witnessed.  Other regions keep cell centres lying inside.
    """
    k = spec.K if level is None else level
    w = spec.width(k)
    edges = -spec.R + w * np.arange(spec.side(k) + 1)
    if isinstance(omega, Box):
        axes = []
        for d in range(spec.n):
            lo, hi = edges[:-1], edges[1:]
            ok = (hi > omega.lo[d]) & (lo < omega.hi[d])
            a = 0.5 * (np.maximum(lo[ok], omega.lo[d]) + np.minimum(hi[ok], omega.hi[d]))
            axes.append(a)
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.reshape(-1) for m in mesh], axis=1)
        return pts[(pts >= -spec.R).all(axis=1) & (pts < spec.R).all(axis=1)]
    bb = omega.bbox()
    centers = 0.5 * (edges[:-1] + edges[1:])
    axes = [centers if bb is None else centers[(centers > bb[0][d] - w) & (centers < bb[1][d] + w)]
            for d in range(spec.n)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.reshape(-1) for m in mesh], axis=1)
    return pts[omega.contains_many(pts)]


def cloud_size(omega: Region, spec: LatticeSpec, level: int) -> int:
    """Number of level cells meeting the bounding box of ``omega``."""
    bb = omega.bbox()
    if bb is None:
        return spec.count(level)
    w = spec.width(level)
    lo = np.clip(np.floor(bb[0] / w), -spec.R / w, spec.R / w)
    hi = np.clip(np.ceil(bb[1] / w), -spec.R / w, spec.R / w)
    return int(np.prod(hi - lo))


def _level_measure(mu: Optional[Measure], centers: np.ndarray, rho: float,
                   opts: QuadratureOptions) -> Optional[MeasureInterval]:
    if mu is None:
        return None
    if centers.shape[0] == 0:
        return MeasureInterval.exact(0.0)
    if isinstance(mu, WeightedLebesgue) and mu.translation_invariant:
        one = ball_measure(mu, np.zeros(mu.dim), rho, opts=opts)
        return one.scaled(float(centers.shape[0]))
    total = MeasureInterval.exact(0.0)
    for c in centers:
        total = total + ball_measure(mu, c, rho, opts=opts)
    return total


def construct_scattered_set(params: ScatterParams, omega: Region, support_cloud_pts, K_max: int,
                            mu: Optional[Measure] = None, tol: float = 1e-4) -> ScatteredSet:
    """Build the truncated scattered set ``A = union_k union_{P in Gamma_k} B_{rho_k}(P)``."""
    n = params.n
    if K_max < 0:
        raise ValueError("K_max must be nonnegative")
    for k in range(1, K_max + 1):
        if not params.rho(k) < params.frame.r_bar:
            raise ConstructionError(f"rho_{k} = {params.rho(k)} is not below r_bar")
    opts = QuadratureOptions(tol=tol)
    S = np.asarray(support_cloud_pts, dtype=float).reshape(-1, n)
    if S.shape[0]:
        S = S[omega.contains_many(S)]
        S = S[(S >= -params.R).all(axis=1) & (S < params.R).all(axis=1)]
    spec = LatticeSpec(n, params.R, params.beta, K_max)
    if S.shape[0] == 0 or K_max == 0:
        levels = [ScatterLevel(k, params.rho(k), np.empty((0, n)), _level_measure(mu, np.empty((0, n)), 1.0, opts))
                  for k in range(1, K_max + 1)]
        out = ScatteredSet(params, omega, K_max, None, levels, 0.0, 0.0)
        out.flags.add("empty")
        return out
    dist = lambda_distribution(S, spec)
    levels = []
    for k in range(1, K_max + 1):
        rho = params.rho(k)
        P = dist.prefix(k)
        gamma = P[balls_inside(omega, P, rho)]
        levels.append(ScatterLevel(k, rho, gamma, _level_measure(mu, gamma, rho, opts)))
    f = params.frame
    frame_bound = math.fsum(f.C * lv.count * lv.rho ** f.q for lv in levels)
    if mu is not None:
        upper = math.fsum(lv.measure.upper for lv in levels)
    else:
        upper = frame_bound
    out = ScatteredSet(params, omega, K_max, dist, levels, upper, frame_bound)
    if all(lv.count == 0 for lv in levels):
        out.flags.add("empty")
    return out


# ---------------------------------------------------------------------------
# verification


def halton_points(count: int, dim: int, lo, hi, skip: int = 1) -> np.ndarray:
    """Deterministic Halton points in the box ``[lo, hi]``."""
    eng = qmc.Halton(d=dim, scramble=False)
    if skip:
        eng.fast_forward(skip)
    return qmc.scale(eng.random(count), lo, hi)


def interior_samples(omega: Region, cloud: np.ndarray, count: int, min_depth: float = 0.0,
                     exclude: Optional[Region] = None, max_draw: int = 100_000) -> np.ndarray:
    """Low-discrepancy points of ``omega`` snapped to the cloud.

    Points closer than ``min_depth`` to the complement of ``omega``, or lying
    in ``exclude``, are skipped.
    """
    bb = omega.bbox()
    if bb is None:
        raise ValueError("sampling needs a bounded region")
    tree = cKDTree(cloud) if cloud is not None and len(cloud) else None
    fn = getattr(omega, "distance_to_complement", None)
    out: list[np.ndarray] = []
    seen = set()
    batch, drawn = max(4 * count, 64), 0
    while len(out) < count and drawn < max_draw:
        raw = halton_points(batch, len(bb[0]), bb[0], bb[1], skip=1 + drawn)
        drawn += batch
        pts = raw if tree is None else cloud[tree.query(raw)[1]]
        for p in pts:
            key = tuple(p.tolist())
            if key in seen or not omega.contains(p):
                continue
            if min_depth > 0 and fn is not None and fn(p[None, :])[0] < min_depth:
                continue
            if exclude is not None and exclude.contains(p):
                continue
            seen.add(key)
            out.append(p)
            if len(out) == count:
                break
    return np.array(out).reshape(-1, len(bb[0]))


def first_inner_level(omega: Region, x, beta: int, k_cap: int = 64) -> Optional[int]:
    """Smallest ``k >= 1`` with ``B_{beta^-k}(x)`` inside ``omega``."""
    fn = getattr(omega, "distance_to_complement", None)
    x = np.asarray(x, float)
    for k in range(1, k_cap + 1):
        r = float(beta) ** -k
        ok = fn(x[None, :])[0] >= r if fn is not None else omega.contains_ball(x, r)
        if ok:
            return k
    return None


@dataclass
class VerifyReport:
    epsilon: float
    measure_upper_bound: float
    constant: float
    truncation_scale: float
    rows: list
    skipped: list
    passed: bool

    @property
    def budget_ok(self) -> bool:
        return self.measure_upper_bound < self.epsilon


def verify_scattered_set(mu: Measure, scattered: ScatteredSet, sample_points, tol: float = 0.25,
                         max_depth: int = 14) -> VerifyReport:
    """Check the measure budget and the lower-bound statistic at sampled support points.

    The statistic at level ``k`` uses ``r = beta^(-k+1)`` and the balls of
    levels ``<= k`` meeting ``B_r(x)``: a subset of ``A``, so its certified
    lower bound is a valid lower bound for the full set.
    """
    P = scattered.params
    const = P.lower_bound_constant
    opts = QuadratureOptions(tol=tol, max_depth=max_depth, closed_form=True)
    rows, skipped = [], []
    for x in np.asarray(sample_points, float).reshape(-1, P.n):
        Kx = first_inner_level(scattered.omega, x, P.beta)
        if Kx is None or Kx + 1 > scattered.K_max:
            skipped.append({"x": x.tolist(), "reason": f"no usable level up to K_max={scattered.K_max}"
                            f" (K_x={Kx})"})
            continue
        for k in range(Kx + 1, scattered.K_max + 1):
            r = float(P.beta) ** (-k + 1)
            c, rr = scattered.balls_near(x, r, max_level=k)
            den = ball_measure(mu, x, r, opts=opts)
            if rr.size:
                sub = BallUnion(BallUnionIndex(c, rr, dim=P.n))
                num = restricted_ball_measure(mu, sub, x, r, opts=opts)
            else:
                num = MeasureInterval.exact(0.0)
            stat_lo = num.lower / (den.upper * r ** P.h)
            stat_hi = num.upper / (den.lower * r ** P.h) if den.lower > 0 else math.inf
            rows.append({"x": x.tolist(), "k": k, "K_x": Kx, "r": r, "statistic_lo": stat_lo,
                         "statistic_hi": stat_hi, "constant": const, "balls": int(rr.size),
                         "verdict": "PASS" if stat_lo >= const else "FAIL",
                         "flags": sorted(num.flags | den.flags)})
    passed = (scattered.measure_upper_bound < P.epsilon and bool(rows)
              and all(r["verdict"] == "PASS" for r in rows))
    return VerifyReport(P.epsilon, scattered.measure_upper_bound, const, scattered.truncation_scale,
                        rows, skipped, passed)


# ---------------------------------------------------------------------------
# boundary collar


def _grow(box: Box, d: float) -> Box:
    return Box(box.lo - d, box.hi + d)


def frame_slabs(inner: Box, outer: Box) -> list[Box]:
    """Disjoint boxes covering ``outer`` minus ``inner`` (inner inside outer)."""
    n = inner.dim
    out = []
    for d in range(n):
        lo_a = np.where(np.arange(n) < d, inner.lo, outer.lo)
        hi_a = np.where(np.arange(n) < d, inner.hi, outer.hi)
        if inner.lo[d] > outer.lo[d]:
            lo, hi = lo_a.copy(), hi_a.copy()
            hi[d] = inner.lo[d]
            out.append(Box(lo, hi))
        if inner.hi[d] < outer.hi[d]:
            lo, hi = lo_a.copy(), hi_a.copy()
            lo[d] = inner.hi[d]
            out.append(Box(lo, hi))
    return out


@dataclass
class Collar:
    """An open set ``A'`` containing ``[-R, R]^n`` minus ``Omega``, of width ``delta``."""

    delta: float
    region: Region          # A' & Omega
    excess: Region          # A' minus ([-R,R]^n minus Omega), the part whose measure is budgeted
    measure: MeasureInterval
    norm: str


def _collar_box(omega: Box, R: int, delta: float, mu: Measure, opts) -> Collar:
    n = omega.dim
    Q = Box(-float(R) * np.ones(n), float(R) * np.ones(n))
    shrunk = Box(omega.lo + delta, omega.hi - delta) if np.all(omega.hi - omega.lo > 2 * delta) else None
    inner = [omega] if shrunk is None else frame_slabs(shrunk, omega)
    outer = frame_slabs(Q, _grow(Q, delta))
    total = MeasureInterval.exact(0.0)
    for b in inner + outer:
        total = total + measure_of(mu, b, opts=opts)
    inner_region = omega if shrunk is None else Intersection([omega, Complement(shrunk)])
    outer_region = Intersection([_grow(Q, delta), Complement(Q)])
    return Collar(delta, inner_region, Union([inner_region, outer_region]), total, "sup")


def _collar_general(omega: Region, R: int, delta: float, mu: Measure, opts) -> Collar:
    n = omega.dim
    Q = Box(-float(R) * np.ones(n), float(R) * np.ones(n))
    fn = getattr(omega, "distance_to_complement", None)
    if fn is None:
        raise NotImplementedError("collar needs a region with a distance function")
    big = _grow(Q, delta)
    near_inside = lipschitz_region(n, fn, delta, 1.0, box=(big.lo, big.hi))
    inner = Intersection([omega, near_inside])
    outer = Intersection([big, Complement(Q),
                          lipschitz_region(n, lambda X: distance_to_box(Q.lo, Q.hi, X), delta, 1.0,
                                           box=(big.lo, big.hi))])
    excess = Union([inner, outer])
    return Collar(delta, inner, excess, measure_of(mu, excess, opts=opts), "euclidean")


def make_collar(omega: Region, R: int, delta: float, mu: Measure, opts: QuadratureOptions) -> Collar:
    if isinstance(omega, Box):
        return _collar_box(omega, R, delta, mu, opts)
    return _collar_general(omega, R, delta, mu, opts)


@dataclass
class AugmentedSet:
    scattered: ScatteredSet
    collar: Collar
    budget: float
    total_upper_bound: float

    @property
    def delta(self) -> float:
        return self.collar.delta

    @cached_property
    def region(self) -> Region:
        """``A'' = A | (A' & Omega)``."""
        return Union([self.scattered.region, self.collar.region])

    def contains_many(self, X) -> np.ndarray:
        X = np.asarray(X, float)
        out = self.collar.region.contains_many(X)
        rest = ~out
        if rest.any() and not self.scattered.empty:
            out[rest] = self.scattered.region.contains_many(X[rest])
        return out


def augment_boundary(scattered: ScatteredSet, omega: Region, mu: Measure, delta_max: float = 1.0,
                     iterations: int = 40, tol: float = 1e-4) -> AugmentedSet:
    """Add the widest collar whose budgeted measure stays below ``eps - mu(A)``."""
    P = scattered.params
    budget = P.epsilon - scattered.measure_upper_bound
    if not budget > 0:
        raise ConstructionError("the scattered set already exhausts the measure budget")
    opts = QuadratureOptions(tol=tol)
    lo, hi = 0.0, float(delta_max)
    best = None
    top = make_collar(omega, P.R, hi, mu, opts)
    if top.measure.upper < budget:
        best = top
    else:
        for _ in range(iterations):
            mid = 0.5 * (lo + hi)
            c = make_collar(omega, P.R, mid, mu, opts)
            if c.measure.upper < budget:
                lo, best = mid, c
            else:
                hi = mid
    if best is None:
        raise ConstructionError(f"no collar width found within {iterations} bisection steps")
    return AugmentedSet(scattered, best, budget, scattered.measure_upper_bound + best.measure.upper)


# ---------------------------------------------------------------------------
# thin closed subset


def family_ball_measure(mu: Measure, centers: np.ndarray, radii: np.ndarray, x, r: float,
                        opts: QuadratureOptions) -> MeasureInterval:
    """Interval for ``mu(B_r(x) & union of balls)`` by per-ball accounting.

    Balls inside ``B_r(x)`` contribute their own measures: all of them to the
    upper bound, a pairwise disjoint subfamily to the lower bound.  Balls
    crossing the sphere go through the cell quadrature.
    """
    x = np.asarray(x, float)
    if radii.size == 0:
        return MeasureInterval.exact(0.0)
    d = np.linalg.norm(centers - x, axis=1)
    meets = d < r + radii
    centers, radii, d = centers[meets], radii[meets], d[meets]
    inside = d + radii <= r
    keep = _disjoint_subfamily(centers, radii)
    per = {}
    for rho in np.unique(radii[inside]):
        if isinstance(mu, WeightedLebesgue) and mu.translation_invariant:
            per[rho] = ball_measure(mu, np.zeros(mu.dim), rho, opts=opts)
    def m_of(i):
        rho = radii[i]
        return per[rho] if rho in per else ball_measure(mu, centers[i], rho, opts=opts)
    ins = np.flatnonzero(inside)
    up = math.fsum(m_of(i).upper for i in ins)
    lo_in = math.fsum(m_of(i).lower for i in ins if keep[i])
    est_in = math.fsum(m_of(i).estimate for i in ins if keep[i])
    cross = np.flatnonzero(~inside)
    if cross.size:
        cu = BallUnion(BallUnionIndex(centers[cross], radii[cross], dim=centers.shape[1]))
        civ = restricted_ball_measure(mu, cu, x, r, opts=opts)
        ck = cross[keep[cross]]
        if ck.size == cross.size:
            clo = civ.lower
        elif ck.size:
            clo = restricted_ball_measure(mu, BallUnion(BallUnionIndex(centers[ck], radii[ck],
                                                                       dim=centers.shape[1])),
                                          x, r, opts=opts).lower
        else:
            clo = 0.0
        return MeasureInterval(lo_in + clo, up + civ.upper, est_in + civ.estimate, civ.flags)
    return MeasureInterval(lo_in, up, est_in)


def _disjoint_subfamily(centers: np.ndarray, radii: np.ndarray) -> np.ndarray:
    """Greedy pairwise-disjoint subfamily, larger radii first."""
    keep = np.zeros(radii.size, dtype=bool)
    if radii.size == 0:
        return keep
    chosen_trees = []
    for rho in np.unique(radii)[::-1]:
        idx = np.flatnonzero(radii == rho)
        ok = np.ones(idx.size, dtype=bool)
        for tree, rad in chosen_trees:
            dist, _ = tree.query(centers[idx], k=1)
            ok &= dist >= rho + rad
        cand = idx[ok]
        if cand.size > 1:
            t = cKDTree(centers[cand])
            alive = np.ones(cand.size, dtype=bool)
            for i, j in sorted(t.query_pairs(2 * rho - 1e-15 * rho)):
                if alive[i] and alive[j]:
                    alive[j] = False
            cand = cand[alive]
        keep[cand] = True
        if cand.size:
            chosen_trees.append((cKDTree(centers[cand]), rho))
    return keep


@dataclass
class ThinSetResult:
    omega: Region
    omega_prime: Region
    H: float
    mbar: float
    exponents: list
    epsilons: list
    sets: list                      # AugmentedSet per j
    truncation_levels: list
    omega_measure: MeasureInterval
    measure_lower_bound: float
    region: Region                  # F = closure(Omega) minus union A''_j
    degree_rows: list
    window: tuple
    margin: float
    flags: set = field(default_factory=set)

    @property
    def measure_ok(self) -> bool:
        return self.measure_lower_bound > self.H

    @property
    def degrees_ok(self) -> bool:
        return bool(self.degree_rows) and all(r["ok"] for r in self.degree_rows)


def thin_closed_subset(mu: Measure, frame: FrameBounds, omega: Region, omega_prime: Region, H: float,
                       J_max: int, K_max: int, samples: int = 20, cloud_budget: int = 1_000_000,
                       tol: float = 1e-4, margin: float = 0.2, fit_points: int = 12,
                       r_max: float = 0.5) -> ThinSetResult:
    """Closed ``F`` inside closure(Omega) with ``mu(F) > H`` and low density degree.

    ``A_j`` is built on ``Omega'`` with exponent ``h_j = mbar + 1/j`` and budget
    ``(mu(closure Omega) - H) / 2^j``.  Per ``j`` the lattice depth is the
    largest ``K <= K_max`` whose support cloud fits ``cloud_budget``.
    """
    n = omega.dim
    mbar = critical_exponent(n, frame.p, frame.q)
    om = measure_of(mu, omega, tol=tol)
    if not 0 < H < om.lower:
        raise HypothesisError(f"H must lie in (0, mu(closure Omega)) = (0, {om.lower})")
    bb = omega_prime.bbox()
    if bb is None:
        raise HypothesisError("Omega' must be bounded")
    R = int(math.ceil(max(np.max(np.abs(bb[0])), np.max(np.abs(bb[1])))))
    if R == max(np.max(np.abs(bb[0])), np.max(np.abs(bb[1]))):
        R += 1
    sets, hs, eps, Ks = [], [], [], []
    for j in range(1, J_max + 1):
        h_j = mbar + 1.0 / j
        eps_j = (om.lower - H) / 2 ** j
        params = scatter_parameters(frame, n, R, eps_j, h_j)
        K = 0
        for k in range(K_max, 0, -1):
            spec = LatticeSpec(n, R, params.beta, k)
            if cloud_size(omega_prime, spec, k) <= cloud_budget:
                K = k
                break
        spec = LatticeSpec(n, R, params.beta, K)
        cloud = support_cloud(omega_prime, spec) if K else np.empty((0, n))
        S = construct_scattered_set(params, omega_prime, cloud, K, mu=mu, tol=tol)
        aug = augment_boundary(S, omega_prime, mu, tol=tol)
        sets.append(aug)
        hs.append(h_j)
        eps.append(eps_j)
        Ks.append(K)
    removed = math.fsum(a.total_upper_bound for a in sets)
    lower = om.lower - removed
    F = Intersection([omega, Complement(Union([a.region for a in sets]))])

    # degree reports inside F, on the scales carried by the stored levels
    scales = [a.scattered.truncation_scale for a, K in zip(sets, Ks) if K >= 1]
    r_lo = min(scales) if scales else r_max / 10
    fn = getattr(omega, "distance_to_complement", None)
    bbo = omega.bbox()
    rows = []
    max_delta = max(a.delta for a in sets)
    pts = []
    if fn is not None:
        grid = halton_points(40 * samples, n, bbo[0], bbo[1])
        for p in grid:
            if len(pts) == samples:
                break
            depth = fn(p[None, :])[0]
            if min(r_max, depth) < 2.5 * r_lo:
                continue
            if any(a.contains_many(p[None, :])[0] for a in sets):
                continue
            pts.append(p)
    opts = QuadratureOptions(tol=tol, closed_form=True)
    params_deg = density.DegreeParams(fit_points=fit_points, margin=margin)
    for p in pts:
        r_hi = min(r_max, fn(p[None, :])[0])
        radii = list(np.geomspace(r_hi, r_lo, fit_points, endpoint=True)[:-1]) + [r_lo]
        radii = sorted(set(float(r) for r in radii), reverse=True)
        ratios, flags = [], []
        for r in radii:
            num = MeasureInterval.exact(0.0)
            for a in sets:
                c, rr = a.scattered.balls_near(p, r)
                num = num + family_ball_measure(mu, c, rr, p, r, opts)
            den = ball_measure(mu, p, r, opts=opts)
            q, f = density._quotient(num, den, cap=1.0)
            ratios.append(q)
            flags.append(f)
        prof = density.DensityProfile(tuple(p.tolist()), tuple(radii), tuple(ratios), tuple(flags), n)
        try:
            est = density.estimate_density_degree(prof, params_deg)
            cls, slope = est.classification, est.slope
            ok = cls == density.NOT_DENSITY or (cls == density.FINITE and slope <= mbar + margin)
        except density.InsufficientDataError:
            cls, slope, ok = "InsufficientData", math.nan, False
        rows.append({"x": p.tolist(), "slope": slope, "class": cls, "r_min": radii[-1], "r_max": radii[0],
                     "bound": mbar + margin, "ok": bool(ok)})
    flags = set()
    if isinstance(omega, Box) and isinstance(omega_prime, Box):
        gap = float(min(np.min(omega.lo - omega_prime.lo), np.min(omega_prime.hi - omega.hi)))
        if max_delta >= gap:
            # the sampled ratios only count balls, which is exact only while collars avoid Omega
            flags.add("collar_reaches_omega")
    else:
        flags.add("collar_overlap_unchecked")
    return ThinSetResult(omega, omega_prime, H, mbar, hs, eps, sets, Ks, om, lower, F, rows,
                         (r_lo, r_max), margin, flags)


# ---------------------------------------------------------------------------
# CSV export


def write_levels_csv(path, scattered: ScatteredSet):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["level", "gamma_count", "rho", "measure_bound"])
        for row in scattered.level_rows():
            w.writerow([row["level"], row["gamma_count"], repr(row["rho"]), repr(row["measure_bound"])])


def write_verify_csv(path, report: VerifyReport):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "k", "r", "statistic_lo", "constant", "verdict"])
        for row in report.rows:
            w.writerow([" ".join(repr(v) for v in row["x"]), row["k"], repr(row["r"]),
                        repr(row["statistic_lo"]), repr(row["constant"]), row["verdict"]])
