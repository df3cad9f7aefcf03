"""Complement-ratio profiles, superdensity verdicts and density degrees.

Every limit in the definitions is replaced by a finite window of scales.
Thresholds live in :class:`DegreeParams` and are echoed into every report.
"""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .measures import (Measure, MeasureInterval, QuadratureOptions, SupportError, ball_measure,
                       restricted_ball_measure)
from .regions import Complement, Region, _as_point

NOT_DENSITY = "NotDensityPoint"
FINITE = "FiniteDegree"
INTERIOR_POINT = "LocallyInterior"

PASS, FAIL, INCONCLUSIVE = "Pass", "Fail", "Inconclusive"
MEMBER, NON_MEMBER = "Member", "NonMember"
INTERIOR, BOUNDARY, EXTERIOR = "Interior", "Boundary", "Exterior"

ZERO_DENOMINATOR = "zero_denominator"


class InsufficientDataError(ValueError):
    pass


DENSITY_OPTIONS = QuadratureOptions(closed_form=True)


@dataclass(frozen=True)
class DegreeParams:
    fit_points: int = 12
    min_points: int = 4
    dense_threshold: float = 0.05
    flat_slope: float = 0.1
    interior_floor: float = 1e-12
    tail: int = 3
    margin: float = 0.1
    ratio_floor: float = 0.05
    min_r2: float = 0.9
    # radii whose ratio interval is wider than this multiple of the estimate are not fitted
    max_rel_width: float = 1.0


DEFAULT_PARAMS = DegreeParams()


def geometric_radii(r_max: float, gamma: float = 0.7, count: int = 24) -> list[float]:
    if not (r_max > 0 and 0 < gamma < 1 and count >= 1):
        raise ValueError("need r_max > 0, 0 < gamma < 1 and count >= 1")
    return [r_max * gamma ** i for i in range(count)]


def _check_radii(radii) -> list[float]:
    radii = [float(r) for r in radii]
    if not radii:
        raise ValueError("no radii given")
    if any(r <= 0 for r in radii):
        raise ValueError("radii must be positive")
    if any(b >= a for a, b in zip(radii, radii[1:])):
        raise ValueError("radii must be strictly decreasing")
    return radii


@dataclass(frozen=True)
class DensityProfile:
    x: tuple
    radii: tuple
    ratio: tuple          # MeasureInterval per radius
    flags: tuple          # frozenset per radius
    dim: int

    def estimates(self) -> np.ndarray:
        return np.array([iv.estimate for iv in self.ratio])

    def usable(self, max_rel_width: float = 1.0) -> np.ndarray:
        return np.array([ZERO_DENOMINATOR not in f and iv.estimate > 0
                         and iv.width <= max_rel_width * iv.estimate
                         for f, iv in zip(self.flags, self.ratio)], dtype=bool)


def _quotient(num: MeasureInterval, den: MeasureInterval, cap: Optional[float] = None):
    """Outer quotient; returns (interval, flags)."""
    flags = set(num.flags | den.flags)
    if den.upper <= 0:
        raise SupportError("ball measure is zero: point outside the support at this radius")
    if den.lower <= 0:
        flags.add(ZERO_DENOMINATOR)
        hi = cap if cap is not None else math.inf
        return MeasureInterval(0.0, hi if math.isfinite(hi) else 1e300, None), frozenset(flags)
    q = num.divide(den)
    lo, hi, est = q.lower, q.upper, q.estimate
    if cap is not None:
        hi = min(hi, cap)
        lo = min(lo, hi)
        est = min(max(est, lo), hi)
    return MeasureInterval(lo, hi, est, frozenset(flags)), frozenset(flags)


def ratio_profile(mu: Measure, E: Region, x, radii: Sequence[float], tol: float = 1e-4,
                  opts: Optional[QuadratureOptions] = None) -> DensityProfile:
    """Sample ``mu(B_r(x) \\ E) / mu(B_r(x))`` at each radius."""
    x = _as_point(x, mu.dim)
    radii = _check_radii(radii)
    opts = opts or DENSITY_OPTIONS
    comp = Complement(E)
    ratios, flags = [], []
    for r in radii:
        den = ball_measure(mu, x, r, tol=tol, opts=opts)
        num = restricted_ball_measure(mu, comp, x, r, tol=tol, opts=opts)
        q, f = _quotient(num, den, cap=1.0)
        ratios.append(q)
        flags.append(f)
    return DensityProfile(tuple(x.tolist()), tuple(radii), tuple(ratios), tuple(flags), mu.dim)


@dataclass(frozen=True)
class DegreeEstimate:
    classification: str
    value: float              # -n, the slope, or +inf
    slope: float
    intercept: float
    r2: float
    window: tuple             # (r_min, r_max) of the fitted radii
    points: int
    dim: int
    thresholds: dict = field(default_factory=dict)
    x: tuple = ()


def _fit(log_r: np.ndarray, log_v: np.ndarray):
    A = np.vstack([log_r, np.ones_like(log_r)]).T
    (slope, intercept), *_ = np.linalg.lstsq(A, log_v, rcond=None)
    pred = A @ np.array([slope, intercept])
    ss_res = float(np.sum((log_v - pred) ** 2))
    ss_tot = float(np.sum((log_v - log_v.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else (1.0 if ss_res == 0 else 0.0)
    return float(slope), float(intercept), float(min(max(r2, 0.0), 1.0))


def estimate_density_degree(profile: DensityProfile,
                            params: DegreeParams = DEFAULT_PARAMS) -> DegreeEstimate:
    """Fit the scaling exponent of the complement ratio and classify the point."""
    p = params
    n = profile.dim
    radii = np.asarray(profile.radii)
    live = np.array([ZERO_DENOMINATOR not in f for f in profile.flags], dtype=bool)
    thresholds = asdict(p)
    idx = np.flatnonzero(live)
    if idx.size >= p.tail:
        tail = idx[-p.tail:]
        uppers = [profile.ratio[i].upper for i in tail]
        if max(uppers) < p.interior_floor:
            return DegreeEstimate(INTERIOR_POINT, math.inf, math.nan, math.nan, math.nan,
                                  (float(radii[tail[-1]]), float(radii[tail[0]])), int(tail.size), n,
                                  thresholds, profile.x)
    use = np.flatnonzero(profile.usable(p.max_rel_width))
    if use.size < p.min_points:
        raise InsufficientDataError(f"need {p.min_points} usable radii, have {use.size}")
    use = use[-p.fit_points:]
    est = profile.estimates()
    slope, intercept, r2 = _fit(np.log(radii[use]), np.log(est[use]))
    window = (float(radii[use[-1]]), float(radii[use[0]]))
    tail = use[-p.tail:]
    if all(est[i] > p.dense_threshold for i in tail) and slope < p.flat_slope:
        return DegreeEstimate(NOT_DENSITY, float(-n), slope, intercept, r2, window, int(use.size), n,
                              thresholds, profile.x)
    return DegreeEstimate(FINITE, slope, slope, intercept, r2, window, int(use.size), n, thresholds,
                          profile.x)


def superdensity_test(profile: DensityProfile, h: float, params: DegreeParams = DEFAULT_PARAMS,
                      estimate: Optional[DegreeEstimate] = None) -> str:
    """Finite-scale verdict on ``x`` being an ``h``-superdensity point."""
    if h < 0:
        raise ValueError("h must be nonnegative")
    est = estimate or estimate_density_degree(profile, params)
    if est.classification == INTERIOR_POINT:
        return PASS
    if est.classification == NOT_DENSITY:
        return FAIL
    live = [i for i, f in enumerate(profile.flags) if ZERO_DENOMINATOR not in f]
    floor_ok = profile.ratio[live[-1]].upper <= params.ratio_floor
    if est.slope >= h + params.margin and floor_ok:
        return PASS
    if est.slope <= h - params.margin and est.r2 >= params.min_r2:
        return FAIL
    return INCONCLUSIVE


def classify_point(estimate: DegreeEstimate, m: float, margin: Optional[float] = None) -> str:
    """Interior / Boundary / Exterior relative to level ``m``."""
    if m < 0:
        raise ValueError("m must be nonnegative")
    if margin is None:
        margin = estimate.thresholds.get("margin", DEFAULT_PARAMS.margin)
    d = estimate.value
    if d > m + margin:
        return INTERIOR
    if d < m - margin:
        return EXTERIOR
    return BOUNDARY


@dataclass(frozen=True)
class BaseStatistic:
    x: tuple
    h: float
    radii: tuple
    s: tuple                # MeasureInterval per radius
    verdict: str
    threshold: float
    decade: tuple           # (r_min, r_max) of the radii deciding the verdict
    flags: tuple = ()


def base_verdict(radii: Sequence[float], s: Sequence[MeasureInterval], threshold: float,
                 decade: float = 10.0) -> tuple[str, tuple]:
    """Limsup proxy: look at the smallest scale decade only."""
    r_min = min(radii)
    idx = [i for i, r in enumerate(radii) if r <= decade * r_min]
    if max(s[i].lower for i in idx) >= threshold:
        verdict = MEMBER
    elif all(s[i].upper < threshold / 10 for i in idx):
        verdict = NON_MEMBER
    else:
        verdict = INCONCLUSIVE
    return verdict, (r_min, max(radii[i] for i in idx))


def base_statistic(mu: Measure, A: Region, x, h: float, radii: Sequence[float], tol: float = 1e-4,
                   threshold: float = 1e-6, decade: float = 10.0,
                   opts: Optional[QuadratureOptions] = None) -> BaseStatistic:
    """``mu(B_r(x) & A) / (mu(B_r(x)) r^h)`` over the radii, with a membership verdict."""
    if h < 0:
        raise ValueError("h must be nonnegative")
    x = _as_point(x, mu.dim)
    radii = _check_radii(radii)
    opts = opts or DENSITY_OPTIONS
    vals, flags = [], []
    for r in radii:
        den = ball_measure(mu, x, r, tol=tol, opts=opts)
        num = restricted_ball_measure(mu, A, x, r, tol=tol, opts=opts)
        q, f = _quotient(num, den)
        vals.append(q.scaled(r ** -h))
        flags.append(f)
    verdict, window = base_verdict(radii, vals, threshold, decade)
    return BaseStatistic(tuple(x.tolist()), float(h), tuple(radii), tuple(vals), verdict,
                         float(threshold), window, tuple(flags))


# ---------------------------------------------------------------------------
# CSV export

def _fmt_point(x) -> str:
    return " ".join(repr(float(v)) for v in x)


def _fmt_flags(f) -> str:
    return "|".join(sorted(f))


def write_profiles_csv(path, profiles: Iterable[DensityProfile]):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "r", "ratio_lo", "ratio_hi", "flags"])
        for prof in profiles:
            for r, iv, f in zip(prof.radii, prof.ratio, prof.flags):
                w.writerow([_fmt_point(prof.x), repr(r), repr(iv.lower), repr(iv.upper), _fmt_flags(f)])


def write_estimates_csv(path, estimates: Iterable[DegreeEstimate]):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "slope", "r2", "class", "value", "r_min", "r_max"])
        for e in estimates:
            w.writerow([_fmt_point(e.x), repr(e.slope), repr(e.r2), e.classification, repr(e.value),
                        repr(e.window[0]), repr(e.window[1])])
