"""Cross-derivative consistency for measures with measure-valued derivatives.

The quantity of interest is ``Gamma = D_p H - D_q G`` at a point ``x``.  Its
mollified mean over ``B_{rho r}(x)`` is estimated with certified cell
quadrature, and the side conditions (growth ratio ``sigma(rho)``, decay of
``|D_i mu|(B_r) / (r mu(B_r))`` and tangency of the coincidence set) are
tabulated at finite scales.  Axes ``p``, ``q`` and ``i`` count from 1.

Cutoff profiles are quintic smoothsteps, so everything is C^2 rather than
C^infinity; nothing below uses more than two derivatives.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import integrate

from . import quadrature
from .density import (DEFAULT_PARAMS, PASS, DegreeEstimate, DegreeParams, _fit,
                      estimate_density_degree, geometric_radii, ratio_profile, superdensity_test)
from .measures import (MeasureInterval, QuadratureOptions, Restriction, SurfaceMeasure,
                       WeightedLebesgue, ball_measure, restricted_ball_measure)
from .regions import Ball, Box, Complement, Intersection, Region, _as_point, _as_points
from .surfaces import SurfaceChart

PLAUSIBLE = "HypothesesPlausible"
HYPOTHESIS_FAIL = "HypothesisFail"
SCHWARZ_OPTIONS = QuadratureOptions(tol=1e-6, closed_form=True)


class SingularPairingError(TypeError):
    """The derivative is not a measure, so it has no general pairing."""


# ---------------------------------------------------------------------------
# Smooth cutoffs


def smoothstep(s):
    s = np.clip(s, 0.0, 1.0)
    return s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)


def smoothstep_slope(s):
    s = np.asarray(s, float)
    out = 30.0 * s * s * (1.0 - s) ** 2
    return np.where((s > 0) & (s < 1), out, 0.0)


SMOOTHSTEP_MAX_SLOPE = 15.0 / 8.0


@dataclass(frozen=True)
class Bump:
    """Radial cutoff: 1 on ``B_rho(0)``, 0 outside ``B_1(0)``."""

    rho: float

    def __post_init__(self):
        if not 0 < self.rho < 1:
            raise ValueError("rho must lie in (0, 1)")

    @property
    def slope_bound(self) -> float:
        return SMOOTHSTEP_MAX_SLOPE / (1.0 - self.rho)

    def radial(self, u):
        return 1.0 - smoothstep((np.asarray(u, float) - self.rho) / (1.0 - self.rho))

    def radial_slope(self, u):
        return -smoothstep_slope((np.asarray(u, float) - self.rho) / (1.0 - self.rho)) / (1.0 - self.rho)

    def value(self, Z):
        Z = np.atleast_2d(np.asarray(Z, float))
        return self.radial(np.linalg.norm(Z, axis=1))

    def gradient(self, Z):
        Z = np.atleast_2d(np.asarray(Z, float))
        u = np.linalg.norm(Z, axis=1)
        safe = np.where(u > 0, u, 1.0)
        return (self.radial_slope(u) / safe)[:, None] * Z

    def scaled(self, x, r: float) -> "TestFunction":
        """``g_r(y) = g((y - x) / r)``."""
        x = np.asarray(x, float).reshape(-1)
        return TestFunction(lambda Y: self.value((Y - x) / r),
                            lambda Y: self.gradient((Y - x) / r) / r, x - r, x + r)


def bump(rho: float) -> Bump:
    return Bump(rho)


@dataclass(frozen=True)
class TestFunction:
    """A C^1 function with support inside the box ``[lo, hi]``."""

    value: Callable[[np.ndarray], np.ndarray]
    gradient: Callable[[np.ndarray], np.ndarray]
    lo: np.ndarray
    hi: np.ndarray


def product_bump(center, half_width: float, rho: float = 0.5) -> TestFunction:
    """``prod_d g(|y_d - c_d| / w)`` for the 1-D profile of :class:`Bump`."""
    c = np.asarray(center, float).reshape(-1)
    w = float(half_width)
    g = Bump(rho)

    def value(Y):
        S = np.abs(_as_points(Y, c.size) - c) / w
        return np.prod(g.radial(S), axis=1)

    def gradient(Y):
        D = (_as_points(Y, c.size) - c) / w
        S = np.abs(D)
        vals = g.radial(S)
        slopes = g.radial_slope(S) * np.sign(D) / w
        out = np.empty_like(D)
        for d in range(c.size):
            others = np.prod(np.delete(vals, d, axis=1), axis=1)
            out[:, d] = slopes[:, d] * others
        return out

    return TestFunction(value, gradient, c - w, c + w)


def constant_test(lo, hi) -> TestFunction:
    """The constant 1 on ``[lo, hi]``, for pairings whose support sits well inside."""
    lo = np.asarray(lo, float)
    hi = np.asarray(hi, float)
    return TestFunction(lambda Y: np.ones(len(Y)), lambda Y: np.zeros_like(_as_points(Y, lo.size)),
                        lo, hi)


# ---------------------------------------------------------------------------
# Integrals of smooth functions


def _box_integral(func, lo, hi, tol: float, base_region: Optional[Region] = None) -> MeasureInterval:
    """``int func`` over ``[lo, hi]`` (intersected with a region), widened by a refinement check."""
    lo = np.asarray(lo, float)
    hi = np.asarray(hi, float)
    region = Box(lo, hi) if base_region is None else Intersection([Box(lo, hi), base_region])

    base = quadrature._BASE.get(lo.size, 2)

    def run(mult):
        res = quadrature.integrate_set(region.classify, region.contains_many, lo, hi, (func,), tol=tol,
                                       base=base * mult, certified=region.certified)
        return res.interval(0), res.flags

    (lo1, hi1, e1), _ = run(4)
    (lo2, hi2, e2), flags = run(8)
    # two refinements can agree to every digit on smooth integrands; keep the requested tolerance
    err = abs(e2 - e1) + tol * abs(e2)
    return MeasureInterval(lo2 - err, hi2 + err, e2, frozenset(flags))


def _lebesgue_parts(mu):
    if isinstance(mu, WeightedLebesgue):
        return mu, []
    if isinstance(mu, Restriction) and isinstance(mu.base, WeightedLebesgue):
        return mu.base, [mu.region]
    raise NotImplementedError("ball averages need a weighted Lebesgue measure or a restriction of one")


def ball_average(mu, func, x, r: float, tol: float = 1e-6) -> tuple[MeasureInterval, MeasureInterval]:
    """``(1 / mu(B)) int_B func dmu`` and ``mu(B)`` for ``B = B_r(x)``.

    Cells cut by the boundary enter the quotient with an unknown fraction of
    their weight; the extremes over those fractions bound the average.
    """
    base, extra = _lebesgue_parts(mu)
    x = _as_point(x, mu.dim)
    parts = [Ball(x, r)] + extra + ([base.box] if base.box is not None else [])
    region = parts[0] if len(parts) == 1 else Intersection(parts)
    lo, hi = x - r, x + r
    w = base.density if base.density is not None else (lambda Y: np.ones(len(Y)))
    res = quadrature.integrate_set(region.classify, region.contains_many, lo, hi,
                                   (lambda Y: w(Y) * func(Y), w), tol=tol, certified=region.certified)
    bw = res.boundary[:, 1]
    g = np.divide(res.boundary[:, 0], bw, out=np.zeros_like(bw), where=bw > 0)
    a, b = quadrature.ratio_interval(res.inside[0], res.inside[1], g, bw)
    num = res.interval(0)
    den = res.interval(1)
    if not den[2] > 0:
        raise ValueError("ball has no mass")
    est = min(max(num[2] / den[2], a), b)
    flags = frozenset(res.flags)
    return MeasureInterval(a, b, est, flags), MeasureInterval(max(den[0], 0.0), den[1], den[2], flags)


# ---------------------------------------------------------------------------
# Derivative measures


def _fd_partial(func, i: int, step: float):
    def d(Y):
        Y = np.atleast_2d(np.asarray(Y, float))
        e = np.zeros(Y.shape[1])
        e[i - 1] = step
        return (func(Y + e) - func(Y - e)) / (2 * step)
    return d


@dataclass
class DensityForm:
    """``D_i (h L^n) = (D_i h) L^n``."""

    i: int
    base: WeightedLebesgue
    gradient: Optional[Callable] = None   # Y -> D_i h(Y)
    fd_step: float = 1e-5

    def __post_init__(self):
        if not 1 <= self.i <= self.base.dim:
            raise ValueError("axis out of range")
        self.dim = self.base.dim

    def density(self, Y):
        if self.base.density is None:
            return np.ones(len(Y))
        return self.base.density(Y)

    def derivative_density(self, Y):
        if self.base.density is None:
            return np.zeros(len(Y))
        if self.gradient is not None:
            return np.asarray(self.gradient(Y), float)
        return _fd_partial(self.base.density, self.i, self.fd_step)(Y)

    def pairing(self, test: TestFunction, tol: float) -> MeasureInterval:
        return _box_integral(lambda Y: test.value(Y) * self.derivative_density(Y), test.lo, test.hi, tol)

    def by_parts(self, test: TestFunction, tol: float) -> MeasureInterval:
        """``-int (D_i test) h``, computed independently of :meth:`pairing`."""
        return _box_integral(lambda Y: -test.gradient(Y)[:, self.i - 1] * self.density(Y),
                             test.lo, test.hi, tol)

    def variation_measure(self) -> WeightedLebesgue:
        return WeightedLebesgue(self.dim, density=lambda Y: np.abs(self.derivative_density(Y)),
                                name="variation")


@dataclass
class BoundaryFlux:
    """``D_i (L^n restricted to U) = -nu_i H^{n-1}`` on the boundary of ``U``."""

    i: int
    chart: SurfaceChart                  # parametrizes the boundary (up to a null set)
    normal: Callable                     # parameter points -> outward unit normals, (m, n)
    U: Region

    def __post_init__(self):
        if self.chart.k != self.chart.n - 1:
            raise ValueError("boundary chart must have codimension one")
        if not 1 <= self.i <= self.chart.n:
            raise ValueError("axis out of range")
        self.dim = self.chart.n

    def _nu(self, Y):
        return np.asarray(self.normal(Y), float)[:, self.i - 1]

    def pairing(self, test: TestFunction, tol: float) -> MeasureInterval:
        ch = self.chart
        return _box_integral(lambda Y: -self._nu(Y) * test.value(ch.map(Y)) * ch.jacobian_factor(Y),
                             ch.G.lo, ch.G.hi, tol)

    def by_parts(self, test: TestFunction, tol: float) -> MeasureInterval:
        """``-int_U D_i test``."""
        return _box_integral(lambda Y: -test.gradient(Y)[:, self.i - 1], test.lo, test.hi, tol,
                             base_region=self.U)

    def variation_measure(self) -> SurfaceMeasure:
        return SurfaceMeasure(self.chart, weight=lambda Y: np.abs(self._nu(Y)))


@dataclass
class DiagonalSingular:
    """``D_1`` of the length measure on the diagonal; not a measure."""

    i: int = 1
    dim: int = 2

    def pairing(self, test, tol):
        raise SingularPairingError("this derivative is not a measure; see diagonal_counterexample")

    def counterexample(self, j: int, tol: float = 1e-6):
        return diagonal_counterexample(j, tol)


def derivative_pairing(d, test: TestFunction, tol: float = 1e-6) -> MeasureInterval:
    """``int test d(D_i mu)``."""
    return d.pairing(test, tol)


def disk_boundary_flux(i: int) -> BoundaryFlux:
    """Flux derivative of Lebesgue measure on the unit disk."""
    chart = SurfaceChart(1, 2, lambda Y: np.hstack([np.cos(Y), np.sin(Y)]), Box([0.0], [2 * math.pi]),
                         jacobian=lambda Y: np.stack([-np.sin(Y), np.cos(Y)], axis=1), name="circle",
                         params={"a": 0.0, "b": 2 * math.pi})
    return BoundaryFlux(i, chart, lambda Y: np.hstack([np.cos(Y), np.sin(Y)]), Ball([0.0, 0.0], 1.0))


# ---------------------------------------------------------------------------
# Side conditions


@dataclass(frozen=True)
class SigmaRow:
    rho: float
    value: MeasureInterval       # min over the smallest decade of mu(B_r) / mu(B_{rho r})
    window: tuple


@dataclass(frozen=True)
class DecayRow:
    axis: int
    radii: tuple
    ratios: tuple                # |D_i mu|(B_r) / (r mu(B_r)) per radius
    slope: float
    decays: bool


@dataclass
class SchwarzReport:
    x: tuple
    sigma: list
    derivative_ratios: list
    tangency_degree: Optional[DegreeEstimate]
    tangency_verdict: str
    verdict: str
    failures: list
    thresholds: dict
    Gamma_estimate: Optional[MeasureInterval] = None
    Gamma_exact: Optional[float] = None
    rows: list = field(default_factory=list)


def sigma_estimates(mu, x, radii: Sequence[float], rho_grid: Sequence[float], decade: float = 10.0,
                    opts: QuadratureOptions = SCHWARZ_OPTIONS) -> list[SigmaRow]:
    r_min = min(radii)
    window = [r for r in radii if r <= decade * r_min]
    out = []
    cache = {}

    def mass(r):
        if r not in cache:
            cache[r] = ball_measure(mu, x, r, opts=opts)
        return cache[r]

    for rho in rho_grid:
        qs = [mass(r).divide(mass(rho * r)) for r in window]
        out.append(SigmaRow(float(rho), MeasureInterval(min(q.lower for q in qs), min(q.upper for q in qs),
                                                        min(q.estimate for q in qs)),
                            (min(window), max(window))))
    return out


def derivative_ratios(mu, d, x, radii: Sequence[float], decay_slope: float = 0.5,
                      floor: float = 1e-12, opts: QuadratureOptions = SCHWARZ_OPTIONS) -> DecayRow:
    var = d.variation_measure()
    ratios = []
    for r in radii:
        tv = ball_measure(var, x, r, opts=opts)
        m = ball_measure(mu, x, r, opts=opts)
        ratios.append(tv.divide(m).scaled(1.0 / r))
    if all(q.upper <= floor for q in ratios):
        return DecayRow(d.i, tuple(radii), tuple(ratios), math.inf, True)
    est = np.array([q.estimate for q in ratios])
    ok = est > 0
    if ok.sum() < 2:
        return DecayRow(d.i, tuple(radii), tuple(ratios), math.nan, False)
    slope, _, _ = _fit(np.log(np.asarray(radii)[ok]), np.log(est[ok]))
    decays = slope >= decay_slope and est[-1] < est[0]
    return DecayRow(d.i, tuple(radii), tuple(ratios), slope, bool(decays))


def hypothesis_report(mu, dmu_p, dmu_q, x, radii: Optional[Sequence[float]] = None,
                      rho_grid: Sequence[float] = (0.5, 0.7, 0.9, 0.95, 0.99), A: Optional[Region] = None,
                      decade: float = 10.0, sigma_trend: float = 10.0, decay_slope: float = 0.5,
                      params: DegreeParams = DEFAULT_PARAMS,
                      opts: QuadratureOptions = SCHWARZ_OPTIONS) -> SchwarzReport:
    """Finite-scale diagnostics for the growth, decay and tangency conditions at ``x``.

    The growth condition is read as the trend ``(sigma(rho) - 1) / (1 - rho)``
    staying below ``sigma_trend`` with ``sigma`` nonincreasing; the decay
    condition as a fitted log-log slope of at least ``decay_slope``.
    """
    x = _as_point(x, mu.dim)
    radii = list(radii) if radii is not None else geometric_radii(0.2, 0.7, 12)
    if ball_measure(mu, x, min(radii), opts=opts).upper <= 0:
        raise ValueError("x is not in the support")
    failures = []
    sig = sigma_estimates(mu, x, radii, rho_grid, decade, opts)
    est = [s.value.estimate for s in sig]
    monotone = all(b <= a * (1 + 1e-9) for a, b in zip(est, est[1:]))
    trend = max((s.value.estimate - 1.0) / (1.0 - s.rho) for s in sig)
    if not monotone or trend > sigma_trend:
        failures.append("iii")
    rows = [derivative_ratios(mu, d, x, radii, decay_slope, opts=opts) for d in (dmu_p, dmu_q)]
    for row in rows:
        if not row.decays:
            failures.append(f"iv:{row.axis}")
    degree, tangency = None, PASS
    if A is not None:
        prof = ratio_profile(mu, A, x, radii, opts=opts)
        degree = estimate_density_degree(prof, params)
        tangency = superdensity_test(prof, 1.0, params, degree)
        if tangency != PASS:
            failures.append("ii")
    thresholds = {"decade": decade, "sigma_trend": sigma_trend, "decay_slope": decay_slope,
                  "rho_grid": list(rho_grid), "radii": [min(radii), max(radii)], "tol": opts.tol}
    verdict = PLAUSIBLE if not failures else HYPOTHESIS_FAIL
    return SchwarzReport(tuple(x.tolist()), sig, rows, degree, tangency, verdict, failures, thresholds)


# ---------------------------------------------------------------------------
# The estimator


def gamma_function(H, G, p: int, q: int, step: float, dH_p: Optional[Callable] = None,
                   dG_q: Optional[Callable] = None) -> Callable:
    """``Gamma = D_p H - D_q G``, by central differences where no derivative is given."""
    dH = dH_p or _fd_partial(H, p, step)
    dG = dG_q or _fd_partial(G, q, step)
    return lambda Y: np.asarray(dH(Y), float) - np.asarray(dG(Y), float)


def schwarz_estimator(mu, f, G, H, p: int, q: int, x, r: float, rho: float = 0.9, tol: float = 1e-6,
                      dH_p: Optional[Callable] = None, dG_q: Optional[Callable] = None) -> MeasureInterval:
    """Mean of ``Gamma`` over ``B_{rho r}(x)`` against ``mu``.

    ``f`` enters only the bound components (see :func:`bound_components`).
    """
    if not 1 <= p < q <= mu.dim:
        raise ValueError("need 1 <= p < q <= n")
    gamma = gamma_function(H, G, p, q, 1e-5 * r, dH_p, dG_q)
    avg, _ = ball_average(mu, gamma, x, rho * r, tol)
    return avg


def bound_components(mu, dmu_p, dmu_q, x, r: float, rho: float, A: Optional[Region] = None,
                     opts: QuadratureOptions = SCHWARZ_OPTIONS) -> dict:
    """The quantities that bound the estimator error, without the unknown constant."""
    x = _as_point(x, mu.dim)
    m_r = ball_measure(mu, x, r, opts=opts)
    m_rho = ball_measure(mu, x, rho * r, opts=opts)
    out = {"mu_r": m_r.estimate, "mu_rho_r": m_rho.estimate,
           "sigma_r": m_r.estimate / m_rho.estimate,
           "variation_p": ball_measure(dmu_p.variation_measure(), x, r, opts=opts).estimate,
           "variation_q": ball_measure(dmu_q.variation_measure(), x, r, opts=opts).estimate}
    out["growth_factor"] = out["sigma_r"] - 1.0
    if A is not None:
        out["mu_outside_A"] = restricted_ball_measure(mu, Complement(A), x, r, opts=opts).estimate
    return out


@dataclass(frozen=True)
class EstimatorRow:
    r: float
    rho: float
    gamma: MeasureInterval
    sigma: float
    ratio_p: float
    ratio_q: float


def estimator_schedule(mu, dmu_p, dmu_q, f, G, H, p: int, q: int, x, radii: Sequence[float],
                       rho: float = 0.9, tol: float = 1e-6, dH_p=None, dG_q=None) -> list[EstimatorRow]:
    rows = []
    for r in radii:
        gam = schwarz_estimator(mu, f, G, H, p, q, x, r, rho, tol, dH_p, dG_q)
        comp = bound_components(mu, dmu_p, dmu_q, x, r, rho)
        rows.append(EstimatorRow(float(r), float(rho), gam, comp["sigma_r"],
                                 comp["variation_p"] / (r * comp["mu_r"]),
                                 comp["variation_q"] / (r * comp["mu_r"])))
    return rows


# ---------------------------------------------------------------------------
# The diagonal counterexample

ETA_PLATEAU = 2 * math.pi ** 2


def eta(s):
    """1 on ``[0, 2 pi^2]``, 0 from ``2 pi^2 + 1`` on, quintic in between."""
    return 1.0 - smoothstep(np.asarray(s, float) - ETA_PLATEAU)


def eta_slope(s):
    return -smoothstep_slope(np.asarray(s, float) - ETA_PLATEAU)


def counterexample_test(j: int) -> TestFunction:
    """``eta(|y|^2) cos(j y_1) sin(j y_2)``."""
    R = math.sqrt(ETA_PLATEAU + 1)

    def value(Y):
        Y = np.atleast_2d(Y)
        return eta((Y ** 2).sum(axis=1)) * np.cos(j * Y[:, 0]) * np.sin(j * Y[:, 1])

    def gradient(Y):
        Y = np.atleast_2d(Y)
        s = (Y ** 2).sum(axis=1)
        e, de = eta(s), eta_slope(s)
        c1, s1 = np.cos(j * Y[:, 0]), np.sin(j * Y[:, 0])
        c2, s2 = np.cos(j * Y[:, 1]), np.sin(j * Y[:, 1])
        g1 = 2 * Y[:, 0] * de * c1 * s2 - j * e * s1 * s2
        g2 = 2 * Y[:, 1] * de * c1 * s2 + j * e * c1 * c2
        return np.stack([g1, g2], axis=1)

    return TestFunction(value, gradient, np.array([-R, -R]), np.array([R, R]))


@dataclass(frozen=True)
class CounterexampleRow:
    j: int
    value: float
    bound: float
    error: float
    odd_part: float     # int t eta'(2t^2) cos(jt) sin(jt) dt
    even_part: float    # int eta(2t^2) sin^2(jt) dt

    @property
    def holds(self) -> bool:
        return abs(self.value) >= self.bound - self.error


def _quad(fn, T, tol):
    val, err = integrate.quad(fn, -T, T, points=[-math.pi, math.pi], limit=2000, epsabs=tol, epsrel=tol)
    return val, err


def diagonal_counterexample(j: int, tol: float = 1e-6) -> CounterexampleRow:
    """``D_1`` of length on the diagonal, paired with the ``j``-th test function."""
    if int(j) != j or j < 1:
        raise ValueError("j must be a positive integer")
    T = math.sqrt(math.pi ** 2 + 0.5)

    def integrand(t):
        # (D_1 phi_j)(t, t)
        return (2 * t * float(eta_slope(2 * t * t)) * math.cos(j * t) * math.sin(j * t)
                - j * float(eta(2 * t * t)) * math.sin(j * t) ** 2)

    val, err = _quad(integrand, T, tol)
    odd, _ = _quad(lambda t: t * float(eta_slope(2 * t * t)) * math.cos(j * t) * math.sin(j * t), T, tol)
    even, _ = _quad(lambda t: float(eta(2 * t * t)) * math.sin(j * t) ** 2, T, tol)
    value = -math.sqrt(2) * val
    return CounterexampleRow(int(j), value, j * math.pi * math.sqrt(2) - math.sqrt(2),
                             math.sqrt(2) * err + tol, odd, even)


def counterexample_slope_limit() -> float:
    """Limit of ``|value(j)| / j``: ``sqrt(2) / 2 * int eta(2 t^2) dt``."""
    T = math.sqrt(math.pi ** 2 + 0.5)
    val, _ = integrate.quad(lambda t: float(eta(2 * t * t)), -T, T, points=[-math.pi, math.pi])
    return math.sqrt(2) / 2 * val


# ---------------------------------------------------------------------------
# CSV export


def write_counterexample_csv(path, rows: Sequence[CounterexampleRow]):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["j", "value", "bound"])
        for r in rows:
            w.writerow([r.j, repr(r.value), repr(r.bound)])


def write_estimator_csv(path, rows: Sequence[EstimatorRow]):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["r", "rho", "gamma_lo", "gamma_hi", "sigma", "ratio_p", "ratio_q"])
        for r in rows:
            w.writerow([repr(r.r), repr(r.rho), repr(r.gamma.lower), repr(r.gamma.upper), repr(r.sigma),
                        repr(r.ratio_p), repr(r.ratio_q)])
