"""Surface measures ``H^k`` restricted to ``phi(G)`` and their frame constants.

A chart is an injective C^1 map ``phi`` from a parameter box ``G`` in R^k to
R^n.  Everything here is checked on finite grids: the Jacobian factor, the
injectivity test and the frame constants are grid-certified, which is the
working assumption for every chart the package ships.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .density import (FINITE, DegreeEstimate, DegreeParams, estimate_density_degree,
                      geometric_radii, ratio_profile)
from .measures import FrameBounds, QuadratureOptions, SurfaceMeasure, ball_measure, lebesgue
from .regions import Box, Predicate, Region, _as_point, _as_points, unit_ball_volume

LIPSCHITZ_INFLATION = 1.05
DEFAULT_GRID = {1: 2001, 2: 81, 3: 21}


class ChartError(ValueError):
    """The chart is degenerate or not injective on its verification grid."""


class AsymmetryError(ValueError):
    pass


def min_eigenvalue(M, tol: float = 1e-10) -> float:
    """Smallest eigenvalue of a real symmetric matrix."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("expected a square matrix")
    scale = max(float(np.linalg.norm(M)), 1.0)
    if np.max(np.abs(M - M.T)) > tol * scale:
        raise AsymmetryError("matrix is not symmetric")
    S = 0.5 * (M + M.T)
    w, V = np.linalg.eigh(S)
    lam, v = float(w[0]), V[:, 0]
    resid = float(np.linalg.norm(S @ v - lam * v))
    if resid > 1e-12 * scale:
        raise ArithmeticError(f"eigen-residual {resid:.3g} too large")
    return lam


@dataclass(eq=False)
class SurfaceChart:
    k: int
    n: int
    phi: Callable[[np.ndarray], np.ndarray]
    G: Box
    jacobian: Optional[Callable[[np.ndarray], np.ndarray]] = None
    grid: Optional[int] = None       # grid points per axis over G
    name: str = "chart"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (1 <= self.k <= 3 and self.n >= self.k):
            raise ValueError("need 1 <= k <= 3 and n >= k")
        if not isinstance(self.G, Box) or self.G.dim != self.k:
            raise ValueError("the parameter domain must be a box of dimension k")
        if np.any(self.G.hi <= self.G.lo):
            raise ValueError("the parameter box is empty")
        if self.grid is None:
            self.grid = DEFAULT_GRID[self.k]
        if self.grid < 3:
            raise ValueError("grid needs at least 3 points per axis")

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.G.hi - self.G.lo))

    @property
    def fd_step(self) -> float:
        return 1e-5 * self.diameter

    @property
    def spacing(self) -> float:
        return float(np.max(self.G.hi - self.G.lo)) / (self.grid - 1)

    def map(self, Y) -> np.ndarray:
        Y = _as_points(Y, self.k)
        return np.asarray(self.phi(Y), dtype=float).reshape(Y.shape[0], self.n)

    def derivative(self, Y) -> np.ndarray:
        """``Dphi`` at each row of ``Y``, shape ``(m, n, k)``."""
        Y = _as_points(Y, self.k)
        if self.jacobian is not None:
            return np.asarray(self.jacobian(Y), dtype=float).reshape(Y.shape[0], self.n, self.k)
        h = self.fd_step
        cols = []
        for i in range(self.k):
            e = np.zeros(self.k)
            e[i] = h
            cols.append((self.map(Y + e) - self.map(Y - e)) / (2 * h))
        return np.stack(cols, axis=2)

    def jacobian_factor(self, Y) -> np.ndarray:
        """``sqrt(det(Dphi^T Dphi))`` per row; raises on a degenerate point."""
        D = self.derivative(Y)
        gram = np.einsum("mik,mil->mkl", D, D)
        det = np.linalg.det(gram)
        if np.any(~(det > 0)):
            bad = _as_points(Y, self.k)[np.argmax(~(det > 0))]
            raise ChartError(f"Jacobian factor vanishes at {bad.tolist()}")
        return np.sqrt(det)

    def _axis_grid(self, lo, hi) -> np.ndarray:
        h = self.spacing
        axes = [np.linspace(a, b, max(int(round((b - a) / h)) + 1, 2)) for a, b in zip(lo, hi)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.reshape(-1) for m in mesh], axis=1)

    @cached_property
    def closure_grid(self) -> np.ndarray:
        return self._axis_grid(self.G.lo, self.G.hi)

    @cached_property
    def neighborhood_grid(self) -> np.ndarray:
        """Grid over the box hull of ``G`` dilated by one."""
        return self._axis_grid(self.G.lo - 1.0, self.G.hi + 1.0)

    @cached_property
    def hs_max(self) -> float:
        """Largest Hilbert-Schmidt norm of ``Dphi`` on the neighborhood grid."""
        D = self.derivative(self.neighborhood_grid)
        return float(np.sqrt(np.einsum("mik,mik->m", D, D)).max())

    @cached_property
    def affine(self) -> bool:
        """``Dphi`` is constant on the neighborhood grid."""
        D = self.derivative(self.neighborhood_grid).reshape(-1, self.n * self.k)
        return bool(np.allclose(D, D[0], rtol=0, atol=1e-13 * max(1.0, np.abs(D).max())))

    @property
    def lipschitz(self) -> float:
        return LIPSCHITZ_INFLATION * self.hs_max

    def validate(self) -> None:
        """Grid check of ``J phi > 0`` and of injectivity."""
        Y = self.closure_grid
        self.jacobian_factor(Y)
        P = self.map(Y)
        scale = float(np.ptp(P, axis=0).max()) or 1.0
        pairs = cKDTree(P).query_pairs(1e-9 * scale, output_type="ndarray")
        if len(pairs):
            i, j = pairs[0]
            raise ChartError(f"chart is not injective: {Y[i].tolist()} and {Y[j].tolist()} collide")

    def to_dict(self):
        return {"name": self.name, "params": dict(self.params)}


# ---------------------------------------------------------------------------
# Built-in charts

def _interval(a, b) -> Box:
    return Box([a], [b])


def diagonal_chart(a: float = -1.0, b: float = 1.0, grid: Optional[int] = None) -> SurfaceChart:
    """``t -> (t, t)``."""
    return SurfaceChart(1, 2, lambda Y: np.hstack([Y, Y]), _interval(a, b),
                        jacobian=lambda Y: np.ones((Y.shape[0], 2, 1)), grid=grid,
                        name="diagonal", params={"a": a, "b": b})


def circle_chart(a: float = 0.0, b: float = math.pi, grid: Optional[int] = None) -> SurfaceChart:
    """Unit-speed arc ``t -> (cos t, sin t)``."""

    def phi(Y):
        return np.hstack([np.cos(Y), np.sin(Y)])

    def jac(Y):
        return np.stack([-np.sin(Y), np.cos(Y)], axis=1)

    return SurfaceChart(1, 2, phi, _interval(a, b), jacobian=jac, grid=grid, name="circle",
                        params={"a": a, "b": b})


def parabola_chart(a: float = -1.0, b: float = 1.0, grid: Optional[int] = None) -> SurfaceChart:
    """``t -> (t, t^2)``."""

    def jac(Y):
        return np.stack([np.ones_like(Y), 2 * Y], axis=1)

    return SurfaceChart(1, 2, lambda Y: np.hstack([Y, Y * Y]), _interval(a, b), jacobian=jac,
                        grid=grid, name="parabola", params={"a": a, "b": b})


def plane_chart(k: int = 2, n: int = 3, half_width: float = 1.0,
                grid: Optional[int] = None) -> SurfaceChart:
    """The coordinate k-plane in R^n over the cube ``(-w, w)^k``."""
    if n < k:
        raise ValueError("need n >= k")
    E = np.eye(n, k)

    return SurfaceChart(k, n, lambda Y: Y @ E.T, Box([-half_width] * k, [half_width] * k),
                        jacobian=lambda Y: np.broadcast_to(E, (Y.shape[0], n, k)).copy(), grid=grid,
                        name="plane", params={"k": k, "n": n, "half_width": half_width})


CHARTS = {"diagonal": diagonal_chart, "circle": circle_chart, "parabola": parabola_chart,
          "plane": plane_chart}


def chart_from_dict(d: dict) -> SurfaceChart:
    name = d["name"]
    if name not in CHARTS:
        raise KeyError(f"unknown chart {name!r}")
    return CHARTS[name](**d.get("params", {}))


# ---------------------------------------------------------------------------
# Frame constants


@dataclass(frozen=True)
class FrameConstants:
    m00: float
    m1: float
    r0: float
    separation: float      # image distance per unit parameter distance up to r0; at least m00
    jacobian_range: tuple  # (min, max) of J phi on the grid, widened by the inflation factor
    C1: float
    C2: float
    r1: float
    bounds: FrameBounds
    grid: int
    label: str = "grid-certified realization"

    def to_dict(self):
        b = self.bounds
        return {"m00": self.m00, "m1": self.m1, "r0": self.r0, "separation": self.separation,
                "jacobian_range": list(self.jacobian_range), "C1": self.C1, "C2": self.C2,
                "r1": self.r1, "C": b.C, "p": b.p, "q": b.q, "r_bar": b.r_bar, "grid": self.grid,
                "label": self.label}


def half_root_min_eigen(chart: SurfaceChart, Y) -> np.ndarray:
    """``m0(y) = sqrt(lambda_min(Dphi^T Dphi)) / 2`` per row."""
    D = chart.derivative(Y)
    gram = np.einsum("mik,mil->mkl", D, D)
    lam = np.linalg.eigvalsh(gram)[:, 0]
    return 0.5 * np.sqrt(np.maximum(lam, 0.0))


def oscillation(chart: SurfaceChart, r: float, Y=None) -> np.ndarray:
    """Grid value of ``sigma_r(y) = max_{|z-y| <= r} |Dphi(z) - Dphi(y)|`` (Hilbert-Schmidt)."""
    Y = chart.closure_grid if Y is None else _as_points(Y, chart.k)
    Z = chart.neighborhood_grid
    if chart.affine:
        return np.zeros(Y.shape[0])
    DY = chart.derivative(Y).reshape(Y.shape[0], -1)
    DZ = chart.derivative(Z).reshape(Z.shape[0], -1)
    # widen by the grid's covering radius so the nearest grid points are included
    reach = r + chart.spacing * math.sqrt(chart.k)
    tree = cKDTree(Z)
    out = np.empty(Y.shape[0])
    for i, nb in enumerate(tree.query_ball_point(Y, reach)):
        out[i] = np.sqrt(((DZ[nb] - DY[i]) ** 2).sum(axis=1)).max()
    return out


def far_separation(chart: SurfaceChart, r0: float) -> float:
    """Lower bound for ``|phi(z) - phi(y)| / r0`` over grid pairs with ``|z - y| >= r0``."""
    Y = chart.closure_grid
    P = chart.map(Y)
    slack = chart.lipschitz * chart.spacing * math.sqrt(chart.k)
    best = math.inf
    for s in range(0, Y.shape[0], 512):
        dy = np.linalg.norm(Y[s:s + 512, None, :] - Y[None, :, :], axis=2)
        dp = np.linalg.norm(P[s:s + 512, None, :] - P[None, :, :], axis=2)
        far = dy >= r0
        if far.any():
            best = min(best, float(dp[far].min()))
    return (best - slack) / r0


def frame_constants(chart: SurfaceChart) -> FrameConstants:
    """Two-sided growth constants ``r^k / C <= mu(B_r(x)) <= C r^k`` for ``mu = H^k`` on ``phi(G)``.

    ``m00`` is the grid minimum of ``m0``.  ``r0`` is the largest radius in
    ``1, 1/2, 1/4, ...`` (resolved by the grid) with ``sigma_r0 <= m00``
    everywhere and a separation of at least ``m00``.
    The upper constant uses the separation: ``min(2 m0 - sigma_r0)`` capped
    by how far apart the images of parameters ``r0`` or more apart stay;
    the lower constant uses the Lipschitz bound and the fact that a ball
    centred in a box keeps at least ``2^-k`` of its volume inside while its
    radius is below the shortest side.
    """
    chart.validate()
    k = chart.k
    Y = chart.closure_grid
    m0 = half_root_min_eigen(chart, Y)
    m00 = float(m0.min())
    if not m00 > 0:
        raise ChartError("Dphi is rank-deficient on the grid")
    m1 = chart.hs_max
    r0 = 1.0
    min_radius = 2 * chart.spacing * math.sqrt(k)
    while True:
        if r0 < min_radius and not chart.affine:
            raise ChartError("grid too coarse to certify a positive r0")
        sigma = oscillation(chart, r0)
        ell = float((2 * m0 - sigma).min())
        if not chart.affine:
            ell = min(ell, far_separation(chart, r0))
        if np.all(sigma <= m00) and ell >= m00:
            break
        r0 /= 2
    J = chart.jacobian_factor(Y)
    pad = 1.0 if chart.affine else LIPSCHITZ_INFLATION
    j_min, j_max = float(J.min()) / pad, float(J.max()) * pad
    omega = unit_ball_volume(k)
    L = chart.lipschitz
    C2 = j_max * omega / ell ** k
    C1 = L ** k / (j_min * omega * 2.0 ** -k)
    r1 = L * float(np.min(chart.G.hi - chart.G.lo))
    r_bar = min(r1, m00 * r0)
    C = max(C1, C2)
    return FrameConstants(m00, m1, r0, ell, (j_min, j_max), C1, C2, r1,
                          FrameBounds(C, k, k, r_bar), chart.grid)


def inclusion_violations(chart: SurfaceChart, fc: FrameConstants, ys, radii) -> int:
    """Grid points ``z`` outside ``B_r(y)`` whose image lies in ``B_{m00 r}(phi(y))``."""
    Z = chart.closure_grid
    P = chart.map(Z)
    tree = cKDTree(P)
    bad = 0
    for y in _as_points(ys, chart.k):
        py = chart.map(y[None])[0]
        for r in radii:
            if r > fc.r0:
                raise ValueError("radius exceeds r0")
            idx = tree.query_ball_point(py, fc.m00 * r)
            if idx:
                far = np.linalg.norm(Z[idx] - y, axis=1) > r
                bad += int(far.sum())
    return bad


def frame_bound_audit(chart: SurfaceChart, fc: FrameConstants, samples: int = 50, seed: int = 0,
                      tol: float = 1e-2) -> list[dict]:
    """Sampled check of ``r^k / C <= mu(B_r(x)) <= C r^k`` at ``x = phi(y)``, ``r <= r_bar``."""
    rng = np.random.default_rng(seed)
    mu = surface_measure(chart, validate=False)
    b = fc.bounds
    opts = QuadratureOptions(tol=tol)
    rows = []
    for _ in range(samples):
        y = chart.G.lo + rng.random(chart.k) * (chart.G.hi - chart.G.lo)
        r = b.r_bar * (0.05 + 0.95 * rng.random())
        x = chart.map(y[None])[0]
        iv = ball_measure(mu, x, r, opts=opts)
        lo, hi = r ** chart.k / b.C, b.C * r ** chart.k
        rows.append({"x": x.tolist(), "r": r, "lower": iv.lower, "upper": iv.upper, "bound_lo": lo,
                     "bound_hi": hi, "ok": bool(iv.upper >= lo and iv.lower <= hi)})
    return rows


def surface_measure(chart: SurfaceChart, weight: Optional[Callable] = None,
                    validate: bool = True) -> SurfaceMeasure:
    if validate:
        chart.validate()
    return SurfaceMeasure(chart, weight)


# ---------------------------------------------------------------------------
# Pullback equivalence


def pullback_region(chart: SurfaceChart, E: Region) -> Predicate:
    """``phi^{-1}(E)`` as a region of R^k; boxes are judged through their image enclosures."""
    L = chart.lipschitz

    def func(Y):
        return E.contains_many(chart.map(Y))

    def classify(lo, hi):
        c = chart.map(0.5 * (lo + hi))
        rad = L * 0.5 * np.linalg.norm(hi - lo, axis=1)
        return E.classify(c - rad[:, None], c + rad[:, None])

    return Predicate(dim=chart.k, func=func, classify_fn=classify if E.certified else None,
                     name="pullback", params={"chart": chart.name})


@dataclass(frozen=True)
class PullbackReport:
    y: tuple
    ambient: DegreeEstimate
    parameter: DegreeEstimate
    classes_agree: bool
    degree_gap: float        # |d_ambient - d_parameter| for finite degrees, else nan
    tolerance: float

    @property
    def consistent(self) -> bool:
        if not self.classes_agree:
            return False
        return self.ambient.classification != FINITE or self.degree_gap <= self.tolerance


# both sides integrate over image enclosures of parameter cells, which cannot resolve sets
# much thinner than a cell; fits therefore use the point estimates at every radius
PULLBACK_PARAMS = DegreeParams(max_rel_width=math.inf)


def pullback_degree_check(chart: SurfaceChart, E: Region, y, radii: Optional[Sequence[float]] = None,
                          tol: float = 1e-4, params: DegreeParams = PULLBACK_PARAMS,
                          tolerance: float = 0.25) -> PullbackReport:
    """Density degree of ``E`` at ``phi(y)`` against that of ``phi^{-1}(E)`` at ``y``."""
    y = _as_point(y, chart.k)
    if not chart.G.contains_many(y[None])[0]:
        raise ValueError("y must lie in the parameter box")
    if radii is None:
        depth = float(chart.G.distance_to_complement(y[None])[0])
        radii = geometric_radii(min(0.25, 0.5 * depth), 0.7, 16)
    mu = surface_measure(chart)
    x = chart.map(y[None])[0]
    opts = QuadratureOptions(tol=tol)
    amb = estimate_density_degree(ratio_profile(mu, E, x, radii, opts=opts), params)
    par = estimate_density_degree(
        ratio_profile(lebesgue(chart.k), pullback_region(chart, E), y, radii,
                      opts=QuadratureOptions(tol=tol, closed_form=True)), params)
    agree = amb.classification == par.classification
    gap = abs(amb.value - par.value) if agree and amb.classification == FINITE else math.nan
    return PullbackReport(tuple(y.tolist()), amb, par, agree, gap, tolerance)
