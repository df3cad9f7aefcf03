"""Hierarchical cell quadrature over sets described by box verdicts.

A bounding box is cut into a base grid and refined breadth-first.  Cells
certified inside the integration set contribute a tensor Gauss-Legendre
integral of each density; cells certified outside are dropped; undecided
cells are split until the undecided mass falls below ``tol`` times the total
or the depth/cell budget runs out.  Cells still undecided at the end widen the
interval by their full (signed) weight and feed a sub-sampled point
estimate.

The interval accounts for geometric uncertainty only: densities are
integrated by Gauss-Legendre on each cell, and their smoothness is a
per-scenario assumption.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .regions import INSIDE, UNKNOWN

DEFAULT_MAX_DEPTH = 12
DEFAULT_MAX_CELLS = 1_500_000
_BASE = {1: 16, 2: 8, 3: 4}
_ORDER = {1: 3, 2: 3, 3: 2}
_SUB = {1: 8, 2: 3, 3: 2}


def _gauss_nodes(n: int, order: int):
    x, w = np.polynomial.legendre.leggauss(order)
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    grids = np.meshgrid(*[x] * n, indexing="ij")
    nodes = np.stack([g.reshape(-1) for g in grids], axis=1)
    wg = np.meshgrid(*[w] * n, indexing="ij")
    weights = np.prod(np.stack([g.reshape(-1) for g in wg], axis=1), axis=1)
    return nodes, weights


def _sub_nodes(n: int, s: int):
    x = (np.arange(s) + 0.5) / s
    grids = np.meshgrid(*[x] * n, indexing="ij")
    return np.stack([g.reshape(-1) for g in grids], axis=1)


@dataclass
class CellIntegral:
    """Outcome of one cell quadrature, for one or more densities."""

    inside: np.ndarray
    boundary: np.ndarray          # (m, ndens) cell integrals of undecided cells
    boundary_pos: np.ndarray      # (m, ndens) integrals of positive parts
    boundary_neg: np.ndarray      # (m, ndens) integrals of negative parts
    fraction: np.ndarray          # (m,) sampled in-set fraction per undecided cell
    depth: int
    cells: int
    budget_exceeded: bool
    certified: bool = True
    flags: set = field(default_factory=set)

    def interval(self, k: int = 0):
        """(lower, upper, estimate) for density ``k``."""
        base = float(self.inside[k])
        lo = base + math.fsum(self.boundary_neg[:, k].tolist())
        hi = base + math.fsum(self.boundary_pos[:, k].tolist())
        est = base + math.fsum((self.fraction * self.boundary[:, k]).tolist())
        return lo, hi, min(max(est, lo), hi)


def integrate_set(classify: Callable, member: Callable, lo, hi,
                  densities: Sequence[Optional[Callable]] = (None,), *,
                  tol: float = 1e-4, max_depth: int = DEFAULT_MAX_DEPTH,
                  base: Optional[int] = None, max_cells: int = DEFAULT_MAX_CELLS,
                  certified: bool = True, min_depth: int = 0) -> CellIntegral:
    """Integrate each density over ``{x in [lo, hi] : member(x)}``.

    ``classify(lo, hi)`` returns box verdicts for the set; ``member(X)`` is
    its pointwise membership, used only for the sampled estimate.  A density
    of ``None`` is the constant 1.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    n = lo.shape[0]
    nd = len(densities)
    base = base or _BASE.get(n, 2)
    order = _ORDER.get(n, 2)
    gnodes, gweights = _gauss_nodes(n, order)
    h = (hi - lo) / base
    axes = [lo[d] + h[d] * np.arange(base) for d in range(n)]
    mesh = np.meshgrid(*axes, indexing="ij")
    cells = np.stack([m.reshape(-1) for m in mesh], axis=1)

    inside_parts: list[list[float]] = [[] for _ in range(nd)]
    inside_abs0: list[float] = []
    corners = _sub_nodes(n, 2) - 0.25  # children offsets in units of h: 0 or 0.5
    corners = (corners > 0).astype(float) * 0.5
    depth = 0
    total = 0
    budget = False

    def cell_integrals(clo, hvec, signed_parts=False):
        vol = float(np.prod(hvec))
        m = clo.shape[0]
        out = np.empty((m, nd))
        pos = np.empty((m, nd))
        neg = np.empty((m, nd))
        need_nodes = any(d is not None for d in densities)
        pts = None
        if need_nodes and m:
            pts = (clo[:, None, :] + gnodes[None, :, :] * hvec).reshape(-1, n)
        for k, dens in enumerate(densities):
            if dens is None:
                out[:, k] = vol
                pos[:, k] = vol
                neg[:, k] = 0.0
                continue
            if m == 0:
                continue
            vals = np.asarray(dens(pts), dtype=float).reshape(m, -1)
            out[:, k] = vol * (vals @ gweights)
            if signed_parts:
                pos[:, k] = vol * (np.maximum(vals, 0.0) @ gweights)
                neg[:, k] = vol * (np.minimum(vals, 0.0) @ gweights)
        return out, pos, neg

    while True:
        chi = cells + h
        codes = classify(cells, chi)
        total += cells.shape[0]
        ins = codes == INSIDE
        unk = codes == UNKNOWN
        if ins.any():
            vals, _, _ = cell_integrals(cells[ins], h)
            for k in range(nd):
                inside_parts[k].append(math.fsum(vals[:, k].tolist()))
            inside_abs0.append(math.fsum(np.abs(vals[:, 0]).tolist()))
        ucells = cells[unk]
        if ucells.shape[0] == 0:
            break
        _, upos, uneg = cell_integrals(ucells, h, signed_parts=True)
        undecided = math.fsum(upos[:, 0].tolist()) - math.fsum(uneg[:, 0].tolist())
        decided = math.fsum(inside_abs0)
        if depth >= min_depth and undecided <= tol * (decided + undecided):
            break
        if depth >= max_depth:
            budget = True
            break
        if ucells.shape[0] * (2 ** n) > max_cells:
            budget = True
            break
        h = h * 0.5
        cells = (ucells[:, None, :] + corners[None, :, :] * (2 * h)).reshape(-1, n)
        depth += 1

    bvals, bpos, bneg = cell_integrals(ucells, h, signed_parts=True)
    frac = np.zeros(ucells.shape[0])
    if ucells.shape[0]:
        sub = _sub_nodes(n, _SUB.get(n, 2))
        chunk = max(1, 400_000 // sub.shape[0])
        for s in range(0, ucells.shape[0], chunk):
            c = ucells[s:s + chunk]
            pts = (c[:, None, :] + sub[None, :, :] * h).reshape(-1, n)
            frac[s:s + chunk] = np.asarray(member(pts), dtype=float).reshape(c.shape[0], -1).mean(axis=1)
    inside = np.array([math.fsum(p) for p in inside_parts])
    res = CellIntegral(inside=inside, boundary=bvals, boundary_pos=bpos, boundary_neg=bneg,
                       fraction=frac, depth=depth, cells=total, budget_exceeded=budget,
                       certified=certified)
    if budget:
        res.flags.add("budget_exceeded")
    if not certified:
        res.flags.add("sampled")
    return res


def ratio_interval(num_inside: float, den_inside: float, g: np.ndarray, w: np.ndarray):
    """Range of ``(a + sum t_i w_i g_i) / (b + sum t_i w_i)`` over ``t in [0, 1]^m``.

    ``w`` are nonnegative boundary weights and ``g`` the integrand value on
    each boundary cell.  The extremes take boundary cells greedily in order
    of ``g``: a cell enters the maximiser exactly when its value exceeds the
    running optimum.
    """
    g = np.asarray(g, float)
    w = np.asarray(w, float)

    def extreme(sign):
        a, b = sign * num_inside, den_inside
        order = np.argsort(-sign * g, kind="stable")
        gs, ws = sign * g[order], w[order]
        best = a / b if b > 0 else -np.inf
        num, den = a, b
        for gi, wi in zip(gs, ws):
            if wi <= 0:
                continue
            if den > 0 and gi <= num / den:
                break
            num += gi * wi
            den += wi
            best = max(best, num / den)
        return sign * best

    return extreme(-1.0), extreme(1.0)
