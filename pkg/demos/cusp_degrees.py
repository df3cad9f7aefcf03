"""Density degrees of the cusp complements at the origin.

The complement of a cusp of order alpha has relative measure
r^(alpha-1) / ((alpha+1) pi) in B_r(0), so the fitted degree should be alpha - 1.
"""
import math

from superdensity.density import estimate_density_degree, geometric_radii, ratio_profile
from superdensity.measures import QuadratureOptions, ball_measure, lebesgue
from superdensity.regions import PREDICATES, HalfSpace

iv = ball_measure(lebesgue(2), [0, 0], 1.0, opts=QuadratureOptions(tol=1e-4))
print(f"unit disk area in [{iv.lower:.6f}, {iv.upper:.6f}]  (pi = {math.pi:.6f})")

radii = geometric_radii(0.5, 0.7, 16)
for alpha in (2, 3, 4):
    prof = ratio_profile(lebesgue(2), PREDICATES["cusp_complement"](alpha=alpha), [0, 0], radii)
    est = estimate_density_degree(prof)
    r, ratio = radii[4], prof.ratio[4]
    exact = r ** (alpha - 1) / ((alpha + 1) * math.pi)
    print(f"alpha={alpha}: degree {est.value:.3f} (expected {alpha - 1}), "
          f"ratio at r={r:.2e}: {ratio.estimate:.3e} vs {exact:.3e}")

est = estimate_density_degree(ratio_profile(lebesgue(2), HalfSpace([1, 0]), [0, 0], radii[:8]))
print(f"half-plane: {est.classification}, degree {est.value}")
