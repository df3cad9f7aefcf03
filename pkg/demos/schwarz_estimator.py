"""The Schwarz defect estimator on smooth fields, and the diagonal counterexample."""
import numpy as np

from superdensity.measures import lebesgue
from superdensity.scenario import FIELDS
from superdensity.schwarz import DensityForm, diagonal_counterexample, estimator_schedule

mu = lebesgue(2)
for name, x in (("sin_product", [0.3, -0.2]), ("rotation", [0.0, 0.0]), ("cubic_rotation", [0.0, 0.0])):
    F = FIELDS[name]
    exact = float(F.gamma(np.array([x]))[0])
    rows = estimator_schedule(mu, DensityForm(1, mu), DensityForm(2, mu), F.f, F.G, F.H, 1, 2, x,
                              [0.2, 0.1, 0.05], dH_p=F.dH_p, dG_q=F.dG_q)
    cells = ", ".join(f"r={row.r}: {row.gamma.estimate:.6f}" for row in rows)
    print(f"{name} (exact {exact}): {cells}")

# length on the diagonal: pairings grow linearly in j, so D_1 mu is no measure
for j in (1, 5, 10):
    row = diagonal_counterexample(j)
    print(f"j={j:2d}: |D_1 mu(phi_j)| = {abs(row.value):8.4f} >= {row.bound:8.4f}")
