import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from superdensity import schwarz
from superdensity.measures import QuadratureOptions, Restriction, WeightedLebesgue, lebesgue
from superdensity.regions import Ball
from superdensity.scenario import DENSITIES, FIELDS
from superdensity.schwarz import (DensityForm, DiagonalSingular, SingularPairingError, bump, constant_test,
                                  counterexample_slope_limit, diagonal_counterexample, disk_boundary_flux,
                                  estimator_schedule, hypothesis_report, product_bump, sigma_estimates)
from superdensity.surfaces import diagonal_chart, surface_measure


def _gaussian(Y):
    return np.exp(-(Y ** 2).sum(axis=1))


DENSITY_FORMS = {
    "lebesgue": lambda i: DensityForm(i, lebesgue(2)),
    "one_plus_x1_squared": lambda i: DensityForm(
        i, WeightedLebesgue(2, DENSITIES["one_plus_x1_squared"]().func),
        DENSITIES["one_plus_x1_squared"]().partials[i - 1]),
    "one_plus_x1_fourth": lambda i: DensityForm(
        i, WeightedLebesgue(2, DENSITIES["one_plus_x1_fourth"]().func),
        DENSITIES["one_plus_x1_fourth"]().partials[i - 1]),
    # no analytic gradient: the pairing uses central differences
    "gaussian": lambda i: DensityForm(i, WeightedLebesgue(2, _gaussian)),
}


@pytest.mark.parametrize("name", sorted(DENSITY_FORMS))
@pytest.mark.parametrize("axis", [1, 2])
def test_integration_by_parts_audit(name, axis):
    d = DENSITY_FORMS[name](axis)
    rng = np.random.default_rng(axis)
    for _ in range(10):
        test = product_bump(rng.uniform(-1, 1, 2), rng.uniform(0.1, 0.6), rng.uniform(0.2, 0.8))
        a = d.pairing(test, 1e-6)
        b = d.by_parts(test, 1e-6)
        assert a.overlaps(b, slack=1e-9), (a, b)


def test_disk_flux_by_parts():
    rng = np.random.default_rng(5)
    for i in (1, 2):
        d = disk_boundary_flux(i)
        for _ in range(2):
            test = product_bump(rng.uniform(-1, 1, 2), rng.uniform(0.3, 0.8))
            a, b = d.pairing(test, 1e-5), d.by_parts(test, 1e-5)
            assert a.overlaps(b, slack=1e-6), (a, b)
        # the outward flux of a constant vanishes
        assert d.pairing(constant_test([-2, -2], [2, 2]), 1e-8).contains(0.0, 1e-6)


@pytest.mark.parametrize("rho", [0.1, 0.5, 0.9, 0.99])
@pytest.mark.parametrize("r", [1e-3, 0.1, 2.0])
def test_bump_gradient_bound(r, rho):
    x = np.array([0.3, -0.7])
    g = bump(rho).scaled(x, r)
    Y = x + np.random.default_rng(0).uniform(-r, r, (10_000, 2))
    grad = np.abs(g.gradient(Y))
    assert grad.max() <= 2 / (r * (1 - rho))
    assert grad.max() <= schwarz.SMOOTHSTEP_MAX_SLOPE / (r * (1 - rho)) * (1 + 1e-12)
    dist = np.linalg.norm(Y - x, axis=1)
    vals = g.value(Y)
    assert np.all(vals[dist <= rho * r] == 1.0)
    assert np.all(vals[dist >= r] == 0.0)


@pytest.mark.property
@given(st.floats(0.05, 0.99), st.floats(1e-3, 10.0), st.tuples(st.floats(-5, 5), st.floats(-5, 5)),
       st.integers(0, 2**32 - 1))
def test_bump_gradient_bound_randomized(rho, r, x, seed):
    x = np.array(x)
    g = bump(rho).scaled(x, r)
    Y = x + np.random.default_rng(seed).uniform(-r, r, (2000, 2))
    assert np.abs(g.gradient(Y)).max() <= 2 / (r * (1 - rho))
    vals = g.value(Y)
    assert np.all((vals >= 0) & (vals <= 1))
    assert np.all(vals[np.linalg.norm(Y - x, axis=1) >= r] == 0.0)


def test_bump_gradient_matches_differences():
    g = bump(0.5).scaled([0, 0], 1.0)
    Y = np.random.default_rng(1).uniform(-1, 1, (200, 2))
    h = 1e-6
    for i in range(2):
        e = np.zeros(2)
        e[i] = h
        fd = (g.value(Y + e) - g.value(Y - e)) / (2 * h)
        assert np.allclose(fd, g.gradient(Y)[:, i], atol=1e-5)


SIGMA_MEASURES = [
    lambda: lebesgue(2),
    lambda: WeightedLebesgue(2, DENSITIES["one_plus_x1_squared"]().func),
    lambda: Restriction(lebesgue(2), Ball([0, 0], 1)),
    lambda: surface_measure(diagonal_chart(), validate=False),
]


@pytest.mark.property
@given(st.integers(0, len(SIGMA_MEASURES) - 1), st.floats(-0.5, 0.5), st.floats(0.01, 0.3),
       st.lists(st.floats(0.3, 0.99), min_size=2, max_size=5, unique=True))
def test_sigma_is_nonincreasing(which, t, r, rhos):
    mu = SIGMA_MEASURES[which]()
    x = [t, t] if which == 3 else [t, -t / 2]
    rows = sigma_estimates(mu, x, [r], sorted(rhos), opts=QuadratureOptions(tol=1e-4, closed_form=True))
    for a, b in zip(rows, rows[1:]):
        assert b.value.lower <= a.value.upper
        assert b.value.estimate <= a.value.estimate * (1 + 1e-6)


def test_counterexample_growth():
    for j in range(1, 11):
        row = diagonal_counterexample(j)
        assert abs(row.value) >= j * math.pi * math.sqrt(2) - math.sqrt(2)
        assert row.holds
    assert diagonal_counterexample(20).value / 20 == pytest.approx(counterexample_slope_limit(), rel=1e-6)


def test_singular_derivative_has_no_pairing():
    with pytest.raises(SingularPairingError):
        schwarz.derivative_pairing(DiagonalSingular(), constant_test([-1, -1], [1, 1]))


def _schedule(field, x, radii):
    F = FIELDS[field]
    mu = lebesgue(2)
    return estimator_schedule(mu, DensityForm(1, mu), DensityForm(2, mu), F.f, F.G, F.H, 1, 2, x, radii,
                              dH_p=F.dH_p, dG_q=F.dG_q)


@pytest.mark.parametrize("field, x", [("sin_product", [0.3, -0.2]), ("rotation", [0, 0]),
                                      ("cubic_rotation", [0, 0]), ("cubic_rotation", [0.4, 0.1])])
def test_classical_convergence(field, x):
    exact = float(FIELDS[field].gamma(np.array([x], float))[0])
    rows = _schedule(field, x, [0.2, 0.025])
    err = [abs(r.gamma.estimate - exact) for r in rows]
    assert rows[-1].gamma.contains(exact, 1e-3)
    assert err[1] <= err[0] / 2 or max(err) <= 1e-9


def test_cubic_rotation_average_matches_disk_mean():
    # mean of 2 + 3 y1^2 over B_s(0) is 2 + 3 s^2 / 4
    rows = _schedule("cubic_rotation", [0, 0], [0.2])
    s = 0.9 * 0.2
    assert rows[0].gamma.contains(2 + 0.75 * s * s, 1e-6)


def test_finite_difference_gamma_matches_analytic():
    F = FIELDS["cubic_rotation"]
    fd = schwarz.gamma_function(F.H, F.G, 1, 2, 1e-5)
    Y = np.random.default_rng(0).uniform(-1, 1, (50, 2))
    assert np.allclose(fd(Y), F.gamma(Y), atol=1e-6)


def test_disk_boundary_fails_decay():
    mu = Restriction(lebesgue(2), Ball([0, 0], 1))
    rep = hypothesis_report(mu, disk_boundary_flux(1), disk_boundary_flux(2), [1, 0],
                            radii=[0.2, 0.1, 0.05, 0.025])
    assert rep.verdict == schwarz.HYPOTHESIS_FAIL
    assert "iv:1" in rep.failures


def test_weight_with_nonvanishing_gradient_fails_decay():
    # D_1 of (1 + y1^2) L^2 has |D_1 mu|(B_r) / (r mu(B_r)) -> 8 / (3 pi), not 0
    spec = DENSITIES["one_plus_x1_squared"]()
    mu = WeightedLebesgue(2, spec.func)
    rep = hypothesis_report(mu, DensityForm(1, mu, spec.partials[0]), DensityForm(2, mu, spec.partials[1]),
                            [0, 0], radii=[0.2, 0.1, 0.05, 0.025])
    assert rep.failures == ["iv:1"]
    ratios = rep.derivative_ratios[0].ratios
    assert ratios[-1].contains(8 / (3 * math.pi), 0.05)


def test_estimator_rejects_bad_axes():
    with pytest.raises(ValueError):
        schwarz.schwarz_estimator(lebesgue(2), None, None, None, 2, 1, [0, 0], 0.1)
