import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from superdensity import density
from superdensity.density import (DegreeParams, DensityProfile, base_statistic, classify_point,
                                  estimate_density_degree, geometric_radii, ratio_profile, superdensity_test)
from superdensity.measures import MeasureInterval, QuadratureOptions, lebesgue
from superdensity.regions import PREDICATES, Ball, Box, HalfSpace, Intersection, Union

OPTS = QuadratureOptions(tol=1e-3, closed_form=True)
RADII = [0.3, 0.1]


def synthetic_profile(slope, scale, noise, seed, count=16):
    radii = geometric_radii(0.5, 0.7, count)
    rng = np.random.default_rng(seed)
    ratios = []
    for r in radii:
        v = min(1.0, scale * r ** slope * math.exp(noise * rng.standard_normal()))
        ratios.append(MeasureInterval(0.99 * v, min(1.0, 1.01 * v), v))
    return DensityProfile((0.0, 0.0), tuple(radii), tuple(ratios), (frozenset(),) * count, 2)


@st.composite
def regions(draw):
    kind = draw(st.sampled_from(["halfspace", "ball", "cusp"]))
    if kind == "halfspace":
        return HalfSpace([draw(st.floats(-1, 1)), 1.0], draw(st.floats(-0.3, 0.3)))
    if kind == "ball":
        return Ball([draw(st.floats(-0.5, 0.5)), draw(st.floats(-0.5, 0.5))], draw(st.floats(0.1, 0.8)))
    return PREDICATES["cusp_complement"](alpha=draw(st.sampled_from([2, 3])))


points = st.tuples(st.floats(-0.3, 0.3), st.floats(-0.3, 0.3))


@pytest.mark.property
@given(st.floats(0.0, 4.0), st.floats(0.05, 5.0), st.floats(0, 0.3), st.integers(0, 1000),
       st.floats(0, 4), st.floats(0, 4))
def test_superdensity_is_monotone_in_h(slope, scale, noise, seed, h1, h2):
    h1, h2 = sorted((h1, h2))
    prof = synthetic_profile(slope, scale, noise, seed)
    if superdensity_test(prof, h2) == density.PASS:
        assert superdensity_test(prof, h1) == density.PASS


@pytest.mark.property
@given(regions(), regions(), points)
def test_complement_ratio_of_intersection_is_sandwiched(E, F, x):
    both = ratio_profile(lebesgue(2), Intersection([E, F]), x, RADII, tol=1e-3, opts=OPTS)
    pe = ratio_profile(lebesgue(2), E, x, RADII, tol=1e-3, opts=OPTS)
    pf = ratio_profile(lebesgue(2), F, x, RADII, tol=1e-3, opts=OPTS)
    for b, e, f in zip(both.ratio, pe.ratio, pf.ratio):
        slack = b.width + e.width + f.width + 1e-12
        assert max(e.lower, f.lower) <= b.upper + slack
        assert b.lower <= e.upper + f.upper + slack


@pytest.mark.property
@given(regions(), regions(), points, st.floats(0, 2))
def test_base_statistic_of_union_is_sandwiched(A, B, x, h):
    sa = base_statistic(lebesgue(2), A, x, h, RADII, tol=1e-3, opts=OPTS)
    sb = base_statistic(lebesgue(2), B, x, h, RADII, tol=1e-3, opts=OPTS)
    su = base_statistic(lebesgue(2), Union([A, B]), x, h, RADII, tol=1e-3, opts=OPTS)
    for a, b, u in zip(sa.s, sb.s, su.s):
        slack = a.width + b.width + u.width + 1e-12
        assert max(a.lower, b.lower) <= u.upper + slack
        assert u.lower <= a.upper + b.upper + slack


@pytest.mark.property
@given(st.sampled_from(["ball", "box"]), points, st.floats(0, 3))
def test_open_sets_are_in_their_base(kind, x, h):
    A = Ball([0, 0], 0.6) if kind == "ball" else Box([-0.5, -0.5], [0.5, 0.5])
    depth = A.distance_to_complement(np.array([x]))[0]
    assume(depth > 1e-3)
    radii = [depth * 0.9, depth * 0.5, depth * 0.1]
    st_ = base_statistic(lebesgue(2), A, x, h, radii, tol=1e-3, opts=OPTS)
    assert st_.verdict == density.MEMBER
    for r, s in zip(radii, st_.s):
        assert s.contains(r ** -h, 1e-9 * r ** -h)


@pytest.mark.parametrize("alpha", [2, 3, 4])
def test_cusp_degree_matches_area_formula(alpha):
    E = PREDICATES["cusp_complement"](alpha=alpha)
    radii = geometric_radii(0.5, 0.7, 16)
    prof = ratio_profile(lebesgue(2), E, [0, 0], radii)
    est = estimate_density_degree(prof)
    assert est.classification == density.FINITE
    assert abs(est.value - (alpha - 1)) <= 0.15
    # analytic ratio r^(alpha-1) / ((alpha+1) pi) up to the r^alpha tail
    for r, iv in zip(radii[-4:], prof.ratio[-4:]):
        exact = r ** (alpha - 1) / ((alpha + 1) * math.pi)
        assert iv.contains(exact, 0.05 * exact)


def test_halfplane_is_not_a_density_point():
    est = estimate_density_degree(ratio_profile(lebesgue(2), HalfSpace([1, 0]), [0, 0], geometric_radii(0.5, 0.7, 8)))
    assert est.classification == density.NOT_DENSITY
    assert est.value == -2
    assert classify_point(est, 0.0) == density.EXTERIOR


def test_interior_point():
    est = estimate_density_degree(ratio_profile(lebesgue(2), Ball([0, 0], 1), [0, 0], geometric_radii(0.5, 0.7, 8)))
    assert est.classification == density.INTERIOR_POINT
    assert est.value == math.inf
    assert classify_point(est, 5.0) == density.INTERIOR


def test_thresholds_are_reported():
    est = estimate_density_degree(synthetic_profile(1.5, 1.0, 0.0, 0), DegreeParams(margin=0.2))
    assert est.thresholds["margin"] == 0.2
    assert est.slope == pytest.approx(1.5, abs=1e-3)
    assert classify_point(est, 1.5) == density.BOUNDARY


def test_too_few_usable_radii():
    with pytest.raises(density.InsufficientDataError):
        estimate_density_degree(synthetic_profile(1.0, 1.0, 0.0, 0, count=3))


def test_radii_validation():
    with pytest.raises(ValueError):
        ratio_profile(lebesgue(2), Ball([0, 0], 1), [0, 0], [0.1, 0.2])
    with pytest.raises(ValueError):
        superdensity_test(synthetic_profile(1, 1, 0, 0), -1)


def test_profiles_csv(tmp_path):
    prof = synthetic_profile(1.0, 1.0, 0.0, 0)
    density.write_profiles_csv(tmp_path / "p.csv", [prof])
    density.write_estimates_csv(tmp_path / "e.csv", [estimate_density_degree(prof)])
    assert (tmp_path / "p.csv").read_text().count("\n") == 17
