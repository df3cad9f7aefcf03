import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from superdensity.measures import (Dirac, FrameBounds, MeasureInterval, QuadratureOptions, Restriction, Sum,
                                   WeightedLebesgue, ball_measure, in_support, lebesgue, lebesgue_ball_volume,
                                   measure_of, restricted_ball_measure)
from superdensity.regions import Ball, Box, Complement, HalfSpace, PREDICATES
from superdensity.surfaces import diagonal_chart, surface_measure

OPTS = QuadratureOptions(tol=1e-3)


def _weighted():
    return WeightedLebesgue(2, density=lambda Y: 1.0 + Y[:, 0] ** 2, name="one_plus_x1_squared")


MEASURES = {
    "lebesgue": lambda: lebesgue(2),
    "weighted": _weighted,
    "disk": lambda: Restriction(lebesgue(2), Ball([0, 0], 1)),
    "diagonal": lambda: surface_measure(diagonal_chart(), validate=False),
    "sum": lambda: Sum([lebesgue(2), Dirac([0.1, 0.1])]),
}


@st.composite
def cases(draw):
    name = draw(st.sampled_from(sorted(MEASURES)))
    x = np.array([draw(st.floats(-0.5, 0.5)), draw(st.floats(-0.5, 0.5))])
    if name == "diagonal":
        x[1] = x[0]
    r = draw(st.floats(0.02, 0.5))
    kind = draw(st.sampled_from(["halfspace", "ball", "cusp"]))
    if kind == "halfspace":
        E = HalfSpace([draw(st.floats(-1, 1)), 1.0], draw(st.floats(-0.5, 0.5)))
    elif kind == "ball":
        E = Ball(x + draw(st.floats(-0.3, 0.3)), draw(st.floats(0.05, 0.5)))
    else:
        E = PREDICATES["cusp"](alpha=draw(st.sampled_from([2, 3])))
    return name, MEASURES[name](), x, r, E


@pytest.mark.property
@given(cases())
def test_additivity_intervals_overlap(case):
    _, mu, x, r, E = case
    whole = ball_measure(mu, x, r, opts=OPTS)
    inside = restricted_ball_measure(mu, E, x, r, opts=OPTS)
    outside = restricted_ball_measure(mu, Complement(E), x, r, opts=OPTS)
    assert (inside + outside).overlaps(whole, slack=1e-12)


@pytest.mark.property
@given(cases(), st.floats(0.1, 1.0))
def test_monotone_in_radius(case, shrink):
    _, mu, x, r, _ = case
    small = ball_measure(mu, x, r * shrink, opts=OPTS)
    big = ball_measure(mu, x, r, opts=OPTS)
    assert small.lower <= big.upper + 1e-12


@pytest.mark.property
@given(st.floats(-0.4, 0.4), st.floats(-0.4, 0.4), st.floats(0.01, 0.99))
def test_restriction_agrees_inside(x1, x2, frac):
    U = Ball([0, 0], 1)
    x = np.array([x1, x2])
    r = frac * (1 - np.linalg.norm(x))
    a = ball_measure(Restriction(lebesgue(2), U), x, r, opts=OPTS)
    b = ball_measure(lebesgue(2), x, r, opts=OPTS)
    assert a.overlaps(b, slack=1e-12)


@pytest.mark.parametrize("n", [1, 2, 3])
def test_lebesgue_frame_bound_contains_ball_volume(n):
    rng = np.random.default_rng(n)
    for _ in range(20):
        x = rng.uniform(-1, 1, n)
        r = rng.uniform(0.05, 1.0)
        iv = ball_measure(lebesgue(n), x, r, opts=QuadratureOptions(tol=1e-3))
        assert iv.contains(lebesgue_ball_volume(n, r), 1e-12)


def test_unit_disk_area_is_tight():
    iv = ball_measure(lebesgue(2), [0, 0], 1.0, tol=1e-4)
    assert iv.contains(math.pi) and iv.width <= 1e-3


def test_closed_form_is_exact():
    iv = ball_measure(lebesgue(3), [5, 5, 5], 2.0, closed_form=True)
    assert iv.lower == iv.upper == pytest.approx(4 / 3 * math.pi * 8)


def test_dirac_and_sum():
    d = Dirac([0.0, 0.0])
    assert ball_measure(d, [0.5, 0], 0.6).lower == 1.0
    assert ball_measure(d, [0.5, 0], 0.5).upper == 0.0     # open ball
    s = Sum([d, Dirac([1.0, 0.0])])
    assert ball_measure(s, [0.5, 0], 0.6).lower == 2.0


def test_measure_of_box_and_weight():
    iv = measure_of(_weighted(), Box([0, 0], [1, 1]), tol=1e-4)
    assert iv.contains(4 / 3, 1e-9)


def test_high_dimension_falls_back_to_monte_carlo():
    iv = ball_measure(lebesgue(4), [0, 0, 0, 0], 1.0, tol=1e-2)
    assert "probabilistic" in iv.flags
    assert iv.contains(lebesgue_ball_volume(4, 1.0))
    again = ball_measure(lebesgue(4), [0, 0, 0, 0], 1.0, tol=1e-2)
    assert (iv.lower, iv.upper) == (again.lower, again.upper)


def test_support_probe():
    assert in_support(lebesgue(2), [3, 3], [0.1, 0.01])
    assert not in_support(Dirac([0, 0]), [1, 1], [0.1])


def test_interval_arithmetic():
    a = MeasureInterval(1.0, 2.0)
    b = MeasureInterval(0.5, 1.0)
    q = a.divide(b)
    assert (q.lower, q.upper) == (1.0, 4.0)
    assert (a + b).upper == 3.0
    with pytest.raises(ValueError):
        MeasureInterval(2.0, 1.0)
    with pytest.raises(ZeroDivisionError):
        a.divide(MeasureInterval(0.0, 1.0))


def test_negative_density_is_rejected():
    with pytest.raises(ValueError):
        WeightedLebesgue(2, density=lambda Y: Y[:, 0], box=([-1, -1], [1, 1]))


def test_frame_bounds_validation():
    with pytest.raises(ValueError):
        FrameBounds(0, 2, 2, 1)
    with pytest.raises(ValueError):
        FrameBounds(1, 1, 2, 1).check_dimension(2)
