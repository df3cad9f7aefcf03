import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from superdensity.regions import (INSIDE, OUTSIDE, PREDICATES, Ball, BallUnion, BallUnionIndex, Box, Complement,
                                  DimensionError, Everything, HalfSpace, Intersection, Union, build_ball_union,
                                  region_from_dict)

coord = st.floats(-2, 2, allow_nan=False)


@st.composite
def regions(draw, dim=2):
    kind = draw(st.sampled_from(["ball", "box", "halfspace"]))
    c = np.array(draw(st.lists(coord, min_size=dim, max_size=dim)))
    if kind == "ball":
        return Ball(c, draw(st.floats(0.05, 2)))
    if kind == "box":
        w = np.array(draw(st.lists(st.floats(0.05, 2), min_size=dim, max_size=dim)))
        return Box(c - w, c + w)
    normal = draw(st.lists(st.floats(-1, 1), min_size=dim, max_size=dim).filter(
        lambda v: np.linalg.norm(v) > 0.1))
    return HalfSpace(normal, draw(coord))


@st.composite
def point_sets(draw, dim=2):
    seed = draw(st.integers(0, 2**32 - 1))
    return np.random.default_rng(seed).uniform(-3, 3, (64, dim))


@pytest.mark.property
@given(regions(), regions(), point_sets())
def test_intersection_and_union_are_pointwise(E, F, X):
    e, f = E.contains_many(X), F.contains_many(X)
    assert np.array_equal(Intersection([E, F]).contains_many(X), e & f)
    assert np.array_equal(Union([E, F]).contains_many(X), e | f)


@pytest.mark.property
@given(regions(), regions(), point_sets())
def test_de_morgan(E, F, X):
    lhs = Complement(Union([E, F])).contains_many(X)
    rhs = Intersection([Complement(E), Complement(F)]).contains_many(X)
    assert np.array_equal(lhs, rhs)


@pytest.mark.property
@given(regions(), st.integers(0, 2**32 - 1))
def test_box_verdicts_are_sound(E, seed):
    rng = np.random.default_rng(seed)
    lo = rng.uniform(-3, 3, (32, 2))
    hi = lo + rng.uniform(0.01, 1.0, (32, 2))
    verdict = E.classify(lo, hi)
    for a, b, v in zip(lo, hi, verdict):
        inside = E.contains_many(rng.uniform(a, b, (50, 2)))
        if v == INSIDE:
            assert inside.all()
        elif v == OUTSIDE:
            assert not inside.any()


@pytest.mark.property
@given(st.integers(2, 3), st.integers(1, 200), st.integers(0, 2**32 - 1))
def test_ball_union_index_matches_linear_scan(dim, count, seed):
    rng = np.random.default_rng(seed)
    centers = rng.uniform(-1, 1, (count, dim))
    radii = rng.uniform(1e-3, 0.3, count) ** rng.uniform(1, 2)
    index = BallUnionIndex(centers, radii)
    X = rng.uniform(-1.3, 1.3, (1000, dim))
    assert np.array_equal(index.query(X), index.query_linear(X))


def test_ball_union_boundary_is_open():
    index = build_ball_union([([0.0, 0.0], 1.0)])
    assert not index.query([[1.0, 0.0]])[0]
    assert index.query([[0.999999, 0.0]])[0]


def test_empty_ball_union_needs_dimension():
    with pytest.raises(ValueError):
        BallUnionIndex(np.empty((0, 0)), [])
    assert not BallUnionIndex(np.empty((0, 2)), [], dim=2).query([[0.0, 0.0]])[0]


def test_dimension_mismatch_is_rejected():
    with pytest.raises(DimensionError):
        Intersection([Ball([0, 0], 1), Ball([0, 0, 0], 1)])
    with pytest.raises(DimensionError):
        Ball([0, 0], 1).contains_many([[0, 0, 0]])


def test_halfspace_and_everything():
    H = HalfSpace([2, 0], 2)       # x1 < 1 after normalization
    assert H.contains([0.5, 9])
    assert not H.contains([1.0, 0])
    assert Everything(3).contains([1e9, 0, 0])


@pytest.mark.parametrize("alpha", [2, 3, 4])
def test_cusp_verdicts_match_sampling(alpha):
    cusp = PREDICATES["cusp"](alpha=alpha)
    assert cusp.certified
    rng = np.random.default_rng(alpha)
    lo = rng.uniform(-0.2, 1, (400, 2))
    hi = lo + rng.uniform(1e-3, 0.2, (400, 2))
    for a, b, v in zip(lo, hi, cusp.classify(lo, hi)):
        inside = cusp.contains_many(rng.uniform(a, b, (40, 2)))
        if v == INSIDE:
            assert inside.all()
        if v == OUTSIDE:
            assert not inside.any()


def test_parabola_band_membership():
    band = PREDICATES["parabola_band"]()
    assert band.contains([0.5, 0.25])
    assert band.contains([0.5, 0.25 + 0.0625])
    assert not band.contains([0.5, 0.25 + 0.07])
    assert not band.contains([-0.5, 0.25])


def test_json_round_trip():
    regions_ = [Ball([0, 1], 0.5), Box([0, 0], [1, 2]), HalfSpace([1, 1], 0.3), Everything(2),
                Complement(Union([Ball([0, 0], 1), Box([2, 2], [3, 3])])),
                Intersection([Ball([0, 0], 1), PREDICATES["cusp"](alpha=3)]),
                BallUnion(build_ball_union([([0, 0], 0.1), ([1, 1], 0.2)]))]
    X = np.random.default_rng(3).uniform(-2, 3, (500, 2))
    for R in regions_:
        again = region_from_dict(json.loads(json.dumps(R.to_dict())))
        assert np.array_equal(again.contains_many(X), R.contains_many(X))


def test_unknown_predicate_is_reported():
    with pytest.raises(KeyError, match="unregistered"):
        region_from_dict({"type": "predicate", "name": "nope"})
