from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from superdensity.lattice import (CellId, LatticeSpec, OutOfBoxError, cell_indices, cell_of, exactly_one_violations,
                                  lambda_distribution, level_centers, write_distribution_csv)


@st.composite
def clouds(draw):
    n = draw(st.integers(1, 3))
    R = draw(st.integers(1, 2))
    beta = draw(st.integers(2, 4))
    K = draw(st.integers(1, 4 if n < 3 else 3))
    seed = draw(st.integers(0, 2**32 - 1))
    count = draw(st.integers(1, 300))
    rng = np.random.default_rng(seed)
    S = rng.uniform(-R, R, (count, n))
    if draw(st.booleans()):
        # points on cell faces exercise the exact floor
        S = np.round(S * beta ** 2) / beta ** 2
        S = np.clip(S, -R, R - beta ** -K / 2)
    if draw(st.booleans()):
        S = np.vstack([S, S[: count // 3]])      # duplicates
    return LatticeSpec(n, R, beta, K), S


@pytest.mark.property
@given(clouds())
def test_exactly_one_point_per_occupied_cell(case):
    spec, S = case
    dist = lambda_distribution(S, spec)
    assert exactly_one_violations(dist, S) == []


@pytest.mark.property
@given(clouds())
def test_levels_are_nested_and_counts_bounded(case):
    spec, S = case
    dist = lambda_distribution(S, spec)
    counts = list(dist.counts)
    assert counts == sorted(counts)
    assert counts[-1] <= min(len(np.unique(S, axis=0)), (2 * spec.R * spec.beta ** spec.K) ** spec.n)
    for k in range(1, spec.K):
        small = {tuple(p) for p in dist.prefix(k)}
        big = {tuple(p) for p in dist.prefix(k + 1)}
        assert small <= big
        assert np.array_equal(dist.prefix(k), dist.prefix(k + 1)[: counts[k - 1]])


@pytest.mark.property
@given(clouds(), st.integers(0, 2**32 - 1))
def test_ordering_is_deterministic(case, seed):
    spec, S = case
    a = lambda_distribution(S, spec)
    b = lambda_distribution(S.copy(), spec)
    perm = np.random.default_rng(seed).permutation(len(S))
    c = lambda_distribution(S[perm], spec)
    assert np.array_equal(a.points, b.points)
    assert np.array_equal(a.points, c.points)


@pytest.mark.property
@given(clouds())
def test_child_cells_have_one_parent(case):
    spec, S = case
    for k in range(1, spec.K + 1):
        idx = cell_indices(S, k, spec)
        parent = cell_indices(S, k - 1, spec)
        # exact integer relation between levels
        assert np.array_equal(idx // spec.beta, parent)
        for row, x in zip(idx[:5], S[:5]):
            cell = CellId(k, tuple(int(i) for i in row))
            lo, hi = cell.bounds(spec)
            assert all(a <= Fraction(float(v)) < b for a, b, v in zip(lo, hi, x))
            assert cell.parent(spec) == cell_of(x, k - 1, spec)


def test_face_points_use_exact_floor():
    spec = LatticeSpec(1, 1, 3, 2)
    # the doubles nearest 1/3 and 2/9 sit just below them; naive float scaling rounds up onto the face
    assert (2 / 9) * 9 == 2.0
    assert cell_of([1 / 3], 1, spec).index == (0,)
    assert cell_of([2 / 9], 2, spec).index == (1,)
    assert cell_indices(np.array([[2 / 9], [1 / 3]]), 2, spec)[:, 0].tolist() == [1, 2]


def test_out_of_box_points_are_rejected():
    spec = LatticeSpec(2, 1, 2, 2)
    with pytest.raises(OutOfBoxError):
        lambda_distribution(np.array([[1.0, 0.0]]), spec)
    with pytest.raises(ValueError):
        LatticeSpec(2, 1, 1, 2)


def test_grid_cloud_fills_every_cell():
    spec = LatticeSpec(2, 1, 3, 2)
    S = level_centers(spec, 2)
    dist = lambda_distribution(S, spec)
    assert dist.counts == (36, 324)


def test_distribution_csv(tmp_path):
    spec = LatticeSpec(2, 1, 2, 2)
    S = level_centers(spec, 2)
    dist = lambda_distribution(S, spec)
    write_distribution_csv(tmp_path / "d.csv", dist)
    lines = (tmp_path / "d.csv").read_text().splitlines()
    assert len(lines) == 1 + dist.counts[-1]
