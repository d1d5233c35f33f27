import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.interpolate import RegularGridInterpolator

from weakkam import GridTorus, TimePoint, ValueField, field_extrema, interpolate, torus_distance
from weakkam.exceptions import ValidationError
from weakkam.grid import (load_field_csv, load_field_json, save_field_csv, save_field_json,
                          sup_distance)

coords = st.floats(min_value=0.0, max_value=0.999999, allow_nan=False)


def test_distance_examples():
    assert torus_distance(0.1, 0.9) == pytest.approx(0.2)
    assert torus_distance([0.0, 0.0], [0.0, 0.0]) == 0.0
    assert torus_distance(0.25, 0.75) == pytest.approx(0.5)


def test_distance_respects_side():
    assert torus_distance(0.5, 6.0, side=2 * np.pi) == pytest.approx(0.5 + 2 * np.pi - 6.0)


@given(st.lists(coords, min_size=3, max_size=3), st.lists(coords, min_size=3, max_size=3),
       st.lists(coords, min_size=3, max_size=3))
def test_distance_is_a_metric_bounded_by_half_diagonal(a, b, c):
    dab = float(torus_distance(a, b))
    assert dab == float(torus_distance(b, a))
    assert dab <= float(torus_distance(a, c)) + float(torus_distance(c, b)) + 1e-12
    assert dab <= np.sqrt(3) / 2 + 1e-12


def test_distance_agrees_with_brute_force_over_lifts(rng):
    a, b = rng.uniform(0, 1, (200, 2)), rng.uniform(0, 1, (200, 2))
    shifts = np.array([[i, j] for i in (-1, 0, 1) for j in (-1, 0, 1)])
    brute = np.min(np.linalg.norm(a[:, None, :] - b[:, None, :] - shifts[None], axis=-1), axis=1)
    np.testing.assert_allclose(torus_distance(a, b), brute, atol=1e-14)


def test_grid_rejects_small_and_bad_inputs():
    with pytest.raises(ValidationError):
        GridTorus(1, 4)
    with pytest.raises(ValidationError):
        GridTorus(4, 16)
    with pytest.raises(ValidationError):
        GridTorus(1, 16, side=-1.0)


def test_index_coordinate_bijection():
    grid = GridTorus(2, 8, side=2.0)
    for i in range(grid.n_nodes):
        assert grid.index_of(grid.point_of(i)) == i
    assert grid.index_of([2.0 + 0.25, -2.0]) == grid.index_of([0.25, 0.0])


def test_time_point_split():
    tp = TimePoint(7.3, 2.0)
    assert tp.fractional == pytest.approx(1.3)
    assert tp.integer_part + tp.fractional == pytest.approx(7.3)
    assert 0 <= TimePoint(-0.5, 1.0).fractional < 1


def test_interpolate_examples():
    grid = GridTorus(1, 8)
    assert interpolate(ValueField.constant(grid, 3.0), 0.377) == pytest.approx(3.0)
    g4 = GridTorus(1, 8)
    vals = np.array([0, 1, 0, 1, 0, 1, 0, 1], float)
    f = ValueField(g4, vals)
    assert interpolate(f, 1 / 16) == pytest.approx(0.5)
    assert interpolate(f, 15 / 16) == pytest.approx(0.5)


def test_interpolate_matches_scipy_with_periodic_padding(rng):
    grid = GridTorus(2, 12)
    vals = rng.normal(size=grid.n_nodes)
    f = ValueField(grid, vals)
    table = vals.reshape(12, 12)
    padded = np.pad(table, ((0, 1), (0, 1)), mode="wrap")
    axis = np.arange(13) / 12
    oracle = RegularGridInterpolator((axis, axis), padded)
    pts = rng.uniform(0, 1, (300, 2))
    np.testing.assert_allclose(interpolate(f, pts), oracle(pts), atol=1e-12)


@settings(max_examples=50)
@given(st.lists(st.floats(-5, 5), min_size=8, max_size=8), st.lists(st.floats(-5, 5), min_size=8, max_size=8),
       coords)
def test_interpolate_bounded_and_non_expansive(u, v, x):
    grid = GridTorus(1, 8)
    fu, fv = ValueField(grid, np.array(u)), ValueField(grid, np.array(v))
    iu, iv = float(interpolate(fu, x)), float(interpolate(fv, x))
    assert min(u) - 1e-12 <= iu <= max(u) + 1e-12
    assert abs(iu - iv) <= np.max(np.abs(np.subtract(u, v))) + 1e-12


def test_interpolate_exact_at_nodes(rng):
    grid = GridTorus(1, 32)
    f = ValueField(grid, rng.normal(size=32))
    np.testing.assert_array_equal(interpolate(f, grid.coordinates()), f.values)


def test_field_extrema_examples():
    grid = GridTorus(1, 8)
    f = ValueField(grid, np.array([2, 0, 5, 0, 1, 1, 1, 5], float))
    lo, argmin, hi, argmax = field_extrema(f)
    assert (lo, hi) == (0, 5)
    assert grid.index_of(argmin) == 1 and grid.index_of(argmax) == 2
    c = field_extrema(ValueField.constant(grid, 4.0))
    assert c[0] == c[2] == 4.0
    cosf = ValueField(grid, np.cos(2 * np.pi * grid.coordinates()[:, 0]))
    lo, argmin, _, _ = field_extrema(cosf)
    assert lo == pytest.approx(-1) and float(np.ravel(argmin)[0]) == pytest.approx(0.5)


def test_field_rejects_nonfinite():
    grid = GridTorus(1, 8)
    with pytest.raises(ValidationError):
        ValueField(grid, np.full(8, np.nan))
    with pytest.raises(ValidationError):
        ValueField(grid, np.zeros(7))


def test_lipschitz_estimate_is_max_edge_slope():
    grid = GridTorus(1, 8)
    vals = np.array([0, 1, 3, 3, 2, 2, 2, 1], float)
    assert ValueField(grid, vals).lipschitz_estimate == pytest.approx(2 * 8)


def test_field_is_immutable():
    f = ValueField.constant(GridTorus(1, 8))
    with pytest.raises(ValueError):
        f.values[0] = 1.0


def test_round_trips(tmp_path, rng):
    grid = GridTorus(2, 8, side=2 * np.pi)
    f = ValueField(grid, rng.normal(size=64), TimePoint(3.25, 2.0))
    save_field_csv(f, tmp_path / "f.csv")
    save_field_json(f, tmp_path / "f.json")
    header = (tmp_path / "f.csv").read_text().splitlines()[0]
    assert header.startswith("# grid d=2 n=8 side=")
    assert set(json.loads((tmp_path / "f.json").read_text())) >= {"grid", "time", "values"}
    for g in (load_field_csv(tmp_path / "f.csv"), load_field_json(tmp_path / "f.json")):
        assert sup_distance(g, f) == 0.0
        assert g.time.raw == 3.25 and g.time.period == 2.0
