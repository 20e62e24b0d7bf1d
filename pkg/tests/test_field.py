import numpy as np
import pytest
from hypothesis import given, strategies as st

from spreadopt import (
    ConfigurationError,
    FieldGrid,
    ShapeError,
    accumulate,
    as_amount_map,
    cell_centers,
    cost,
    load_map,
    save_map,
)


def test_grid_geometry():
    grid = FieldGrid(150.0, 90)
    assert grid.cell_size == pytest.approx(150.0 / 90)
    assert grid.cell_area == pytest.approx((150.0 / 90) ** 2)


def test_default_field_has_8100_cells():
    centers = cell_centers(FieldGrid(150.0, 90))
    assert centers.shape == (8100, 2)
    assert centers[0] == pytest.approx([150.0 / 180, 150.0 / 180])
    assert (centers > 0.0).all() and (centers < 150.0).all()


def test_single_cell_center_is_the_midpoint():
    assert cell_centers(FieldGrid(2.0, 1)).tolist() == [[1.0, 1.0]]


def test_two_by_two_centers_row_major():
    centers = cell_centers(FieldGrid(2.0, 2))
    assert centers.tolist() == [[0.5, 0.5], [1.5, 0.5], [0.5, 1.5], [1.5, 1.5]]


def test_origin_offsets_every_center():
    base = cell_centers(FieldGrid(30.0, 3))
    moved = cell_centers(FieldGrid(30.0, 3, origin=(7.0, -2.0)))
    assert np.allclose(moved, base + [7.0, -2.0])


def test_rows_index_y_and_columns_index_x():
    grid = FieldGrid(4.0, 4)
    xs, ys = grid.center_mesh()
    assert np.allclose(xs[0], [0.5, 1.5, 2.5, 3.5])  # columns sweep x
    assert np.allclose(ys[:, 0], [0.5, 1.5, 2.5, 3.5])  # rows sweep y


def test_cost_of_matching_maps_is_zero():
    grid = FieldGrid(10.0, 4)
    p = as_amount_map(np.full((4, 4), 3.0), grid)
    assert cost(p, p) == 0.0


def test_cost_of_uniform_shortfall():
    grid = FieldGrid(150.0, 90)
    prescribed = as_amount_map(np.full((90, 90), 20.0), grid)
    assert cost(grid.zeros(), prescribed) == 8100 * 400.0


def test_cost_sums_squared_residuals():
    prescribed = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert cost(np.zeros((2, 2)), prescribed) == 30.0


def test_cost_rejects_mismatched_shapes():
    with pytest.raises(ShapeError):
        cost(np.zeros((2, 2)), np.zeros((3, 3)))


def test_accumulate_identity_and_linearity():
    grid = FieldGrid(10.0, 3)
    deposit = as_amount_map(np.arange(9.0).reshape(3, 3), grid)
    assert np.array_equal(accumulate(grid.zeros(), deposit), deposit)
    total = grid.zeros()
    for _ in range(4):
        total = accumulate(total, deposit)
    assert np.allclose(total, 4.0 * deposit)


def test_accumulate_rejects_mismatched_shapes():
    with pytest.raises(ShapeError):
        accumulate(np.zeros((2, 2)), np.zeros((3, 3)))


def test_amount_map_validation():
    grid = FieldGrid(10.0, 2)
    with pytest.raises(ShapeError):
        as_amount_map(np.zeros((2, 3)), grid)
    with pytest.raises(ShapeError):
        as_amount_map(np.zeros((3, 3)), grid)
    with pytest.raises(ShapeError):
        as_amount_map(np.array([[np.nan, 0.0], [0.0, 0.0]]), grid)
    with pytest.raises(ShapeError):
        as_amount_map(np.full((2, 2), -1.0), grid)


def test_map_file_round_trip(tmp_path):
    grid = FieldGrid(10.0, 5)
    rng = np.random.default_rng(7)
    values = as_amount_map(rng.uniform(0.0, 50.0, (5, 5)), grid)
    path = tmp_path / "a.csv"
    save_map(path, values)
    again = load_map(path, grid)
    assert np.allclose(again, values, rtol=1e-11, atol=0.0)
    # headerless comma-separated rows
    first = path.read_text().splitlines()[0]
    assert len(first.split(",")) == 5
    assert not any(c.isalpha() for c in first)


def test_load_map_checks_grid_size(tmp_path):
    path = tmp_path / "a.csv"
    save_map(path, np.zeros((3, 3)))
    with pytest.raises(ShapeError):
        load_map(path, FieldGrid(10.0, 4))


@given(st.integers(1, 12))
def test_cost_is_nonnegative_and_zero_only_at_match(n):
    rng = np.random.default_rng(n)
    a = rng.uniform(0.0, 10.0, (n, n))
    b = rng.uniform(0.0, 10.0, (n, n))
    value = cost(a, b)
    assert value >= 0.0
    assert (value == 0.0) == bool(np.array_equal(a, b))


def test_grid_validation():
    with pytest.raises(ConfigurationError):
        FieldGrid(0.0, 4)
    with pytest.raises(ConfigurationError):
        FieldGrid(10.0, 0)
