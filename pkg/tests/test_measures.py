import numpy as np
import pytest

from mfcontrol.errors import EmptyPointSetError, LengthMismatchError, PointOutOfDomainError, SupportMismatchError
from mfcontrol.measures import BinGrid, FiniteMF, histogram, l1_distance, mean_per_bin


def _unit_square(cells: int = 2) -> BinGrid:
    return BinGrid(lo=(0.0, 0.0), hi=(1.0, 1.0), cells_per_dim=(cells, cells))


def test_histogram_weights_sum_to_one(gen: np.random.Generator) -> None:
    grid = _unit_square(4)
    hist = histogram(gen.random((37, 2)), grid)

    assert hist.weights.shape == (16,)
    assert hist.weights.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(hist.weights >= 0)


def test_upper_boundary_belongs_to_last_cell() -> None:
    grid = _unit_square(2)
    idx = grid.cell_index(np.array([[1.0, 1.0], [0.0, 0.0], [0.5, 0.0]]))

    assert idx.tolist() == [3, 0, 2]


def test_points_within_slack_are_clamped() -> None:
    grid = _unit_square(2)
    assert grid.cell_index(np.array([[1.0 + 1e-12, -1e-12]])).tolist() == [2]


def test_point_outside_domain_is_rejected() -> None:
    with pytest.raises(PointOutOfDomainError) as excinfo:
        _unit_square().cell_index(np.array([[1.5, 0.2]]))
    assert "1.5" in str(excinfo.value)


def test_empty_point_set_is_rejected() -> None:
    with pytest.raises(EmptyPointSetError):
        histogram(np.zeros((0, 2)), _unit_square())


def test_histogram_is_permutation_invariant(gen: np.random.Generator) -> None:
    grid = _unit_square(3)
    points = gen.random((50, 2))
    shuffled = points[gen.permutation(50)]

    np.testing.assert_array_equal(histogram(points, grid).weights, histogram(shuffled, grid).weights)


def test_one_dimensional_grid_accepts_flat_points() -> None:
    grid = BinGrid(lo=(-2.0,), hi=(2.0,), cells_per_dim=(4,))
    hist = histogram(np.array([-2.0, -0.5, 0.5, 1.99]), grid)

    np.testing.assert_allclose(hist.weights, [0.25, 0.25, 0.25, 0.25])


def test_grid_rejects_inverted_bounds() -> None:
    with pytest.raises(ValueError):
        BinGrid(lo=(1.0,), hi=(0.0,), cells_per_dim=(3,))


def test_l1_distance_of_disjoint_deltas_is_two() -> None:
    assert l1_distance(FiniteMF.delta(0, 3), FiniteMF.delta(2, 3)) == pytest.approx(2.0)
    assert l1_distance(FiniteMF.delta(1, 3), FiniteMF.delta(1, 3)) == 0.0


def test_l1_distance_requires_matching_supports() -> None:
    with pytest.raises(SupportMismatchError):
        l1_distance(FiniteMF.delta(0, 2), FiniteMF.delta(0, 3))


def test_from_states_counts_frequencies() -> None:
    mf = FiniteMF.from_states(np.array([0, 0, 2, 1]), 3)
    np.testing.assert_allclose(mf.probs, [0.5, 0.25, 0.25])


def test_mean_per_bin_reads_zero_for_empty_cells() -> None:
    grid = BinGrid(lo=(0.0,), hi=(3.0,), cells_per_dim=(3,))
    means = mean_per_bin(np.array([0.5, 0.7, 2.5]), np.array([1.0, 3.0, 4.0]), grid)

    np.testing.assert_allclose(means, [2.0, 0.0, 4.0])


def test_mean_per_bin_checks_lengths() -> None:
    grid = BinGrid(lo=(0.0,), hi=(3.0,), cells_per_dim=(3,))
    with pytest.raises(LengthMismatchError):
        mean_per_bin(np.array([0.5, 0.7]), np.array([1.0]), grid)
