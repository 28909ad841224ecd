import itertools

import numpy as np
import pytest

from mfcontrol.errors import SizeMismatchError
from mfcontrol.transport import ot_cost, w1_1d_abs


def _brute_force(a: np.ndarray, b: np.ndarray) -> float:
    a = a.reshape(len(a), -1)
    b = b.reshape(len(b), -1)
    costs = ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=-1)
    n = len(a)
    return min(costs[np.arange(n), list(perm)].sum() / n for perm in itertools.permutations(range(n)))


def test_ot_cost_matches_permutation_oracle() -> None:
    gen = np.random.default_rng(7)
    for trial in range(500):
        n = int(gen.integers(1, 7))
        dim = 1 + trial % 2
        a = gen.normal(size=(n, dim))
        b = gen.normal(size=(n, dim))
        assert ot_cost(a, b) == pytest.approx(_brute_force(a, b), abs=1e-9)


def test_identical_clouds_cost_nothing(gen: np.random.Generator) -> None:
    cloud = gen.normal(size=(20, 2))
    assert ot_cost(cloud, cloud[::-1]) == pytest.approx(0.0, abs=1e-12)


def test_single_point_cost_is_squared_distance() -> None:
    assert ot_cost(np.array([[0.0, 0.0]]), np.array([[3.0, 4.0]])) == pytest.approx(25.0)


def test_ot_cost_is_symmetric(gen: np.random.Generator) -> None:
    a, b = gen.normal(size=(15, 2)), gen.normal(size=(15, 2))
    assert ot_cost(a, b) == pytest.approx(ot_cost(b, a), abs=1e-12)


def test_unequal_sizes_are_rejected() -> None:
    with pytest.raises(SizeMismatchError):
        ot_cost(np.zeros((3, 2)), np.zeros((4, 2)))


def test_w1_abs_on_the_line_sorts_samples() -> None:
    assert w1_1d_abs(np.array([0.0, 2.0]), np.array([3.0, 1.0])) == pytest.approx(1.0)


def test_w1_abs_agrees_with_assignment_under_absolute_cost(gen: np.random.Generator) -> None:
    a, b = gen.normal(size=9), gen.normal(size=9)
    assert w1_1d_abs(a, b) == pytest.approx(ot_cost(a, b, metric="cityblock"), abs=1e-12)
