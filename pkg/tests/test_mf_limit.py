import csv

import numpy as np
import pytest

from conftest import ConstantEnv
from mfcontrol.envs import CyclicToyEnv
from mfcontrol.errors import MeshTooLargeError, RowNotNormalizedError
from mfcontrol.measures import FiniteMF
from mfcontrol.mf_limit import (
    GreedyController,
    SimplexGrid,
    allocate_agents,
    deterministic_rules,
    export_value_table,
    greedy_policy,
    lln_gap,
    mf_step,
    simulate_discounted,
    value_iteration,
)

FLIP = np.array([[0.0, 1.0], [0.0, 1.0]])


class ExactConstantEnv(ConstantEnv):
    """Constant-reward model with a single uncontrolled major state."""

    n_major_states = 1
    n_major_actions = 1

    def major_transition(self) -> np.ndarray:
        return np.ones((1, 1, 1))

    def major_from_index(self, index: int) -> np.ndarray:
        return np.array([0.0])

    def major_index(self, major: np.ndarray) -> int:
        return 0

    def reward_mf(self, major: np.ndarray, mu: np.ndarray) -> float:
        return self.reward_value


def test_mf_step_moves_mass_along_the_rule(const_env: ConstantEnv) -> None:
    mu = FiniteMF(probs=np.array([0.7, 0.3]))
    nxt = mf_step(const_env, np.array([0.0]), 0, mu, FLIP)

    np.testing.assert_allclose(nxt.probs, [0.3, 0.7])


def test_mf_step_rejects_unnormalized_rule(const_env: ConstantEnv) -> None:
    with pytest.raises(RowNotNormalizedError):
        mf_step(const_env, np.array([0.0]), 0, FiniteMF(probs=np.array([0.5, 0.5])), np.array([[0.5, 0.4], [0, 1]]))


def test_allocate_agents_uses_largest_remainders() -> None:
    mu = FiniteMF(probs=np.array([0.5, 0.25, 0.25]))

    assert allocate_agents(mu, 3).tolist() == [1, 1, 1]
    assert allocate_agents(mu, 4).tolist() == [2, 1, 1]
    assert allocate_agents(mu, 1).tolist() == [1, 0, 0]


def test_lln_gap_vanishes_for_deterministic_dynamics(const_env: ConstantEnv, gen: np.random.Generator) -> None:
    mu = FiniteMF(probs=np.array([0.25, 0.75]))

    assert lln_gap(const_env, np.array([0.0]), 0, mu, FLIP, 8, gen) == pytest.approx(0.0)
    with pytest.raises(ValueError):
        lln_gap(const_env, np.array([0.0]), 0, mu, FLIP, 0, gen)


def test_lln_gap_is_positive_for_random_moves(gen: np.random.Generator) -> None:
    coin = np.full((2, 1, 2), 0.5)
    mu = FiniteMF(probs=np.array([1.0, 0.0]))
    gaps = [lln_gap(coin, np.zeros(1), None, mu, np.ones((2, 1)), 101, gen) for _ in range(20)]

    assert min(gaps) > 0.0
    assert max(gaps) <= 2.0


def test_simplex_grid_enumerates_every_node() -> None:
    grid = SimplexGrid(3, 20)

    assert grid.n_nodes == SimplexGrid.size_for(3, 20) == 231
    np.testing.assert_allclose(grid.nodes.sum(axis=1), 1.0)
    assert grid.nearest(grid.nodes[17]).tolist() == [17]
    assert grid.nearest(np.array([0.33, 0.33, 0.34])).shape == (1,)


def test_deterministic_rules_are_one_hot() -> None:
    rules = deterministic_rules(3, 2)

    assert rules.shape == (8, 3, 2)
    np.testing.assert_array_equal(rules.sum(axis=2), 1.0)
    assert len({r.tobytes() for r in rules}) == 8


def test_value_iteration_on_constant_reward_is_geometric_sum() -> None:
    env = ExactConstantEnv(reward_value=2.0)
    table = value_iteration(env, SimplexGrid(2, 4), gamma=0.9, tol=1e-10)

    np.testing.assert_allclose(table.values, 20.0, atol=1e-8)
    assert table.residuals[-1] <= 1e-10
    assert all(b <= a + 1e-15 for a, b in zip(table.residuals, table.residuals[1:]))


def test_greedy_breaks_ties_towards_lowest_action() -> None:
    env = ExactConstantEnv()
    table = value_iteration(env, SimplexGrid(2, 4), gamma=0.5)
    policy = greedy_policy(table, env)

    assert np.all(policy.actions == 0)


def test_mesh_cap_is_enforced() -> None:
    with pytest.raises(MeshTooLargeError):
        value_iteration(CyclicToyEnv(), SimplexGrid(3, 20), max_mesh=1000)


def test_value_iteration_rejects_bad_discount() -> None:
    with pytest.raises(ValueError, match="gamma"):
        value_iteration(CyclicToyEnv(), SimplexGrid(3, 2), gamma=1.0)


def test_greedy_policy_reproduces_values_in_finite_system() -> None:
    # Without slip and with one-hot rules, mass moves cell by cell, so populations
    # that are multiples of the resolution stay exactly on the grid.
    env = CyclicToyEnv()
    grid = SimplexGrid(3, 6)
    table = value_iteration(env, grid, gamma=0.9, tol=1e-12)
    controller = GreedyController(env, greedy_policy(table, env))

    for node in (0, 7, grid.n_nodes - 1):
        mu = FiniteMF(probs=grid.nodes[node])
        estimate = simulate_discounted(
            env, controller, env, 1, mu, 60, gamma=0.9, steps=400, episodes=2, seed=0
        )
        assert estimate.mean == pytest.approx(table.values[1, node], abs=1e-8)
        assert estimate.ci == pytest.approx(0.0, abs=1e-12)


def test_export_value_table_writes_one_row_per_state(tmp_path) -> None:
    env = CyclicToyEnv()
    table = value_iteration(env, SimplexGrid(3, 4), gamma=0.5, tol=1e-6)
    path = export_value_table(table, tmp_path / "values.csv")

    with path.open(encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["major_state", "w0", "w1", "w2", "value"]
    assert len(rows) == 1 + 3 * 15
    assert float(rows[1][-1]) == table.values[0, 0]


def test_mf_step_matches_summation_over_beach_kernel(gen: np.random.Generator) -> None:
    from mfcontrol.envs import BeachEnv

    env = BeachEnv()
    mu = FiniteMF(probs=gen.dirichlet(np.ones(env.n_states)))
    rule = gen.dirichlet(np.ones(env.n_actions), size=env.n_states)
    major = np.array([2.0, 3.0, 1.0, 1.0])
    kernel = env.minor_kernel(major, 1, mu.probs)

    expected = np.zeros(env.n_states)
    for x in range(env.n_states):
        for u in range(env.n_actions):
            for y in range(env.n_states):
                expected[y] += mu.probs[x] * rule[x, u] * kernel[x, u, y]
    np.testing.assert_allclose(mf_step(env, major, 1, mu, rule).probs, expected, rtol=0, atol=1e-14)
