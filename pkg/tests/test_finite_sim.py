import numpy as np
import pytest

from conftest import ConstantEnv
from mfcontrol.envs import BeachEnv, CyclicToyEnv, EpisodeStreams, TwoGaussiansEnv
from mfcontrol.envs.beach import BeachParams, torus_l1
from mfcontrol.envs.two_gaussians import TwoGaussiansParams
from mfcontrol.errors import CheckpointError
from mfcontrol.finite_sim import discounted_return, evaluate_return, normal_ci, rollout
from mfcontrol.policy import ExecutionMode, FixedRulePolicy, NetworkPolicy, init_params, stay_rule
from mfcontrol.trajectory_io import read_dump


def _toy_policy(env: CyclicToyEnv) -> NetworkPolicy:
    return NetworkPolicy(env, init_params(env, np.random.default_rng(7), hidden=(8,)))


def test_constant_reward_gives_exact_returns(const_env: ConstantEnv) -> None:
    estimate = evaluate_return(const_env, FixedRulePolicy(stay_rule(const_env)), 4, 10, seed=0)

    assert estimate.mean == pytest.approx(5.0)
    assert estimate.ci == pytest.approx(0.0)
    assert estimate.returns.shape == (10,)


def test_evaluate_return_needs_two_episodes(const_env: ConstantEnv) -> None:
    with pytest.raises(ValueError, match="two episodes"):
        evaluate_return(const_env, FixedRulePolicy(stay_rule(const_env)), 4, 1, seed=0)


def test_remainder_episode_is_truncated_and_bootstrapped(const_env: ConstantEnv) -> None:
    batch = rollout(const_env, FixedRulePolicy(stay_rule(const_env)), 3, 12, seed=0)

    assert len(batch) == 12
    assert np.flatnonzero(batch.dones).tolist() == [4, 9]
    assert np.flatnonzero(batch.truncated).tolist() == [11]
    assert batch.bootstrap[11] == 0.0
    assert batch.episode_starts.tolist() == [0, 5, 10]
    assert batch.episode_returns.tolist() == [5.0, 5.0]


def test_rollout_without_bootstrap_requires_whole_episodes(const_env: ConstantEnv) -> None:
    with pytest.raises(ValueError, match="not a multiple"):
        rollout(const_env, FixedRulePolicy(stay_rule(const_env)), 3, 12, seed=0, bootstrap=False)


def test_rollout_rejects_empty_population(const_env: ConstantEnv) -> None:
    with pytest.raises(ValueError, match="at least one"):
        rollout(const_env, FixedRulePolicy(stay_rule(const_env)), 0, 5, seed=0)


def test_rollout_is_reproducible_from_the_seed() -> None:
    env = CyclicToyEnv()
    policy = _toy_policy(env)
    first = rollout(env, policy, 20, 3 * env.spec.episode_len, seed=11)
    second = rollout(env, policy, 20, 3 * env.spec.episode_len, seed=11)
    shifted = rollout(env, policy, 20, 3 * env.spec.episode_len, seed=11, episode_offset=1)

    np.testing.assert_array_equal(first.rewards, second.rewards)
    np.testing.assert_array_equal(first.xi_raw, second.xi_raw)
    # Episode k of the shifted batch is episode k + 1 of the first one.
    n = env.spec.episode_len
    np.testing.assert_array_equal(shifted.rewards[:n], first.rewards[n : 2 * n])


def test_worker_count_does_not_change_the_batch() -> None:
    env = CyclicToyEnv()
    policy = _toy_policy(env)
    serial = rollout(env, policy, 15, 4 * env.spec.episode_len, ExecutionMode.DECENTRALIZED, seed=3)
    threaded = rollout(env, policy, 15, 4 * env.spec.episode_len, ExecutionMode.DECENTRALIZED, seed=3, workers=3)

    np.testing.assert_array_equal(serial.rewards, threaded.rewards)
    np.testing.assert_array_equal(serial.logp, threaded.logp)
    np.testing.assert_array_equal(serial.obs, threaded.obs)


def test_recorded_states_precede_every_step(const_env: ConstantEnv) -> None:
    batch = rollout(const_env, FixedRulePolicy(stay_rule(const_env)), 2, 10, seed=0, record_states=True)

    assert batch.states is not None
    assert [s.t for s in batch.states] == [0, 1, 2, 3, 4] * 2
    assert [s.t for s in batch.final_states] == [5, 5]


def test_dump_preserves_the_batch(tmp_path) -> None:
    env = CyclicToyEnv()
    path = tmp_path / "toy.traj"
    batch = rollout(env, _toy_policy(env), 6, 2 * env.spec.episode_len + 1, seed=9, dump_path=path)
    dump = read_dump(path)

    assert dump.header.env_id == env.spec.env_id
    assert dump.header.n_agents == 6
    np.testing.assert_array_equal(dump.obs, batch.obs)
    np.testing.assert_array_equal(dump.rewards, batch.rewards)
    np.testing.assert_array_equal(dump.dones, batch.dones)
    np.testing.assert_array_equal(dump.truncated, batch.truncated)


def test_read_dump_rejects_foreign_files(tmp_path) -> None:
    path = tmp_path / "not.traj"
    path.write_bytes(b"definitely not a dump")

    with pytest.raises(CheckpointError, match="magic"):
        read_dump(path)
    with pytest.raises(CheckpointError, match="not found"):
        read_dump(tmp_path / "missing.traj")


def test_normal_ci_matches_textbook_formula() -> None:
    mean, ci = normal_ci(np.array([1.0, 2.0, 3.0, 4.0]))

    assert mean == pytest.approx(2.5)
    assert ci == pytest.approx(1.959963984540054 * np.sqrt(5.0 / 3.0) / 2.0)


def test_discounted_return() -> None:
    assert discounted_return(np.array([1.0, 1.0, 1.0]), 0.5) == pytest.approx(1.75)


def test_two_gaussians_rewards_are_recomputable_from_logged_states() -> None:
    env = TwoGaussiansEnv(TwoGaussiansParams(episode_len=5))
    policy = NetworkPolicy(env, init_params(env, np.random.default_rng(2), hidden=(8,)))
    batch = rollout(env, policy, 300, 5, seed=13, record_states=True)

    streams = EpisodeStreams(13, 0)
    offline = [env.reward(state, None, streams) for state in batch.states]
    np.testing.assert_allclose(batch.rewards, offline, rtol=0, atol=1e-12)


@pytest.mark.parametrize("mode", list(ExecutionMode))
def test_permuted_substreams_permute_the_agents(mode: ExecutionMode) -> None:
    env = BeachEnv(BeachParams(episode_len=25))
    policy = NetworkPolicy(env, init_params(env, np.random.default_rng(0), hidden=(8,)))
    order = tuple(range(7, -1, -1))

    base = rollout(env, policy, 8, 25, mode, seed=5, record_states=True)
    permuted = rollout(env, policy, 8, 25, mode, seed=5, record_states=True, agent_order=order)

    np.testing.assert_allclose(permuted.rewards, base.rewards, rtol=0, atol=1e-12)
    np.testing.assert_array_equal(permuted.major, base.major)
    np.testing.assert_allclose(permuted.obs, base.obs, rtol=0, atol=1e-12)
    for left, right in zip(permuted.states, base.states):
        np.testing.assert_array_equal(left.major, right.major)
        np.testing.assert_array_equal(left.minors, right.minors[list(order)])


def test_beach_stay_policy_return_matches_hand_computation() -> None:
    params = BeachParams(target_walk_prob=0.0, episode_len=10)
    env = BeachEnv(params)
    n, seed = 12, 4

    estimate = evaluate_return(env, FixedRulePolicy(stay_rule(env), major_action=0), n, 3, seed=seed)

    expected = []
    for episode in range(3):
        start = env.reset(n, EpisodeStreams(seed, episode))
        bar = start.major[:2]
        _, counts = np.unique(start.minors, axis=0, return_counts=True)
        per_step = (
            -params.target_weight * torus_l1(bar, np.zeros(2), params.size)
            - params.distance_weight * torus_l1(start.minors, bar, params.size).mean()
            - params.crowd_weight * np.sum((counts / n) ** 2)
        )
        expected.append(params.episode_len * per_step)
    np.testing.assert_allclose(estimate.returns, expected, rtol=1e-12)
