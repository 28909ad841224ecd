import numpy as np
import pytest

from mfcontrol.envs import BeachEnv, CyclicToyEnv, EpisodeStreams, FormationEnv, TwoGaussiansEnv
from mfcontrol.errors import GridMismatchError, ShapeMismatchError
from mfcontrol.measures import BinGrid, MeanFieldHist
from mfcontrol.nn import HeadConfig, HeadKind, MlpSpec, backward, forward, init_mlp
from mfcontrol.policy import (
    RULE_EPS,
    ExecutionMode,
    FixedRulePolicy,
    NetworkPolicy,
    decode_continuous,
    decode_finite,
    encode_obs,
    head_for_env,
    head_kl,
    init_params,
    joint_logprob,
    stay_rule,
)

HEADS = [
    HeadConfig(major_kind=HeadKind.CATEGORICAL, major_dim=3, xi_dim=6),
    HeadConfig(major_kind=HeadKind.GAUSSIAN, major_dim=2, xi_dim=8),
    HeadConfig(major_kind=HeadKind.NONE, xi_dim=5),
]


def _sample_actions(head: HeadConfig, batch: int, gen: np.random.Generator) -> np.ndarray:
    if head.major_kind is HeadKind.CATEGORICAL:
        return gen.integers(0, head.major_dim, size=(batch, 1)).astype(float)
    if head.major_kind is HeadKind.GAUSSIAN:
        return gen.normal(size=(batch, head.major_dim))
    return np.zeros((batch, 0))


@pytest.mark.parametrize("head", HEADS, ids=lambda h: h.major_kind.value)
def test_logprob_gradient_matches_finite_differences(head: HeadConfig) -> None:
    gen = np.random.default_rng(21)
    spec = MlpSpec(input_dim=5, hidden=(7, 7), output_dim=head.output_dim)
    params = init_mlp(spec, gen, final_scale=0.5)
    obs = gen.normal(size=(3, 5))
    major = _sample_actions(head, 3, gen)
    xi_raw = gen.normal(size=(3, head.xi_dim))

    def total_logp(p: np.ndarray) -> float:
        return float(joint_logprob(head, forward(p, spec, obs)[0], major, xi_raw)[0].sum())

    out, tape = forward(params, spec, obs)
    _, dout = joint_logprob(head, out, major, xi_raw)
    grad = backward(tape, dout)
    h = 1e-5
    for i in gen.choice(spec.n_params, size=100, replace=False):
        step = np.zeros_like(params)
        step[i] = h
        fd = (total_logp(params + step) - total_logp(params - step)) / (2 * h)
        assert abs(fd - grad[i]) <= 1e-4 * abs(grad[i]) + 1e-7


@pytest.mark.parametrize("head", HEADS, ids=lambda h: h.major_kind.value)
def test_kl_gradient_matches_finite_differences(head: HeadConfig) -> None:
    gen = np.random.default_rng(5)
    old = 0.3 * gen.normal(size=(2, head.output_dim))
    new = 0.3 * gen.normal(size=(2, head.output_dim))
    kl, grad = head_kl(head, old, new)
    assert np.all(kl >= 0)

    h = 1e-6
    for j in range(head.output_dim):
        step = np.zeros_like(new)
        step[:, j] = h
        fd = (head_kl(head, old, new + step)[0] - head_kl(head, old, new - step)[0]) / (2 * h)
        np.testing.assert_allclose(fd, grad[:, j], rtol=1e-5, atol=1e-8)


def test_decode_finite_rows_are_distributions() -> None:
    xi = np.array([[1.0, -1.0, 0.0], [-1.0, -1.0, -1.0]])
    rule = decode_finite(xi)

    np.testing.assert_allclose(rule.sum(axis=1), 1.0)
    np.testing.assert_allclose(rule[1], 1.0 / 3.0)
    assert rule[0, 1] == pytest.approx(RULE_EPS / (3.0 + 3 * RULE_EPS))


def test_decode_finite_is_positive_and_normalised_on_the_whole_box(gen: np.random.Generator) -> None:
    xi = gen.uniform(-1.0, 1.0, size=(500, 25, 5))
    xi[:50] = -1.0
    xi[50:100, :, 0] = 1.0
    rule = decode_finite(xi)

    assert (rule > 0.0).all()
    np.testing.assert_allclose(rule.sum(axis=-1), 1.0, rtol=0, atol=1e-12)


def test_decode_finite_permutes_with_the_action_columns(gen: np.random.Generator) -> None:
    xi = gen.uniform(-1.0, 1.0, size=(25, 5))
    for _ in range(20):
        perm = gen.permutation(5)
        np.testing.assert_allclose(decode_finite(xi[:, perm]), decode_finite(xi)[:, perm], rtol=1e-12, atol=0)


def test_decode_continuous_maps_into_action_box() -> None:
    space = FormationEnv().spec.minor_action_space
    xi = np.stack([-np.ones((4, 2, 2)), np.ones((4, 2, 2))]).reshape(2, -1)
    low, high = decode_continuous(xi[0], space, 4), decode_continuous(xi[1], space, 4)

    np.testing.assert_allclose(low.means, -1.0)
    np.testing.assert_allclose(high.means, 1.0)
    np.testing.assert_allclose(low.stds, RULE_EPS)
    np.testing.assert_allclose(high.stds, 0.25 + RULE_EPS)


def test_head_layout_follows_the_environment() -> None:
    beach = head_for_env(BeachEnv())
    two_g = head_for_env(TwoGaussiansEnv())

    assert (beach.major_kind, beach.major_dim, beach.xi_dim) == (HeadKind.CATEGORICAL, 5, 25 * 5)
    assert (two_g.major_kind, two_g.xi_dim) == (HeadKind.NONE, 49 * 2 * 2)


def test_encode_obs_rejects_foreign_histogram() -> None:
    env = CyclicToyEnv()
    state = env.reset(4, EpisodeStreams(0, 0))
    other = MeanFieldHist(grid=BinGrid(lo=(0.0,), hi=(1.0,), cells_per_dim=(2,)), weights=np.array([0.5, 0.5]))

    assert encode_obs(env, state).shape == (env.spec.obs_dim,)
    with pytest.raises(GridMismatchError):
        encode_obs(env, state, hist=other)


def test_network_policy_rejects_parameters_of_another_env() -> None:
    params = init_params(BeachEnv(), np.random.default_rng(0), hidden=(4,))
    with pytest.raises(ShapeMismatchError):
        NetworkPolicy(CyclicToyEnv(), params)


def test_decision_records_consistent_log_probability() -> None:
    env = CyclicToyEnv()
    params = init_params(env, np.random.default_rng(0), hidden=(8,))
    policy = NetworkPolicy(env, params)
    state = env.reset(6, EpisodeStreams(0, 0))
    decision = policy.decide(env, state, EpisodeStreams(0, 0), ExecutionMode.CENTRALIZED)

    logp, _ = joint_logprob(params.head, decision.dist_inputs, decision.major, decision.xi_raw)
    assert logp[0] == pytest.approx(decision.logp, abs=1e-10)
    assert decision.minor_actions.shape == (6,)
    assert decision.obs.shape == (env.spec.obs_dim,)


def test_modes_coincide_for_a_single_agent() -> None:
    env = BeachEnv()
    policy = NetworkPolicy(env, init_params(env, np.random.default_rng(1), hidden=(8,)))
    state = env.reset(1, EpisodeStreams(3, 0))
    central = policy.decide(env, state, EpisodeStreams(3, 0), ExecutionMode.CENTRALIZED)
    decentral = policy.decide(env, state, EpisodeStreams(3, 0), ExecutionMode.DECENTRALIZED)

    np.testing.assert_array_equal(central.minor_actions, decentral.minor_actions)


def test_modes_coincide_for_deterministic_heads() -> None:
    env = TwoGaussiansEnv()
    policy = NetworkPolicy(env, init_params(env, np.random.default_rng(1), hidden=(8,)))
    state = env.reset(12, EpisodeStreams(3, 0))
    central = policy.decide(env, state, EpisodeStreams(3, 0), ExecutionMode.CENTRALIZED, deterministic=True)
    decentral = policy.decide(env, state, EpisodeStreams(3, 0), ExecutionMode.DECENTRALIZED, deterministic=True)

    np.testing.assert_array_equal(central.minor_actions, decentral.minor_actions)


def test_stay_rule_keeps_every_agent_in_place() -> None:
    env = CyclicToyEnv()
    streams = EpisodeStreams(0, 0)
    state = env.reset(10, streams)
    decision = FixedRulePolicy(stay_rule(env)).decide(env, state, streams, ExecutionMode.CENTRALIZED)

    assert decision.minor_actions.tolist() == [0] * 10
