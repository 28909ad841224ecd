from pathlib import Path

import numpy as np
import pytest

from mfcontrol.checkpoint import MAGIC, load_checkpoint, save_checkpoint
from mfcontrol.errors import (
    CheckpointEnvMismatchError,
    CheckpointError,
    DimMismatchError,
    NonFiniteInputError,
    NonPositiveStdError,
    ShapeMismatchError,
    TapeMismatchError,
)
from mfcontrol.nn import (
    AdamState,
    HeadConfig,
    HeadKind,
    MlpSpec,
    PolicyParams,
    adam_step,
    backward,
    categorical_kl,
    categorical_logprob_and_grad,
    forward,
    gaussian_kl,
    gaussian_logprob_and_grad,
    init_mlp,
)


def _net(gen: np.random.Generator) -> tuple[MlpSpec, np.ndarray]:
    spec = MlpSpec(input_dim=4, hidden=(6, 5), output_dim=3)
    return spec, init_mlp(spec, gen)


def test_parameter_count_matches_layer_shapes() -> None:
    spec = MlpSpec(input_dim=4, hidden=(6, 5), output_dim=3)
    assert spec.n_params == 4 * 6 + 6 + 6 * 5 + 5 + 5 * 3 + 3


def test_backward_matches_finite_differences(gen: np.random.Generator) -> None:
    spec, params = _net(gen)
    inputs = gen.normal(size=(7, 4))
    weights = gen.normal(size=(7, 3))

    def objective(p: np.ndarray) -> float:
        return float((forward(p, spec, inputs)[0] * weights).sum())

    _, tape = forward(params, spec, inputs)
    grad = backward(tape, weights)
    h = 1e-5
    for i in gen.choice(spec.n_params, size=30, replace=False):
        step = np.zeros_like(params)
        step[i] = h
        fd = (objective(params + step) - objective(params - step)) / (2 * h)
        assert fd == pytest.approx(grad[i], rel=1e-5, abs=1e-8)


def test_vector_input_gives_vector_output(gen: np.random.Generator) -> None:
    spec, params = _net(gen)
    out, _ = forward(params, spec, np.zeros(4))
    assert out.shape == (3,)


def test_forward_validates_inputs(gen: np.random.Generator) -> None:
    spec, params = _net(gen)
    with pytest.raises(DimMismatchError):
        forward(params, spec, np.zeros((2, 5)))
    with pytest.raises(NonFiniteInputError):
        forward(params, spec, np.array([0.0, np.nan, 0.0, 0.0]))
    with pytest.raises(ShapeMismatchError):
        forward(params[:-1], spec, np.zeros(4))


def test_backward_rejects_wrong_gradient_shape(gen: np.random.Generator) -> None:
    spec, params = _net(gen)
    _, tape = forward(params, spec, np.zeros((2, 4)))
    with pytest.raises(TapeMismatchError):
        backward(tape, np.zeros((3, 3)))


def test_gaussian_logprob_gradients(gen: np.random.Generator) -> None:
    mean, std, sample = gen.normal(size=3), np.exp(gen.normal(size=3)), gen.normal(size=3)
    logp, dmean, dstd = gaussian_logprob_and_grad(mean, std, sample)
    h = 1e-6
    for i in range(3):
        e = np.eye(3)[i] * h
        fd_mean = (gaussian_logprob_and_grad(mean + e, std, sample)[0] - gaussian_logprob_and_grad(mean - e, std, sample)[0]) / (2 * h)
        fd_std = (gaussian_logprob_and_grad(mean, std + e, sample)[0] - gaussian_logprob_and_grad(mean, std - e, sample)[0]) / (2 * h)
        assert fd_mean == pytest.approx(dmean[i], rel=1e-5)
        assert fd_std == pytest.approx(dstd[i], rel=1e-5)
    assert np.isfinite(logp)


def test_gaussian_rejects_non_positive_std() -> None:
    with pytest.raises(NonPositiveStdError):
        gaussian_logprob_and_grad(np.zeros(2), np.array([1.0, 0.0]), np.zeros(2))


def test_kl_of_identical_distributions_is_zero(gen: np.random.Generator) -> None:
    logits = gen.normal(size=(2, 4))
    kl, grad = categorical_kl(logits, logits)
    np.testing.assert_allclose(kl, 0.0, atol=1e-12)
    np.testing.assert_allclose(grad, 0.0, atol=1e-12)

    mean, std = gen.normal(size=3), np.ones(3)
    assert gaussian_kl(mean, std, mean, std)[0] == pytest.approx(0.0, abs=1e-12)


def test_categorical_logprob_gradient_sums_to_zero(gen: np.random.Generator) -> None:
    logp, grad = categorical_logprob_and_grad(gen.normal(size=(3, 5)), np.array([0, 4, 2]))
    assert np.all(logp < 0)
    np.testing.assert_allclose(grad.sum(axis=1), 0.0, atol=1e-12)


def test_adam_first_step_moves_by_learning_rate() -> None:
    params = np.array([1.0, -1.0])
    new, state = adam_step(params, np.array([0.5, -2.0]), AdamState.zeros(2), lr=0.1)

    np.testing.assert_allclose(new, [0.9, -0.9], rtol=1e-6)
    assert state.t == 1
    np.testing.assert_array_equal(params, [1.0, -1.0])


def test_adam_rejects_mismatched_shapes() -> None:
    with pytest.raises(ShapeMismatchError):
        adam_step(np.zeros(3), np.zeros(2), AdamState.zeros(3), lr=0.1)


def _params(gen: np.random.Generator) -> PolicyParams:
    head = HeadConfig(major_kind=HeadKind.CATEGORICAL, major_dim=3, xi_dim=4)
    return PolicyParams.initialise(5, head, gen, hidden=(8,))


def test_policy_params_layout_covers_both_networks(gen: np.random.Generator) -> None:
    params = _params(gen)
    assert params.policy.size == params.policy_spec.n_params
    assert params.value.size == params.value_spec.n_params
    assert params.policy_spec.output_dim == 3 + 2 * 4
    with pytest.raises(ShapeMismatchError):
        PolicyParams(params.policy_spec, params.value_spec, params.head, params.values[:-1])


def test_checkpoint_restores_parameters(tmp_path: Path, gen: np.random.Generator) -> None:
    params = _params(gen)
    params.steps = 4000
    path = save_checkpoint(tmp_path / "ckpt" / "a.ckpt", params, "beach")

    loaded, header = load_checkpoint(path, env_id="beach")

    np.testing.assert_array_equal(loaded.values, params.values)
    assert loaded.head == params.head
    assert header.steps == 4000
    assert path.read_bytes().startswith(MAGIC)


def test_checkpoint_errors(tmp_path: Path, gen: np.random.Generator) -> None:
    path = save_checkpoint(tmp_path / "a.ckpt", _params(gen), "beach")

    with pytest.raises(CheckpointEnvMismatchError):
        load_checkpoint(path, env_id="toy3")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "missing.ckpt")

    truncated = tmp_path / "short.ckpt"
    truncated.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(CheckpointError):
        load_checkpoint(truncated)

    garbage = tmp_path / "garbage.ckpt"
    garbage.write_bytes(b"not a checkpoint")
    with pytest.raises(CheckpointError):
        load_checkpoint(garbage)
