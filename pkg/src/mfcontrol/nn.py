"""Feed-forward tanh networks with an explicit reverse-mode tape, distribution heads and Adam.

Everything is float64 and batched along the first axis. Parameters of a network live in
one flat array: for every layer the row-major ``(fan_in, fan_out)`` weight matrix followed
by the bias.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator
from scipy.special import log_softmax, softmax

from .errors import (
    DimMismatchError,
    NonFiniteInputError,
    NonPositiveStdError,
    ShapeMismatchError,
    TapeMismatchError,
)

LOG_2PI = float(np.log(2.0 * np.pi))


class MlpSpec(BaseModel):
    """Layer widths of a tanh MLP with a linear output layer."""

    model_config = ConfigDict(frozen=True)

    input_dim: int
    hidden: tuple[int, ...] = (256, 256)
    output_dim: int
    activation: str = "tanh"

    @field_validator("input_dim", "output_dim")
    @classmethod
    def _positive(cls, value: int) -> int:
        if value < 1:
            raise ValueError("Network dimensions must be at least 1")
        return value

    @field_validator("hidden")
    @classmethod
    def _positive_hidden(cls, value: tuple[int, ...]) -> tuple[int, ...]:
        if any(width < 1 for width in value):
            raise ValueError("Hidden layer widths must be at least 1")
        return value

    @field_validator("activation")
    @classmethod
    def _tanh_only(cls, value: str) -> str:
        if value != "tanh":
            raise ValueError("Only tanh activations are supported")
        return value

    def layer_shapes(self) -> list[tuple[int, int]]:
        widths = [self.input_dim, *self.hidden, self.output_dim]
        return list(zip(widths[:-1], widths[1:]))

    @property
    def n_params(self) -> int:
        return sum(fan_in * fan_out + fan_out for fan_in, fan_out in self.layer_shapes())


def unpack(params: np.ndarray, spec: MlpSpec) -> list[tuple[np.ndarray, np.ndarray]]:
    """Views ``(W, b)`` per layer into the flat parameter array."""
    if params.shape != (spec.n_params,):
        raise ShapeMismatchError(f"Expected {spec.n_params} parameters, got shape {params.shape}")
    layers = []
    offset = 0
    for fan_in, fan_out in spec.layer_shapes():
        weights = params[offset : offset + fan_in * fan_out].reshape(fan_in, fan_out)
        offset += fan_in * fan_out
        bias = params[offset : offset + fan_out]
        offset += fan_out
        layers.append((weights, bias))
    return layers


def init_mlp(spec: MlpSpec, gen: np.random.Generator, *, final_scale: float = 1.0) -> np.ndarray:
    """Scaled-uniform initialisation; biases start at zero."""
    params = np.zeros(spec.n_params)
    layers = unpack(params, spec)
    for index, (weights, _) in enumerate(layers):
        fan_in, fan_out = weights.shape
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        scale = final_scale if index == len(layers) - 1 else 1.0
        weights[...] = scale * gen.uniform(-limit, limit, size=weights.shape)
    return params


@dataclass(frozen=True)
class Tape:
    """Everything a backward pass needs from one forward pass."""

    spec: MlpSpec
    params: np.ndarray
    inputs: np.ndarray
    activations: list[np.ndarray]
    squeeze: bool


def forward(params: np.ndarray, spec: MlpSpec, inputs: np.ndarray) -> tuple[np.ndarray, Tape]:
    """Evaluate the network on a vector or a ``(B, input_dim)`` batch."""
    x = np.asarray(inputs, dtype=float)
    squeeze = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != spec.input_dim:
        raise DimMismatchError(f"Network expects input width {spec.input_dim}, got {x.shape[1]}")
    if not np.all(np.isfinite(x)):
        raise NonFiniteInputError("Network input contains NaN or infinite values")

    layers = unpack(params, spec)
    activations = []
    hidden = x
    for weights, bias in layers[:-1]:
        hidden = np.tanh(hidden @ weights + bias)
        activations.append(hidden)
    weights, bias = layers[-1]
    out = hidden @ weights + bias
    tape = Tape(spec=spec, params=params, inputs=x, activations=activations, squeeze=squeeze)
    return (out[0] if squeeze else out), tape


def backward(tape: Tape, grad_out: np.ndarray) -> np.ndarray:
    """Gradient of ``sum(grad_out * output)`` with respect to the flat parameters."""
    g = np.atleast_2d(np.asarray(grad_out, dtype=float))
    expected = (tape.inputs.shape[0], tape.spec.output_dim)
    if g.shape != expected:
        raise TapeMismatchError(f"Output gradient has shape {np.shape(grad_out)}, tape expects {expected}")

    layers = unpack(tape.params, tape.spec)
    grads = np.zeros_like(tape.params)
    grad_layers = unpack(grads, tape.spec)
    layer_inputs = [tape.inputs, *tape.activations]
    for index in range(len(layers) - 1, -1, -1):
        weights, _ = layers[index]
        grad_w, grad_b = grad_layers[index]
        grad_w[...] = layer_inputs[index].T @ g
        grad_b[...] = g.sum(axis=0)
        if index > 0:
            g = (g @ weights.T) * (1.0 - layer_inputs[index] ** 2)
    return grads


# --- distribution heads -----------------------------------------------------------------


class HeadKind(str, Enum):
    NONE = "none"
    CATEGORICAL = "categorical"
    GAUSSIAN = "gaussian"


class HeadConfig(BaseModel):
    """Output layout of the policy network.

    ``[major head params | xi means | xi log-stds]`` where the major head holds ``k``
    logits (categorical) or ``d`` means and ``d`` log-stds (diagonal Gaussian).
    """

    model_config = ConfigDict(frozen=True)

    major_kind: HeadKind = HeadKind.NONE
    major_dim: int = 0
    xi_dim: int

    @property
    def major_param_dim(self) -> int:
        if self.major_kind is HeadKind.CATEGORICAL:
            return self.major_dim
        if self.major_kind is HeadKind.GAUSSIAN:
            return 2 * self.major_dim
        return 0

    @property
    def output_dim(self) -> int:
        return self.major_param_dim + 2 * self.xi_dim


def gaussian_logprob_and_grad(
    mean: np.ndarray, std: np.ndarray, sample: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Diagonal Gaussian log-density summed over the last axis, with its gradients.

    Returns ``(logp, dlogp/dmean, dlogp/dstd)``.
    """
    mean = np.asarray(mean, dtype=float)
    std = np.asarray(std, dtype=float)
    if np.any(std <= 0):
        raise NonPositiveStdError("Gaussian standard deviations must be strictly positive")
    z = (np.asarray(sample, dtype=float) - mean) / std
    logp = (-0.5 * z**2 - np.log(std) - 0.5 * LOG_2PI).sum(axis=-1)
    return logp, z / std, (z**2 - 1.0) / std


def gaussian_kl(
    mean_old: np.ndarray, std_old: np.ndarray, mean_new: np.ndarray, std_new: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``KL(old || new)`` summed over the last axis, with gradients w.r.t. the new parameters."""
    var_new = std_new**2
    sq = std_old**2 + (mean_old - mean_new) ** 2
    kl = (np.log(std_new / std_old) + sq / (2.0 * var_new) - 0.5).sum(axis=-1)
    return kl, (mean_new - mean_old) / var_new, 1.0 / std_new - sq / (std_new * var_new)


def gaussian_entropy(std: np.ndarray) -> np.ndarray:
    return (np.log(std) + 0.5 * (LOG_2PI + 1.0)).sum(axis=-1)


def categorical_probs(logits: np.ndarray) -> np.ndarray:
    return softmax(np.asarray(logits, dtype=float), axis=-1)


def categorical_logprob_and_grad(logits: np.ndarray, index: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Log-probability of ``index`` under softmax(logits) and its gradient w.r.t. the logits."""
    logits = np.atleast_2d(np.asarray(logits, dtype=float))
    idx = np.asarray(index, dtype=np.int64).reshape(-1)
    logp_all = log_softmax(logits, axis=-1)
    rows = np.arange(logits.shape[0])
    grad = -np.exp(logp_all)
    grad[rows, idx] += 1.0
    return logp_all[rows, idx], grad


def categorical_kl(logits_old: np.ndarray, logits_new: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``KL(old || new)`` and its gradient w.r.t. the new logits."""
    logp_old = log_softmax(logits_old, axis=-1)
    logp_new = log_softmax(logits_new, axis=-1)
    p_old = np.exp(logp_old)
    return (p_old * (logp_old - logp_new)).sum(axis=-1), np.exp(logp_new) - p_old


def categorical_entropy(logits: np.ndarray) -> np.ndarray:
    logp = log_softmax(logits, axis=-1)
    return -(np.exp(logp) * logp).sum(axis=-1)


# --- optimizer --------------------------------------------------------------------------


@dataclass
class AdamState:
    """First and second moment estimates plus the step counter."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(m=np.zeros(n), v=np.zeros(n))

    def copy(self) -> "AdamState":
        return AdamState(m=self.m.copy(), v=self.v.copy(), t=self.t)


def adam_step(
    params: np.ndarray,
    grad: np.ndarray,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam descent step; returns new arrays, inputs are untouched."""
    if not (params.shape == grad.shape == state.m.shape == state.v.shape):
        raise ShapeMismatchError(
            f"Adam shapes differ: params {params.shape}, grad {grad.shape}, moments {state.m.shape}"
        )
    t = state.t + 1
    m = beta1 * state.m + (1.0 - beta1) * grad
    v = beta2 * state.v + (1.0 - beta2) * grad**2
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    return params - lr * m_hat / (np.sqrt(v_hat) + eps), AdamState(m=m, v=v, t=t)


# --- parameter container ----------------------------------------------------------------


@dataclass
class PolicyParams:
    """Flat parameters of the policy and value networks plus the head layout."""

    policy_spec: MlpSpec
    value_spec: MlpSpec
    head: HeadConfig
    values: np.ndarray
    steps: int = 0
    layout: dict[str, slice] = field(init=False)

    def __post_init__(self) -> None:
        n_policy = self.policy_spec.n_params
        self.layout = {
            "policy": slice(0, n_policy),
            "value": slice(n_policy, n_policy + self.value_spec.n_params),
        }
        if self.values.shape != (n_policy + self.value_spec.n_params,):
            raise ShapeMismatchError(
                f"Parameter array has shape {self.values.shape}, layout needs "
                f"{n_policy + self.value_spec.n_params}"
            )

    @property
    def policy(self) -> np.ndarray:
        return self.values[self.layout["policy"]]

    @property
    def value(self) -> np.ndarray:
        return self.values[self.layout["value"]]

    def with_values(self, values: np.ndarray) -> "PolicyParams":
        return PolicyParams(self.policy_spec, self.value_spec, self.head, values, steps=self.steps)

    @classmethod
    def initialise(
        cls,
        input_dim: int,
        head: HeadConfig,
        gen: np.random.Generator,
        *,
        hidden: tuple[int, ...] = (256, 256),
    ) -> "PolicyParams":
        """Fresh parameters; the final policy layer is scaled by 0.01."""
        policy_spec = MlpSpec(input_dim=input_dim, hidden=hidden, output_dim=head.output_dim)
        value_spec = MlpSpec(input_dim=input_dim, hidden=hidden, output_dim=1)
        values = np.concatenate(
            [init_mlp(policy_spec, gen, final_scale=0.01), init_mlp(value_spec, gen)]
        )
        return cls(policy_spec, value_spec, head, values)
