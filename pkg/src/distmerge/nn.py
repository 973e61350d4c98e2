"""Fully-connected actor-critic network on flat parameter vectors.

The network is a tanh trunk followed by two linear heads: policy logits and a
scalar state value. Every parameter lives in one flat float64 vector so merge
strategies can treat a gradient as a single array. Layer views into that
vector are derived from :class:`MlpSpec`.

Layout of the flat vector, in order: for each trunk layer ``W (fan_in, fan_out)``
then ``b (fan_out,)``; then the policy head ``W, b``; then the value head ``W, b``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:
    from distmerge.ppo import LossConfig, RolloutBatch

# name -> (hidden_layers, hidden_units)
PRESETS: dict[str, tuple[int, int]] = {
    "small": (1, 64),
    "medium": (4, 128),
    "large": (6, 384),
}


@dataclass(frozen=True)
class MlpSpec:
    """Shape of an actor-critic MLP.

    Attributes:
        input_dim: Observation size.
        action_dim: Number of discrete actions.
        hidden_layers: Number of tanh hidden layers in the shared trunk.
        hidden_units: Width of every hidden layer.
        activation: Only ``"tanh"`` is supported.
    """

    input_dim: int
    action_dim: int
    hidden_layers: int = 1
    hidden_units: int = 64
    activation: str = "tanh"

    def __post_init__(self) -> None:
        for name in ("input_dim", "action_dim", "hidden_layers", "hidden_units"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")
        if self.activation != "tanh":
            raise ValueError(f"unsupported activation {self.activation!r}")

    @classmethod
    def preset(cls, name: str, input_dim: int, action_dim: int) -> MlpSpec:
        try:
            layers, units = PRESETS[name]
        except KeyError:
            raise ValueError(f"unknown network preset {name!r}; choose from {sorted(PRESETS)}") from None
        return cls(input_dim=input_dim, action_dim=action_dim, hidden_layers=layers, hidden_units=units)

    def layer_shapes(self) -> list[tuple[int, int]]:
        """(fan_in, fan_out) for every trunk layer, then the policy and value heads."""
        dims = [self.input_dim] + [self.hidden_units] * self.hidden_layers
        shapes = list(zip(dims[:-1], dims[1:]))
        shapes.append((self.hidden_units, self.action_dim))
        shapes.append((self.hidden_units, 1))
        return shapes

    @property
    def num_params(self) -> int:
        return sum((fan_in + 1) * fan_out for fan_in, fan_out in self.layer_shapes())


def unflatten(params: np.ndarray, spec: MlpSpec) -> list[tuple[np.ndarray, np.ndarray]]:
    """Split a flat vector into ``(W, b)`` views, one pair per layer."""
    params = np.asarray(params)
    if params.ndim != 1 or params.shape[0] != spec.num_params:
        raise ValueError(f"expected flat parameter vector of length {spec.num_params}, got shape {params.shape}")
    layers = []
    offset = 0
    for fan_in, fan_out in spec.layer_shapes():
        w = params[offset : offset + fan_in * fan_out].reshape(fan_in, fan_out)
        offset += fan_in * fan_out
        b = params[offset : offset + fan_out]
        offset += fan_out
        layers.append((w, b))
    return layers


def init_params(spec: MlpSpec, seed: int) -> np.ndarray:
    """Deterministic init: weights ~ U(-sqrt(1/fan_in), sqrt(1/fan_in)), biases zero."""
    rng = np.random.default_rng(seed)
    params = np.zeros(spec.num_params)
    for w, _ in unflatten(params, spec):
        bound = np.sqrt(1.0 / w.shape[0])
        w[...] = rng.uniform(-bound, bound, size=w.shape)
    return params


def _trunk(layers, x: np.ndarray) -> list[np.ndarray]:
    activations = [x]
    for w, b in layers[:-2]:
        x = np.tanh(x @ w + b)
        activations.append(x)
    return activations


def forward_batch(params: np.ndarray, spec: MlpSpec, observations: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Batched forward pass.

    Args:
        params: Flat parameter vector.
        spec: Network shape.
        observations: Array of shape ``(n, input_dim)``.

    Returns:
        ``(logits, values)`` with shapes ``(n, action_dim)`` and ``(n,)``.
    """
    obs = np.asarray(observations, dtype=np.float64)
    if obs.ndim != 2 or obs.shape[1] != spec.input_dim:
        raise ValueError(f"observations must have shape (n, {spec.input_dim}), got {obs.shape}")
    layers = unflatten(params, spec)
    hidden = _trunk(layers, obs)[-1]
    (wp, bp), (wv, bv) = layers[-2], layers[-1]
    return hidden @ wp + bp, (hidden @ wv + bv)[:, 0]


def forward(params: np.ndarray, spec: MlpSpec, observation: np.ndarray) -> tuple[np.ndarray, float]:
    """Single-observation forward pass returning ``(action_logits, value)``."""
    obs = np.asarray(observation, dtype=np.float64)
    if obs.shape != (spec.input_dim,):
        raise ValueError(f"observation must have shape ({spec.input_dim},), got {obs.shape}")
    logits, values = forward_batch(params, spec, obs[None, :])
    return logits[0], float(values[0])


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def backward(
    params: np.ndarray, spec: MlpSpec, batch: RolloutBatch, loss_config: LossConfig
) -> tuple[float, np.ndarray]:
    """Composite PPO loss and its exact gradient with respect to ``params``.

    The loss is ``policy + value_coef * MSE(V, returns) - entropy_coef * entropy``
    where the policy term is the negated clipped surrogate, all mean-reduced
    over the batch.

    Returns:
        ``(loss, grad)`` where ``grad`` has the same length as ``params``.
    """
    obs = np.asarray(batch.observations, dtype=np.float64)
    n = obs.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    if obs.ndim != 2 or obs.shape[1] != spec.input_dim:
        raise ValueError(f"observations must have shape (n, {spec.input_dim}), got {obs.shape}")
    if batch.advantages is None or batch.returns is None:
        raise ValueError("batch has no advantages; run compute_gae first")
    actions = np.asarray(batch.actions, dtype=np.int64)
    old_log_probs = np.asarray(batch.old_log_probs, dtype=np.float64)
    advantages = np.asarray(batch.advantages, dtype=np.float64)
    returns = np.asarray(batch.returns, dtype=np.float64)
    for name, arr in (("observations", obs), ("old_log_probs", old_log_probs),
                      ("advantages", advantages), ("returns", returns)):
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"non-finite values in batch {name}")

    eps = loss_config.clip_epsilon
    layers = unflatten(params, spec)
    acts = _trunk(layers, obs)
    hidden = acts[-1]
    (wp, bp), (wv, bv) = layers[-2], layers[-1]
    logits = hidden @ wp + bp
    values = (hidden @ wv + bv)[:, 0]

    logp = log_softmax(logits)
    probs = np.exp(logp)
    rows = np.arange(n)
    ratio = np.exp(logp[rows, actions] - old_log_probs)
    surr1 = ratio * advantages
    surr2 = np.clip(ratio, 1.0 - eps, 1.0 + eps) * advantages
    unclipped = surr1 <= surr2
    policy_loss = -np.mean(np.where(unclipped, surr1, surr2))
    value_err = values - returns
    value_loss = np.mean(value_err**2)
    entropy_each = -(probs * logp).sum(axis=1)
    entropy = np.mean(entropy_each)
    loss = policy_loss + loss_config.value_coef * value_loss - loss_config.entropy_coef * entropy

    # d loss / d logits
    coef = np.where(unclipped, advantages * ratio, 0.0)
    onehot = np.zeros_like(probs)
    onehot[rows, actions] = 1.0
    d_logits = -(coef[:, None] * (onehot - probs)) / n
    d_logits += loss_config.entropy_coef * probs * (logp + entropy_each[:, None]) / n
    d_values = loss_config.value_coef * 2.0 * value_err / n

    grad = np.zeros_like(params, dtype=np.float64)
    grad_layers = unflatten(grad, spec)
    (gwp, gbp), (gwv, gbv) = grad_layers[-2], grad_layers[-1]
    gwp[...] = hidden.T @ d_logits
    gbp[...] = d_logits.sum(axis=0)
    gwv[...] = hidden.T @ d_values[:, None]
    gbv[...] = d_values.sum()
    d_hidden = d_logits @ wp.T + d_values[:, None] @ wv.T

    for idx in range(len(layers) - 3, -1, -1):
        w, _ = layers[idx]
        out = acts[idx + 1]
        d_pre = d_hidden * (1.0 - out**2)
        gw, gb = grad_layers[idx]
        gw[...] = acts[idx].T @ d_pre
        gb[...] = d_pre.sum(axis=0)
        if idx > 0:
            d_hidden = d_pre @ w.T
    return float(loss), grad


@dataclass(frozen=True)
class OptimizerState:
    """Optimizer hyperparameters plus Adam moment estimates.

    ``first_moment``/``second_moment`` are unused by SGD but kept so both kinds
    share one state type.
    """

    kind: str
    learning_rate: float
    first_moment: np.ndarray = field(repr=False)
    second_moment: np.ndarray = field(repr=False)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def create(cls, kind: str, learning_rate: float, size: int, **kwargs) -> OptimizerState:
        if kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer kind {kind!r}")
        if learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        return cls(kind, float(learning_rate), np.zeros(size), np.zeros(size), **kwargs)


def apply_gradient(
    params: np.ndarray, grad: np.ndarray, opt: OptimizerState
) -> tuple[np.ndarray, OptimizerState]:
    """One optimizer step. Inputs are never modified; new arrays are returned."""
    params = np.asarray(params, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if params.shape != grad.shape or params.shape != opt.first_moment.shape:
        raise ValueError(
            f"length mismatch: params {params.shape}, grad {grad.shape}, optimizer {opt.first_moment.shape}"
        )
    step = opt.step + 1
    if opt.kind == "sgd":
        return params - opt.learning_rate * grad, replace(opt, step=step)
    m = opt.beta1 * opt.first_moment + (1.0 - opt.beta1) * grad
    v = opt.beta2 * opt.second_moment + (1.0 - opt.beta2) * grad**2
    m_hat = m / (1.0 - opt.beta1**step)
    v_hat = v / (1.0 - opt.beta2**step)
    new_params = params - opt.learning_rate * m_hat / (np.sqrt(v_hat) + opt.eps)
    return new_params, replace(opt, first_moment=m, second_moment=v, step=step)
