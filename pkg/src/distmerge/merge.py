"""Gradient and parameter aggregation strategies.

All functions are pure. Reductions run as explicit folds in agent order so a
given input list always produces bit-identical output.

Weighted strategies scale each agent's gradient by its share of the round's
(shifted) reward or loss magnitude plus a floor ``1/h``. With ``h`` equal to
the agent count the weights of R/L-weighting sum to 2.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

GLOBAL_KINDS = ("baseline_sum", "baseline_avg", "r_weighted", "l_weighted", "r_softmax", "l_softmax")
ACTOR_KINDS = ("actor_sum", "actor_avg")
WEIGHTED_KINDS = ("r_weighted", "l_weighted", "r_softmax", "l_softmax")
KINDS = GLOBAL_KINDS + ACTOR_KINDS + ("fedavg",)

DEGENERATE_TOTAL = 1e-12


def _stack(vectors: Sequence[np.ndarray], what: str = "gradient") -> list[np.ndarray]:
    if len(vectors) == 0:
        raise ValueError(f"need at least one {what}")
    arrays = [np.asarray(v, dtype=np.float64) for v in vectors]
    shape = arrays[0].shape
    if len(shape) != 1:
        raise ValueError(f"{what}s must be flat vectors")
    for i, a in enumerate(arrays):
        if a.shape != shape:
            raise ValueError(f"{what} {i} has shape {a.shape}, expected {shape}")
    return arrays


def _check_finite(values, what: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError(f"{what} must be a non-empty 1-D sequence")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"non-finite {what}: {arr}")
    return arr


def _check_h(h: float) -> float:
    if not h > 0:
        raise ValueError(f"h must be positive, got {h}")
    return float(h)


def merge_sum(grads: Sequence[np.ndarray]) -> np.ndarray:
    arrays = _stack(grads)
    total = arrays[0].copy()
    for g in arrays[1:]:
        total += g
    return total


def merge_avg(grads: Sequence[np.ndarray]) -> np.ndarray:
    return merge_sum(grads) / len(grads)


def r_weights(rewards: Sequence[float], h: float) -> np.ndarray:
    """Reward weights ``(r_i - min r) / sum_j (r_j - min r) + 1/h``.

    Falls back to ``1/k + 1/h`` for every agent when all rewards are equal.
    """
    r = _check_finite(rewards, "rewards")
    return _share_weights(r - r.min(), _check_h(h))


def l_weights(losses: Sequence[float], h: float, mode: str = "abs") -> np.ndarray:
    """Loss weights ``|l_i| / sum_j |l_j| + 1/h``.

    With ``mode="shift"`` losses are shifted by their minimum, mirroring
    :func:`r_weights`, instead of taking magnitudes.
    """
    losses = _check_finite(losses, "losses")
    if mode == "abs":
        magnitudes = np.abs(losses)
    elif mode == "shift":
        magnitudes = losses - losses.min()
    else:
        raise ValueError(f"unknown loss weighting mode {mode!r}")
    return _share_weights(magnitudes, _check_h(h))


def _share_weights(nonneg: np.ndarray, h: float) -> np.ndarray:
    total = nonneg.sum()
    if total <= DEGENERATE_TOTAL:
        return np.full(len(nonneg), 1.0 / len(nonneg) + 1.0 / h)
    return nonneg / total + 1.0 / h


def softmax_weights(values: Sequence[float], h: float) -> np.ndarray:
    v = _check_finite(values, "values")
    e = np.exp(v - v.max())
    return e / e.sum() + 1.0 / _check_h(h)


def weighted_merge(grads: Sequence[np.ndarray], weights: Sequence[float]) -> np.ndarray:
    arrays = _stack(grads)
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (len(arrays),):
        raise ValueError(f"expected {len(arrays)} weights, got shape {w.shape}")
    total = w[0] * arrays[0]
    for wi, g in zip(w[1:], arrays[1:]):
        total += wi * g
    return total


def actor_merge(grads: Sequence[np.ndarray], mode: str) -> list[np.ndarray]:
    """Per-agent gradients ``collective + own`` where collective is the sum or mean."""
    if mode == "sum":
        collective = merge_sum(grads)
    elif mode == "avg":
        collective = merge_avg(grads)
    else:
        raise ValueError(f"actor merge mode must be 'sum' or 'avg', got {mode!r}")
    return [collective + np.asarray(g, dtype=np.float64) for g in grads]


def fedavg_params(params_list: Sequence[np.ndarray]) -> np.ndarray:
    return merge_sum(_stack(params_list, "parameter vector")) / len(params_list)


@dataclass(frozen=True)
class MergeOutcome:
    """Result of one merge; exactly one of the three fields is set."""

    global_grad: np.ndarray | None = None
    per_agent: list[np.ndarray] | None = None
    params: np.ndarray | None = None
    weights: np.ndarray | None = None

    def __post_init__(self) -> None:
        populated = sum(x is not None for x in (self.global_grad, self.per_agent, self.params))
        if populated != 1:
            raise ValueError("exactly one of global_grad, per_agent, params must be set")


@dataclass(frozen=True)
class MergeStrategy:
    """A named aggregation rule.

    Attributes:
        kind: One of :data:`KINDS`.
        h: Weight floor denominator; ``None`` means "use the agent count".
        loss_mode: ``"abs"`` or ``"shift"`` handling of losses for ``l_weighted``.
    """

    kind: str
    h: float | None = None
    loss_mode: str = "abs"

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown strategy {self.kind!r}; choose from {KINDS}")
        if self.h is not None:
            _check_h(self.h)

    @property
    def per_agent_params(self) -> bool:
        return self.kind in ACTOR_KINDS or self.kind == "fedavg"

    @property
    def weighted(self) -> bool:
        return self.kind in WEIGHTED_KINDS

    def floor_h(self, k: int) -> float:
        return float(k) if self.h is None else float(self.h)

    def weights(self, rewards: Sequence[float], losses: Sequence[float]) -> np.ndarray | None:
        h = self.floor_h(len(rewards))
        if self.kind == "r_weighted":
            return r_weights(rewards, h)
        if self.kind == "l_weighted":
            return l_weights(losses, h, self.loss_mode)
        if self.kind == "r_softmax":
            return softmax_weights(rewards, h)
        if self.kind == "l_softmax":
            return softmax_weights(losses, h)
        return None

    def merge(self, reports) -> MergeOutcome:
        """Merge a worker-ordered list of :class:`~distmerge.ppo.AgentReport`."""
        grads = [r.gradient for r in reports]
        if self.kind == "baseline_sum":
            return MergeOutcome(global_grad=merge_sum(grads))
        if self.kind == "baseline_avg":
            return MergeOutcome(global_grad=merge_avg(grads))
        if self.kind == "actor_sum":
            return MergeOutcome(per_agent=actor_merge(grads, "sum"))
        if self.kind == "actor_avg":
            return MergeOutcome(per_agent=actor_merge(grads, "avg"))
        if self.kind == "fedavg":
            if any(r.params is None for r in reports):
                raise ValueError("fedavg reports must carry locally trained params")
            return MergeOutcome(params=fedavg_params([r.params for r in reports]))
        w = self.weights([r.avg_reward for r in reports], [r.avg_loss for r in reports])
        return MergeOutcome(global_grad=weighted_merge(grads, w), weights=w)
