import numpy as np
import pytest

from distmerge.nn import MlpSpec, forward_batch, init_params, log_softmax
from distmerge.ppo import RolloutBatch


def random_batch(spec: MlpSpec, params: np.ndarray, n: int, seed: int, perturb: float = 0.3) -> RolloutBatch:
    """A synthetic batch whose behaviour log-probs come from nearby parameters.

    Ratios then spread around 1 so both clipped and unclipped branches occur.
    """
    rng = np.random.default_rng(seed)
    obs = rng.normal(size=(n, spec.input_dim))
    actions = rng.integers(0, spec.action_dim, size=n)
    old_params = params + perturb * rng.normal(size=params.shape) * np.abs(params).mean()
    old_logits, values = forward_batch(old_params, spec, obs)
    old_log_probs = log_softmax(old_logits)[np.arange(n), actions]
    return RolloutBatch(
        observations=obs,
        actions=actions,
        old_log_probs=old_log_probs,
        rewards=rng.normal(size=n),
        values=values,
        dones=np.zeros(n, dtype=bool),
        advantages=rng.normal(size=n),
        returns=rng.normal(size=n),
    )


@pytest.fixture
def small_spec():
    return MlpSpec.preset("small", 4, 2)


@pytest.fixture
def small_params(small_spec):
    return init_params(small_spec, 7)
