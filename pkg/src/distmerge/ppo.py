"""On-policy rollouts, GAE and the clipped-surrogate PPO loss.

A worker round collects ``n_steps`` transitions with the broadcast parameters,
estimates advantages, and returns exactly one gradient together with the
average episodic reward and loss it observed.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from distmerge.nn import MlpSpec, backward, forward_batch, log_softmax, unflatten


@dataclass(frozen=True)
class LossConfig:
    clip_epsilon: float = 0.2
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    gamma: float = 0.99
    gae_lambda: float = 0.95
    normalize_advantages: bool = True
    # rewards are multiplied by this before GAE; reported rewards stay unscaled
    reward_scale: float = 1.0

    def __post_init__(self) -> None:
        if not 0.0 < self.clip_epsilon < 1.0:
            raise ValueError("clip_epsilon must lie in (0, 1)")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")
        if not 0.0 <= self.gae_lambda <= 1.0:
            raise ValueError("gae_lambda must lie in [0, 1]")
        if self.reward_scale <= 0:
            raise ValueError("reward_scale must be positive")


@dataclass(frozen=True)
class RolloutBatch:
    """Parallel per-timestep arrays of one worker's experience.

    ``bootstrap_value`` is V of the observation following the last transition
    (zero when that transition ended an episode). ``advantages`` and
    ``returns`` stay ``None`` until :func:`compute_gae` fills them.
    """

    observations: np.ndarray
    actions: np.ndarray
    old_log_probs: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    dones: np.ndarray
    bootstrap_value: float = 0.0
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None
    episode_returns: tuple[float, ...] = ()
    episodes_started: int = 0
    partial_return: float = 0.0

    def __len__(self) -> int:
        return len(self.actions)


@dataclass(frozen=True)
class AgentReport:
    """What one worker sends back to the server after a round.

    For FedAvg rounds ``params``/``optimizer`` carry the locally trained state
    and ``gradient`` is the first local gradient.
    """

    gradient: np.ndarray
    avg_reward: float
    avg_loss: float
    timesteps: int
    episodes: int = 0
    params: np.ndarray | None = None
    optimizer: object | None = None


def _policy_layers(params: np.ndarray, spec: MlpSpec):
    layers = unflatten(params, spec)
    return layers[:-2], layers[-2]


def collect_rollout(
    params: np.ndarray,
    spec: MlpSpec,
    env,
    n_steps: int,
    rng: np.random.Generator,
    greedy: bool = False,
) -> RolloutBatch:
    """Run the categorical policy for exactly ``n_steps`` transitions.

    The environment is reset at the start and after every finished episode.
    Log-probabilities and values are evaluated in one batched pass over the
    collected observations with the same parameters that chose the actions.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be at least 1")
    trunk, (wp, bp) = _policy_layers(params, spec)
    uniforms = rng.random(n_steps)

    observations = np.empty((n_steps, spec.input_dim))
    actions = np.empty(n_steps, dtype=np.int64)
    rewards = np.empty(n_steps)
    dones = np.zeros(n_steps, dtype=bool)
    episode_returns: list[float] = []
    episodes_started = 1
    running = 0.0

    obs = env.reset()
    for t in range(n_steps):
        observations[t] = obs
        h = obs
        for w, b in trunk:
            h = np.tanh(h @ w + b)
        logits = h @ wp + bp
        if greedy:
            action = int(np.argmax(logits))
        else:
            p = np.exp(logits - logits.max())
            cdf = np.cumsum(p)
            action = min(int(np.searchsorted(cdf, uniforms[t] * cdf[-1], side="right")), len(p) - 1)
        obs, reward, done = env.step(action)
        actions[t] = action
        rewards[t] = reward
        dones[t] = done
        running += reward
        if done:
            episode_returns.append(running)
            running = 0.0
            if t + 1 < n_steps:
                obs = env.reset()
                episodes_started += 1

    logits_all, values = forward_batch(params, spec, observations)
    old_log_probs = log_softmax(logits_all)[np.arange(n_steps), actions]
    bootstrap = 0.0 if dones[-1] else float(forward_batch(params, spec, obs[None, :])[1][0])
    return RolloutBatch(
        observations=observations,
        actions=actions,
        old_log_probs=old_log_probs,
        rewards=rewards,
        values=values,
        dones=dones,
        bootstrap_value=bootstrap,
        episode_returns=tuple(episode_returns),
        episodes_started=episodes_started,
        partial_return=running,
    )


def compute_gae(
    batch: RolloutBatch,
    gamma: float,
    lam: float,
    normalize: bool = True,
    reward_scale: float = 1.0,
) -> RolloutBatch:
    """Generalized advantage estimation.

    ``returns`` are computed from the raw advantages; normalization (zero mean,
    unit variance) is applied to ``advantages`` afterwards when requested.
    """
    n = len(batch.rewards)
    if n == 0:
        raise ValueError("empty batch")
    rewards = np.asarray(batch.rewards, dtype=np.float64) * reward_scale
    values = np.asarray(batch.values, dtype=np.float64)
    not_done = 1.0 - np.asarray(batch.dones, dtype=np.float64)
    if not (np.all(np.isfinite(rewards)) and np.all(np.isfinite(values))):
        raise ValueError("non-finite rewards or values")
    next_values = np.append(values[1:], batch.bootstrap_value)
    deltas = rewards + gamma * next_values * not_done - values
    advantages = np.empty(n)
    running = 0.0
    for t in range(n - 1, -1, -1):
        running = deltas[t] + gamma * lam * not_done[t] * running
        advantages[t] = running
    returns = advantages + values
    if normalize and n > 1:
        advantages = advantages - advantages.mean()
        std = advantages.std()
        if std > 1e-8:
            advantages = advantages / std
    return replace(batch, advantages=advantages, returns=returns)


@dataclass(frozen=True)
class LossParts:
    total: float
    policy: float
    value: float
    entropy: float


def ppo_loss(params: np.ndarray, spec: MlpSpec, batch: RolloutBatch, cfg: LossConfig) -> LossParts:
    """Evaluate the composite loss without gradients.

    ``policy = -mean(min(ratio * A, clip(ratio, 1 - eps, 1 + eps) * A))``,
    ``total = policy + value_coef * MSE(V, returns) - entropy_coef * entropy``.
    """
    if batch.advantages is None or batch.returns is None:
        raise ValueError("batch has no advantages; run compute_gae first")
    arrays = (batch.observations, batch.old_log_probs, batch.advantages, batch.returns)
    if not all(np.all(np.isfinite(a)) for a in arrays):
        raise ValueError("batch contains non-finite values")
    logits, values = forward_batch(params, spec, batch.observations)
    logp = log_softmax(logits)
    taken = logp[np.arange(len(batch.actions)), batch.actions]
    ratio = np.exp(taken - batch.old_log_probs)
    eps = cfg.clip_epsilon
    surrogate = np.minimum(ratio * batch.advantages, np.clip(ratio, 1 - eps, 1 + eps) * batch.advantages)
    policy = -float(np.mean(surrogate))
    value = float(np.mean((values - batch.returns) ** 2))
    entropy = float(np.mean(-(np.exp(logp) * logp).sum(axis=1)))
    total = policy + cfg.value_coef * value - cfg.entropy_coef * entropy
    return LossParts(total, policy, value, entropy)


def prepare_batch(batch: RolloutBatch, cfg: LossConfig) -> RolloutBatch:
    return compute_gae(
        batch, cfg.gamma, cfg.gae_lambda, normalize=cfg.normalize_advantages, reward_scale=cfg.reward_scale
    )


def average_reward(batch: RolloutBatch) -> float:
    """Mean return of completed episodes, or the unfinished return if none completed."""
    if batch.episode_returns:
        return float(np.mean(batch.episode_returns))
    return float(batch.partial_return)


def worker_round(
    params: np.ndarray,
    spec: MlpSpec,
    env,
    cfg: LossConfig,
    n_steps: int,
    rng: np.random.Generator,
) -> AgentReport:
    """Collect one rollout and turn it into a single-gradient report."""
    batch = prepare_batch(collect_rollout(params, spec, env, n_steps, rng), cfg)
    loss, grad = backward(params, spec, batch, cfg)
    return AgentReport(
        gradient=grad,
        avg_reward=average_reward(batch),
        avg_loss=loss,
        timesteps=len(batch),
        episodes=len(batch.episode_returns),
    )
