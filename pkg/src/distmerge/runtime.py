"""Synchronous parameter-server training.

Each round the server broadcasts parameters, every worker returns one report,
and the server merges the reports in worker-id order and updates. Workers are
stateless between rounds: their environment and sampling streams are derived
from ``(seed_base, run_id, worker_id, round)``, so a round can be executed by
any process and still reproduce bit-for-bit.
"""

from __future__ import annotations

import base64
import json
import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Sequence

import numpy as np

from distmerge.config import ExperimentConfig
from distmerge.merge import MergeStrategy
from distmerge.metrics import ema_update
from distmerge.nn import MlpSpec, OptimizerState, apply_gradient, backward, init_params
from distmerge.ppo import AgentReport, LossConfig, RolloutBatch, worker_round

log = logging.getLogger(__name__)


class RoundAborted(ValueError):
    """Reports for a round were missing, duplicated or stale; the state is unchanged."""


class TrainingAborted(RuntimeError):
    """A worker failed; ``records`` holds every round completed before the failure."""

    def __init__(self, message: str, records: list[RoundRecord]):
        super().__init__(message)
        self.records = records


def _encode_array(arr: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(arr, dtype="<f8").tobytes()).decode("ascii")


def _decode_array(text: str) -> np.ndarray:
    return np.frombuffer(base64.b64decode(text), dtype="<f8").copy()


@dataclass(frozen=True)
class ParamsMessage:
    """Server to worker: parameters to roll out with for ``round``."""

    round: int
    worker_id: int
    params: np.ndarray
    optimizer: OptimizerState | None = None

    def to_json(self) -> str:
        body = {"type": "params", "round": self.round, "worker_id": self.worker_id,
                "params": _encode_array(self.params)}
        if self.optimizer is not None:
            body["optimizer"] = _optimizer_to_dict(self.optimizer)
        return json.dumps(body)


@dataclass(frozen=True)
class ReportMessage:
    """Worker to server: the worker's report for ``round``."""

    round: int
    worker_id: int
    report: AgentReport

    def to_json(self) -> str:
        r = self.report
        body = {
            "type": "report", "round": self.round, "worker_id": self.worker_id,
            "gradient": _encode_array(r.gradient), "avg_reward": r.avg_reward,
            "avg_loss": r.avg_loss, "timesteps": r.timesteps, "episodes": r.episodes,
        }
        if r.params is not None:
            body["params"] = _encode_array(r.params)
        if r.optimizer is not None:
            body["optimizer"] = _optimizer_to_dict(r.optimizer)
        return json.dumps(body)


def _optimizer_to_dict(opt: OptimizerState) -> dict:
    return {"kind": opt.kind, "learning_rate": opt.learning_rate, "step": opt.step,
            "beta1": opt.beta1, "beta2": opt.beta2, "eps": opt.eps,
            "first_moment": _encode_array(opt.first_moment),
            "second_moment": _encode_array(opt.second_moment)}


def _optimizer_from_dict(d: dict) -> OptimizerState:
    return OptimizerState(d["kind"], d["learning_rate"], _decode_array(d["first_moment"]),
                          _decode_array(d["second_moment"]), d["step"], d["beta1"], d["beta2"], d["eps"])


def message_from_json(text: str) -> ParamsMessage | ReportMessage:
    """Inverse of ``to_json`` for both message kinds."""
    d = json.loads(text)
    opt = _optimizer_from_dict(d["optimizer"]) if "optimizer" in d else None
    if d["type"] == "params":
        return ParamsMessage(d["round"], d["worker_id"], _decode_array(d["params"]), opt)
    if d["type"] == "report":
        report = AgentReport(
            gradient=_decode_array(d["gradient"]), avg_reward=d["avg_reward"], avg_loss=d["avg_loss"],
            timesteps=d["timesteps"], episodes=d["episodes"],
            params=_decode_array(d["params"]) if "params" in d else None, optimizer=opt,
        )
        return ReportMessage(d["round"], d["worker_id"], report)
    raise ValueError(f"unknown message type {d['type']!r}")


@dataclass(frozen=True)
class ServerState:
    """Canonical training state held by the parameter server.

    Actor strategies keep ``k`` parameter replicas and ``k`` optimizers. FedAvg
    keeps one parameter vector and ``k`` worker-local optimizers. Every other
    strategy keeps one of each.
    """

    params: tuple[np.ndarray, ...]
    optimizers: tuple[OptimizerState, ...]
    round: int
    strategy: MergeStrategy
    k: int

    @classmethod
    def initial(
        cls, params: np.ndarray, optimizer: OptimizerState, strategy: MergeStrategy, k: int
    ) -> ServerState:
        if k < 1:
            raise ValueError("k must be at least 1")
        n_params = k if strategy.kind in ("actor_sum", "actor_avg") else 1
        n_opt = k if strategy.per_agent_params else 1
        return cls(
            params=tuple(params.copy() for _ in range(n_params)),
            optimizers=(optimizer,) * n_opt,
            round=0,
            strategy=strategy,
            k=k,
        )

    def params_for(self, worker_id: int) -> np.ndarray:
        return self.params[worker_id] if len(self.params) > 1 else self.params[0]

    def broadcast(self) -> list[ParamsMessage]:
        fedavg = self.strategy.kind == "fedavg"
        return [
            ParamsMessage(self.round, i, self.params_for(i), self.optimizers[i] if fedavg else None)
            for i in range(self.k)
        ]


@dataclass(frozen=True)
class RoundInfo:
    weights: np.ndarray | None
    grad_norm: float


def _ordered_reports(state: ServerState, messages: Sequence[ReportMessage]) -> list[ReportMessage]:
    if len(messages) != state.k:
        raise RoundAborted(f"expected {state.k} reports, got {len(messages)}")
    by_id: dict[int, ReportMessage] = {}
    for msg in messages:
        if msg.round != state.round:
            raise RoundAborted(f"report from worker {msg.worker_id} is for round {msg.round}, server is at {state.round}")
        if msg.worker_id in by_id:
            raise RoundAborted(f"duplicate report from worker {msg.worker_id}")
        by_id[msg.worker_id] = msg
    if sorted(by_id) != list(range(state.k)):
        raise RoundAborted(f"reports must come from workers 0..{state.k - 1}, got {sorted(by_id)}")
    return [by_id[i] for i in range(state.k)]


def run_round(state: ServerState, messages: Sequence[ReportMessage]) -> tuple[ServerState, RoundInfo]:
    """Merge one round of reports and return the updated server state.

    Raises:
        RoundAborted: On a missing, duplicate or stale report. ``state`` is never modified.
    """
    ordered = _ordered_reports(state, messages)
    reports = [m.report for m in ordered]
    outcome = state.strategy.merge(reports)

    if outcome.global_grad is not None:
        new_params, new_opt = apply_gradient(state.params[0], outcome.global_grad, state.optimizers[0])
        params, optimizers = (new_params,), (new_opt,)
        norm = float(np.linalg.norm(outcome.global_grad))
    elif outcome.per_agent is not None:
        updated = [apply_gradient(p, g, o) for p, g, o in zip(state.params, outcome.per_agent, state.optimizers)]
        params = tuple(p for p, _ in updated)
        optimizers = tuple(o for _, o in updated)
        norm = float(np.mean([np.linalg.norm(g) for g in outcome.per_agent]))
    else:
        params = (outcome.params,)
        optimizers = tuple(r.optimizer if r.optimizer is not None else o
                           for r, o in zip(reports, state.optimizers))
        norm = float(np.linalg.norm(outcome.params - state.params[0]))

    new_state = replace(state, params=params, optimizers=optimizers, round=state.round + 1)
    return new_state, RoundInfo(outcome.weights, norm)


def local_train_fedavg(
    params: np.ndarray,
    optimizer: OptimizerState,
    spec: MlpSpec,
    env,
    cfg: LossConfig,
    n_steps: int,
    epochs: int,
    rng: np.random.Generator,
    frozen_batch: RolloutBatch | None = None,
) -> tuple[np.ndarray, OptimizerState, list[AgentReport]]:
    """Run ``epochs`` local update cycles on a private copy of ``params``.

    Each cycle collects a fresh rollout unless ``frozen_batch`` (already passed
    through GAE) is given, in which case every cycle reuses it.
    """
    if epochs < 1:
        raise ValueError("epochs must be at least 1")
    params = np.array(params, dtype=np.float64)
    reports = []
    for _ in range(epochs):
        if frozen_batch is None:
            report = worker_round(params, spec, env, cfg, n_steps, rng)
        else:
            loss, grad = backward(params, spec, frozen_batch, cfg)
            report = AgentReport(grad, 0.0, loss, len(frozen_batch))
        params, optimizer = apply_gradient(params, report.gradient, optimizer)
        reports.append(report)
    return params, optimizer, reports


@dataclass(frozen=True)
class WorkerSetup:
    """Everything a worker needs besides the broadcast message. Picklable."""

    env: str
    env_kwargs: dict
    spec: MlpSpec
    loss: LossConfig
    steps_per_round: int
    seed_base: int
    run_id: int
    strategy: str
    fedavg_epochs: int = 4

    @classmethod
    def from_config(cls, config: ExperimentConfig, run_id: int) -> WorkerSetup:
        return cls(
            env=config.env, env_kwargs=config.env_kwargs(), spec=config.mlp_spec(),
            loss=config.loss.build(), steps_per_round=config.steps_per_round,
            seed_base=config.seed_base, run_id=run_id, strategy=config.strategy,
            fedavg_epochs=config.fedavg_epochs,
        )


def worker_streams(seed_base: int, run_id: int, worker_id: int, round_index: int):
    """(environment seed, sampling generator) for one worker in one round."""
    env_seq, action_seq = np.random.SeedSequence([seed_base, run_id, worker_id, round_index]).spawn(2)
    return env_seq, np.random.default_rng(action_seq)


def run_worker(setup: WorkerSetup, msg: ParamsMessage) -> ReportMessage:
    """Execute one worker's share of a round."""
    from distmerge.envs import make_env

    env = make_env(setup.env, **setup.env_kwargs)
    env_seed, rng = worker_streams(setup.seed_base, setup.run_id, msg.worker_id, msg.round)
    env.reset(seed=env_seed)
    if setup.strategy == "fedavg":
        params, opt, local = local_train_fedavg(
            msg.params, msg.optimizer, setup.spec, env, setup.loss,
            setup.steps_per_round, setup.fedavg_epochs, rng,
        )
        first = local[0]
        report = AgentReport(
            gradient=first.gradient, avg_reward=first.avg_reward, avg_loss=first.avg_loss,
            timesteps=sum(r.timesteps for r in local), episodes=sum(r.episodes for r in local),
            params=params, optimizer=opt,
        )
    else:
        report = worker_round(msg.params, setup.spec, env, setup.loss, setup.steps_per_round, rng)
    return ReportMessage(msg.round, msg.worker_id, report)


@dataclass(frozen=True)
class RoundRecord:
    run_id: int
    round: int
    cumulative_episodes: int
    mean_reward: float
    ema_reward: float
    mean_loss: float
    grad_norm: float
    agent_rewards: tuple[float, ...]
    agent_weights: tuple[float, ...] | None = None


@dataclass
class TrainingResult:
    records: list[RoundRecord]
    state: ServerState
    initial_params: np.ndarray = field(repr=False)


def initial_state(config: ExperimentConfig, run_id: int = 0) -> ServerState:
    spec = config.mlp_spec()
    init_seed = np.random.SeedSequence([config.seed_base, run_id])
    params = init_params(spec, int(init_seed.generate_state(1)[0]))
    return ServerState.initial(params, config.optimizer.build(spec.num_params), config.strategy_obj(), config.k)


def run_training(
    config: ExperimentConfig,
    run_id: int = 0,
    *,
    stop_when: Callable[[RoundRecord], bool] | None = None,
    map_fn: Callable[..., Iterable] = map,
) -> TrainingResult:
    """Train for ``config.rounds`` synchronous rounds.

    Args:
        config: Experiment description.
        run_id: Index of this run within a multi-run experiment; feeds the seeds.
        stop_when: Optional predicate on each new record; training ends early once it is true.
        map_fn: ``map``-compatible callable used to execute the k workers of a round,
            e.g. ``ProcessPoolExecutor().map``. Results are re-ordered by worker id.

    Raises:
        TrainingAborted: If a worker raises; carries the records completed so far.
    """
    state = initial_state(config, run_id)
    init = state.params[0].copy()
    setup = WorkerSetup.from_config(config, run_id)
    records: list[RoundRecord] = []
    ema = None
    episodes = 0
    for _ in range(config.rounds):
        messages = state.broadcast()
        try:
            reports = list(map_fn(run_worker, [setup] * len(messages), messages))
        except Exception as exc:
            raise TrainingAborted(f"worker failed in round {state.round}: {exc}", records) from exc
        round_index = state.round
        state, info = run_round(state, reports)

        reports.sort(key=lambda m: m.worker_id)
        rewards = tuple(float(m.report.avg_reward) for m in reports)
        mean_reward = float(np.mean(rewards))
        ema = ema_update(ema, mean_reward)
        episodes += sum(m.report.episodes for m in reports)
        record = RoundRecord(
            run_id=run_id,
            round=round_index,
            cumulative_episodes=episodes,
            mean_reward=mean_reward,
            ema_reward=ema,
            mean_loss=float(np.mean([m.report.avg_loss for m in reports])),
            grad_norm=info.grad_norm,
            agent_rewards=rewards,
            agent_weights=None if info.weights is None else tuple(float(w) for w in info.weights),
        )
        records.append(record)
        log.debug("run %d round %d mean reward %.2f ema %.2f", run_id, round_index, mean_reward, ema)
        if stop_when is not None and stop_when(record):
            break
    return TrainingResult(records, state, init)
