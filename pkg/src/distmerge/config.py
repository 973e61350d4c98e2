"""Experiment configuration schema.

Configs are plain YAML mappings validated by pydantic; unknown keys are errors.
"""

from __future__ import annotations

from pathlib import Path
from typing import Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from distmerge.envs import DoorsSpec, make_env
from distmerge.merge import KINDS, MergeStrategy
from distmerge.nn import MlpSpec, OptimizerState
from distmerge.ppo import LossConfig

# Convergence thresholds for environments outside this package, kept for reference.
REFERENCE_THRESHOLDS = {"lunarlander": (80.0, 100.0), "bipedalwalker": (200.0, 200.0)}


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class LossSettings(_Strict):
    clip_epsilon: float = Field(0.2, gt=0, lt=1)
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    gamma: float = Field(0.99, gt=0, le=1)
    gae_lambda: float = Field(0.95, ge=0, le=1)
    normalize_advantages: bool = True
    reward_scale: float = Field(1.0, gt=0)

    def build(self) -> LossConfig:
        return LossConfig(**self.model_dump())


class OptimizerSettings(_Strict):
    kind: Literal["sgd", "adam"] = "adam"
    learning_rate: float = Field(3e-4, ge=0)
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    eps: float = Field(1e-8, gt=0)

    def build(self, size: int) -> OptimizerState:
        return OptimizerState.create(
            self.kind, self.learning_rate, size, beta1=self.beta1, beta2=self.beta2, eps=self.eps
        )


class ThresholdSettings(_Strict):
    env_threshold: Optional[float] = None
    end_threshold: Optional[float] = None


class ExperimentConfig(_Strict):
    """One algorithm on one environment, repeated ``runs`` times."""

    name: Optional[str] = None
    env: Literal["cartpole", "doors"] = "cartpole"
    env_options: dict[str, float] = Field(default_factory=dict)
    strategy: str = "baseline_sum"
    k: int = Field(8, ge=1)
    h: Optional[float] = Field(None, gt=0)
    loss_weight_mode: Literal["abs", "shift"] = "abs"
    net: Literal["small", "medium", "large"] = "small"
    rounds: int = Field(200, ge=0)
    steps_per_round: int = Field(4000, ge=1)
    runs: int = Field(10, ge=1)
    seed_base: int = Field(0, ge=0)
    fedavg_epochs: int = Field(4, ge=1)
    loss: LossSettings = Field(default_factory=LossSettings)
    optimizer: OptimizerSettings = Field(default_factory=OptimizerSettings)
    thresholds: ThresholdSettings = Field(default_factory=ThresholdSettings)

    @field_validator("strategy")
    @classmethod
    def _known_strategy(cls, value: str) -> str:
        if value not in KINDS:
            raise ValueError(f"unknown strategy {value!r}; choose from {list(KINDS)}")
        return value

    @model_validator(mode="after")
    def _env_options_valid(self) -> ExperimentConfig:
        self.make_env()
        return self

    @property
    def label(self) -> str:
        return self.name or self.strategy

    def env_kwargs(self) -> dict:
        if self.env == "doors":
            ints = {"num_doors", "period", "episode_length"}
            return {key: int(v) if key in ints else float(v) for key, v in self.env_options.items()}
        return {key: int(v) for key, v in self.env_options.items()}

    def make_env(self):
        try:
            return make_env(self.env, **self.env_kwargs())
        except TypeError as exc:
            raise ValueError(f"invalid env_options for {self.env}: {exc}") from None

    def mlp_spec(self) -> MlpSpec:
        env = self.make_env()
        return MlpSpec.preset(self.net, env.observation_dim, env.action_dim)

    def strategy_obj(self) -> MergeStrategy:
        return MergeStrategy(self.strategy, self.h, self.loss_weight_mode)

    def resolved_thresholds(self) -> tuple[float, float]:
        """(env_threshold, end_threshold) in units of mean episodic return."""
        if self.env == "cartpole":
            default = 400.0
        else:
            doors = DoorsSpec(**self.env_kwargs())
            default = 0.9 * doors.jackpot_reward * doors.episode_length
        env_t = self.thresholds.env_threshold
        end_t = self.thresholds.end_threshold
        return (default if env_t is None else env_t, default if end_t is None else end_t)


class SuiteConfig(_Strict):
    """Several strategies sharing one base experiment, compared against a baseline."""

    name: str = "suite"
    base: ExperimentConfig = Field(default_factory=ExperimentConfig)
    strategies: list[str] = Field(default_factory=lambda: ["baseline_sum"], min_length=1)
    baseline: str = "baseline_sum"

    @model_validator(mode="after")
    def _baseline_included(self) -> SuiteConfig:
        for s in self.strategies:
            if s not in KINDS:
                raise ValueError(f"unknown strategy {s!r}")
        if self.baseline not in self.strategies:
            raise ValueError(f"baseline {self.baseline!r} must be one of the suite strategies")
        if len(set(self.strategies)) != len(self.strategies):
            raise ValueError("duplicate strategies in suite")
        return self

    def experiments(self) -> list[ExperimentConfig]:
        return [self.base.model_copy(update={"strategy": s, "name": s}) for s in self.strategies]


def load_yaml(path: str | Path) -> dict:
    with open(path) as fh:
        data = yaml.safe_load(fh)
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ValueError(f"{path}: top level must be a mapping")
    return data


def load_experiment(path: str | Path) -> ExperimentConfig:
    return ExperimentConfig.model_validate(load_yaml(path))


def load_suite(path: str | Path) -> SuiteConfig:
    return SuiteConfig.model_validate(load_yaml(path))
