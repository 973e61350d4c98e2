"""Distributed PPO with weighted gradient merging on a synchronous parameter server."""

from distmerge.config import ExperimentConfig, SuiteConfig
from distmerge.merge import MergeStrategy
from distmerge.metrics import MetricsSummary, summarize
from distmerge.runtime import run_training

__all__ = ["ExperimentConfig", "MergeStrategy", "MetricsSummary", "SuiteConfig", "run_training", "summarize"]
__version__ = "0.1.0"
