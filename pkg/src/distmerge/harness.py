"""Multi-run orchestration and file outputs.

Output layout under ``out_dir``::

    manifest.json
    summary.csv, summary.txt        (suite and summarize only)
    <algorithm>/run_000.csv ...     one per run
    <algorithm>/averaged.csv        per-round mean over runs
"""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from distmerge.config import ExperimentConfig
from distmerge.metrics import MetricsSummary, ema_series, summarize
from distmerge.runtime import RoundRecord, TrainingAborted, run_training

log = logging.getLogger(__name__)

BASE_COLUMNS = ["run_id", "round", "cumulative_episodes", "mean_reward", "ema_reward", "mean_loss", "grad_norm"]
SUMMARY_COLUMNS = ["algorithm", "avgRew", "avgEndRew", "percentAvg", "percentEnd", "threshold_episode"]
AVERAGED_RUN_ID = "mean"


def round_columns(k: int) -> list[str]:
    cols = list(BASE_COLUMNS)
    for i in range(k):
        cols += [f"agent_{i}_reward", f"agent_{i}_weight"]
    return cols


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return str(int(value))
    if isinstance(value, str):
        return value
    return format(float(value), ".17g")


def _parse_number(text: str):
    if text == "":
        return None
    try:
        return int(text)
    except ValueError:
        return float(text)


def write_round_csv(path: str | Path, records: Sequence[RoundRecord], k: int) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(round_columns(k))
        for r in records:
            weights = r.agent_weights if r.agent_weights is not None else (None,) * k
            row = [r.run_id, r.round, r.cumulative_episodes, r.mean_reward, r.ema_reward, r.mean_loss, r.grad_norm]
            for reward, weight in zip(r.agent_rewards, weights):
                row += [reward, weight]
            writer.writerow([_fmt(v) for v in row])


def read_round_csv(path: str | Path) -> list[RoundRecord]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[: len(BASE_COLUMNS)] != BASE_COLUMNS:
            raise ValueError(f"{path}: unexpected header {header}")
        k = (len(header) - len(BASE_COLUMNS)) // 2
        if header != round_columns(k):
            raise ValueError(f"{path}: unexpected agent columns")
        records = []
        for row in reader:
            run_id = row[0] if row[0] == AVERAGED_RUN_ID else int(row[0])
            values = [_parse_number(v) for v in row[1:]]
            rnd, episodes, mean_r, ema, loss, norm = values[:6]
            agent = values[6:]
            weights = tuple(agent[1::2])
            records.append(
                RoundRecord(
                    run_id=run_id, round=int(rnd), cumulative_episodes=episodes,
                    mean_reward=float(mean_r), ema_reward=float(ema), mean_loss=float(loss),
                    grad_norm=float(norm), agent_rewards=tuple(float(v) for v in agent[0::2]),
                    agent_weights=None if all(w is None for w in weights) else tuple(float(w) for w in weights),
                )
            )
    return records


def average_runs(runs: Sequence[Sequence[RoundRecord]]) -> list[RoundRecord]:
    """Per-round mean over runs, summed in run-id order; truncated to the shortest run."""
    if not runs:
        return []
    ordered = sorted(runs, key=lambda recs: recs[0].run_id if recs else -1)
    ordered = [recs for recs in ordered if recs]
    if not ordered:
        return []
    n_rounds = min(len(recs) for recs in ordered)
    n = len(ordered)

    def mean(values: Iterable[float]) -> float:
        total = 0.0
        for v in values:
            total += v
        return total / n

    columns = []
    for i in range(n_rounds):
        rows = [recs[i] for recs in ordered]
        k = len(rows[0].agent_rewards)
        weights = None
        if rows[0].agent_weights is not None:
            weights = tuple(mean(r.agent_weights[j] for r in rows) for j in range(k))
        columns.append((rows, k, weights))
    mean_rewards = [mean(r.mean_reward for r in rows) for rows, _, _ in columns]
    emas = ema_series(mean_rewards)
    return [
        RoundRecord(
            run_id=AVERAGED_RUN_ID, round=rows[0].round,
            cumulative_episodes=mean(r.cumulative_episodes for r in rows),
            mean_reward=mean_reward, ema_reward=float(ema),
            mean_loss=mean(r.mean_loss for r in rows), grad_norm=mean(r.grad_norm for r in rows),
            agent_rewards=tuple(mean(r.agent_rewards[j] for r in rows) for j in range(k)),
            agent_weights=weights,
        )
        for (rows, k, weights), mean_reward, ema in zip(columns, mean_rewards, emas)
    ]


def write_summary(out_dir: str | Path, summaries: dict[str, MetricsSummary]) -> None:
    out_dir = Path(out_dir)
    rows = [
        [s.algorithm, s.avg_rew, s.avg_end_rew, s.percent_avg, s.percent_end, s.threshold_episode]
        for s in summaries.values()
    ]
    with open(out_dir / "summary.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SUMMARY_COLUMNS)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])
    (out_dir / "summary.txt").write_text(format_summary(summaries))


def format_summary(summaries: dict[str, MetricsSummary]) -> str:
    def num(v: float) -> str:
        return "n/a" if math.isnan(v) else f"{v:.2f}"

    header = ["Algorithm", "avgRew", "avgEndRew", "percentAvg(end)", "threshold"]
    body = [
        [s.algorithm, num(s.avg_rew), num(s.avg_end_rew),
         f"{num(s.percent_avg)}%({num(s.percent_end)})", str(s.threshold_episode)]
        for s in summaries.values()
    ]
    widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in [header] + body]
    return "\n".join(lines) + "\n"


@dataclass
class SuiteResult:
    series: dict[str, list[float]] = field(default_factory=dict)
    summaries: dict[str, MetricsSummary] = field(default_factory=dict)
    failed: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failed


def _run_one(config: ExperimentConfig, run_id: int, path: Path) -> tuple[list[RoundRecord], str | None]:
    try:
        records = run_training(config, run_id).records
        error = None
    except TrainingAborted as exc:
        records, error = exc.records, str(exc)
    write_round_csv(path, records, config.k)
    return records, error


def run_experiment_suite(
    configs: Sequence[ExperimentConfig],
    out_dir: str | Path,
    baseline: str | None = "baseline_sum",
    jobs: int = 1,
) -> SuiteResult:
    """Run every config ``config.runs`` times and write CSVs, summary and manifest.

    With ``baseline=None`` no summary table is written (single-config training).
    """
    labels = [c.label for c in configs]
    if len(set(labels)) != len(labels):
        raise ValueError(f"config labels must be unique, got {labels}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tasks = [(c, run_id, out_dir / c.label / f"run_{run_id:03d}.csv") for c in configs for run_id in range(c.runs)]

    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            outcomes = list(pool.map(_run_one, *zip(*tasks)))
    else:
        outcomes = [_run_one(*task) for task in tasks]

    result = SuiteResult()
    per_config: dict[str, list[list[RoundRecord]]] = {label: [] for label in labels}
    for (config, run_id, path), (records, error) in zip(tasks, outcomes):
        per_config[config.label].append(records)
        if error is not None:
            log.error("%s run %d failed: %s", config.label, run_id, error)
            result.failed.append(f"{config.label}/run_{run_id:03d}: {error}")

    for config in configs:
        averaged = average_runs(per_config[config.label])
        write_round_csv(out_dir / config.label / "averaged.csv", averaged, config.k)
        result.series[config.label] = [r.mean_reward for r in averaged]

    env_threshold, end_threshold = configs[0].resolved_thresholds()
    if baseline is not None and all(result.series.values()):
        result.summaries = summarize(result.series, env_threshold, end_threshold, baseline)
        write_summary(out_dir, result.summaries)

    manifest = {
        "complete": result.ok,
        "failed_runs": result.failed,
        "algorithms": labels,
        "baseline": baseline,
        "env_threshold": env_threshold,
        "end_threshold": end_threshold,
        "configs": {c.label: c.model_dump() for c in configs},
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return result


def summarize_directory(
    in_dir: str | Path,
    baseline: str = "baseline_sum",
    env_threshold: float | None = None,
    end_threshold: float | None = None,
) -> dict[str, MetricsSummary]:
    """Recompute summary tables from the run CSVs found under ``in_dir``."""
    in_dir = Path(in_dir)
    manifest_path = in_dir / "manifest.json"
    manifest = json.loads(manifest_path.read_text()) if manifest_path.exists() else {}
    env_threshold = manifest.get("env_threshold") if env_threshold is None else env_threshold
    end_threshold = manifest.get("end_threshold") if end_threshold is None else end_threshold
    if env_threshold is None or end_threshold is None:
        raise ValueError("thresholds unknown: no manifest.json and none given")

    found = sorted(p.name for p in in_dir.iterdir() if p.is_dir())
    order = [name for name in manifest.get("algorithms", []) if name in found]
    series = {}
    for name in order + [name for name in found if name not in order]:
        runs = [read_round_csv(f) for f in sorted((in_dir / name).glob("run_*.csv"))]
        if runs:
            series[name] = [r.mean_reward for r in average_runs(runs)]
    if not series:
        raise ValueError(f"no run CSVs under {in_dir}")
    summaries = summarize(series, env_threshold, end_threshold, baseline)
    write_summary(in_dir, summaries)
    return summaries
