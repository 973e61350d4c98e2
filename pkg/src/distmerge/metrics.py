"""Reward-curve metrics: EMA smoothing, threshold crossing, baseline-normalized summaries."""

from __future__ import annotations

import math
from dataclasses import dataclass
from decimal import Decimal
from typing import Mapping, Sequence, Union

import numpy as np

EMA_RETENTION = 0.9

ThresholdEpisode = Union[int, str]


def _complement(retention: float) -> float:
    # in decimal, so that 0.9 pairs with the literal 0.1 rather than 1.0 - 0.9
    return float(Decimal(1) - Decimal(repr(retention)))


def ema_update(prev: float | None, value: float, retention: float = EMA_RETENTION) -> float:
    """``retention * prev + (1 - retention) * value``; the first value seeds the average."""
    if prev is None:
        return float(value)
    return retention * prev + _complement(retention) * value


def ema_series(values: Sequence[float], retention: float = EMA_RETENTION) -> np.ndarray:
    out = np.empty(len(values))
    weight = _complement(retention)
    prev = None
    for i, v in enumerate(values):
        prev = float(v) if prev is None else retention * prev + weight * v
        out[i] = prev
    return out


def first_crossing(series: Sequence[float], threshold: float) -> int | None:
    for i, v in enumerate(series):
        if v >= threshold:
            return i
    return None


def threshold_episode(ema: Sequence[float], threshold: float) -> ThresholdEpisode:
    """First index where ``ema >= threshold``, else ``"N+"`` with N the series length."""
    if len(ema) == 0:
        raise ValueError("empty series")
    if not math.isfinite(threshold):
        raise ValueError("threshold must be finite")
    idx = first_crossing(ema, threshold)
    return f"{len(ema)}+" if idx is None else idx


@dataclass(frozen=True)
class MetricsSummary:
    algorithm: str
    avg_rew: float
    avg_end_rew: float
    threshold_episode: ThresholdEpisode
    percent_avg: float
    percent_end: float


def normalize_to_baseline(values: Mapping[str, float], baseline: str) -> dict[str, float]:
    """Express each value as a percentage of the baseline's value.

    When the baseline value is negative, the lowest value among all algorithms
    is subtracted from every value first. Negative percentages clamp to 0.0.
    """
    if baseline not in values:
        raise KeyError(f"baseline {baseline!r} missing")
    finite = {name: v for name, v in values.items() if math.isfinite(v)}
    shift = min(finite.values()) if values[baseline] < 0 else 0.0
    base = values[baseline] - shift
    out = {}
    for name, v in values.items():
        if not math.isfinite(v) or not math.isfinite(base):
            out[name] = math.nan
        elif base == 0:
            out[name] = 100.0 if v - shift == 0 else math.nan
        else:
            out[name] = max(0.0, 100.0 * ((v - shift) / base))
    return out


def summarize(
    series: Mapping[str, Sequence[float]],
    env_threshold: float,
    end_threshold: float,
    baseline: str = "baseline_sum",
) -> dict[str, MetricsSummary]:
    """Summarize per-round mean-reward curves of several algorithms.

    Args:
        series: Algorithm name to per-round mean reward (not smoothed).
        env_threshold: EMA level defining the threshold episode.
        end_threshold: EMA level whose earliest crossing by any algorithm starts
            the tail averaged into ``avg_end_rew``.
        baseline: Algorithm the percentages are normalized on.

    Raises:
        TypeError: If given summaries instead of raw series.
        KeyError: If the baseline has no series.
    """
    if not series:
        raise ValueError("no series to summarize")
    curves: dict[str, np.ndarray] = {}
    for name, values in series.items():
        if isinstance(values, (MetricsSummary, Mapping, str)) or np.ndim(values) != 1:
            raise TypeError(f"{name}: summarize expects a 1-D reward series, got {type(values).__name__}")
        arr = np.asarray(values, dtype=np.float64)
        if arr.size == 0:
            raise ValueError(f"{name}: empty series")
        curves[name] = arr
    if baseline not in curves:
        raise KeyError(f"baseline {baseline!r} missing from series")

    emas = {name: ema_series(arr) for name, arr in curves.items()}
    crossings = [c for c in (first_crossing(e, end_threshold) for e in emas.values()) if c is not None]
    tail_start = min(crossings) if crossings else None

    avg = {name: float(arr.mean()) for name, arr in curves.items()}
    end = {}
    for name, arr in curves.items():
        end[name] = float(arr[tail_start:].mean()) if tail_start is not None and tail_start < arr.size else math.nan
    pct_avg = normalize_to_baseline(avg, baseline)
    pct_end = normalize_to_baseline(end, baseline)
    return {
        name: MetricsSummary(
            algorithm=name,
            avg_rew=avg[name],
            avg_end_rew=end[name],
            threshold_episode=threshold_episode(emas[name], env_threshold),
            percent_avg=pct_avg[name],
            percent_end=pct_end[name],
        )
        for name in curves
    }
