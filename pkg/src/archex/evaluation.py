"""Stochastic evaluation protocol and summary statistics.

A policy is scored by running at least ``min_episodes`` episodes for every
forced no-op count in 0..30 under sticky actions, averaging per no-op, and
reporting the grand mean of the 31 per-no-op means. Uncertainty is reported
with pivotal bootstrap intervals ``(2*stat - q_hi, 2*stat - q_lo)``;
figure-style bands use plain percentile bootstrap.

Quantiles of resampled statistics use linear interpolation at rank
``(B - 1) * q`` over the sorted resamples (numpy's "linear" method); pivotal
endpoints depend on this convention, so it is fixed here.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .envs.base import SnapshotEnv
from .envs.wrappers import force_noops, wrap_sticky
from .errors import ConfigError, ContractError
from .seeding import TAG_EVAL, stream


@dataclass(frozen=True)
class EvalProtocol:
    max_noop: int = 30               # forced no-ops range over 0..max_noop
    min_episodes: int = 5
    sticky_p: float = 0.25
    time_limit_game_frames: int = 400_000

    def validate(self) -> "EvalProtocol":
        if self.max_noop < 0:
            raise ConfigError("max_noop must be >= 0")
        if self.min_episodes < 1:
            raise ConfigError("min_episodes must be >= 1")
        if not 0 <= self.sticky_p < 1:
            raise ConfigError("sticky_p must satisfy 0 <= p < 1")
        return self


def grand_mean(scores: Iterable[tuple[int, float]]) -> tuple[float, dict[int, float]]:
    """Mean of the per-no-op means; robust to unequal episode counts."""
    buckets: dict[int, list[float]] = {}
    for noop, score in scores:
        buckets.setdefault(noop, []).append(score)
    if not buckets:
        raise ContractError("no scores to aggregate")
    per_noop = {n: sum(v) / len(v) for n, v in sorted(buckets.items())}
    return sum(per_noop.values()) / len(per_noop), per_noop


@dataclass(slots=True)
class EvalResult:
    grand_mean: float
    per_noop: dict[int, float]
    scores: list[tuple[int, int, float]]  # (noop, episode, score)


def evaluate_policy(
    policy,
    env_factory: Callable[[], SnapshotEnv],
    protocol: EvalProtocol,
    seed: int = 0,
) -> EvalResult:
    """Run the full no-op sweep and return the grand mean and raw scores.

    Episode RNG streams are derived from (seed, noop, episode), so scores are
    reproducible and episodes are independent of evaluation order.
    """
    protocol = protocol.validate()
    env = wrap_sticky(env_factory(), protocol.sticky_p)
    frame_cap = protocol.time_limit_game_frames // max(1, env.frame_skip)
    scores: list[tuple[int, int, float]] = []
    for noop in range(protocol.max_noop + 1):
        for episode in range(protocol.min_episodes):
            rng = stream(seed, TAG_EVAL, noop, episode)
            env.reset(int(rng.integers(2**63)))
            force_noops(env, noop)
            frames = env.frame_counters()[1]
            while not env.done and frames < frame_cap:
                env.step(policy.act(env, rng))
                frames += 1
            scores.append((noop, episode, env.cum_score))
    gmean, per_noop = grand_mean((n, s) for n, _, s in scores)
    return EvalResult(grand_mean=gmean, per_noop=per_noop, scores=scores)


# -- bootstrap ---------------------------------------------------------------

def _resample_stats(
    samples: np.ndarray,
    n_resamples: int,
    statistic: Callable[[np.ndarray], float] | None,
    rng: np.random.Generator,
) -> np.ndarray:
    n = len(samples)
    idx = rng.integers(0, n, size=(n_resamples, n))
    if statistic is None:
        return samples[idx].mean(axis=1)
    return np.array([statistic(samples[row]) for row in idx])


def bootstrap_ci(
    samples: Sequence[float],
    n_resamples: int = 10_000,
    alpha: float = 0.05,
    statistic: Callable[[np.ndarray], float] | None = None,
    rng: np.random.Generator | None = None,
) -> tuple[float, float]:
    """Pivotal (empirical) bootstrap confidence interval.

    With q_lo and q_hi the alpha/2 and 1-alpha/2 empirical quantiles of the
    resampled statistic, returns (2*stat - q_hi, 2*stat - q_lo). The default
    statistic is the mean.
    """
    data = np.asarray(samples, dtype=np.float64)
    if data.size < 2:
        raise ContractError("bootstrap_ci needs at least 2 samples")
    if rng is None:
        rng = stream(0, TAG_EVAL, 0xB005)
    center = float(data.mean()) if statistic is None else float(statistic(data))
    stats = _resample_stats(data, n_resamples, statistic, rng)
    q_lo, q_hi = np.quantile(stats, [alpha / 2, 1 - alpha / 2], method="linear")
    return 2 * center - float(q_hi), 2 * center - float(q_lo)


def percentile_band(
    samples: Sequence[float],
    n_resamples: int = 1_000,
    alpha: float = 0.05,
    rng: np.random.Generator | None = None,
) -> tuple[float, float]:
    """Percentile bootstrap band of the mean, the plotting convention."""
    data = np.asarray(samples, dtype=np.float64)
    if data.size == 1:
        return float(data[0]), float(data[0])
    if rng is None:
        rng = stream(0, TAG_EVAL, 0xBA4D)
    stats = _resample_stats(data, n_resamples, None, rng)
    q_lo, q_hi = np.quantile(stats, [alpha / 2, 1 - alpha / 2], method="linear")
    return float(q_lo), float(q_hi)


# -- report aggregation ---------------------------------------------------------

def _read_metric_csv(path) -> tuple[list[str], list[list[float]]]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "game_frames":
            raise ConfigError(f"{path}:1: not a metrics CSV")
        width = len(header)
        for lineno, row in enumerate(reader, start=2):
            if len(row) != width:
                raise ConfigError(f"{path}:{lineno}: expected {width} columns")
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: {exc}") from exc
    return header, rows


def emit_report(
    metric_csvs: Sequence[str | Path],
    out_dir: str | Path,
    n_resamples: int = 1_000,
    seed: int = 0,
) -> list[Path]:
    """Aggregate per-seed metric CSVs into plot-ready mean and band files.

    Seeds are aligned on the game_frames values present in every input file
    (the sampling-interval grid); each metric gets one output CSV with
    columns (game_frames, mean, lo, hi).
    """
    if not metric_csvs:
        raise ConfigError("no metric CSVs given")
    tables = []
    header = None
    for path in metric_csvs:
        head, rows = _read_metric_csv(path)
        if header is None:
            header = head
        elif head != header:
            raise ConfigError(f"{path}: column mismatch with first input")
        tables.append({int(r[0]): r for r in rows})
    shared = sorted(set.intersection(*(set(t) for t in tables)))
    if not shared:
        raise ConfigError("input CSVs share no game_frames samples")

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    skip = {"game_frames", "training_frames", "wall_seconds"}
    written = []
    for col, name in enumerate(header):
        if name in skip:
            continue
        rng = stream(seed, TAG_EVAL, 0xE307, col)
        out_path = out_dir / f"{name}_aggregate.csv"
        with open(out_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["game_frames", "mean", "lo", "hi"])
            for gf in shared:
                values = [t[gf][col] for t in tables]
                mean = sum(values) / len(values)
                lo, hi = percentile_band(values, n_resamples, rng=rng)
                writer.writerow([gf, mean, lo, hi])
        written.append(out_path)
    return written


def write_scores_csv(result: EvalResult, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["noop", "episode", "score"])
        for row in result.scores:
            writer.writerow(row)


def write_per_noop_csv(result: EvalResult, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["noop", "mean_score"])
        for noop, mean in result.per_noop.items():
            writer.writerow([noop, mean])
