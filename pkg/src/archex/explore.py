"""The exploration loop: select a batch of cells, return to each without
noise, explore with repeat-biased random actions, merge discoveries.

Rollouts within an iteration are logically parallel: they all read the
archive as it stood at selection time, and their results are merged in
worker-index order afterwards. The implementation executes them serially,
which makes the "identical results for any worker count" contract hold
trivially. Every stochastic draw comes from a stream derived from (seed,
purpose, iteration, worker), so runs are reproducible and resumable bit-for-
bit.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

from .archive import Archive, CellRecord, RunMeta, UpdateOutcome
from .cells import CellKey, CellMapper
from .envs.base import SnapshotEnv
from .errors import ConfigError, IntegrityError
from .seeding import TAG_BASELINE, TAG_EXPLORE, TAG_SELECT, stream
from .selection import SelectionConfig, cell_probs, sample_batch
from .trajectory import Trajectory


@dataclass(frozen=True)
class ExploreConfig:
    k: int = 100                      # exploration budget per rollout, training frames
    repeat_p: float = 0.95            # action repeat probability per training frame
    batch_size: int = 100
    budget_training_frames: int = 1_000_000
    seed: int = 0
    return_mode: str = "restore"      # "replay" re-executes actions (testing aid)
    metric_interval_game_frames: int = 4_000_000

    def validate(self) -> "ExploreConfig":
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if not 0.0 <= self.repeat_p < 1.0:
            raise ConfigError("repeat_p must satisfy 0 <= p < 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.budget_training_frames < 0:
            raise ConfigError("budget must be >= 0")
        if self.return_mode not in ("restore", "replay"):
            raise ConfigError(f"unknown return_mode {self.return_mode!r}")
        if self.metric_interval_game_frames < 1:
            raise ConfigError("metric interval must be >= 1")
        return self


class VisitedCell(NamedTuple):
    key: CellKey
    score: float
    trajectory: Trajectory
    snapshot: object  # EnvSnapshot


@dataclass(slots=True)
class RolloutResult:
    origin: CellKey
    visited: list[VisitedCell]
    frames: int
    terminated: bool
    rooms: set[int]
    max_level: int


def explore_from(
    env: SnapshotEnv,
    origin: CellKey,
    record: CellRecord,
    rng,
    cfg: ExploreConfig,
    mapper: CellMapper,
) -> RolloutResult:
    """Return to a cell and take up to ``k`` repeat-biased random actions.

    The RNG contract is fixed: one ``rng.random(k)`` call for the repeat
    decisions followed by one ``rng.integers(0, n_actions, k)`` call for the
    fresh actions; frame i repeats when ``repeats[i] < repeat_p`` (never on
    the first frame). Returning consumes no randomness at all. If the episode
    ends, the rollout stops and the final transition is discarded: it has no
    destination cell.
    """
    if cfg.return_mode == "replay":
        env.reset(cfg.seed)
        for action in record.trajectory.actions():
            env.step(action)
        if env.snapshot().state_bytes != record.snapshot.state_bytes:
            raise IntegrityError("replay return reached a different state")
    else:
        env.restore(record.snapshot)

    repeats = rng.random(cfg.k)
    fresh = rng.integers(0, env.action_count, cfg.k)
    trajectory = record.trajectory
    visited: list[VisitedCell] = []
    rooms: set[int] = set()
    max_level = 0
    prev_action = -1
    frames = 0
    terminated = False
    for i in range(cfg.k):
        if i > 0 and repeats[i] < cfg.repeat_p:
            action = prev_action
        else:
            action = int(fresh[i])
        result = env.step(action)
        frames += 1
        prev_action = action
        if result.done:
            terminated = True
            break
        trajectory = trajectory.extend(action)
        key = mapper(result.obs, result.info)
        visited.append(
            VisitedCell(key, env.cum_score, trajectory, env.snapshot())
        )
        rooms.add(result.info.room)
        if result.info.level > max_level:
            max_level = result.info.level
    return RolloutResult(origin, visited, frames, terminated, rooms, max_level)


@dataclass(slots=True)
class IterationStats:
    frames: int = 0
    added: int = 0
    improved: int = 0
    rooms: set[int] = field(default_factory=set)
    max_level: int = 0


def merge_results(archive: Archive, results: list[RolloutResult]) -> IterationStats:
    """Fold rollout results into the archive in worker-index order."""
    stats = IterationStats()
    for result in results:
        discovered = False
        for key, score, trajectory, snapshot in result.visited:
            outcome = archive.insert_or_update(
                key, trajectory, score, trajectory.length, snapshot
            )
            if outcome is UpdateOutcome.ADDED:
                stats.added += 1
                discovered = True
            elif outcome is UpdateOutcome.IMPROVED:
                stats.improved += 1
                discovered = True
        if discovered:
            archive.credit_discovery(result.origin)
        stats.frames += result.frames
        stats.rooms |= result.rooms
        stats.max_level = max(stats.max_level, result.max_level)
    return stats


def run_iteration(
    archive: Archive,
    env: SnapshotEnv,
    sel_cfg: SelectionConfig,
    cfg: ExploreConfig,
    iteration: int,
    mapper: CellMapper,
) -> IterationStats:
    """One batch: recompute probabilities once, sample b origins with
    replacement, roll out, merge."""
    table = cell_probs(archive, sel_cfg)
    origins = sample_batch(table, cfg.batch_size, stream(cfg.seed, TAG_SELECT, iteration))
    for key in origins:
        archive.record_chosen(key)
    results = []
    for worker, key in enumerate(origins):
        rng = stream(cfg.seed, TAG_EXPLORE, iteration, worker)
        results.append(explore_from(env, key, archive.cells[key], rng, cfg, mapper))
    return merge_results(archive, results)


# -- metrics -------------------------------------------------------------------

METRIC_COLUMNS = (
    "game_frames",
    "training_frames",
    "cells",
    "rooms",
    "max_score",
    "max_level",
    "wall_seconds",
)


class MetricsRow(NamedTuple):
    game_frames: int
    training_frames: int
    cells: int
    rooms: int
    max_score: float
    max_level: int
    wall_seconds: float


def write_metrics_csv(rows: list[MetricsRow], path, append: bool = False) -> None:
    mode = "a" if append else "w"
    with open(path, mode, newline="") as fh:
        writer = csv.writer(fh)
        if not append:
            writer.writerow(METRIC_COLUMNS)
        for row in rows:
            writer.writerow(row)


@dataclass(slots=True)
class Phase1Result:
    archive: Archive
    meta: RunMeta
    metrics: list[MetricsRow]


def _seed_archive(env: SnapshotEnv, seed: int, mapper: CellMapper) -> tuple[Archive, CellKey, set[int]]:
    obs, snap = env.reset(seed)
    info = obs.features
    key = mapper(obs, info)
    archive = Archive(env.config_hash)
    archive.insert_or_update(key, Trajectory(), 0.0, 0, snap)
    return archive, key, {info.room}


def run_phase1(
    env_factory: Callable[[], SnapshotEnv],
    cfg: ExploreConfig,
    sel_cfg: SelectionConfig,
    mapper: CellMapper,
    resume: tuple[Archive, RunMeta] | None = None,
    stop_condition: Callable[[Archive, RunMeta], bool] | None = None,
    on_iteration: Callable[[Archive, RunMeta], None] | None = None,
) -> Phase1Result:
    """Run the exploration phase until the training-frame budget is spent.

    ``resume`` continues a checkpointed run bit-exactly: streams are derived
    from the iteration index, so nothing else needs restoring. The optional
    ``stop_condition`` is evaluated between iterations (milestone runs);
    ``on_iteration`` is a hook for periodic checkpointing.
    """
    cfg = cfg.validate()
    sel_cfg = sel_cfg.validate()
    env = env_factory()
    start = time.perf_counter()

    if resume is not None:
        archive, meta = resume
        if archive.config_hash != env.config_hash:
            raise ConfigError("resume archive does not match the environment config")
        rooms_seen = set(meta.rooms_seen)
        iteration = meta.iteration
        frames = meta.training_frames
        max_level_seen = meta.max_level_seen
    else:
        archive, _, rooms_seen = _seed_archive(env, cfg.seed, mapper)
        iteration = 0
        frames = 0
        max_level_seen = 0

    metrics: list[MetricsRow] = []
    interval = cfg.metric_interval_game_frames
    game_frames = frames * env.frame_skip
    next_sample = (game_frames // interval + 1) * interval

    def snap_meta() -> RunMeta:
        return RunMeta(
            seed=cfg.seed,
            iteration=iteration,
            training_frames=frames,
            game_frames=game_frames,
            rooms_seen=frozenset(rooms_seen),
            max_level_seen=max_level_seen,
        )

    def metric_row() -> MetricsRow:
        return MetricsRow(
            game_frames=game_frames,
            training_frames=frames,
            cells=len(archive),
            rooms=len(rooms_seen),
            max_score=archive.max_score(),
            max_level=max_level_seen,
            wall_seconds=time.perf_counter() - start,
        )

    while frames < cfg.budget_training_frames:
        if stop_condition is not None and stop_condition(archive, snap_meta()):
            break
        stats = run_iteration(archive, env, sel_cfg, cfg, iteration, mapper)
        iteration += 1
        frames += stats.frames
        game_frames = frames * env.frame_skip
        rooms_seen |= stats.rooms
        max_level_seen = max(max_level_seen, stats.max_level, archive.max_level)
        while game_frames >= next_sample:
            metrics.append(metric_row())
            next_sample += interval
        if on_iteration is not None:
            on_iteration(archive, snap_meta())

    if not metrics or metrics[-1].game_frames != game_frames:
        metrics.append(metric_row())
    return Phase1Result(archive=archive, meta=snap_meta(), metrics=metrics)


def baseline_from_start(
    env_factory: Callable[[], SnapshotEnv],
    cfg: ExploreConfig,
    mapper: CellMapper,
    stop_condition: Callable[[Archive, RunMeta], bool] | None = None,
) -> Phase1Result:
    """Control condition: identical random exploration, but every rollout
    starts from the reset state. Discoveries land in a shadow archive that is
    never used to pick starting points."""
    cfg = cfg.validate()
    env = env_factory()
    start = time.perf_counter()
    archive, start_key, rooms_seen = _seed_archive(env, cfg.seed, mapper)
    start_record = archive.cells[start_key]
    iteration = 0
    frames = 0
    max_level_seen = 0
    metrics: list[MetricsRow] = []
    game_frames = 0
    next_sample = cfg.metric_interval_game_frames

    while frames < cfg.budget_training_frames:
        meta = RunMeta(cfg.seed, iteration, frames, game_frames,
                       frozenset(rooms_seen), max_level_seen)
        if stop_condition is not None and stop_condition(archive, meta):
            break
        results = []
        for worker in range(cfg.batch_size):
            rng = stream(cfg.seed, TAG_BASELINE, iteration, worker)
            results.append(
                explore_from(env, start_key, start_record, rng, cfg, mapper)
            )
        stats = merge_results(archive, results)
        iteration += 1
        frames += stats.frames
        game_frames = frames * env.frame_skip
        rooms_seen |= stats.rooms
        max_level_seen = max(max_level_seen, stats.max_level, archive.max_level)
        while game_frames >= next_sample:
            metrics.append(
                MetricsRow(game_frames, frames, len(archive), len(rooms_seen),
                           archive.max_score(), max_level_seen,
                           time.perf_counter() - start)
            )
            next_sample += cfg.metric_interval_game_frames

    meta = RunMeta(cfg.seed, iteration, frames, game_frames,
                   frozenset(rooms_seen), max_level_seen)
    if not metrics or metrics[-1].game_frames != game_frames:
        metrics.append(
            MetricsRow(game_frames, frames, len(archive), len(rooms_seen),
                       archive.max_score(), max_level_seen,
                       time.perf_counter() - start)
        )
    return Phase1Result(archive=archive, meta=meta, metrics=metrics)


def myopic_greedy_baseline(
    env_factory: Callable[[], SnapshotEnv],
    budget_training_frames: int,
    seed: int = 0,
) -> float:
    """Reward-greedy control: pick the action with the best immediate reward
    via one-step lookahead, preferring no-op on ties.

    In deceptive-reward worlds every action from most states looks no better
    than doing nothing, so this baseline settles into the stand-still local
    optimum. Returns the best episode score achieved within the budget.
    """
    env = env_factory()
    env.reset(seed)
    best = env.cum_score
    frames = 0
    while frames < budget_training_frames:
        if env.done:
            best = max(best, env.cum_score)
            env.reset(seed)
        here = env.snapshot()
        # Evaluate no-op first so ties keep it.
        order = [env.noop_action] + [
            a for a in range(env.action_count) if a != env.noop_action
        ]
        choice, choice_reward = env.noop_action, float("-inf")
        for action in order:
            env.restore(here)
            result = env.step(action)
            if result.reward > choice_reward:
                choice, choice_reward = action, result.reward
        env.restore(here)
        env.step(choice)
        frames += 1
        best = max(best, env.cum_score)
    return best


# -- replay verification --------------------------------------------------------

def replay_record(
    env: SnapshotEnv,
    record: CellRecord,
    key: CellKey,
    mapper: CellMapper,
    seed: int = 0,
) -> None:
    """Replay a record's trajectory from reset and verify score, final cell,
    and snapshot bytes against what the archive stored."""
    obs, _ = env.reset(seed)
    final_obs, final_info = obs, obs.features
    for action in record.trajectory.actions():
        result = env.step(action)
        if result.done:
            raise IntegrityError("stored trajectory ends an episode early")
        final_obs, final_info = result.obs, result.info
    if env.cum_score != record.score:
        raise IntegrityError(
            f"replayed score {env.cum_score} != stored {record.score}"
        )
    if mapper(final_obs, final_info) != key:
        raise IntegrityError("replayed trajectory lands in a different cell")
    if env.snapshot().state_bytes != record.snapshot.state_bytes:
        raise IntegrityError("replayed snapshot differs from stored snapshot")
