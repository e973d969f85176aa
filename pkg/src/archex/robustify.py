"""Backward-curriculum robustification over a pluggable learner.

Demonstrations exported from archives are replayed into per-frame cumulative
rewards plus periodic snapshots. Training starts rollouts at each
demonstration's ``max_starting_point`` (initially its end), counts an attempt
as a success when the rollout's final unshaped score reaches the
demonstration's, and walks the starting point toward 0 whenever the windowed
success rate clears the threshold. Stochastic wrappers (sticky actions
throughout, random no-ops once the start reaches frame 0) force the learned
policy to be robust rather than a replay.

The reference learner is a tabular action-value learner over the
environment's discrete state; a replay-oracle learner exists for harness
tests.
"""

from __future__ import annotations

import hashlib
import struct
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .archive import Archive, CellRecord
from .cells import CellKey, DomainKey
from .envs.base import EnvSnapshot, SnapshotEnv
from .errors import (
    CheckpointError,
    ConfigError,
    ContractError,
    IntegrityError,
    ShortfallError,
)
from .seeding import TAG_ATTEMPT, stream
from .envs.wrappers import force_noops, wrap_sticky

POLICY_MAGIC = b"AXPOLC\x00\x01"
POLICY_VERSION = 1


# -- demonstrations -------------------------------------------------------------

@dataclass(slots=True)
class Demonstration:
    """A materialized high-scoring trajectory with per-frame bookkeeping.

    ``cum_rewards[t]`` is the cumulative unshaped reward after t actions
    (``cum_rewards[0] == 0``). Snapshots are stored every ``stride`` frames;
    intermediate frames are materialized by deterministic replay fill-in.
    """

    actions: list[int]
    cum_rewards: list[float]
    snapshots: dict[int, EnvSnapshot]
    stride: int
    level: int
    score: float
    label: str = ""

    @property
    def length(self) -> int:
        return len(self.actions)

    def reward_at(self, frame: int) -> float:
        return self.cum_rewards[frame] - self.cum_rewards[frame - 1]

    def snapshot_at(self, frame: int, env: SnapshotEnv) -> EnvSnapshot:
        """Snapshot at an arbitrary frame, replaying from the nearest stored
        one on a *deterministic* environment."""
        if not 0 <= frame <= self.length:
            raise ContractError(f"frame {frame} outside demonstration")
        stored = max(f for f in self.snapshots if f <= frame)
        if stored == frame:
            return self.snapshots[stored]
        env.restore(self.snapshots[stored])
        for action in self.actions[stored:frame]:
            env.step(action)
        return env.snapshot()

    def relative_cum(self, start: int) -> list[float]:
        """Cumulative rewards measured from ``start`` to the demo end."""
        base = self.cum_rewards[start]
        return [c - base for c in self.cum_rewards[start:]]


def build_demonstration(
    env: SnapshotEnv,
    key: CellKey,
    record: CellRecord,
    stride: int = 25,
    label: str = "",
) -> Demonstration:
    """Replay a record from reset into a Demonstration, verifying integrity."""
    if stride < 1:
        raise ConfigError("snapshot stride must be >= 1")
    actions = record.trajectory.actions()
    obs, snap = env.reset(0)
    cum = [0.0]
    snaps = {0: snap}
    level = obs.features.level if obs.features else 0
    for i, action in enumerate(actions, start=1):
        result = env.step(action)
        if result.done:
            raise IntegrityError("demonstration steps through an episode end")
        cum.append(env.cum_score)
        if i % stride == 0:
            snaps[i] = env.snapshot()
        level = result.info.level
    if env.cum_score != record.score:
        raise IntegrityError(
            f"demonstration replays to {env.cum_score}, archive says {record.score}"
        )
    if env.snapshot().state_bytes != record.snapshot.state_bytes:
        raise IntegrityError("demonstration end state differs from archive snapshot")
    if isinstance(key, DomainKey):
        level = key.level
    return Demonstration(actions, cum, snaps, stride, level, cum[-1], label)


def select_demonstrations(
    archives: Sequence[Archive],
    n: int,
    env: SnapshotEnv,
    stride: int = 25,
) -> list[Demonstration]:
    """Best record per qualifying archive, highest-level archives only.

    Archives whose max level is below the maximum across all given archives
    are excluded entirely, and each demonstration is taken at that level.
    """
    if not archives:
        raise ShortfallError("no archives given")
    top = max(a.max_level for a in archives)
    qualifying = [a for a in archives if a.max_level == top]
    if len(qualifying) < n:
        raise ShortfallError(
            f"need {n} demonstrations at level {top}, "
            f"only {len(qualifying)} of {len(archives)} archives qualify"
        )

    def at_top(key: CellKey, record: CellRecord) -> bool:
        return not isinstance(key, DomainKey) or key.level == top

    demos = []
    for i, archive in enumerate(qualifying[:n]):
        key, record = archive.best_record(at_top)
        demos.append(build_demonstration(env, key, record, stride, label=f"demo{i}"))
    return demos


def truncate_demo(
    demo: Demonstration,
    max_frames: int | None = None,
    to_last_reward: bool = False,
) -> Demonstration:
    """Prefix a demonstration, optionally ending right after its last
    strictly positive reward."""
    length = demo.length
    if max_frames is not None:
        if max_frames < 1:
            raise ConfigError("max_frames must be >= 1")
        length = min(length, max_frames)
    if to_last_reward:
        while length > 0 and demo.reward_at(length) <= 0:
            length -= 1
        if length == 0:
            raise ContractError("no positive reward in the demonstration prefix")
    return Demonstration(
        actions=demo.actions[:length],
        cum_rewards=demo.cum_rewards[:length + 1],
        snapshots={f: s for f, s in demo.snapshots.items() if f <= length},
        stride=demo.stride,
        level=demo.level,
        score=demo.cum_rewards[length],
        label=demo.label,
    )


# -- reward shaping and early termination -----------------------------------------

@dataclass(frozen=True)
class RewardShaping:
    """Either clip to [-1, 1] or multiply by a small constant."""

    mode: str = "clip"  # "clip" | "scale"
    scale: float = 0.001

    def __call__(self, reward: float) -> float:
        if self.mode == "clip":
            return max(-1.0, min(1.0, reward))
        return reward * self.scale

    def validate(self) -> "RewardShaping":
        if self.mode not in ("clip", "scale"):
            raise ConfigError(f"unknown reward shaping mode {self.mode!r}")
        return self


def shape_reward(reward: float, shaping: RewardShaping) -> float:
    return shaping(reward)


def early_terminate(
    rollout_cum: Sequence[float],
    demo_cum: Sequence[float],
    t: int,
    start: int,
    window: int | float | None,
    deficit: float,
) -> bool:
    """Sliding-window laggard check.

    Both series are cumulative rewards measured from the starting frame:
    index j holds the total collected in the first j frames after ``start``.
    ``t`` is the absolute frame, so ``t - start`` frames have elapsed. True
    iff the window has fully elapsed and the rollout's total is more than
    ``deficit`` below the demonstration's total from ``window`` frames
    earlier. Reads past the end of either series clamp to its final value.
    """
    if window is None or window == float("inf") or deficit == float("inf"):
        return False
    elapsed = t - start
    if elapsed < window:
        return False
    roll = rollout_cum[min(elapsed, len(rollout_cum) - 1)]
    demo = demo_cum[min(int(elapsed - window), len(demo_cum) - 1)]
    return roll < demo - deficit


# -- learners -------------------------------------------------------------------

class Learner:
    """Minimal learner interface consumed by :func:`backward_run`."""

    def begin_rollout(self, demo: Demonstration, start: int) -> None:
        pass

    def act(self, state: tuple, rng: np.random.Generator) -> int:
        raise NotImplementedError

    def update(self, transitions: list[tuple]) -> None:
        pass

    def policy(self) -> "Policy":
        raise NotImplementedError


class Policy:
    """Evaluation-time action selector."""

    def act(self, env: SnapshotEnv, rng: np.random.Generator) -> int:
        raise NotImplementedError


@dataclass(frozen=True)
class TabularQConfig:
    alpha: float = 0.2
    gamma: float = 0.99
    epsilon: float = 0.1


class TabularQLearner(Learner):
    """Q-learning over the environment's discrete state tuple."""

    def __init__(self, n_actions: int, cfg: TabularQConfig = TabularQConfig()) -> None:
        self.n_actions = n_actions
        self.cfg = cfg
        self.q: dict[tuple, list[float]] = {}

    def _row(self, state: tuple) -> list[float]:
        row = self.q.get(state)
        if row is None:
            row = [0.0] * self.n_actions
            self.q[state] = row
        return row

    def act(self, state: tuple, rng: np.random.Generator) -> int:
        if rng.random() < self.cfg.epsilon:
            return int(rng.integers(self.n_actions))
        row = self.q.get(state)
        if row is None:
            return int(rng.integers(self.n_actions))
        return max(range(self.n_actions), key=row.__getitem__)

    def update(self, transitions: list[tuple]) -> None:
        alpha, gamma = self.cfg.alpha, self.cfg.gamma
        for state, action, reward, next_state, done in transitions:
            row = self._row(state)
            target = reward
            if not done:
                nxt = self.q.get(next_state)
                if nxt is not None:
                    target += gamma * max(nxt)
            row[action] += alpha * (target - row[action])

    def policy(self) -> "GreedyTabularPolicy":
        return GreedyTabularPolicy({s: list(r) for s, r in self.q.items()},
                                   self.n_actions)


class GreedyTabularPolicy(Policy):
    def __init__(self, q: dict[tuple, list[float]], n_actions: int) -> None:
        self.q = q
        self.n_actions = n_actions

    def act(self, env: SnapshotEnv, rng: np.random.Generator) -> int:
        row = self.q.get(env.discrete_state())
        if row is None:
            return int(rng.integers(self.n_actions))
        return max(range(self.n_actions), key=row.__getitem__)


class ReplayOracleLearner(Learner):
    """Replays the demonstration's own actions; a harness tool for verifying
    the curriculum mechanics under a deterministic environment."""

    def __init__(self) -> None:
        self._actions: list[int] = []
        self._pos = 0
        self._noop = 0

    def begin_rollout(self, demo: Demonstration, start: int) -> None:
        self._actions = demo.actions
        self._pos = start

    def act(self, state: tuple, rng: np.random.Generator) -> int:
        del state, rng
        if self._pos < len(self._actions):
            action = self._actions[self._pos]
            self._pos += 1
            return action
        return self._noop

    def policy(self) -> Policy:
        raise ContractError("the replay oracle has no standalone policy")


# -- the control loop --------------------------------------------------------------

@dataclass(frozen=True)
class BackwardConfig:
    success_threshold: float = 0.1
    advance_interval: int | None = None     # None -> 200 * n_demos
    delta: int = 1                          # starting-point shift per advance
    window: int = 50                        # early-termination window, frames
    allowed_deficit: float = 0.0
    shaping: RewardShaping = RewardShaping("clip")
    start_offset: int = 0                   # initial offset back from the demo end
    sticky_p: float = 0.25
    max_noops: int = 30
    max_attempts: int = 1_000_000
    frame_budget: int | None = None
    rollout_frame_cap: int | None = None
    checkpoint_interval_attempts: int = 0   # extra checkpoints; advances always checkpoint

    def validate(self) -> "BackwardConfig":
        if not 0 < self.success_threshold <= 1:
            raise ConfigError("success_threshold must be in (0, 1]")
        if self.delta < 1:
            raise ConfigError("delta must be >= 1")
        if self.window < 1:
            raise ConfigError("window must be >= 1")
        if self.advance_interval is not None and self.advance_interval < 1:
            raise ConfigError("advance_interval must be >= 1")
        if self.start_offset < 0:
            raise ConfigError("start_offset must be >= 0")
        self.shaping.validate()
        return self


@dataclass(slots=True)
class DemoProgress:
    max_starting_point: int
    window: deque
    attempts: int = 0
    attempts_since_check: int = 0
    last_rate: float = float("nan")
    zero_confirmed: bool = False
    history: list[tuple[int, int]] = field(default_factory=list)


@dataclass(slots=True)
class ProgressRow:
    attempts: int
    max_starting_points: tuple[int, ...]
    success_rates: tuple[float, ...]
    last_score: float


@dataclass(slots=True)
class PolicyCheckpoint:
    q: dict[tuple, list[float]]
    n_actions: int
    min_msp: int
    attempts: int


@dataclass(slots=True)
class BackwardResult:
    progress: list[ProgressRow]
    demo_progress: list[DemoProgress]
    checkpoints: list[PolicyCheckpoint]
    attempts: int
    frames: int

    def min_starting_point(self) -> int:
        return min(p.max_starting_point for p in self.demo_progress)

    def reached_within(self, units: int) -> bool:
        """Reporting convention: success once any curve comes this close to 0."""
        return any(p.max_starting_point <= units for p in self.demo_progress)


def backward_run(
    demos: Sequence[Demonstration],
    learner: Learner,
    env_factory: Callable[[], SnapshotEnv],
    cfg: BackwardConfig,
    seed: int = 0,
) -> BackwardResult:
    """Train a learner along the demonstrations' backward curriculum."""
    cfg = cfg.validate()
    if not demos:
        raise ShortfallError("backward_run needs at least one demonstration")
    interval = cfg.advance_interval or 200 * len(demos)
    materialize_env = env_factory()          # deterministic, for snapshot fill-in
    env = wrap_sticky(env_factory(), cfg.sticky_p)

    progress = [
        DemoProgress(
            max_starting_point=max(0, d.length - cfg.start_offset),
            window=deque(maxlen=interval),
        )
        for d in demos
    ]
    rows: list[ProgressRow] = []
    checkpoints: list[PolicyCheckpoint] = []
    attempts = 0
    frames = 0

    def take_checkpoint() -> None:
        if not isinstance(learner, TabularQLearner):
            return
        checkpoints.append(
            PolicyCheckpoint(
                q={s: list(r) for s, r in learner.q.items()},
                n_actions=learner.n_actions,
                min_msp=min(p.max_starting_point for p in progress),
                attempts=attempts,
            )
        )

    def emit_row(last_score: float) -> None:
        rows.append(
            ProgressRow(
                attempts=attempts,
                max_starting_points=tuple(p.max_starting_point for p in progress),
                success_rates=tuple(p.last_rate for p in progress),
                last_score=last_score,
            )
        )

    while attempts < cfg.max_attempts:
        if cfg.frame_budget is not None and frames >= cfg.frame_budget:
            break
        if all(p.zero_confirmed for p in progress):
            break
        rng = stream(seed, TAG_ATTEMPT, attempts)
        demo_idx = int(rng.integers(len(demos)))
        demo = demos[demo_idx]
        prog = progress[demo_idx]
        start = prog.max_starting_point

        env.reset(int(rng.integers(2**63)))
        env.restore(demo.snapshot_at(start, materialize_env))
        if start == 0 and cfg.max_noops > 0:
            force_noops(env, int(rng.integers(0, cfg.max_noops + 1)))

        learner.begin_rollout(demo, start)
        score_at_start = env.cum_score
        demo_rel = demo.relative_cum(start)
        rel = [0.0]
        transitions: list[tuple] = []
        success = env.cum_score >= demo.score
        while not success:
            t_rel = len(rel) - 1
            if env.done:
                break
            if cfg.rollout_frame_cap is not None and t_rel >= cfg.rollout_frame_cap:
                break
            if early_terminate(rel, demo_rel, start + t_rel, start,
                               cfg.window, cfg.allowed_deficit):
                break
            state = env.discrete_state()
            action = learner.act(state, rng)
            result = env.step(action)
            frames += 1
            rel.append(env.cum_score - score_at_start)
            transitions.append(
                (state, action, cfg.shaping(result.reward),
                 env.discrete_state(), result.done)
            )
            success = env.cum_score >= demo.score
        learner.update(transitions)

        attempts += 1
        prog.attempts += 1
        prog.attempts_since_check += 1
        prog.window.append(1.0 if success else 0.0)

        if prog.attempts_since_check >= interval:
            prog.attempts_since_check = 0
            rate = sum(prog.window) / len(prog.window)
            prog.last_rate = rate
            if rate >= cfg.success_threshold:
                if prog.max_starting_point > 0:
                    prog.max_starting_point = max(0, prog.max_starting_point - cfg.delta)
                    prog.window.clear()
                else:
                    prog.zero_confirmed = True
                prog.history.append((attempts, prog.max_starting_point))
                take_checkpoint()
            emit_row(env.cum_score)

        if (cfg.checkpoint_interval_attempts
                and attempts % cfg.checkpoint_interval_attempts == 0):
            take_checkpoint()

    take_checkpoint()
    emit_row(env.cum_score if attempts else float("nan"))
    return BackwardResult(
        progress=rows,
        demo_progress=progress,
        checkpoints=checkpoints,
        attempts=attempts,
        frames=frames,
    )


# -- policy checkpoint files -------------------------------------------------------

def _pack_state(state: tuple) -> bytes:
    return struct.pack(f"<H{len(state)}q", len(state), *state)


def save_policy(checkpoint: PolicyCheckpoint, path, config_hash: int) -> None:
    parts = [
        POLICY_MAGIC,
        struct.pack("<HQQQI", POLICY_VERSION, config_hash,
                    checkpoint.min_msp, checkpoint.attempts, checkpoint.n_actions),
        struct.pack("<Q", len(checkpoint.q)),
    ]
    for state in sorted(checkpoint.q, key=_pack_state):
        enc = _pack_state(state)
        parts.append(struct.pack("<I", len(enc)))
        parts.append(enc)
        parts.append(struct.pack(f"<{checkpoint.n_actions}d", *checkpoint.q[state]))
    body = b"".join(parts)
    with open(path, "wb") as fh:
        fh.write(body + hashlib.sha256(body).digest())


def load_policy(path, expected_config_hash: int | None = None) -> PolicyCheckpoint:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 40 or data[:8] != POLICY_MAGIC:
        raise CheckpointError("not a policy checkpoint")
    body, digest = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError("policy checkpoint is corrupt (checksum mismatch)")
    try:
        offset = 8
        version, chash, msp, attempts, n_actions = struct.unpack_from("<HQQQI", body, offset)
        if version != POLICY_VERSION:
            raise CheckpointError(f"policy version {version} unsupported")
        if expected_config_hash is not None and chash != expected_config_hash:
            raise CheckpointError("policy checkpoint is from a different env config")
        offset += struct.calcsize("<HQQQI")
        (n_states,) = struct.unpack_from("<Q", body, offset)
        offset += 8
        q: dict[tuple, list[float]] = {}
        for _ in range(n_states):
            (enc_len,) = struct.unpack_from("<I", body, offset)
            offset += 4
            (n_ints,) = struct.unpack_from("<H", body, offset)
            state = struct.unpack_from(f"<{n_ints}q", body, offset + 2)
            offset += enc_len
            row = list(struct.unpack_from(f"<{n_actions}d", body, offset))
            offset += 8 * n_actions
            q[tuple(state)] = row
    except struct.error as exc:
        raise CheckpointError(f"policy checkpoint corrupt: {exc}") from exc
    return PolicyCheckpoint(q=q, n_actions=n_actions, min_msp=msp, attempts=attempts)


def policy_from_checkpoint(checkpoint: PolicyCheckpoint) -> GreedyTabularPolicy:
    return GreedyTabularPolicy(checkpoint.q, checkpoint.n_actions)


def best_checkpoint(
    candidates: Sequence[PolicyCheckpoint],
    evaluator: Callable[[PolicyCheckpoint, int], float],
    rng: np.random.Generator,
    near: int = 50,
    max_tested: int = 10,
) -> tuple[PolicyCheckpoint, float, float]:
    """Pick among the checkpoints with (near-)lowest max_starting_point.

    A random subset of at most ``max_tested`` is scored with
    ``evaluator(checkpoint, eval_index)``; the winner is re-evaluated on a
    fresh index and that retest score is the one to report, correcting for
    the selection bias of picking the max.
    """
    if not candidates:
        raise ShortfallError("no policy checkpoints to choose from")
    floor = min(c.min_msp for c in candidates)
    pool = [c for c in candidates if c.min_msp <= floor + near]
    if len(pool) > max_tested:
        idx = sorted(rng.choice(len(pool), size=max_tested, replace=False).tolist())
        pool = [pool[i] for i in idx]
    scores = [evaluator(c, i) for i, c in enumerate(pool)]
    best_i = max(range(len(pool)), key=scores.__getitem__)
    retest = evaluator(pool[best_i], len(pool))
    return pool[best_i], scores[best_i], retest


def write_progress_csv(result: BackwardResult, path) -> None:
    import csv

    n = len(result.demo_progress)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["attempts"]
            + [f"max_starting_point_{i}" for i in range(n)]
            + [f"success_rate_{i}" for i in range(n)]
            + ["last_score"]
        )
        for row in result.progress:
            writer.writerow(
                [row.attempts, *row.max_starting_points,
                 *row.success_rates, row.last_score]
            )
