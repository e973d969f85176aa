"""Stochasticity wrappers used for robustification and evaluation.

The base environments are deterministic; test-time stochasticity is layered
on through these wrappers. Wrapper randomness is reseeded by ``reset(seed)``
and is *not* part of snapshots: restoring a snapshot rewinds the world, not
the noise stream, so repeated restores see fresh perturbations.
"""

from __future__ import annotations

from ..errors import ConfigError
from ..seeding import TAG_WRAPPER, stream
from .base import EnvSnapshot, Observation, SnapshotEnv, StepResult

_SALT_STICKY = 1
_SALT_NOOP = 2


class _Delegate(SnapshotEnv):
    def __init__(self, inner: SnapshotEnv) -> None:
        self.inner = inner

    @property
    def action_count(self) -> int:  # type: ignore[override]
        return self.inner.action_count

    @property
    def noop_action(self) -> int:  # type: ignore[override]
        return self.inner.noop_action

    @property
    def frame_skip(self) -> int:  # type: ignore[override]
        return self.inner.frame_skip

    @property
    def config_hash(self) -> int:  # type: ignore[override]
        return self.inner.config_hash

    @property
    def episode_end_policy(self) -> str:  # type: ignore[override]
        return self.inner.episode_end_policy

    @property
    def cum_score(self) -> float:
        return self.inner.cum_score

    @property
    def done(self) -> bool:
        return self.inner.done

    def observe(self) -> Observation:
        return self.inner.observe()

    def discrete_state(self) -> tuple[int, ...]:
        return self.inner.discrete_state()

    def frame_counters(self) -> tuple[int, int]:
        return self.inner.frame_counters()

    def snapshot(self) -> EnvSnapshot:
        return self.inner.snapshot()

    def step(self, action: int) -> StepResult:
        return self.inner.step(action)

    def reset(self, seed: int) -> tuple[Observation, EnvSnapshot]:
        return self.inner.reset(seed)

    def restore(self, snap: EnvSnapshot) -> None:
        self.inner.restore(snap)


class StickyActions(_Delegate):
    """With probability ``p`` per training frame, repeat the last executed
    action instead of the submitted one. The first action after a reset or a
    restore is never replaced."""

    def __init__(self, inner: SnapshotEnv, p: float) -> None:
        if not 0.0 <= p < 1.0:
            raise ConfigError("sticky probability must satisfy 0 <= p < 1")
        super().__init__(inner)
        self.p = p
        self._prev: int | None = None
        self._rng = stream(0, TAG_WRAPPER, _SALT_STICKY)
        self.replaced_count = 0
        self.step_count = 0

    def reset(self, seed: int) -> tuple[Observation, EnvSnapshot]:
        self._rng = stream(seed, TAG_WRAPPER, _SALT_STICKY)
        self._prev = None
        return self.inner.reset(seed)

    def restore(self, snap: EnvSnapshot) -> None:
        self._prev = None
        self.inner.restore(snap)

    def step(self, action: int) -> StepResult:
        executed = action
        if self._prev is not None and self.p > 0.0 and self._rng.random() < self.p:
            executed = self._prev
            self.replaced_count += 1
        self.step_count += 1
        self._prev = executed
        return self.inner.step(executed)


class RandomNoops(_Delegate):
    """Inject a uniform number of no-op actions in [0, max_noops] on reset,
    before control passes to the agent."""

    def __init__(self, inner: SnapshotEnv, max_noops: int) -> None:
        if max_noops < 0:
            raise ConfigError("max_noops must be >= 0")
        super().__init__(inner)
        self.max_noops = max_noops
        self._rng = stream(0, TAG_WRAPPER, _SALT_NOOP)
        self.last_noops = 0

    def reset(self, seed: int) -> tuple[Observation, EnvSnapshot]:
        self._rng = stream(seed, TAG_WRAPPER, _SALT_NOOP)
        obs, snap = self.inner.reset(seed)
        n = int(self._rng.integers(0, self.max_noops + 1)) if self.max_noops else 0
        self.last_noops = n
        for _ in range(n):
            if self.inner.done:
                break
            self.inner.step(self.inner.noop_action)
        if n:
            obs, snap = self.inner.observe(), self.inner.snapshot()
        return obs, snap


def wrap_sticky(env: SnapshotEnv, p: float) -> SnapshotEnv:
    """Identity when p == 0, else a :class:`StickyActions` wrapper."""
    if p == 0.0:
        return env
    return StickyActions(env, p)


def wrap_noops(env: SnapshotEnv, max_noops: int) -> SnapshotEnv:
    """Identity when max_noops == 0, else a :class:`RandomNoops` wrapper."""
    if max_noops == 0:
        return env
    return RandomNoops(env, max_noops)


def force_noops(env: SnapshotEnv, n: int) -> None:
    """Step exactly ``n`` no-ops; the evaluation protocol's deterministic
    counterpart of :class:`RandomNoops`."""
    for _ in range(n):
        if env.done:
            break
        env.step(env.noop_action)
