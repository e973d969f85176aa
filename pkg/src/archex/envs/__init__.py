"""Deterministic, snapshot-restorable environments and stochastic wrappers."""

from .base import (
    ACTION_COUNT,
    ACTION_DOWN,
    ACTION_LEFT,
    ACTION_NOOP,
    ACTION_RIGHT,
    ACTION_UP,
    DomainInfo,
    EnvSnapshot,
    Observation,
    SnapshotEnv,
    StepResult,
)
from .gridworld import GridWorld
from .suite import DeceptiveCorridor, KeyDoorWorld, TwoMaze
from .wrappers import RandomNoops, StickyActions, force_noops, wrap_noops, wrap_sticky

__all__ = [
    "ACTION_COUNT",
    "ACTION_DOWN",
    "ACTION_LEFT",
    "ACTION_NOOP",
    "ACTION_RIGHT",
    "ACTION_UP",
    "DeceptiveCorridor",
    "DomainInfo",
    "EnvSnapshot",
    "GridWorld",
    "KeyDoorWorld",
    "Observation",
    "RandomNoops",
    "SnapshotEnv",
    "StepResult",
    "StickyActions",
    "TwoMaze",
    "force_noops",
    "wrap_noops",
    "wrap_sticky",
]
