"""Environment interface: deterministic, snapshot-restorable, discrete actions.

Frame accounting follows the two-unit convention: a "training frame" is one
agent decision; each decision repeats the chosen action for ``frame_skip``
"game frames" of the underlying dynamics, and reward is summed over the
skipped frames. Counters are kept in both units and ``game_frames ==
training_frames * frame_skip`` always holds, including for snapshots taken
mid-episode.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

from ..errors import ContractError, SnapshotFormatError

SNAPSHOT_MAGIC = b"AXSN"
SNAPSHOT_VERSION = 1

# Action ids shared by all built-in environments.
ACTION_NOOP = 0
ACTION_UP = 1
ACTION_DOWN = 2
ACTION_LEFT = 3
ACTION_RIGHT = 4
ACTION_COUNT = 5

_DELTAS = {
    ACTION_NOOP: (0, 0),
    ACTION_UP: (0, -1),
    ACTION_DOWN: (0, 1),
    ACTION_LEFT: (-1, 0),
    ACTION_RIGHT: (1, 0),
}


@dataclass(frozen=True, slots=True)
class DomainInfo:
    """Ground-truth features a frame classifier would extract.

    ``x``/``y`` are the agent position in tile units of the global grid,
    ``room`` the current room index, ``level`` the current layout repetition,
    and ``key_rooms`` the sorted rooms in which currently held keys were
    picked up.
    """

    x: int
    y: int
    room: int
    level: int
    key_rooms: tuple[int, ...]


@dataclass(slots=True)
class Observation:
    frame: np.ndarray  # uint8 grid of intensities, shape fixed per instance
    features: DomainInfo | None


@dataclass(slots=True)
class StepResult:
    obs: Observation
    reward: float
    done: bool
    info: DomainInfo


@dataclass(frozen=True, slots=True)
class EnvSnapshot:
    """Opaque, byte-exact environment state.

    ``state_bytes`` fully determines the environment; the remaining fields
    are copies of values inside the blob, exposed for bookkeeping without
    parsing.
    """

    state_bytes: bytes
    cum_score: float
    training_frames: int
    game_frames: int


def config_hash_from_lines(lines: list[str]) -> int:
    """Hash a canonical key=value description of an environment config."""
    digest = hashlib.sha256("\n".join(lines).encode()).digest()
    return int.from_bytes(digest[:8], "little")


def pack_snapshot(config_hash: int, payload: bytes) -> bytes:
    return (
        SNAPSHOT_MAGIC
        + struct.pack("<HQI", SNAPSHOT_VERSION, config_hash, len(payload))
        + payload
    )


def peek_config_hash(blob: bytes) -> int:
    """Read the config hash out of a snapshot blob without full parsing."""
    if len(blob) < 14 or blob[:4] != SNAPSHOT_MAGIC:
        raise SnapshotFormatError("not a snapshot blob")
    (chash,) = struct.unpack_from("<Q", blob, 6)
    return chash


def unpack_snapshot(blob: bytes, expected_config_hash: int) -> bytes:
    """Validate header and return the payload; raises SnapshotFormatError."""
    header = struct.calcsize("<HQI")
    if len(blob) < 4 + header or blob[:4] != SNAPSHOT_MAGIC:
        raise SnapshotFormatError("not a snapshot blob")
    version, chash, plen = struct.unpack_from("<HQI", blob, 4)
    if version != SNAPSHOT_VERSION:
        raise SnapshotFormatError(f"snapshot version {version} not supported")
    if chash != expected_config_hash:
        raise SnapshotFormatError(
            "snapshot was taken under a different environment config"
        )
    payload = blob[4 + header:]
    if len(payload) != plen:
        raise SnapshotFormatError("snapshot payload truncated")
    return payload


class SnapshotEnv:
    """Base class for deterministic snapshot/restore environments.

    Instances are single-owner and not thread-safe; snapshots are immutable
    values and may be shared freely. The base environment itself is fully
    deterministic -- the ``seed`` argument of :meth:`reset` only matters for
    stochastic wrappers layered on top.
    """

    action_count: int = ACTION_COUNT
    noop_action: int = ACTION_NOOP

    def __init__(self) -> None:
        self.config_hash: int = 0
        self.frame_skip: int = 4
        self.episode_end_policy: str = "timeout"
        self._done = True

    # -- interface -------------------------------------------------------

    def reset(self, seed: int) -> tuple[Observation, EnvSnapshot]:
        raise NotImplementedError

    def step(self, action: int) -> StepResult:
        raise NotImplementedError

    def snapshot(self) -> EnvSnapshot:
        raise NotImplementedError

    def restore(self, snap: EnvSnapshot) -> None:
        raise NotImplementedError

    def observe(self) -> Observation:
        raise NotImplementedError

    def discrete_state(self) -> tuple[int, ...]:
        """Compact hashable dynamic state (excludes score and counters)."""
        raise NotImplementedError

    def frame_counters(self) -> tuple[int, int]:
        """Return (game_frames, training_frames) since the last reset."""
        raise NotImplementedError

    @property
    def cum_score(self) -> float:
        raise NotImplementedError

    @property
    def done(self) -> bool:
        return self._done

    def _require_live(self) -> None:
        if self._done:
            raise ContractError("episode has ended; reset or restore first")
