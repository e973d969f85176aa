"""Shared tile-grid engine behind the synthetic environment suite.

A world is a global grid of tiles, optionally partitioned into rooms. The
engine owns movement, pickups, doors, hazards, level transitions, frame
accounting, rendering, and byte-exact snapshot/restore; concrete
environments are layout builders on top of it.

Dynamics are ticked once per training frame: each :meth:`step` moves the
agent at most one tile and resolves the tile's effects, while the underlying
frame counter advances by ``frame_skip`` game frames (the skipped frames are
identical repeats, and the step reward is the total produced during that
window). ``game_frames == training_frames * frame_skip`` holds exactly,
including in snapshots taken mid-episode.
"""

from __future__ import annotations

import struct

import numpy as np

from ..errors import ConfigError, ContractError, SnapshotFormatError
from .base import (
    _DELTAS,
    DomainInfo,
    EnvSnapshot,
    Observation,
    SnapshotEnv,
    StepResult,
    config_hash_from_lines,
    pack_snapshot,
    unpack_snapshot,
)

TILE_FLOOR = 0
TILE_WALL = 1
TILE_KEY = 2
TILE_DOOR = 3
TILE_HAZARD = 4
TILE_TREASURE = 5

# Rendering intensities, all in [0, 255].
SHADE_FLOOR = 0
SHADE_WALL = 255
SHADE_KEY = 160
SHADE_DOOR_LOCKED = 96
SHADE_DOOR_OPEN = 32
SHADE_HAZARD = 64
SHADE_TREASURE = 224
SHADE_AGENT = 192

_STATE_HEAD = "<dQQBIii"


class GridWorld(SnapshotEnv):
    """Tile-grid environment engine. Subclasses build layouts.

    Layout inputs (set by ``_build``): ``width``/``height``, ``base`` (flat
    bytearray of tile codes), ``spawn``, placements for keys, doors,
    treasures, the room geometry, and behaviour switches (``hazard_policy``
    is ``"kill"`` or ``"respawn"``, ``treasure_mode`` is ``"level"`` or
    ``"collect"``).
    """

    def __init__(
        self,
        *,
        frame_skip: int = 4,
        tile_px: int = 4,
        time_limit_game_frames: int = 400_000,
        key_capacity: int = 8,
    ) -> None:
        super().__init__()
        if frame_skip < 1:
            raise ConfigError("frame_skip must be >= 1")
        if tile_px < 1:
            raise ConfigError("tile_px must be >= 1")
        if time_limit_game_frames < 1:
            raise ConfigError("time_limit_game_frames must be >= 1")
        self.frame_skip = frame_skip
        self.tile_px = tile_px
        self.time_limit_game_frames = time_limit_game_frames
        self.key_capacity = key_capacity

        # Layout, filled in by _build().
        self.width = 0
        self.height = 0
        self.base = bytearray()
        self.spawn = (0, 0)
        self.key_positions: list[tuple[int, int]] = []
        self.key_rewards: list[float] = []
        self.door_positions: list[tuple[int, int]] = []
        self.treasure_positions: list[tuple[int, int]] = []
        self.treasure_values: list[float] = []
        self.hazard_penalty = 0.0
        self.hazard_policy = "kill"
        self.treasure_mode = "level"
        self.render_scope = "room"
        # Room geometry: (rows, cols, interior_w, interior_h); None = one room.
        self.rooms: tuple[int, int, int, int] | None = None

        # Dynamic state.
        self.x = 0
        self.y = 0
        self.level = 0
        self.held: tuple[int, ...] = ()
        self.keys_taken: set[int] = set()
        self.doors_open: set[int] = set()
        self.treasures_taken: set[int] = set()
        self._score = 0.0
        self._training_frames = 0
        self._game_frames = 0

        self._key_at: dict[tuple[int, int], int] = {}
        self._door_at: dict[tuple[int, int], int] = {}
        self._treasure_at: dict[tuple[int, int], int] = {}
        self._bg: list[np.ndarray] = []
        self._viewport: list[tuple[int, int, int, int]] = []  # x0,y0,w,h tiles
        self._dyn: list[list[tuple[int, int, int, int]]] = []

    # -- construction ------------------------------------------------------

    def _build(self) -> None:
        """Called by subclasses after layout fields are populated."""
        self._key_at = {p: i for i, p in enumerate(self.key_positions)}
        self._door_at = {p: i for i, p in enumerate(self.door_positions)}
        self._treasure_at = {p: i for i, p in enumerate(self.treasure_positions)}
        self._validate_layout()
        self.config_hash = config_hash_from_lines(self.config_lines())
        self._prerender()
        self.reset(0)

    def _validate_layout(self) -> None:
        for name, positions in (
            ("key", self.key_positions),
            ("door", self.door_positions),
            ("treasure", self.treasure_positions),
        ):
            for x, y in positions:
                if not (0 <= x < self.width and 0 <= y < self.height):
                    raise ConfigError(f"{name} at ({x},{y}) outside the grid")
        sx, sy = self.spawn
        if self.base[sy * self.width + sx] != TILE_FLOOR:
            raise ConfigError("spawn tile is not floor")

    def config_lines(self) -> list[str]:
        """Canonical description of everything that defines this instance."""
        lines = [
            f"type={type(self).__name__}",
            f"frame_skip={self.frame_skip}",
            f"tile_px={self.tile_px}",
            f"time_limit_game_frames={self.time_limit_game_frames}",
            f"key_capacity={self.key_capacity}",
            f"grid={self.width}x{self.height}",
            f"spawn={self.spawn[0]},{self.spawn[1]}",
            f"hazard_policy={self.hazard_policy}",
            f"hazard_penalty={self.hazard_penalty!r}",
            f"treasure_mode={self.treasure_mode}",
            f"render_scope={self.render_scope}",
            f"rooms={self.rooms}",
            "tiles=" + bytes(self.base).hex(),
            "keys=" + ";".join(f"{x},{y},{r!r}" for (x, y), r in
                               zip(self.key_positions, self.key_rewards)),
            "doors=" + ";".join(f"{x},{y}" for x, y in self.door_positions),
            "treasures=" + ";".join(f"{x},{y},{v!r}" for (x, y), v in
                                    zip(self.treasure_positions, self.treasure_values)),
        ]
        return lines

    # -- geometry ----------------------------------------------------------

    def room_of(self, x: int, y: int) -> int:
        if self.rooms is None:
            return 0
        rows, cols, w, h = self.rooms
        rc = min((x - 1) // (w + 1), cols - 1)
        rr = min((y - 1) // (h + 1), rows - 1)
        return rr * cols + rc

    def room_count(self) -> int:
        if self.rooms is None:
            return 1
        rows, cols, _, _ = self.rooms
        return rows * cols

    def room_origin(self, room: int) -> tuple[int, int]:
        """Top-left interior tile of a room."""
        if self.rooms is None:
            return (1, 1)
        rows, cols, w, h = self.rooms
        rr, rc = divmod(room, cols)
        return (rc * (w + 1) + 1, rr * (h + 1) + 1)

    def respawn_point(self, room: int) -> tuple[int, int]:
        """Where hazard contact drops the agent under the respawn policy."""
        if self.rooms is None:
            return self.spawn
        _, _, w, h = self.rooms
        ox, oy = self.room_origin(room)
        return (ox, oy + h // 2)

    # -- dynamics ----------------------------------------------------------

    def _tile(self, x: int, y: int) -> int:
        code = self.base[y * self.width + x]
        if code == TILE_KEY and self._key_at[(x, y)] in self.keys_taken:
            return TILE_FLOOR
        if code == TILE_DOOR and self._door_at[(x, y)] in self.doors_open:
            return TILE_FLOOR
        if (
            code == TILE_TREASURE
            and self.treasure_mode == "collect"
            and self._treasure_at[(x, y)] in self.treasures_taken
        ):
            return TILE_FLOOR
        return code

    def _tick(self, action: int) -> float:
        reward = 0.0
        dx, dy = _DELTAS[action]
        if dx or dy:
            nx, ny = self.x + dx, self.y + dy
            code = self._tile(nx, ny)
            if code == TILE_WALL:
                pass
            elif code == TILE_DOOR:
                if self.held:
                    # Unlocking consumes the frame and the lowest-room key.
                    self.held = self.held[1:]
                    self.doors_open.add(self._door_at[(nx, ny)])
            else:
                self.x, self.y = nx, ny

        pos = (self.x, self.y)
        code = self.base[self.y * self.width + self.x]
        if code == TILE_KEY:
            idx = self._key_at[pos]
            if idx not in self.keys_taken and len(self.held) < self.key_capacity:
                self.keys_taken.add(idx)
                room = self.room_of(*pos)
                self.held = tuple(sorted(self.held + (room,)))
                reward += self.key_rewards[idx]
        elif code == TILE_TREASURE:
            idx = self._treasure_at[pos]
            if self.treasure_mode == "level":
                reward += self.treasure_values[idx]
                self._advance_level()
            elif idx not in self.treasures_taken:
                self.treasures_taken.add(idx)
                reward += self.treasure_values[idx]
        elif code == TILE_HAZARD:
            if self.hazard_policy == "kill":
                self._done = True
            else:
                reward += self.hazard_penalty
                self.x, self.y = self.respawn_point(self.room_of(*pos))
        return reward

    def _advance_level(self) -> None:
        self.level += 1
        self.held = ()
        self.keys_taken.clear()
        self.doors_open.clear()
        self.x, self.y = self.spawn

    def step(self, action: int) -> StepResult:
        self._require_live()
        if not 0 <= action < self.action_count:
            raise ContractError(f"action {action} out of range")
        total = self._tick(action)
        self._training_frames += 1
        self._game_frames += self.frame_skip
        if not self._done and self._game_frames >= self.time_limit_game_frames:
            self._done = True
        self._score += total
        info = self._info()
        return StepResult(self.observe(), total, self._done, info)

    def reset(self, seed: int = 0) -> tuple[Observation, EnvSnapshot]:
        del seed  # the base environment is deterministic
        self.x, self.y = self.spawn
        self.level = 0
        self.held = ()
        self.keys_taken.clear()
        self.doors_open.clear()
        self.treasures_taken.clear()
        self._score = 0.0
        self._training_frames = 0
        self._game_frames = 0
        self._done = False
        return self.observe(), self.snapshot()

    # -- observation -------------------------------------------------------

    def _info(self) -> DomainInfo:
        return DomainInfo(
            x=self.x,
            y=self.y,
            room=self.room_of(self.x, self.y),
            level=self.level,
            key_rooms=self.held,
        )

    def observe(self) -> Observation:
        return Observation(frame=self.render(), features=self._info())

    def _prerender(self) -> None:
        tp = self.tile_px
        shade = {
            TILE_FLOOR: SHADE_FLOOR,
            TILE_WALL: SHADE_WALL,
            TILE_KEY: SHADE_FLOOR,       # drawn dynamically
            TILE_DOOR: SHADE_FLOOR,      # drawn dynamically
            TILE_HAZARD: SHADE_HAZARD,   # static
            TILE_TREASURE: SHADE_FLOOR,  # drawn dynamically
        }
        if self.render_scope == "grid" or self.rooms is None:
            views = [(0, 0, self.width, self.height)]
        else:
            rows, cols, w, h = self.rooms
            views = []
            for rr in range(rows):
                for rc in range(cols):
                    views.append((rc * (w + 1), rr * (h + 1), w + 2, h + 2))
        self._viewport = views
        self._bg = []
        self._dyn = []
        for x0, y0, vw, vh in views:
            bg = np.zeros((vh * tp, vw * tp), dtype=np.uint8)
            for ty in range(vh):
                for tx in range(vw):
                    code = self.base[(y0 + ty) * self.width + (x0 + tx)]
                    val = shade[code]
                    if val:
                        bg[ty * tp:(ty + 1) * tp, tx * tp:(tx + 1) * tp] = val
            self._bg.append(bg)
            dyn = []
            for kind, positions in (
                (TILE_KEY, self.key_positions),
                (TILE_DOOR, self.door_positions),
                (TILE_TREASURE, self.treasure_positions),
            ):
                for idx, (px, py) in enumerate(positions):
                    if x0 <= px < x0 + vw and y0 <= py < y0 + vh:
                        dyn.append((kind, idx, px - x0, py - y0))
            self._dyn.append(dyn)

    def render(self) -> np.ndarray:
        """Render the current viewport as a fresh uint8 intensity frame."""
        view = 0 if len(self._bg) == 1 else self.room_of(self.x, self.y)
        frame = self._bg[view].copy()
        tp = self.tile_px
        for kind, idx, tx, ty in self._dyn[view]:
            if kind == TILE_KEY:
                if idx in self.keys_taken:
                    continue
                val = SHADE_KEY
            elif kind == TILE_DOOR:
                val = SHADE_DOOR_OPEN if idx in self.doors_open else SHADE_DOOR_LOCKED
            else:
                if self.treasure_mode == "collect" and idx in self.treasures_taken:
                    continue
                val = SHADE_TREASURE
            frame[ty * tp:(ty + 1) * tp, tx * tp:(tx + 1) * tp] = val
        x0, y0, _, _ = self._viewport[view]
        ax, ay = self.x - x0, self.y - y0
        frame[ay * tp:(ay + 1) * tp, ax * tp:(ax + 1) * tp] = SHADE_AGENT
        return frame

    # -- counters / score --------------------------------------------------

    def frame_counters(self) -> tuple[int, int]:
        return self._game_frames, self._training_frames

    @property
    def cum_score(self) -> float:
        return self._score

    # -- snapshot / restore --------------------------------------------------

    def snapshot(self) -> EnvSnapshot:
        parts = [
            struct.pack(
                _STATE_HEAD,
                self._score,
                self._training_frames,
                self._game_frames,
                1 if self._done else 0,
                self.level,
                self.x,
                self.y,
            )
        ]
        for seq in (
            self.held,
            sorted(self.keys_taken),
            sorted(self.doors_open),
            sorted(self.treasures_taken),
        ):
            parts.append(struct.pack(f"<H{len(seq)}H", len(seq), *seq))
        blob = pack_snapshot(self.config_hash, b"".join(parts))
        return EnvSnapshot(
            state_bytes=blob,
            cum_score=self._score,
            training_frames=self._training_frames,
            game_frames=self._game_frames,
        )

    def restore(self, snap: EnvSnapshot) -> None:
        payload = unpack_snapshot(snap.state_bytes, self.config_hash)
        try:
            head = struct.calcsize(_STATE_HEAD)
            score, tf, gf, done, level, x, y = struct.unpack_from(
                _STATE_HEAD, payload, 0
            )
            offset = head
            seqs = []
            for _ in range(4):
                (n,) = struct.unpack_from("<H", payload, offset)
                offset += 2
                seqs.append(struct.unpack_from(f"<{n}H", payload, offset))
                offset += 2 * n
        except struct.error as exc:
            raise SnapshotFormatError(f"snapshot payload corrupt: {exc}") from exc
        self._score = score
        self._training_frames = tf
        self._game_frames = gf
        self._done = bool(done)
        self.level = level
        self.x, self.y = x, y
        self.held = tuple(seqs[0])
        self.keys_taken = set(seqs[1])
        self.doors_open = set(seqs[2])
        self.treasures_taken = set(seqs[3])

    def discrete_state(self) -> tuple[int, ...]:
        return (
            self.x,
            self.y,
            self.level,
            len(self.held),
            *self.held,
            len(self.keys_taken),
            *sorted(self.keys_taken),
            len(self.doors_open),
            *sorted(self.doors_open),
            len(self.treasures_taken),
            *sorted(self.treasures_taken),
        )
