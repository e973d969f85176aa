"""The cell archive: trajectories, records, counters, and checkpoints.

Trajectories are stored as shared-suffix linked lists: extending by one
action allocates a single node and never touches existing nodes, so the total
node count is bounded by the number of exploration actions ever taken.
Archives serialize to a canonical, versioned binary layout (sorted cells,
deduplicated trajectory nodes, trailing checksum) so that equal archives have
equal bytes and corrupt files are detected on load.
"""

from __future__ import annotations

import enum
import hashlib
import struct
from dataclasses import dataclass
from typing import Callable, Iterator

from .cells import CellKey, DomainKey, MoreKeysProbe, decode_key
from .envs.base import EnvSnapshot, peek_config_hash
from .errors import CheckpointError, ContractError
from .trajectory import Trajectory

CHECKPOINT_MAGIC = b"AXARCH\x00\x01"
CHECKPOINT_VERSION = 1


class UpdateOutcome(enum.Enum):
    ADDED = "added"
    IMPROVED = "improved"
    UNCHANGED = "unchanged"


@dataclass(slots=True)
class CellRecord:
    trajectory: Trajectory
    snapshot: EnvSnapshot
    score: float
    traj_len: int
    times_seen: int = 1
    times_chosen: int = 0
    times_chosen_since_new: int = 0


@dataclass(slots=True)
class RunMeta:
    """Explorer progress stored alongside an archive in checkpoints."""

    seed: int = 0
    iteration: int = 0
    training_frames: int = 0
    game_frames: int = 0
    rooms_seen: frozenset[int] = frozenset()
    max_level_seen: int = 0


class Archive:
    """Map from cell keys to their best known record."""

    def __init__(self, config_hash: int) -> None:
        self.config_hash = config_hash
        self.cells: dict[CellKey, CellRecord] = {}
        self.max_level = 0
        self._pos_index: dict[tuple[int, int, int, int], list[DomainKey]] = {}
        self._sorted_keys: list[CellKey] | None = None

    def __len__(self) -> int:
        return len(self.cells)

    def __contains__(self, key: CellKey) -> bool:
        return key in self.cells

    def record(self, key: CellKey) -> CellRecord:
        try:
            return self.cells[key]
        except KeyError:
            raise ContractError(f"cell {key!r} not in archive") from None

    def sorted_keys(self) -> list[CellKey]:
        """Keys in canonical (encoded-bytes) order; cached between inserts."""
        if self._sorted_keys is None:
            self._sorted_keys = sorted(self.cells, key=lambda k: k.encode())
        return self._sorted_keys

    # -- updates -----------------------------------------------------------

    def insert_or_update(
        self,
        key: CellKey,
        trajectory: Trajectory,
        score: float,
        traj_len: int,
        snapshot: EnvSnapshot,
    ) -> UpdateOutcome:
        if traj_len != trajectory.length:
            raise ContractError("candidate traj_len disagrees with trajectory")
        if peek_config_hash(snapshot.state_bytes) != self.config_hash:
            raise ContractError("candidate snapshot from a different env config")
        record = self.cells.get(key)
        if record is None:
            self.cells[key] = CellRecord(trajectory, snapshot, score, traj_len)
            self._sorted_keys = None
            if isinstance(key, DomainKey):
                if key.level > self.max_level:
                    self.max_level = key.level
                pos = (key.x_bin, key.y_bin, key.room, key.level)
                self._pos_index.setdefault(pos, []).append(key)
            return UpdateOutcome.ADDED
        record.times_seen += 1
        if score > record.score or (score == record.score and traj_len < record.traj_len):
            record.trajectory = trajectory
            record.snapshot = snapshot
            record.score = score
            record.traj_len = traj_len
            record.times_chosen = 0
            record.times_chosen_since_new = 0
            return UpdateOutcome.IMPROVED
        return UpdateOutcome.UNCHANGED

    def record_chosen(self, key: CellKey) -> None:
        record = self.record(key)
        record.times_chosen += 1
        record.times_chosen_since_new += 1

    def credit_discovery(self, key: CellKey) -> None:
        self.record(key).times_chosen_since_new = 0

    # -- queries -----------------------------------------------------------

    def best_record(
        self, predicate: Callable[[CellKey, CellRecord], bool] | None = None
    ) -> tuple[CellKey, CellRecord]:
        """Highest score, ties to shorter trajectory, then lexicographic key."""
        best: tuple[float, int, bytes, CellKey, CellRecord] | None = None
        for key, record in self.cells.items():
            if predicate is not None and not predicate(key, record):
                continue
            rank = (-record.score, record.traj_len, key.encode())
            if best is None or rank < best[:3]:
                best = (*rank, key, record)
        if best is None:
            raise ContractError("no archive cell matches the filter")
        return best[3], best[4]

    def max_score(self) -> float:
        return max((r.score for r in self.cells.values()), default=0.0)

    def has_neighbor(self, slot: DomainKey | MoreKeysProbe) -> bool:
        if isinstance(slot, MoreKeysProbe):
            base = slot.base
            pos = (base.x_bin, base.y_bin, base.room, base.level)
            return any(slot.matches(k) for k in self._pos_index.get(pos, ()))
        return slot in self.cells

    def items(self) -> Iterator[tuple[CellKey, CellRecord]]:
        return iter(self.cells.items())


# -- checkpoint serialization ---------------------------------------------------


def serialize_archive(archive: Archive, meta: RunMeta | None = None) -> bytes:
    """Canonical bytes for an archive; equal archives serialize equal."""
    meta = meta or RunMeta()
    rooms = sorted(meta.rooms_seen)
    parts = [
        CHECKPOINT_MAGIC,
        struct.pack(
            f"<HQQQQQI{len(rooms)}II",
            CHECKPOINT_VERSION,
            archive.config_hash,
            meta.seed,
            meta.iteration,
            meta.training_frames,
            meta.game_frames,
            len(rooms),
            *rooms,
            meta.max_level_seen,
        ),
    ]

    node_ids: dict[int, int] = {}
    node_rows: list[bytes] = []
    ordered = archive.sorted_keys()
    for key in ordered:
        stack = []
        node = archive.cells[key].trajectory.tail
        while node is not None and id(node) not in node_ids:
            stack.append(node)
            node = node.parent
        while stack:
            node = stack.pop()
            parent_id = 0 if node.parent is None else node_ids[id(node.parent)] + 1
            node_ids[id(node)] = len(node_rows)
            node_rows.append(struct.pack("<HQ", node.action, parent_id))
    parts.append(struct.pack("<Q", len(node_rows)))
    parts.extend(node_rows)

    parts.append(struct.pack("<Q", len(ordered)))
    for key in ordered:
        record = archive.cells[key]
        enc = key.encode()
        tail = record.trajectory.tail
        tail_id = 0 if tail is None else node_ids[id(tail)] + 1
        parts.append(struct.pack("<I", len(enc)))
        parts.append(enc)
        parts.append(
            struct.pack(
                "<dQQQQQdQQI",
                record.score,
                record.traj_len,
                tail_id,
                record.times_seen,
                record.times_chosen,
                record.times_chosen_since_new,
                record.snapshot.cum_score,
                record.snapshot.training_frames,
                record.snapshot.game_frames,
                len(record.snapshot.state_bytes),
            )
        )
        parts.append(record.snapshot.state_bytes)

    body = b"".join(parts)
    return body + hashlib.sha256(body).digest()


def deserialize_archive(data: bytes) -> tuple[Archive, RunMeta]:
    if len(data) < 40 or data[:8] != CHECKPOINT_MAGIC:
        raise CheckpointError("not an archive checkpoint")
    body, digest = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError("archive checkpoint is corrupt (checksum mismatch)")
    try:
        return _parse_body(body)
    except (struct.error, ValueError, IndexError) as exc:
        raise CheckpointError(f"archive checkpoint is corrupt: {exc}") from exc


def _parse_body(body: bytes) -> tuple[Archive, RunMeta]:
    offset = 8
    version, config_hash, seed, iteration, tf, gf, n_rooms = struct.unpack_from(
        "<HQQQQQI", body, offset
    )
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"archive checkpoint version {version} unsupported")
    offset += struct.calcsize("<HQQQQQI")
    rooms = struct.unpack_from(f"<{n_rooms}I", body, offset)
    offset += 4 * n_rooms
    (max_level_seen,) = struct.unpack_from("<I", body, offset)
    offset += 4
    meta = RunMeta(seed, iteration, tf, gf, frozenset(rooms), max_level_seen)

    (n_nodes,) = struct.unpack_from("<Q", body, offset)
    offset += 8
    nodes: list = []
    append = nodes.append
    for _ in range(n_nodes):
        action, parent_id = struct.unpack_from("<HQ", body, offset)
        offset += 10
        parent = None if parent_id == 0 else nodes[parent_id - 1]
        append(Trajectory.make_node(action, parent))

    archive = Archive(config_hash)
    (n_cells,) = struct.unpack_from("<Q", body, offset)
    offset += 8
    for _ in range(n_cells):
        (key_len,) = struct.unpack_from("<I", body, offset)
        offset += 4
        key = decode_key(body[offset:offset + key_len])
        offset += key_len
        (score, traj_len, tail_id, seen, chosen, since_new,
         snap_score, snap_tf, snap_gf, snap_len) = struct.unpack_from(
            "<dQQQQQdQQI", body, offset
        )
        offset += struct.calcsize("<dQQQQQdQQI")
        state = body[offset:offset + snap_len]
        if len(state) != snap_len:
            raise CheckpointError("archive checkpoint truncated mid-cell")
        offset += snap_len
        tail = None if tail_id == 0 else nodes[tail_id - 1]
        record = CellRecord(
            trajectory=Trajectory(tail, traj_len),
            snapshot=EnvSnapshot(state, snap_score, snap_tf, snap_gf),
            score=score,
            traj_len=traj_len,
            times_seen=seen,
            times_chosen=chosen,
            times_chosen_since_new=since_new,
        )
        archive.cells[key] = record
        if isinstance(key, DomainKey):
            if key.level > archive.max_level:
                archive.max_level = key.level
            pos = (key.x_bin, key.y_bin, key.room, key.level)
            archive._pos_index.setdefault(pos, []).append(key)
    if offset != len(body):
        raise CheckpointError("archive checkpoint has trailing bytes")
    return archive, meta


def checkpoint_save(archive: Archive, path, meta: RunMeta | None = None) -> None:
    data = serialize_archive(archive, meta)
    with open(path, "wb") as fh:
        fh.write(data)


def checkpoint_load(path, expected_config_hash: int | None = None) -> tuple[Archive, RunMeta]:
    with open(path, "rb") as fh:
        data = fh.read()
    archive, meta = deserialize_archive(data)
    if expected_config_hash is not None and archive.config_hash != expected_config_hash:
        raise CheckpointError("archive checkpoint is from a different env config")
    return archive, meta
