"""Cell representations: mapping observations to archive keys.

Two interchangeable representations are provided. The domain-agnostic one
downscales the observation frame with area interpolation and quantizes the
result to a small integer range; the domain one bins ground-truth position
features. Keys are small immutable values with structural equality, so two
states mapping to the same key are indistinguishable downstream.

Downscaling is computed in exact integer arithmetic: for output pixel (i, j)
the quantized value is ``floor(mean * (depth + 1) / 256)`` where ``mean`` is
the exact fractional-overlap weighted average of the source block. This makes
the representation bit-exact across platforms and trivially monotone in the
source intensities.
"""

from __future__ import annotations

import enum
import struct
from collections import Counter
from dataclasses import dataclass
from typing import Callable, NamedTuple, Union

import numpy as np

from .envs.base import DomainInfo, Observation
from .errors import ConfigError, RepresentationError


class DownscaleParams(NamedTuple):
    width: int = 11
    height: int = 8
    depth: int = 8  # quantized values span 0..depth inclusive

    def validate(self) -> "DownscaleParams":
        if self.width < 1 or self.height < 1:
            raise ConfigError("downscale width/height must be >= 1")
        if not 1 <= self.depth <= 255:
            raise ConfigError("downscale depth must be in [1, 255]")
        return self


class DownscaledKey(NamedTuple):
    width: int
    height: int
    depth: int
    grid: bytes  # height*width quantized values, row-major

    def encode(self) -> bytes:
        return b"\x01" + struct.pack("<HHH", self.width, self.height, self.depth) + self.grid


class DomainKey(NamedTuple):
    x_bin: int
    y_bin: int
    room: int
    level: int
    key_rooms: tuple[int, ...]  # sorted

    def encode(self) -> bytes:
        return b"\x02" + struct.pack(
            f"<iiII H{len(self.key_rooms)}I",
            self.x_bin,
            self.y_bin,
            self.room,
            self.level,
            len(self.key_rooms),
            *self.key_rooms,
        )


CellKey = Union[DownscaledKey, DomainKey]


def decode_key(data: bytes) -> CellKey:
    tag = data[0]
    if tag == 1:
        w, h, d = struct.unpack_from("<HHH", data, 1)
        grid = data[7:7 + w * h]
        if len(grid) != w * h:
            raise ValueError("truncated downscaled key")
        return DownscaledKey(w, h, d, grid)
    if tag == 2:
        x, y, room, level, n = struct.unpack_from("<iiIIH", data, 1)
        rooms = struct.unpack_from(f"<{n}I", data, 19)
        return DomainKey(x, y, room, level, tuple(rooms))
    raise ValueError(f"unknown cell key tag {tag}")


# -- downscaled representation ------------------------------------------------

_overlap_cache: dict[tuple[int, int], np.ndarray] = {}


def _overlap_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Integer overlap numerators: row i holds out_pixel_i x in_pixel_k
    overlaps scaled by n_out, so each row sums to n_in."""
    got = _overlap_cache.get((n_in, n_out))
    if got is not None:
        return got
    mat = np.zeros((n_out, n_in), dtype=np.int64)
    for i in range(n_out):
        lo, hi = i * n_in, (i + 1) * n_in
        for k in range(max(0, lo // n_out), min(n_in, -(-hi // n_out))):
            ov = min(hi, (k + 1) * n_out) - max(lo, k * n_out)
            if ov > 0:
                mat[i, k] = ov
    _overlap_cache[(n_in, n_out)] = mat
    return mat


def downscale_cell(frame: np.ndarray, params: DownscaleParams) -> DownscaledKey:
    """Area-interpolate ``frame`` to ``params`` size and quantize.

    Each output pixel is floor(block_mean * (depth + 1) / 256) clamped to
    [0, depth], with fractional source blocks weighted by exact overlap.
    """
    if frame.ndim != 2 or frame.size == 0:
        raise RepresentationError("frame must be a non-empty 2-D array")
    h_in, w_in = frame.shape
    rows = _overlap_matrix(h_in, params.height)
    cols = _overlap_matrix(w_in, params.width)
    sums = rows @ frame.astype(np.int64) @ cols.T
    q = (sums * (params.depth + 1)) // (256 * h_in * w_in)
    np.minimum(q, params.depth, out=q)
    return DownscaledKey(
        params.width, params.height, params.depth, q.astype(np.uint8).tobytes()
    )


# -- domain representation ----------------------------------------------------

def domain_cell(info: DomainInfo, grid_size: int) -> DomainKey:
    """Bin the agent position into grid_size x grid_size cells."""
    if grid_size < 1:
        raise ConfigError("grid_size must be >= 1")
    return DomainKey(
        x_bin=info.x // grid_size,
        y_bin=info.y // grid_size,
        room=info.room,
        level=info.level,
        key_rooms=tuple(sorted(info.key_rooms)),
    )


class NeighborKind(enum.Enum):
    HORIZONTAL = "horizontal"
    VERTICAL = "vertical"
    MORE_KEYS = "more_keys"


@dataclass(frozen=True, slots=True)
class MoreKeysProbe:
    """Predicate form of the "more keys" neighbor: matches any archived key
    at the same position whose key multiset strictly extends this one."""

    base: DomainKey

    def matches(self, other: DomainKey) -> bool:
        b = self.base
        if (other.x_bin, other.y_bin, other.room, other.level) != (
            b.x_bin, b.y_bin, b.room, b.level,
        ):
            return False
        if len(other.key_rooms) <= len(b.key_rooms):
            return False
        need = Counter(b.key_rooms)
        have = Counter(other.key_rooms)
        return all(have[r] >= c for r, c in need.items())


Neighbor = tuple[NeighborKind, Union[DomainKey, MoreKeysProbe]]


def neighbors(key: CellKey, include_more_keys: bool = True) -> list[Neighbor]:
    """Enumerate the neighbor slots of a domain key.

    Two horizontal, two vertical, and (when key tracking is enabled) one
    more-keys slot. Out-of-world neighbors are emitted uniformly; they simply
    never exist in an archive.
    """
    if not isinstance(key, DomainKey):
        raise RepresentationError("neighbors are only defined for domain keys")
    out: list[Neighbor] = [
        (NeighborKind.HORIZONTAL, key._replace(x_bin=key.x_bin - 1)),
        (NeighborKind.HORIZONTAL, key._replace(x_bin=key.x_bin + 1)),
        (NeighborKind.VERTICAL, key._replace(y_bin=key.y_bin - 1)),
        (NeighborKind.VERTICAL, key._replace(y_bin=key.y_bin + 1)),
    ]
    if include_more_keys:
        out.append((NeighborKind.MORE_KEYS, MoreKeysProbe(key)))
    return out


# -- mapper factories ---------------------------------------------------------

CellMapper = Callable[[Observation, DomainInfo], CellKey]


def downscale_mapper(params: DownscaleParams, cache_limit: int = 200_000) -> CellMapper:
    """Mapper with a frame-bytes memo; identical frames repeat constantly."""
    params = params.validate()
    cache: dict[bytes, DownscaledKey] = {}

    def mapper(obs: Observation, info: DomainInfo) -> CellKey:
        del info
        raw = obs.frame.tobytes()
        key = cache.get(raw)
        if key is None:
            key = downscale_cell(obs.frame, params)
            if len(cache) >= cache_limit:
                cache.clear()
            cache[raw] = key
        return key

    return mapper


def domain_mapper(grid_size: int) -> CellMapper:
    if grid_size < 1:
        raise ConfigError("grid_size must be >= 1")

    def mapper(obs: Observation, info: DomainInfo) -> CellKey:
        del obs
        # Environments hand over key_rooms already sorted; normalize anyway
        # so arbitrary DomainInfo sources produce canonical keys.
        kr = info.key_rooms
        if any(kr[i] > kr[i + 1] for i in range(len(kr) - 1)):
            kr = tuple(sorted(kr))
        return DomainKey(
            x_bin=info.x // grid_size,
            y_bin=info.y // grid_size,
            room=info.room,
            level=info.level,
            key_rooms=kr,
        )

    return mapper
