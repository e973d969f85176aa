"""Cell-selection scores, probabilities, and batch sampling.

Each cell's score combines count subscores ``w * (1/(v + eps1))**p + eps2``
over the three interaction counters, neighbor subscores ``w_n * (1 -
HasNeighbor)`` for missing archive neighbors (domain mode only), and an
exponential level weight ``base**(max_level - level)``:

    score = level_weight * (sum(neigh) + sum(count) + 1)

Scores are strictly positive, so every cell keeps a nonzero selection
probability. Probabilities are the scores normalized over the archive, and
batches are drawn with replacement by cumulative-sum roulette.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .archive import Archive, CellRecord
from .cells import CellKey, DomainKey, NeighborKind, neighbors
from .errors import ConfigError


@dataclass(frozen=True)
class SelectionConfig:
    """Weights and powers for cell selection.

    Defaults follow the downscaled-representation configuration of the
    reference setup; see the presets in :mod:`archex.config` for the other
    named parameter sets.
    """

    w_chosen: float = 0.1
    w_chosen_since_new: float = 0.0
    w_seen: float = 0.3
    p_chosen: float = 0.5
    p_chosen_since_new: float = 0.5
    p_seen: float = 0.5
    w_horizontal: float = 0.0
    w_vertical: float = 0.0
    w_more_keys: float = 0.0
    eps1: float = 0.001
    eps2: float = 0.00001
    level_decay: float = 0.1
    domain_mode: bool = False
    track_keys: bool = True
    batch_size: int = 100

    def validate(self) -> "SelectionConfig":
        for name in ("w_chosen", "w_chosen_since_new", "w_seen",
                     "w_horizontal", "w_vertical", "w_more_keys"):
            if getattr(self, name) < 0:
                raise ConfigError(f"selection weight {name} must be >= 0")
        for name in ("p_chosen", "p_chosen_since_new", "p_seen"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"selection power {name} must be > 0")
        if self.eps1 <= 0 or self.eps2 <= 0:
            raise ConfigError("eps1 and eps2 must be > 0")
        if not 0 < self.level_decay <= 1:
            raise ConfigError("level_decay must be in (0, 1]")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        return self


def count_subscore(v: int, w: float, p: float, eps1: float, eps2: float) -> float:
    """w * (1 / (v + eps1))**p + eps2 for a single counter value."""
    return w * (1.0 / (v + eps1)) ** p + eps2


def neigh_subscore(key: CellKey, archive: Archive, cfg: SelectionConfig) -> float:
    """Total weight of neighbor slots missing from the archive; 0 outside
    domain mode."""
    if not cfg.domain_mode or not isinstance(key, DomainKey):
        return 0.0
    weight = {
        NeighborKind.HORIZONTAL: cfg.w_horizontal,
        NeighborKind.VERTICAL: cfg.w_vertical,
        NeighborKind.MORE_KEYS: cfg.w_more_keys,
    }
    total = 0.0
    for kind, slot in neighbors(key, include_more_keys=cfg.track_keys):
        if not archive.has_neighbor(slot):
            total += weight[kind]
    return total


def level_weight(level: int, max_level: int, base: float) -> float:
    """base**(max_level - level); callers pass 1 when levels are unknown."""
    if level > max_level:
        raise ConfigError("cell level exceeds archive max_level")
    return base ** (max_level - level)


def cell_score(record: CellRecord, key: CellKey, archive: Archive,
               cfg: SelectionConfig) -> float:
    cnt = (
        count_subscore(record.times_chosen, cfg.w_chosen, cfg.p_chosen,
                       cfg.eps1, cfg.eps2)
        + count_subscore(record.times_chosen_since_new, cfg.w_chosen_since_new,
                         cfg.p_chosen_since_new, cfg.eps1, cfg.eps2)
        + count_subscore(record.times_seen, cfg.w_seen, cfg.p_seen,
                         cfg.eps1, cfg.eps2)
    )
    lw = 1.0
    if cfg.domain_mode and isinstance(key, DomainKey):
        lw = level_weight(key.level, archive.max_level, cfg.level_decay)
    return lw * (neigh_subscore(key, archive, cfg) + cnt + 1.0)


@dataclass(slots=True)
class SelectionTable:
    keys: list[CellKey]
    scores: np.ndarray
    probs: np.ndarray


def cell_probs(archive: Archive, cfg: SelectionConfig) -> SelectionTable:
    """Scores and normalized probabilities over the archive in canonical key
    order. Vectorized, but numerically identical to :func:`cell_score`."""
    keys = archive.sorted_keys()
    if not keys:
        raise ConfigError("cannot select from an empty archive")
    n = len(keys)
    records = [archive.cells[k] for k in keys]
    chosen = np.fromiter((r.times_chosen for r in records), np.float64, n)
    since = np.fromiter((r.times_chosen_since_new for r in records), np.float64, n)
    seen = np.fromiter((r.times_seen for r in records), np.float64, n)
    cnt = (
        (cfg.w_chosen * (1.0 / (chosen + cfg.eps1)) ** cfg.p_chosen + cfg.eps2)
        + (cfg.w_chosen_since_new * (1.0 / (since + cfg.eps1)) ** cfg.p_chosen_since_new
           + cfg.eps2)
        + (cfg.w_seen * (1.0 / (seen + cfg.eps1)) ** cfg.p_seen + cfg.eps2)
    )
    if cfg.domain_mode:
        neigh = np.fromiter(
            (neigh_subscore(k, archive, cfg) for k in keys), np.float64, n
        )
        lw = np.fromiter(
            (
                cfg.level_decay ** (archive.max_level - k.level)
                if isinstance(k, DomainKey) else 1.0
                for k in keys
            ),
            np.float64,
            n,
        )
        scores = lw * (neigh + cnt + 1.0)
    else:
        scores = cnt + 1.0
    probs = scores / scores.sum()
    return SelectionTable(keys=keys, scores=scores, probs=probs)


def sample_batch(table: SelectionTable, b: int, rng: np.random.Generator) -> list[CellKey]:
    """Draw b keys with replacement, proportional to table.probs."""
    if b < 1:
        raise ConfigError("batch size must be >= 1")
    cum = np.cumsum(table.probs)
    cum[-1] = 1.0  # guard against accumulated rounding at the top end
    draws = rng.random(b)
    idx = np.searchsorted(cum, draws, side="right")
    idx = np.minimum(idx, len(table.keys) - 1)
    return [table.keys[i] for i in idx]
