"""Archive semantics: trajectories, update rules, counters, checkpoints."""

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from archex.archive import (
    Archive,
    UpdateOutcome,
    checkpoint_load,
    checkpoint_save,
    deserialize_archive,
    serialize_archive,
)
from archex.cells import DomainKey, domain_mapper
from archex.errors import CheckpointError, ContractError
from archex.explore import ExploreConfig, replay_record, run_phase1
from archex.selection import SelectionConfig
from archex.trajectory import Trajectory

from conftest import small_keydoor, small_twomaze


def key(x=0, y=0, room=0, level=0, key_rooms=()):
    return DomainKey(x, y, room, level, tuple(key_rooms))


@pytest.fixture
def env():
    return small_twomaze()


@pytest.fixture
def snap(env):
    return env.reset(0)[1]


def fresh_archive(env):
    return Archive(env.config_hash)


def traj_of(*actions):
    t = Trajectory()
    for a in actions:
        t = t.extend(a)
    return t


# -- trajectory ------------------------------------------------------------------


def test_trajectory_extension_shares_nodes():
    base = traj_of(1, 2, 3)
    left = base.extend(4)
    right = base.extend(0)
    assert left.actions() == [1, 2, 3, 4]
    assert right.actions() == [1, 2, 3, 0]
    assert base.actions() == [1, 2, 3]
    assert left.tail.parent is right.tail.parent is base.tail


def test_trajectory_empty():
    assert Trajectory().actions() == []
    assert Trajectory().length == 0


def test_trajectory_extension_is_constant_allocation():
    t = traj_of(*range(5))
    t2 = t.extend(9)
    # one new node, everything else shared
    assert t2.tail.parent is t.tail
    assert t2.length == t.length + 1


# -- insert / update ---------------------------------------------------------------


def test_insert_absent_added(env, snap):
    archive = fresh_archive(env)
    outcome = archive.insert_or_update(key(), Trajectory(), 0.0, 0, snap)
    record = archive.record(key())
    assert outcome is UpdateOutcome.ADDED
    assert (record.times_seen, record.times_chosen, record.times_chosen_since_new) == (1, 0, 0)


def test_higher_score_improves_and_resets_chosen(env, snap):
    archive = fresh_archive(env)
    archive.insert_or_update(key(), traj_of(1), 5.0, 1, snap)
    archive.record_chosen(key())
    archive.record_chosen(key())
    outcome = archive.insert_or_update(key(), traj_of(1, 2), 9.0, 2, snap)
    record = archive.record(key())
    assert outcome is UpdateOutcome.IMPROVED
    assert record.score == 9.0 and record.traj_len == 2
    assert record.times_chosen == 0 and record.times_chosen_since_new == 0
    assert record.times_seen == 2  # visit counting survives improvement


def test_equal_score_shorter_improves(env, snap):
    archive = fresh_archive(env)
    archive.insert_or_update(key(), traj_of(1, 2, 3), 5.0, 3, snap)
    outcome = archive.insert_or_update(key(), traj_of(1, 2), 5.0, 2, snap)
    assert outcome is UpdateOutcome.IMPROVED
    assert archive.record(key()).traj_len == 2


def test_equal_score_longer_unchanged(env, snap):
    archive = fresh_archive(env)
    archive.insert_or_update(key(), traj_of(1), 5.0, 1, snap)
    outcome = archive.insert_or_update(key(), traj_of(1, 2, 3), 5.0, 3, snap)
    record = archive.record(key())
    assert outcome is UpdateOutcome.UNCHANGED
    assert record.traj_len == 1
    assert record.times_seen == 2


def test_equal_score_equal_length_keeps_incumbent(env, snap):
    archive = fresh_archive(env)
    first = traj_of(1)
    archive.insert_or_update(key(), first, 5.0, 1, snap)
    archive.insert_or_update(key(), traj_of(2), 5.0, 1, snap)
    assert archive.record(key()).trajectory is first


def test_lower_score_unchanged(env, snap):
    archive = fresh_archive(env)
    archive.insert_or_update(key(), traj_of(1), 5.0, 1, snap)
    assert archive.insert_or_update(key(), traj_of(2), 3.0, 1, snap) is UpdateOutcome.UNCHANGED


def test_candidate_config_mismatch_rejected(env, snap):
    other = small_keydoor()
    archive = fresh_archive(other)
    with pytest.raises(ContractError):
        archive.insert_or_update(key(), Trajectory(), 0.0, 0, snap)


def test_candidate_length_mismatch_rejected(env, snap):
    archive = fresh_archive(env)
    with pytest.raises(ContractError):
        archive.insert_or_update(key(), traj_of(1, 2), 0.0, 5, snap)


# -- counters ------------------------------------------------------------------------


def test_record_chosen_counts(env, snap):
    archive = fresh_archive(env)
    archive.insert_or_update(key(), Trajectory(), 0.0, 0, snap)
    archive.record_chosen(key())
    record = archive.record(key())
    assert (record.times_chosen, record.times_chosen_since_new) == (1, 1)
    archive.record_chosen(key())
    assert (record.times_chosen, record.times_chosen_since_new) == (2, 2)


def test_chosen_credited_chosen(env, snap):
    """chosen, credited with a discovery, chosen again -> (2, 1)."""
    archive = fresh_archive(env)
    archive.insert_or_update(key(), Trajectory(), 0.0, 0, snap)
    archive.record_chosen(key())
    archive.credit_discovery(key())
    archive.record_chosen(key())
    record = archive.record(key())
    assert (record.times_chosen, record.times_chosen_since_new) == (2, 1)


def test_credit_discovery_idempotent(env, snap):
    archive = fresh_archive(env)
    archive.insert_or_update(key(), Trajectory(), 0.0, 0, snap)
    archive.credit_discovery(key())
    archive.credit_discovery(key())
    assert archive.record(key()).times_chosen_since_new == 0


def test_counter_ops_on_absent_key(env):
    archive = fresh_archive(env)
    with pytest.raises(ContractError):
        archive.record_chosen(key())
    with pytest.raises(ContractError):
        archive.credit_discovery(key())


@settings(max_examples=50, deadline=None)
@given(ops=st.lists(st.tuples(st.floats(0, 100), st.integers(1, 20)), min_size=1, max_size=30))
def test_monotone_score_and_length(ops):
    """Per-key score never decreases; length never increases at fixed score."""
    env = small_twomaze()
    snap = env.reset(0)[1]
    archive = Archive(env.config_hash)
    last_score, last_len = None, None
    for score, length in ops:
        archive.insert_or_update(key(), traj_of(*([0] * length)), score, length, snap)
        record = archive.record(key())
        if last_score is not None:
            assert record.score >= last_score
            if record.score == last_score:
                assert record.traj_len <= last_len
        last_score, last_len = record.score, record.traj_len


# -- best record -----------------------------------------------------------------------


def test_best_record_rules(env, snap):
    archive = fresh_archive(env)
    archive.insert_or_update(key(0), traj_of(1, 1, 1), 10.0, 3, snap)
    archive.insert_or_update(key(1), traj_of(1, 1), 20.0, 2, snap)
    archive.insert_or_update(key(2), traj_of(1), 20.0, 1, snap)
    best_key, record = archive.best_record()
    assert best_key == key(2)  # highest score, then shorter
    assert record.score == 20.0
    only_low = archive.best_record(lambda k, r: r.score < 15)
    assert only_low[0] == key(0)
    with pytest.raises(ContractError):
        archive.best_record(lambda k, r: False)


def test_max_level_tracked(env, snap):
    archive = fresh_archive(env)
    archive.insert_or_update(key(level=0), Trajectory(), 0.0, 0, snap)
    assert archive.max_level == 0
    archive.insert_or_update(key(x=1, level=3), Trajectory(), 0.0, 0, snap)
    assert archive.max_level == 3


def test_more_keys_neighbor_lookup(env, snap):
    from archex.cells import MoreKeysProbe

    archive = fresh_archive(env)
    base = key(x=4, y=4, room=1, key_rooms=(1,))
    richer = key(x=4, y=4, room=1, key_rooms=(1, 4))
    archive.insert_or_update(base, Trajectory(), 0.0, 0, snap)
    assert not archive.has_neighbor(MoreKeysProbe(base))
    archive.insert_or_update(richer, Trajectory(), 0.0, 0, snap)
    assert archive.has_neighbor(MoreKeysProbe(base))


# -- checkpoints -------------------------------------------------------------------------


def build_small_archive(seed=0, budget=6_000):
    factory = small_twomaze
    cfg = ExploreConfig(
        k=50, batch_size=10, budget_training_frames=budget, seed=seed,
        metric_interval_game_frames=10**9,
    )
    sel = SelectionConfig()
    return run_phase1(factory, cfg, sel, domain_mapper(1))


def test_checkpoint_roundtrip_bit_identical(tmp_path):
    result = build_small_archive()
    path = tmp_path / "a.ckpt"
    checkpoint_save(result.archive, path, result.meta)
    loaded, meta = checkpoint_load(path)
    assert meta == result.meta
    path2 = tmp_path / "b.ckpt"
    checkpoint_save(loaded, path2, meta)
    assert path.read_bytes() == path2.read_bytes()


def test_checkpoint_preserves_everything():
    result = build_small_archive()
    data = serialize_archive(result.archive, result.meta)
    loaded, _ = deserialize_archive(data)
    assert len(loaded) == len(result.archive)
    for k, record in result.archive.items():
        other = loaded.record(k)
        assert other.score == record.score
        assert other.traj_len == record.traj_len
        assert other.times_seen == record.times_seen
        assert other.times_chosen == record.times_chosen
        assert other.times_chosen_since_new == record.times_chosen_since_new
        assert other.trajectory.actions() == record.trajectory.actions()
        assert other.snapshot.state_bytes == record.snapshot.state_bytes


def test_checkpoint_truncation_detected(tmp_path):
    result = build_small_archive()
    path = tmp_path / "a.ckpt"
    checkpoint_save(result.archive, path, result.meta)
    data = path.read_bytes()
    for cut in (10, len(data) // 2, len(data) - 1):
        (tmp_path / "bad.ckpt").write_bytes(data[:cut])
        with pytest.raises(CheckpointError):
            checkpoint_load(tmp_path / "bad.ckpt")


def test_checkpoint_corruption_detected(tmp_path):
    result = build_small_archive()
    path = tmp_path / "a.ckpt"
    checkpoint_save(result.archive, path, result.meta)
    data = bytearray(path.read_bytes())
    data[len(data) // 2] ^= 0xFF
    (tmp_path / "bad.ckpt").write_bytes(bytes(data))
    with pytest.raises(CheckpointError):
        checkpoint_load(tmp_path / "bad.ckpt")


def test_checkpoint_config_mismatch(tmp_path):
    result = build_small_archive()
    path = tmp_path / "a.ckpt"
    checkpoint_save(result.archive, path, result.meta)
    with pytest.raises(CheckpointError):
        checkpoint_load(path, expected_config_hash=12345)


def test_node_sharing_bounded_by_actions():
    """Total stored nodes <= total exploration actions taken."""
    result = build_small_archive()
    nodes = set()
    for _, record in result.archive.items():
        node = record.trajectory.tail
        while node is not None and id(node) not in nodes:
            nodes.add(id(node))
            node = node.parent
    assert len(nodes) <= result.meta.training_frames


# -- replay soundness ----------------------------------------------------------------


def test_replay_soundness_small():
    result = build_small_archive()
    env = small_twomaze()
    mapper = domain_mapper(1)
    for k in result.archive.sorted_keys()[:50]:
        replay_record(env, result.archive.record(k), k, mapper)


def test_replay_detects_corruption():
    from archex.errors import IntegrityError

    result = build_small_archive()
    env = small_twomaze()
    mapper = domain_mapper(1)
    k = next(k for k in result.archive.sorted_keys()
             if result.archive.record(k).traj_len > 2)
    record = result.archive.record(k)
    # corrupt one action in the middle of the chain
    node = record.trajectory.tail
    node.action = (node.action + 1) % 5
    with pytest.raises(IntegrityError):
        replay_record(env, record, k, mapper)
