import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sear.envs import Transition, load_transitions
from sear.replay import ReplayBuffer


def tr(i, terminal=False, truncated=False):
    return Transition(np.array([float(i)]), np.array([i / 100.0]), float(i), np.array([i + 1.0]), terminal, truncated)


def filled(lengths, terminal=False, capacity=1000):
    buf = ReplayBuffer(capacity, 1, 1)
    i = 0
    for n in lengths:
        for j in range(n):
            last = j == n - 1
            buf.push(tr(i, terminal and last, (not terminal) and last))
            i += 1
    return buf


def test_push_and_eviction():
    buf = ReplayBuffer(3, 1, 1)
    buf.push(tr(0))
    assert len(buf) == 1
    for i in range(1, 4):
        buf.push(tr(i))
    assert len(buf) == 3
    assert [t.reward for t in buf.transitions()] == [1.0, 2.0, 3.0]
    with pytest.raises(ValueError):
        ReplayBuffer(0, 1, 1)


def test_empty_buffer_errors():
    with pytest.raises(ValueError):
        ReplayBuffer(5, 1, 1).sample_chunk_batch(2, 4, np.random.default_rng(0))


def test_window_past_episode_end():
    buf = filled([12])
    b = buf.chunks_at(np.arange(12), 4)
    assert b.valid[10].tolist() == [True, True, False, False]
    assert b.valid.any(axis=1).all()
    assert b.rewards[10].tolist() == [10.0, 11.0, 0.0, 0.0]
    # Bootstrap state repeats the last valid step.
    assert b.bootstrap_states[10, 0] == 12.0


def test_terminal_masks():
    buf = filled([6, 6], terminal=True)
    b = buf.chunks_at(np.array([3]), 4)
    assert b.valid[0].tolist() == [True, True, True, False]
    assert b.terminal_within[0].tolist() == [False, False, True, True]
    truncated = filled([6, 6]).chunks_at(np.array([3]), 4)
    assert not truncated.terminal_within.any()


def test_no_row_crosses_episodes_exhaustive():
    buf = filled([3, 1, 5, 2, 4], terminal=True)
    ep = np.repeat(np.arange(5), [3, 1, 5, 2, 4])
    for n in range(1, 7):
        b = buf.chunks_at(np.arange(len(buf)), n)
        for i in range(len(buf)):
            steps = (b.states[i, 0] + np.arange(n)).astype(int)
            for j in range(n):
                crosses = steps[j] >= len(buf) or ep[steps[j]] != ep[i]
                assert b.valid[i, j] == (not crosses)
            assert not np.any(np.diff(b.valid[i].astype(int)) > 0)


def test_eviction_keeps_masks_correct():
    buf = filled([4, 4, 4], capacity=6)
    b = buf.chunks_at(np.arange(6), 3)
    # Oldest surviving step is index 6 (second episode, step 2).
    assert b.states[:, 0].tolist() == [6, 7, 8, 9, 10, 11]
    assert b.valid[0].tolist() == [True, True, False]
    assert b.valid[5].tolist() == [True, False, False]


def test_uniform_start_histogram():
    buf = filled([25, 25, 25, 25])
    rng = np.random.default_rng(0)
    starts = rng.integers(0, len(buf), 10**5)
    counts = np.bincount(starts, minlength=100)
    batch = buf.sample_chunk_batch(10**5, 4, np.random.default_rng(0))
    np.testing.assert_array_equal(np.bincount(batch.states[:, 0].astype(int), minlength=100), counts)
    expected = 10**5 / 100
    chi2 = ((counts - expected) ** 2 / expected).sum()
    # 99 dof: mean 99, std 14.
    assert chi2 < 99 + 3 * np.sqrt(2 * 99)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(1, 9), min_size=1, max_size=8), st.integers(1, 6), st.integers(0, 1000), st.booleans())
def test_prefix_closure_and_zeroed_tails(lengths, n, seed, terminal):
    buf = filled(lengths, terminal=terminal, capacity=max(4, sum(lengths) - 3))
    b = buf.sample_chunk_batch(64, n, np.random.default_rng(seed))
    assert b.valid[:, 0].all()
    assert not np.any(np.diff(b.valid.astype(np.int8), axis=1) > 0)
    assert np.all(b.rewards[~b.valid] == 0.0)
    assert not np.any(np.diff(b.terminal_within.astype(np.int8), axis=1) < 0)
    same = buf.sample_chunk_batch(64, n, np.random.default_rng(seed))
    assert same.actions.tobytes() == b.actions.tobytes()


def test_snapshot_json_lines(tmp_path):
    buf = filled([3])
    buf.snapshot(tmp_path / "buf.jsonl")
    rows = [json.loads(line) for line in (tmp_path / "buf.jsonl").read_text().splitlines()]
    assert [r["truncated"] for r in rows] == [False, False, True]
    assert len(load_transitions(tmp_path / "buf.jsonl")) == 3
