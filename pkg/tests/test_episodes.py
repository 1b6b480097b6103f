import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sprint.episodes import LABELED, MEMORY, PSEUDO, CombinedPool, sample_base_episode, sample_mixed_episode

POOLS = {c: np.arange(100 * c, 100 * c + 40) for c in range(6)}


def test_base_episode_shape_and_disjointness(rng):
    ep = sample_base_episode(POOLS, 5, 5, 15, rng)
    assert ep.support_idx.size == 25 and ep.query_idx.size == 75
    assert len(set(ep.support_labels)) == 5 and ep.way == 5
    for c in set(ep.support_labels):
        s = set(ep.support_idx[ep.support_labels == c])
        q = set(ep.query_idx[ep.query_labels == c])
        assert not s & q
        assert s | q <= set(POOLS[c])
    assert not ep.resampled
    assert set(ep.support_origin) == {MEMORY}


def test_base_episode_too_many_ways(rng):
    with pytest.raises(ValueError):
        sample_base_episode(POOLS, 7, 1, 1, rng)


def test_short_class_is_resampled_and_flagged(rng):
    pools = {0: np.arange(3), 1: np.arange(10, 40)}
    ep = sample_base_episode(pools, 2, 2, 3, rng)
    assert ep.resampled
    rows0 = np.concatenate([ep.support_idx[ep.support_labels == 0], ep.query_idx[ep.query_labels == 0]])
    assert set(rows0) == {0, 1, 2}


def test_episode_is_deterministic_given_seed():
    a = sample_base_episode(POOLS, 3, 2, 2, np.random.default_rng(5))
    b = sample_base_episode(POOLS, 3, 2, 2, np.random.default_rng(5))
    np.testing.assert_array_equal(a.support_idx, b.support_idx)


def test_mixed_episode_contains_every_novel_class(rng):
    combined = {
        10: CombinedPool(np.arange(1000, 1005), np.arange(2000, 2030)),
        11: CombinedPool(np.arange(1100, 1105), np.arange(2100, 2130)),
    }
    ep = sample_mixed_episode(combined, POOLS, 4, 5, 15, rng)
    assert ep.way == 6
    assert {10, 11} <= set(ep.support_labels)
    assert len(set(ep.support_labels) - {10, 11}) == 4
    assert ep.support_idx.size == 6 * 5 and ep.query_idx.size == 6 * 15
    novel = np.isin(ep.support_labels, [10, 11])
    assert set(ep.support_origin[novel]) <= {LABELED, PSEUDO}


def test_mixed_episode_oversamples_labeled_rows(rng):
    combined = {9: CombinedPool(np.array([1, 2, 3, 4, 5]), np.array([77]))}
    ep = sample_mixed_episode(combined, POOLS, 2, 5, 15, rng)
    rows = np.concatenate([ep.support_idx[ep.support_labels == 9], ep.query_idx[ep.query_labels == 9]])
    orig = np.concatenate([ep.support_origin[ep.support_labels == 9], ep.query_origin[ep.query_labels == 9]])
    assert rows.size == 20 and ep.resampled
    assert set(rows) == {1, 2, 3, 4, 5, 77}
    assert (orig == PSEUDO).sum() == 1


def test_mixed_episode_can_share_the_base_draw(rng):
    combined = {9: CombinedPool(np.arange(500, 505), np.arange(600, 650))}
    base = sample_base_episode(POOLS, 3, 5, 15, rng)
    ep = sample_mixed_episode(combined, POOLS, 3, 5, 15, rng, base_episode=base)
    keep = ep.support_labels != 9
    np.testing.assert_array_equal(ep.support_idx[keep], base.support_idx)
    np.testing.assert_array_equal(ep.query_idx[ep.query_labels != 9], base.query_idx)


def test_mixed_episode_rejects_empty_pool(rng):
    with pytest.raises(ValueError):
        sample_mixed_episode({3: CombinedPool(np.array([], int), np.array([], int))}, POOLS, 2, 1, 1, rng)


@settings(max_examples=60, deadline=None)
@given(
    n_way=st.integers(1, 6), k=st.integers(1, 6), q=st.integers(1, 20), seed=st.integers(0, 10_000)
)
def test_base_episode_properties(n_way, k, q, seed):
    ep = sample_base_episode(POOLS, n_way, k, q, np.random.default_rng(seed))
    labels, counts = np.unique(ep.support_labels, return_counts=True)
    assert len(labels) == n_way and np.all(counts == k)
    _, qc = np.unique(ep.query_labels, return_counts=True)
    assert np.all(qc == q)
    for c in labels:
        assert set(ep.support_idx[ep.support_labels == c]) <= set(POOLS[c])
    assert ep.resampled == (k + q > 40)
