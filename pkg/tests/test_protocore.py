import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

import oracles
from sprint.protocore import (
    PrototypeSet,
    class_posteriors,
    compute_prototypes,
    distances,
    episode_loss,
    joint_loss,
    nearest_prototype_classify,
    squared_euclidean,
)


def _random_instance(r, metric="euclidean"):
    c = int(r.integers(2, 6))
    m = int(r.integers(1, 6))
    per = r.integers(1, 5, size=c)
    ids = np.sort(r.choice(50, size=c, replace=False))
    labels = np.repeat(ids, per)
    emb = r.standard_normal((labels.size, m))
    query = r.standard_normal((int(r.integers(1, 8)), m))
    return emb, labels, query


def test_prototypes_match_oracle(rng):
    for _ in range(20):
        emb, labels, _ = _random_instance(rng)
        p = compute_prototypes(emb, labels)
        ref = oracles.prototypes(emb.tolist(), labels.tolist())
        assert p.class_ids.tolist() == sorted(ref)
        np.testing.assert_allclose(p.centroids, [ref[c] for c in sorted(ref)], atol=1e-12)


def test_prototype_of_single_row_is_that_row():
    e = np.array([[1.5, -2.0, 0.25]])
    np.testing.assert_array_equal(compute_prototypes(e, [7]).centroids, e)


def test_prototypes_reject_empty_and_mismatch():
    with pytest.raises(ValueError):
        compute_prototypes(np.zeros((0, 3)), [])
    with pytest.raises(ValueError):
        compute_prototypes(np.zeros((2, 3)), [1])


def test_posteriors_match_oracle(rng):
    for metric in ("euclidean", "cosine"):
        for _ in range(20):
            emb, labels, query = _random_instance(rng)
            p = compute_prototypes(emb, labels, metric)
            got = class_posteriors(query, p, temperature=0.7)
            ref = oracles.posteriors(query.tolist(), dict(zip(p.class_ids.tolist(), p.centroids.tolist())), 0.7, metric)
            np.testing.assert_allclose(got, [[r[c] for c in p.class_ids] for r in ref], atol=1e-10)


def test_posteriors_sum_to_one_with_huge_distances():
    p = PrototypeSet(np.array([0, 1]), np.array([[0.0], [1e4]]))
    post = class_posteriors(np.array([[5e3 + 1.0], [-3e4]]), p)
    assert np.all(np.isfinite(post))
    np.testing.assert_allclose(post.sum(axis=1), 1.0)


def test_nearest_breaks_ties_to_lowest_id():
    p = PrototypeSet(np.array([9, 3, 5]), np.array([[1.0], [-1.0], [1.0]]))
    assert nearest_prototype_classify(np.array([[0.0], [2.0]]), p).tolist() == [3, 5]


def test_cosine_argmin_equals_argmax_similarity(rng):
    x = rng.standard_normal((30, 4))
    c = rng.standard_normal((5, 4))
    p = PrototypeSet(np.arange(5), c, "cosine")
    sim = (x / np.linalg.norm(x, axis=1, keepdims=True)) @ (c / np.linalg.norm(c, axis=1, keepdims=True)).T
    assert nearest_prototype_classify(x, p).tolist() == np.argmax(sim, axis=1).tolist()


def test_squared_euclidean_is_not_divided_by_dimension():
    assert squared_euclidean(np.array([[0.0, 0.0, 0.0]]), np.array([[1.0, 2.0, 2.0]]))[0, 0] == 9.0


def test_squared_euclidean_chunks_agree(monkeypatch, rng):
    import sprint.protocore as pc

    x, p = rng.standard_normal((101, 6)), rng.standard_normal((4, 6))
    full = squared_euclidean(x, p)
    monkeypatch.setattr(pc, "_DIFF_BUDGET", 30)
    np.testing.assert_array_equal(pc.squared_euclidean(x, p), full)


def test_distance_dimension_check():
    with pytest.raises(ValueError):
        distances(np.zeros((2, 3)), PrototypeSet(np.array([0]), np.zeros((1, 4))))


def test_prototype_set_rejects_duplicates():
    with pytest.raises(ValueError):
        PrototypeSet(np.array([1, 1]), np.zeros((2, 2)))


def test_prototype_set_extend_and_subset():
    a = PrototypeSet(np.array([0, 1]), np.eye(2))
    b = a.extend(PrototypeSet(np.array([4]), np.ones((1, 2))))
    assert b.class_ids.tolist() == [0, 1, 4]
    assert b.subset([4, 0]).centroids.tolist() == [[1, 1], [1, 0]]
    with pytest.raises(ValueError):
        b.index_of([2])


def test_episode_loss_value_matches_oracle(rng):
    s = rng.standard_normal((6, 3))
    sl = np.array([0, 0, 1, 1, 2, 2])
    q = rng.standard_normal((4, 3))
    ql = np.array([2, 0, 1, 1])
    loss = episode_loss(s, sl, q, ql)
    protos = oracles.prototypes(s.tolist(), sl.tolist())
    post = oracles.posteriors(q.tolist(), protos)
    ref = -np.mean([np.log(post[i][int(c)]) for i, c in enumerate(ql)])
    assert loss.value == pytest.approx(ref, abs=1e-12)


def test_episode_loss_perfect_separation_is_near_zero():
    s = np.array([[0.0], [0.0], [100.0], [100.0]])
    loss = episode_loss(s, [0, 0, 1, 1], np.array([[0.0], [100.0]]), [0, 1])
    assert loss.value < 1e-12


def test_joint_loss_combination(rng):
    a = episode_loss(rng.standard_normal((4, 2)), [0, 0, 1, 1], rng.standard_normal((2, 2)), [0, 1])
    b = episode_loss(rng.standard_normal((4, 2)), [0, 0, 1, 1], rng.standard_normal((2, 2)), [1, 1])
    j = joint_loss(a, b, 0.3)
    assert j.value == pytest.approx(0.3 * a.value + 0.7 * b.value)
    np.testing.assert_allclose(j.semi.grad_query, 0.7 * b.grad_query)
    for bad in (-0.1, 1.1):
        with pytest.raises(ValueError):
            joint_loss(a, b, bad)


def test_joint_loss_endpoints_are_exact(rng):
    a = episode_loss(rng.standard_normal((4, 2)), [0, 0, 1, 1], rng.standard_normal((2, 2)), [0, 1])
    b = episode_loss(rng.standard_normal((4, 2)), [0, 0, 1, 1], rng.standard_normal((2, 2)), [1, 0])
    one = joint_loss(a, b, 1.0)
    assert one.value == a.value
    np.testing.assert_array_equal(one.proto.grad_support, a.grad_support)
    assert not one.semi.grad_query.any()
    zero = joint_loss(a, b, 0.0)
    assert zero.value == b.value
    assert not zero.proto.grad_support.any()


@settings(max_examples=50, deadline=None)
@given(
    emb=hnp.arrays(np.float64, st.tuples(st.integers(2, 12), st.integers(1, 5)),
                   elements=st.floats(-50, 50, allow_nan=False)),
    shift=hnp.arrays(np.float64, 5, elements=st.floats(-100, 100, allow_nan=False)),
    seed=st.integers(0, 1000),
)
def test_euclidean_posteriors_are_translation_invariant(emb, shift, seed):
    r = np.random.default_rng(seed)
    labels = r.integers(0, 3, size=emb.shape[0])
    shift = shift[: emb.shape[1]]
    q = emb[: max(1, emb.shape[0] // 2)]
    a = class_posteriors(q, compute_prototypes(emb, labels))
    b = class_posteriors(q + shift, compute_prototypes(emb + shift, labels))
    np.testing.assert_allclose(a, b, atol=1e-9)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10_000), metric=st.sampled_from(["euclidean", "cosine"]))
def test_nearest_is_argmax_posterior(seed, metric):
    r = np.random.default_rng(seed)
    emb, labels, query = _random_instance(r)
    p = compute_prototypes(emb, labels, metric)
    post = class_posteriors(query, p)
    top = p.class_ids[np.argmax(post, axis=1)]
    assert nearest_prototype_classify(query, p).tolist() == top.tolist()
