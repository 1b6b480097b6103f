import numpy as np
import pytest
import yaml
from hypothesis import given, settings
from hypothesis import strategies as st

from sprint.data import (
    DataError,
    SessionSchedule,
    TabularDataset,
    apply_normalizer,
    build_memory_buffer,
    draw_unlabeled_pool,
    fit_normalizer,
    load_csv,
    load_split,
    load_split_config,
    parse_split_config,
    sample_support,
    stratified_split,
    _largest_remainder,
)


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def _grid(n_classes=4, per=10, dim=2):
    x = np.arange(n_classes * per * dim, dtype=float).reshape(-1, dim)
    y = np.repeat(np.arange(n_classes), per)
    ds = TabularDataset(x, y, tuple(f"c{i}" for i in range(n_classes)))
    return stratified_split(ds, 0.2, 0)


def test_load_csv_roundtrip(tmp_path):
    p = _write(tmp_path / "d.csv", "a,b,label\n1,2,x\n3,4.5,y\n5,6,x\n")
    ds = load_csv(p, "label")
    assert ds.class_names == ("x", "y")
    assert ds.labels.tolist() == [0, 1, 0]
    assert ds.feature_names == ("a", "b")
    np.testing.assert_array_equal(ds.features[1], [3, 4.5])


def test_load_csv_label_column_anywhere_and_class_order(tmp_path):
    p = _write(tmp_path / "d.csv", "label,a\ny,1\nx,2\n")
    ds = load_csv(p, "label", class_order=["x", "y"])
    assert ds.labels.tolist() == [1, 0]


@pytest.mark.parametrize(
    "body, msg",
    [
        ("a,label\n1,x\n2\n", ":3: expected 2 fields"),
        ("a,label\n1,x\nfoo,y\n", ":3: non-numeric"),
        ("a,label\n1,x\n,y\n", ":3: non-numeric"),
        ("a,label\nnan,x\n", ":2: missing or non-finite"),
    ],
)
def test_load_csv_errors_name_the_line(tmp_path, body, msg):
    with pytest.raises(DataError, match=msg):
        load_csv(_write(tmp_path / "d.csv", body), "label")


def test_load_csv_missing_file_and_column(tmp_path):
    with pytest.raises(DataError, match="not found"):
        load_csv(tmp_path / "nope.csv", "label")
    with pytest.raises(DataError, match="label column"):
        load_csv(_write(tmp_path / "d.csv", "a,b\n1,2\n"), "label")


def test_load_csv_undeclared_label(tmp_path):
    p = _write(tmp_path / "d.csv", "a,label\n1,x\n2,z\n")
    with pytest.raises(DataError, match="not declared"):
        load_csv(p, "label", class_order=["x", "y"])


def test_stratified_split_is_disjoint_and_covers_every_class():
    ds = _grid()
    assert not set(ds.train_idx) & set(ds.test_idx)
    assert len(ds.train_idx) + len(ds.test_idx) == ds.n_rows
    for c in range(4):
        assert ds.rows_of(c, "test").size == 2
    again = _grid()
    np.testing.assert_array_equal(ds.test_idx, again.test_idx)


def test_normalizer_uses_population_std_and_guards_zero():
    x = np.array([[1.0, 5.0], [3.0, 5.0]])
    ds = TabularDataset(x, np.array([0, 0]), ("a",))
    stats = fit_normalizer(ds, [0, 1])
    np.testing.assert_array_equal(stats.std, [1.0, 1.0])
    np.testing.assert_array_equal(apply_normalizer(stats, x), [[-1.0, 0.0], [1.0, 0.0]])


def test_normalizer_fit_only_on_given_rows():
    ds = _grid()
    rows = ds.rows_of(0, "train")
    stats = fit_normalizer(ds, rows)
    np.testing.assert_allclose(stats.mean, ds.features[rows].mean(axis=0))


def test_schedule_validation():
    with pytest.raises(DataError):
        SessionSchedule((0, 1), ((1,),))
    with pytest.raises(DataError):
        SessionSchedule((0,), ((),))
    s = SessionSchedule((0, 1), ((2,), (3, 4)))
    assert s.n_sessions == 2
    assert s.seen(1) == (0, 1, 2)
    assert s.future(1) == (3, 4)
    assert s.novel(0) == (0, 1)


def test_memory_buffer_budget_and_stability():
    ds = _grid(per=20)
    sched = SessionSchedule((0, 1), ((2,), (3,)))
    buf = build_memory_buffer(ds, sched, 5, 3)
    assert buf.classes == (0, 1)
    assert all(len(v) == 5 for v in buf.per_class.values())
    assert set(buf.all_indices()) <= set(ds.train_idx)
    assert np.all(ds.labels[buf.all_indices()] == buf.all_labels())
    again = build_memory_buffer(ds, sched, 5, 3)
    for c in buf.classes:
        np.testing.assert_array_equal(buf.per_class[c], again.per_class[c])
    big = build_memory_buffer(ds, sched, 1000, 3)
    assert len(big) == ds.rows_of(0).size + ds.rows_of(1).size


def test_sample_support_needs_k_rows(rng):
    ds = _grid(per=5)
    out = sample_support(ds, [2], 4, rng)
    assert len(set(out[2])) == 4 and np.all(ds.labels[out[2]] == 2)
    with pytest.raises(DataError):
        sample_support(ds, [2], 5, rng)


def test_pool_composition_example():
    x = np.arange(60, dtype=float)[:, None]
    y = np.repeat([0, 1, 2], 20)
    ds = TabularDataset(x, y, ("a", "b", "c"), train_idx=np.arange(60), test_idx=np.array([], int))
    sched = SessionSchedule((0,), ((1,), (2,)))
    pool = draw_unlabeled_pool(ds, sched, 1, 10, (0.5, 0.5, 0.0), 0)
    hidden = pool.audit_labels()
    assert pool.size == 10
    assert (hidden == 0).sum() == 5 and (hidden == 1).sum() == 5
    assert pool.strata_counts == {"base": 5, "current": 5, "future": 0}


def test_pool_excludes_support_rows():
    ds = _grid(per=30)
    sched = SessionSchedule((0, 1), ((2,), (3,)))
    sup = ds.rows_of(2)[:5]
    pool = draw_unlabeled_pool(ds, sched, 1, 40, seed=1, exclude=sup)
    assert not set(pool.indices) & set(sup)
    assert set(pool.indices) <= set(ds.train_idx)
    np.testing.assert_array_equal(pool.audit_labels(), ds.labels[pool.indices])


def test_pool_caps_and_renormalizes():
    ds = _grid(per=30)
    sched = SessionSchedule((0, 1), ((2,), (3,)))
    # last session has no future classes: renormalize; 24 current rows cap u
    pool = draw_unlabeled_pool(ds, sched, 2, 1000, (0.4, 0.4, 0.2), 0)
    assert any("renormalizing" in w for w in pool.warnings)
    assert any("capped" in w for w in pool.warnings)
    assert pool.composition == pytest.approx((0.5, 0.5, 0.0))
    assert pool.strata_counts["current"] == 24 and pool.size == 48


def test_pool_rejects_bad_arguments():
    ds = _grid()
    sched = SessionSchedule((0, 1), ((2,), (3,)))
    with pytest.raises(DataError):
        draw_unlabeled_pool(ds, sched, 1, 0)
    with pytest.raises(DataError):
        draw_unlabeled_pool(ds, sched, 1, 10, (0.5, 0.6, 0.0))


@settings(max_examples=100, deadline=None)
@given(total=st.integers(0, 500), w=st.lists(st.floats(0.0, 1.0), min_size=3, max_size=3))
def test_largest_remainder_sums_to_total(total, w):
    w = np.asarray(w)
    if w.sum() == 0:
        w = np.array([1.0, 0.0, 0.0])
    w = w / w.sum()
    counts = _largest_remainder(total, w)
    assert counts.sum() == total
    assert np.all(np.abs(counts - total * w) < 1.0 + 1e-9)


@settings(max_examples=40, deadline=None)
@given(u=st.integers(1, 200), seed=st.integers(0, 1000))
def test_pool_is_a_subset_without_duplicates(u, seed):
    ds = _grid(per=40)
    sched = SessionSchedule((0, 1), ((2,), (3,)))
    pool = draw_unlabeled_pool(ds, sched, 1, u, seed=seed)
    assert len(set(pool.indices)) == pool.size
    assert pool.size <= u
    assert set(pool.indices) <= set(ds.train_idx)


def test_split_config_and_load(tmp_path):
    _write(tmp_path / "d.csv", "f,label\n" + "".join(f"{i},{'abc'[i % 3]}\n" for i in range(30)))
    _write(tmp_path / "s.yaml", yaml.safe_dump({
        "dataset": "d.csv", "label_column": "label", "base_classes": ["b", "a"], "sessions": [["c"]],
        "M0_per_class": 7, "u": 12,
    }))
    cfg = load_split_config(tmp_path / "s.yaml")
    assert cfg.dataset == tmp_path / "d.csv"
    ds, sched = load_split(cfg)
    assert ds.class_names == ("b", "a", "c")
    assert sched.base_classes == (0, 1) and sched.sessions == ((2,),)
    assert ds.test_idx.size == 6


def test_split_config_rejects_unknown_keys():
    with pytest.raises(DataError, match="unknown"):
        parse_split_config({"dataset": "x", "label_column": "y", "base_classes": [], "sessions": [], "oops": 1})
    with pytest.raises(DataError, match="missing"):
        parse_split_config({"dataset": "x"})
