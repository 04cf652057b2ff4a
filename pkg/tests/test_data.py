import logging

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from looaudit.data import (
    Dataset,
    PreprocessSpec,
    SplitPlan,
    SyntheticSpec,
    circle_centers,
    full_plan,
    leave_one_out,
    load_csv,
    make_split,
    sample_synthetic,
    split_ids,
)
from looaudit.errors import ConfigurationError, IngestionError


def test_dataset_arrays_are_read_only():
    ds = Dataset(np.zeros((3, 2)), [0, 1, 0])
    with pytest.raises(ValueError):
        ds.features[0, 0] = 1.0
    with pytest.raises(ValueError):
        ds.labels[0] = 1


def test_dataset_validation():
    with pytest.raises(ConfigurationError):
        Dataset(np.zeros((3, 2)), [0, 1])
    with pytest.raises(ConfigurationError):
        Dataset(np.zeros((2, 2)), [0, 3], num_classes=2)
    with pytest.raises(ConfigurationError):
        Dataset(np.zeros((2, 2)), [0, 1], point_ids=[5, 5])
    with pytest.raises(ConfigurationError):
        Dataset(np.zeros((2, 2)), [0.5, 1.0])


def test_view_selects_by_id_without_copying_parent():
    ds = Dataset(np.arange(10.0).reshape(5, 2), [0, 1, 0, 1, 0], point_ids=[10, 11, 12, 13, 14])
    v = ds.view([13, 10])
    assert v.point_ids.tolist() == [13, 10]
    assert v.features.tolist() == [[6.0, 7.0], [0.0, 1.0]]
    assert v.parent is ds
    m = v.materialize()
    assert m.point_ids.tolist() == [13, 10] and len(m) == 2


def test_view_digest_depends_on_rows():
    ds = Dataset(np.arange(10.0).reshape(5, 2), [0, 1, 0, 1, 0])
    assert ds.view([0, 1]).digest() == ds.view([0, 1]).digest()
    assert ds.view([0, 1]).digest() != ds.view([1, 0]).digest()
    assert ds.view([0, 1]).digest() != ds.view([0, 2]).digest()


@settings(max_examples=100, deadline=None)
@given(
    n=st.integers(2, 200),
    frac=st.floats(0.05, 0.95),
    seed=st.integers(0, 2**31),
    source=st.sampled_from(["train", "heldout"]),
    data=st.data(),
)
def test_split_invariants(n, frac, seed, source, data):
    n_train = int(round(frac * n))
    room = n_train if source == "train" else n - n_train
    o = data.draw(st.integers(0, room))
    plan = split_ids(range(n), frac, o, seed, source)
    train, test, leave = set(plan.train_ids), set(plan.test_ids), plan.leave_out_ids
    assert train.isdisjoint(test)
    assert train | test == set(range(n))
    assert set(leave) <= train and len(leave) == o
    assert plan == split_ids(range(n), frac, o, seed, source)


def test_heldout_leave_out_is_added_to_train():
    plan = split_ids(range(1000), 0.7, 100, 3, "heldout")
    assert len(plan.train_ids) == 800
    assert len(plan.test_ids) == 200


def test_split_rejects_oversized_leave_out():
    with pytest.raises(ConfigurationError) as info:
        split_ids(range(10), 0.5, 6, 0)
    assert info.value.key == "o_size"


def test_split_plan_checks_membership():
    with pytest.raises(ConfigurationError):
        SplitPlan((0, 1), (2,), (3,), 0)
    with pytest.raises(ConfigurationError):
        SplitPlan((0, 1), (0,), (1,), 0)


def test_leave_one_out_masks_exactly_one_row():
    ds = sample_synthetic(SyntheticSpec("gaussian-blobs", n=20, seed=0))
    plan = make_split(ds, 0.8, 4, 1)
    removed = plan.leave_out_ids[0]
    v = leave_one_out(ds, plan, removed)
    assert len(v) == len(plan.train_ids) - 1
    assert removed not in v.point_ids.tolist()
    with pytest.raises(ConfigurationError):
        leave_one_out(ds, plan, plan.test_ids[0])


def test_full_plan_leaves_out_everything():
    ds = Dataset(np.zeros((4, 1)), [0, 1, 0, 1])
    plan = full_plan(ds)
    assert plan.leave_out_ids == plan.train_ids == (0, 1, 2, 3)


def test_load_csv_defaults(tiny_csv):
    ds, spec = load_csv(tiny_csv, None, "label")
    # row 3 has a missing score and is dropped; ids stay file-row indices
    assert ds.point_ids.tolist() == [0, 1, 2, 4]
    assert spec.feature_names == ["age", "color=blue", "color=red", "score"]
    assert spec.label_vocabulary == ["no", "yes"]
    assert ds.labels.tolist() == [1, 0, 1, 0]
    assert ds.features[:, 1:3].tolist() == [[0, 1], [1, 0], [0, 1], [1, 0]]


def test_load_csv_standardize_and_min_max(tiny_csv):
    spec = PreprocessSpec({"age": "standardize", "score": "min-max", "color": "drop"})
    ds, fitted = load_csv(tiny_csv, spec, "label")
    ages = np.array([20, 30, 40, 60.0])
    np.testing.assert_allclose(ds.features[:, 0], (ages - ages.mean()) / ages.std())
    np.testing.assert_allclose(ds.features[:, 1], [0.0, 0.25, 0.5, 1.0])
    assert fitted.feature_names == ["age", "score"]


def test_statistics_fitted_on_training_rows_only(tiny_csv):
    spec = PreprocessSpec({"age": "standardize", "color": "drop", "score": "drop"})
    ds, fitted = load_csv(tiny_csv, spec, "label", fit_rows=[0, 1])
    assert fitted.stats["age"]["mean"] == 25.0
    assert ds.features[:, 0].tolist() == [-1.0, 1.0, 3.0, 7.0]


def test_unknown_category_zeros_or_error(tiny_csv, caplog):
    spec = PreprocessSpec({"age": "drop", "score": "drop"})
    with caplog.at_level(logging.WARNING):
        ds, _ = load_csv(tiny_csv, spec, "label", fit_rows=[0, 2])
    assert ds.features.tolist() == [[1.0], [0.0], [1.0], [0.0]]
    assert "unseen category" in caplog.text
    strict = PreprocessSpec({"age": "drop", "score": "drop"}, unknown_category="error")
    with pytest.raises(IngestionError) as info:
        load_csv(tiny_csv, strict, "label", fit_rows=[0, 2])
    assert info.value.row == 1 and info.value.column == "color"


def test_missing_value_error_names_row_and_column(tiny_csv):
    with pytest.raises(IngestionError) as info:
        load_csv(tiny_csv, PreprocessSpec(drop_missing=False), "label")
    assert info.value.row == 3 and info.value.column == "score"


def test_unparseable_number(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("a,label\n1,x\nzz,y\n")
    with pytest.raises(IngestionError) as info:
        load_csv(p, PreprocessSpec({"a": "standardize"}), "label")
    assert info.value.row == 1 and info.value.column == "a"


def test_ragged_rows_and_missing_label(tmp_path):
    p = tmp_path / "ragged.csv"
    p.write_text("a,label\n1,x\n2\n")
    with pytest.raises(IngestionError):
        load_csv(p, None, "label")
    p.write_text("a,b\n1,2\n")
    with pytest.raises(IngestionError):
        load_csv(p, None, "label")


def test_synthetic_generators_are_seeded():
    a = sample_synthetic(SyntheticSpec("uniform-bernoulli-square", n=50, seed=4))
    b = sample_synthetic(SyntheticSpec("uniform-bernoulli-square", n=50, seed=4))
    assert a.digest() == b.digest()
    assert a.features.min() >= 0 and a.features.max() < 1


def test_two_circles_points_inside_their_disc():
    ds = sample_synthetic(SyntheticSpec("two-circles", n=200, seed=1, d=2.0))
    c = circle_centers(2.0)
    r = np.linalg.norm(ds.features - c[ds.labels], axis=1)
    assert np.all(r < 1.0)
    assert ds.labels.tolist() == [i % 2 for i in range(200)]
