import numpy as np
import pandas as pd
import pytest

from ifair.data import (
    DataError, DataTable, FeatureSchema, SchemaError, SplitSpec, column_scale, load_csv,
    load_dataset, mask_protected, normalize_unit_variance, prepare, split,
)

from conftest import DATA


@pytest.fixture(scope="module")
def german():
    return load_dataset(DATA / "german_credit.json")


def small_schema(**extra):
    cfg = {
        "name": "toy",
        "task": "classification",
        "outcome": "label",
        "outcome_positive": "yes",
        "columns": [
            {"name": "num", "kind": "numeric"},
            {"name": "sex", "kind": "binary", "positive": "F", "protected": True},
            {"name": "color", "kind": "categorical"},
        ],
    }
    cfg.update(extra)
    return FeatureSchema.from_dict(cfg)


def write_toy(tmp_path):
    df = pd.DataFrame({
        "num": [1.0, None, 3.0, 5.0, 7.0],
        "sex": ["F", "M", "M", "F", "M"],
        "color": ["red", "blue", "red", "green", "blue"],
        "label": ["yes", "no", "yes", None, "no"],
    })
    path = tmp_path / "toy.csv"
    df.to_csv(path, index=False)
    return path


def test_toy_encoding(tmp_path):
    t = load_csv(write_toy(tmp_path), small_schema())
    # row 3 has no outcome and is dropped
    assert len(t) == 4 and t.n_dropped == 1
    assert list(t.row_ids) == [0, 1, 2, 4]
    # the green row went with the missing outcome
    assert t.columns == ("num", "sex", "color=blue", "color=red")
    assert t.categories["color"] == ("blue", "red")
    assert t.protected == (1,)
    assert list(t.y) == [1.0, 0.0, 1.0, 0.0]
    # missing numeric cell imputed with the mean of the kept rows
    assert t.X[1, 0] == pytest.approx((1 + 3 + 7) / 3)
    assert list(t.X[:, 1]) == [1.0, 0.0, 0.0, 0.0]
    assert np.all(t.X[:, 2:].sum(axis=1) == 1)
    assert list(t.decode("color")) == ["red", "blue", "red", "blue"]


def test_missing_column_rejected(tmp_path):
    path = write_toy(tmp_path)
    schema = FeatureSchema.from_dict({
        "name": "toy", "task": "classification", "outcome": "label",
        "columns": [{"name": "absent", "kind": "numeric"}],
    })
    with pytest.raises(SchemaError):
        load_csv(path, schema)


def test_german_shape(german):
    assert german.X.shape == (1000, 61)
    assert [german.columns[i] for i in german.protected] == ["age"]
    assert set(np.unique(german.y)) == {0.0, 1.0}
    assert german.group.mean() == pytest.approx(0.19)
    assert german.n_dropped == 0


def test_compas_shape():
    t = load_dataset(DATA / "compas.json")
    assert t.X.shape == (6900, 431)
    assert len(t.protected) == 6
    assert all(t.columns[i].startswith("race=") for i in t.protected)


def test_split_sizes_and_disjointness(german):
    parts = split(german, SplitSpec(seed=3))
    assert [len(p) for p in parts] == [333, 333, 334]
    ids = np.concatenate([p.row_ids for p in parts])
    assert sorted(ids) == list(range(1000))
    again = split(german, SplitSpec(seed=3))
    assert all(np.array_equal(a.row_ids, b.row_ids) for a, b in zip(parts, again))
    other = split(german, SplitSpec(seed=4))
    assert not np.array_equal(parts[0].row_ids, other[0].row_ids)


def test_split_by_query_keeps_queries_whole():
    q = np.repeat(np.arange(9), 4)
    t = DataTable(np.arange(36.0)[:, None], np.zeros(36), ("a",), query=q)
    parts = split(t, SplitSpec(seed=0, by_query=True))
    sets = [set(p.query) for p in parts]
    assert [len(s) for s in sets] == [3, 3, 3]
    assert not (sets[0] & sets[1]) and not (sets[1] & sets[2])


def test_split_fraction_validation():
    with pytest.raises(ValueError):
        SplitSpec(fractions=(0.5, 0.5, 0.0))
    with pytest.raises(ValueError):
        SplitSpec(fractions=(0.5, 0.4, 0.2))
    with pytest.raises(ValueError):
        split(DataTable(np.ones((2, 1)), np.zeros(2), ("a",)))


def test_normalization_uses_training_statistics(german):
    train, val, test = prepare(german, SplitSpec(seed=0))
    raw = split(german, SplitSpec(seed=0))
    scale = column_scale(raw[0].X)
    assert np.allclose(train.X.std(axis=0, ddof=1)[scale != 1.0], 1.0)
    for norm, orig in zip((train, val, test), raw):
        assert np.allclose(norm.X * scale, orig.X)
        assert np.array_equal(norm.scale, scale)


def test_normalization_is_not_centered_and_handles_constants():
    X = np.array([[1.0, 5.0], [3.0, 5.0], [5.0, 5.0]])
    t = normalize_unit_variance(DataTable(X, np.zeros(3), ("a", "b")))
    assert np.allclose(t.X[:, 0], [0.5, 1.5, 2.5])
    assert np.array_equal(t.X[:, 1], X[:, 1])
    with pytest.raises(DataError):
        normalize_unit_variance(DataTable(np.empty((0, 2)), np.empty(0), ("a", "b")))


def test_mask_protected(german):
    masked = mask_protected(german)
    assert masked.n_features == 60 and masked.protected == ()
    assert "age" not in masked.columns
    assert np.array_equal(masked.X, german.X_star)
    assert mask_protected(masked) is masked


def test_table_shape_checks():
    with pytest.raises(DataError):
        DataTable(np.ones(3), np.zeros(3), ("a",))
    with pytest.raises(DataError):
        DataTable(np.ones((3, 2)), np.zeros(2), ("a", "b"))
