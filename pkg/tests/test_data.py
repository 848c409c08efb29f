import json

import numpy as np
import pytest
from sklearn.base import clone

from cfaudit.data import (SplitSpec, TabularEncoder, encode_instance, load_dataset, read_schema,
                          sample_explananda, split_train_test, write_dataset)
from cfaudit.datasets import credit_synth, mofn_3_7_10, tic_tac_toe
from cfaudit.exceptions import DataError

from conftest import make_mixed


def _write(tmp_path, header, rows, features, target="y", positive="1"):
    csv_path = tmp_path / "d.csv"
    csv_path.write_text("\n".join([",".join(header)] + [",".join(r) for r in rows]) + "\n")
    schema = tmp_path / "d.schema.json"
    schema.write_text(json.dumps({"target": target, "positive_label": positive, "features": features}))
    return csv_path, schema


NUMF = [{"name": "x", "kind": "numeric"}, {"name": "c", "kind": "categorical"}]


def test_roundtrip_through_csv(tmp_path):
    d = credit_synth(n=250)
    write_dataset(d, tmp_path / "c.csv", tmp_path / "c.json")
    e = load_dataset(tmp_path / "c.csv", tmp_path / "c.json")
    assert e.feature_names == d.feature_names
    np.testing.assert_array_equal(e.X, d.X)
    np.testing.assert_array_equal(e.y, d.y)
    assert e.positive_label == "good" and e.name == "credit_synth"


def test_undeclared_categories_are_sorted(tmp_path):
    c, s = _write(tmp_path, ["x", "c", "y"], [["1", "b", "0"], ["2", "a", "1"], ["3", "c", "1"]], NUMF)
    d = load_dataset(c, s)
    assert d.schema[1].categories == ("a", "b", "c")
    assert d.X[:, 1].tolist() == [1, 0, 2]


@pytest.mark.parametrize("rows,features,msg", [
    ([["1", "a", "0"], ["2", "b", "1"]], [{"name": "z", "kind": "numeric"}], "missing column"),
    ([["1", "a", "0"], ["two", "b", "1"]], NUMF, "non-numeric"),
    ([["1", "a", "0"], ["", "b", "1"]], NUMF, "missing value"),
    ([["1", "a", "0"], ["2", "q", "1"]], [NUMF[0], {"name": "c", "kind": "categorical",
                                                    "categories": ["a", "b"]}], "unseen category"),
    ([["1", "a", "0"], ["2", "b", "0"]], NUMF, "distinct"),
    ([["1", "a", "0"], ["2", "b", "1"], ["3", "b", "2"]], NUMF, "distinct"),
])
def test_load_rejects_bad_input(tmp_path, rows, features, msg):
    c, s = _write(tmp_path, ["x", "c", "y"], rows, features)
    with pytest.raises(DataError, match=msg):
        load_dataset(c, s)


def test_single_row_rejected(tmp_path):
    c, s = _write(tmp_path, ["x", "c", "y"], [["1", "a", "1"]], NUMF)
    with pytest.raises(DataError):
        load_dataset(c, s)


def test_schema_kind_checked(tmp_path):
    p = tmp_path / "s.json"
    p.write_text(json.dumps({"features": [{"name": "x", "kind": "ordinal"}]}))
    with pytest.raises(DataError, match="kind"):
        read_schema(p)


def test_dataset_is_read_only(mixed):
    with pytest.raises(ValueError):
        mixed.X[0, 0] = 5.0


def test_decode_encode_inverse(mixed):
    for i in range(10):
        np.testing.assert_array_equal(mixed.encode_values(mixed.instance(i)), mixed.X[i])
    with pytest.raises(DataError):
        mixed.encode_values([0.0, 1.0, "purple", "no"])


@pytest.mark.parametrize("n,expected", [(1000, 200), (1500, 300), (1001, 201), (250, 200), (15_000, 3000)])
def test_test_size_rule(n, expected):
    assert SplitSpec().test_size(n) == expected


def test_split_partitions(mixed):
    d = make_mixed(n=1200)
    train, test = split_train_test(d, SplitSpec(seed=3))
    assert len(test) == 240 and len(train) == 960
    ids = set(train.ids) | set(test.ids)
    assert len(ids) == 1200 and not set(train.ids) & set(test.ids)
    again = split_train_test(d, SplitSpec(seed=3))[1]
    assert again.ids == test.ids


def test_split_needs_more_than_test_min(mixed):
    with pytest.raises(DataError):
        split_train_test(make_mixed(n=200))


def test_stratified_split_keeps_class_ratio():
    d = tic_tac_toe()
    _, test = split_train_test(d, SplitSpec(stratified=True))
    assert abs(test.y.mean() - d.y.mean()) < 0.01


def test_explananda_sample():
    d = make_mixed(n=2000)
    _, test = split_train_test(d)
    idx = sample_explananda(test, SplitSpec())
    assert len(idx) == 200 and len(set(idx)) == 200 and np.all(np.diff(idx) > 0)
    np.testing.assert_array_equal(idx, sample_explananda(test, SplitSpec()))
    small = test.subset(range(50))
    assert len(sample_explananda(small, SplitSpec())) == 50


def test_encoder_ranges_and_one_hot(mixed):
    enc = TabularEncoder(mixed.schema).fit(mixed.X)
    Z = enc.transform(mixed.X)
    assert Z.shape == (len(mixed), 2 + 3 + 2)
    assert Z.min() >= 0 and Z.max() <= 1
    np.testing.assert_array_equal(Z[:, 2:5].sum(axis=1), 1)
    np.testing.assert_array_equal(Z[:, 5:7].sum(axis=1), 1)
    far = mixed.X[:1].copy()
    far[0, 0] = 1e6
    assert enc.transform(far)[0, 0] == 1.0


def test_encoder_roundtrip_and_zero_width(mixed):
    enc = TabularEncoder(mixed.schema).fit(mixed.X)
    back = enc.inverse_transform(enc.transform(mixed.X))
    np.testing.assert_allclose(back, mixed.X, atol=1e-12, rtol=0)
    X = np.array(mixed.X)
    X[:, 1] = 4.0
    Z = TabularEncoder(mixed.schema).fit(X).transform(X)
    assert np.all(Z[:, 1] == 0)


def test_encoder_is_an_sklearn_estimator(mixed):
    enc = TabularEncoder(mixed.schema)
    assert clone(enc).get_params()["schema"] == mixed.schema
    enc.fit(mixed)
    assert enc.schema is mixed.schema
    np.testing.assert_array_equal(encode_instance(mixed.instance(0), mixed), enc.transform(mixed.X[:1])[0])


def test_builtin_datasets_shape():
    t = tic_tac_toe()
    assert (len(t), t.n_features, int(t.y.sum())) == (958, 9, 626)
    m = mofn_3_7_10()
    assert len(m) == 1024 and m.n_features == 10
