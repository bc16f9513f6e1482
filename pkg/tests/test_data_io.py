from __future__ import annotations

import numpy as np
import pytest

from cmgfa.data_io import (
    ScalingTransform,
    atomic_write_text,
    load_csv,
    load_labels,
    peek_columns,
    standardize,
    write_csv,
)
from cmgfa.errors import InvalidArgumentError, ParseError
from cmgfa.model_core import Dataset


def _write(tmp_path, text, name="data.csv"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


def test_load_numeric_csv(tmp_path):
    path = _write(tmp_path, "a,b,c\n1,2,3\n4.5,-1e-3,6\n")
    data = load_csv(path)
    np.testing.assert_array_equal(data.observations, [[1, 2, 3], [4.5, -0.001, 6]])
    assert data.feature_names == ("a", "b", "c")
    assert data.labels is None


def test_label_column_is_split_off(tmp_path):
    path = _write(tmp_path, "x,species,y\n1,setosa,2\n3,virginica,4\n5,setosa,6\n")
    data = load_csv(path, label_column="species")
    assert data.labels.tolist() == [1, 2, 1]
    assert data.feature_names == ("x", "y")


def test_integer_labels_follow_first_appearance(tmp_path):
    path = _write(tmp_path, "x,y,g\n1,2,3\n3,4,1\n5,6,2\n7,8,3.0\n")
    assert load_csv(path, label_column="g").labels.tolist() == [1, 2, 3, 1]


def test_sparse_integer_labels_are_renumbered(tmp_path):
    path = _write(tmp_path, "x,y,g\n1,2,10\n3,4,20\n5,6,10\n")
    assert load_csv(path, label_column="g").labels.tolist() == [1, 2, 1]


@pytest.mark.parametrize(
    "text,code,row,column",
    [
        ("a,b\n1,2\n3,x\n", "non_numeric_cell", 3, "b"),
        ("a,b\n1,2\n3,inf\n", "non_finite_cell", 3, "b"),
        ("a,b\n1,2\n3\n", "ragged_row", 3, None),
        ("a,b\n", "no_rows", 2, None),
        ("1,2\n3,4\n", "missing_header", 1, None),
        ("", "missing_header", 1, None),
    ],
)
def test_parse_errors_carry_location(tmp_path, text, code, row, column):
    path = _write(tmp_path, text)
    with pytest.raises(ParseError) as excinfo:
        load_csv(path)
    assert excinfo.value.code == code
    assert excinfo.value.row == row
    if column is not None:
        assert excinfo.value.column == column


def test_missing_file_and_label_column(tmp_path):
    with pytest.raises(ParseError) as excinfo:
        load_csv(tmp_path / "absent.csv")
    assert excinfo.value.code == "file_not_found"
    path = _write(tmp_path, "a,b\n1,2\n")
    with pytest.raises(ParseError) as excinfo:
        load_csv(path, label_column="class")
    assert excinfo.value.code == "unknown_label_column"


def test_blank_label_rejected(tmp_path):
    path = _write(tmp_path, "a,b,g\n1,2,1\n3,4, \n")
    with pytest.raises(ParseError) as excinfo:
        load_csv(path, label_column="g")
    assert excinfo.value.code == "missing_label"
    assert excinfo.value.row == 3


def test_peek_and_load_labels(tmp_path):
    path = _write(tmp_path, "x1, x2,cluster\n1,2,b\n3,4,a\n")
    assert peek_columns(path) == ("x1", "x2", "cluster")
    assert load_labels(path, "cluster").tolist() == [1, 2]
    labels_only = _write(tmp_path, "cluster\n2\n1\n2\n", name="labels.csv")
    assert load_labels(labels_only).tolist() == [1, 2, 1]


def test_write_csv_round_trips_floats(tmp_path, rng):
    data = Dataset(rng.normal(size=(6, 3)), labels=[1, 2, 1, 2, 2, 1])
    path = write_csv(data, tmp_path / "nested" / "out.csv")
    loaded = load_csv(path, label_column="label")
    np.testing.assert_allclose(loaded.observations, data.observations, rtol=1e-14)
    np.testing.assert_array_equal(loaded.labels, data.labels)
    assert loaded.feature_names == ("x1", "x2", "x3")


def test_atomic_write_leaves_no_temporary_files(tmp_path):
    target = atomic_write_text(tmp_path / "out.txt", "first\n")
    atomic_write_text(target, "second\n")
    assert target.read_text() == "second\n"
    assert [p.name for p in tmp_path.iterdir()] == ["out.txt"]


def test_standardize(rng):
    data = Dataset(rng.normal(loc=3.0, scale=2.0, size=(50, 2)))
    scaled, transform = standardize(data)
    np.testing.assert_allclose(scaled.observations.mean(axis=0), 0.0, atol=1e-12)
    np.testing.assert_allclose(scaled.observations.std(axis=0, ddof=1), 1.0)
    np.testing.assert_allclose(transform.inverse(scaled.observations), data.observations)


def test_standardize_rejects_constant_column():
    data = Dataset(np.array([[1.0, 2.0], [1.0, 3.0], [1.0, 4.0]]), feature_names=("flat", "b"))
    with pytest.raises(InvalidArgumentError) as excinfo:
        standardize(data)
    assert excinfo.value.code == "constant_column"
    assert excinfo.value.detail == "flat"


def test_scaling_transform_validates_scale():
    with pytest.raises(InvalidArgumentError):
        ScalingTransform(center=[0.0, 0.0], scale=[1.0, 0.0])
