import json

import numpy as np
import pytest

from fidmix.model import InvalidData, InvalidDesign, build_two_fold_nested, discretize
from fidmix.readers import (
    model_from_dict,
    model_to_dict,
    read_interval_files,
    read_intervals,
    read_model,
    resolve_file_paths,
    write_intervals,
    write_model,
)


def test_resolve_single_file(tmp_path):
    # Set up some files to check
    good_path = tmp_path / "spam.eggs"
    good_path.touch()
    resolved = resolve_file_paths(good_path)
    assert resolved == [good_path]


def test_resolve_directory(tmp_path):
    # Set up some files to check
    good_path = tmp_path / "spam.eggs"
    good_path.touch()
    bad_path = tmp_path / "spam.parrot"
    bad_path.touch()
    resolved = resolve_file_paths(tmp_path)
    assert resolved == [good_path, bad_path]


def test_resolve_file_globs(tmp_path):
    good_path = tmp_path / "spam.eggs"
    good_path.touch()
    bad_path = tmp_path / "spam.parrot"
    bad_path.touch()
    resolved = resolve_file_paths(tmp_path, glob="s*s")
    assert resolved == [good_path]


def test_resolve_file_regex(tmp_path):
    good_path = tmp_path / "spam.eggs"
    good_path.touch()
    bad_path = tmp_path / "spamparrot"
    bad_path.touch()
    resolved = resolve_file_paths(tmp_path, regex=r"spam\..+")
    assert resolved == [good_path]


def test_model_round_trip(tmp_path):
    spec = build_two_fold_nested(3, (4, 2, 1), (1, 5, 5, 5, 1, 5, 1))
    path = tmp_path / "model.json"
    write_model(spec, path)
    loaded = read_model(path)
    np.testing.assert_array_equal(loaded.X, spec.X)
    assert loaded.names == spec.names
    for ours, theirs in zip(loaded.effects, spec.effects):
        np.testing.assert_array_equal(ours.design, theirs.design)


def test_model_document_is_sparse():
    doc = model_to_dict(build_two_fold_nested(2, (1, 1), (2, 1)))
    alpha = doc["effects"][0]
    assert alpha["levels"] == 2
    assert alpha["assignments"] == [[[1, 1.0]], [[1, 1.0]], [[2, 1.0]]]


def test_model_from_dict_defaults():
    doc = {
        "X": [[1.0], [1.0]],
        "effects": [{"levels": 2, "assignments": [[[1, 1.0]], [[2, 1.0]]]}],
    }
    spec = model_from_dict(doc)
    assert spec.names == ("mu", "sigma_effect1")


@pytest.mark.parametrize(
    "doc",
    [
        {"effects": []},
        {"X": [[1.0]], "effects": [{"levels": 1, "assignments": [[[2, 1.0]]]}]},
        {"X": [[1.0]], "effects": [{"levels": 1, "assignments": []}]},
        {"X": [[1.0]], "n": 3, "effects": []},
    ],
)
def test_model_from_dict_invalid(doc):
    with pytest.raises(InvalidDesign):
        model_from_dict(doc)


def test_read_model_bad_json(tmp_path):
    path = tmp_path / "model.json"
    path.write_text("{not json")
    with pytest.raises(InvalidDesign):
        read_model(path)


def test_intervals_round_trip(tmp_path):
    data = discretize([0.123, -4.5, 2.0], 0.01)
    path = tmp_path / "data.csv"
    write_intervals(data, path)
    loaded = read_intervals(path)
    assert loaded == data


@pytest.mark.parametrize(
    "text",
    ["low,high\n0,1\n", "lower,upper\n1,0\n", "lower,upper\nabc,1\n", ""],
)
def test_read_intervals_invalid(tmp_path, text):
    path = tmp_path / "data.csv"
    path.write_text(text)
    with pytest.raises(InvalidData):
        read_intervals(path)


def test_read_interval_files(tmp_path):
    for name, values in [("b.csv", [1.0, 2.0]), ("a.csv", [3.0, 4.0])]:
        write_intervals(discretize(values, 0.5), tmp_path / name)
    (tmp_path / "notes.txt").write_text(json.dumps({}))
    found = list(read_interval_files(tmp_path, glob="*.csv"))
    assert [path.name for path, _ in found] == ["a.csv", "b.csv"]
    assert len(found[0][1]) == 2
