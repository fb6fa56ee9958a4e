import json

import numpy as np
import pytest

from app.errors import AlphabetMismatchError, DomainError, ParseError
from app.models.alphabet import Alphabet, Dataset
from app.models.selection import PenaltyConfig
from app.services import file_store
from app.services.fitter import fit
from app.services.loglin import model_from_marginals, to_table
from app.services.selector import SrmSelector


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def test_read_rows_and_counts(tmp_path, binary3):
    rows = _write(tmp_path / "rows.csv", "X1,X2,X3\nv0,v0,v0\nv1,v1,v1\nv0,v0,v0\n")
    assert file_store.read_dataset(rows, binary3).counts == {0: 2, 7: 1}

    counted = _write(tmp_path / "counted.csv", "X1,X2,X3,count\nv1,v0,v0,5\nv1,v0,v0,2\nv0,v1,v0,0\n")
    assert file_store.read_dataset(counted, binary3).counts == {1: 7}


def test_dataset_round_trip(tmp_path, binary4, random_dataset, rng):
    d = random_dataset(binary4, 300, rng)
    path = tmp_path / "data.csv"
    file_store.write_dataset(path, d)
    assert path.read_text().splitlines()[0] == "X1,X2,X3,X4,count"
    assert file_store.read_dataset(path, binary4) == d


def test_named_alphabet_round_trip(tmp_path):
    alphabet = Alphabet(
        sizes=(2, 3), names=("smoker", "region"), value_labels=(("no", "yes"), ("north", "south", "east"))
    )
    d = Dataset.from_rows(alphabet, [(1, 2), (0, 0), (1, 2)])
    path = tmp_path / "named.csv"
    file_store.write_dataset(path, d)
    assert "yes,east,2" in path.read_text()
    assert file_store.read_dataset(path, alphabet) == d


def test_malformed_row_reports_its_line(tmp_path, binary3):
    path = _write(tmp_path / "bad.csv", "X1,X2,X3\nv0,v0,v0\nv1,v1\nv0,v1,v0\n")
    with pytest.raises(ParseError) as info:
        file_store.read_dataset(path, binary3)
    assert info.value.line == 3

    path = _write(tmp_path / "label.csv", "X1,X2,X3\nv0,v0,v0\nv0,v$,v0\n")
    with pytest.raises(ParseError) as info:
        file_store.read_dataset(path, binary3)
    assert info.value.line == 3


def test_blank_line_is_rejected_at_its_line(tmp_path, binary3):
    path = _write(tmp_path / "gap.csv", "X1,X2,X3\nv0,v0,v0\n\nv0,v$,v0\n")
    with pytest.raises(ParseError) as info:
        file_store.read_dataset(path, binary3)
    assert info.value.line == 3


def test_missing_files_are_parse_errors(tmp_path, binary3):
    with pytest.raises(ParseError):
        file_store.read_dataset(tmp_path / "absent.csv", binary3)
    with pytest.raises(ParseError):
        file_store.read_model(tmp_path / "absent.json")


@pytest.mark.parametrize(
    "text, error",
    [
        ("", ParseError),
        ("X1,X2,X3,count\nv0,v0,v0,-2\n", ParseError),
        ("X1,X2,X3,count\nv0,v0,v0,two\n", ParseError),
        ("A,B,C\nv0,v0,v0\n", AlphabetMismatchError),
        ("X1,X2,X3\nv0,v2,v0\n", AlphabetMismatchError),
        ("X1,X2,X3,count\nv0,v0,v0,0\n", DomainError),
    ],
)
def test_read_errors(tmp_path, binary3, text, error):
    with pytest.raises(error):
        file_store.read_dataset(_write(tmp_path / "data.csv", text), binary3)


def test_model_round_trip(tmp_path, binary3, random_dataset, rng):
    model = fit(random_dataset(binary3, 100, rng), 2, 0.01).model
    path = tmp_path / "model.json"
    file_store.write_model(path, model)
    payload = json.loads(path.read_text())
    assert payload["version"] == 1 and payload["k"] == 2 and payload["lambda"] == 0.01
    assert [block["vars"] for block in payload["blocks"]] == [[0, 1], [0, 2], [1, 2]]

    loaded = file_store.read_model(path)
    assert np.array_equal(loaded.f, model.f)
    assert loaded.normalized
    np.testing.assert_array_equal(to_table(loaded).probs, to_table(model).probs)


def test_model_file_errors(tmp_path, binary3):
    payload = file_store.model_to_dict(model_from_marginals(binary3, [[0.5, 0.5]] * 3))

    with pytest.raises(ParseError) as info:
        file_store.read_model(_write(tmp_path / "broken.json", "{\n  \"k\": \n"))
    assert info.value.line == 3

    for broken in (
        {**payload, "version": 2},
        {**payload, "blocks": payload["blocks"][:2]},
        {key: value for key, value in payload.items() if key != "lambda"},
        {**payload, "k": "one"},
    ):
        with pytest.raises(ParseError):
            file_store.model_from_dict(broken)

    with pytest.raises(ParseError):
        file_store.read_model(_write(tmp_path / "list.json", "[1, 2]"))


def test_report_round_trip(tmp_path, binary3, random_dataset, rng):
    d = random_dataset(binary3, 150, rng)
    report = SrmSelector(PenaltyConfig(ladder_depth=2)).select(d, 2)
    path = tmp_path / "report.json"
    file_store.write_json(path, report)
    assert '"lambda"' in path.read_text()
    assert file_store.read_report(path).model_dump() == report.model_dump()
