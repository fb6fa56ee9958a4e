"""Data CSV, model JSON and report JSON persistence."""

import json
import re
from pathlib import Path
from typing import Any, Dict, Union

import numpy as np
import pandas as pd
from loguru import logger
from pydantic import BaseModel, ValidationError

from app.errors import AlphabetMismatchError, LogLinError, ParseError, unwrap_validation_error
from app.models.alphabet import Alphabet, Dataset
from app.models.loglinear import LogLinearModel
from app.models.selection import SelectionReport
from app.services.information import state_matrix
from app.services.loglin import build_basis, make_model

PathLike = Union[str, Path]

LABEL_PATTERN = re.compile(r"[A-Za-z0-9_-]+")
COUNT_COLUMN = "count"
MODEL_FORMAT_VERSION = 1


def read_dataset(path: PathLike, alphabet: Alphabet) -> Dataset:
    """Read observations with a header of variable names and an optional trailing count column."""
    try:
        frame = pd.read_csv(
            path, dtype=str, keep_default_na=False, skip_blank_lines=False, engine="python"
        )
    except pd.errors.EmptyDataError:
        raise ParseError(f"{path}: no header line", line=1)
    except pd.errors.ParserError as e:
        match = re.search(r"line (\d+)", str(e))
        raise ParseError(f"wrong number of fields ({e})", line=int(match.group(1)) if match else None)
    except UnicodeDecodeError as e:
        raise ParseError(f"{path} is not UTF-8: {e}")
    except OSError as e:
        raise ParseError(f"{path}: {e.strerror or e}")

    columns = list(frame.columns)
    has_count = columns[-1:] == [COUNT_COLUMN]
    names = columns[:-1] if has_count else columns
    if tuple(names) != alphabet.names:
        raise AlphabetMismatchError(f"header {names} does not match variables {list(alphabet.names)}")

    missing = frame.isna().any(axis=1).to_numpy()
    if missing.any():
        raise ParseError("missing field", line=int(np.argmax(missing)) + 2)

    index = np.zeros(len(frame), dtype=np.int64)
    for name, labels, stride in zip(alphabet.names, alphabet.value_labels, alphabet.strides):
        column = frame[name]
        malformed = ~column.str.fullmatch(LABEL_PATTERN.pattern).to_numpy(dtype=bool)
        if malformed.any():
            row = int(np.argmax(malformed))
            raise ParseError(f"invalid label {column.iloc[row]!r} for {name}", line=row + 2)
        values = column.map({label: v for v, label in enumerate(labels)})
        unknown = values.isna().to_numpy()
        if unknown.any():
            row = int(np.argmax(unknown))
            raise AlphabetMismatchError(
                f"line {row + 2}: label {column.iloc[row]!r} is not a category of {name}"
            )
        index += values.to_numpy(dtype=np.int64) * stride

    if has_count:
        counts = frame[COUNT_COLUMN]
        bad = ~counts.str.fullmatch(r"[0-9]+").to_numpy(dtype=bool)
        if bad.any():
            row = int(np.argmax(bad))
            raise ParseError(f"count must be a nonnegative integer, got {counts.iloc[row]!r}", line=row + 2)
        weights = counts.to_numpy(dtype=np.int64)
    else:
        weights = np.ones(len(frame), dtype=np.int64)

    dense = np.bincount(index, weights=weights, minlength=alphabet.n_states).astype(np.int64)
    try:
        dataset = Dataset.from_dense(alphabet, dense)
    except ValidationError as e:
        raise unwrap_validation_error(e)
    logger.info(f"read {dataset.l} observations over {len(dataset.counts)} distinct states from {path}")
    return dataset


def write_dataset(path: PathLike, d: Dataset) -> None:
    """Aggregated rows in state order, one per observed state."""
    alphabet = d.alphabet
    states = np.fromiter(d.counts.keys(), dtype=np.int64)
    decoded = state_matrix(alphabet)[states]
    frame = pd.DataFrame(
        {
            name: np.asarray(labels, dtype=object)[decoded[:, i]]
            for i, (name, labels) in enumerate(zip(alphabet.names, alphabet.value_labels))
        }
    )
    frame[COUNT_COLUMN] = np.fromiter(d.counts.values(), dtype=np.int64)
    frame.to_csv(path, index=False, lineterminator="\n")
    logger.info(f"wrote {d.l} observations to {path}")


def model_to_dict(model: LogLinearModel) -> Dict[str, Any]:
    alphabet = model.alphabet
    return {
        "version": MODEL_FORMAT_VERSION,
        "alphabet": {
            "sizes": list(alphabet.sizes),
            "names": list(alphabet.names),
            "value_labels": [list(labels) for labels in alphabet.value_labels],
        },
        "k": model.k,
        "lambda": model.lam,
        "blocks": [
            {"vars": list(block.variables), "values": model.f[block.offset:block.stop].tolist()}
            for block in model.basis.blocks
        ],
        "normalized": model.normalized,
    }


def model_from_dict(payload: Dict[str, Any]) -> LogLinearModel:
    try:
        if payload.get("version") != MODEL_FORMAT_VERSION:
            raise ParseError(f"unsupported model format version {payload.get('version')!r}")
        alphabet = Alphabet(
            sizes=payload["alphabet"]["sizes"],
            names=payload["alphabet"]["names"],
            value_labels=payload["alphabet"]["value_labels"],
        )
        basis = build_basis(alphabet, int(payload["k"]))
        blocks = payload["blocks"]
        if len(blocks) != len(basis.blocks):
            raise ParseError(f"expected {len(basis.blocks)} blocks, found {len(blocks)}")
        parts = []
        for expected, block in zip(basis.blocks, blocks):
            if tuple(block["vars"]) != expected.variables or len(block["values"]) != expected.size:
                raise ParseError(
                    f"block {block['vars']} does not match {list(expected.variables)} "
                    f"with {expected.size} values"
                )
            parts.append(np.asarray(block["values"], dtype=np.float64))
        return make_model(basis, np.concatenate(parts), float(payload["lambda"]))
    except ValidationError as e:
        raise unwrap_validation_error(e, ParseError)
    except LogLinError:
        raise
    except (KeyError, TypeError, ValueError) as e:
        raise ParseError(f"malformed model file: {e!r}")


def write_model(path: PathLike, model: LogLinearModel) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=2) + "\n", encoding="utf-8")
    logger.info(f"wrote k={model.k} model to {path}")


def _load_json(path: PathLike) -> Any:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: invalid JSON ({e.msg})", line=e.lineno)
    except UnicodeDecodeError as e:
        raise ParseError(f"{path} is not UTF-8: {e}")
    except OSError as e:
        raise ParseError(f"{path}: {e.strerror or e}")


def read_model(path: PathLike) -> LogLinearModel:
    payload = _load_json(path)
    if not isinstance(payload, dict):
        raise ParseError(f"{path}: model file must hold a JSON object")
    return model_from_dict(payload)


def write_json(path: PathLike, document: BaseModel) -> None:
    """Reports are dumped by alias, so the floor field appears as "lambda"."""
    payload = document.model_dump(mode="json", by_alias=True)
    Path(path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    logger.info(f"wrote {type(document).__name__} to {path}")


def read_report(path: PathLike) -> SelectionReport:
    try:
        return SelectionReport.model_validate(_load_json(path))
    except ValidationError as e:
        raise unwrap_validation_error(e, ParseError)

