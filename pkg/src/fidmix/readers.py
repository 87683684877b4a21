"""Readers and writers for model and interval data files."""

__all__ = [
    "resolve_file_paths",
    "model_to_dict",
    "model_from_dict",
    "read_model",
    "write_model",
    "read_intervals",
    "write_intervals",
    "read_interval_files",
]

import json
import re
from collections.abc import Generator, Mapping
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd

from .model import IntervalDataset, InvalidData, InvalidDesign, ModelSpec, RandomEffect


def resolve_file_paths(base: Path, glob: str = "", regex: str = "") -> list[Path]:
    """Figures out which files in a *base* path match the glob and
    regex provided.

    Also, *base* can be a path to a file, then just the base path is
    returned.

    """
    if base.is_file():
        return [base]
    if glob:
        children = list(base.glob(glob))
    else:
        children = list(base.iterdir())
    regex_ = re.compile(regex)
    children = [path for path in children if regex_.search(str(path))]
    return sorted(children)


def model_to_dict(spec: ModelSpec) -> dict[str, Any]:
    """Plain-data form of a model, with sparse random-effect rows."""
    effects = []
    for effect in spec.effects:
        assignments = [
            [[int(level) + 1, float(row[level])] for level in np.flatnonzero(row)]
            for row in effect.design
        ]
        effects.append(
            {"name": effect.name, "levels": effect.levels, "assignments": assignments}
        )
    return {
        "p": spec.p,
        "r": spec.r,
        "n": spec.n,
        "X": spec.X.tolist(),
        "effects": effects,
        "names": list(spec.names),
    }


def _effect_from_dict(doc: Mapping, idx: int, n: int, names: list[str], p: int):
    try:
        levels = int(doc["levels"])
        assignments = doc["assignments"]
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidDesign(f"Effect {idx + 1} is missing {exc}.") from exc
    if len(assignments) != n:
        raise InvalidDesign(
            f"Effect {idx + 1} has {len(assignments)} assignment rows, expected {n}."
        )
    design = np.zeros((n, levels))
    for row, pairs in enumerate(assignments):
        for level, coeff in pairs:
            if not 1 <= int(level) <= levels:
                raise InvalidDesign(
                    f"Effect {idx + 1} row {row + 1} uses level {level} "
                    f"outside 1..{levels}."
                )
            design[row, int(level) - 1] = float(coeff)
    if "name" in doc:
        name = str(doc["name"])
    elif len(names) > p + idx:
        name = names[p + idx].removeprefix("sigma_")
    else:
        name = f"effect{idx + 1}"
    return RandomEffect(name, design)


def model_from_dict(doc: Mapping[str, Any]) -> ModelSpec:
    """Build a model from the plain-data form of ``model_to_dict()``."""
    try:
        X = np.asarray(doc["X"], dtype=float)
        effects_doc = doc["effects"]
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidDesign(f"Model document is missing {exc}.") from exc
    X = X.reshape(len(X), -1)
    n, p = X.shape
    for key, expected in [("n", n), ("p", p), ("r", len(effects_doc))]:
        if key in doc and int(doc[key]) != expected:
            raise InvalidDesign(f"Model says {key}={doc[key]} but has {expected}.")
    names = list(doc.get("names", []))
    if names and len(names) != p + len(effects_doc):
        raise InvalidDesign(
            f"Model has {p + len(effects_doc)} parameters but {len(names)} names."
        )
    effects = tuple(
        _effect_from_dict(effect, idx, n, names, p)
        for idx, effect in enumerate(effects_doc)
    )
    beta_names = tuple(names[:p]) if names else (
        ("mu",) if p == 1 else tuple(f"beta{idx + 1}" for idx in range(p))
    )
    return ModelSpec(X=X, effects=effects, beta_names=beta_names)


def read_model(path: Path | str) -> ModelSpec:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise OSError(f"Could not read model {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InvalidDesign(f"Model file {path} is not valid JSON: {exc}") from exc
    return model_from_dict(doc)


def write_model(spec: ModelSpec, path: Path | str):
    Path(path).write_text(json.dumps(model_to_dict(spec), indent=2) + "\n")


def read_intervals(path: Path | str) -> IntervalDataset:
    """Read interval data from a CSV file with ``lower,upper`` columns."""
    path = Path(path)
    try:
        frame = pd.read_csv(path, encoding="utf-8")
    except OSError as exc:
        raise OSError(f"Could not read data {path}: {exc}") from exc
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise InvalidData(f"Data file {path} is not valid CSV: {exc}") from exc
    if list(frame.columns) != ["lower", "upper"]:
        raise InvalidData(
            f"Data file {path} needs columns lower,upper; got {list(frame.columns)}."
        )
    try:
        lower = frame["lower"].to_numpy(dtype=float)
        upper = frame["upper"].to_numpy(dtype=float)
    except ValueError as exc:
        raise InvalidData(f"Data file {path} has non-numeric bounds.") from exc
    return IntervalDataset.from_bounds(lower, upper)


def write_intervals(data: IntervalDataset, path: Path | str):
    frame = pd.DataFrame({"lower": data.lower, "upper": data.upper})
    frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")


def read_interval_files(
    base: Path | str, glob: str = "", regex: str = ""
) -> Generator[tuple[Path, IntervalDataset], Any, None]:
    """Iterate interval datasets from a file or a directory of files.

    Parameters
    ==========
    base
      A filesystem path in which to look for files, or else a
      specific file to read.
    glob
      If *base* is a directory, this glob will be used as a pattern
      for restricting files.
    regex
      If *base* is a directory, only files matching this regular
      expression will be read.

    """
    for path in resolve_file_paths(Path(base), glob=glob, regex=regex):
        yield path, read_intervals(path)
