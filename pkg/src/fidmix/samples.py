"""Text formats for fiducial samples and interval reports.

A fiducial sample is written as CSV with one row per particle and
parameter:

.. code-block:: text

    particle,weight,param,lower,upper
    0,0.5,mu,1.25,1.5
    0,0.5,sigma_alpha,0,0.75
    ...

Rows are ordered by particle, then by parameter, and numbers use 17
significant digits so that ``load(dump(sample))`` gives back the same
values bit for bit.

Use ``dump()``/``load()`` for strings, ``export_sample()`` and
``read_sample()`` for files, or open a file in xarray with
``xr.open_dataset(path, engine="fidsample")``.

"""

__all__ = [
    "dump",
    "load",
    "export_sample",
    "read_sample",
    "interval_frame",
    "write_interval_report",
]

import io
from collections.abc import Sequence
from pathlib import Path

import numpy as np
import pandas as pd
import xarray as xr
from xarray.backends import BackendEntrypoint

from .inference import ConfidenceInterval, make_sample

SAMPLE_COLUMNS = ["particle", "weight", "param", "lower", "upper"]
REPORT_COLUMNS = ["param", "level", "kind", "lo", "hi"]
FLOAT_FORMAT = "%.17g"


class SampleMalformed(ValueError):
    pass


def dump(fs: xr.Dataset) -> str:
    """Convert a fiducial sample to CSV text."""
    names = fs["param"].values.tolist()
    particles = fs["particle"].values
    frame = pd.DataFrame(
        {
            "particle": np.repeat(particles, len(names)),
            "weight": np.repeat(fs["weight"].values, len(names)),
            "param": np.tile(names, len(particles)),
            "lower": fs["lower"].transpose("particle", "param").values.ravel(),
            "upper": fs["upper"].transpose("particle", "param").values.ravel(),
        },
        columns=SAMPLE_COLUMNS,
    )
    return frame.to_csv(index=False, float_format=FLOAT_FORMAT, lineterminator="\n")


def load(text: str) -> xr.Dataset:
    """Parse CSV text from ``dump()`` back into a fiducial sample."""
    try:
        frame = pd.read_csv(io.StringIO(text), dtype={"param": str})
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise SampleMalformed(str(exc)) from exc
    if list(frame.columns) != SAMPLE_COLUMNS:
        raise SampleMalformed(
            f"Expected columns {SAMPLE_COLUMNS}, got {list(frame.columns)}."
        )
    if len(frame) == 0:
        raise SampleMalformed("Sample has no rows.")
    particles = pd.unique(frame["particle"])
    names = pd.unique(frame["param"])
    shape = (len(particles), len(names))
    if len(frame) != shape[0] * shape[1]:
        raise SampleMalformed("Every particle needs one row per parameter.")
    params = frame["param"].to_numpy().reshape(shape)
    if not np.all(params == names):
        raise SampleMalformed("Parameter rows are not in a consistent order.")
    if not np.all(frame["particle"].to_numpy().reshape(shape).T == particles):
        raise SampleMalformed("Rows must be grouped by particle.")
    weights = frame["weight"].to_numpy(dtype=float).reshape(shape)
    if not np.all(weights == weights[:, :1]):
        raise SampleMalformed("A particle's weight differs between rows.")
    try:
        return make_sample(
            names.tolist(),
            weights[:, 0],
            frame["lower"].to_numpy(dtype=float).reshape(shape),
            frame["upper"].to_numpy(dtype=float).reshape(shape),
            particles=particles,
            normalize=False,
        )
    except ValueError as exc:
        raise SampleMalformed(str(exc)) from exc


def _write_text(path: Path | str, text: str):
    path = Path(path)
    try:
        path.write_text(text, encoding="utf-8", newline="")
    except OSError as exc:
        raise OSError(f"Could not write {path}: {exc}") from exc


def export_sample(fs: xr.Dataset, path: Path | str):
    _write_text(path, dump(fs))


def read_sample(path: Path | str) -> xr.Dataset:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise OSError(f"Could not read sample {path}: {exc}") from exc
    return load(text)


class FiducialSampleBackendEntrypoint(BackendEntrypoint):
    description = "Use fidmix fiducial sample CSV files in Xarray"
    open_dataset_parameters = ["filename_or_obj", "drop_variables"]

    def open_dataset(
        self,
        filename_or_obj,
        *,
        drop_variables=None,
    ):
        dataset = read_sample(filename_or_obj)
        if drop_variables is not None:
            dataset = dataset.drop_vars(drop_variables)
        return dataset

    def guess_can_open(self, filename_or_obj):
        path = Path(filename_or_obj)
        if path.suffix != ".csv":
            return False
        try:
            with open(path, encoding="utf-8") as fp:
                header = fp.readline().strip()
        except OSError:
            return False
        return header == ",".join(SAMPLE_COLUMNS)


def interval_frame(intervals: Sequence[ConfidenceInterval]) -> pd.DataFrame:
    return pd.DataFrame(
        [
            (ci.param, ci.level, ci.kind.value, ci.lo, ci.hi)
            for ci in intervals
        ],
        columns=REPORT_COLUMNS,
    )


def write_interval_report(intervals: Sequence[ConfidenceInterval], path: Path | str):
    """Write a ``param,level,kind,lo,hi`` report.

    Estimate rows have an empty level.
    """
    text = interval_frame(intervals).to_csv(
        index=False, float_format=FLOAT_FORMAT, na_rep="", lineterminator="\n"
    )
    _write_text(path, text)
