"""The fiducial inference pipeline as a chain of analysis operations.

.. code-block:: python

    anl = (
        FiducialAnalysis.from_files("model.json", "data.csv")
        .run_smc(particles=1000, seed=3)
        .fiducial_sample()
        .confidence_intervals(alpha=0.05)
        .calculate()
    )
    (group,) = anl.groups
    group.intervals

Each group carries ``model`` and ``data`` (or exact ``values`` that
``discretize`` turns into data). ``run_smc`` adds ``system``,
``fiducial_sample`` adds ``sample`` and ``confidence_intervals`` adds
``intervals``. A group whose sampler fails gets a ``failure``
attribute instead and is left alone by later steps.

"""

__all__ = ["FiducialAnalysis"]

import logging
from collections.abc import Iterable, Sequence
from copy import copy
from pathlib import Path

import numpy as np

from .analysis import Analysis, operation
from .group import Group
from .inference import IntervalKind, interval_table, parameter_boxes
from .model import ModelSpec, ParameterVector, discretize
from .readers import read_interval_files, read_model
from .smc import InferenceFailure, run

log = logging.getLogger(__name__)


class FiducialAnalysis(Analysis):
    @classmethod
    def from_files(
        cls,
        model: str | Path,
        data: str | Path,
        glob: str = "",
        regex: str = "",
    ) -> "FiducialAnalysis":
        """Read a model file and one or more interval data files.

        Parameters
        ==========
        model
          Path to the JSON model description.
        data
          A CSV data file, or a directory of them.
        glob
          If *data* is a directory, restrict files to this glob.
        regex
          If *data* is a directory, only read files matching this
          regular expression.

        """
        spec = read_model(model)
        groups = [
            Group(model=spec, data=dataset, source=path)
            for path, dataset in read_interval_files(data, glob=glob, regex=regex)
        ]
        return cls(groups=groups)

    @classmethod
    def from_values(
        cls,
        model: ModelSpec,
        values: Iterable[Sequence[float]],
        truth: ParameterVector | None = None,
    ) -> "FiducialAnalysis":
        """One group per vector of exact observations."""
        groups = [
            Group(model=model, values=np.asarray(vals, dtype=float), truth=truth)
            for vals in values
        ]
        return cls(groups=groups)

    @operation(desc="discretize exact values onto a grid")
    def discretize(groups: Sequence[Group], width: float):
        for group in groups:
            new_group = copy(group)
            new_group.data = discretize(group.values, width)
            new_group.width = width
            yield new_group

    @operation(desc="run the particle sampler")
    def run_smc(
        groups: Sequence[Group],
        particles: int = 1000,
        seed: int = 0,
        threshold: float | None = None,
        threads: int = 1,
        init_retries: int = 200,
    ):
        for idx, group in enumerate(groups):
            new_group = copy(group)
            stream = getattr(group, "stream", None)
            try:
                new_group.system = run(
                    group.model,
                    group.data,
                    particles=particles,
                    seed=seed if stream is None else stream,
                    threshold=threshold,
                    threads=threads,
                    init_retries=init_retries,
                )
            except InferenceFailure as exc:
                log.warning("Group %d failed at step %d: %s", idx, exc.step, exc)
                new_group.failure = exc
            yield new_group

    @operation(desc="project particles onto parameter boxes")
    def fiducial_sample(groups: Sequence[Group], threads: int = 1):
        for group in groups:
            new_group = copy(group)
            new_group.sample = parameter_boxes(group.system, threads=threads)
            yield new_group

    @operation(desc="compute confidence intervals")
    def confidence_intervals(
        groups: Sequence[Group],
        alpha: float = 0.05,
        kinds: Iterable[IntervalKind | str] = (IntervalKind.TWO_SIDED,),
        selection: str = "box",
    ):
        kinds = tuple(kinds)
        for group in groups:
            new_group = copy(group)
            new_group.intervals = interval_table(
                group.sample, alpha=alpha, kinds=kinds, selection=selection
            )
            new_group.alpha = alpha
            yield new_group
