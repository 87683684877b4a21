from importlib.metadata import PackageNotFoundError, version

from . import samples as samples
from .analysis import Analysis, operation  # noqa: F401
from .fiducial_analysis import FiducialAnalysis  # noqa: F401
from .group import Group  # noqa: F401
from .inference import confidence_interval, parameter_boxes, point_estimate  # noqa: F401
from .model import (  # noqa: F401
    IntervalDataset,
    ModelSpec,
    ParameterVector,
    build_one_way,
    build_two_factor_crossed,
    build_two_fold_nested,
    discretize,
)
from .smc import run  # noqa: F401

try:
    __version__ = version("fidmix")
except PackageNotFoundError:
    __version__ = "unknown"

__all__ = [
    "Analysis",
    "operation",
    "Group",
    "FiducialAnalysis",
    "IntervalDataset",
    "ModelSpec",
    "ParameterVector",
    "build_one_way",
    "build_two_fold_nested",
    "build_two_factor_crossed",
    "discretize",
    "run",
    "parameter_boxes",
    "confidence_interval",
    "point_estimate",
]
