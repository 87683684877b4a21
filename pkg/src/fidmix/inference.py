"""Fiducial samples, point estimates and confidence intervals.

A fiducial sample is an :py:class:`xarray.Dataset` with dimensions
``(particle, param)``:

"weight"
  Normalized particle weights (dimension ``particle``).
"lower", "upper"
  Projection interval of each particle's polyhedron on each parameter.

The ``param`` coordinate holds the parameter names, and ``param_kind``
says whether each one is a fixed effect (``"fixed"``) or a standard
deviation (``"sigma"``).

"""

__all__ = [
    "IntervalKind",
    "ConfidenceInterval",
    "make_sample",
    "parameter_boxes",
    "weighted_quantile",
    "confidence_interval",
    "variance_interval",
    "point_estimate",
    "midpoints",
    "interval_table",
]

import math
import warnings
from collections.abc import Iterable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum

import numpy as np
import xarray as xr

from .linalg import projection_interval
from .smc import ConfigurationError, ParticleSystem


SELECTIONS = ("box", "midpoint")
MIN_SLACK_TERMS = 16


class IntervalKind(str, Enum):
    TWO_SIDED = "two-sided"
    LOWER = "lower"
    UPPER = "upper"
    ESTIMATE = "estimate"


@dataclass(frozen=True)
class ConfidenceInterval:
    param: str
    level: float
    kind: IntervalKind
    lo: float
    hi: float

    @property
    def length(self) -> float:
        return self.hi - self.lo

    def contains(self, value: float) -> bool:
        return self.lo <= value <= self.hi


def param_kinds(names: Sequence[str]) -> list[str]:
    return ["sigma" if name.startswith("sigma_") else "fixed" for name in names]


def make_sample(
    names: Sequence[str],
    weights: Sequence[float],
    lower: np.ndarray,
    upper: np.ndarray,
    particles: Sequence[int] | None = None,
    normalize: bool = True,
) -> xr.Dataset:
    """Assemble a fiducial sample dataset.

    Parameters
    ==========
    names
      Parameter names, one per column of *lower* and *upper*.
    weights
      Particle weights.
    lower, upper
      ``(particle, param)`` arrays of projection intervals.
    particles
      Particle labels; defaults to ``0..N-1``.
    normalize
      Rescale *weights* to sum to one. Turn off to keep stored weights
      bit for bit.

    """
    weights = np.asarray(weights, dtype=float)
    lower = np.asarray(lower, dtype=float).reshape(len(weights), len(names))
    upper = np.asarray(upper, dtype=float).reshape(len(weights), len(names))
    if len(weights) == 0:
        raise ValueError("A fiducial sample needs at least one particle.")
    if np.any(weights < 0) or not np.sum(weights) > 0:
        raise ValueError("Weights must be non-negative with a positive sum.")
    if np.any(lower > upper):
        raise ValueError("Every projection interval needs lower <= upper.")
    if particles is None:
        particles = np.arange(len(weights))
    if normalize:
        weights = weights / np.sum(weights)
    return xr.Dataset(
        data_vars={
            "weight": (("particle",), weights),
            "lower": (("particle", "param"), lower),
            "upper": (("particle", "param"), upper),
        },
        coords={
            "particle": np.asarray(particles, dtype=int),
            "param": list(names),
            "param_kind": (("param",), param_kinds(names)),
        },
    )


def parameter_boxes(system: ParticleSystem, threads: int = 1) -> xr.Dataset:
    """Project every live particle's polyhedron onto each parameter."""
    weights = system.normalized_weights()
    alive = [idx for idx, particle in enumerate(system.particles) if particle.alive]
    dim = system.model.dim

    def box(idx: int) -> np.ndarray:
        constraints = system.particles[idx].constraints
        return np.array([projection_interval(constraints, k) for k in range(dim)])

    with ThreadPoolExecutor(max_workers=max(int(threads), 1)) as pool:
        boxes = np.array(list(pool.map(box, alive))).reshape(len(alive), dim, 2)
    # Round-off can leave min a hair above max on degenerate boxes
    lower = np.minimum(boxes[..., 0], boxes[..., 1])
    return make_sample(
        system.model.names,
        weights[alive],
        lower,
        boxes[..., 1],
        particles=alive,
    )


def weighted_quantile(
    values: Sequence[float], weights: Sequence[float], q: float
) -> float:
    """Smallest value whose cumulative sorted weight reaches *q*."""
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if len(values) == 0:
        raise ValueError("Cannot take the quantile of an empty sample.")
    if values.shape != weights.shape:
        raise ValueError("Values and weights differ in shape.")
    # Round-off bound for a running sum of len(weights) terms
    slack = max(len(weights), MIN_SLACK_TERMS) * np.finfo(weights.dtype).eps
    if abs(np.sum(weights) - 1) > slack:
        raise ValueError(f"Weights must sum to 1, got {np.sum(weights)!r}.")
    if not 0 <= q <= 1:
        raise ValueError(f"Quantile level must lie in [0, 1], got {q}.")
    order = np.argsort(values, kind="stable")
    cumulative = np.cumsum(weights[order])
    idx = np.searchsorted(cumulative, q - slack, side="left")
    return float(values[order][min(idx, len(values) - 1)])


def _selected(fs: xr.Dataset, param: str, selection: str):
    lower = fs["lower"].sel(param=param).values
    upper = fs["upper"].sel(param=param).values
    if selection == "box":
        return lower, upper
    if selection == "midpoint":
        with np.errstate(invalid="ignore"):
            mid = (lower + upper) / 2
        if not np.all(np.isfinite(mid)):
            raise ConfigurationError(
                f"Midpoint selection is undefined for {param}, whose boxes are "
                "unbounded; use the box rule."
            )
        return mid, mid
    raise ConfigurationError(
        f"Unknown selection rule {selection!r}; use one of {SELECTIONS}."
    )


def is_sigma(fs: xr.Dataset, param: str) -> bool:
    return str(fs["param_kind"].sel(param=param).values) == "sigma"


def confidence_interval(
    fs: xr.Dataset,
    param: str,
    alpha: float = 0.05,
    kind: IntervalKind | str = IntervalKind.TWO_SIDED,
    selection: str = "box",
) -> ConfidenceInterval:
    """A ``1 - alpha`` confidence interval for *param*.

    With the ``"box"`` selection rule the lower endpoint comes from the
    particles' lower projection bounds and the upper endpoint from their
    upper bounds, so the interval is conservative. Standard deviations
    never get a negative lower endpoint.

    """
    if not 0 < alpha < 1:
        raise ConfigurationError(f"alpha must lie in (0, 1), got {alpha}.")
    kind = IntervalKind(kind)
    lower, upper = _selected(fs, param, selection)
    weights = fs["weight"].values
    floor = 0.0 if is_sigma(fs, param) else -math.inf
    if kind is IntervalKind.TWO_SIDED:
        lo = weighted_quantile(lower, weights, alpha / 2)
        hi = weighted_quantile(upper, weights, 1 - alpha / 2)
    elif kind is IntervalKind.LOWER:
        lo = floor
        hi = weighted_quantile(upper, weights, 1 - alpha)
    elif kind is IntervalKind.UPPER:
        lo = weighted_quantile(lower, weights, alpha)
        hi = math.inf
    else:
        raise ValueError(f"{kind.value!r} is not an interval kind.")
    return ConfidenceInterval(param, 1 - alpha, kind, max(lo, floor), hi)


def variance_interval(ci: ConfidenceInterval) -> ConfidenceInterval:
    """Square the endpoints of a standard-deviation interval."""
    if ci.lo < 0:
        raise ValueError(f"{ci.param} interval has a negative lower endpoint.")
    return ConfidenceInterval(f"{ci.param}^2", ci.level, ci.kind, ci.lo**2, ci.hi**2)


def midpoints(fs: xr.Dataset) -> xr.DataArray:
    return (fs["lower"] + fs["upper"]) / 2


def point_estimate(fs: xr.Dataset, param: str) -> float:
    """Weighted mean of the box midpoints of *param*."""
    lower = fs["lower"].sel(param=param).values
    upper = fs["upper"].sel(param=param).values
    if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))):
        raise ValueError(f"Estimate of {param} is undefined on unbounded boxes.")
    return float(np.sum(fs["weight"].values * (lower + upper) / 2))


def interval_table(
    fs: xr.Dataset,
    alpha: float = 0.05,
    kinds: Iterable[IntervalKind | str] = (IntervalKind.TWO_SIDED,),
    selection: str = "box",
) -> list[ConfidenceInterval]:
    """Every requested interval, plus variance-scale and estimate rows."""
    kinds = [IntervalKind(kind) for kind in kinds]
    rows = []
    for param in fs["param"].values.tolist():
        for kind in kinds:
            if kind is IntervalKind.ESTIMATE:
                continue
            ci = confidence_interval(fs, param, alpha, kind, selection)
            rows.append(ci)
            if is_sigma(fs, param):
                rows.append(variance_interval(ci))
        try:
            estimate = point_estimate(fs, param)
        except ValueError as exc:
            warnings.warn(str(exc))
            continue
        rows.append(
            ConfidenceInterval(param, math.nan, IntervalKind.ESTIMATE, estimate, estimate)
        )
    return rows
