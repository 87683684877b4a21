"""Coverage studies over the standard nested and crossed designs.

A study draws replicate datasets from a known truth, runs the sampler on
each, and scores how often the confidence intervals contain the truth
and how long they are on average. ``rejection_oracle`` draws an exact
fiducial sample for very small models by brute force, as a reference
for the sampler.

"""

__all__ = [
    "DesignEntry",
    "ParameterSet",
    "StudyConfig",
    "CoverageRow",
    "StudyReport",
    "OracleFailure",
    "catalog",
    "scenario_designs",
    "lookup_design",
    "parameter_sets",
    "generate_latent",
    "forward",
    "generate_data",
    "replicate_analysis",
    "default_width",
    "run_study",
    "read_study_config",
    "shared_rows",
    "sigma_screen",
    "rejection_oracle",
    "kolmogorov_distance",
]

import json
import logging
import math
import warnings
from collections.abc import Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
import xarray as xr

from .fiducial_analysis import FiducialAnalysis
from .inference import IntervalKind, make_sample, midpoints
from .linalg import feasible, projection_interval
from .model import (
    IntervalDataset,
    ModelSpec,
    ParameterVector,
    build_two_factor_crossed,
    build_two_fold_nested,
    require_valid,
)
from .smc import ConfigurationError, build_constraints
from .streams import Purpose, RngStream, as_stream

log = logging.getLogger(__name__)

REPORT_COLUMNS = [
    "design",
    "paramset",
    "param",
    "kind",
    "level",
    "coverage",
    "avg_length",
    "reps",
    "failures",
]
# Relative slack on crossing sigma_error bounds before a draw is dropped
SCREEN_TOL = 1e-9


class OracleFailure(RuntimeError):
    def __init__(self, message: str, acceptance_rate: float):
        super().__init__(message)
        self.acceptance_rate = acceptance_rate


@dataclass(frozen=True)
class DesignEntry:
    """One simulation design and its imbalance metadata."""

    id: str
    kind: str
    args: tuple
    n: int
    phi: tuple[float, ...] = ()

    def build(self) -> ModelSpec:
        if self.kind == "nested":
            return build_two_fold_nested(*self.args)
        elif self.kind == "crossed":
            return build_two_factor_crossed(*self.args)
        raise ConfigurationError(f"Unknown design kind {self.kind!r}.")

    def describe(self) -> str:
        phi = ", ".join(f"{value:.4f}" for value in self.phi) or "-"
        if self.kind == "nested":
            I, J_i, K_ij = self.args
            shape = f"I={I} J_i={J_i} K_ij={K_ij}"
        else:
            I, J, K_ij = self.args
            rows = "/".join(",".join(str(count) for count in row) for row in K_ij)
            shape = f"I={I} J={J} K_ij={rows}"
        return f"{self.id}\tn={self.n}\tphi=({phi})\t{shape}"


def catalog() -> list[DesignEntry]:
    """The five nested and six crossed study designs."""
    nested = [
        ("MI-1", 5, (2, 1, 1, 1, 1), (4, 4, 2, 2, 2, 2), 16, (0.9000, 0.8889, 0.8090)),
        ("MI-2", 3, (4, 2, 1), (1, 5, 5, 5, 1, 5, 1), 23, (0.7778, 0.7337, 0.6076)),
        ("MI-3", 3, (3, 3, 3), (2,) * 9, 18, (1.0, 1.0, 1.0)),
        ("MI-4", 6, (1, 1, 1, 1, 1, 7), (2,) * 12, 24, (0.4444, 1.0, 0.4444)),
        ("MI-5", 3, (2, 2, 2), (1, 1, 1, 1, 1, 7), 12, (1.0, 0.4444, 0.4444)),
    ]
    crossed = [
        ("MII-1", 4, 3, ((2, 1, 3), (2, 1, 1), (2, 2, 2), (1, 2, 3)), 22, 0.8768),
        ("MII-2", 3, 3, ((4, 1, 1), (4, 1, 1), (4, 1, 1)), 18, 0.6667),
        ("MII-3", 3, 3, ((4, 4, 4), (1, 1, 1), (1, 1, 1)), 18, 0.6667),
        ("MII-4", 3, 4, ((8, 1, 1, 1), (1, 1, 1, 1), (1, 1, 1, 1)), 19, 0.4011),
        (
            "MII-5",
            5,
            3,
            ((1, 2, 2), (5, 2, 7), (2, 2, 2), (2, 4, 2), (3, 2, 2)),
            40,
            0.7619,
        ),
        ("MII-6", 3, 3, ((2, 2, 2), (2, 2, 2), (2, 2, 2)), 18, 1.0),
    ]
    return [
        *(
            DesignEntry(id_, "nested", (I, J_i, K_ij), n, phi)
            for id_, I, J_i, K_ij, n, phi in nested
        ),
        *(
            DesignEntry(id_, "crossed", (I, J, K_ij), n, (phi,))
            for id_, I, J, K_ij, n, phi in crossed
        ),
    ]


def scenario_designs() -> list[DesignEntry]:
    """Designs for replication scenarios outside the catalog.

    "PH" mimics a dam/sire breeding study: 15 dams mated with 3 sires
    (7 dams) or 2 sires (8 dams), 37 sires in all, with an uneven
    number of offspring per sire.
    """
    J_i = (3,) * 7 + (2,) * 8
    K_ij = tuple((2, 3, 1, 2)[idx % 4] for idx in range(sum(J_i)))
    return [DesignEntry("PH", "nested", (15, J_i, K_ij), sum(K_ij))]


def lookup_design(design_id: str) -> DesignEntry:
    designs = {entry.id: entry for entry in [*catalog(), *scenario_designs()]}
    try:
        return designs[design_id]
    except KeyError:
        raise ConfigurationError(
            f"Unknown design {design_id!r}; valid ids are {', '.join(designs)}."
        ) from None


@dataclass(frozen=True)
class ParameterSet:
    """True parameter values, with random effects given as variances."""

    id: str
    variances: tuple[float, ...]
    mu: float = 0.0

    def truth(self) -> ParameterVector:
        return ParameterVector.from_variances([self.mu], self.variances)


def parameter_sets() -> dict[str, ParameterSet]:
    sets = [
        ParameterSet("PI-1", (0.2, 0.1, 0.7)),
        ParameterSet("PI-2", (0.4, 0.3, 0.3)),
        ParameterSet("PI-3", (0.2, 0.7, 0.1)),
        ParameterSet("PI-4", (25, 4, 16)),
        ParameterSet("PI-5", (1, 1, 1)),
        ParameterSet("PII-1", (0.1, 0.5, 0.1, 0.3)),
        ParameterSet("PII-2", (0.1, 0.3, 0.1, 0.5)),
        ParameterSet("PII-3", (0.1, 0.1, 0.3, 0.5)),
        ParameterSet("PII-4", (0.1, 0.1, 0.5, 0.3)),
        ParameterSet("PII-5", (1, 1, 1, 1)),
        ParameterSet("PH-REML", (8.90, 2.65, 24.81), mu=44.92),
    ]
    return {params.id: params for params in sets}


def generate_latent(spec: ModelSpec, rng: np.random.Generator) -> list[np.ndarray]:
    """Independent standard normals for every level of every effect."""
    return [rng.standard_normal(effect.levels) for effect in spec.effects]


def forward(
    spec: ModelSpec, truth: ParameterVector, z: Sequence[np.ndarray]
) -> np.ndarray:
    """Exact observations ``X·beta + sum_i sigma_i·V_i·z_i``."""
    y = spec.X @ truth.beta
    for sigma, effect, z_i in zip(truth.sigma, spec.effects, z):
        y = y + sigma * (effect.design @ z_i)
    return y


def _check_truth(spec: ModelSpec, truth: ParameterVector):
    if len(truth.beta) != spec.p or len(truth.sigma) != spec.r:
        raise ConfigurationError(
            f"Truth has {len(truth.beta)} fixed effects and {len(truth.sigma)} "
            f"standard deviations; the model needs {spec.p} and {spec.r}."
        )


def generate_data(
    spec: ModelSpec, truth: ParameterVector, stream: RngStream
) -> np.ndarray:
    _check_truth(spec, truth)
    rng = stream.child(Purpose.DATA).generator()
    return forward(spec, truth, generate_latent(spec, rng))


def replicate_analysis(
    spec: ModelSpec,
    truth: ParameterVector,
    replicates: int,
    seed: int | RngStream = 0,
) -> FiducialAnalysis:
    """An analysis with one group of exact values per replicate."""
    base = as_stream(seed)
    streams = [base.child(Purpose.REPLICATE, rep) for rep in range(replicates)]
    anl = FiducialAnalysis.from_values(
        spec, [generate_data(spec, truth, stream) for stream in streams], truth
    )
    for rep, (group, stream) in enumerate(zip(anl.groups, streams)):
        group.replicate = rep
        group.stream = stream
    return anl


def default_width(truth: ParameterVector) -> float:
    """One hundredth of the total standard deviation of an observation."""
    return 0.01 * math.sqrt(float(np.sum(truth.sigma**2)))


@dataclass(frozen=True)
class StudyConfig:
    design: str
    params: str
    replicates: int = 300
    particles: int = 1000
    seed: int = 0
    alpha: float = 0.05
    width: float | None = None
    kinds: tuple[str, ...] = (IntervalKind.TWO_SIDED.value,)
    threshold: float | None = None
    threads: int = 1
    init_retries: int = 200
    selection: str = "box"

    def __post_init__(self):
        object.__setattr__(
            self, "kinds", tuple(IntervalKind(kind).value for kind in self.kinds)
        )
        if self.replicates < 1:
            raise ConfigurationError(f"Need at least 1 replicate, got {self.replicates}.")
        if self.particles < 2:
            raise ConfigurationError(f"Need at least 2 particles, got {self.particles}.")
        if self.width is not None and not self.width > 0:
            raise ConfigurationError(f"Grid width must be positive, got {self.width}.")
        if not 0 < self.alpha < 1:
            raise ConfigurationError(f"alpha must lie in (0, 1), got {self.alpha}.")
        if self.seed < 0:
            raise ConfigurationError(f"Seeds must be non-negative, got {self.seed}.")
        if self.selection not in ("box", "midpoint"):
            raise ConfigurationError(f"Unknown selection rule {self.selection!r}.")

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "StudyConfig":
        try:
            return cls(**doc)
        except TypeError as exc:
            raise ConfigurationError(f"Invalid study config: {exc}") from exc
        except ValueError as exc:
            if isinstance(exc, ConfigurationError):
                raise
            raise ConfigurationError(f"Invalid study config: {exc}") from exc

    def as_dict(self) -> dict[str, Any]:
        return {**asdict(self), "kinds": list(self.kinds)}


def read_study_config(path: Path | str) -> StudyConfig:
    """Load a study configuration from JSON."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise OSError(f"Could not read study config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"Study config {path} is not valid JSON: {exc}") from exc
    return StudyConfig.from_dict(doc)


@dataclass(frozen=True)
class CoverageRow:
    design: str
    paramset: str
    param: str
    kind: str
    level: float
    coverage: float
    avg_length: float
    reps: int
    failures: int


@dataclass()
class StudyReport:
    config: StudyConfig
    width: float
    rows: list[CoverageRow] = field(default_factory=list)
    failures: int = 0

    @property
    def failure_rate(self) -> float:
        return self.failures / self.config.replicates

    def to_dataframe(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(row) for row in self.rows], columns=REPORT_COLUMNS)

    def to_csv(self, path: Path | str):
        self.to_dataframe().to_csv(
            path, index=False, float_format="%.17g", lineterminator="\n"
        )

    def row(self, param: str, kind: str = "two-sided") -> CoverageRow:
        for row in self.rows:
            if row.param == param and row.kind == kind:
                return row
        raise KeyError((param, kind))


def _true_values(spec: ModelSpec, truth: ParameterVector) -> dict[str, float]:
    values = dict(zip(spec.names, truth.as_array().tolist()))
    for name, sigma in zip(spec.names[spec.p :], truth.sigma):
        values[f"{name}^2"] = float(sigma) ** 2
    return values


def run_study(
    cfg: StudyConfig,
    spec: ModelSpec | None = None,
    truth: ParameterVector | None = None,
) -> StudyReport:
    """Score interval coverage over ``cfg.replicates`` simulated datasets.

    *spec* and *truth* default to the catalog design and parameter set
    named in *cfg*.

    """
    if spec is None:
        spec = lookup_design(cfg.design).build()
    if truth is None:
        try:
            truth = parameter_sets()[cfg.params].truth()
        except KeyError:
            raise ConfigurationError(
                f"Unknown parameter set {cfg.params!r}; valid ids are "
                f"{', '.join(parameter_sets())}."
            ) from None
    require_valid(spec)
    _check_truth(spec, truth)
    width = cfg.width if cfg.width is not None else default_width(truth)
    log.info(
        "Study %s/%s: %d replicates, %d particles, width %g",
        cfg.design,
        cfg.params,
        cfg.replicates,
        cfg.particles,
        width,
    )
    anl = (
        replicate_analysis(spec, truth, cfg.replicates, cfg.seed)
        .discretize(width)
        .run_smc(
            particles=cfg.particles,
            threshold=cfg.threshold,
            threads=cfg.threads,
            init_retries=cfg.init_retries,
        )
        .fiducial_sample(threads=cfg.threads)
        .confidence_intervals(alpha=cfg.alpha, kinds=cfg.kinds, selection=cfg.selection)
        .calculate()
    )
    report = StudyReport(config=cfg, width=width, failures=len(anl.failures))
    targets = _true_values(spec, truth)
    succeeded = [group for group in anl.groups if not hasattr(group, "failure")]
    keys = []
    for name in spec.names:
        for kind in cfg.kinds:
            keys.append((name, kind))
            if name.startswith("sigma_"):
                keys.append((f"{name}^2", kind))
    for param, kind in keys:
        intervals = [
            ci
            for group in succeeded
            for ci in group.intervals
            if ci.param == param and ci.kind.value == kind
        ]
        covered = [ci.contains(targets[param]) for ci in intervals]
        lengths = [ci.length for ci in intervals if math.isfinite(ci.length)]
        report.rows.append(
            CoverageRow(
                design=cfg.design,
                paramset=cfg.params,
                param=param,
                kind=kind,
                level=1 - cfg.alpha,
                coverage=float(np.mean(covered)) if covered else math.nan,
                avg_length=float(np.mean(lengths)) if lengths else math.nan,
                reps=cfg.replicates,
                failures=report.failures,
            )
        )
    if report.failure_rate > 0.1:
        warnings.warn(
            f"{report.failures} of {cfg.replicates} replicates failed; "
            "coverage is computed over the rest."
        )
    return report


def shared_rows(spec: ModelSpec) -> list[np.ndarray]:
    """Groups of rows that differ only in their error term.

    Two rows fall in one group when they have the same fixed-effect row
    and the same level of every random effect other than the error.
    Singleton groups are left out.

    """
    keys = np.hstack([spec.X, *(effect.design for effect in spec.effects[:-1])])
    _, inverse = np.unique(keys, axis=0, return_inverse=True)
    inverse = np.ravel(inverse)
    groups = [np.flatnonzero(inverse == key) for key in range(inverse.max() + 1)]
    return [rows for rows in groups if len(rows) > 1]


def sigma_screen(
    data: IntervalDataset, errors: np.ndarray, groups: Sequence[np.ndarray]
) -> np.ndarray:
    """Draws that leave room for a non-negative error standard deviation.

    Within a group of *groups*, rows *i* and *j* share everything but
    the error, so ``sigma_error·(e_i - e_j) > a_i - b_j`` for the error
    latent sums *errors* (one row per draw). Each pair bounds
    ``sigma_error`` from one side, and a draw whose bounds cross has an
    empty polyhedron. Draws that pass still need the full check unless
    the model has a single group.

    """
    keep = np.ones(len(errors), dtype=bool)
    lower = np.zeros(len(errors))
    upper = np.full(len(errors), np.inf)
    for rows in groups:
        gap = data.lower[rows][:, None] - data.upper[rows][None, :]
        e = errors[:, rows]
        diff = e[:, :, None] - e[:, None, :]
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = gap / diff
        lower = np.maximum(lower, np.where(diff > 0, ratio, 0.0).max(axis=(1, 2)))
        upper = np.minimum(upper, np.where(diff < 0, ratio, np.inf).min(axis=(1, 2)))
        keep &= np.all((diff != 0) | (gap < 0), axis=(1, 2))
    return keep & (lower - upper <= SCREEN_TOL * (1 + lower))


def rejection_oracle(
    spec: ModelSpec,
    data: IntervalDataset,
    draws: int,
    stream: int | RngStream = 0,
    threads: int = 1,
    batch_size: int = 1000,
    screen: bool = True,
) -> xr.Dataset:
    """Exact fiducial sample by rejection.

    Every latent value is drawn from a standard normal, and the draw is
    kept when its polyhedron over all observations is nonempty. The kept
    draws are equally weighted. The acceptance rate is stored in the
    ``acceptance_rate`` attribute of the result.

    With *screen*, each batch first drops the draws that
    :py:func:`sigma_screen` rules out, and only the rest go through the
    linear program. The accepted draws are the same either way.

    """
    if draws < 1:
        raise ConfigurationError(f"Need at least one oracle draw, got {draws}.")
    require_valid(spec)
    if len(data) != spec.n:
        raise ConfigurationError(
            f"Model has {spec.n} rows but data has {len(data)} intervals."
        )
    base = as_stream(stream)
    batches = [
        (idx, min(batch_size, draws - start))
        for idx, start in enumerate(range(0, draws, batch_size))
    ]

    groups = shared_rows(spec) if screen else []
    error = spec.effects[-1].design

    def run_batch(batch: tuple[int, int]) -> tuple[list[np.ndarray], int]:
        idx, size = batch
        rng = base.child(Purpose.ORACLE, idx).generator()
        latents = [generate_latent(spec, rng) for _ in range(size)]
        candidates = range(size)
        if groups:
            errors = np.array([error @ z[-1] for z in latents])
            candidates = np.flatnonzero(sigma_screen(data, errors, groups))
        boxes = []
        for draw in candidates:
            constraints = build_constraints(spec, data, latents[draw], spec.n)
            if feasible(constraints):
                boxes.append(
                    np.array(
                        [projection_interval(constraints, k) for k in range(spec.dim)]
                    )
                )
        return boxes, len(candidates)

    with ThreadPoolExecutor(max_workers=max(int(threads), 1)) as pool:
        results = list(pool.map(run_batch, batches))
    accepted = [box for boxes, _ in results for box in boxes]
    checked = sum(count for _, count in results)
    rate = len(accepted) / draws
    log.info(
        "Oracle accepted %d of %d draws (%d passed the screen)",
        len(accepted),
        draws,
        checked,
    )
    if len(accepted) == 0:
        raise OracleFailure(
            f"No draws out of {draws} gave a nonempty polyhedron; "
            "widen the intervals or increase the draws.",
            acceptance_rate=rate,
        )
    boxes = np.array(accepted)
    sample = make_sample(
        spec.names,
        np.ones(len(boxes)),
        np.minimum(boxes[..., 0], boxes[..., 1]),
        boxes[..., 1],
    )
    sample.attrs["acceptance_rate"] = rate
    return sample


def _weighted_ecdf(values: np.ndarray, weights: np.ndarray, grid: np.ndarray):
    order = np.argsort(values, kind="stable")
    cumulative = np.concatenate([[0.0], np.cumsum(weights[order])])
    return cumulative[np.searchsorted(values[order], grid, side="right")]


def kolmogorov_distance(a: xr.Dataset, b: xr.Dataset, param: str) -> float:
    """Largest gap between the weighted CDFs of box midpoints of *param*."""
    xa = midpoints(a).sel(param=param).values
    xb = midpoints(b).sel(param=param).values
    if np.any(np.isnan(xa)) or np.any(np.isnan(xb)):
        raise ValueError(f"Midpoints of {param} are undefined on unbounded boxes.")
    grid = np.union1d(xa, xb)
    Fa = _weighted_ecdf(xa, a["weight"].values, grid)
    Fb = _weighted_ecdf(xb, b["weight"].values, grid)
    return float(np.max(np.abs(Fa - Fb)))
