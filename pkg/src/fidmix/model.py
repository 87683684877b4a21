r"""Normal linear mixed models in structural-equation form.

A model is written as

.. math::

    a_t < Y_t = X_t \beta + \sum_{i=1}^r \sigma_i \sum_j v_{i,j,t} z_{i,j} \leq b_t

where the last random effect (index ``r``) is the error effect with an
identity design. The fiducial distribution does not depend on the row
order, but the sampler does: it reorders rows so that the first ``p + r``
of them pin down every parameter (see ``fidmix.smc.initialization_order``).

"""

__all__ = [
    "RandomEffect",
    "ModelSpec",
    "IntervalObservation",
    "IntervalDataset",
    "ParameterVector",
    "build_one_way",
    "build_two_fold_nested",
    "build_two_factor_crossed",
    "discretize",
    "validate",
    "require_valid",
]

import math
from collections.abc import Iterator, Sequence
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np


class InvalidDesign(ValueError):
    pass


class InvalidData(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class RandomEffect:
    """One random effect: a name and its ``n × levels`` design matrix."""

    name: str
    design: np.ndarray

    @property
    def levels(self) -> int:
        return self.design.shape[1]

    @cached_property
    def first_rows(self) -> np.ndarray:
        """Row index (0-based) at which each level is first observed.

        Levels that never appear get the row count ``n``.
        """
        used = self.design != 0
        first = np.argmax(used, axis=0)
        return np.where(used.any(axis=0), first, self.design.shape[0])


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """Fixed-effect design plus ``r`` random effects, the last being error."""

    X: np.ndarray
    effects: tuple[RandomEffect, ...]
    beta_names: tuple[str, ...] = ("mu",)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def r(self) -> int:
        return len(self.effects)

    @property
    def dim(self) -> int:
        return self.p + self.r

    @property
    def names(self) -> tuple[str, ...]:
        return (*self.beta_names, *(f"sigma_{eff.name}" for eff in self.effects))

    @property
    def sigma_indices(self) -> tuple[int, ...]:
        return tuple(range(self.p, self.p + self.r))

    def new_levels(self, effect: int, row: int) -> np.ndarray:
        """Levels of *effect* that first appear in (0-based) *row*."""
        return np.flatnonzero(self.effects[effect].first_rows == row)

    def seen_levels(self, effect: int, t: int) -> np.ndarray:
        """Levels of *effect* present in the first *t* observations."""
        return np.flatnonzero(self.effects[effect].first_rows < t)

    def take_rows(self, order: Sequence[int]) -> "ModelSpec":
        """The same model with its observations in *order*.

        Error levels are permuted along with the rows, so the error
        design stays the identity.
        """
        order = np.asarray(order, dtype=int)
        if sorted(order.tolist()) != list(range(self.n)):
            raise InvalidDesign(f"Row order must be a permutation of 0..{self.n - 1}.")
        *effects, error = self.effects
        return ModelSpec(
            X=self.X[order],
            effects=(
                *(RandomEffect(effect.name, effect.design[order]) for effect in effects),
                RandomEffect(error.name, error.design[np.ix_(order, order)]),
            ),
            beta_names=self.beta_names,
        )


@dataclass(frozen=True)
class IntervalObservation:
    a: float
    b: float
    row: int

    def __post_init__(self):
        if not (math.isfinite(self.a) and math.isfinite(self.b)):
            raise InvalidData(f"Observation {self.row} has non-finite bounds.")
        if not self.a < self.b:
            raise InvalidData(
                f"Observation {self.row} needs a < b, got ({self.a}, {self.b}]."
            )


@dataclass(frozen=True)
class IntervalDataset:
    observations: tuple[IntervalObservation, ...]

    def __post_init__(self):
        rows = [obs.row for obs in self.observations]
        if rows != list(range(1, len(rows) + 1)):
            raise InvalidData("Observation rows must be exactly 1..n in order.")

    @classmethod
    def from_bounds(
        cls, lower: Sequence[float], upper: Sequence[float]
    ) -> "IntervalDataset":
        if len(lower) != len(upper):
            raise InvalidData("Lower and upper bounds differ in length.")
        return cls(
            tuple(
                IntervalObservation(float(a), float(b), row)
                for row, (a, b) in enumerate(zip(lower, upper), start=1)
            )
        )

    @property
    def lower(self) -> np.ndarray:
        return np.array([obs.a for obs in self.observations])

    @property
    def upper(self) -> np.ndarray:
        return np.array([obs.b for obs in self.observations])

    def __len__(self) -> int:
        return len(self.observations)

    def __iter__(self) -> Iterator[IntervalObservation]:
        return iter(self.observations)

    def __getitem__(self, index: int) -> IntervalObservation:
        return self.observations[index]

    def take(self, order: Sequence[int]) -> "IntervalDataset":
        """The intervals in *order*, renumbered from 1."""
        order = np.asarray(order, dtype=int)
        return type(self).from_bounds(self.lower[order], self.upper[order])


@dataclass(frozen=True, eq=False)
class ParameterVector:
    """Fixed effects and random-effect standard deviations."""

    beta: np.ndarray
    sigma: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        object.__setattr__(self, "beta", np.atleast_1d(np.asarray(self.beta, float)))
        object.__setattr__(
            self, "sigma", np.atleast_1d(np.asarray(self.sigma, float))
        )
        if np.any(self.sigma < 0):
            raise InvalidDesign("Standard deviations must be non-negative.")

    @classmethod
    def from_variances(
        cls, beta: Sequence[float], variances: Sequence[float]
    ) -> "ParameterVector":
        return cls(np.asarray(beta, float), np.sqrt(np.asarray(variances, float)))

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.beta, self.sigma])


def _membership(assignments: Sequence[int], levels: int) -> np.ndarray:
    design = np.zeros((len(assignments), levels))
    design[np.arange(len(assignments)), assignments] = 1.0
    return design


def _error_effect(n: int) -> RandomEffect:
    return RandomEffect("error", np.eye(n))


def _check_counts(counts: Sequence[int], label: str):
    if len(counts) == 0 or any(int(count) < 1 for count in counts):
        raise InvalidDesign(f"All {label} must be at least 1, got {list(counts)}.")


def build_one_way(a: int, n_i: Sequence[int]) -> ModelSpec:
    """One-way random effects model ``y_ij = mu + alpha_i + e_ij``."""
    if a < 1 or len(n_i) != a:
        raise InvalidDesign(f"Expected {a} per-level counts, got {list(n_i)}.")
    _check_counts(n_i, "level counts")
    groups = np.repeat(np.arange(a), n_i)
    n = len(groups)
    return ModelSpec(
        X=np.ones((n, 1)),
        effects=(RandomEffect("alpha", _membership(groups, a)), _error_effect(n)),
    )


def build_two_fold_nested(
    I: int, J_i: Sequence[int], K_ij: Sequence[int]
) -> ModelSpec:
    """Two-fold nested model ``y_ijk = mu + alpha_i + beta_ij + e_ijk``.

    Parameters
    ==========
    I
      Number of levels of the outer effect.
    J_i
      Number of nested levels within each outer level (length *I*).
    K_ij
      Observation counts per nested level, flattened in outer-major
      order (length ``sum(J_i)``).

    """
    if len(J_i) != I:
        raise InvalidDesign(f"Expected {I} nested counts, got {len(J_i)}.")
    _check_counts(J_i, "nested level counts")
    if len(K_ij) != sum(J_i):
        raise InvalidDesign(
            f"Expected {sum(J_i)} cell counts, got {len(K_ij)}."
        )
    _check_counts(K_ij, "cell counts")
    outer = np.repeat(np.arange(I), J_i)
    nested = np.arange(sum(J_i))
    alpha = np.repeat(outer, K_ij)
    beta = np.repeat(nested, K_ij)
    n = len(alpha)
    return ModelSpec(
        X=np.ones((n, 1)),
        effects=(
            RandomEffect("alpha", _membership(alpha, I)),
            RandomEffect("beta", _membership(beta, len(nested))),
            _error_effect(n),
        ),
    )


def build_two_factor_crossed(
    I: int, J: int, K_ij: Sequence[Sequence[int]]
) -> ModelSpec:
    """Two-factor crossed model with interaction.

    Observations are ordered by cell in row-major ``(i, j)`` order.
    """
    counts = np.asarray(K_ij, dtype=int)
    if counts.shape != (I, J):
        raise InvalidDesign(f"Cell counts must have shape ({I}, {J}).")
    _check_counts(counts.ravel().tolist(), "cell counts")
    rows, cols = np.meshgrid(np.arange(I), np.arange(J), indexing="ij")
    alpha = np.repeat(rows.ravel(), counts.ravel())
    beta = np.repeat(cols.ravel(), counts.ravel())
    cell = np.repeat(np.arange(I * J), counts.ravel())
    n = len(alpha)
    return ModelSpec(
        X=np.ones((n, 1)),
        effects=(
            RandomEffect("alpha", _membership(alpha, I)),
            RandomEffect("beta", _membership(beta, J)),
            RandomEffect("alphabeta", _membership(cell, I * J)),
            _error_effect(n),
        ),
    )


def discretize(values: Sequence[float], grid_width: float) -> IntervalDataset:
    """Map exact values onto half-open grid cells ``(k·h, (k+1)·h]``.

    A value lying exactly on a grid point belongs to the cell whose
    upper endpoint it equals.
    """
    y = np.atleast_1d(np.asarray(values, dtype=float))
    if not grid_width > 0:
        raise InvalidData(f"Grid width must be positive, got {grid_width}.")
    if not np.all(np.isfinite(y)):
        raise InvalidData("Cannot discretize non-finite values.")
    k = np.ceil(y / grid_width) - 1
    # Floating point division can land one cell off
    k = np.where(y <= k * grid_width, k - 1, k)
    k = np.where(y > (k + 1) * grid_width, k + 1, k)
    return IntervalDataset.from_bounds(k * grid_width, (k + 1) * grid_width)


def validate(spec: ModelSpec) -> list[str]:
    """List every broken model invariant; empty when the model is sound."""
    violations = []
    n, p = spec.X.shape
    if not np.all(np.isfinite(spec.X)):
        violations.append("X has non-finite entries")
    elif np.linalg.matrix_rank(spec.X) < p:
        violations.append("X rank-deficient")
    if len(spec.beta_names) != p:
        violations.append("beta names do not match X columns")
    if spec.r < 1:
        violations.append("no error effect")
        return violations
    for idx, effect in enumerate(spec.effects, start=1):
        if effect.design.shape[0] != n:
            violations.append(f"effect {idx} design has wrong row count")
            continue
        if not np.all(np.isfinite(effect.design)):
            violations.append(f"effect {idx} design has non-finite entries")
        for level in np.flatnonzero(effect.first_rows >= n):
            violations.append(f"effect {idx} level {level + 1} unused")
    error = spec.effects[-1].design
    if error.shape != (n, n) or not np.array_equal(error, np.eye(n)):
        violations.append(f"effect {spec.r} (error) is not the identity design")
    return violations


def require_valid(spec: ModelSpec) -> ModelSpec:
    violations = validate(spec)
    if violations:
        raise InvalidDesign("Invalid model: " + "; ".join(violations))
    return spec
