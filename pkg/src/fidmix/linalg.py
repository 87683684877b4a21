"""Dense linear programming kernel for particle polyhedra.

Every polyhedron here is a set of two-sided linear inequalities

    lower < coeffs · x <= upper

over ``x = (beta, sigma)``, with the sigma coordinates constrained to be
non-negative. Strict lower bounds are treated as non-strict by the LP
solver; the difference has probability zero under the sampler.

"""

__all__ = [
    "EPS_FEAS",
    "ConstraintSet",
    "LPResult",
    "NullBasis",
    "lp_solve",
    "feasible",
    "fractional_extreme",
    "linear_fractional_extremes",
    "projection_interval",
    "null_space_basis",
]

import logging
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from enum import Enum

import numpy as np
import scipy.linalg
from scipy.optimize import linprog

log = logging.getLogger(__name__)

EPS_FEAS = 1e-9


class SolverFailure(RuntimeError):
    pass


class InfeasibleConstraints(ValueError):
    pass


class DegenerateDenominator(ArithmeticError):
    pass


@dataclass(frozen=True, eq=False)
class ConstraintSet:
    """An immutable polyhedron ``{x: lower < coeffs·x <= upper, x[nonneg] >= 0}``."""

    dim: int
    coeffs: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    nonneg: tuple[int, ...] = ()

    def __post_init__(self):
        coeffs = np.asarray(self.coeffs, dtype=float).reshape(-1, self.dim)
        lower = np.asarray(self.lower, dtype=float).reshape(-1)
        upper = np.asarray(self.upper, dtype=float).reshape(-1)
        if not len(coeffs) == len(lower) == len(upper):
            raise ValueError("Constraint rows and bounds differ in length.")
        if not np.all(np.isfinite(coeffs)):
            raise ValueError("Constraint coefficients must be finite.")
        if np.any(lower >= upper):
            raise ValueError("Every constraint row needs lower < upper.")
        object.__setattr__(self, "coeffs", coeffs)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "nonneg", tuple(int(idx) for idx in self.nonneg))

    @classmethod
    def empty(cls, dim: int, nonneg: Iterable[int] = ()) -> "ConstraintSet":
        return cls(dim, np.zeros((0, dim)), np.zeros(0), np.zeros(0), tuple(nonneg))

    @classmethod
    def from_rows(
        cls,
        dim: int,
        rows: Iterable[tuple[Sequence[float], float, float]],
        nonneg: Iterable[int] = (),
    ) -> "ConstraintSet":
        rows = list(rows)
        if len(rows) == 0:
            return cls.empty(dim, nonneg)
        coeffs, lower, upper = zip(*rows)
        return cls(dim, np.array(coeffs, dtype=float), lower, upper, tuple(nonneg))

    def append(self, coeffs: Sequence[float], lower: float, upper: float):
        """A new set with one more row."""
        return type(self)(
            self.dim,
            np.vstack([self.coeffs, np.asarray(coeffs, dtype=float)]),
            np.append(self.lower, lower),
            np.append(self.upper, upper),
            self.nonneg,
        )

    def __len__(self) -> int:
        return len(self.lower)

    def residual(self, x: Sequence[float]) -> float:
        """Largest constraint violation at *x* (0 when *x* is inside)."""
        x = np.asarray(x, dtype=float)
        values = self.coeffs @ x
        violations = [
            np.max(self.lower - values, initial=0.0),
            np.max(values - self.upper, initial=0.0),
            np.max(-x[list(self.nonneg)], initial=0.0),
        ]
        return float(max(violations))

    def contains(self, x: Sequence[float], tol: float = EPS_FEAS) -> bool:
        return self.residual(x) <= tol

    def inequalities(self) -> tuple[np.ndarray, np.ndarray]:
        """The rows as ``A_ub @ x <= b_ub``, dropping infinite sides."""
        up = np.isfinite(self.upper)
        lo = np.isfinite(self.lower)
        A_ub = np.vstack([self.coeffs[up], -self.coeffs[lo]])
        b_ub = np.concatenate([self.upper[up], -self.lower[lo]])
        return A_ub, b_ub

    def variable_bounds(self) -> list[tuple[float | None, float | None]]:
        nonneg = set(self.nonneg)
        return [(0.0, None) if idx in nonneg else (None, None) for idx in range(self.dim)]


class LPStatus(str, Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


@dataclass(frozen=True, eq=False)
class LPResult:
    status: LPStatus
    value: float = float("nan")
    point: np.ndarray | None = None

    @property
    def optimal(self) -> bool:
        return self.status is LPStatus.OPTIMAL


_linprog_statuses = {
    0: LPStatus.OPTIMAL,
    2: LPStatus.INFEASIBLE,
    3: LPStatus.UNBOUNDED,
}


def _solve(c, A_ub, b_ub, bounds, A_eq=None, b_eq=None) -> LPResult:
    """Minimize ``c·x`` with the HiGHS dual simplex."""
    rows = len(b_ub) + (0 if b_eq is None else len(b_eq))
    options = {
        "maxiter": 50 * (rows + len(c)),
        "primal_feasibility_tolerance": EPS_FEAS,
    }
    kwargs = dict(
        A_ub=A_ub if len(b_ub) else None,
        b_ub=b_ub if len(b_ub) else None,
        A_eq=A_eq,
        b_eq=b_eq,
        bounds=bounds,
        method="highs-ds",
    )
    res = linprog(c, options=options, **kwargs)
    if res.status not in _linprog_statuses:
        # Presolve can stop at "infeasible or unbounded"; the plain simplex decides
        log.debug("Retrying LP without presolve: %s", res.message)
        res = linprog(c, options={**options, "presolve": False}, **kwargs)
    if res.status not in _linprog_statuses:
        raise SolverFailure(
            f"LP solver failed with status {res.status} ({rows} rows, "
            f"{len(c)} columns): {res.message}"
        )
    status = _linprog_statuses[res.status]
    if status is LPStatus.OPTIMAL:
        return LPResult(status, float(res.fun), np.asarray(res.x))
    return LPResult(status)


def lp_solve(c: Sequence[float], cs: ConstraintSet, sense: str = "min") -> LPResult:
    """Optimize ``c·x`` over the polyhedron *cs*.

    Parameters
    ==========
    c
      Objective coefficients, one per variable of *cs*.
    cs
      The feasible set.
    sense
      Either ``"min"`` or ``"max"``.

    Returns
    =======
    result
      Optimal value and point, or an infeasible/unbounded status.

    """
    c = np.asarray(c, dtype=float)
    if c.shape != (cs.dim,):
        raise ValueError(f"Objective has shape {c.shape}, expected ({cs.dim},).")
    if sense not in ("min", "max"):
        raise ValueError(f"Unknown sense {sense!r}.")
    sign = 1.0 if sense == "min" else -1.0
    A_ub, b_ub = cs.inequalities()
    result = _solve(sign * c, A_ub, b_ub, cs.variable_bounds())
    if result.optimal:
        return LPResult(result.status, sign * result.value, result.point)
    return result


def feasible(cs: ConstraintSet) -> bool:
    return lp_solve(np.zeros(cs.dim), cs).optimal


def fractional_extreme(
    cs: ConstraintSet,
    numerator: tuple[Sequence[float], float],
    den_index: int,
    sense: str,
) -> float:
    """One extreme of ``(g·x + g0) / x[den_index]`` by Charnes–Cooper.

    With ``u = 1/x[den_index]`` and ``y = u·x`` the ratio becomes the
    linear objective ``g·y + g0·u`` subject to ``y[den_index] = 1``.
    """
    if den_index not in cs.nonneg:
        raise ValueError(f"Denominator variable {den_index} is not non-negative.")
    g, g0 = numerator
    g = np.asarray(g, dtype=float)
    if g.shape != (cs.dim,):
        raise ValueError(f"Numerator has shape {g.shape}, expected ({cs.dim},).")
    up = np.isfinite(cs.upper)
    lo = np.isfinite(cs.lower)
    A_ub = np.vstack(
        [
            np.column_stack([cs.coeffs[up], -cs.upper[up]]),
            np.column_stack([-cs.coeffs[lo], cs.lower[lo]]),
        ]
    )
    b_ub = np.zeros(len(A_ub))
    A_eq = np.zeros((1, cs.dim + 1))
    A_eq[0, den_index] = 1.0
    bounds = [*cs.variable_bounds(), (0.0, None)]
    sign = 1.0 if sense == "min" else -1.0
    objective = sign * np.append(g, g0)
    result = _solve(objective, A_ub, b_ub, bounds, A_eq=A_eq, b_eq=np.ones(1))
    if result.optimal and result.point[-1] <= EPS_FEAS and not feasible(cs):
        # u = 0 solutions are recession directions, which an empty set also has
        raise InfeasibleConstraints("Ratio extremes need a nonempty polyhedron.")
    if result.optimal:
        return sign * result.value
    if result.status is LPStatus.UNBOUNDED:
        return -sign * np.inf
    if not feasible(cs):
        raise InfeasibleConstraints("Ratio extremes need a nonempty polyhedron.")
    raise DegenerateDenominator(
        f"Variable {den_index} is zero on the whole feasible set."
    )


def linear_fractional_extremes(
    cs: ConstraintSet,
    numerator: tuple[Sequence[float], float],
    den_index: int,
) -> tuple[float, float]:
    """Minimum and maximum of ``(g·x + g0) / x[den_index]`` over *cs*.

    Unbounded directions give ``-inf``/``inf``.
    """
    return (
        fractional_extreme(cs, numerator, den_index, "min"),
        fractional_extreme(cs, numerator, den_index, "max"),
    )


def projection_interval(cs: ConstraintSet, k: int) -> tuple[float, float]:
    """Range of coordinate *k* over *cs*."""
    c = np.zeros(cs.dim)
    c[k] = 1.0
    extremes = []
    for sense, unbounded in (("min", -np.inf), ("max", np.inf)):
        result = lp_solve(c, cs, sense=sense)
        if result.status is LPStatus.INFEASIBLE:
            raise InfeasibleConstraints("Cannot project an empty polyhedron.")
        extremes.append(result.value if result.optimal else unbounded)
    return extremes[0], extremes[1]


@dataclass(frozen=True, eq=False)
class NullBasis:
    """Null space of ``[-X', V]`` split into its ``X'`` and ``V`` blocks.

    The ``eta2`` block has orthonormal columns and every column of the
    stacked basis has a nonzero ``eta2`` part.
    """

    eta1: np.ndarray
    eta2: np.ndarray

    @property
    def d(self) -> int:
        return self.eta2.shape[1]

    @property
    def eta(self) -> np.ndarray:
        return np.vstack([self.eta1, self.eta2])


def null_space_basis(Xp: np.ndarray, V: np.ndarray) -> NullBasis:
    """Basis of ``null([-Xp, V])`` with orthonormal ``V`` block.

    Directions whose ``V`` block vanishes (null directions of ``Xp``
    alone) are dropped. An empty basis (``d == 0``) means there is no
    direction in which to move.
    """
    Xp = np.atleast_2d(np.asarray(Xp, dtype=float))
    V = np.atleast_2d(np.asarray(V, dtype=float))
    t, q = Xp.shape
    l = V.shape[1]  # noqa: E741
    if V.shape[0] != t:
        raise ValueError(f"X' has {t} rows but V has {V.shape[0]}.")
    A = np.hstack([-Xp, V])
    rcond = max(t, q + l) * np.finfo(float).eps
    N = scipy.linalg.null_space(A, rcond=rcond)
    empty = NullBasis(np.zeros((q, 0)), np.zeros((l, 0)))
    if N.shape[1] == 0:
        return empty
    tol = rcond * max(np.linalg.norm(A, 2), 1.0)
    Q, R, perm = scipy.linalg.qr(N[q:], mode="economic", pivoting=True)
    keep = int(np.sum(np.abs(np.diag(R)) > tol))
    if keep == 0:
        return empty
    R_inv = scipy.linalg.solve_triangular(R[:keep, :keep], np.eye(keep))
    eta1 = N[:q, perm[:keep]] @ R_inv
    return NullBasis(eta1=eta1, eta2=Q[:, :keep])
