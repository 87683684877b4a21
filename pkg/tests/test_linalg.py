import itertools

import numpy as np
import pytest

from fidmix.linalg import (
    ConstraintSet,
    DegenerateDenominator,
    InfeasibleConstraints,
    LPStatus,
    feasible,
    linear_fractional_extremes,
    lp_solve,
    null_space_basis,
    projection_interval,
)


def box(lower, upper, nonneg=()):
    dim = len(lower)
    return ConstraintSet(dim, np.eye(dim), lower, upper, tuple(nonneg))


def test_lp_box():
    result = lp_solve([1.0], box([0.0], [1.0]))
    assert result.optimal
    assert result.value == pytest.approx(0.0)


def test_lp_infeasible():
    cs = ConstraintSet(1, [[1.0]], [-np.inf], [-1.0], nonneg=(0,))
    assert lp_solve([1.0], cs).status is LPStatus.INFEASIBLE


def test_lp_max_vertex():
    cs = ConstraintSet(2, np.eye(2), [-np.inf, -np.inf], [2.0, 3.0], nonneg=(0, 1))
    result = lp_solve([1.0, 1.0], cs, sense="max")
    assert result.value == pytest.approx(5.0)
    np.testing.assert_allclose(result.point, [2.0, 3.0], atol=1e-9)


def test_lp_unbounded():
    cs = ConstraintSet.empty(1)
    assert lp_solve([1.0], cs).status is LPStatus.UNBOUNDED


def test_feasible():
    assert feasible(ConstraintSet.empty(2))
    cs = ConstraintSet(1, [[1.0], [1.0]], [-np.inf, 1.0], [0.0, np.inf])
    assert not feasible(cs)
    # mu + 0.5 sigma in (0, 1] with sigma >= 0
    one_obs = ConstraintSet(2, [[1.0, 0.5]], [0.0], [1.0], nonneg=(1,))
    assert feasible(one_obs)
    assert one_obs.contains([0.5, 1.0])


def test_constraint_set_rejects_empty_row():
    with pytest.raises(ValueError):
        ConstraintSet(1, [[1.0]], [1.0], [1.0])


def test_ratio_extremes_box():
    cs = box([1.0, 1.0], [2.0, 2.0], nonneg=(1,))
    lo, hi = linear_fractional_extremes(cs, ([1.0, 0.0], 0.0), den_index=1)
    assert lo == pytest.approx(0.5)
    assert hi == pytest.approx(2.0)


def test_ratio_extremes_unbounded():
    cs = ConstraintSet(2, [[0.0, 1.0]], [1.0], [np.inf], nonneg=(1,))
    assert linear_fractional_extremes(cs, ([1.0, 0.0], 0.0), 1) == (-np.inf, np.inf)


def test_ratio_extremes_singleton():
    cs = box([3.0 - 1e-12, 2.0 - 1e-12], [3.0, 2.0], nonneg=(1,))
    lo, hi = linear_fractional_extremes(cs, ([1.0, 0.0], 0.0), 1)
    assert lo == pytest.approx(1.5)
    assert hi == pytest.approx(1.5)


def test_ratio_extremes_errors():
    empty = ConstraintSet(2, [[1.0, 0.0], [1.0, 0.0]], [1.0, -np.inf], [np.inf, 0.0], (1,))
    with pytest.raises(InfeasibleConstraints):
        linear_fractional_extremes(empty, ([1.0, 0.0], 0.0), 1)
    zero_den = ConstraintSet(2, [[0.0, 1.0]], [-np.inf], [0.0], nonneg=(1,))
    with pytest.raises(DegenerateDenominator):
        linear_fractional_extremes(zero_den, ([1.0, 0.0], 1.0), 1)
    with pytest.raises(ValueError):
        linear_fractional_extremes(box([1.0, 1.0], [2.0, 2.0]), ([1.0, 0.0], 0.0), 1)


@pytest.mark.parametrize("seed", range(10))
def test_ratio_extremes_random_polygon(seed):
    """Ratio extremes match the polygon's vertices and bracket a grid search."""
    rng = np.random.default_rng(seed)
    lo1 = rng.uniform(-2.0, 1.0)
    hi1 = lo1 + rng.uniform(0.5, 2.0)
    center = np.array([(lo1 + hi1) / 2, 1.75])
    slabs = rng.normal(size=(2, 2))
    slabs /= np.linalg.norm(slabs, axis=1, keepdims=True)
    coeffs = np.vstack([np.eye(2), slabs])
    lower = np.concatenate([[lo1, 0.5], slabs @ center - rng.uniform(0.3, 1.0, 2)])
    upper = np.concatenate([[hi1, 3.0], slabs @ center + rng.uniform(0.3, 1.0, 2)])
    cs = ConstraintSet(2, coeffs, lower, upper, nonneg=(1,))
    num = rng.normal(size=2)
    const = rng.normal()
    lo, hi = linear_fractional_extremes(cs, (num, const), den_index=1)

    lines = [(row, bound) for row, a, b in zip(coeffs, lower, upper) for bound in (a, b)]
    vertices = []
    for (row_a, a), (row_b, b) in itertools.combinations(lines, 2):
        A = np.array([row_a, row_b])
        if abs(np.linalg.det(A)) < 1e-10:
            continue
        x = np.linalg.solve(A, [a, b])
        if cs.contains(x, tol=1e-9):
            vertices.append(x)
    vertices = np.array(vertices)
    at_vertices = (vertices @ num + const) / vertices[:, 1]
    assert lo == pytest.approx(at_vertices.min(), abs=1e-7)
    assert hi == pytest.approx(at_vertices.max(), abs=1e-7)

    x1, x2 = np.meshgrid(np.linspace(lo1, hi1, 100), np.linspace(0.5, 3.0, 100))
    points = np.column_stack([x1.ravel(), x2.ravel()])
    values = points @ coeffs.T
    inside = np.all((values >= lower) & (values <= upper), axis=1)
    ratios = (points[inside] @ num + const) / points[inside, 1]
    assert np.all(ratios >= lo - 1e-9)
    assert np.all(ratios <= hi + 1e-9)


def test_projection_box():
    cs = box([0.0, 0.0], [1.0, 2.0])
    assert projection_interval(cs, 1) == pytest.approx((0.0, 2.0))


def test_projection_simplex():
    cs = ConstraintSet(2, [[1.0, 1.0]], [-np.inf], [1.0], nonneg=(0, 1))
    assert projection_interval(cs, 0) == pytest.approx((0.0, 1.0))


def test_projection_empty():
    cs = ConstraintSet(1, [[1.0], [1.0]], [-np.inf, 1.0], [0.0, np.inf])
    with pytest.raises(InfeasibleConstraints):
        projection_interval(cs, 0)


def test_projection_random_polytope():
    """Projection extremes match brute-force vertex enumeration."""
    rng = np.random.default_rng(11)
    coeffs = rng.normal(size=(6, 3))
    # Every row bounds a slab around the origin, so the set is a bounded polytope
    coeffs = np.vstack([coeffs, np.eye(3)])
    lower = -rng.uniform(0.5, 2.0, size=len(coeffs))
    upper = rng.uniform(0.5, 2.0, size=len(coeffs))
    cs = ConstraintSet(3, coeffs, lower, upper)
    planes = [(row, lo) for row, lo in zip(coeffs, lower)]
    planes += [(row, hi) for row, hi in zip(coeffs, upper)]
    vertices = []
    for trio in itertools.combinations(planes, 3):
        A = np.array([row for row, _ in trio])
        b = np.array([value for _, value in trio])
        if abs(np.linalg.det(A)) < 1e-10:
            continue
        x = np.linalg.solve(A, b)
        if cs.contains(x, tol=1e-9):
            vertices.append(x)
    vertices = np.array(vertices)
    for k in range(3):
        lo, hi = projection_interval(cs, k)
        assert lo == pytest.approx(vertices[:, k].min(), abs=1e-8)
        assert hi == pytest.approx(vertices[:, k].max(), abs=1e-8)


def test_null_basis_scalar():
    basis = null_space_basis(np.array([[1.0]]), np.array([[1.0]]))
    assert basis.d == 1
    np.testing.assert_allclose(np.abs(basis.eta2), [[1.0]])
    np.testing.assert_allclose(basis.eta1, basis.eta2)


def test_null_basis_two_rows():
    basis = null_space_basis(np.ones((2, 1)), np.eye(2))
    assert basis.d == 1
    np.testing.assert_allclose(np.abs(basis.eta2[:, 0]), [2**-0.5, 2**-0.5])
    np.testing.assert_allclose(basis.eta1, basis.eta2[:1])


@pytest.mark.parametrize("seed", range(40))
def test_null_basis_properties(seed):
    rng = np.random.default_rng(seed)
    t = int(rng.integers(2, 9))
    Xp = rng.normal(size=(t, int(rng.integers(1, 4))))
    V = (rng.uniform(size=(t, int(rng.integers(1, t + 3)))) > 0.4).astype(float)
    basis = null_space_basis(Xp, V)
    A = np.hstack([-Xp, V])
    np.testing.assert_allclose(A @ basis.eta, 0.0, atol=1e-10)
    np.testing.assert_allclose(basis.eta2.T @ basis.eta2, np.eye(basis.d), atol=1e-10)
    if basis.d == 0:
        return
    assert np.linalg.matrix_rank(basis.eta) == basis.d
    assert np.linalg.matrix_rank(basis.eta2) == basis.d


def test_null_basis_zero_column():
    V = np.array([[1.0, 0.0], [1.0, 0.0]])
    basis = null_space_basis(np.ones((2, 1)), V)
    assert basis.d == 2
    # The unused level is free: e_2 lies in span(eta2) with no eta1 part
    coords = basis.eta2.T @ np.array([0.0, 1.0])
    np.testing.assert_allclose(basis.eta2 @ coords, [0.0, 1.0], atol=1e-12)
    np.testing.assert_allclose(basis.eta1 @ coords, [0.0], atol=1e-12)


def test_null_basis_trivial():
    basis = null_space_basis(np.array([[1.0], [0.0]]), np.array([[0.0], [1.0]]))
    assert basis.d == 0
