import math

import numpy as np
import pytest

from fidmix.inference import (
    ConfidenceInterval,
    IntervalKind,
    confidence_interval,
    interval_table,
    make_sample,
    parameter_boxes,
    point_estimate,
    variance_interval,
    weighted_quantile,
)
from fidmix.linalg import ConstraintSet
from fidmix.model import build_one_way
from fidmix.smc import ConfigurationError, init_particles

names = ["mu", "sigma_alpha", "sigma_error"]


def uniform_sample(lower, upper, names=names):
    lower = np.asarray(lower, dtype=float)
    weights = np.full(len(lower), 1 / len(lower))
    return make_sample(names, weights, lower, upper)


def planted_system(boxes):
    """A particle system whose particles have the given box polyhedra."""
    model = build_one_way(2, [2, 2])
    system = init_particles(model, len(boxes), seed=0)
    for particle, (lower, upper) in zip(system.particles, boxes):
        particle.constraints = ConstraintSet(
            model.dim, np.eye(model.dim), lower, upper, model.sigma_indices
        )
    return system


def test_weighted_quantile():
    assert weighted_quantile([1, 2, 3], [0.2, 0.3, 0.5], 0.5) == 2


@pytest.mark.parametrize("q", [0.0, 0.3, 0.975, 1.0])
def test_weighted_quantile_point_mass(q):
    assert weighted_quantile([5.0, 1.0, 7.0], [0.0, 1.0, 0.0], q) == 1.0


def test_weighted_quantile_order_statistic():
    values = np.arange(1000, 0, -1)
    weights = np.full(1000, 1 / 1000)
    assert weighted_quantile(values, weights, 0.975) == 975


def test_weighted_quantile_rejects_bad_weights():
    with pytest.raises(ValueError):
        weighted_quantile([1, 2], [0.5, 0.6], 0.5)
    with pytest.raises(ValueError):
        weighted_quantile([], [], 0.5)


def test_weighted_quantile_slack_scales_with_size():
    n = 100_000
    weights = np.full(n, 1 / n)
    weights[0] += 1e-11
    assert weighted_quantile(np.arange(n), weights, 0.5) == n // 2 - 1
    small = np.full(3, 1 / 3)
    small[0] += 1e-13
    with pytest.raises(ValueError):
        weighted_quantile([1.0, 2.0, 3.0], small, 0.5)


def test_parameter_boxes_unit_box():
    system = planted_system([([0.0] * 3, [1.0] * 3)] * 3)
    fs = parameter_boxes(system)
    np.testing.assert_allclose(fs["lower"].values, 0.0, atol=1e-9)
    np.testing.assert_allclose(fs["upper"].values, 1.0, atol=1e-9)
    np.testing.assert_allclose(fs["weight"].values, 1 / 3)
    assert fs["param"].values.tolist() == names
    assert fs["param_kind"].values.tolist() == ["fixed", "sigma", "sigma"]


def test_parameter_boxes_singleton():
    point = np.array([1.0, 0.5, 2.0])
    system = planted_system([(point - 1e-12, point)] * 2)
    fs = parameter_boxes(system, threads=2)
    np.testing.assert_allclose(fs["lower"].values, fs["upper"].values, atol=1e-9)
    assert np.all(fs["lower"].values <= fs["upper"].values)


def test_parameter_boxes_skip_dead():
    system = planted_system([([0.0] * 3, [1.0] * 3)] * 3)
    system.particles[1].kill()
    fs = parameter_boxes(system)
    assert fs["particle"].values.tolist() == [0, 2]
    np.testing.assert_allclose(fs["weight"].values, [0.5, 0.5])


def test_unbounded_boxes():
    model = build_one_way(2, [2, 2])
    system = init_particles(model, 2)
    fs = parameter_boxes(system)
    assert np.all(fs["lower"].sel(param="mu").values == -np.inf)
    assert np.all(fs["upper"].values == np.inf)
    np.testing.assert_array_equal(fs["lower"].sel(param="sigma_alpha").values, 0.0)


@pytest.mark.parametrize("alpha", [0.01, 0.05, 0.5])
def test_shared_box_interval(alpha):
    fs = uniform_sample(np.full((4, 3), 2.0), np.full((4, 3), 3.0))
    ci = confidence_interval(fs, "mu", alpha=alpha)
    assert (ci.lo, ci.hi) == (2.0, 3.0)
    assert ci.level == pytest.approx(1 - alpha)


def test_point_boxes_give_classical_quantiles():
    values = np.random.default_rng(2).normal(size=(200, 3))
    fs = uniform_sample(values, values)
    weights = np.full(200, 1 / 200)
    ci = confidence_interval(fs, "mu", alpha=0.1)
    assert ci.lo == weighted_quantile(values[:, 0], weights, 0.05)
    assert ci.hi == weighted_quantile(values[:, 0], weights, 0.95)
    mid = confidence_interval(fs, "mu", alpha=0.1, selection="midpoint")
    assert (mid.lo, mid.hi) == (ci.lo, ci.hi)


@pytest.mark.parametrize("kind", ["two-sided", "lower", "upper"])
def test_intervals_nest_with_level(kind):
    rng = np.random.default_rng(4)
    lower = rng.normal(size=(300, 3))
    upper = lower + rng.uniform(0, 0.5, size=(300, 3))
    weights = rng.uniform(size=300)
    fs = make_sample(names, weights / weights.sum(), lower, upper)
    for param in names:
        cis = [
            confidence_interval(fs, param, alpha=alpha, kind=kind)
            for alpha in (0.10, 0.05, 0.01)
        ]
        for narrow, wide in zip(cis, cis[1:]):
            assert wide.lo <= narrow.lo
            assert narrow.hi <= wide.hi


def test_interval_settings_rejected():
    fs = uniform_sample(np.full((2, 3), 1.0), np.full((2, 3), 2.0))
    for alpha in (0.0, 1.0, 1.5):
        with pytest.raises(ConfigurationError):
            confidence_interval(fs, "mu", alpha=alpha)
    with pytest.raises(ConfigurationError):
        confidence_interval(fs, "mu", selection="median")
    unbounded = uniform_sample([[-np.inf, 0, 0]], [[1.0, np.inf, 1]])
    for param in ("mu", "sigma_alpha"):
        with pytest.raises(ConfigurationError):
            confidence_interval(unbounded, param, selection="midpoint")


def test_one_sided_intervals():
    values = np.random.default_rng(3).uniform(1, 2, size=(100, 3))
    fs = uniform_sample(values - 0.5, values)
    two = confidence_interval(fs, "mu", alpha=0.05)
    lower_tail = confidence_interval(fs, "mu", alpha=0.05, kind="lower")
    upper_tail = confidence_interval(fs, "mu", alpha=0.05, kind="upper")
    assert lower_tail.lo == -math.inf
    assert lower_tail.hi <= two.hi
    assert upper_tail.hi == math.inf
    assert upper_tail.lo >= two.lo
    sigma = confidence_interval(fs, "sigma_alpha", alpha=0.05, kind="lower")
    assert sigma.lo == 0.0


def test_sigma_floor():
    lower = np.full((3, 3), -1.0)
    fs = uniform_sample(lower, np.full((3, 3), 1.0))
    assert confidence_interval(fs, "sigma_error").lo == 0.0
    assert confidence_interval(fs, "mu").lo == -1.0


def test_variance_interval():
    ci = ConfidenceInterval("sigma_alpha", 0.95, IntervalKind.TWO_SIDED, 0.5, 2.0)
    squared = variance_interval(ci)
    assert squared.param == "sigma_alpha^2"
    assert (squared.lo, squared.hi) == (0.25, 4.0)


def test_point_estimate():
    fs = uniform_sample([[1.0, 0, 0]], [[3.0, 0, 0]])
    assert point_estimate(fs, "mu") == 2.0
    fs = uniform_sample([[0.0, 0, 0], [2.0, 0, 0]], [[0.0, 0, 0], [2.0, 0, 0]])
    assert point_estimate(fs, "mu") == pytest.approx(1.0)


def test_point_estimate_weighted():
    values = np.array([[1.0] * 3, [4.0] * 3])
    fs = make_sample(names, [0.25, 0.75], values, values)
    assert point_estimate(fs, "sigma_alpha") == pytest.approx(3.25)


def test_point_estimate_unbounded():
    fs = uniform_sample([[-np.inf, 0, 0]], [[1.0, 1, 1]])
    with pytest.raises(ValueError):
        point_estimate(fs, "mu")


def test_interval_table():
    fs = uniform_sample(np.full((2, 3), 1.0), np.full((2, 3), 2.0))
    rows = interval_table(fs, alpha=0.05, kinds=["two-sided", "upper"])
    params = [(ci.param, ci.kind.value) for ci in rows]
    assert ("mu", "two-sided") in params
    assert ("sigma_alpha^2", "upper") in params
    assert ("sigma_error^2", "two-sided") in params
    assert ("mu^2", "two-sided") not in params
    estimates = [ci for ci in rows if ci.kind is IntervalKind.ESTIMATE]
    assert [ci.param for ci in estimates] == names
    assert all(math.isnan(ci.level) for ci in estimates)
    assert all(ci.lo == 1.5 for ci in estimates)


def test_interval_table_warns_on_unbounded():
    fs = uniform_sample([[-np.inf, 0, 0]], [[1.0, 1, 1]])
    with pytest.warns(UserWarning):
        rows = interval_table(fs)
    assert "mu" not in [ci.param for ci in rows if ci.kind is IntervalKind.ESTIMATE]


def test_make_sample_rejects_inverted_boxes():
    with pytest.raises(ValueError):
        uniform_sample([[1.0, 0, 0]], [[0.0, 1, 1]])


def test_particle_boxes_match_grid_search():
    """The sigma_error box of a tiny one-way instance matches a grid search."""
    model = build_one_way(1, [3])
    system = init_particles(model, 2)
    # mu + 0.5 sigma_alpha + sigma_error z_t in the data cells
    z = [np.array([0.5]), np.array([-1.0, 0.2, 1.3])]
    bounds = [(-1.0, -0.5), (0.0, 0.5), (1.0, 1.5)]
    for particle in system.particles:
        particle.z = [z_i.copy() for z_i in z]
        particle.constraints = ConstraintSet.from_rows(
            3,
            [
                ([1.0, 0.5, z[1][row]], lo, hi)
                for row, (lo, hi) in enumerate(bounds)
            ],
            nonneg=(1, 2),
        )
    fs = parameter_boxes(system)
    lo = fs["lower"].sel(param="sigma_error").values[0]
    hi = fs["upper"].sel(param="sigma_error").values[0]
    # Rows 1 and 3 pin sigma_error·2.3 inside (1.5, 2.5)
    grid = np.linspace(0, 3, 30001)
    feasible = []
    for s in grid:
        # mu' = mu + 0.5 sigma_alpha ranges freely over the reals
        lo_mu = max(a - s * zt for zt, (a, _) in zip(z[1], bounds))
        hi_mu = min(b - s * zt for zt, (_, b) in zip(z[1], bounds))
        if lo_mu < hi_mu:
            feasible.append(s)
    assert lo == pytest.approx(min(feasible), abs=2e-4)
    assert hi == pytest.approx(max(feasible), abs=2e-4)
