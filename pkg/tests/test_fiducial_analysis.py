import numpy as np
import pytest

from fidmix import FiducialAnalysis, Group
from fidmix.inference import IntervalKind
from fidmix.model import ParameterVector, build_one_way, discretize
from fidmix.readers import write_intervals, write_model
from fidmix.simulation import generate_data
from fidmix.smc import InferenceFailure
from fidmix.streams import RngStream


@pytest.fixture()
def model():
    return build_one_way(2, [4, 4])


@pytest.fixture()
def values(model):
    truth = ParameterVector.from_variances([1.0], [1.0, 1.0])
    return [generate_data(model, truth, RngStream(seed)) for seed in range(2)]


def test_from_files(tmp_path, model, values):
    write_model(model, tmp_path / "model.json")
    data_dir = tmp_path / "data"
    data_dir.mkdir()
    for idx, vals in enumerate(values):
        write_intervals(discretize(vals, 0.25), data_dir / f"rep{idx}.csv")
    anl = FiducialAnalysis.from_files(tmp_path / "model.json", data_dir)
    assert len(anl.groups) == 2
    assert [group.source.name for group in anl.groups] == ["rep0.csv", "rep1.csv"]
    assert all(len(group.data) == 8 for group in anl.groups)


def test_full_pipeline(model, values):
    anl = (
        FiducialAnalysis.from_values(model, values)
        .discretize(0.25)
        .run_smc(particles=40, seed=3)
        .fiducial_sample()
        .confidence_intervals(alpha=0.1, kinds=["two-sided", "lower"])
        .calculate()
    )
    assert anl.failures == []
    for group in anl.groups:
        assert group.width == 0.25
        assert group.alpha == 0.1
        assert float(group.sample["weight"].sum()) == pytest.approx(1.0)
        assert len(group.past_operations) == 4
        kinds = {ci.kind for ci in group.intervals}
        assert kinds == {IntervalKind.TWO_SIDED, IntervalKind.LOWER, IntervalKind.ESTIMATE}
        for ci in group.intervals:
            assert ci.lo <= ci.hi
        sigma = [ci for ci in group.intervals if ci.param == "sigma_error"]
        assert all(ci.lo >= 0 for ci in sigma)


def test_pipeline_is_deterministic(model, values):
    def intervals(threads):
        anl = (
            FiducialAnalysis.from_values(model, values[:1])
            .discretize(0.25)
            .run_smc(particles=30, seed=8, threads=threads)
            .fiducial_sample(threads=threads)
            .confidence_intervals()
            .calculate()
        )
        return [(ci.param, ci.kind, ci.lo, ci.hi) for ci in anl.groups[0].intervals]

    assert intervals(1) == intervals(4)


def test_failed_group_is_passed_through(model, values):
    anl = FiducialAnalysis.from_values(model, values).discretize(0.25).calculate()
    failed = anl.groups[0]
    failed.failure = InferenceFailure("all dead", step=5)
    anl = FiducialAnalysis(anl.groups).run_smc(particles=20).fiducial_sample().calculate()
    assert anl.failures == [failed]
    assert not hasattr(failed, "system")
    (ok,) = [group for group in anl.groups if group is not failed]
    assert "sample" in ok


def test_groups_are_copied(model, values):
    original = Group(model=model, values=np.asarray(values[0]))
    anl = FiducialAnalysis([original]).discretize(0.5).calculate()
    assert "data" not in original
    assert anl.groups[0] is not original
