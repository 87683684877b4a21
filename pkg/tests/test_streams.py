import numpy as np
import pytest

from fidmix.streams import Purpose, RngStream, as_stream


def test_same_key_same_draws():
    a = RngStream(7, (Purpose.PROPAGATE, 3, 4)).generator().normal(size=5)
    b = RngStream(7).child(Purpose.PROPAGATE, 3).child(4).generator().normal(size=5)
    np.testing.assert_array_equal(a, b)


def test_keys_are_independent():
    base = RngStream(7)
    a = base.child(Purpose.PROPAGATE, 0).generator().normal(size=5)
    b = base.child(Purpose.PROPAGATE, 1).generator().normal(size=5)
    c = base.child(Purpose.RESAMPLE, 0).generator().normal(size=5)
    assert not np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_negative_seed():
    with pytest.raises(ValueError):
        RngStream(-1)


def test_as_stream():
    assert as_stream(3) == RngStream(3)
    assert as_stream(3, (1, 2)) == RngStream(3, (1, 2))
    assert as_stream(RngStream(3, (1,)), (2,)) == RngStream(3, (1, 2))
