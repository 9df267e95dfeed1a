import numpy as np

from dpgrad_lab.rng import RngStream, stream_id_for


def test_equal_keys_give_identical_draws():
    a = RngStream.for_purpose(3, "noise")
    b = RngStream.for_purpose(3, "noise")
    assert np.array_equal(a.standard_normal(100), b.standard_normal(100))


def test_equal_keys_stay_identical_over_a_million_draws():
    a = RngStream(2024, stream_id_for("noise"))
    b = RngStream(2024, stream_id_for("noise"))
    for _ in range(10):
        assert np.array_equal(a.standard_normal(100_000), b.standard_normal(100_000))
    assert np.array_equal(a.uniform(0.0, 1.0, 10), b.uniform(0.0, 1.0, 10))


def test_different_purposes_are_independent():
    a = RngStream.for_purpose(3, "noise").standard_normal(100)
    b = RngStream.for_purpose(3, "shuffle").standard_normal(100)
    assert not np.array_equal(a, b)
    assert abs(np.corrcoef(a, b)[0, 1]) < 0.35


def test_stream_id_is_stable():
    assert stream_id_for("noise") == stream_id_for("noise")
    assert stream_id_for("noise") != stream_id_for("noise2")
    assert 0 <= stream_id_for("anything") < 2**64


def test_derive_does_not_advance_parent():
    parent = RngStream.for_purpose(1, "trials")
    child_first = parent.derive("trial-0").standard_normal(10)
    parent.derive("trial-1").standard_normal(10)
    assert np.array_equal(parent.derive("trial-0").standard_normal(10), child_first)
    assert np.array_equal(
        parent.standard_normal(5), RngStream.for_purpose(1, "trials").standard_normal(5)
    )


def test_normal_scale():
    draws = RngStream(0, 1).normal(2.0, 20000)
    assert abs(draws.std() - 2.0) < 0.05
