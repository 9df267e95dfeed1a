import numpy as np
import pytest

from dpgrad_lab.errors import InvalidInputError, InvalidParameterError, LayoutError
from dpgrad_lab.gradients import (
    GradientVector,
    LayerSpec,
    Layout,
    SampleBatchGradients,
    clip_rows,
    l2_norm,
    mean_gradient,
    read_gradient_dump,
    sphere_project,
    write_gradient_dump,
)


def _make_layout() -> Layout:
    return Layout.from_sizes([("weight", 3), ("bias", 2)])


def _make_batch(rows) -> SampleBatchGradients:
    rows = np.asarray(rows, dtype=float)
    return SampleBatchGradients(rows, Layout.single(rows.shape[1]))


def test_layout_from_sizes_is_contiguous():
    layout = _make_layout()
    assert layout.size == 5
    assert [layer.offset for layer in layout.layers] == [0, 3]
    assert layout.index_of("bias") == 1


def test_layout_rejects_gaps_and_duplicate_names():
    with pytest.raises(ValueError):
        Layout(
            layers=(
                LayerSpec(name="a", size=2, offset=0),
                LayerSpec(name="b", size=2, offset=3),
            )
        )
    with pytest.raises(ValueError):
        Layout.from_sizes([("a", 1), ("a", 1)])


def test_gradient_vector_layers():
    v = GradientVector([1.0, 2.0, 3.0, 4.0, 5.0], _make_layout())
    assert v.layer("weight").tolist() == [1.0, 2.0, 3.0]
    assert v.layer(1).tolist() == [4.0, 5.0]
    assert [spec.name for spec, _ in v.layers()] == ["weight", "bias"]


def test_gradient_vector_rejects_non_finite_and_wrong_size():
    with pytest.raises(InvalidInputError):
        GradientVector([1.0, np.nan, 0.0, 0.0, 0.0], _make_layout())
    with pytest.raises(LayoutError):
        GradientVector([1.0, 2.0], _make_layout())


def test_gradient_vector_is_read_only():
    v = GradientVector(np.zeros(5), _make_layout())
    with pytest.raises(ValueError):
        v.values[0] = 1.0


def test_gradient_arithmetic_checks_layout():
    a = GradientVector(np.ones(5), _make_layout())
    b = GradientVector(np.ones(5), Layout.single(5))
    assert (a + a).values.tolist() == [2.0] * 5
    assert (2.0 * a) == (a + a)
    with pytest.raises(LayoutError):
        a - b


def test_l2_norm_examples():
    layout = Layout.single(2)
    assert l2_norm(GradientVector([3.0, 4.0], layout)) == 5.0
    assert l2_norm(GradientVector([0.0, 0.0], layout)) == 0.0
    with pytest.raises(InvalidInputError):
        l2_norm(np.array([np.inf, 0.0]))


def test_sphere_project_examples():
    layout = Layout.single(2)
    projected = sphere_project(GradientVector([3.0, 4.0], layout), 1.0)
    assert projected.values == pytest.approx([0.6, 0.8])
    inside = GradientVector([0.3, 0.4], layout)
    assert sphere_project(inside, 1.0) == inside
    assert sphere_project(GradientVector([0.0, 0.0], layout), 1.0).values.tolist() == [0.0, 0.0]


def test_norm_and_projection_survive_extreme_magnitudes():
    layout = Layout.single(2)
    huge = GradientVector([1e200, 1e200], layout)
    assert l2_norm(huge) == pytest.approx(np.sqrt(2.0) * 1e200)
    projected = sphere_project(huge, 5.0)
    assert l2_norm(projected) == pytest.approx(5.0)
    assert l2_norm(projected) <= 5.0
    assert projected.values[0] == projected.values[1] > 0
    tiny = GradientVector([1e-200, 1e-200], layout)
    assert l2_norm(tiny) == pytest.approx(np.sqrt(2.0) * 1e-200)


def test_sphere_project_rejects_bad_radius():
    v = GradientVector([1.0, 1.0], Layout.single(2))
    for radius in (0.0, -1.0, float("inf")):
        with pytest.raises(InvalidParameterError):
            sphere_project(v, radius)


def test_sphere_project_bound_and_idempotence_on_random_vectors():
    rng = np.random.default_rng(7)
    layout = Layout.single(50)
    for _ in range(200):
        v = GradientVector(rng.standard_normal(50) * rng.uniform(0.01, 100), layout)
        radius = float(rng.uniform(0.01, 10))
        once = sphere_project(v, radius)
        assert l2_norm(once) <= radius
        assert sphere_project(once, radius) == once


def test_mean_gradient_examples():
    batch = _make_batch([[1.0, 0.0], [0.0, 1.0]])
    assert mean_gradient(batch).values.tolist() == [0.5, 0.5]
    single = _make_batch([[2.0, -1.0]])
    assert mean_gradient(single).values.tolist() == [2.0, -1.0]


def test_mean_gradient_is_linear():
    rng = np.random.default_rng(11)
    for _ in range(100):
        rows = rng.uniform(0.5, 2.0, size=(2, 20))
        a = float(rng.uniform(0.1, 10.0))
        scaled = mean_gradient(_make_batch(a * rows)).values
        np.testing.assert_array_max_ulp(scaled, a * mean_gradient(_make_batch(rows)).values, 4)
    rows = rng.standard_normal((32, 20))
    exact = mean_gradient(_make_batch(0.25 * rows)).values
    assert np.array_equal(exact, 0.25 * mean_gradient(_make_batch(rows)).values)


def test_batch_requires_rows_and_matching_width():
    with pytest.raises(InvalidInputError):
        SampleBatchGradients(np.zeros((0, 2)), Layout.single(2))
    with pytest.raises(LayoutError):
        SampleBatchGradients(np.zeros((2, 3)), Layout.single(2))


def test_clip_rows_bounds_each_row():
    rows = np.array([[3.0, 4.0], [0.1, 0.1], [-6.0, 8.0]])
    clipped = clip_rows(rows, 1.0)
    assert all(np.linalg.norm(r) <= 1.0 for r in clipped)
    assert clipped[1].tolist() == [0.1, 0.1]


def test_gradient_dump_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    batch = SampleBatchGradients(rng.standard_normal((4, 5)), _make_layout())
    path = tmp_path / "grads.txt"
    write_gradient_dump(batch, path)
    loaded = read_gradient_dump(path)
    assert loaded.layout == batch.layout
    assert np.array_equal(loaded.rows, batch.rows)
    assert path.read_text().splitlines()[0] == "5 4 2"


def test_read_gradient_dump_rejects_mismatched_header(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("3 2 1\nparams 3\n1 2 3\n")
    with pytest.raises(InvalidInputError):
        read_gradient_dump(path)
