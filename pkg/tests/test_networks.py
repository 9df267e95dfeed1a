import numpy as np
import pytest

from dpgrad_lab.errors import InvalidInputError, NumericError
from dpgrad_lab.models import ModelSpec
from dpgrad_lab.networks import Network, per_sample_gradients
from dpgrad_lab.rng import RngStream


def _make_network(architecture="logistic-regression", d=4, k=3, h=5) -> Network:
    return Network(ModelSpec(architecture=architecture, input_dim=d, classes=k, hidden_width=h))


def _make_data(n=6, d=4, k=3, seed=0):
    rng = np.random.default_rng(seed)
    return rng.standard_normal((n, d)), rng.integers(0, k, n)


def _finite_difference(net, theta, x, y, eps=1e-5):
    grad = np.zeros_like(theta)
    for j in range(theta.size):
        up, down = theta.copy(), theta.copy()
        up[j] += eps
        down[j] -= eps
        grad[j] = (net.loss(up, x, y) - net.loss(down, x, y)) / (2 * eps)
    return grad


@pytest.mark.parametrize("architecture", ["logistic-regression", "mlp-1-hidden"])
def test_per_sample_gradients_match_finite_differences(architecture):
    net = _make_network(architecture)
    theta = np.random.default_rng(1).standard_normal(net.layout.size) * 0.5
    x, y = _make_data()
    rows = per_sample_gradients(net, theta, x, y).rows
    for i in range(len(y)):
        numeric = _finite_difference(net, theta, x[i:i + 1], y[i:i + 1])
        scale = np.maximum(np.abs(numeric), 1e-3)
        assert np.max(np.abs(rows[i] - numeric) / scale) <= 1e-4


def test_layout_sizes():
    assert _make_network().layout.size == 4 * 3 + 3
    mlp = _make_network("mlp-1-hidden")
    assert mlp.layout.size == 4 * 5 + 5 + 5 * 3 + 3
    assert [layer.name for layer in mlp.layout.layers] == [
        "hidden.weight",
        "hidden.bias",
        "output.weight",
        "output.bias",
    ]


def test_duplicated_sample_gives_identical_rows():
    net = _make_network("mlp-1-hidden")
    theta = net.init_params(RngStream(0))
    x, y = _make_data(n=1)
    batch = net.per_sample_gradients(theta, np.vstack([x, x]), np.concatenate([y, y]))
    assert batch.rows[0] == pytest.approx(batch.rows[1], rel=1e-12, abs=1e-15)


def test_zero_input_gives_zero_weight_gradient():
    net = _make_network()
    theta = np.random.default_rng(2).standard_normal(net.layout.size)
    batch = net.per_sample_gradients(theta, np.zeros((2, 4)), np.array([0, 2]))
    assert not batch.rows[:, :12].any()
    assert np.all(np.abs(batch.rows[:, 12:]).sum(axis=1) > 0)


def test_mean_of_rows_is_the_batch_loss_gradient():
    net = _make_network("mlp-1-hidden")
    theta = net.init_params(RngStream(3))
    x, y = _make_data(n=5)
    rows = net.per_sample_gradients(theta, x, y).rows
    assert rows.mean(axis=0) == pytest.approx(_finite_difference(net, theta, x, y), abs=1e-6)


def test_non_finite_parameters_raise_with_sample_index():
    net = _make_network()
    theta = np.zeros(net.layout.size)
    theta[0] = 1e308
    x = np.zeros((3, 4))
    x[1, 0] = 10.0
    with pytest.raises(NumericError) as excinfo:
        net.per_sample_gradients(theta, x, np.array([0, 1, 2]))
    assert excinfo.value.sample_index == 1


def test_empty_minibatch_rejected():
    net = _make_network()
    with pytest.raises(InvalidInputError):
        net.per_sample_gradients(
            np.zeros(net.layout.size), np.zeros((0, 4)), np.zeros(0, dtype=int)
        )


def test_logistic_regression_starts_at_zero():
    net = _make_network()
    theta = net.init_params(RngStream(0))
    assert not theta.any()
    x, y = _make_data()
    assert net.loss(theta, x, y) == pytest.approx(np.log(3))
