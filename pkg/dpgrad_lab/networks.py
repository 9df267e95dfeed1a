"""Logistic regression and a one-hidden-layer ReLU MLP with hand-derived gradients."""

import logging
from typing import Dict

import numpy as np

from .errors import InvalidInputError, NumericError
from .gradients import Layout, SampleBatchGradients
from .models import ModelSpec
from .rng import RngStream

logger = logging.getLogger(__name__)


def _softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _first_bad_row(a: np.ndarray) -> int:
    bad = ~np.all(np.isfinite(a.reshape(a.shape[0], -1)), axis=1)
    return int(np.argmax(bad))


class Network:
    """Parameters live in one flat vector laid out by ``spec.layout``."""

    def __init__(self, spec: ModelSpec):
        self.spec = spec
        self.layout: Layout = spec.layout

    def init_params(self, rng: RngStream) -> np.ndarray:
        theta = np.zeros(self.layout.size)
        if self.spec.architecture == "mlp-1-hidden":
            d, h = self.spec.input_dim, self.spec.hidden_width
            params = self.unpack(theta)
            params["hidden.weight"][...] = rng.normal(np.sqrt(2.0 / d), (d, h))
            params["output.weight"][...] = rng.normal(np.sqrt(1.0 / h), (h, self.spec.classes))
        return theta

    def unpack(self, theta: np.ndarray) -> Dict[str, np.ndarray]:
        """Views into theta, weights shaped (fan_in, fan_out)."""
        d, k, h = self.spec.input_dim, self.spec.classes, self.spec.hidden_width
        shapes = {
            "weight": (d, k),
            "bias": (k,),
            "hidden.weight": (d, h),
            "hidden.bias": (h,),
            "output.weight": (h, k),
            "output.bias": (k,),
        }
        return {
            spec.name: theta[spec.offset:spec.stop].reshape(shapes[spec.name])
            for spec in self.layout.layers
        }

    def _forward(self, theta: np.ndarray, x: np.ndarray):
        p = self.unpack(theta)
        if self.spec.architecture == "logistic-regression":
            return p, x @ p["weight"] + p["bias"], None
        pre = x @ p["hidden.weight"] + p["hidden.bias"]
        hidden = np.maximum(pre, 0.0)
        return p, hidden @ p["output.weight"] + p["output.bias"], (pre, hidden)

    def logits(self, theta: np.ndarray, x: np.ndarray) -> np.ndarray:
        return self._forward(theta, x)[1]

    def sample_losses(self, theta: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Per-sample cross-entropy."""
        z = self.logits(theta, x)
        return -_log_softmax(z)[np.arange(len(y)), y]

    def loss(self, theta: np.ndarray, x: np.ndarray, y: np.ndarray) -> float:
        return float(self.sample_losses(theta, x, y).mean())

    def accuracy(self, theta: np.ndarray, x: np.ndarray, y: np.ndarray) -> float:
        return float(np.mean(np.argmax(self.logits(theta, x), axis=1) == y))

    def per_sample_gradients(
        self, theta: np.ndarray, x: np.ndarray, y: np.ndarray
    ) -> SampleBatchGradients:
        """Row i is the gradient of the cross-entropy of sample i."""
        if x.shape[0] == 0:
            raise InvalidInputError("minibatch is empty")
        params, z, cache = self._forward(theta, x)
        if not np.all(np.isfinite(z)):
            index = _first_bad_row(z)
            raise NumericError(f"non-finite logits for sample {index}", sample_index=index)

        delta = _softmax(z)
        delta[np.arange(len(y)), y] -= 1.0
        b = x.shape[0]
        if self.spec.architecture == "logistic-regression":
            parts = [np.einsum("bd,bk->bdk", x, delta).reshape(b, -1), delta]
        else:
            pre, hidden = cache
            d_hidden = (delta @ params["output.weight"].T) * (pre > 0)
            parts = [
                np.einsum("bd,bh->bdh", x, d_hidden).reshape(b, -1),
                d_hidden,
                np.einsum("bh,bk->bhk", hidden, delta).reshape(b, -1),
                delta,
            ]
        rows = np.concatenate(parts, axis=1)
        if not np.all(np.isfinite(rows)):
            index = _first_bad_row(rows)
            raise NumericError(f"non-finite gradient for sample {index}", sample_index=index)
        return SampleBatchGradients(rows, self.layout)


def per_sample_gradients(
    model: Network, theta: np.ndarray, x: np.ndarray, y: np.ndarray
) -> SampleBatchGradients:
    return model.per_sample_gradients(theta, x, y)
