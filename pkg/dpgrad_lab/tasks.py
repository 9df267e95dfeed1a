"""Seeded synthetic tasks and the oracle gradient stream."""

import logging
from typing import Iterator, Tuple

import numpy as np

from .errors import ConfigError
from .gradients import GradientVector, SampleBatchGradients
from .models import OracleSpec, TaskSpec
from .rng import RngStream

logger = logging.getLogger(__name__)


class Dataset:
    """Train/test split of a classification task."""

    def __init__(self, x_train, y_train, x_test, y_test, classes: int):
        self.x_train = np.asarray(x_train, dtype=np.float64)
        self.y_train = np.asarray(y_train, dtype=np.int64)
        self.x_test = np.asarray(x_test, dtype=np.float64)
        self.y_test = np.asarray(y_test, dtype=np.int64)
        self.classes = classes

    @property
    def train_size(self) -> int:
        return self.x_train.shape[0]


def _gaussian_blobs(spec: TaskSpec, rng: RngStream, count: int) -> Tuple[np.ndarray, np.ndarray]:
    if spec.classes > spec.input_dim:
        raise ConfigError(
            f"gaussian-blobs needs classes <= input_dim, got {spec.classes} > {spec.input_dim}"
        )
    # orthogonal centres, pairwise distance = separation
    basis, _ = np.linalg.qr(rng.standard_normal((spec.input_dim, spec.classes)))
    centres = basis.T * (spec.separation / np.sqrt(2.0))
    labels = rng.integers(0, spec.classes, size=count)
    points = centres[labels] + spec.spread * rng.standard_normal((count, spec.input_dim))
    return points, labels


def _two_rings(spec: TaskSpec, rng: RngStream, count: int) -> Tuple[np.ndarray, np.ndarray]:
    # concentric rings of radius separation * (k + 1) in the first two dimensions
    labels = rng.integers(0, spec.classes, size=count)
    angles = rng.uniform(0.0, 2 * np.pi, size=count)
    radii = spec.separation * (labels + 1) + 0.25 * spec.spread * rng.standard_normal(count)
    points = 0.25 * spec.spread * rng.standard_normal((count, spec.input_dim))
    points[:, 0] = radii * np.cos(angles)
    points[:, 1] = radii * np.sin(angles)
    return points, labels


def generate_task(spec: TaskSpec) -> Dataset:
    """Regenerate the task deterministically from its seed.

    Train and test come from one draw split in two, so they never share a sample.
    """
    rng = RngStream.for_purpose(spec.seed, f"task/{spec.generator}")
    count = spec.train_size + spec.test_size
    if spec.generator == "gaussian-blobs":
        points, labels = _gaussian_blobs(spec, rng, count)
    elif spec.generator == "two-rings":
        points, labels = _two_rings(spec, rng, count)
    else:
        raise ConfigError(f"task generator {spec.generator!r} does not produce a dataset")
    n = spec.train_size
    logger.debug(f"Generated {spec.generator}: {n} train / {spec.test_size} test samples")
    return Dataset(points[:n], labels[:n], points[n:], labels[n:], spec.classes)


class OracleStream:
    """Batches of rows g + per-sample Gaussian perturbation around a prescribed g."""

    def __init__(self, spec: OracleSpec, steps: int, rng: RngStream):
        self.spec = spec
        self.steps = steps
        self.layout = spec.layout
        self._rng = rng
        direction = rng.derive("target").standard_normal(self.layout.size)
        norm = np.linalg.norm(direction)
        self.target = GradientVector(direction * (spec.g_norm / norm), self.layout)

    def batch(self, step: int) -> SampleBatchGradients:
        noise = self._rng.derive(f"batch-{step}").normal(
            self.spec.scale, (self.spec.batch_size, self.layout.size)
        )
        return SampleBatchGradients(self.target.values + noise, self.layout)

    def __iter__(self) -> Iterator[SampleBatchGradients]:
        for step in range(self.steps):
            yield self.batch(step)

    def __len__(self) -> int:
        return self.steps


def oracle_stream(spec: OracleSpec, steps: int, rng: RngStream) -> OracleStream:
    """`steps` batches around a fixed true gradient exposed as ``.target``."""
    return OracleStream(spec, steps, rng)
