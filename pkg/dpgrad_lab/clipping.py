"""Approximate gradient-error model, closed-form clipping radius and sweeps.

The model treats clipping as pure shrinkage of the mean gradient and noise as
m isotropic coordinates of standard deviation sigma*C:

    approx_error(C) = max(0, ||g|| - C)^2 + m C^2 sigma^2

Dropping the clamp gives a convex quadratic whose minimizer is
C* = ||g|| / (1 + m sigma^2).
"""

import logging
from typing import Optional, Sequence

import numpy as np

from .compression import Compressor
from .error_analysis import EstimatorMechanism, estimate_mse
from .errors import InvalidParameterError
from .gradients import GradientVector, SampleBatchGradients, l2_norm, mean_gradient
from .models import ClippingModelInputs, ClippingSweep, PrivacyParams, SweepPoint
from .privacy import privatize_batch
from .rng import RngStream

logger = logging.getLogger(__name__)

NORM_ESTIMATORS = ("median", "mean-norm")


def approx_error(clip_radius: float, inputs: ClippingModelInputs) -> float:
    if clip_radius < 0:
        raise InvalidParameterError(f"clipping radius must be nonnegative, got {clip_radius}")
    shortfall = max(0.0, inputs.g_norm - clip_radius)
    return shortfall**2 + inputs.m * clip_radius**2 * inputs.sigma**2


def differentiable_approx_error(clip_radius: float, inputs: ClippingModelInputs) -> float:
    if clip_radius < 0:
        raise InvalidParameterError(f"clipping radius must be nonnegative, got {clip_radius}")
    return (inputs.g_norm - clip_radius) ** 2 + inputs.m * clip_radius**2 * inputs.sigma**2


def optimal_clipping(inputs: ClippingModelInputs) -> float:
    """argmin_C of the differentiable model, ||g|| / (1 + m sigma^2)."""
    if inputs.g_norm == 0:
        logger.warning("Gradient norm is zero; optimal clipping radius degenerates to 0")
        return 0.0
    return inputs.g_norm / (1.0 + inputs.m * inputs.sigma**2)


def median_row_norm(batch: SampleBatchGradients) -> float:
    return float(np.median([l2_norm(row) for row in batch.rows]))


def mean_gradient_norm(batch: SampleBatchGradients) -> float:
    return l2_norm(mean_gradient(batch))


def estimate_g_norm(batch: SampleBatchGradients, estimator: str) -> float:
    if estimator == "median":
        return median_row_norm(batch)
    if estimator == "mean-norm":
        return mean_gradient_norm(batch)
    raise InvalidParameterError(
        f"unknown norm estimator {estimator!r}; use one of {NORM_ESTIMATORS}"
    )


def log_grid(low: float, high: float, points: int) -> np.ndarray:
    if not (0 < low < high) or points < 2:
        raise InvalidParameterError(f"bad clipping grid {low}:{high}:{points}")
    return np.geomspace(low, high, points)


def clipping_mechanism(
    params: PrivacyParams, compressor: Optional[Compressor] = None
) -> EstimatorMechanism:
    def fn(batch: SampleBatchGradients, rng: RngStream) -> GradientVector:
        noised = privatize_batch(batch, params, rng.derive("privatize"))
        if compressor is None:
            return noised
        return compressor.roundtrip(noised, rng.derive("compress"))

    label = "clip+noise" if compressor is None else "clip+noise+compress"
    return EstimatorMechanism(fn, label)


def sweep_empirical(
    batch: SampleBatchGradients,
    sigma: float,
    compressor: Optional[Compressor],
    grid: Sequence[float],
    n: int,
    rng: RngStream,
    norm_estimator: str = "median",
    delta: float = 1e-5,
    noise_placement: str = "per_sample",
) -> ClippingSweep:
    """Empirical MSE of the clip(+noise)(+compress) mechanism at every grid radius."""
    grid = [float(c) for c in grid]
    if any(b <= a for a, b in zip(grid, grid[1:])) or not grid:
        raise InvalidParameterError("clipping grid must be nonempty and strictly increasing")

    g_norm = estimate_g_norm(batch, norm_estimator)
    inputs = ClippingModelInputs(g_norm=g_norm, m=batch.layout.size, sigma=sigma)
    points = []
    for i, clip_radius in enumerate(grid):
        params = PrivacyParams(
            clip_radius=clip_radius,
            noise_multiplier=sigma,
            delta=delta,
            noise_placement=noise_placement,
        )
        mechanism = clipping_mechanism(params, compressor)
        report = estimate_mse(mechanism, batch, n, rng.derive(f"C-{i}"))
        points.append(
            SweepPoint(
                clip_radius=clip_radius,
                report=report,
                model_error=approx_error(clip_radius, inputs),
            )
        )

    c_star = optimal_clipping(inputs)
    logger.info(
        f"Clipping sweep: {len(grid)} radii, g_norm={g_norm:.6g} ({norm_estimator}), "
        f"C*={c_star:.6g}"
    )
    return ClippingSweep(points=points, g_norm=g_norm, norm_estimator=norm_estimator, c_star=c_star)
