"""Monte-Carlo gradient error and its bias/variance split per pipeline stage."""

import logging
from typing import Callable, List, Tuple

import numpy as np

from .compression import Compressor
from .errors import InvalidParameterError
from .gradients import GradientVector, SampleBatchGradients, clip_rows, mean_gradient, mean_rows
from .models import STAGES, ErrorReport, PrivacyParams, StageBreakdown
from .privacy import privatize_batch
from .rng import RngStream

logger = logging.getLogger(__name__)

MechanismFn = Callable[[SampleBatchGradients, RngStream], GradientVector]


class EstimatorMechanism:
    """A (possibly stochastic) map from a batch of gradients to one estimate.

    Stochastic mechanisms must draw only from the stream they are handed.
    """

    def __init__(self, fn: MechanismFn, label: str):
        self.fn = fn
        self.label = label

    def __call__(self, batch: SampleBatchGradients, rng: RngStream) -> GradientVector:
        return self.fn(batch, rng)

    def __repr__(self) -> str:
        return f"EstimatorMechanism({self.label!r})"


def decompose(estimates: np.ndarray, target: np.ndarray) -> Tuple[float, float, float]:
    """(mse, bias_sq, variance) of n x m estimates around a target, 1/n normalized."""
    # Shifted mean so identical estimates give a mean equal to them bit for bit.
    anchor = estimates[0]
    centre = anchor + (estimates - anchor).mean(axis=0)
    mse = float(np.mean(np.sum((estimates - target) ** 2, axis=1)))
    bias_sq = float(np.sum((centre - target) ** 2))
    variance = float(np.mean(np.sum((estimates - centre) ** 2, axis=1)))
    return mse, bias_sq, variance


def estimate_mse(
    mechanism: EstimatorMechanism,
    batch: SampleBatchGradients,
    n: int,
    rng: RngStream,
) -> ErrorReport:
    """Run the mechanism n times against the clean batch mean.

    Trial i draws from ``rng.derive(f"trial-{i}")``, so the report does not
    depend on how trials are scheduled.
    """
    if n < 2:
        raise InvalidParameterError(f"need at least 2 trials, got {n}")
    target = mean_gradient(batch).values
    estimates = np.empty((n, target.shape[0]))
    for i in range(n):
        estimates[i] = mechanism(batch, rng.derive(f"trial-{i}")).values
    mse, bias_sq, variance = decompose(estimates, target)
    logger.debug(
        f"{mechanism.label}: mse={mse:.6g} bias_sq={bias_sq:.6g} variance={variance:.6g} (n={n})"
    )
    return ErrorReport(mse=mse, bias_sq=bias_sq, variance=variance, n=n, stage=mechanism.label)


def stage_mechanisms(params: PrivacyParams, compressor: Compressor) -> List[EstimatorMechanism]:
    """clip, clip+noise and clip+noise+compress mechanisms for one configuration."""

    def clip_only(batch: SampleBatchGradients, rng: RngStream) -> GradientVector:
        return GradientVector(mean_rows(clip_rows(batch.rows, params.clip_radius)), batch.layout)

    def clip_noise(batch: SampleBatchGradients, rng: RngStream) -> GradientVector:
        return privatize_batch(batch, params, rng.derive("privatize"))

    def clip_noise_compress(batch: SampleBatchGradients, rng: RngStream) -> GradientVector:
        noised = privatize_batch(batch, params, rng.derive("privatize"))
        return compressor.roundtrip(noised, rng.derive("compress"))

    return [
        EstimatorMechanism(fn, label)
        for fn, label in zip((clip_only, clip_noise, clip_noise_compress), STAGES)
    ]


def stage_breakdown(
    params: PrivacyParams,
    compressor: Compressor,
    batch: SampleBatchGradients,
    n: int,
    rng: RngStream,
) -> StageBreakdown:
    """Error after clipping, after noising and after compression, same target g.

    Compression is measured single-shot with a zero residual in each trial.
    """
    reports = [
        estimate_mse(mechanism, batch, n, rng.derive(mechanism.label))
        for mechanism in stage_mechanisms(params, compressor)
    ]
    return StageBreakdown(reports=reports)
