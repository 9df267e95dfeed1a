"""Desk-scale training loop with a pluggable privatize / compress / denoise pipeline."""

import logging
import math
from typing import List, Optional, Tuple

import numpy as np

from .clipping import mean_gradient_norm, median_row_norm, optimal_clipping
from .compression import Compressor, build_compressor
from .denoise import DenoiseState, denoise_step
from .error_analysis import stage_breakdown
from .errors import ConfigError, NumericError
from .gradients import GradientVector, SampleBatchGradients, l2_norm, mean_gradient
from .messages import Message, coo_bytes, decompress
from .models import (
    ClippingModelInputs,
    DenoiseConfig,
    EpochRecord,
    ExperimentConfig,
    ModelSpec,
    PrivacyParams,
    RunRecord,
    TaskSpec,
    final_accuracy,
)
from .networks import Network
from .privacy import PrivacyAccountant, orders_for, privatize_batch, suggest_delta
from .rng import RngStream
from .tasks import generate_task

logger = logging.getLogger(__name__)


class BandwidthTracker:
    """Upstream bytes per step and in total."""

    def __init__(self):
        self.step_bytes: List[int] = []

    def record(self, msg: Optional[Message]) -> int:
        size = 0 if msg is None else coo_bytes(msg)
        self.step_bytes.append(size)
        return size

    @property
    def total_bytes(self) -> int:
        return sum(self.step_bytes)


class Pipeline:
    """Turns per-sample gradients into the update the receiver applies."""

    def __init__(
        self,
        privacy: Optional[PrivacyParams],
        compressor: Optional[Compressor],
        denoise: Optional[DenoiseConfig] = None,
    ):
        if denoise is not None and (privacy is None or compressor is None):
            raise ConfigError("denoise needs the privacy mechanism and a compressor")
        self.privacy = privacy
        self.compressor = compressor
        self.denoise = denoise
        self._compressor_state = None
        self._denoise_state: Optional[DenoiseState] = None

    def process(
        self, batch: SampleBatchGradients, rng: RngStream
    ) -> Tuple[GradientVector, Optional[Message]]:
        if self.denoise is not None:
            if self._denoise_state is None:
                self._denoise_state = DenoiseState.initial(batch.layout)
            msg, self._denoise_state = denoise_step(
                batch, self.denoise, self._denoise_state, self.compressor, rng
            )
            return self._denoise_state.v_receiver, msg.payload

        if self.privacy is None:
            estimate = mean_gradient(batch)
        else:
            estimate = privatize_batch(batch, self.privacy, rng.derive("privatize"))
        if self.compressor is None:
            return estimate, None
        if self._compressor_state is None:
            self._compressor_state = self.compressor.fresh_state(batch.layout)
        msg, _ = self.compressor.compress(estimate, self._compressor_state, rng.derive("compress"))
        return decompress(msg, batch.layout), msg


def resolve_delta(setting, train_size: int) -> float:
    return suggest_delta(train_size) if setting == "auto" else float(setting)


def resolve_clip_radius(
    setting, batch: SampleBatchGradients, sigma: float
) -> float:
    """Numeric radius, the median per-sample norm, or the model optimum C*."""
    if setting == "median":
        radius = median_row_norm(batch)
    elif setting == "optimal":
        inputs = ClippingModelInputs(
            g_norm=mean_gradient_norm(batch), m=batch.layout.size, sigma=sigma
        )
        radius = optimal_clipping(inputs)
    else:
        radius = float(setting)
    if not radius > 0:
        fallback = median_row_norm(batch)
        logger.warning(f"Clipping radius {radius} unusable at step 0; using median norm {fallback}")
        radius = fallback
    if not radius > 0:
        raise ConfigError("cannot derive a positive clipping radius from zero gradients")
    return radius


def build_denoise_config(config: ExperimentConfig, privacy: PrivacyParams) -> DenoiseConfig:
    if privacy.noise_placement != "per_sample":
        raise ConfigError(
            "denoise needs privacy.noise_placement = per_sample, got "
            f"{privacy.noise_placement!r}"
        )
    return DenoiseConfig(
        beta=config.denoise.beta,
        gamma=config.denoise.gamma,
        privacy=privacy,
        tie_break=config.denoise.tie_break,
    )


def build_pipeline(
    config: ExperimentConfig, clip_radius: Optional[float], delta: float
) -> Pipeline:
    privacy = None
    if config.privacy.enabled:
        privacy = PrivacyParams(
            clip_radius=clip_radius,
            noise_multiplier=config.privacy.sigma,
            delta=delta,
            noise_placement=config.privacy.noise_placement,
        )
    denoise = None
    if config.denoise.enabled:
        if privacy is None:
            raise ConfigError("denoise.enabled requires privacy.enabled")
        denoise = build_denoise_config(config, privacy)
    return Pipeline(privacy, build_compressor(config.compress), denoise)


def _batches(order: np.ndarray, batch_size: int):
    for start in range(0, len(order), batch_size):
        yield order[start:start + batch_size]


def run_training(
    task: TaskSpec,
    model: ModelSpec,
    pipeline_config: ExperimentConfig,
    epochs: int,
    lr: float,
    batch_size: int,
    seed: int,
) -> RunRecord:
    """SGD over the task with the configured pipeline on every minibatch.

    Test accuracy is measured after each epoch; bytes and epsilon accumulate per
    step. A non-finite loss or gradient stops the run and flags the record.
    """
    data = generate_task(task)
    network = Network(model)
    rng = RngStream.for_purpose(seed, "train")
    theta = network.init_params(rng.derive("init"))
    delta = resolve_delta(pipeline_config.privacy.delta, data.train_size)
    sigma = pipeline_config.privacy.sigma if pipeline_config.privacy.enabled else 0.0
    accountant = PrivacyAccountant(
        sigma, delta, orders_for(pipeline_config.privacy.accountant_orders)
    )
    bandwidth = BandwidthTracker()

    pipeline: Optional[Pipeline] = None
    clip_radius: Optional[float] = None
    records: List[EpochRecord] = []
    trace = []
    diverged = False
    step = 0

    for epoch in range(epochs):
        order = rng.derive(f"shuffle-{epoch}").permutation(data.train_size)
        try:
            for idx in _batches(order, batch_size):
                rows = network.per_sample_gradients(theta, data.x_train[idx], data.y_train[idx])
                if pipeline is None:
                    if pipeline_config.privacy.enabled:
                        clip_radius = resolve_clip_radius(
                            pipeline_config.privacy.clip, rows, sigma
                        )
                        logger.info(
                            f"Clipping radius {clip_radius:.6g} ({pipeline_config.privacy.clip})"
                        )
                    pipeline = build_pipeline(pipeline_config, clip_radius, delta)
                update, msg = pipeline.process(rows, rng.derive(f"step-{step}"))
                bandwidth.record(msg)
                accountant.step()
                theta = theta - lr * update.values
                step += 1
            train_loss = network.loss(theta, data.x_train, data.y_train)
            if not (math.isfinite(train_loss) and np.all(np.isfinite(theta))):
                raise NumericError(f"loss became non-finite in epoch {epoch}")
        except NumericError as e:
            logger.warning(f"Run with seed {seed} diverged: {e}")
            diverged = True
            # steps taken in the partial epoch still spent privacy
            if accountant.steps > (trace[-1].steps if trace else 0):
                trace.append(accountant.spend)
            break

        spend = accountant.spend
        records.append(
            EpochRecord(
                epoch=epoch,
                test_accuracy=network.accuracy(theta, data.x_test, data.y_test),
                train_loss=train_loss,
                bytes=bandwidth.total_bytes,
                epsilon=spend.epsilon,
            )
        )
        trace.append(spend)
        logger.debug(
            f"epoch {epoch}: acc={records[-1].test_accuracy:.4f} loss={train_loss:.4f} "
            f"bytes={bandwidth.total_bytes} eps={spend.epsilon:.4g}"
        )

    return RunRecord(
        seed=seed,
        epochs=records,
        final_accuracy=final_accuracy([r.test_accuracy for r in records]),
        total_bytes=bandwidth.total_bytes,
        privacy_trace=trace,
        clip_radius=clip_radius,
        delta=delta,
        diverged=diverged,
    )


def run_from_config(config: ExperimentConfig, seed: int) -> RunRecord:
    return run_training(
        config.task_spec(seed),
        config.model_spec(),
        config,
        epochs=config.train.epochs,
        lr=config.train.lr,
        batch_size=config.train.batch_size,
        seed=seed,
    )


def initial_gradients(config: ExperimentConfig, seed: int) -> SampleBatchGradients:
    """Per-sample gradients of the first minibatch a run with this seed trains on."""
    data = generate_task(config.task_spec(seed))
    network = Network(config.model_spec())
    rng = RngStream.for_purpose(seed, "train")
    theta = network.init_params(rng.derive("init"))
    idx = rng.derive("shuffle-0").permutation(data.train_size)[: config.train.batch_size]
    return network.per_sample_gradients(theta, data.x_train[idx], data.y_train[idx])


def initial_gradient_error(config: ExperimentConfig, seed: int) -> float:
    """MSE of the full clip, noise and compress pipeline on ``initial_gradients``."""
    batch = initial_gradients(config, seed)
    if config.privacy.enabled:
        sigma = config.privacy.sigma
        radius = resolve_clip_radius(config.privacy.clip, batch, sigma)
    else:
        # no row is longer than the largest norm, so nothing is clipped
        sigma = 0.0
        radius = max(l2_norm(row) for row in batch) or 1.0
    params = PrivacyParams(
        clip_radius=radius,
        noise_multiplier=sigma,
        delta=resolve_delta(config.privacy.delta, config.task.train_size),
        noise_placement=config.privacy.noise_placement,
    )
    breakdown = stage_breakdown(
        params,
        build_compressor(config.compress),
        batch,
        config.analysis.trials,
        RngStream.for_purpose(seed, "gradient-error"),
    )
    return breakdown["clip+noise+compress"].mse
