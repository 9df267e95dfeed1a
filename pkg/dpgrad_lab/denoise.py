"""Denoise: intermediate processing between the privacy mechanism and compression.

Per step the sender privatizes the batch, clips every noised sample a second
time, folds the mean into an exponential moving average (the sender velocity)
and compresses both the velocity and its change since the receiver's copy
(the acceleration), each with the decayed residual added. Whichever message
leaves the smaller residual is sent together with a one-bit flag; the receiver
either replaces its velocity or adds the acceleration.
"""

import logging
from typing import Dict, List, Literal, Optional, Tuple

import numpy as np
from .compression import Compressor, CompressorState
from .errors import CorruptMessageError, LayoutError
from .gradients import GradientVector, Layout, SampleBatchGradients, clip_rows, l2_norm, mean_rows
from .messages import Message, decompress
from .models import DenoiseConfig, DenoiseStepRow, PrivacyParams
from .privacy import noised_rows, privatize_batch
from .rng import RngStream
from .tasks import OracleStream

logger = logging.getLogger(__name__)

Flag = Literal["velocity", "acceleration"]


class DenoiseState:
    """Sender velocity, receiver velocity and residual; all start at zero."""

    __slots__ = ("v_sender", "v_receiver", "residual", "warm_start")

    def __init__(
        self,
        v_sender: GradientVector,
        v_receiver: GradientVector,
        residual: GradientVector,
        warm_start: Optional[Dict[str, np.ndarray]] = None,
    ):
        if not v_sender.layout == v_receiver.layout == residual.layout:
            raise LayoutError("denoise state vectors must share one layout")
        self.v_sender = v_sender
        self.v_receiver = v_receiver
        self.residual = residual
        self.warm_start = dict(warm_start or {})

    @classmethod
    def initial(cls, layout: Layout) -> "DenoiseState":
        zeros = GradientVector.zeros(layout)
        return cls(zeros, zeros, zeros)

    @property
    def layout(self) -> Layout:
        return self.v_sender.layout


class DenoiseMessage:
    __slots__ = ("flag", "payload", "residual_norm_v", "residual_norm_a")

    def __init__(
        self, flag: Flag, payload: Message, residual_norm_v: float, residual_norm_a: float
    ):
        self.flag = flag
        self.payload = payload
        self.residual_norm_v = residual_norm_v
        self.residual_norm_a = residual_norm_a

    def __repr__(self) -> str:
        return f"DenoiseMessage(flag={self.flag}, payload={self.payload!r})"


def receiver_apply(msg: DenoiseMessage, v_receiver: GradientVector) -> GradientVector:
    """Replace the receiver velocity (velocity flag) or add to it (acceleration flag)."""
    try:
        payload = decompress(msg.payload, v_receiver.layout)
    except CorruptMessageError as e:
        raise LayoutError(f"message does not fit the receiver layout: {e}") from e
    if msg.flag == "velocity":
        return payload
    return v_receiver + payload


def _compress_branch(
    x: np.ndarray,
    state: DenoiseState,
    compressor: Compressor,
    rng: RngStream,
) -> Tuple[Message, GradientVector, CompressorState]:
    scratch = CompressorState(state.layout)
    scratch.warm_start = {name: q.copy() for name, q in state.warm_start.items()}
    msg, residual = compressor.compress(GradientVector(x, state.layout), scratch, rng)
    return msg, residual, scratch


def denoise_step(
    batch: SampleBatchGradients,
    cfg: DenoiseConfig,
    state: DenoiseState,
    compressor: Compressor,
    rng: RngStream,
) -> Tuple[DenoiseMessage, DenoiseState]:
    """One sender step; returns the message and the updated (new) state."""
    if batch.layout != state.layout:
        raise LayoutError("batch layout does not match the denoise state")
    params = cfg.privacy

    noised = noised_rows(batch, params, rng.derive("privatize"))
    second = clip_rows(noised, params.clip_radius)
    v_sender = cfg.beta * state.v_sender.values + (1.0 - cfg.beta) * mean_rows(second)
    acceleration = v_sender - state.v_receiver.values
    fed_back = cfg.gamma * state.residual.values

    msg_v, r_v, scratch_v = _compress_branch(
        v_sender + fed_back, state, compressor, rng.derive("compress-velocity")
    )
    msg_a, r_a, scratch_a = _compress_branch(
        acceleration + fed_back, state, compressor, rng.derive("compress-acceleration")
    )
    norm_v, norm_a = l2_norm(r_v), l2_norm(r_a)

    if norm_v < norm_a or (norm_v == norm_a and cfg.tie_break == "velocity"):
        message = DenoiseMessage("velocity", msg_v, norm_v, norm_a)
        residual, scratch = r_v, scratch_v
    else:
        message = DenoiseMessage("acceleration", msg_a, norm_v, norm_a)
        residual, scratch = r_a, scratch_a

    new_state = DenoiseState(
        v_sender=GradientVector(v_sender, state.layout),
        v_receiver=receiver_apply(message, state.v_receiver),
        residual=residual,
        warm_start=scratch.warm_start,
    )
    logger.debug(f"Denoise sent {message.flag} (|r_v|={norm_v:.4g}, |r_a|={norm_a:.4g})")
    return message, new_state


def run_denoise_stream(
    stream: OracleStream,
    cfg: DenoiseConfig,
    compressor: Compressor,
    rng: RngStream,
) -> List[DenoiseStepRow]:
    """Drive denoise_step over an oracle stream, scoring the receiver against g."""
    state = DenoiseState.initial(stream.layout)
    rows = []
    for step, batch in enumerate(stream):
        msg, state = denoise_step(batch, cfg, state, compressor, rng.derive(f"step-{step}"))
        error = l2_norm(state.v_receiver - stream.target) ** 2
        rows.append(
            DenoiseStepRow(
                step=step,
                flag=msg.flag,
                residual_norm_v=msg.residual_norm_v,
                residual_norm_a=msg.residual_norm_a,
                mse_receiver=error,
            )
        )
    return rows


def plain_receiver_stream(
    stream: OracleStream,
    params: PrivacyParams,
    compressor: Compressor,
    rng: RngStream,
) -> List[float]:
    """Squared error of privatize + compress (with error feedback) at each step."""
    state = compressor.fresh_state(stream.layout)
    errors = []
    for step, batch in enumerate(stream):
        step_rng = rng.derive(f"step-{step}")
        noised = privatize_batch(batch, params, step_rng.derive("privatize"))
        msg, _ = compressor.compress(noised, state, step_rng.derive("compress-velocity"))
        received = decompress(msg, stream.layout)
        errors.append(l2_norm(received - stream.target) ** 2)
    return errors
