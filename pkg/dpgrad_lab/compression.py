"""Top-k sparsification with bit truncation, and PowerSGD low-rank compression."""

import logging
import math
from abc import ABC, abstractmethod
from typing import Dict, Optional, Set, Tuple

import numpy as np

from .errors import InvalidParameterError, LayoutError
from .gradients import GradientVector, Layout
from .messages import (
    LowRankLayer,
    LowRankMessage,
    Message,
    SparseLayer,
    SparseMessage,
    decompress,
    dematricize,
    matricize,
)
from .models import ExperimentConfig
from .rng import RngStream

logger = logging.getLogger(__name__)

MANTISSA_BITS = {16: 7, 32: 23, 64: 52}
_FLOAT64_MANTISSA = 52


def truncate_array(x: np.ndarray, payload_bits: int = 16) -> np.ndarray:
    """Zero the low-order mantissa bits so `payload_bits` remain (sign, exponent, mantissa).

    Truncation is toward zero and idempotent; 64 leaves values untouched.
    """
    if payload_bits not in MANTISSA_BITS:
        raise InvalidParameterError(f"payload width must be 16, 32 or 64, got {payload_bits}")
    array = np.asarray(x, dtype=np.float64)
    drop = _FLOAT64_MANTISSA - MANTISSA_BITS[payload_bits]
    if drop == 0:
        return array.copy()
    mask = np.uint64(~((1 << drop) - 1) & 0xFFFFFFFFFFFFFFFF)
    return (array.view(np.uint64) & mask).view(np.float64)


def truncate_bits(x: float, payload_bits: int = 16) -> float:
    return float(truncate_array(np.array([x]), payload_bits)[0])


def keep_count(size: int, rate: float) -> int:
    """k = max(1, floor(size / rate))."""
    return max(1, math.floor(size / rate))


def _check_rate(rate: float) -> None:
    if not (rate >= 1 and math.isfinite(rate)):
        raise InvalidParameterError(f"compression rate must be >= 1, got {rate}")


def _top_indices(x: np.ndarray, k: int) -> np.ndarray:
    # stable sort keeps the lowest index first among equal magnitudes
    order = np.argsort(-np.abs(x), kind="stable")
    return np.sort(order[:k])


def topk_sparsify(
    v: GradientVector,
    rate: float,
    payload_bits: int = 16,
    scope: str = "layer",
) -> Tuple[SparseMessage, GradientVector]:
    """Keep the k largest-magnitude coordinates (per layer, or over the whole model).

    The residual holds the dropped coordinates, computed against the untruncated
    kept values, so ``decompress(msg) + residual == v`` up to truncation.
    """
    _check_rate(rate)
    x = v.values
    if scope == "layer":
        kept = [
            _top_indices(x[spec.offset:spec.stop], keep_count(spec.size, rate))
            for spec in v.layout.layers
        ]
    elif scope == "model":
        flat = _top_indices(x, keep_count(v.layout.size, rate))
        kept = [
            flat[(flat >= spec.offset) & (flat < spec.stop)] - spec.offset
            for spec in v.layout.layers
        ]
    else:
        raise InvalidParameterError(f"unknown sparsification scope {scope!r}")

    residual = x.copy()
    layers = []
    for layer_id, (spec, idx) in enumerate(zip(v.layout.layers, kept)):
        values = x[spec.offset + idx]
        residual[spec.offset + idx] = 0.0
        layers.append(SparseLayer(layer_id, idx, truncate_array(values, payload_bits)))
    return SparseMessage(layers, payload_bits), GradientVector(residual, v.layout)


def _project_out(basis: np.ndarray, x: np.ndarray) -> np.ndarray:
    # two passes of modified Gram-Schmidt
    for _ in range(2):
        for i in range(basis.shape[1]):
            x = x - (basis[:, i] @ x) * basis[:, i]
    return x


def orthonormalize(matrix: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Modified Gram-Schmidt on the columns of `matrix`.

    A column that vanishes after projection (zero or rank-deficient input) is
    replaced by the canonical basis vector with the largest component
    orthogonal to the previous columns, so the result is always orthonormal.
    """
    q = np.array(matrix, dtype=np.float64)
    n, r = q.shape
    if r > n:
        raise InvalidParameterError(f"cannot orthonormalize {r} columns in dimension {n}")
    for j in range(r):
        original = float(np.linalg.norm(q[:, j]))
        col = _project_out(q[:, :j], q[:, j])
        norm = float(np.linalg.norm(col))
        if norm == 0.0 or norm <= tol * original:
            candidates = [_project_out(q[:, :j], e) for e in np.eye(n)]
            col = max(candidates, key=lambda c: float(np.linalg.norm(c)))
            norm = float(np.linalg.norm(col))
        q[:, j] = col / norm
    return q


class CompressorState:
    """Error-feedback residual and PowerSGD warm-start factors of one replica."""

    def __init__(self, layout: Layout):
        self.layout = layout
        self.residual = GradientVector.zeros(layout)
        self.warm_start: Dict[str, np.ndarray] = {}
        self.clamped: Set[str] = set()

    def reset_residual(self) -> None:
        self.residual = GradientVector.zeros(self.layout)

    def copy(self) -> "CompressorState":
        other = CompressorState(self.layout)
        other.residual = self.residual
        other.warm_start = {name: q.copy() for name, q in self.warm_start.items()}
        other.clamped = set(self.clamped)
        return other


def powersgd_compress(
    v: GradientVector,
    rank: int,
    state: CompressorState,
    rng: RngStream,
    iterations: int = 1,
    warned: Optional[Set[str]] = None,
) -> Tuple[LowRankMessage, GradientVector]:
    """One PowerSGD round per layer on M = matricize(v + residual).

    P = M Q_prev (Q_prev random Gaussian without a warm start), P orthonormalized,
    Q = M^T P, reconstruction P Q^T. The new residual and Q are stored in `state`.
    A rank clamp is logged once per layer name in `warned` (default `state.clamped`).
    """
    if rank < 1:
        raise InvalidParameterError(f"rank must be >= 1, got {rank}")
    if iterations < 1:
        raise InvalidParameterError(f"iterations must be >= 1, got {iterations}")
    if state.layout != v.layout:
        raise LayoutError("compressor state layout does not match the gradient")

    if warned is None:
        warned = state.clamped

    x = v.values + state.residual.values
    approx = np.empty_like(x)
    layers = []
    for layer_id, spec in enumerate(v.layout.layers):
        m = matricize(x[spec.offset:spec.stop])
        n1, n2 = m.shape
        r = rank
        if r > min(n1, n2):
            r = min(n1, n2)
            if spec.name not in warned:
                logger.warning(f"Rank {rank} clamped to {r} for layer {spec.name!r} ({n1}x{n2})")
                warned.add(spec.name)
        q = state.warm_start.get(spec.name)
        if q is None or q.shape != (n2, r):
            q = rng.standard_normal((n2, r))
        for _ in range(iterations):
            p = orthonormalize(m @ q)
            q = m.T @ p
        approx[spec.offset:spec.stop] = dematricize(p @ q.T, spec.size)
        state.warm_start[spec.name] = q
        layers.append(LowRankLayer(layer_id, (n1, n2), p, q))

    state.residual = GradientVector(x - approx, v.layout)
    return LowRankMessage(layers), state.residual


class Compressor(ABC):
    """A compressor family bound to its hyperparameters."""

    kind: str = ""

    def __init__(self, error_feedback: bool = True):
        self.error_feedback = error_feedback

    @abstractmethod
    def compress(
        self, v: GradientVector, state: CompressorState, rng: RngStream
    ) -> Tuple[Message, GradientVector]:
        """Compress v (plus the stored residual when error feedback is on)."""

    def fresh_state(self, layout: Layout) -> CompressorState:
        return CompressorState(layout)

    def roundtrip(self, v: GradientVector, rng: RngStream) -> GradientVector:
        """decompress(compress(v)) with a zero residual and no warm start."""
        msg, _ = self.compress(v, self.fresh_state(v.layout), rng)
        return decompress(msg, v.layout)


class TopKCompressor(Compressor):
    kind = "topk"

    def __init__(
        self,
        rate: float,
        payload_bits: int = 16,
        scope: str = "layer",
        error_feedback: bool = True,
    ):
        super().__init__(error_feedback)
        _check_rate(rate)
        if payload_bits not in MANTISSA_BITS:
            raise InvalidParameterError(f"payload width must be 16, 32 or 64, got {payload_bits}")
        self.rate = rate
        self.payload_bits = payload_bits
        self.scope = scope

    def compress(self, v, state, rng):
        x = v + state.residual if self.error_feedback else v
        msg, residual = topk_sparsify(x, self.rate, self.payload_bits, self.scope)
        if self.error_feedback:
            state.residual = residual
        return msg, residual

    def __repr__(self) -> str:
        return (
            f"TopKCompressor(rate={self.rate}, payload_bits={self.payload_bits}, "
            f"scope={self.scope})"
        )


class PowerSGDCompressor(Compressor):
    kind = "powersgd"

    def __init__(self, rank: int, iterations: int = 1, error_feedback: bool = True):
        super().__init__(error_feedback)
        if rank < 1:
            raise InvalidParameterError(f"rank must be >= 1, got {rank}")
        self.rank = rank
        self.iterations = iterations
        # layer names whose rank clamp was already logged
        self.clamped: Set[str] = set()

    def compress(self, v, state, rng):
        if not self.error_feedback:
            state.reset_residual()
        return powersgd_compress(v, self.rank, state, rng, self.iterations, self.clamped)

    def __repr__(self) -> str:
        return f"PowerSGDCompressor(rank={self.rank}, iterations={self.iterations})"


def lossless_compressor() -> TopKCompressor:
    """Every coordinate, full 64-bit payload, no residual."""
    return TopKCompressor(rate=1.0, payload_bits=64, error_feedback=False)


def build_compressor(config: ExperimentConfig.CompressConfig) -> Compressor:
    if config.kind == "none":
        return lossless_compressor()
    if config.kind == "topk":
        return TopKCompressor(
            config.rate, config.payload_bits, config.scope, config.error_feedback
        )
    return PowerSGDCompressor(config.rank, config.power_iterations, config.error_feedback)
