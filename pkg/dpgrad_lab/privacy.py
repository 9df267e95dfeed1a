"""Per-sample Gaussian mechanism and a Renyi-DP accountant.

The accountant composes the RDP curve of the Gaussian mechanism,
alpha / (2 sigma^2) per step, and converts to (epsilon, delta) with the
standard bound epsilon = rdp + ln(1/delta) / (alpha - 1), minimized over a
fixed grid of orders. Subsampling amplification is not modelled, so the
reported epsilon is an upper bound on what a subsampled accountant reports.
"""

import logging
import math
from typing import Optional, Sequence, Tuple

import numpy as np

from .errors import DomainError, InvalidParameterError
from .gradients import GradientVector, SampleBatchGradients, clip_rows, mean_rows
from .models import PrivacyParams, PrivacySpend
from .rng import RngStream

logger = logging.getLogger(__name__)

DEFAULT_ORDERS: Tuple[float, ...] = (1.5,) + tuple(float(a) for a in range(2, 65)) + (128.0, 256.0)
DENSE_ORDERS: Tuple[float, ...] = tuple(
    sorted(
        set(round(1.0 + 0.05 * i, 2) for i in range(1, 181))
        | set(float(a) for a in range(10, 257))
    )
)


def orders_for(name: str) -> Tuple[float, ...]:
    if name == "default":
        return DEFAULT_ORDERS
    if name == "dense":
        return DENSE_ORDERS
    raise InvalidParameterError(f"unknown order grid {name!r}")


def noised_rows(
    batch: SampleBatchGradients, params: PrivacyParams, rng: RngStream
) -> np.ndarray:
    """Clip every row to radius C and add N(0, (sigma*C)^2) noise to each row."""
    clipped = clip_rows(batch.rows, params.clip_radius)
    if params.noise_multiplier == 0:
        return clipped
    std = params.noise_multiplier * params.clip_radius
    return clipped + rng.normal(std, clipped.shape)


def privatize_batch(
    batch: SampleBatchGradients, params: PrivacyParams, rng: RngStream
) -> GradientVector:
    """Clip each row, add Gaussian noise and average.

    With ``noise_placement = per_sample`` every row receives its own noise
    before averaging; ``on_sum`` adds a single draw to the sum of clipped rows
    (classic DPSGD). With sigma = 0 both reduce to the mean of clipped rows.
    """
    if params.noise_placement == "per_sample" or params.noise_multiplier == 0:
        return GradientVector(mean_rows(noised_rows(batch, params, rng)), batch.layout)

    clipped = clip_rows(batch.rows, params.clip_radius)
    std = params.noise_multiplier * params.clip_radius
    total = clipped.sum(axis=0) + rng.normal(std, clipped.shape[1])
    return GradientVector(total / clipped.shape[0], batch.layout)


def _check_delta(delta: float) -> None:
    if not 0 < delta < 1:
        raise InvalidParameterError(f"delta must lie in (0, 1), got {delta}")


def rdp_epsilon_and_order(
    sigma: float,
    steps: int,
    delta: float,
    orders: Sequence[float] = DEFAULT_ORDERS,
) -> Tuple[float, Optional[float]]:
    """Smallest epsilon over the order grid, together with the minimizing order.

    Returns (0, None) for zero steps and (inf, None) for sigma = 0.
    """
    _check_delta(delta)
    if steps < 0:
        raise InvalidParameterError(f"steps must be nonnegative, got {steps}")
    if sigma < 0:
        raise InvalidParameterError(f"noise multiplier must be nonnegative, got {sigma}")
    if steps == 0:
        return 0.0, None
    if sigma == 0:
        return math.inf, None

    alphas = np.asarray(orders, dtype=np.float64)
    curve = steps * alphas / (2.0 * sigma**2) + math.log(1.0 / delta) / (alphas - 1.0)
    best = int(np.argmin(curve))
    return float(curve[best]), float(alphas[best])


def rdp_epsilon(
    sigma: float, steps: int, delta: float, orders: Sequence[float] = DEFAULT_ORDERS
) -> float:
    return rdp_epsilon_and_order(sigma, steps, delta, orders)[0]


def delta_floor(sigma: float, epsilon: float) -> float:
    """Smallest delta the one-shot Gaussian mechanism admits at (sigma, epsilon).

    The bound (4/5) exp(-(sigma epsilon)^2 / 2) is only stated for epsilon < 1.
    """
    if not 0 < epsilon < 1:
        raise DomainError(f"delta floor is stated for 0 < epsilon < 1, got {epsilon}")
    if sigma < 0:
        raise InvalidParameterError(f"noise multiplier must be nonnegative, got {sigma}")
    return 0.8 * math.exp(-((sigma * epsilon) ** 2) / 2.0)


def suggest_delta(n: int) -> float:
    """A delta one order of magnitude below 1/n."""
    if n < 1:
        raise InvalidParameterError(f"dataset size must be positive, got {n}")
    return 10.0 ** -(math.floor(math.log10(n)) + 1)


class PrivacyAccountant:
    """Tracks the number of Gaussian-mechanism steps and reports the spend."""

    def __init__(
        self,
        noise_multiplier: float,
        delta: float,
        orders: Sequence[float] = DEFAULT_ORDERS,
    ):
        _check_delta(delta)
        self.noise_multiplier = noise_multiplier
        self.delta = delta
        self.orders = tuple(orders)
        self.steps = 0

    def step(self, count: int = 1) -> PrivacySpend:
        if count < 0:
            raise InvalidParameterError(f"cannot take {count} steps")
        self.steps += count
        return self.spend

    @property
    def spend(self) -> PrivacySpend:
        epsilon, alpha = rdp_epsilon_and_order(
            self.noise_multiplier, self.steps, self.delta, self.orders
        )
        return PrivacySpend(steps=self.steps, epsilon=epsilon, delta=self.delta, alpha=alpha)
