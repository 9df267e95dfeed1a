"""Seeded, labeled random streams."""

import hashlib
from typing import Union

import numpy as np

_MASK64 = (1 << 64) - 1


def stream_id_for(purpose: str) -> int:
    """Stable 64-bit stream id for a purpose string."""
    digest = hashlib.blake2b(purpose.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


class RngStream:
    """A deterministic random stream keyed by (seed, stream id).

    Two streams with equal keys produce bit-identical draw sequences. A stream
    is single-owner: derive a sub-stream instead of sharing one mid-sequence.
    """

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed) & _MASK64
        self.stream_id = int(stream_id) & _MASK64
        sequence = np.random.SeedSequence([self.seed, self.stream_id])
        self.generator = np.random.Generator(np.random.PCG64(sequence))

    @classmethod
    def for_purpose(cls, seed: int, purpose: str) -> "RngStream":
        return cls(seed, stream_id_for(purpose))

    def derive(self, label: Union[str, int]) -> "RngStream":
        """Independent sub-stream; does not advance this stream."""
        return RngStream(self.seed, stream_id_for(f"{self.stream_id}/{label}"))

    def normal(self, scale: float, size) -> np.ndarray:
        return self.generator.normal(0.0, scale, size=size)

    def standard_normal(self, size) -> np.ndarray:
        return self.generator.standard_normal(size)

    def uniform(self, low: float, high: float, size) -> np.ndarray:
        return self.generator.uniform(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self.generator.permutation(n)

    def integers(self, low: int, high: int, size=None):
        return self.generator.integers(low, high, size=size)

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id:#018x})"
