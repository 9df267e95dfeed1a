"""Compressed gradient messages, their decoding and byte accounting.

Wire layout (little-endian): every layer starts with an 8-byte header,
``layer id`` (uint32) then ``nnz`` or ``rank`` (uint32). Sparse layers follow
with nnz entries of (index: uint32, value: payload width); low-rank layers
with the dense float32 factors P (n1 x r) then Q (n2 x r), row-major.
"""

import logging
import math
from typing import Tuple, Union

import numpy as np

from .errors import CorruptMessageError, InvalidParameterError
from .gradients import GradientVector, Layout

logger = logging.getLogger(__name__)

HEADER_BYTES = 8
INDEX_BYTES = 4
FACTOR_BYTES = 4
PAYLOAD_BYTES = {16: 2, 32: 4, 64: 8}


def matrix_shape(size: int) -> Tuple[int, int]:
    """Near-square shape (n1, n2) used to matricize a layer of `size` coordinates."""
    if size < 1:
        raise InvalidParameterError(f"layer size must be positive, got {size}")
    n1 = math.isqrt(size - 1) + 1
    n2 = -(-size // n1)
    return n1, n2


def matricize(x: np.ndarray) -> np.ndarray:
    """Row-major fill of a layer slice into an n1 x n2 matrix, zero padded."""
    n1, n2 = matrix_shape(x.shape[0])
    padded = np.zeros(n1 * n2)
    padded[: x.shape[0]] = x
    return padded.reshape(n1, n2)


def dematricize(matrix: np.ndarray, size: int) -> np.ndarray:
    return matrix.reshape(-1)[:size].copy()


class SparseLayer:
    __slots__ = ("layer_id", "indices", "values")

    def __init__(self, layer_id: int, indices, values):
        self.layer_id = int(layer_id)
        self.indices = np.asarray(indices, dtype=np.int64)
        self.values = np.asarray(values, dtype=np.float64)
        if self.indices.shape != self.values.shape or self.indices.ndim != 1:
            raise CorruptMessageError(f"layer {layer_id}: indices and values differ in shape")

    @property
    def nnz(self) -> int:
        return int(self.indices.shape[0])


class SparseMessage:
    """Per-layer (index, value) pairs of a top-k sparsified gradient."""

    __slots__ = ("layers", "payload_bits")

    def __init__(self, layers, payload_bits: int = 16):
        if payload_bits not in PAYLOAD_BYTES:
            raise InvalidParameterError(f"payload width must be 16, 32 or 64, got {payload_bits}")
        self.layers = tuple(layers)
        self.payload_bits = payload_bits

    @property
    def nnz(self) -> int:
        return sum(layer.nnz for layer in self.layers)

    def __repr__(self) -> str:
        return f"SparseMessage(layers={len(self.layers)}, nnz={self.nnz})"


class LowRankLayer:
    __slots__ = ("layer_id", "shape", "p", "q")

    def __init__(self, layer_id: int, shape: Tuple[int, int], p, q):
        self.layer_id = int(layer_id)
        self.shape = (int(shape[0]), int(shape[1]))
        self.p = np.asarray(p, dtype=np.float64)
        self.q = np.asarray(q, dtype=np.float64)
        if self.p.shape[0] != self.shape[0] or self.q.shape[0] != self.shape[1]:
            raise CorruptMessageError(f"layer {layer_id}: factor shapes do not match {shape}")
        if self.p.shape[1] != self.q.shape[1] or self.p.shape[1] < 1:
            raise CorruptMessageError(f"layer {layer_id}: factors disagree on rank")

    @property
    def rank(self) -> int:
        return int(self.p.shape[1])


class LowRankMessage:
    """Per-layer low-rank factors P, Q with M ~ P Q^T."""

    __slots__ = ("layers",)

    def __init__(self, layers):
        self.layers = tuple(layers)

    def __repr__(self) -> str:
        ranks = [layer.rank for layer in self.layers]
        return f"LowRankMessage(layers={len(self.layers)}, ranks={ranks})"


Message = Union[SparseMessage, LowRankMessage]


def _layer_spec(layout: Layout, layer_id: int):
    if not 0 <= layer_id < len(layout):
        raise CorruptMessageError(f"layer id {layer_id} outside a layout of {len(layout)} layers")
    return layout.layers[layer_id]


def decompress(msg: Message, layout: Layout) -> GradientVector:
    """Rebuild a dense gradient; missing coordinates are read as zeros."""
    out = np.zeros(layout.size)
    if isinstance(msg, SparseMessage):
        for layer in msg.layers:
            spec = _layer_spec(layout, layer.layer_id)
            if layer.nnz and (layer.indices.min() < 0 or layer.indices.max() >= spec.size):
                raise CorruptMessageError(
                    f"index out of range for layer {spec.name!r} of size {spec.size}"
                )
            out[spec.offset + layer.indices] = layer.values
    elif isinstance(msg, LowRankMessage):
        for layer in msg.layers:
            spec = _layer_spec(layout, layer.layer_id)
            if layer.shape != matrix_shape(spec.size):
                raise CorruptMessageError(
                    f"shape {layer.shape} does not matricize layer {spec.name!r}"
                )
            out[spec.offset:spec.stop] = dematricize(layer.p @ layer.q.T, spec.size)
    else:
        raise CorruptMessageError(f"unknown message type {type(msg).__name__}")
    if not np.all(np.isfinite(out)):
        raise CorruptMessageError("message decodes to non-finite values")
    return GradientVector(out, layout)


def coo_bytes(msg: Message) -> int:
    """Bytes needed to send the message in COO / dense-factor form."""
    if isinstance(msg, SparseMessage):
        entry = INDEX_BYTES + PAYLOAD_BYTES[msg.payload_bits]
        return sum(layer.nnz * entry + HEADER_BYTES for layer in msg.layers)
    return sum(
        (layer.shape[0] + layer.shape[1]) * layer.rank * FACTOR_BYTES + HEADER_BYTES
        for layer in msg.layers
    )


def _value_dtype(payload_bits: int) -> str:
    return {16: "<u2", 32: "<f4", 64: "<f8"}[payload_bits]


def _encode_values(values: np.ndarray, payload_bits: int) -> np.ndarray:
    if payload_bits == 16:
        # bfloat16: the upper half of the float32 pattern
        return (values.astype(np.float32).view(np.uint32) >> 16).astype("<u2")
    return values.astype(_value_dtype(payload_bits))


def _decode_values(raw: np.ndarray, payload_bits: int) -> np.ndarray:
    if payload_bits == 16:
        return (raw.astype(np.uint32) << 16).view(np.float32).astype(np.float64)
    return raw.astype(np.float64)


def encode_message(msg: Message) -> bytes:
    """Serialize a message; ``len(encode_message(m)) == coo_bytes(m)``."""
    chunks = []
    if isinstance(msg, SparseMessage):
        entry = np.dtype([("index", "<u4"), ("value", _value_dtype(msg.payload_bits))])
        for layer in msg.layers:
            chunks.append(np.array([layer.layer_id, layer.nnz], dtype="<u4").tobytes())
            records = np.empty(layer.nnz, dtype=entry)
            records["index"] = layer.indices
            records["value"] = _encode_values(layer.values, msg.payload_bits)
            chunks.append(records.tobytes())
    else:
        for layer in msg.layers:
            chunks.append(np.array([layer.layer_id, layer.rank], dtype="<u4").tobytes())
            chunks.append(layer.p.astype("<f4").tobytes())
            chunks.append(layer.q.astype("<f4").tobytes())
    return b"".join(chunks)


def decode_message(data: bytes, layout: Layout, kind: str, payload_bits: int = 16) -> Message:
    """Parse bytes produced by encode_message back into a message."""
    if kind not in ("sparse", "lowrank"):
        raise InvalidParameterError(f"unknown message kind {kind!r}")
    offset = 0
    layers = []

    def take(count: int, dtype) -> np.ndarray:
        nonlocal offset
        dtype = np.dtype(dtype)
        end = offset + count * dtype.itemsize
        if end > len(data):
            raise CorruptMessageError("message truncated")
        chunk = np.frombuffer(data[offset:end], dtype=dtype)
        offset = end
        return chunk

    while offset < len(data):
        layer_id, count = (int(x) for x in take(2, "<u4"))
        spec = _layer_spec(layout, layer_id)
        if kind == "sparse":
            entry = np.dtype([("index", "<u4"), ("value", _value_dtype(payload_bits))])
            records = take(count, entry)
            layers.append(
                SparseLayer(
                    layer_id, records["index"], _decode_values(records["value"], payload_bits)
                )
            )
        else:
            n1, n2 = matrix_shape(spec.size)
            p = take(n1 * count, "<f4").reshape(n1, count)
            q = take(n2 * count, "<f4").reshape(n2, count)
            layers.append(LowRankLayer(layer_id, (n1, n2), p, q))

    if kind == "sparse":
        return SparseMessage(layers, payload_bits)
    return LowRankMessage(layers)
