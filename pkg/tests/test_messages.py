import numpy as np
import pytest

from dpgrad_lab.compression import CompressorState, powersgd_compress, topk_sparsify
from dpgrad_lab.errors import CorruptMessageError
from dpgrad_lab.gradients import GradientVector, Layout
from dpgrad_lab.messages import (
    LowRankLayer,
    LowRankMessage,
    SparseLayer,
    SparseMessage,
    coo_bytes,
    decode_message,
    decompress,
    encode_message,
    matrix_shape,
)
from dpgrad_lab.rng import RngStream


def _make_layout() -> Layout:
    return Layout.from_sizes([("weight", 12), ("bias", 5)])


def _make_vector(seed: int = 0) -> GradientVector:
    values = np.random.default_rng(seed).standard_normal(17)
    return GradientVector(values, _make_layout())


def test_matrix_shape():
    assert matrix_shape(4) == (2, 2)
    assert matrix_shape(5) == (3, 2)
    assert matrix_shape(1) == (1, 1)
    assert matrix_shape(10) == (4, 3)


def test_empty_sparse_message_decompresses_to_zero():
    layout = Layout.single(6)
    msg = SparseMessage([SparseLayer(0, [], [])])
    assert not decompress(msg, layout).values.any()
    assert coo_bytes(msg) == 8


def test_decompress_rejects_out_of_range_index():
    layout = Layout.single(4)
    msg = SparseMessage([SparseLayer(0, [4], [1.0])])
    with pytest.raises(CorruptMessageError):
        decompress(msg, layout)
    with pytest.raises(CorruptMessageError):
        decompress(SparseMessage([SparseLayer(3, [0], [1.0])]), layout)


def test_decompress_rejects_wrong_low_rank_shape():
    layout = Layout.single(6)
    msg = LowRankMessage([LowRankLayer(0, (2, 3), np.ones((2, 1)), np.ones((3, 1)))])
    with pytest.raises(CorruptMessageError):
        decompress(msg, layout)


def test_coo_bytes_formulas():
    sparse = SparseMessage([SparseLayer(0, np.arange(10), np.ones(10))], payload_bits=16)
    assert coo_bytes(sparse) == 68
    low_rank = LowRankMessage([LowRankLayer(0, (3, 2), np.ones((3, 1)), np.ones((2, 1)))])
    assert coo_bytes(low_rank) == 28


def test_coo_bytes_grows_with_nnz():
    sizes = [
        coo_bytes(SparseMessage([SparseLayer(0, np.arange(n), np.ones(n))])) for n in range(0, 20)
    ]
    assert all(b > a for a, b in zip(sizes, sizes[1:]))


def test_sparse_wire_length_matches_coo_bytes():
    v = _make_vector()
    for bits in (16, 32, 64):
        msg, _ = topk_sparsify(v, 4.0, payload_bits=bits)
        assert len(encode_message(msg)) == coo_bytes(msg)


def test_sparse_wire_decode_restores_message():
    v = _make_vector(1)
    for bits in (16, 32, 64):
        msg, _ = topk_sparsify(v, 3.0, payload_bits=bits)
        decoded = decode_message(encode_message(msg), v.layout, "sparse", bits)
        assert decompress(decoded, v.layout) == decompress(msg, v.layout)


def test_sparse_wire_is_little_endian():
    msg = SparseMessage([SparseLayer(0, [1], [1.0])], payload_bits=32)
    data = encode_message(msg)
    assert data[:8] == b"\x00\x00\x00\x00\x01\x00\x00\x00"
    assert data[8:12] == b"\x01\x00\x00\x00"
    assert data[12:] == np.float32(1.0).tobytes()


def test_low_rank_wire_length_and_decode():
    v = _make_vector(2)
    state = CompressorState(v.layout)
    msg, _ = powersgd_compress(v, 2, state, RngStream(0))
    data = encode_message(msg)
    assert len(data) == coo_bytes(msg)
    decoded = decode_message(data, v.layout, "lowrank")
    assert [layer.rank for layer in decoded.layers] == [layer.rank for layer in msg.layers]
    assert np.allclose(
        decompress(decoded, v.layout).values, decompress(msg, v.layout).values, atol=1e-5
    )


def test_decode_rejects_truncated_bytes():
    msg, _ = topk_sparsify(_make_vector(), 2.0)
    data = encode_message(msg)
    with pytest.raises(CorruptMessageError):
        decode_message(data[:-1], _make_layout(), "sparse", 16)
