"""Layered gradient vectors and the geometric primitives built on them."""

import logging
from pathlib import Path
from typing import Iterable, Iterator, List, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .errors import InvalidInputError, InvalidParameterError, LayoutError

logger = logging.getLogger(__name__)


class LayerSpec(BaseModel):
    """A named contiguous slice of the flat parameter vector."""

    model_config = ConfigDict(frozen=True)

    name: str = Field(min_length=1)
    size: int = Field(ge=1)
    offset: int = Field(ge=0)

    @property
    def stop(self) -> int:
        return self.offset + self.size


class Layout(BaseModel):
    """Ordered, contiguous, non-overlapping partition of m coordinates."""

    model_config = ConfigDict(frozen=True)

    layers: Tuple[LayerSpec, ...]

    @model_validator(mode="after")
    def _check_contiguous(self) -> "Layout":
        if not self.layers:
            raise ValueError("layout needs at least one layer")
        expected = 0
        names = set()
        for layer in self.layers:
            if layer.offset != expected:
                raise ValueError(
                    f"layer {layer.name!r} starts at {layer.offset}, expected {expected}"
                )
            if layer.name in names:
                raise ValueError(f"duplicate layer name {layer.name!r}")
            names.add(layer.name)
            expected = layer.stop
        return self

    @classmethod
    def from_sizes(cls, sizes: Iterable[Tuple[str, int]]) -> "Layout":
        layers = []
        offset = 0
        for name, size in sizes:
            layers.append(LayerSpec(name=name, size=size, offset=offset))
            offset += size
        return cls(layers=tuple(layers))

    @classmethod
    def single(cls, size: int, name: str = "params") -> "Layout":
        return cls.from_sizes([(name, size)])

    @property
    def size(self) -> int:
        return self.layers[-1].stop

    def __len__(self) -> int:
        return len(self.layers)

    def index_of(self, name: str) -> int:
        for i, layer in enumerate(self.layers):
            if layer.name == name:
                return i
        raise KeyError(name)


def _as_finite_array(values, ndim: int) -> np.ndarray:
    array = np.array(values, dtype=np.float64)
    if array.ndim != ndim:
        raise InvalidInputError(f"expected a {ndim}-D array, got shape {array.shape}")
    if not np.all(np.isfinite(array)):
        raise InvalidInputError("gradient values must be finite")
    array.flags.writeable = False
    return array


class GradientVector:
    """Immutable flat coordinate array partitioned into named layers."""

    __slots__ = ("values", "layout")

    def __init__(self, values, layout: Layout):
        array = _as_finite_array(values, ndim=1)
        if array.shape[0] != layout.size:
            raise LayoutError(f"{array.shape[0]} values for a layout of size {layout.size}")
        self.values = array
        self.layout = layout

    @classmethod
    def zeros(cls, layout: Layout) -> "GradientVector":
        return cls(np.zeros(layout.size), layout)

    def layer(self, key: Union[int, str]) -> np.ndarray:
        index = self.layout.index_of(key) if isinstance(key, str) else key
        spec = self.layout.layers[index]
        return self.values[spec.offset:spec.stop]

    def layers(self) -> Iterator[Tuple[LayerSpec, np.ndarray]]:
        for spec in self.layout.layers:
            yield spec, self.values[spec.offset:spec.stop]

    def with_values(self, values) -> "GradientVector":
        return GradientVector(values, self.layout)

    def _check_layout(self, other: "GradientVector") -> None:
        if other.layout != self.layout:
            raise LayoutError("gradient layouts differ")

    def __add__(self, other: "GradientVector") -> "GradientVector":
        self._check_layout(other)
        return GradientVector(self.values + other.values, self.layout)

    def __sub__(self, other: "GradientVector") -> "GradientVector":
        self._check_layout(other)
        return GradientVector(self.values - other.values, self.layout)

    def __mul__(self, scalar: float) -> "GradientVector":
        return GradientVector(self.values * scalar, self.layout)

    __rmul__ = __mul__

    def __len__(self) -> int:
        return self.values.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, GradientVector):
            return NotImplemented
        return self.layout == other.layout and np.array_equal(self.values, other.values)

    def __repr__(self) -> str:
        return f"GradientVector(m={len(self)}, layers={len(self.layout)})"


class SampleBatchGradients:
    """B per-sample gradients sharing one layout, stored as a B x m matrix."""

    __slots__ = ("rows", "layout")

    def __init__(self, rows, layout: Layout):
        matrix = _as_finite_array(rows, ndim=2)
        if matrix.shape[0] < 1:
            raise InvalidInputError("a batch needs at least one row")
        if matrix.shape[1] != layout.size:
            raise LayoutError(f"rows of width {matrix.shape[1]} for a layout of size {layout.size}")
        self.rows = matrix
        self.layout = layout

    @classmethod
    def from_vectors(cls, vectors: Sequence[GradientVector]) -> "SampleBatchGradients":
        if not vectors:
            raise InvalidInputError("a batch needs at least one row")
        layout = vectors[0].layout
        for v in vectors[1:]:
            if v.layout != layout:
                raise LayoutError("all rows of a batch must share one layout")
        return cls(np.stack([v.values for v in vectors]), layout)

    def row(self, i: int) -> GradientVector:
        return GradientVector(self.rows[i], self.layout)

    def __iter__(self) -> Iterator[GradientVector]:
        for i in range(len(self)):
            yield self.row(i)

    def __len__(self) -> int:
        return self.rows.shape[0]

    def __repr__(self) -> str:
        return f"SampleBatchGradients(B={len(self)}, m={self.layout.size})"


def _norm(x: np.ndarray) -> float:
    # scaled by the largest magnitude so squaring neither overflows nor underflows
    peak = float(np.max(np.abs(x))) if x.size else 0.0
    if peak == 0.0 or not np.isfinite(peak):
        return peak
    y = x / peak
    return peak * float(np.sqrt(np.dot(y, y)))


def l2_norm(v: Union[GradientVector, np.ndarray]) -> float:
    """Euclidean norm of a gradient."""
    values = v.values if isinstance(v, GradientVector) else np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise InvalidInputError("cannot take the norm of a non-finite vector")
    return _norm(values)


def _check_radius(radius: float) -> None:
    if not (radius > 0 and np.isfinite(radius)):
        raise InvalidParameterError(f"clipping radius must be positive and finite, got {radius}")


def project_values(x: np.ndarray, radius: float) -> np.ndarray:
    """Project a raw coordinate array into the closed ball of the given radius.

    The result has norm <= radius exactly, so projecting twice is a no-op.
    """
    norm = _norm(x)
    if norm <= radius:
        return x
    scale = radius / norm
    out = x * scale
    while _norm(out) > radius:
        scale = np.nextafter(scale, 0.0)
        out = x * scale
    return out


def clip_rows(rows: np.ndarray, radius: float) -> np.ndarray:
    """Apply project_values to every row of a B x m matrix."""
    _check_radius(radius)
    return np.stack([project_values(row, radius) for row in rows])


def mean_rows(rows: np.ndarray) -> np.ndarray:
    return rows.mean(axis=0)


def sphere_project(v: GradientVector, radius: float) -> GradientVector:
    """Scale v onto the sphere of the given radius if it lies outside it."""
    _check_radius(radius)
    return GradientVector(project_values(v.values, radius), v.layout)


def mean_gradient(batch: SampleBatchGradients) -> GradientVector:
    """Coordinate-wise mean of the batch rows."""
    return GradientVector(mean_rows(batch.rows), batch.layout)


def write_gradient_dump(batch: SampleBatchGradients, path: Union[str, Path]) -> None:
    """Write a batch in the plain-text gradient dump format.

    Header ``m B layer_count``, one ``name size`` line per layer, then B rows of
    m reals at 17 significant digits.
    """
    lines: List[str] = [f"{batch.layout.size} {len(batch)} {len(batch.layout)}"]
    lines.extend(f"{layer.name} {layer.size}" for layer in batch.layout.layers)
    for row in batch.rows:
        lines.append(" ".join(f"{x:.17g}" for x in row))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    logger.info(f"Wrote gradient dump {path} (B={len(batch)}, m={batch.layout.size})")


def read_gradient_dump(path: Union[str, Path]) -> SampleBatchGradients:
    """Read a batch written by write_gradient_dump."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Gradient dump not found: {path}")
    lines = [line for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]
    try:
        m, batch_size, layer_count = (int(tok) for tok in lines[0].split())
        sizes = []
        for line in lines[1:1 + layer_count]:
            name, size = line.split()
            sizes.append((name, int(size)))
        rows = [
            [float(tok) for tok in line.split()]
            for line in lines[1 + layer_count:1 + layer_count + batch_size]
        ]
    except (IndexError, ValueError) as e:
        raise InvalidInputError(f"Malformed gradient dump {path}: {e}")

    layout = Layout.from_sizes(sizes)
    if layout.size != m or len(rows) != batch_size or any(len(r) != m for r in rows):
        raise InvalidInputError(f"Gradient dump {path} does not match its header")
    return SampleBatchGradients(np.array(rows), layout)
