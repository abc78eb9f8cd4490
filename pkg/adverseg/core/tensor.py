"""Dense tensor primitives.

Tensors are plain row-major ``numpy.ndarray`` values. Every function here
returns a fresh array and never mutates its inputs; shape mismatches are
errors, only scalar-tensor broadcasting is accepted.
"""

import math
from typing import Iterable, Literal, Optional, Sequence, Union

import numpy as np
from numpy.typing import NDArray

from adverseg.core.rng import Rng
from adverseg.errors import AxisError, InvalidShapeError, ShapeError

Tensor = NDArray[np.floating]

# 32-bit for training and storage, 64-bit for gradient checks.
DEFAULT_DTYPE = np.float32
CHECK_DTYPE = np.float64

ElementwiseOp = Literal["add", "sub", "mul", "max"]
ReduceOp = Literal["sum", "mean"]

_ELEMENTWISE = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
    "max": np.maximum,
}


def validate_shape(shape: Sequence[int]) -> tuple[int, ...]:
    """Return ``shape`` as a tuple, rejecting empty shapes and zero dims."""
    dims = tuple(int(d) for d in shape)
    if not dims:
        raise InvalidShapeError("shape must have at least one dimension")
    if any(d < 1 for d in dims):
        raise InvalidShapeError(f"all dimensions must be >= 1, got {dims}")
    return dims


def strides_for(shape: Sequence[int]) -> tuple[int, ...]:
    """Row-major element strides for ``shape``."""
    strides = []
    acc = 1
    for dim in reversed(shape):
        strides.append(acc)
        acc *= dim
    return tuple(reversed(strides))


def flat_index(index: Sequence[int], shape: Sequence[int]) -> int:
    """Flat offset of a multi-index in a row-major tensor."""
    if len(index) != len(shape):
        raise ShapeError(f"index rank {len(index)} does not match shape rank {len(shape)}")
    for i, dim in zip(index, shape):
        if not 0 <= i < dim:
            raise ShapeError(f"index {tuple(index)} out of bounds for shape {tuple(shape)}")
    return sum(i * s for i, s in zip(index, strides_for(shape)))


def tensor_new(shape: Sequence[int], fill: float = 0.0, dtype=DEFAULT_DTYPE) -> Tensor:
    """Tensor of ``shape`` with every element equal to ``fill``."""
    return np.full(validate_shape(shape), fill, dtype=dtype)


def _check_same_shape(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{what}: shape mismatch {a.shape} vs {b.shape}")


def elementwise(a: Tensor, b: Union[Tensor, float], op: ElementwiseOp) -> Tensor:
    """Pointwise ``add``/``sub``/``mul``/``max``; ``b`` may be a scalar."""
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op '{op}'") from None
    if isinstance(b, np.ndarray) and b.ndim > 0:
        _check_same_shape(a, b, op)
    return np.asarray(fn(a, b), dtype=a.dtype)


def _normalize_axes(axes: Optional[Iterable[int]], ndim: int) -> Optional[tuple[int, ...]]:
    if axes is None:
        return None
    out = []
    for axis in axes:
        if not -ndim <= axis < ndim:
            raise AxisError(f"axis {axis} is out of range for rank {ndim}")
        axis = axis % ndim
        if axis in out:
            raise AxisError(f"axis {axis} repeated")
        out.append(axis)
    return tuple(sorted(out))


def reduce(a: Tensor, op: ReduceOp = "sum", axes: Optional[Iterable[int]] = None) -> Tensor:
    """Sum or mean over ``axes`` (all axes when omitted)."""
    norm = _normalize_axes(axes, a.ndim)
    if op == "sum":
        return np.asarray(np.sum(a, axis=norm), dtype=a.dtype)
    if op == "mean":
        count = a.size if norm is None else math.prod(a.shape[i] for i in norm)
        return np.asarray(np.sum(a, axis=norm) / count, dtype=a.dtype)
    raise ValueError(f"unknown reduction '{op}'")


def pad2d(a: Tensor, pad: int) -> Tensor:
    """Zero-pad the two trailing spatial axes of an ``[N, C, H, W]`` tensor."""
    if a.ndim != 4:
        raise ShapeError(f"pad2d expects [N, C, H, W], got shape {a.shape}")
    if pad < 0:
        raise ShapeError(f"padding must be >= 0, got {pad}")
    if pad == 0:
        return a.copy()
    return np.pad(a, ((0, 0), (0, 0), (pad, pad), (pad, pad)), mode="constant")


def flip_spatial(a: np.ndarray, axis: Literal["horizontal", "vertical"]) -> np.ndarray:
    """Mirror the trailing spatial axes left-right or top-bottom."""
    if a.ndim < 2:
        raise ShapeError("flip_spatial needs two trailing spatial axes")
    if axis == "horizontal":
        return np.ascontiguousarray(np.flip(a, axis=-1))
    if axis == "vertical":
        return np.ascontiguousarray(np.flip(a, axis=-2))
    raise ValueError(f"unknown flip axis '{axis}'")


def rotate90(a: np.ndarray, quarter_turns: int) -> np.ndarray:
    """Rotate the trailing spatial axes counter-clockwise by 90 degree steps."""
    if a.ndim < 2:
        raise ShapeError("rotate90 needs two trailing spatial axes")
    if quarter_turns not in (0, 1, 2, 3):
        raise ValueError(f"quarter_turns must be in 0..3, got {quarter_turns}")
    return np.ascontiguousarray(np.rot90(a, k=quarter_turns, axes=(-2, -1)))


def rand_tensor(
    rng: Rng,
    shape: Sequence[int],
    dist: Literal["uniform", "normal"] = "uniform",
    a: float = 0.0,
    b: float = 1.0,
    dtype=DEFAULT_DTYPE,
) -> Tensor:
    """Random tensor; ``(a, b)`` are the bounds for uniform, ``(mean, std)`` for normal."""
    dims = validate_shape(shape)
    if dist == "uniform":
        values = rng.uniform(a, b, dims)
    elif dist == "normal":
        values = rng.normal(a, b, dims)
    else:
        raise ValueError(f"unknown distribution '{dist}'")
    return np.asarray(values, dtype=dtype)


def is_finite(a: np.ndarray) -> bool:
    return bool(np.all(np.isfinite(a)))
