"""Numeric tensors, precision conversion and affine int8 quantization.

Real values are approximated as ``scale * (q - zero_point)`` with a signed
8-bit ``q``.  All rounding is round-half-to-even (``np.rint``).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .errors import InvalidRangeError

QMIN = -128
QMAX = 127
HALF_MAX = 65504.0


class NumericKind(enum.Enum):
    SINGLE = "single"
    HALF = "half"
    INT8 = "int8"
    INT32 = "int32"

    @property
    def dtype(self) -> np.dtype:
        return _DTYPES[self]

    @classmethod
    def from_dtype(cls, dtype) -> "NumericKind":
        dtype = np.dtype(dtype)
        for kind, dt in _DTYPES.items():
            if dt == dtype:
                return kind
        raise TypeError(f"no NumericKind for dtype {dtype}")


_DTYPES = {
    NumericKind.SINGLE: np.dtype(np.float32),
    NumericKind.HALF: np.dtype(np.float16),
    NumericKind.INT8: np.dtype(np.int8),
    NumericKind.INT32: np.dtype(np.int32),
}


@dataclass(frozen=True)
class QuantParams:
    scale: float
    zero_point: int = 0

    def __post_init__(self):
        scale = float(np.float32(self.scale))
        if not (scale > 0.0 and math.isfinite(scale)):
            raise ValueError(f"scale must be positive and finite, got {self.scale}")
        if not QMIN <= int(self.zero_point) <= QMAX:
            raise ValueError(f"zero_point {self.zero_point} outside [{QMIN}, {QMAX}]")
        object.__setattr__(self, "scale", scale)
        object.__setattr__(self, "zero_point", int(self.zero_point))

    @property
    def clip_min(self) -> float:
        """Smallest representable real value."""
        return self.scale * (QMIN - self.zero_point)

    @property
    def clip_max(self) -> float:
        return self.scale * (QMAX - self.zero_point)


@dataclass(frozen=True, eq=False)
class Tensor:
    """Immutable N-D array (at most rank 4, NHWC order) with a numeric kind."""

    data: np.ndarray
    qparams: Optional[QuantParams] = None
    kind: NumericKind = field(init=False)

    def __post_init__(self):
        data = np.array(self.data, copy=True)
        if data.ndim > 4:
            raise ValueError(f"tensor rank {data.ndim} exceeds 4")
        kind = NumericKind.from_dtype(data.dtype)
        if (kind is NumericKind.INT8) != (self.qparams is not None):
            raise ValueError("qparams must be present exactly for int8 tensors")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "kind", kind)

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def widen(self) -> np.ndarray:
        """binary32 view of the values (int8 tensors are dequantized)."""
        if self.kind is NumericKind.INT8:
            return dequantize_values(self.data, self.qparams)
        return self.data.astype(np.float32)

    def __eq__(self, other):
        if not isinstance(other, Tensor):
            return NotImplemented
        return (
            self.kind is other.kind
            and self.qparams == other.qparams
            and self.shape == other.shape
            and self.data.tobytes() == other.data.tobytes()
        )

    __hash__ = None


ArrayLike = Union[Tensor, np.ndarray, float, list]


def _values(t: ArrayLike) -> np.ndarray:
    if isinstance(t, Tensor):
        return t.widen()
    return np.asarray(t, dtype=np.float32)


def compute_quant_params(min_val: float, max_val: float, symmetric: bool = False) -> QuantParams:
    """Derive int8 parameters covering ``[min_val, max_val]``.

    The range is always widened to contain 0 so that real zero maps to an
    exact integer.  A zero-width range gets ``scale=1, zero_point=0``.
    """
    if not (math.isfinite(min_val) and math.isfinite(max_val)):
        raise InvalidRangeError(f"non-finite range [{min_val}, {max_val}]")
    if min_val > max_val:
        raise InvalidRangeError(f"min {min_val} > max {max_val}")
    lo = min(float(min_val), 0.0)
    hi = max(float(max_val), 0.0)
    if symmetric:
        bound = max(abs(lo), abs(hi))
        if bound == 0.0:
            return QuantParams(1.0, 0)
        return QuantParams(max(np.float32(bound / QMAX), np.finfo(np.float32).tiny), 0)
    if hi == lo:
        return QuantParams(1.0, 0)
    scale = np.float32((hi - lo) / (QMAX - QMIN))
    if scale == 0.0:
        # range narrower than the smallest float32 step
        scale = np.float32(np.finfo(np.float32).tiny)
    # lo / ((hi - lo) / 255) rearranged so an exact half (e.g. -1..1) stays exact
    zp = np.rint(QMIN - lo * (QMAX - QMIN) / (hi - lo))
    zp = int(np.clip(zp, QMIN, QMAX))
    return QuantParams(scale, zp)


def quantize_values(x: np.ndarray, qp: QuantParams) -> np.ndarray:
    """Array-level quantization, returns int8."""
    x = np.asarray(x, dtype=np.float32).astype(np.float64)
    q = np.rint(x / qp.scale) + qp.zero_point
    return np.clip(q, QMIN, QMAX).astype(np.int8)


def dequantize_values(q: np.ndarray, qp: QuantParams) -> np.ndarray:
    q = np.asarray(q).astype(np.float64)
    return (qp.scale * (q - qp.zero_point)).astype(np.float32)


def quantize(t: ArrayLike, qp: QuantParams) -> Tensor:
    """Saturating int8 quantization; the result carries ``qp``."""
    return Tensor(quantize_values(_values(t), qp), qparams=qp)


def dequantize(t: Tensor, qp: Optional[QuantParams] = None) -> Tensor:
    if not isinstance(t, Tensor) or t.kind is not NumericKind.INT8:
        raise ValueError("dequantize expects an int8 Tensor")
    qp = qp if qp is not None else t.qparams
    if qp is None:
        raise ValueError("int8 tensor has no quantization parameters")
    return Tensor(dequantize_values(t.data, qp))


def half_values(x: np.ndarray) -> np.ndarray:
    """Round to binary16, saturating at +-65504 instead of overflowing."""
    x = np.asarray(x, dtype=np.float32)
    return np.clip(x, -HALF_MAX, HALF_MAX).astype(np.float16)


def to_half(t: ArrayLike) -> Tensor:
    return Tensor(half_values(_values(t)))
