"""Fixed-point arithmetic in the style of 16/32-bit integer MCU kernels.

Scalar value types (``QValue``, ``QAccumulator``) carry exact Python integers;
the ``*_array`` helpers are the vectorized equivalents the kernels use.
"""

import math
from typing import Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from app.core.errors import DomainError


class QFormat(BaseModel):
    model_config = ConfigDict(frozen=True)

    total_bits: int
    frac_bits: int

    @model_validator(mode="after")
    def _check_bits(self):
        if self.total_bits not in (16, 32):
            raise ValueError("total_bits must be 16 or 32")
        if not 0 <= self.frac_bits < self.total_bits:
            raise ValueError("frac_bits must lie in [0, total_bits)")
        return self

    @property
    def max_raw(self) -> int:
        return (1 << (self.total_bits - 1)) - 1

    @property
    def min_raw(self) -> int:
        return -(1 << (self.total_bits - 1))

    @property
    def scale(self) -> int:
        return 1 << self.frac_bits

    @property
    def ulp(self) -> float:
        return 1.0 / self.scale

    @property
    def acc_max(self) -> int:
        return (1 << (2 * self.total_bits - 1)) - 1

    @property
    def acc_min(self) -> int:
        return -(1 << (2 * self.total_bits - 1))

    def saturate(self, raw: int) -> Tuple[int, bool]:
        if raw > self.max_raw:
            return self.max_raw, True
        if raw < self.min_raw:
            return self.min_raw, True
        return raw, False

    def __str__(self) -> str:
        return f"Q({self.total_bits},{self.frac_bits})"


Q15 = QFormat(total_bits=16, frac_bits=15)
Q16_16 = QFormat(total_bits=32, frac_bits=16)
Q31 = QFormat(total_bits=32, frac_bits=31)


class QValue(BaseModel):
    model_config = ConfigDict(frozen=True)

    raw: int
    format: QFormat
    saturated: bool = False

    @model_validator(mode="after")
    def _check_range(self):
        if not self.format.min_raw <= self.raw <= self.format.max_raw:
            raise ValueError(f"raw value {self.raw} outside {self.format}")
        return self

    @property
    def real(self) -> float:
        return self.raw / self.format.scale


class QAccumulator(BaseModel):
    """Double-width accumulator; products are added unshifted."""

    model_config = ConfigDict(frozen=True)

    value: int = 0
    format: QFormat
    saturated: bool = False


def _same_format(a: QFormat, b: QFormat) -> None:
    if a != b:
        raise DomainError(f"format mismatch: {a} vs {b}")


def q_from_real(x: float, fmt: QFormat) -> QValue:
    """Round to nearest; out-of-range inputs clamp and set ``saturated``."""
    if not math.isfinite(x):
        raise DomainError(f"cannot convert non-finite value {x}")
    raw, sat = fmt.saturate(math.floor(x * fmt.scale + 0.5))
    return QValue(raw=raw, format=fmt, saturated=sat)


def q_to_real(v: QValue) -> float:
    return v.real


def q_mul(a: QValue, b: QValue) -> QValue:
    _same_format(a.format, b.format)
    # Python's >> on negative ints is an arithmetic shift, like the MCU's
    raw, sat = a.format.saturate((a.raw * b.raw) >> a.format.frac_bits)
    return QValue(raw=raw, format=a.format, saturated=sat)


def q_mac(acc: QAccumulator, a: QValue, b: QValue) -> QAccumulator:
    _same_format(a.format, b.format)
    _same_format(acc.format, a.format)
    value = acc.value + a.raw * b.raw
    saturated = acc.saturated
    if value > acc.format.acc_max:
        value, saturated = acc.format.acc_max, True
    elif value < acc.format.acc_min:
        value, saturated = acc.format.acc_min, True
    return QAccumulator(value=value, format=acc.format, saturated=saturated)


def q_finalize(acc: QAccumulator) -> QValue:
    raw, sat = acc.format.saturate(acc.value >> acc.format.frac_bits)
    return QValue(raw=raw, format=acc.format, saturated=sat or acc.saturated)


def q_dot(a: Sequence[QValue], b: Sequence[QValue], fmt: QFormat = Q15) -> QValue:
    """MAC loop over two vectors followed by one finalize; empty vectors give 0."""
    if len(a) != len(b):
        raise DomainError(f"length mismatch: {len(a)} vs {len(b)}")
    if a:
        fmt = a[0].format
    acc = QAccumulator(format=fmt)
    for x, y in zip(a, b):
        acc = q_mac(acc, x, y)
    return q_finalize(acc)


def to_fixed(x, fmt: QFormat) -> Tuple[np.ndarray, int]:
    """Vectorized q_from_real; returns (int64 raw array, number of saturated elements)."""
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise DomainError("cannot convert non-finite values")
    raw = np.floor(x * fmt.scale + 0.5)
    clipped = np.clip(raw, fmt.min_raw, fmt.max_raw)
    return clipped.astype(np.int64), int(np.count_nonzero(clipped != raw))


def from_fixed(raw, frac_bits: int) -> np.ndarray:
    return np.asarray(raw, dtype=np.float64) * 2.0 ** (-frac_bits)


def saturate_array(raw: np.ndarray, total_bits: int) -> Tuple[np.ndarray, int]:
    hi = (1 << (total_bits - 1)) - 1
    lo = -(1 << (total_bits - 1))
    clipped = np.clip(raw, lo, hi)
    return clipped.astype(np.int64), int(np.count_nonzero(clipped != raw))


def shift_round(acc: np.ndarray, shift: int) -> np.ndarray:
    """Arithmetic right shift with round-half-up; negative shifts move left."""
    acc = np.asarray(acc, dtype=np.int64)
    if shift > 0:
        return (acc + (1 << (shift - 1))) >> shift
    if shift < 0:
        return acc << (-shift)
    return acc


def finalize_array(acc: np.ndarray, fmt: QFormat) -> Tuple[np.ndarray, int]:
    """Vectorized q_finalize: truncating shift then saturation."""
    return saturate_array(np.asarray(acc, dtype=np.int64) >> fmt.frac_bits, fmt.total_bits)


def block_exponent(x: np.ndarray) -> int:
    """Power-of-two exponent e such that max|x| * 2**-e lies in [0.5, 1)."""
    peak = float(np.max(np.abs(x))) if np.size(x) else 0.0
    if peak == 0.0:
        return 0
    return int(np.frexp(peak)[1])
