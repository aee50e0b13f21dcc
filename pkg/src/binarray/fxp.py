"""Fixed-point formats and the rounding/saturation arithmetic of the datapath.

Activations travel as 8-bit signed values (``DW``).  The multiply-add cascade
that scales binary partial sums keeps 28-bit signed precision (``MULW``) and
saturates instead of wrapping.  A final requantize step narrows accumulator
values back to 8 bits using a per-layer barrel shift with round-to-nearest.

Rounding mode everywhere is round-to-nearest with ties away from zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

DW = 8       # activation word width
MULW = 28    # accumulator word width in the multiply-add cascade


class ConfigError(ValueError):
    """Inconsistent hardware or layer configuration."""


@dataclass(frozen=True)
class QFormat:
    """Signed two's-complement fixed-point format.

    ``frac_bits`` places the binary point and may be negative for values
    scaled by powers of two above one.
    """

    total_bits: int
    frac_bits: int = 0

    def __post_init__(self):
        if not 1 <= self.total_bits <= 64:
            raise ConfigError(f"total_bits must be within [1, 64], got {self.total_bits}")

    @property
    def raw_min(self) -> int:
        return -(1 << (self.total_bits - 1))

    @property
    def raw_max(self) -> int:
        return (1 << (self.total_bits - 1)) - 1

    def contains(self, raw: int) -> bool:
        return self.raw_min <= raw <= self.raw_max

    def to_json(self) -> dict:
        return {"bits": self.total_bits, "frac": self.frac_bits}

    @classmethod
    def from_json(cls, obj: dict) -> "QFormat":
        return cls(int(obj["bits"]), int(obj["frac"]))


ACT8 = QFormat(DW, 7)
ACC28 = QFormat(MULW, 0)


@dataclass(frozen=True)
class FxValue:
    """A raw integer tagged with its fixed-point format."""

    raw: int
    fmt: QFormat

    def __post_init__(self):
        if not self.fmt.contains(self.raw):
            raise ConfigError(f"raw value {self.raw} outside {self.fmt.total_bits}-bit range")

    def to_float(self) -> float:
        return self.raw * 2.0 ** (-self.fmt.frac_bits)


@dataclass
class FxFlags:
    """Sticky diagnostic flags accumulated over a run (accumulator overflow)."""

    overflow: bool = False
    overflow_count: int = 0

    def note_overflow(self, n: int = 1) -> None:
        if n:
            self.overflow = True
            self.overflow_count += int(n)


def round_half_away(x: float) -> int:
    """Round to nearest integer, ties away from zero."""
    if x >= 0.0:
        return int(math.floor(x + 0.5))
    return int(math.ceil(x - 0.5))


def saturate(raw: int, fmt: QFormat) -> int:
    if raw > fmt.raw_max:
        return fmt.raw_max
    if raw < fmt.raw_min:
        return fmt.raw_min
    return raw


def quantize(x: float, fmt: QFormat) -> FxValue:
    """Quantize a real value: scale by 2**frac_bits, round, saturate.

    Total function: any finite input maps to an in-range FxValue.
    """
    if not math.isfinite(x):
        raise ValueError(f"cannot quantize non-finite value {x!r}")
    v = x * 2.0 ** fmt.frac_bits
    if v >= fmt.raw_max:
        raw = fmt.raw_max
    elif v <= fmt.raw_min:
        raw = fmt.raw_min
    else:
        raw = saturate(round_half_away(v), fmt)
    return FxValue(raw, fmt)


def dequantize(v: FxValue) -> float:
    return v.to_float()


def shift_round(raw: int, shift: int) -> int:
    """Arithmetic right shift with round-to-nearest on the discarded bits."""
    if shift == 0:
        return raw
    half = 1 << (shift - 1)
    if raw >= 0:
        return (raw + half) >> shift
    return -((-raw + half) >> shift)


def requantize(acc: FxValue, out_fmt: QFormat, shift: int) -> FxValue:
    """Narrow an accumulator value: shift right with rounding, then saturate."""
    if not 0 <= shift < acc.fmt.total_bits:
        raise ConfigError(f"shift {shift} outside [0, {acc.fmt.total_bits - 1}]")
    return FxValue(saturate(shift_round(acc.raw, shift), out_fmt), out_fmt)


def fx_mul_add(p: FxValue, alpha: FxValue, o_prev: FxValue, flags: FxFlags | None = None) -> FxValue:
    """One multiply-add step of the scaling cascade: p*alpha + o_prev.

    The product and sum are exact; the result saturates at MULW bits and
    saturation is recorded in ``flags`` when given.
    """
    exact = p.raw * alpha.raw + o_prev.raw
    raw = saturate(exact, ACC28)
    if raw != exact and flags is not None:
        flags.note_overflow()
    return FxValue(raw, ACC28)


# Array variants used by the simulator's inner loops.  Semantics match the
# scalar functions above bit for bit; inputs are int64 arrays.

def saturate_array(a: np.ndarray, fmt: QFormat, flags: FxFlags | None = None) -> np.ndarray:
    clipped = np.clip(a, fmt.raw_min, fmt.raw_max)
    if flags is not None:
        flags.note_overflow(int(np.count_nonzero(clipped != a)))
    return clipped


def mul_add_sat_array(p: np.ndarray, alpha: np.ndarray, o_prev: np.ndarray,
                      flags: FxFlags | None = None) -> np.ndarray:
    return saturate_array(p.astype(np.int64) * alpha + o_prev, ACC28, flags)


def shift_round_array(a: np.ndarray, shift: int) -> np.ndarray:
    if shift == 0:
        return a.copy()
    half = 1 << (shift - 1)
    mags = (np.abs(a) + half) >> shift
    return np.where(a < 0, -mags, mags)


def requantize_array(acc: np.ndarray, shift: int, out_fmt: QFormat = ACT8) -> np.ndarray:
    if not 0 <= shift < MULW:
        raise ConfigError(f"shift {shift} outside [0, {MULW - 1}]")
    return np.clip(shift_round_array(acc, shift), out_fmt.raw_min, out_fmt.raw_max)


def quantize_array(arr, fmt: QFormat = ACT8) -> np.ndarray:
    """Vector form of ``quantize``; integer inputs pass through as raw values."""
    a = np.asarray(arr)
    if np.issubdtype(a.dtype, np.integer):
        raw = a.astype(np.int64)
        if raw.size and (raw.min() < fmt.raw_min or raw.max() > fmt.raw_max):
            raise ValueError(f"integer data exceeds the {fmt.total_bits}-bit range")
        return raw
    v = a.astype(np.float64) * 2.0 ** fmt.frac_bits
    if not np.all(np.isfinite(v)):
        raise ValueError("cannot quantize non-finite values")
    rounded = np.where(v >= 0, np.floor(v + 0.5), np.ceil(v - 0.5))
    return np.clip(rounded, fmt.raw_min, fmt.raw_max).astype(np.int64)
