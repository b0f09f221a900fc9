"""Batched iterative radix-2 Cooley-Tukey FFT.

A plan holds the precomputed twiddle and bit-reversal tables for one
transform length.  ``fft_execute`` applies it to a contiguous buffer of
``batch_count`` segments, each ``fft_size`` complex64 samples long
(segment-major, interleaved re/im in memory).

Butterflies run on float32 real and imaginary planes with separate
multiply and add ufuncs, so every output element depends only on its own
segment and is bit-identical whatever the batch size.
"""

from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .errors import ShapeError, UnsupportedSizeError, ValidationError

Direction = Literal["forward", "inverse"]


def is_power_of_two(n) -> bool:
    return isinstance(n, (int, np.integer)) and n >= 1 and (n & (n - 1)) == 0


def bit_reversal_permutation(n: int) -> np.ndarray:
    """Index table mapping position i to i with its log2(n) bits reversed."""
    bits = n.bit_length() - 1
    idx = np.arange(n, dtype=np.int64)
    rev = np.zeros(n, dtype=np.int64)
    for _ in range(bits):
        rev = (rev << 1) | (idx & 1)
        idx >>= 1
    return rev


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class FftPlan:
    """Immutable description of one batched transform."""

    fft_size: int
    batch_count: int
    direction: Direction
    twiddle_table: np.ndarray = field(repr=False, compare=False)
    bitrev_table: np.ndarray = field(repr=False, compare=False)
    inverse_scale: bool = True

    @property
    def total_samples(self) -> int:
        return self.fft_size * self.batch_count

    @property
    def stages(self) -> int:
        return self.fft_size.bit_length() - 1

    def with_batch_count(self, batch_count: int) -> "FftPlan":
        """Same tables, different batch size (tables are shared, not copied)."""
        if not isinstance(batch_count, (int, np.integer)) or batch_count < 1:
            raise ValidationError(f"batch_count must be an integer >= 1, got {batch_count!r}")
        return FftPlan(
            self.fft_size,
            int(batch_count),
            self.direction,
            self.twiddle_table,
            self.bitrev_table,
            self.inverse_scale,
        )


def plan_create(
    fft_size: int,
    batch_count: int = 1,
    direction: Direction = "forward",
    inverse_scale: bool = True,
) -> FftPlan:
    """Build a plan for ``batch_count`` transforms of length ``fft_size``.

    Parameters
    ----------
    fft_size : int
        Samples per segment; a power of two >= 2.
    batch_count : int
        Number of segments transformed per call.
    direction : {"forward", "inverse"}
        Forward is unnormalized.  Inverse conjugates the twiddles and,
        unless ``inverse_scale`` is False, divides by ``fft_size``.
    """
    if not is_power_of_two(fft_size) or fft_size < 2:
        raise UnsupportedSizeError(fft_size)
    if not isinstance(batch_count, (int, np.integer)) or batch_count < 1:
        raise ValidationError(f"batch_count must be an integer >= 1, got {batch_count!r}")
    if direction not in ("forward", "inverse"):
        raise ValidationError(f"direction must be 'forward' or 'inverse', got {direction!r}")

    fft_size = int(fft_size)
    sign = -1.0 if direction == "forward" else 1.0
    k = np.arange(fft_size // 2, dtype=np.float64)
    twiddles = np.exp(sign * 2j * np.pi * k / fft_size)
    return FftPlan(
        fft_size=fft_size,
        batch_count=int(batch_count),
        direction=direction,
        twiddle_table=_readonly(twiddles),
        bitrev_table=_readonly(bit_reversal_permutation(fft_size)),
        inverse_scale=bool(inverse_scale),
    )


def fft_execute(plan: FftPlan, buffer) -> np.ndarray:
    """Transform every segment of ``buffer`` and return a new complex64 array.

    ``buffer`` may be flat (``batch_count * fft_size``) or shaped
    ``(batch_count, fft_size)``; the result has the same shape.  The input
    is not modified.
    """
    x = np.asarray(buffer)
    n = plan.fft_size
    expected = plan.batch_count * n
    if x.size != expected:
        raise ShapeError(expected, x.size)
    if x.ndim == 2 and x.shape != (plan.batch_count, n):
        raise ShapeError((plan.batch_count, n), x.shape)
    if x.ndim > 2:
        raise ShapeError(expected, x.shape)
    if not np.all(np.isfinite(x)):
        raise ValidationError("buffer contains non-finite samples")

    segs = x.reshape(plan.batch_count, n)
    permuted = segs[:, plan.bitrev_table]
    re = np.ascontiguousarray(permuted.real, dtype=np.float32)
    im = np.ascontiguousarray(permuted.imag, dtype=np.float32)
    # stage twiddles for span m are every (n/m)-th entry of the full table
    tw = plan.twiddle_table.astype(np.complex64)
    tw_re = tw.real.copy()
    tw_im = tw.imag.copy()

    half = 1
    while half < n:
        span = 2 * half
        step = n // span
        wr = tw_re[::step][:half]
        wi = tw_im[::step][:half]
        r = re.reshape(plan.batch_count, n // span, 2, half)
        i = im.reshape(plan.batch_count, n // span, 2, half)
        er, ei = r[:, :, 0, :], i[:, :, 0, :]
        orr, oi = r[:, :, 1, :], i[:, :, 1, :]
        tr = orr * wr - oi * wi
        ti = orr * wi + oi * wr
        # odd slot first: it reads the even slot before that slot is overwritten
        np.subtract(er, tr, out=orr)
        np.subtract(ei, ti, out=oi)
        np.add(er, tr, out=er)
        np.add(ei, ti, out=ei)
        half = span

    if plan.direction == "inverse" and plan.inverse_scale:
        scale = np.float32(1.0 / n)
        re *= scale
        im *= scale

    out = np.empty((plan.batch_count, n), dtype=np.complex64)
    out.real = re
    out.imag = im
    return out.reshape(x.shape)


def dft_oracle(segment) -> np.ndarray:
    """Naive O(n^2) DFT in double precision, valid for any length >= 1.

    Used only as an independent reference for ``fft_execute``.  A 2-D input
    is treated as one segment per row, sharing the DFT matrix.
    """
    x = np.asarray(segment, dtype=np.complex128)
    if x.ndim > 2:
        raise ValidationError("dft_oracle takes a segment or a 2-D batch of segments")
    n = x.shape[-1] if x.ndim else 0
    if n == 0:
        raise ValidationError("dft_oracle needs at least one sample")
    jk = np.outer(np.arange(n), np.arange(n)) % n
    w = np.exp(-2j * np.pi * jk / n)
    return x @ w.T


def relative_l2_error(actual, expected) -> float:
    actual = np.asarray(actual, dtype=np.complex128)
    expected = np.asarray(expected, dtype=np.complex128)
    denom = np.linalg.norm(expected)
    diff = np.linalg.norm(actual - expected)
    if denom == 0.0:
        return float(diff)
    return float(diff / denom)
