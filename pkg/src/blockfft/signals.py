"""Deterministic synthetic input files."""

from pathlib import Path

import numpy as np

from .block_io import SampleFormat, encode_samples
from .errors import ValidationError

CHUNK_SAMPLES = 1 << 20


def parse_signal(spec: str):
    kind, _, arg = spec.partition(":")
    if kind in ("impulse", "constant", "impulse-per-record"):
        if arg:
            raise ValidationError(f"signal {kind!r} takes no argument")
        return kind, None
    if kind == "sine":
        if not arg.lstrip("-").isdigit():
            raise ValidationError(f"sine needs an integer bin, e.g. sine:3, got {spec!r}")
        return kind, int(arg)
    if kind == "random":
        if not arg.isdigit():
            raise ValidationError(f"random needs an integer seed, e.g. random:42, got {spec!r}")
        return kind, int(arg)
    raise ValidationError(f"unknown signal {spec!r}")


def generate_chunk(kind, arg, start: int, count: int, fmt: SampleFormat, fft_size: int, rng=None) -> np.ndarray:
    """Samples ``start .. start + count`` of the signal as complex64."""
    j = np.arange(start, start + count, dtype=np.int64)
    if kind == "impulse":
        x = (j == 0).astype(np.float32)
    elif kind == "impulse-per-record":
        x = (j % fft_size == 0).astype(np.float32)
    elif kind == "constant":
        x = np.ones(count, dtype=np.float32)
    elif kind == "sine":
        # phase index reduced mod fft_size keeps the argument small and exact
        x = np.cos(2.0 * np.pi * ((arg * (j % fft_size)) % fft_size) / fft_size).astype(np.float32)
    elif kind == "random":
        if fmt is SampleFormat.COMPLEX_F32:
            pair = rng.uniform(-1.0, 1.0, size=(count, 2)).astype(np.float32)
            return pair.view(np.complex64).reshape(-1)
        x = rng.uniform(-1.0, 1.0, size=count).astype(np.float32)
    else:
        raise ValidationError(f"unknown signal {kind!r}")
    return x.astype(np.complex64)


def generate(out_path, samples: int, mode="complex-f32", signal="random:0", fft_size: int = 1024) -> Path:
    """Write ``samples`` samples of a synthetic signal to ``out_path``.

    ``sine:k`` writes cos(2 pi k j / fft_size) with j the index inside each
    record, so a forward FFT of every record puts its energy in bins k and
    fft_size - k.  ``random:seed`` is uniform on [-1, 1) and depends only on
    the seed and sample count.
    """
    if samples < 1:
        raise ValidationError(f"samples must be >= 1, got {samples}")
    fmt = SampleFormat(mode)
    kind, arg = parse_signal(signal)
    rng = np.random.default_rng(arg) if kind == "random" else None
    out_path = Path(out_path)
    tmp = out_path.with_name(out_path.name + ".tmp")
    with open(tmp, "wb") as f:
        for start in range(0, samples, CHUNK_SAMPLES):
            count = min(CHUNK_SAMPLES, samples - start)
            f.write(encode_samples(generate_chunk(kind, arg, start, count, fmt, fft_size, rng), fmt))
    tmp.replace(out_path)
    return out_path
