"""
Local map-only pipeline with phase timings
==========================================

Generate a sine per record, run forward FFTs on four worker threads, merge,
and look at where the time went.
"""

import json
import tempfile
from pathlib import Path

import numpy as np

from blockfft import JobConfig, block_io, report_fractions, run_local
from blockfft.signals import generate

work = Path(tempfile.mkdtemp())
n = 1024
src = generate(work / "sine.bin", 4096 * n, "real-f32", "sine:3", n)
manifest = block_io.build_manifest(src, 1 << 20, n, "real-f32")
print(manifest.block_count, "blocks of", manifest.blocks[0].record_count, "records")

result = run_local(JobConfig(manifest, work / "parts", worker_count=4, kernel="fft-forward"))
merged = block_io.merge_parts(work / "parts", manifest, work / "spectrum.bin")

spectra = np.frombuffer(merged.read_bytes(), "<c8").reshape(-1, n)
mag = np.abs(spectra[0])
print("peak bins:", np.argsort(mag)[-2:], "magnitudes:", mag[[3, n - 3]])

print(report_fractions(result))
print(json.dumps(result.timings.to_dict()["distribution_ns"], indent=1))
