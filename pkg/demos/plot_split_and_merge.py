"""
Block splitting and offset-named parts
======================================

A 1 TiB file of real float32 samples cut into 512 MiB blocks, then a small
real file pushed through read -> write -> merge with no transform.
"""

import tempfile
from pathlib import Path

import numpy as np

from blockfft import block_io

# pure arithmetic: no file needed
m = block_io.split_plan(2**40, 2**29, 1024, "real-f32")
print("blocks:", m.block_count, "records:", m.total_records)
print("last block:", m.blocks[-1])
print("part name of block 1:", m.blocks[1].part_name)

# a file that is not a whole number of records: 1250 samples, 1024 per record
work = Path(tempfile.mkdtemp())
src = work / "tail.bin"
src.write_bytes(np.arange(1250, dtype="<f4").tobytes())
m = block_io.build_manifest(src, 8192, 1024, "real-f32")
d = m.blocks[0]
print(d.record_count, "records,", d.pad_samples, "zero samples appended")

parts = work / "parts"
parts.mkdir()
buf = block_io.read_block(src, d, m.sample_format, m.fft_size)
block_io.write_part(parts, d, buf)
print(sorted(p.name for p in parts.iterdir()))

merged = block_io.merge_parts(parts, m, work / "merged.bin")
print("merged bytes:", merged.stat().st_size, "= records x 1024 x 8")
