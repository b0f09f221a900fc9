"""
Coordinator and two workers on loopback
=======================================

The coordinator hands out blocks over TCP; workers read the shared input
file and write parts into a shared directory.  The result matches a local
single-threaded run byte for byte.
"""

import tempfile
import threading
from pathlib import Path

from blockfft import Coordinator, JobConfig, block_io, run_local, worker_run
from blockfft.signals import generate

work = Path(tempfile.mkdtemp())
src = generate(work / "in.bin", 32 * 8192, "complex-f32", "random:1", 1024)
manifest = block_io.build_manifest(src, 65536, 1024, "complex-f32")

out = work / "dist"
out.mkdir()
coord = Coordinator(manifest, "fft-forward", ("127.0.0.1", 0), out)
addr = coord.start()
print("listening on", addr)

workers = [
    threading.Thread(target=worker_run, args=(addr, src, out), kwargs={"cores": 2, "worker_id": f"w{i}"})
    for i in range(2)
]
for w in workers:
    w.start()
dist = coord.wait()
for w in workers:
    w.join()

local = run_local(JobConfig(manifest, work / "local"))
print("distributed checksum %#018x" % dist.output_checksum)
print("local checksum       %#018x" % local.output_checksum)
