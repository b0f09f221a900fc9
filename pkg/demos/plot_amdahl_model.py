"""
Amdahl speedup and cluster runtime estimates
============================================

Estimate the parallel fraction from a measured single-worker run, predict
the speedup for more workers, and scale a calibrated runtime to a cluster.
"""

import tempfile
from pathlib import Path

from blockfft import ClusterSpec, JobConfig, amdahl_speedup, block_io, estimate_p, predict_runtime, run_local
from blockfft.perf_model import calibrate_unit_cost
from blockfft.signals import generate

# the textbook curve for a job that is 75% parallel
for n in (1, 2, 4, 8, 16, 1000):
    print(f"N={n:5d}  S={amdahl_speedup(0.75, n):.4f}")

work = Path(tempfile.mkdtemp())
src = generate(work / "in.bin", 1 << 21, "complex-f32", "random:2", 4096)
manifest = block_io.build_manifest(src, 1 << 20, 4096, "complex-f32")
result = run_local(JobConfig(manifest, work / "parts"))
t = result.timings

p_single = estimate_p(t)  # disk I/O serial
p_cluster = estimate_p(t, {"read", "compute", "write"})  # every node does its own I/O
print("p (I/O serial) = %.3f -> S(4) = %.2f" % (p_single, amdahl_speedup(p_single, 4)))
print("p (I/O parallel) = %.3f -> S(4) = %.2f" % (p_cluster, amdahl_speedup(p_cluster, 4)))

unit = calibrate_unit_cost(t.compute_ns, manifest.total_samples)
one_tib = 2**40 // 8
for servers in (1, 8, 64):
    est = predict_runtime(one_tib, ClusterSpec(servers, 4, 0.8), unit)
    print(f"1 TiB complex, {servers:3d} servers x 4 cores: {est.predicted_ns / 1e9 / 3600:.2f} h of FFT compute")
