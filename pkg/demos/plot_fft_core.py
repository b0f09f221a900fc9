"""
Batched radix-2 FFT against the naive DFT
=========================================

Build one plan, run it over a batch of segments, and compare every segment
with the O(n^2) definition.
"""

import numpy as np

from blockfft import dft_oracle, fft_execute, plan_create

rng = np.random.default_rng(0)
n, batch = 1024, 8
x = (rng.uniform(-1, 1, (batch, n)) + 1j * rng.uniform(-1, 1, (batch, n))).astype(np.complex64)

# one plan covers the whole batch; tables are computed once
plan = plan_create(n, batch, "forward")
print(plan)
X = fft_execute(plan, x)

ref = dft_oracle(x)
err = np.linalg.norm(X - ref, axis=1) / np.linalg.norm(ref, axis=1)
print("worst relative L2 error vs oracle:", err.max())

# inverse is scaled by 1/n, so the round trip returns the input
back = fft_execute(plan_create(n, batch, "inverse"), X)
print("round trip error:", np.linalg.norm(back - x) / np.linalg.norm(x))

# Parseval: time-domain energy equals spectrum energy / n
print("energy (time, freq/n):", np.sum(np.abs(x) ** 2), np.sum(np.abs(X) ** 2) / n)
