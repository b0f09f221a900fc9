import json
import os
import time

import numpy as np
import pytest

from blockfft import block_io
from blockfft.block_io import build_manifest, merge_parts
from blockfft.errors import JobFailedError, ResourceError, ValidationError
from blockfft.fft_core import dft_oracle, plan_create
from blockfft.map_engine import (
    BlockTiming,
    JobConfig,
    Kernel,
    TimingBreakdown,
    process_block,
    report_fractions,
    run_local,
)

from conftest import make_input


def run_and_merge(manifest, tmp_path, name, **kw):
    out = tmp_path / name
    result = run_local(JobConfig(manifest, out, **kw))
    merged = merge_parts(out, manifest, tmp_path / f"{name}.bin")
    return result, merged


def test_identity_pipeline_bit_exact(small_job, tmp_path):
    src, m = small_job
    result, merged = run_and_merge(m, tmp_path, "id", kernel="identity", worker_count=2)
    assert result.succeeded
    assert merged.read_bytes() == src.read_bytes()
    assert result.output_checksum == block_io.file_crc64(merged)


def test_worker_count_and_order_do_not_change_output(small_job, tmp_path):
    _, m = small_job
    sums = set()
    for workers in (1, 2, 8):
        r, _ = run_and_merge(m, tmp_path, f"w{workers}", kernel="fft-forward", worker_count=workers)
        sums.add(r.output_checksum)
    out = tmp_path / "rev"
    r = run_local(JobConfig(m, out, worker_count=3, kernel="fft-forward"), order=[3, 2, 1, 0])
    sums.add(r.output_checksum)
    # repeated run in the same place
    r = run_local(JobConfig(m, out, worker_count=3, kernel="fft-forward"))
    sums.add(r.output_checksum)
    assert len(sums) == 1


def test_sixteen_mib_one_mib_blocks(tmp_path):
    src = make_input(tmp_path / "in.bin", 2 * 1024 * 1024)
    m = build_manifest(src, 1 << 20, 1024, "complex-f32")
    out = tmp_path / "parts"
    result = run_local(JobConfig(m, out, worker_count=4, kernel="identity"))
    parts = sorted(p for p in os.listdir(out) if block_io.PART_RE.match(p))
    assert len(parts) == 16
    assert all(b.record_count == 128 for b in m.blocks)
    assert len(result.timings.per_block) == 16
    assert sorted(t.block_index for t in result.timings.per_block) == list(range(16))
    assert all(os.path.exists(out / (p + ".done")) for p in parts)


def test_process_block_impulse_per_record(tmp_path):
    src = make_input(tmp_path / "imp.bin", 8 * 64, mode="real-f32", signal="impulse-per-record", fft_size=64)
    m = build_manifest(src, 8 * 64 * 4, 64, "real-f32")
    part, timing = process_block(src, m.blocks[0], m.sample_format, 64, "fft-forward", tmp_path)
    spectra = np.frombuffer(part.path.read_bytes(), "<c8").reshape(8, 64)
    np.testing.assert_array_equal(spectra, np.ones((8, 64)))


def test_process_block_identity_timing(small_job, tmp_path):
    src, m = small_job
    start = time.perf_counter_ns()
    part, timing = process_block(src, m.blocks[1], m.sample_format, m.fft_size, "identity", tmp_path)
    wall = time.perf_counter_ns() - start
    assert timing.compute_ns > 0 and timing.read_ns > 0 and timing.write_ns > 0
    assert timing.total_ns <= wall
    assert part.path.read_bytes() == src.read_bytes()[65536:131072]


def test_process_block_with_prebuilt_plan(small_job, tmp_path):
    src, m = small_job
    plan = plan_create(256, 1, "forward")
    part, _ = process_block(src, m.blocks[0], m.sample_format, 256, "fft-forward", tmp_path, plan=plan)
    raw = np.frombuffer(src.read_bytes()[:2048], "<c8")
    got = np.frombuffer(part.path.read_bytes(), "<c8")[:256]
    ref = dft_oracle(raw)
    assert np.linalg.norm(got - ref) / np.linalg.norm(ref) <= 1e-4


def test_failure_isolation(small_job, tmp_path):
    src, m = small_job
    with open(src, "r+b") as f:
        f.seek(2 * 65536 + 5)
        f.write(b"\x00\x01")
    out = tmp_path / "parts"
    with pytest.raises(JobFailedError, match=r"\[2\]") as info:
        run_local(JobConfig(m, out, worker_count=2, kernel="identity"))
    result = info.value.result
    assert not result.succeeded and result.failed_blocks == [2]
    assert "input mismatch" in result.block_statuses[2].reason
    for i in (0, 1, 3):
        name = m.blocks[i].part_name
        assert (out / name).exists() and (out / (name + ".done")).exists()
    assert not (out / m.blocks[2].part_name).exists()
    assert result.output_checksum is None
    with pytest.raises(block_io.MissingPartsError):
        merge_parts(out, m, tmp_path / "o.bin")


def test_memory_cap(small_job, tmp_path):
    _, m = small_job
    with pytest.raises(ResourceError):
        run_local(JobConfig(m, tmp_path, worker_count=4, memory_cap_bytes=65536 * 3))


def test_job_config_validation(small_job, tmp_path):
    _, m = small_job
    with pytest.raises(ValidationError):
        JobConfig(m, tmp_path, worker_count=0)
    with pytest.raises(ValueError):
        JobConfig(m, tmp_path, kernel="fft-sideways")
    with pytest.raises(ValidationError):
        run_local(JobConfig(m, tmp_path), order=[0, 0, 1, 2])


def test_timing_breakdown_consistency(small_job, tmp_path):
    _, m = small_job
    r = run_local(JobConfig(m, tmp_path / "p", worker_count=2))
    t = r.timings
    assert t.read_ns == sum(b.read_ns for b in t.per_block)
    assert t.compute_ns == sum(b.compute_ns for b in t.per_block)
    assert t.write_ns == sum(b.write_ns for b in t.per_block)
    assert 0 <= t.io_fraction <= 1
    d = r.to_dict()
    assert len(d["timings"]["per_block"]) == 4
    assert set(d["timings"]["distribution_ns"]) == {"read", "compute", "write"}
    fr = report_fractions(r)
    assert abs(fr["io_fraction"] + fr["compute_fraction"] - 1) <= 1e-9
    r.write_report(tmp_path / "r.json")
    assert json.loads((tmp_path / "r.json").read_text())["succeeded"] is True


def test_report_fractions_examples():
    t = TimingBreakdown([BlockTiming(0, 50, 25, 25)])
    assert report_fractions(t) == {"io_fraction": 0.75, "compute_fraction": 0.25}
    t = TimingBreakdown([BlockTiming(0, 10, 0, 5)])
    assert report_fractions(t)["io_fraction"] == 1.0
    with pytest.raises(ValidationError):
        report_fractions(TimingBreakdown([BlockTiming(0, 0, 0, 0)]))


def test_forward_then_inverse_roundtrip(small_job, tmp_path):
    src, m = small_job
    _, fwd = run_and_merge(m, tmp_path, "fwd", kernel="fft-forward", worker_count=2)
    m2 = build_manifest(fwd, m.block_size, m.fft_size, "complex-f32")
    _, back = run_and_merge(m2, tmp_path, "inv", kernel="fft-inverse", worker_count=2)
    x = np.frombuffer(src.read_bytes(), "<c8")
    y = np.frombuffer(back.read_bytes(), "<c8")
    assert np.linalg.norm(y - x) / np.linalg.norm(x) <= 1e-5
