"""Map-only block executor.

Blocks are handed to ``worker_count`` threads through a shared queue; each
worker reads a block, transforms it and writes its part.  There is no reduce
step: parts are merged afterwards by ``block_io.merge_parts``.  numpy releases
the GIL inside the butterfly ufuncs and file I/O, so threads give real
parallelism on a multi-core host.
"""

import enum
import functools
import json
import logging
import queue
import statistics
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

from . import block_io
from .block_io import BlockDescriptor, BlockManifest, SampleFormat
from .errors import BlockFFTError, JobFailedError, ResourceError, ValidationError
from .fft_core import FftPlan, fft_execute, plan_create

log = logging.getLogger(__name__)

DEFAULT_MEMORY_CAP = 4 * 1024**3


class Kernel(str, enum.Enum):
    FFT_FORWARD = "fft-forward"
    FFT_INVERSE = "fft-inverse"
    IDENTITY = "identity"

    @property
    def direction(self) -> Optional[str]:
        return {"fft-forward": "forward", "fft-inverse": "inverse"}.get(self.value)


@dataclass(frozen=True)
class BlockTiming:
    block_index: int
    read_ns: int
    compute_ns: int
    write_ns: int

    @property
    def total_ns(self) -> int:
        return self.read_ns + self.compute_ns + self.write_ns


def _distribution(values):
    if not values:
        return {"min": 0, "median": 0, "max": 0, "mean": 0.0}
    return {
        "min": min(values),
        "median": statistics.median(values),
        "max": max(values),
        "mean": statistics.fmean(values),
    }


@dataclass
class TimingBreakdown:
    """Aggregate and per-block phase timings in monotonic nanoseconds."""

    per_block: list = field(default_factory=list)
    wall_clock_ns: int = 0

    @property
    def read_ns(self) -> int:
        return sum(t.read_ns for t in self.per_block)

    @property
    def compute_ns(self) -> int:
        return sum(t.compute_ns for t in self.per_block)

    @property
    def write_ns(self) -> int:
        return sum(t.write_ns for t in self.per_block)

    @property
    def io_ns(self) -> int:
        return self.read_ns + self.write_ns

    @property
    def total_ns(self) -> int:
        return self.read_ns + self.compute_ns + self.write_ns

    @property
    def io_fraction(self) -> float:
        total = self.total_ns
        if total == 0:
            raise ValidationError("no time recorded; io_fraction undefined")
        return self.io_ns / total

    def scaled(self, k: float) -> "TimingBreakdown":
        return TimingBreakdown(
            [
                BlockTiming(t.block_index, round(t.read_ns * k), round(t.compute_ns * k), round(t.write_ns * k))
                for t in self.per_block
            ],
            round(self.wall_clock_ns * k),
        )

    def to_dict(self) -> dict:
        d = {
            "read_ns": self.read_ns,
            "compute_ns": self.compute_ns,
            "write_ns": self.write_ns,
            "wall_clock_ns": self.wall_clock_ns,
            "per_block": [
                {
                    "block_index": t.block_index,
                    "read_ns": t.read_ns,
                    "compute_ns": t.compute_ns,
                    "write_ns": t.write_ns,
                }
                for t in sorted(self.per_block, key=lambda t: t.block_index)
            ],
            "distribution_ns": {
                "read": _distribution([t.read_ns for t in self.per_block]),
                "compute": _distribution([t.compute_ns for t in self.per_block]),
                "write": _distribution([t.write_ns for t in self.per_block]),
            },
        }
        if self.total_ns:
            d["io_fraction"] = self.io_fraction
            d["compute_fraction"] = 1.0 - self.io_fraction
        return d


@dataclass(frozen=True)
class BlockStatus:
    done: bool
    reason: Optional[str] = None

    def to_dict(self) -> dict:
        return {"status": "done"} if self.done else {"status": "failed", "reason": self.reason}


DONE = BlockStatus(True)


@dataclass(frozen=True)
class JobResult:
    manifest: BlockManifest
    timings: TimingBreakdown
    block_statuses: dict
    output_checksum: Optional[int]
    kernel: Kernel
    worker_count: int

    @property
    def succeeded(self) -> bool:
        return len(self.block_statuses) == self.manifest.block_count and all(
            s.done for s in self.block_statuses.values()
        )

    @property
    def failed_blocks(self) -> list:
        return sorted(i for i, s in self.block_statuses.items() if not s.done)

    def to_dict(self) -> dict:
        return {
            "succeeded": self.succeeded,
            "kernel": self.kernel.value,
            "worker_count": self.worker_count,
            "block_count": self.manifest.block_count,
            "output_checksum": self.output_checksum,
            "failed_blocks": self.failed_blocks,
            "block_statuses": {str(i): s.to_dict() for i, s in sorted(self.block_statuses.items())},
            "timings": self.timings.to_dict(),
        }

    def write_report(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))


@dataclass(frozen=True)
class JobConfig:
    manifest: BlockManifest
    output_dir: Union[str, Path]
    worker_count: int = 1
    kernel: Kernel = Kernel.FFT_FORWARD
    input_path: Optional[Union[str, Path]] = None
    inverse_scale: bool = True
    memory_cap_bytes: Optional[int] = DEFAULT_MEMORY_CAP
    verify_crc: bool = True

    def __post_init__(self):
        if not isinstance(self.worker_count, int) or self.worker_count < 1:
            raise ValidationError(f"worker_count must be >= 1, got {self.worker_count!r}")
        object.__setattr__(self, "kernel", Kernel(self.kernel))

    @property
    def resolved_input(self) -> Path:
        path = self.input_path or self.manifest.input_path
        if path is None:
            raise ValidationError("no input path: set JobConfig.input_path or use a file-backed manifest")
        return Path(path)


def peak_memory_estimate(manifest: BlockManifest, worker_count: int) -> int:
    """Bytes held by in-flight blocks: one input buffer each, doubled in real mode."""
    factor = 2 if manifest.sample_format is SampleFormat.REAL_F32 else 1
    return worker_count * manifest.block_size * factor


@functools.lru_cache(maxsize=64)
def cached_plan(fft_size: int, batch_count: int, direction: str, inverse_scale: bool = True) -> FftPlan:
    return plan_create(fft_size, batch_count, direction, inverse_scale)


def process_block(
    input_path,
    descriptor: BlockDescriptor,
    fmt,
    fft_size: int,
    kernel,
    output_dir,
    plan: Optional[FftPlan] = None,
    inverse_scale: bool = True,
    verify_crc: bool = True,
):
    """Read, transform and write a single block.

    Returns ``(OutputPart, BlockTiming)``.  Each phase is timed on its own so
    I/O and compute can be reported separately.  blockfft errors propagate
    with a ``block_index`` attribute attached.
    """
    kernel = Kernel(kernel)
    if kernel is not Kernel.IDENTITY:
        if plan is None or (plan.direction, plan.fft_size, plan.inverse_scale) != (
            kernel.direction, fft_size, inverse_scale
        ):
            plan = cached_plan(fft_size, descriptor.record_count, kernel.direction, inverse_scale)
        elif plan.batch_count != descriptor.record_count:
            plan = plan.with_batch_count(descriptor.record_count)

    try:
        t0 = time.perf_counter_ns()
        buf = block_io.read_block(input_path, descriptor, fmt, fft_size, verify_crc)
        t1 = time.perf_counter_ns()
        out = buf if kernel is Kernel.IDENTITY else fft_execute(plan, buf)
        t2 = time.perf_counter_ns()
        part = block_io.write_part(output_dir, descriptor, out)
        t3 = time.perf_counter_ns()
    except BlockFFTError as exc:
        exc.block_index = descriptor.block_index
        raise
    except OSError as exc:
        raise BlockFFTError(f"block {descriptor.block_index}: {exc}") from exc
    return part, BlockTiming(descriptor.block_index, t1 - t0, t2 - t1, t3 - t2)


class BlockRunner:
    """Binds the job-wide arguments of ``process_block``."""

    def __init__(self, manifest, kernel, input_path, output_dir, inverse_scale=True, verify_crc=True):
        self.manifest = manifest
        self.kernel = Kernel(kernel)
        self.input_path = Path(input_path)
        self.output_dir = Path(output_dir)
        self.inverse_scale = inverse_scale
        self.verify_crc = verify_crc

    def __call__(self, descriptor: BlockDescriptor):
        return process_block(
            self.input_path,
            descriptor,
            self.manifest.sample_format,
            self.manifest.fft_size,
            self.kernel,
            self.output_dir,
            inverse_scale=self.inverse_scale,
            verify_crc=self.verify_crc,
        )


def run_local(config: JobConfig, order=None, raise_on_failure: bool = True) -> JobResult:
    """Run every block of the manifest on a pool of local worker threads.

    ``order`` optionally fixes the sequence in which blocks enter the queue;
    output is identical for any order or worker count.
    """
    manifest = config.manifest
    output_dir = Path(config.output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    if config.memory_cap_bytes is not None:
        need = peak_memory_estimate(manifest, config.worker_count)
        if need > config.memory_cap_bytes:
            raise ResourceError(
                f"{config.worker_count} workers x {manifest.block_size}-byte blocks need ~{need} bytes, "
                f"over the {config.memory_cap_bytes}-byte cap"
            )
    runner = BlockRunner(
        manifest, config.kernel, config.resolved_input, output_dir, config.inverse_scale, config.verify_crc
    )

    work = queue.Queue()
    indices = list(range(manifest.block_count)) if order is None else list(order)
    if sorted(indices) != list(range(manifest.block_count)):
        raise ValidationError("order must be a permutation of the block indices")
    for i in indices:
        work.put(i)

    lock = threading.Lock()
    statuses = {}
    timings = []

    def worker():
        while True:
            try:
                i = work.get_nowait()
            except queue.Empty:
                return
            desc = manifest.blocks[i]
            try:
                _, timing = runner(desc)
            except Exception as exc:  # noqa: BLE001 - a failed block must not stop the others
                log.warning("block %d failed: %s", i, exc)
                with lock:
                    statuses[i] = BlockStatus(False, f"{type(exc).__name__}: {exc}")
                continue
            with lock:
                if i in statuses:
                    raise RuntimeError(f"block {i} processed twice")
                statuses[i] = DONE
                timings.append(timing)

    start = time.perf_counter_ns()
    threads = [threading.Thread(target=worker, name=f"blockfft-map-{k}") for k in range(config.worker_count)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    wall = time.perf_counter_ns() - start

    breakdown = TimingBreakdown(sorted(timings, key=lambda t: t.block_index), wall)
    ok = all(s.done for s in statuses.values())
    checksum = block_io.parts_checksum(output_dir, manifest) if ok else None
    result = JobResult(manifest, breakdown, statuses, checksum, config.kernel, config.worker_count)
    if raise_on_failure and not result.succeeded:
        raise JobFailedError(f"job failed; failed blocks: {result.failed_blocks}", result)
    return result


def report_fractions(result) -> dict:
    """Split of per-block time between I/O (read + write) and compute."""
    if isinstance(result, JobResult):
        if not result.succeeded:
            raise ValidationError("fractions are only defined for a successful job")
        timings = result.timings
    else:
        timings = result
    io = timings.io_fraction
    return {"io_fraction": io, "compute_fraction": 1.0 - io}
