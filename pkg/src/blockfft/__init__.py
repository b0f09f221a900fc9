"""Out-of-core batched FFT over block-split sample files."""

from .block_io import (
    BlockDescriptor,
    BlockManifest,
    OutputPart,
    SampleFormat,
    build_manifest,
    merge_parts,
    read_block,
    split_plan,
    write_part,
)
from .distributed import Coordinator, coordinator_serve, worker_run
from .errors import BlockFFTError, JobFailedError, ProtocolError, ValidationError
from .fft_core import FftPlan, dft_oracle, fft_execute, plan_create
from .map_engine import JobConfig, JobResult, Kernel, TimingBreakdown, process_block, report_fractions, run_local
from .perf_model import (
    AmdahlParams,
    ClusterSpec,
    amdahl_speedup,
    compare_speedup,
    estimate_p,
    predict_runtime,
)
from .protocol import decode_message, encode_message

__version__ = "0.1.0"
