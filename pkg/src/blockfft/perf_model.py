"""Speedup and runtime models.

Two analytic models are provided:

* Amdahl's law, ``S(N) = 1 / ((1 - p) + p / N)``, with ``p`` estimated from
  the measured split between I/O and FFT compute time.
* A cluster runtime estimate proportional to ``n log2 n / (eta * S * C)``
  for ``n`` samples on ``S`` servers of ``C`` cores, where ``eta`` is a
  per-server efficiency factor.  The proportionality constant is calibrated
  from a measured single-worker run rather than assumed.
"""

import json
import logging
import math
from dataclasses import asdict, dataclass
from typing import Optional

from .errors import ValidationError

log = logging.getLogger(__name__)

DEFAULT_EFFICIENCY = 0.8
DEFAULT_WARN_THRESHOLD = 0.35
PHASES = frozenset({"read", "compute", "write"})


@dataclass(frozen=True)
class AmdahlParams:
    p: float
    n_threads: int

    def __post_init__(self):
        if not (0.0 <= self.p <= 1.0) or math.isnan(self.p):
            raise ValidationError(f"parallel fraction p must lie in [0, 1], got {self.p}")
        if self.n_threads < 1:
            raise ValidationError(f"n_threads must be >= 1, got {self.n_threads}")

    @property
    def speedup(self) -> float:
        return 1.0 / ((1.0 - self.p) + self.p / self.n_threads)


def amdahl_speedup(p: float, n_threads: int) -> float:
    """Upper bound on speedup with ``n_threads`` when a fraction ``p`` parallelizes."""
    return AmdahlParams(p, n_threads).speedup


@dataclass(frozen=True)
class ClusterSpec:
    servers: int = 1
    cores_per_server: int = 1
    efficiency: float = DEFAULT_EFFICIENCY

    def __post_init__(self):
        if self.servers < 1 or self.cores_per_server < 1:
            raise ValidationError("servers and cores_per_server must be >= 1")
        if not (0.0 < self.efficiency <= 1.0):
            raise ValidationError(f"efficiency must lie in (0, 1], got {self.efficiency}")

    @property
    def effective_parallelism(self) -> float:
        return self.efficiency * self.servers * self.cores_per_server


def estimate_p(timings, parallel_phases=frozenset({"compute"})) -> float:
    """Fraction of measured time spent in the phases that parallelize.

    The default treats only FFT compute as parallel, which is the
    single-machine view where disk I/O is serial.  Pass
    ``{"read", "compute", "write"}`` for a cluster where every node reads and
    writes its own blocks.
    """
    phases = frozenset(parallel_phases)
    if not phases <= PHASES:
        raise ValidationError(f"unknown phases {sorted(phases - PHASES)}")
    by_phase = {"read": timings.read_ns, "compute": timings.compute_ns, "write": timings.write_ns}
    total = sum(by_phase.values())
    if total <= 0:
        raise ValidationError("all timing counters are zero; cannot estimate p")
    return sum(by_phase[k] for k in phases) / total


@dataclass(frozen=True)
class RuntimeEstimate:
    total_samples: int
    cluster: ClusterSpec
    unit_cost_ns: float
    predicted_ns: float

    def to_dict(self) -> dict:
        return {
            "total_samples": self.total_samples,
            "servers": self.cluster.servers,
            "cores_per_server": self.cluster.cores_per_server,
            "efficiency": self.cluster.efficiency,
            "unit_cost_ns": self.unit_cost_ns,
            "predicted_ns": self.predicted_ns,
            "predicted_s": self.predicted_ns / 1e9,
        }


def predict_runtime(n: int, cluster: ClusterSpec, unit_cost_ns: float) -> RuntimeEstimate:
    if n < 2:
        raise ValidationError(f"need at least 2 samples, got {n}")
    if not unit_cost_ns > 0:
        raise ValidationError(f"unit_cost_ns must be > 0, got {unit_cost_ns}")
    predicted = unit_cost_ns * n * math.log2(n) / cluster.effective_parallelism
    return RuntimeEstimate(n, cluster, unit_cost_ns, predicted)


def calibrate_unit_cost(compute_ns: int, n: int) -> float:
    """Nanoseconds per sample per log2 level, from a single-core compute measurement."""
    if n < 2:
        raise ValidationError(f"need at least 2 samples, got {n}")
    if compute_ns <= 0:
        raise ValidationError("compute_ns must be > 0 to calibrate")
    return compute_ns / (n * math.log2(n))


@dataclass(frozen=True)
class SpeedupReport:
    baseline_wall_ns: int
    measured_wall_ns: int
    measured_speedup: float
    predicted_speedup: float
    p_estimate: float
    n_threads: int
    relative_error: float
    warn_threshold: float = DEFAULT_WARN_THRESHOLD

    @property
    def warn(self) -> bool:
        return self.relative_error > self.warn_threshold

    def to_dict(self) -> dict:
        d = asdict(self)
        d["warn"] = self.warn
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def speedup_report(
    baseline_wall_ns: int,
    measured_wall_ns: int,
    params: AmdahlParams,
    warn_threshold: float = DEFAULT_WARN_THRESHOLD,
) -> SpeedupReport:
    if baseline_wall_ns <= 0 or measured_wall_ns <= 0:
        raise ValidationError("wall-clock times must be > 0")
    measured = baseline_wall_ns / measured_wall_ns
    predicted = params.speedup
    rel = abs(measured - predicted) / predicted
    report = SpeedupReport(
        baseline_wall_ns, measured_wall_ns, measured, predicted, params.p, params.n_threads, rel, warn_threshold
    )
    if report.warn:
        log.warning(
            "measured speedup %.3f differs from predicted %.3f by %.0f%%",
            measured, predicted, 100 * rel,
        )
    return report


def compare_speedup(baseline, scaled, params: Optional[AmdahlParams] = None, warn_threshold=DEFAULT_WARN_THRESHOLD):
    """Compare two job results against the Amdahl prediction.

    ``baseline`` must be a single-worker run of the same manifest and kernel
    as ``scaled``.  Without explicit ``params`` the parallel fraction comes
    from the baseline's own timings and N from the scaled run's worker count.
    """
    if not baseline.manifest.same_layout(scaled.manifest) or baseline.kernel != scaled.kernel:
        raise ValidationError("baseline and scaled runs used different manifests or kernels")
    if baseline.worker_count != 1:
        raise ValidationError(f"baseline must use 1 worker, used {baseline.worker_count}")
    if params is None:
        params = AmdahlParams(estimate_p(baseline.timings), scaled.worker_count)
    return speedup_report(baseline.timings.wall_clock_ns, scaled.timings.wall_clock_ns, params, warn_threshold)
