"""``blockfft`` command line.

Exit codes: 0 success, 1 validation error, 2 runtime or processing error,
3 protocol error.  JSON reports go to stdout (or ``--report``); human
summaries go to stderr.
"""

import argparse
import json
import logging
import math
import os
import re
import shutil
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import block_io, distributed, map_engine, perf_model, signals
from .block_io import DEFAULT_BLOCK_SIZE, BlockManifest, SampleFormat
from .errors import BlockFFTError, ProtocolError, ValidationError

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2
EXIT_PROTOCOL = 3

BLOCK_SIZE_ENV = "BLOCKFFT_BLOCK_SIZE"
_UNITS = {"": 1, "k": 1000, "ki": 1024, "m": 1000**2, "mi": 1024**2, "g": 1000**3, "gi": 1024**3}

log = logging.getLogger("blockfft")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def parse_size(text: str) -> int:
    """Parse '1048576', '1MiB', '64M' or '512mib' into a byte count."""
    m = re.fullmatch(r"\s*(\d+)\s*([kmg]i?)?b?\s*", str(text), re.IGNORECASE)
    if not m:
        raise argparse.ArgumentTypeError(f"invalid size {text!r}")
    return int(m.group(1)) * _UNITS[(m.group(2) or "").lower()]


def default_block_size() -> int:
    env = os.environ.get(BLOCK_SIZE_ENV)
    if env:
        try:
            return parse_size(env)
        except argparse.ArgumentTypeError as exc:
            raise ValidationError(f"{BLOCK_SIZE_ENV}: {exc}") from None
    return DEFAULT_BLOCK_SIZE


def _address(text):
    try:
        return distributed.parse_address(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid address {text!r}, expected HOST:PORT") from None


def _emit(payload: dict, report=None):
    text = json.dumps(payload, indent=2)
    if report:
        Path(report).write_text(text)
    else:
        print(text)


def _refuse_overwrite(path, force):
    if Path(path).exists() and not force:
        raise ValidationError(f"{path} exists; pass --force to overwrite")


def cmd_gen(args):
    _refuse_overwrite(args.out, args.force)
    signals.generate(args.out, args.samples, args.mode, args.signal, args.fft_size)
    print(f"wrote {args.samples} {args.mode} samples of {args.signal} to {args.out}", file=sys.stderr)
    return EXIT_OK


def cmd_split(args):
    _refuse_overwrite(args.manifest, args.force)
    block_size = args.block_size or default_block_size()
    manifest = block_io.build_manifest(args.input, block_size, args.fft_size, args.mode)
    manifest.save(args.manifest)
    print(
        f"{manifest.block_count} blocks, {manifest.total_records} records of {args.fft_size} samples "
        f"-> {args.manifest}",
        file=sys.stderr,
    )
    return EXIT_OK


def _has_parts(output_dir: Path) -> bool:
    return output_dir.is_dir() and any(n.startswith(block_io.PART_PREFIX) for n in os.listdir(output_dir))


def cmd_run(args):
    manifest = BlockManifest.load(args.manifest)
    output_dir = Path(args.output_dir)
    if _has_parts(output_dir) and not args.force:
        raise ValidationError(f"{output_dir} already holds parts; pass --force to overwrite")
    config = map_engine.JobConfig(
        manifest=manifest,
        output_dir=output_dir,
        worker_count=args.workers,
        kernel=args.kernel,
        input_path=args.input,
        inverse_scale=not args.no_inverse_scale,
        memory_cap_bytes=args.memory_cap,
    )
    result = map_engine.run_local(config, raise_on_failure=False)
    _finish_job(result, args.report)
    return EXIT_OK if result.succeeded else EXIT_RUNTIME


def _finish_job(result, report):
    payload = result.to_dict()
    _emit(payload, report)
    t = result.timings
    summary = f"{len(t.per_block)}/{result.manifest.block_count} blocks in {t.wall_clock_ns / 1e9:.3f}s"
    if t.total_ns:
        summary += f", io_fraction {t.io_fraction:.3f}"
    if not result.succeeded:
        summary += f"; FAILED blocks {result.failed_blocks}"
    print(summary, file=sys.stderr)


def cmd_serve(args):
    manifest = BlockManifest.load(args.manifest)
    coord = distributed.Coordinator(
        manifest,
        kernel=args.kernel,
        listen=args.listen,
        output_dir=args.output_dir,
        inverse_scale=not args.no_inverse_scale,
        accept_timeout=args.accept_timeout,
    )
    result = coord.serve(raise_on_failure=False)
    _finish_job(result, args.report)
    return EXIT_OK if result.succeeded else EXIT_RUNTIME


def cmd_worker(args):
    return distributed.worker_run(
        args.connect, args.input, args.output_dir, cores=args.cores, worker_id=args.id,
        connect_timeout=args.connect_timeout,
    )


def cmd_merge(args):
    manifest = BlockManifest.load(args.manifest)
    _refuse_overwrite(args.out, args.force)
    out = block_io.merge_parts(args.output_dir, manifest, args.out, delete_parts=args.delete_parts, force=args.force)
    print(f"merged {manifest.block_count} parts into {out} ({manifest.output_file_size} bytes)", file=sys.stderr)
    return EXIT_OK


def compare_files(a, b, tolerance=None, chunk=1 << 22) -> dict:
    """Byte equality of two sample files, plus relative L2 error when ``tolerance`` is given."""
    size_a, size_b = Path(a).stat().st_size, Path(b).stat().st_size
    report = {"a": str(a), "b": str(b), "size_a": size_a, "size_b": size_b}
    if size_a != size_b:
        report.update(equal=False, reason="size mismatch", ok=False)
        return report
    if size_a % 4:
        report.update(equal=False, reason="size is not a multiple of 4 bytes", ok=False)
        return report
    equal = True
    diff_sq = ref_sq = 0.0
    with open(a, "rb") as fa, open(b, "rb") as fb:
        while True:
            ca, cb = fa.read(chunk), fb.read(chunk)
            if not ca:
                break
            if ca != cb:
                equal = False
            if tolerance is not None:
                xa = np.frombuffer(ca, dtype="<f4").astype(np.float64)
                xb = np.frombuffer(cb, dtype="<f4").astype(np.float64)
                diff_sq += float(np.sum((xa - xb) ** 2))
                ref_sq += float(np.sum(xb**2))
    report["equal"] = equal
    if tolerance is None:
        report["ok"] = equal
    else:
        err = math.sqrt(diff_sq / ref_sq) if ref_sq else math.sqrt(diff_sq)
        report.update(relative_l2_error=err, tolerance=tolerance, ok=err <= tolerance)
    return report


def cmd_verify(args):
    report = compare_files(args.a, args.b, args.tolerance)
    _emit(report, args.report)
    if report.get("equal"):
        print("equal", file=sys.stderr)
    elif "relative_l2_error" in report:
        print(f"relative L2 error {report['relative_l2_error']:.3e}", file=sys.stderr)
    else:
        print(f"differ: {report.get('reason', 'content mismatch')}", file=sys.stderr)
    return EXIT_OK if report["ok"] else EXIT_RUNTIME


def bench(input_path, block_size, fft_size, mode, workers=1, verify_crc=True) -> dict:
    """Run a forward FFT job into a scratch directory and calibrate the models."""
    manifest = block_io.build_manifest(input_path, block_size, fft_size, mode)
    scratch = Path(tempfile.mkdtemp(prefix="blockfft-bench-"))
    try:
        result = map_engine.run_local(
            map_engine.JobConfig(manifest, scratch, workers, map_engine.Kernel.FFT_FORWARD, verify_crc=verify_crc)
        )
    finally:
        shutil.rmtree(scratch, ignore_errors=True)
    t = result.timings
    n = manifest.total_samples
    payload = result.to_dict()
    payload.update(
        total_samples=n,
        fft_size=fft_size,
        block_size=block_size,
        p_estimate=perf_model.estimate_p(t),
        p_estimate_all_phases_parallel=perf_model.estimate_p(t, perf_model.PHASES),
        unit_cost_ns=perf_model.calibrate_unit_cost(t.compute_ns, n) if n >= 2 else None,
    )
    payload.update(map_engine.report_fractions(result))
    return payload


def cmd_bench(args):
    payload = bench(args.input, args.block_size or default_block_size(), args.fft_size, args.mode, args.workers)
    _emit(payload, args.report)
    print(
        f"io_fraction {payload['io_fraction']:.3f}, p {payload['p_estimate']:.3f}, "
        f"unit_cost {payload['unit_cost_ns']:.3f} ns",
        file=sys.stderr,
    )
    return EXIT_OK


def cmd_predict(args):
    cluster = perf_model.ClusterSpec(args.servers, args.cores, args.efficiency)
    est = perf_model.predict_runtime(args.samples, cluster, args.unit_cost_ns)
    payload = est.to_dict()
    if args.parallel_fraction is not None:
        payload["amdahl_speedup"] = perf_model.amdahl_speedup(
            args.parallel_fraction, args.threads or args.servers * args.cores
        )
    _emit(payload, args.report)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="blockfft", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    modes = [m.value for m in SampleFormat]
    kernels = [k.value for k in map_engine.Kernel]

    g = sub.add_parser("gen", help="write a synthetic sample file")
    g.add_argument("--out", required=True)
    g.add_argument("--samples", type=int, required=True)
    g.add_argument("--mode", choices=modes, default="complex-f32")
    g.add_argument("--signal", default="random:0", help="impulse | impulse-per-record | constant | sine:BIN | random:SEED")
    g.add_argument("--fft-size", type=int, default=1024, help="record length used by sine and impulse-per-record")
    g.add_argument("--force", action="store_true")
    g.set_defaults(func=cmd_gen)

    s = sub.add_parser("split", help="plan blocks for an input file and write the manifest")
    s.add_argument("--input", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--block-size", type=parse_size, default=None, help=f"bytes; default ${BLOCK_SIZE_ENV} or 64MiB")
    s.add_argument("--fft-size", type=int, default=1024)
    s.add_argument("--mode", choices=modes, default="complex-f32")
    s.add_argument("--force", action="store_true")
    s.set_defaults(func=cmd_split)

    r = sub.add_parser("run", help="process every block on local worker threads")
    r.add_argument("--manifest", required=True)
    r.add_argument("--output-dir", required=True)
    r.add_argument("--input", default=None, help="override the manifest's input path")
    r.add_argument("--kernel", choices=kernels, default="fft-forward")
    r.add_argument("--workers", type=int, default=1)
    r.add_argument("--report", default=None)
    r.add_argument("--no-inverse-scale", action="store_true")
    r.add_argument("--memory-cap", type=parse_size, default=map_engine.DEFAULT_MEMORY_CAP)
    r.add_argument("--force", action="store_true")
    r.set_defaults(func=cmd_run)

    sv = sub.add_parser("serve", help="coordinate a job across TCP workers")
    sv.add_argument("--manifest", required=True)
    sv.add_argument("--listen", type=_address, default=("127.0.0.1", distributed.DEFAULT_PORT))
    sv.add_argument("--kernel", choices=kernels, default="fft-forward")
    sv.add_argument("--output-dir", default=None, help="shared part directory, used for the output checksum")
    sv.add_argument("--report", default=None)
    sv.add_argument("--accept-timeout", type=float, default=30.0)
    sv.add_argument("--no-inverse-scale", action="store_true")
    sv.set_defaults(func=cmd_serve)

    w = sub.add_parser("worker", help="process blocks assigned by a coordinator")
    w.add_argument("--connect", type=_address, required=True)
    w.add_argument("--input", required=True)
    w.add_argument("--output-dir", required=True)
    w.add_argument("--cores", type=int, default=1)
    w.add_argument("--id", default=None)
    w.add_argument("--connect-timeout", type=float, default=10.0)
    w.set_defaults(func=cmd_worker)

    m = sub.add_parser("merge", help="concatenate parts into one output file")
    m.add_argument("--manifest", required=True)
    m.add_argument("--output-dir", required=True)
    m.add_argument("--out", required=True)
    m.add_argument("--delete-parts", action="store_true")
    m.add_argument("--force", action="store_true", help="overwrite --out and ignore unknown files")
    m.set_defaults(func=cmd_merge)

    b = sub.add_parser("bench", help="time a single-worker forward FFT and calibrate unit cost")
    b.add_argument("--input", required=True)
    b.add_argument("--report", default=None)
    b.add_argument("--block-size", type=parse_size, default=None)
    b.add_argument("--fft-size", type=int, default=1024)
    b.add_argument("--mode", choices=modes, default="complex-f32")
    b.add_argument("--workers", type=int, default=1)
    b.set_defaults(func=cmd_bench)

    pr = sub.add_parser("predict", help="estimate cluster runtime from a calibrated unit cost")
    pr.add_argument("--samples", type=int, required=True)
    pr.add_argument("--servers", type=int, default=1)
    pr.add_argument("--cores", type=int, default=1)
    pr.add_argument("--efficiency", type=float, default=perf_model.DEFAULT_EFFICIENCY)
    pr.add_argument("--unit-cost-ns", type=float, required=True)
    pr.add_argument("--parallel-fraction", type=float, default=None, help="also report Amdahl speedup for this p")
    pr.add_argument("--threads", type=int, default=None, help="N for the Amdahl speedup; default servers x cores")
    pr.add_argument("--report", default=None)
    pr.set_defaults(func=cmd_predict)

    v = sub.add_parser("verify", help="compare two sample files")
    v.add_argument("--a", required=True)
    v.add_argument("--b", required=True)
    v.add_argument("--tolerance", type=float, default=None)
    v.add_argument("--report", default=None)
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except ProtocolError as exc:
        print(f"protocol error: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL
    except (BlockFFTError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
