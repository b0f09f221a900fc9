"""TCP coordinator and worker processes.

The coordinator owns the block queue and hands out one block per Assign.
Workers read their input from a path they can see (a shared directory or a
local replica whose block CRCs match the manifest), write parts into a
shared output directory, and report back with BlockDone or BlockFailed.

Failure detection is TCP connection state only: when a worker's connection
drops, every block it still held goes back to the front of the queue.
There is no authentication or encryption; use on loopback or a trusted LAN.
"""

import collections
import itertools
import logging
import os
import socket
import threading
import time
import uuid
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Optional

from . import block_io
from .block_io import BlockManifest
from .errors import IntegrityError, JobFailedError, ProtocolError, ValidationError
from .map_engine import DONE, BlockStatus, BlockTiming, JobResult, Kernel, TimingBreakdown, process_block
from .protocol import Assign, BlockDone, BlockFailed, FrameReader, Hello, Shutdown, send_message

log = logging.getLogger(__name__)

DEFAULT_PORT = 7341

EXIT_OK = 0
EXIT_RUNTIME = 2
EXIT_PROTOCOL = 3


def parse_address(text: str, default_host: str = "127.0.0.1"):
    host, sep, port = text.rpartition(":")
    if not sep:
        return default_host, int(text) if text.isdigit() else DEFAULT_PORT
    return host or default_host, int(port)


class Coordinator:
    """Serve one job to any number of workers.

    Use ``start()`` to bind and begin accepting, then ``wait()`` for the
    result; ``serve()`` does both.  ``on_block_done(worker_id, block_index)``
    is called from connection threads after each completed block.
    """

    def __init__(
        self,
        manifest: BlockManifest,
        kernel=Kernel.FFT_FORWARD,
        listen=("127.0.0.1", DEFAULT_PORT),
        output_dir=None,
        inverse_scale: bool = True,
        accept_timeout: float = 30.0,
        poll_interval: float = 0.05,
        on_block_done: Optional[Callable[[str, int], None]] = None,
    ):
        self.manifest = manifest
        self.kernel = Kernel(kernel)
        self.listen = listen
        self.output_dir = None if output_dir is None else Path(output_dir)
        self.inverse_scale = inverse_scale
        self.accept_timeout = accept_timeout
        self.poll_interval = poll_interval
        self.on_block_done = on_block_done

        self._cond = threading.Condition()
        self._pending = collections.deque(range(manifest.block_count))
        self._owner = {}
        self._statuses = {}
        self._timings = []
        self._output_crcs = {}
        self._live = 0
        self._peak_workers = 0
        self._last_live = None
        self._closed = False
        self._ids = itertools.count()
        self._server = None
        self._threads = []
        self._started_ns = None

    @property
    def address(self):
        return self._server.getsockname()[:2]

    @property
    def finished(self) -> bool:
        return len(self._statuses) == self.manifest.block_count

    def start(self):
        srv = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        srv.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        srv.bind(tuple(self.listen))
        srv.listen()
        srv.settimeout(self.poll_interval)
        self._server = srv
        self._started_ns = time.perf_counter_ns()
        self._last_live = time.monotonic()
        t = threading.Thread(target=self._accept_loop, name="blockfft-accept", daemon=True)
        t.start()
        self._threads.append(t)
        log.info("coordinator listening on %s:%d", *self.address)
        return self.address

    def _accept_loop(self):
        while not self._closed:
            try:
                conn, addr = self._server.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            t = threading.Thread(target=self._handle, args=(conn, addr), daemon=True)
            t.start()
            self._threads.append(t)

    def _take(self, conn_id, inflight, cores):
        with self._cond:
            batch = []
            while len(inflight) < cores and self._pending:
                i = self._pending.popleft()
                self._owner[i] = conn_id
                inflight.add(i)
                batch.append(i)
            return batch

    def _record(self, conn_id, inflight, msg, worker_id):
        i = msg.block_index
        with self._cond:
            if i not in inflight:
                if i in self._statuses:
                    raise ProtocolError(f"duplicate completion for block {i}")
                raise ProtocolError(f"completion for block {i} that was not assigned to this worker")
            inflight.discard(i)
            del self._owner[i]
            if isinstance(msg, BlockDone):
                self._statuses[i] = DONE
                self._output_crcs[i] = msg.output_crc
                self._timings.append(BlockTiming(i, msg.read_ns, msg.compute_ns, msg.write_ns))
            else:
                log.warning("worker %s failed block %d: %s", worker_id, i, msg.reason)
                self._statuses[i] = BlockStatus(False, msg.reason)
            self._cond.notify_all()
        if isinstance(msg, BlockDone) and self.on_block_done is not None:
            self.on_block_done(worker_id, i)

    def _handle(self, conn: socket.socket, addr):
        conn_id = next(self._ids)
        conn.settimeout(self.poll_interval)
        reader = FrameReader(conn)
        inflight = set()
        worker_id = f"{addr[0]}:{addr[1]}"
        with self._cond:
            self._live += 1
            self._peak_workers = max(self._peak_workers, self._live)
        try:
            deadline = time.monotonic() + self.accept_timeout
            hello = None
            while hello is None:
                hello = reader.read()
                if hello is None and time.monotonic() > deadline:
                    raise ProtocolError("no Hello before timeout")
            if not isinstance(hello, Hello):
                raise ProtocolError(f"expected Hello, got {type(hello).__name__}")
            worker_id = hello.worker_id or worker_id
            cores = max(1, hello.cores)
            log.info("worker %s connected with %d cores", worker_id, cores)

            while True:
                if self.finished:
                    send_message(conn, Shutdown())
                    return
                for i in self._take(conn_id, inflight, cores):
                    send_message(
                        conn,
                        Assign(
                            self.manifest.blocks[i],
                            self.manifest.fft_size,
                            self.manifest.sample_format,
                            self.kernel,
                            self.inverse_scale,
                        ),
                    )
                msg = reader.read()
                if msg is None:
                    continue
                if isinstance(msg, (BlockDone, BlockFailed)):
                    self._record(conn_id, inflight, msg, worker_id)
                else:
                    raise ProtocolError(f"unexpected {type(msg).__name__} from worker")
        except ProtocolError as exc:
            log.warning("protocol error from %s: %s", worker_id, exc)
        except (ConnectionError, OSError) as exc:
            log.warning("worker %s disconnected: %s", worker_id, exc)
        finally:
            with self._cond:
                if inflight:
                    log.info("requeueing blocks %s from %s", sorted(inflight), worker_id)
                    for i in sorted(inflight, reverse=True):
                        self._owner.pop(i, None)
                        self._pending.appendleft(i)
                self._live -= 1
                self._last_live = time.monotonic()
                self._cond.notify_all()
            conn.close()

    def wait(self, raise_on_failure: bool = True) -> JobResult:
        """Block until every block is done or failed, or no worker is around for ``accept_timeout``."""
        timed_out = False
        with self._cond:
            while not self.finished:
                if self._live == 0 and time.monotonic() - self._last_live > self.accept_timeout:
                    timed_out = True
                    break
                self._cond.wait(self.poll_interval)
            wall = time.perf_counter_ns() - self._started_ns
            statuses = dict(self._statuses)
            timings = list(self._timings)
            pending = sorted(self._pending)
            inflight = sorted(self._owner)
        # let connection threads deliver Shutdown before the listener goes away
        deadline = time.monotonic() + 5.0
        while self._live and time.monotonic() < deadline and not timed_out:
            time.sleep(self.poll_interval)
        self.close()

        if timed_out:
            for i in pending + inflight:
                statuses[i] = BlockStatus(False, "not completed before timeout")
        breakdown = TimingBreakdown(sorted(timings, key=lambda t: t.block_index), wall)
        ok = len(statuses) == self.manifest.block_count and all(s.done for s in statuses.values())
        checksum = None
        if ok and self.output_dir is not None:
            checksum = block_io.parts_checksum(self.output_dir, self.manifest)
        result = JobResult(self.manifest, breakdown, statuses, checksum, self.kernel, max(1, self._peak_workers))
        if raise_on_failure and not result.succeeded:
            if timed_out:
                msg = f"timed out with unassigned blocks {pending} and unfinished blocks {inflight}"
            else:
                msg = f"job failed; failed blocks: {result.failed_blocks}"
            raise JobFailedError(msg, result)
        return result

    def serve(self, raise_on_failure: bool = True) -> JobResult:
        self.start()
        return self.wait(raise_on_failure)

    def close(self):
        self._closed = True
        if self._server is not None:
            try:
                self._server.close()
            except OSError:
                pass


def coordinator_serve(manifest, listen_address=("127.0.0.1", DEFAULT_PORT), **kwargs) -> JobResult:
    return Coordinator(manifest, listen=listen_address, **kwargs).serve()


def _connect(address, timeout: float) -> socket.socket:
    deadline = time.monotonic() + timeout
    while True:
        try:
            return socket.create_connection(tuple(address), timeout=max(0.1, deadline - time.monotonic()))
        except OSError:
            if time.monotonic() >= deadline:
                raise
            time.sleep(0.1)


def worker_run(
    coordinator_address,
    input_path,
    output_dir,
    cores: int = 1,
    worker_id: Optional[str] = None,
    connect_timeout: float = 10.0,
) -> int:
    """Serve blocks for a coordinator until it says Shutdown.

    Returns 0 after a clean Shutdown, 2 if the connection is lost and 3 on
    a protocol violation.  Blocks whose input bytes do not match the
    manifest CRC are reported as failed with reason ``input mismatch``.
    """
    if cores < 1:
        raise ValidationError(f"cores must be >= 1, got {cores}")
    input_path = Path(input_path)
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    worker_id = worker_id or f"{socket.gethostname()}-{os.getpid()}-{uuid.uuid4().hex[:6]}"
    worker_id = worker_id.encode("utf-8")[:64].decode("utf-8", "ignore")

    try:
        sock = _connect(coordinator_address, connect_timeout)
    except OSError as exc:
        log.error("cannot reach coordinator at %s: %s", coordinator_address, exc)
        return EXIT_RUNTIME
    sock.settimeout(None)
    send_lock = threading.Lock()
    lost = threading.Event()

    def reply(msg):
        if lost.is_set():
            return
        try:
            with send_lock:
                send_message(sock, msg)
        except OSError:
            lost.set()

    def work(assign: Assign):
        d = assign.descriptor
        try:
            part, timing = process_block(
                input_path,
                d,
                assign.sample_format,
                assign.fft_size,
                assign.kernel,
                output_dir,
                inverse_scale=assign.inverse_scale,
                verify_crc=True,
            )
        except IntegrityError as exc:
            reply(BlockFailed(d.block_index, f"input mismatch: {exc}"))
            return
        except Exception as exc:  # noqa: BLE001 - reported to the coordinator instead
            reply(BlockFailed(d.block_index, f"{type(exc).__name__}: {exc}"))
            return
        reply(BlockDone(d.block_index, part.crc64, timing.read_ns, timing.compute_ns, timing.write_ns))

    pool = ThreadPoolExecutor(max_workers=cores, thread_name_prefix=f"blockfft-worker")
    status = EXIT_RUNTIME
    try:
        send_message(sock, Hello(worker_id, min(cores, 0xFFFF)))
        reader = FrameReader(sock)
        while True:
            msg = reader.read()
            if isinstance(msg, Assign):
                pool.submit(work, msg)
            elif isinstance(msg, Shutdown):
                pool.shutdown(wait=True)
                status = EXIT_OK
                break
            else:
                raise ProtocolError(f"unexpected {type(msg).__name__} from coordinator")
    except ProtocolError as exc:
        log.error("protocol error: %s", exc)
        status = EXIT_PROTOCOL
    except (ConnectionError, OSError) as exc:
        log.warning("lost coordinator connection: %s", exc)
        status = EXIT_RUNTIME
    finally:
        lost.set()
        pool.shutdown(wait=status == EXIT_OK, cancel_futures=True)
        sock.close()
    return status
