"""Coordinator/worker control-plane messages.

Frame layout (all integers little-endian)::

    u32 body_length | u8 tag | fields...

Tags: 1 Hello, 2 Assign, 3 BlockDone, 4 BlockFailed, 5 Shutdown.  Strings
are a u16 byte count followed by UTF-8.  Frames are capped at 1 MiB; sample
data never travels over this channel.
"""

import socket
import struct
from dataclasses import dataclass
from typing import Optional, Union

from .block_io import BlockDescriptor, SampleFormat
from .errors import ProtocolError
from .map_engine import Kernel

MAX_FRAME = 1024 * 1024
MAX_WORKER_ID = 64

TAG_HELLO = 1
TAG_ASSIGN = 2
TAG_BLOCK_DONE = 3
TAG_BLOCK_FAILED = 4
TAG_SHUTDOWN = 5

_LEN = struct.Struct("<I")
_U16 = struct.Struct("<H")
# block_index, byte_offset, byte_length, record_count, pad_samples, crc64,
# fft_size, has_crc, sample_format, kernel, inverse_scale
_ASSIGN = struct.Struct("<QQQQQQIBBBB")
_DONE = struct.Struct("<QQQQQ")
_U64 = struct.Struct("<Q")

_FORMAT_CODES = {SampleFormat.REAL_F32: 0, SampleFormat.COMPLEX_F32: 1}
_KERNEL_CODES = {Kernel.IDENTITY: 0, Kernel.FFT_FORWARD: 1, Kernel.FFT_INVERSE: 2}
_FORMATS = {v: k for k, v in _FORMAT_CODES.items()}
_KERNELS = {v: k for k, v in _KERNEL_CODES.items()}


@dataclass(frozen=True)
class Hello:
    worker_id: str
    cores: int


@dataclass(frozen=True)
class Assign:
    descriptor: BlockDescriptor
    fft_size: int
    sample_format: SampleFormat
    kernel: Kernel
    inverse_scale: bool = True


@dataclass(frozen=True)
class BlockDone:
    block_index: int
    output_crc: int
    read_ns: int
    compute_ns: int
    write_ns: int


@dataclass(frozen=True)
class BlockFailed:
    block_index: int
    reason: str


@dataclass(frozen=True)
class Shutdown:
    pass


Message = Union[Hello, Assign, BlockDone, BlockFailed, Shutdown]


def _encode_str(s: str, limit: int) -> bytes:
    raw = s.encode("utf-8")
    if len(raw) > limit:
        raise ProtocolError(f"string of {len(raw)} bytes exceeds limit {limit}")
    return _U16.pack(len(raw)) + raw


def _decode_str(body: bytes, pos: int, limit: int):
    if pos + 2 > len(body):
        raise ProtocolError("truncated string length")
    (n,) = _U16.unpack_from(body, pos)
    pos += 2
    if n > limit:
        raise ProtocolError(f"string of {n} bytes exceeds limit {limit}")
    if pos + n > len(body):
        raise ProtocolError("truncated string body")
    try:
        return body[pos:pos + n].decode("utf-8"), pos + n
    except UnicodeDecodeError as exc:
        raise ProtocolError(f"invalid UTF-8 in string: {exc}") from None


def _check_u(value, bits, name):
    if not isinstance(value, int) or not 0 <= value < (1 << bits):
        raise ProtocolError(f"{name}={value!r} does not fit in u{bits}")


def encode_body(msg: Message) -> bytes:
    if isinstance(msg, Hello):
        _check_u(msg.cores, 16, "cores")
        return bytes([TAG_HELLO]) + _encode_str(msg.worker_id, MAX_WORKER_ID) + _U16.pack(msg.cores)
    if isinstance(msg, Assign):
        d = msg.descriptor
        for name in ("block_index", "byte_offset", "byte_length", "record_count", "pad_samples"):
            _check_u(getattr(d, name), 64, name)
        if d.crc64 is not None:
            _check_u(d.crc64, 64, "crc64")
        _check_u(msg.fft_size, 32, "fft_size")
        return bytes([TAG_ASSIGN]) + _ASSIGN.pack(
            d.block_index,
            d.byte_offset,
            d.byte_length,
            d.record_count,
            d.pad_samples,
            d.crc64 or 0,
            msg.fft_size,
            d.crc64 is not None,
            _FORMAT_CODES[SampleFormat(msg.sample_format)],
            _KERNEL_CODES[Kernel(msg.kernel)],
            bool(msg.inverse_scale),
        )
    if isinstance(msg, BlockDone):
        for name in ("block_index", "output_crc", "read_ns", "compute_ns", "write_ns"):
            _check_u(getattr(msg, name), 64, name)
        return bytes([TAG_BLOCK_DONE]) + _DONE.pack(
            msg.block_index, msg.output_crc, msg.read_ns, msg.compute_ns, msg.write_ns
        )
    if isinstance(msg, BlockFailed):
        _check_u(msg.block_index, 64, "block_index")
        return bytes([TAG_BLOCK_FAILED]) + _U64.pack(msg.block_index) + _encode_str(msg.reason, 0xFFFF)
    if isinstance(msg, Shutdown):
        return bytes([TAG_SHUTDOWN])
    raise ProtocolError(f"cannot encode {type(msg).__name__}")


def encode_message(msg: Message) -> bytes:
    body = encode_body(msg)
    if len(body) > MAX_FRAME:
        raise ProtocolError(f"frame of {len(body)} bytes exceeds {MAX_FRAME}")
    return _LEN.pack(len(body)) + body


def _flag(v, name):
    if v not in (0, 1):
        raise ProtocolError(f"{name} flag must be 0 or 1, got {v}")
    return bool(v)


def decode_body(body: bytes) -> Message:
    if not body:
        raise ProtocolError("empty frame")
    tag, rest = body[0], body[1:]
    if tag == TAG_HELLO:
        worker_id, pos = _decode_str(rest, 0, MAX_WORKER_ID)
        if pos + 2 != len(rest):
            raise ProtocolError("Hello frame has wrong length")
        (cores,) = _U16.unpack_from(rest, pos)
        return Hello(worker_id, cores)
    if tag == TAG_ASSIGN:
        if len(rest) != _ASSIGN.size:
            raise ProtocolError(f"Assign body must be {_ASSIGN.size} bytes, got {len(rest)}")
        (idx, off, length, records, pad, crc, fft_size, has_crc, fmt, kernel, scale) = _ASSIGN.unpack(rest)
        if fmt not in _FORMATS or kernel not in _KERNELS:
            raise ProtocolError(f"unknown sample format {fmt} or kernel {kernel}")
        desc = BlockDescriptor(idx, off, length, records, pad, crc if _flag(has_crc, "has_crc") else None)
        return Assign(desc, fft_size, _FORMATS[fmt], _KERNELS[kernel], _flag(scale, "inverse_scale"))
    if tag == TAG_BLOCK_DONE:
        if len(rest) != _DONE.size:
            raise ProtocolError(f"BlockDone body must be {_DONE.size} bytes, got {len(rest)}")
        return BlockDone(*_DONE.unpack(rest))
    if tag == TAG_BLOCK_FAILED:
        if len(rest) < _U64.size:
            raise ProtocolError("truncated BlockFailed")
        (idx,) = _U64.unpack_from(rest, 0)
        reason, pos = _decode_str(rest, _U64.size, 0xFFFF)
        if pos != len(rest):
            raise ProtocolError("BlockFailed frame has trailing bytes")
        return BlockFailed(idx, reason)
    if tag == TAG_SHUTDOWN:
        if rest:
            raise ProtocolError("Shutdown frame has trailing bytes")
        return Shutdown()
    raise ProtocolError(f"unknown message tag {tag}")


def decode_message(data: bytes) -> Message:
    """Decode exactly one complete frame (length prefix included)."""
    data = bytes(data)
    if len(data) < _LEN.size:
        raise ProtocolError("truncated frame header")
    (n,) = _LEN.unpack_from(data, 0)
    if n > MAX_FRAME:
        raise ProtocolError(f"frame length {n} exceeds {MAX_FRAME}")
    if len(data) - _LEN.size < n:
        raise ProtocolError(f"truncated frame: header says {n} bytes, {len(data) - _LEN.size} present")
    if len(data) - _LEN.size > n:
        raise ProtocolError("trailing bytes after frame")
    return decode_body(data[_LEN.size:])


class FrameReader:
    """Incremental frame reader over a socket that may time out.

    ``read()`` returns the next message, ``None`` if the socket timed out
    before a full frame arrived (partial bytes are kept), and raises
    ``ConnectionError`` on EOF.
    """

    def __init__(self, sock: socket.socket):
        self.sock = sock
        self._buf = bytearray()

    def _next_frame(self) -> Optional[Message]:
        if len(self._buf) < _LEN.size:
            return None
        (n,) = _LEN.unpack_from(self._buf, 0)
        if n > MAX_FRAME:
            raise ProtocolError(f"frame length {n} exceeds {MAX_FRAME}")
        if len(self._buf) < _LEN.size + n:
            return None
        body = bytes(self._buf[_LEN.size:_LEN.size + n])
        del self._buf[:_LEN.size + n]
        return decode_body(body)

    def read(self) -> Optional[Message]:
        while True:
            msg = self._next_frame()
            if msg is not None:
                return msg
            try:
                chunk = self.sock.recv(65536)
            except socket.timeout:
                return None
            if not chunk:
                if self._buf:
                    raise ProtocolError("connection closed mid-frame")
                raise ConnectionError("peer closed connection")
            self._buf += chunk


def send_message(sock: socket.socket, msg: Message) -> None:
    sock.sendall(encode_message(msg))
