"""Block splitting, sample decoding, output parts and merging.

An input file is raw headerless little-endian float32 samples, either real
(4 bytes per sample) or interleaved complex (8 bytes).  It is cut into
fixed-size blocks; each block is a whole number of FFT records except the
final one, whose last record is zero-padded.  Every block's output lands in
its own part file named after the block's input byte offset, so sorting part
names sorts the output.
"""

import enum
import json
import logging
import os
import re
import sys
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import crcmod
import numpy as np

from .errors import (
    AlignmentError,
    EmptyInputError,
    IntegrityError,
    MissingPartsError,
    PartConflictError,
    UnknownFilesError,
    ValidationError,
)

log = logging.getLogger(__name__)

MANIFEST_VERSION = 1
DEFAULT_BLOCK_SIZE = 64 * 1024 * 1024
OUTPUT_BYTES_PER_SAMPLE = 8
PART_PREFIX = "part-"
PART_RE = re.compile(r"^part-(\d{20})$")
_COPY_CHUNK = 8 * 1024 * 1024

# CRC-64/XZ (ECMA-182 polynomial, reflected, all-ones init and xor-out)
crc64 = crcmod.mkCrcFun(0x142F0E1EBA9EA3693, initCrc=0, rev=True, xorOut=0xFFFFFFFFFFFFFFFF)

_LE_C8 = np.dtype("<c8")
_LE_F4 = np.dtype("<f4")


class SampleFormat(str, enum.Enum):
    REAL_F32 = "real-f32"
    COMPLEX_F32 = "complex-f32"

    @property
    def input_bytes_per_sample(self) -> int:
        return 4 if self is SampleFormat.REAL_F32 else 8

    @property
    def output_bytes_per_sample(self) -> int:
        return OUTPUT_BYTES_PER_SAMPLE

    def record_input_bytes(self, fft_size: int) -> int:
        return fft_size * self.input_bytes_per_sample

    def record_output_bytes(self, fft_size: int) -> int:
        return fft_size * OUTPUT_BYTES_PER_SAMPLE


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


@dataclass(frozen=True)
class BlockDescriptor:
    block_index: int
    byte_offset: int
    byte_length: int
    record_count: int
    pad_samples: int = 0
    crc64: Optional[int] = None

    @property
    def part_name(self) -> str:
        return part_name(self.byte_offset)

    def to_dict(self) -> dict:
        return {
            "block_index": self.block_index,
            "byte_offset": self.byte_offset,
            "byte_length": self.byte_length,
            "record_count": self.record_count,
            "pad_samples": self.pad_samples,
            "crc64": self.crc64,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BlockDescriptor":
        return cls(
            block_index=int(d["block_index"]),
            byte_offset=int(d["byte_offset"]),
            byte_length=int(d["byte_length"]),
            record_count=int(d["record_count"]),
            pad_samples=int(d["pad_samples"]),
            crc64=None if d.get("crc64") is None else int(d["crc64"]),
        )


class BlockTable(Sequence):
    """Descriptors computed on demand from the split arithmetic.

    A 1 TiB file with 512 MiB blocks is 2048 descriptors; keeping the table
    lazy means planning never allocates them unless they are iterated.
    """

    def __init__(self, file_size, block_size, fft_size, fmt, crcs=None):
        self.file_size = file_size
        self.block_size = block_size
        self.fft_size = fft_size
        self.fmt = fmt
        self._count = _ceil_div(file_size, block_size)
        if crcs is not None and len(crcs) != self._count:
            raise ValidationError(f"expected {self._count} block CRCs, got {len(crcs)}")
        self.crcs = None if crcs is None else list(crcs)

    def __len__(self) -> int:
        return self._count

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[j] for j in range(*i.indices(self._count))]
        if i < 0:
            i += self._count
        if not 0 <= i < self._count:
            raise IndexError(i)
        offset = i * self.block_size
        length = min(self.block_size, self.file_size - offset)
        bps = self.fmt.input_bytes_per_sample
        samples = length // bps
        records = _ceil_div(samples, self.fft_size)
        return BlockDescriptor(
            block_index=i,
            byte_offset=offset,
            byte_length=length,
            record_count=records,
            pad_samples=records * self.fft_size - samples,
            crc64=None if self.crcs is None else self.crcs[i],
        )


@dataclass(frozen=True)
class BlockManifest:
    input_path: Optional[str]
    input_file_size: int
    block_size: int
    fft_size: int
    sample_format: SampleFormat
    blocks: Sequence
    input_checksum: Optional[int] = None
    format_version: int = MANIFEST_VERSION

    @property
    def record_input_bytes(self) -> int:
        return self.sample_format.record_input_bytes(self.fft_size)

    @property
    def record_output_bytes(self) -> int:
        return self.sample_format.record_output_bytes(self.fft_size)

    @property
    def block_count(self) -> int:
        return len(self.blocks)

    @property
    def total_records(self) -> int:
        return _ceil_div(self.input_file_size, self.record_input_bytes)

    @property
    def total_samples(self) -> int:
        return self.input_file_size // self.sample_format.input_bytes_per_sample

    @property
    def output_file_size(self) -> int:
        return self.total_records * self.record_output_bytes

    def to_dict(self) -> dict:
        return {
            "format_version": self.format_version,
            "input_path": self.input_path,
            "input_file_size": self.input_file_size,
            "block_size": self.block_size,
            "fft_size": self.fft_size,
            "sample_format": self.sample_format.value,
            "input_checksum": self.input_checksum,
            "output_file_size": self.output_file_size,
            "blocks": [b.to_dict() for b in self.blocks],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BlockManifest":
        version = d.get("format_version")
        if version != MANIFEST_VERSION:
            raise ValidationError(f"unsupported manifest format_version {version!r}")
        fmt = SampleFormat(d["sample_format"])
        planned = split_plan(int(d["input_file_size"]), int(d["block_size"]), int(d["fft_size"]), fmt)
        blocks = [BlockDescriptor.from_dict(b) for b in d["blocks"]]
        if len(blocks) != planned.block_count:
            raise ValidationError(
                f"manifest lists {len(blocks)} blocks, split arithmetic gives {planned.block_count}"
            )
        for got, want in zip(blocks, planned.blocks):
            if (got.block_index, got.byte_offset, got.byte_length, got.record_count, got.pad_samples) != (
                want.block_index, want.byte_offset, want.byte_length, want.record_count, want.pad_samples
            ):
                raise ValidationError(f"manifest block {got.block_index} disagrees with split arithmetic")
        checksum = d.get("input_checksum")
        return cls(
            input_path=d.get("input_path"),
            input_file_size=planned.input_file_size,
            block_size=planned.block_size,
            fft_size=planned.fft_size,
            sample_format=fmt,
            blocks=blocks,
            input_checksum=None if checksum is None else int(checksum),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "BlockManifest":
        return cls.from_dict(json.loads(text))

    def save(self, path) -> None:
        _atomic_write_bytes(Path(path), self.to_json().encode())

    @classmethod
    def load(cls, path) -> "BlockManifest":
        return cls.from_json(Path(path).read_text())

    def same_layout(self, other: "BlockManifest") -> bool:
        return (
            self.input_file_size == other.input_file_size
            and self.block_size == other.block_size
            and self.fft_size == other.fft_size
            and self.sample_format == other.sample_format
            and self.input_checksum == other.input_checksum
        )


def split_plan(file_size: int, block_size: int, fft_size: int, fmt, input_path=None) -> BlockManifest:
    """Partition ``file_size`` bytes into blocks of ``block_size`` bytes.

    Pure arithmetic; no file is touched.  See ``build_manifest`` for the
    variant that also checksums a real file.
    """
    fmt = SampleFormat(fmt)
    if file_size < 1:
        raise EmptyInputError("input file is empty")
    if fft_size < 2 or fft_size & (fft_size - 1):
        raise ValidationError(f"fft_size must be a power of two >= 2, got {fft_size}")
    record_bytes = fmt.record_input_bytes(fft_size)
    if block_size < 1 or block_size % record_bytes:
        raise AlignmentError(
            f"block_size {block_size} is not a positive multiple of the record size {record_bytes}"
        )
    if file_size % fmt.input_bytes_per_sample:
        raise AlignmentError(
            f"file size {file_size} is not a multiple of the {fmt.input_bytes_per_sample}-byte sample size"
        )
    return BlockManifest(
        input_path=None if input_path is None else str(input_path),
        input_file_size=file_size,
        block_size=block_size,
        fft_size=fft_size,
        sample_format=fmt,
        blocks=BlockTable(file_size, block_size, fft_size, fmt),
    )


def build_manifest(input_path, block_size: int, fft_size: int, fmt) -> BlockManifest:
    """Plan the split of an on-disk file and record whole-file and per-block CRCs."""
    input_path = Path(input_path)
    plan = split_plan(input_path.stat().st_size, block_size, fft_size, fmt, input_path)
    crcs = []
    whole = crc64(b"")
    with open(input_path, "rb") as f:
        for desc in plan.blocks:
            block_crc = crc64(b"")
            remaining = desc.byte_length
            while remaining:
                chunk = f.read(min(remaining, _COPY_CHUNK))
                if not chunk:
                    raise IntegrityError("input shrank while building manifest", desc.byte_length, desc.byte_length - remaining)
                block_crc = crc64(chunk, block_crc)
                whole = crc64(chunk, whole)
                remaining -= len(chunk)
            crcs.append(block_crc)
    table = BlockTable(plan.input_file_size, block_size, plan.fft_size, plan.sample_format, crcs)
    return BlockManifest(
        input_path=str(input_path),
        input_file_size=plan.input_file_size,
        block_size=block_size,
        fft_size=plan.fft_size,
        sample_format=plan.sample_format,
        blocks=list(table),
        input_checksum=whole,
    )


def read_block(input_path, descriptor: BlockDescriptor, fmt, fft_size: int, verify_crc: bool = True) -> np.ndarray:
    """Read one block into a ``(record_count, fft_size)`` complex64 array.

    Real samples get a zero imaginary part; the tail of the last record is
    zero-filled.  Raises IntegrityError if the file is shorter than the
    descriptor says, or if its bytes no longer match the recorded CRC.
    """
    fmt = SampleFormat(fmt)
    d = descriptor
    buf = np.zeros((d.record_count, fft_size), dtype=np.complex64)
    n_samples = d.byte_length // fmt.input_bytes_per_sample
    with open(input_path, "rb") as f:
        f.seek(d.byte_offset)
        if fmt is SampleFormat.COMPLEX_F32:
            target = buf.reshape(-1)[:n_samples]
            raw = memoryview(target.view(np.uint8))
            got = f.readinto(raw)
        else:
            scratch = np.empty(n_samples, dtype=_LE_F4)
            raw = memoryview(scratch.view(np.uint8))
            got = f.readinto(raw)
    if got != d.byte_length:
        raise IntegrityError(
            f"input mismatch: block {d.block_index} short read, expected {d.byte_length} bytes, got {got}",
            expected=d.byte_length,
            actual=got,
        )
    if verify_crc and d.crc64 is not None:
        actual = crc64(raw)
        if actual != d.crc64:
            raise IntegrityError(
                f"input mismatch: block {d.block_index} crc {actual:#018x} != manifest {d.crc64:#018x}",
                expected=d.crc64,
                actual=actual,
            )
    if fmt is SampleFormat.COMPLEX_F32:
        if sys.byteorder == "big":
            target.byteswap(inplace=True)
    else:
        buf.reshape(-1)[:n_samples].real = scratch
    return buf


def encode_samples(samples, fmt) -> bytes:
    fmt = SampleFormat(fmt)
    a = np.asarray(samples)
    if fmt is SampleFormat.REAL_F32:
        return np.ascontiguousarray(a.real, dtype=_LE_F4).tobytes()
    return np.ascontiguousarray(a, dtype=_LE_C8).tobytes()


def decode_samples(data, fmt) -> np.ndarray:
    """Decode raw bytes into complex64 samples (real input gets zero imaginary part)."""
    fmt = SampleFormat(fmt)
    if fmt is SampleFormat.REAL_F32:
        return np.frombuffer(data, dtype=_LE_F4).astype(np.complex64)
    return np.frombuffer(data, dtype=_LE_C8).astype(np.complex64)


def part_name(byte_offset: int) -> str:
    if byte_offset < 0:
        raise ValidationError(f"byte_offset must be >= 0, got {byte_offset}")
    return f"{PART_PREFIX}{byte_offset:020d}"


@dataclass(frozen=True)
class OutputPart:
    part_name: str
    path: Path
    block_index: int
    byte_offset: int
    nbytes: int
    crc64: int


def _atomic_write_bytes(path: Path, data) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(data)
        f.flush()
        os.fsync(f.fileno())
    os.replace(tmp, path)


def write_part(output_dir, descriptor: BlockDescriptor, payload) -> OutputPart:
    """Write one block's transformed samples as an offset-named part.

    The bytes go to ``<name>.tmp`` and are renamed into place; a
    ``<name>.done`` marker is created last.  An existing part of a different
    length is a conflict; one of the same length is replaced.
    """
    output_dir = Path(output_dir)
    d = descriptor
    data = np.ascontiguousarray(payload, dtype=_LE_C8).reshape(-1)
    if data.size % d.record_count or data.size == 0:
        raise ValidationError(
            f"payload of {data.size} samples does not divide into {d.record_count} records"
        )
    name = d.part_name
    path = output_dir / name
    nbytes = data.nbytes
    if path.exists() and path.stat().st_size != nbytes:
        raise PartConflictError(
            f"{name} already exists with {path.stat().st_size} bytes, new payload is {nbytes}"
        )
    raw = memoryview(data.view(np.uint8))
    checksum = crc64(raw)
    tmp = output_dir / (name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(raw)
        f.flush()
        os.fsync(f.fileno())
    os.replace(tmp, path)
    (output_dir / (name + ".done")).touch()
    return OutputPart(name, path, d.block_index, d.byte_offset, nbytes, checksum)


def expected_part_size(manifest: BlockManifest, descriptor: BlockDescriptor) -> int:
    return descriptor.record_count * manifest.record_output_bytes


def _classify_dir(output_dir: Path, manifest: BlockManifest):
    expected = {b.part_name: b for b in manifest.blocks}
    present, done, stale, unknown = set(), set(), [], []
    for entry in os.listdir(output_dir):
        if entry in expected:
            present.add(entry)
        elif entry.endswith(".done") and entry[:-5] in expected:
            done.add(entry[:-5])
        elif entry.endswith(".tmp") and entry.split(".", 1)[0] in expected:
            stale.append(entry)
        else:
            unknown.append(entry)
    return expected, present, done, stale, unknown


def check_parts(output_dir, manifest: BlockManifest, force: bool = False):
    """Validate that every manifest block has a complete part; return them in merge order."""
    output_dir = Path(output_dir)
    expected, present, done, stale, unknown = _classify_dir(output_dir, manifest)
    if unknown and not force:
        raise UnknownFilesError(unknown)
    if stale:
        log.warning("ignoring %d unfinished .tmp file(s) in %s", len(stale), output_dir)
    missing = [b.block_index for b in manifest.blocks if b.part_name not in present or b.part_name not in done]
    if missing:
        raise MissingPartsError(missing)
    ordered = []
    for name in sorted(expected):
        desc = expected[name]
        size = (output_dir / name).stat().st_size
        want = expected_part_size(manifest, desc)
        if size != want:
            raise IntegrityError(f"{name} has {size} bytes, expected {want}", want, size)
        ordered.append(output_dir / name)
    return ordered


def parts_checksum(output_dir, manifest: BlockManifest) -> int:
    """CRC-64 of the concatenated parts, equal to the merged file's CRC."""
    crc = crc64(b"")
    for path in check_parts(output_dir, manifest, force=True):
        with open(path, "rb") as f:
            while chunk := f.read(_COPY_CHUNK):
                crc = crc64(chunk, crc)
    return crc


def merge_parts(output_dir, manifest: BlockManifest, out_path, delete_parts: bool = False, force: bool = False) -> Path:
    """Concatenate all parts in name order into ``out_path``.

    Parts are removed only after the merged file has been fully written and
    renamed into place, and only when ``delete_parts`` is set.
    """
    output_dir = Path(output_dir)
    out_path = Path(out_path)
    ordered = check_parts(output_dir, manifest, force=force)
    tmp = out_path.with_name(out_path.name + ".tmp")
    written = 0
    with open(tmp, "wb") as out:
        for path in ordered:
            with open(path, "rb") as f:
                while chunk := f.read(_COPY_CHUNK):
                    out.write(chunk)
                    written += len(chunk)
        out.flush()
        os.fsync(out.fileno())
    if written != manifest.output_file_size:
        tmp.unlink()
        raise IntegrityError(
            f"merged {written} bytes, expected {manifest.output_file_size}",
            manifest.output_file_size,
            written,
        )
    os.replace(tmp, out_path)
    if delete_parts:
        for path in ordered:
            path.unlink()
            path.with_name(path.name + ".done").unlink(missing_ok=True)
    return out_path


def file_crc64(path) -> int:
    crc = crc64(b"")
    with open(path, "rb") as f:
        while chunk := f.read(_COPY_CHUNK):
            crc = crc64(chunk, crc)
    return crc
