import numpy as np
import pytest

from blockfft import block_io, signals

_ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance_log():
    """Collects one PASS/FAIL line per acceptance criterion for the terminal summary."""

    def record(criterion, passed, detail=""):
        status = passed if isinstance(passed, str) else ("PASS" if passed else "FAIL")
        _ACCEPTANCE_LINES.append(f"[{status}] {criterion}: {detail}")

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def make_input(path, samples, mode="complex-f32", signal="random:7", fft_size=1024):
    signals.generate(path, samples, mode, signal, fft_size)
    return path


@pytest.fixture
def small_job(tmp_path):
    """4 blocks of 64 KiB complex-f32 random data, fft_size 256."""
    src = make_input(tmp_path / "in.bin", 4 * 8192, signal="random:3", fft_size=256)
    manifest = block_io.build_manifest(src, 65536, 256, "complex-f32")
    return src, manifest
