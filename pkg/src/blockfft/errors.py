"""Exception hierarchy shared by every blockfft module."""


class BlockFFTError(Exception):
    """Base class for all errors raised by blockfft."""


class ValidationError(BlockFFTError, ValueError):
    """Bad arguments or inconsistent configuration."""


class UnsupportedSizeError(ValidationError):
    def __init__(self, fft_size):
        self.fft_size = fft_size
        super().__init__(
            f"unsupported transform size {fft_size!r}: must be a power of two >= 2"
        )


class ShapeError(ValidationError):
    def __init__(self, expected, actual):
        self.expected = expected
        self.actual = actual
        super().__init__(f"buffer shape mismatch: expected {expected} samples, got {actual}")


class AlignmentError(ValidationError):
    pass


class EmptyInputError(ValidationError):
    pass


class IntegrityError(BlockFFTError):
    """Input on disk does not match what the manifest recorded."""

    def __init__(self, message, expected=None, actual=None):
        self.expected = expected
        self.actual = actual
        super().__init__(message)


class PartConflictError(BlockFFTError):
    pass


class MissingPartsError(BlockFFTError):
    def __init__(self, block_indices):
        self.block_indices = sorted(block_indices)
        super().__init__(f"missing output parts for blocks {self.block_indices}")


class UnknownFilesError(BlockFFTError):
    def __init__(self, names):
        self.names = sorted(names)
        super().__init__(
            f"unexpected files in output directory: {self.names} (use force to ignore)"
        )


class ResourceError(BlockFFTError):
    pass


class JobFailedError(BlockFFTError):
    """Raised when at least one block of a job did not complete."""

    def __init__(self, message, result=None):
        self.result = result
        super().__init__(message)


class ProtocolError(BlockFFTError):
    pass
