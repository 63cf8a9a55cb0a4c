"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: configuration problems exit 2, data
problems 3, backend problems 4, partial/incomplete runs 5.
"""

from __future__ import annotations


class CytodiffError(Exception):
    """Base class for all package errors."""


class ConfigError(CytodiffError):
    """Invalid configuration, parameters, or preconditions."""


class DataError(CytodiffError):
    """Problems with corpora, manifests, splits, or image files."""


class BackendError(CytodiffError):
    """A generation backend failed fatally (bad adapter, protocol error)."""


class RetryableBackendError(BackendError):
    """Transient backend failure (unreachable host, 5xx); safe to retry."""


class PartialBatchError(BackendError):
    """A generation batch failed partway through.

    Carries the completed portion so a caller can resume; per-image seeds
    are derived from the request seed, so resumed images are identical to
    what a clean run would have produced.
    """

    def __init__(self, message: str, partial_batch=None, completed_indices=()):
        super().__init__(message)
        self.partial_batch = partial_batch
        self.completed_indices = tuple(completed_indices)


class PartialRunError(CytodiffError):
    """An experiment aborted after some folds/points completed."""

    def __init__(self, message: str, completed=(), outputs=None):
        super().__init__(message)
        self.completed = tuple(completed)
        self.outputs = outputs


class ContainerError(CytodiffError):
    """Base for binary container (adapter / checkpoint) file problems."""


class ContainerFormatError(ContainerError):
    """File does not look like one of our containers (bad magic, garbage)."""


class ContainerVersionError(ContainerError):
    """Container format version is not supported."""


class TruncatedContainerError(ContainerError):
    """Container is shorter than its declared contents."""


class ChecksumError(ContainerError):
    """Trailing CRC32 does not match the container body."""


class ShapeConsistencyError(ContainerError):
    """Declared shapes/rank disagree with the stored payload layout."""
