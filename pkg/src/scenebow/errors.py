"""Exception types shared across the package.

``DataError`` and its subclasses cover problems with user-supplied inputs
(datasets, annotation files, stores); the CLI maps them to exit code 2.
Contract violations in library calls raise plain ``ValueError``.
"""


class SceneBowError(Exception):
    """Base class for all package-specific errors."""


class DataError(SceneBowError):
    """Invalid or missing input data."""


class ManifestError(DataError):
    """Dataset layout or manifest file cannot be ingested."""


class AnnotationError(DataError):
    """Region annotation file is malformed."""


class DecodeError(DataError):
    """Image bytes cannot be decoded."""


class StoreError(DataError):
    """Binary store (descriptors, vocabularies, features, index) is corrupt."""


class DescriptorWindowError(SceneBowError):
    """Keypoint support window does not fit inside the image."""


class UsageError(SceneBowError):
    """Bad command-line invocation; the CLI maps this to exit code 1."""
