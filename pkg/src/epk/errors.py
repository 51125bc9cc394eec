"""Exception hierarchy shared by the library and the CLI.

Each class carries the process exit code the CLI maps it to:
2 for validation problems, 3 for numerical failures, 4 for I/O and
file-format problems.
"""


class EpkError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class ConfigurationError(EpkError):
    """Invalid model/experiment configuration or argument combination."""

    exit_code = 2


class InputError(EpkError):
    """Malformed runtime input (bad shapes, labels not one-hot, t out of range)."""

    exit_code = 2


class FingerprintMismatch(EpkError):
    """Trajectory and dataset fingerprints disagree.

    Kernel coefficients only decompose the training path they were trained
    on, so every path-kernel operation refuses mismatched data.
    """

    exit_code = 2


class ReductionRefused(EpkError):
    """Per-step sample coefficients are not constant; no single kernel machine exists."""

    exit_code = 2


class NumericalError(EpkError):
    """Divergence, non-finite values, or failed factorizations."""

    exit_code = 3


class FormatError(EpkError):
    """Corrupt or unrecognized file content; message names the offset where known."""

    exit_code = 4
