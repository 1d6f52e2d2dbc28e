"""Exception types shared across the toolkit.

Every error raised on a contract violation derives from VoxloopError so
callers (and the CLI) can map failures to exit codes without matching on
message strings.
"""


class VoxloopError(Exception):
    """Base class for all toolkit errors."""


class EmptyInput(VoxloopError):
    """An operation received an empty cloud, voxel set, or file."""


class InvalidPoint(VoxloopError):
    """A point coordinate is NaN or infinite."""

    def __init__(self, index: int, message: str | None = None):
        self.index = index
        super().__init__(message or f"non-finite coordinate at point index {index}")


class NotARotation(VoxloopError):
    """A 3x3 matrix is not orthonormal with determinant +1."""


class ShapeError(VoxloopError):
    """Tensor or array shapes are incompatible for the requested op."""


class NotScalar(VoxloopError):
    """backward() was called on a non-scalar tensor."""


class GraphConsumed(VoxloopError):
    """backward() was called twice on the same forward graph."""


class NotNormalized(VoxloopError):
    """Feature rows were expected to have unit L2 norm."""


class InputMismatch(VoxloopError):
    """Paired inputs (e.g. cloud and its voxelization) do not correspond."""


class NoMatches(VoxloopError):
    """Registration was asked to run with an empty set of voxel pairs."""


class Underdetermined(VoxloopError):
    """Fewer than three correspondences were given to the rigid solver."""


class DegenerateGeometry(VoxloopError):
    """Correspondence geometry is rank-deficient; no unique rotation exists."""


class OrderError(VoxloopError):
    """Frames arrived out of sequence order."""


class NotConfigured(VoxloopError):
    """A required model or checkpoint is missing."""


class FormatError(VoxloopError):
    """A data file violates its wire format."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"{message} (line {line})"
        super().__init__(message)


class NumericalFailure(VoxloopError):
    """Training or estimation produced NaN/Inf and aborted."""
