"""Exception hierarchy shared across the package.

Each class carries a short ``category`` string that the command line layer
emits in its machine-readable error records.
"""


class SstError(Exception):
    category = "error"


class ShapeError(SstError, ValueError):
    category = "shape"


class DegenerateMaskError(SstError, ValueError):
    """A softmax slice had every entry masked to -inf."""

    category = "degenerate_mask"


class ContractError(SstError, RuntimeError):
    category = "contract"


class ConfigError(SstError, ValueError):
    category = "config"


class CheckpointError(SstError):
    category = "checkpoint"


class NiftiError(SstError):
    """Malformed NIfTI input; ``offset`` is the byte position of the offending field."""

    category = "nifti"

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class UnsupportedDatatypeError(NiftiError):
    category = "unsupported_datatype"


class TrainingError(SstError, RuntimeError):
    category = "training"


class StatisticsError(SstError, ValueError):
    category = "statistics"


class DegenerateContrastError(SstError, ValueError):
    """Normalisation of a constant volume (max == min)."""

    category = "degenerate_contrast"
