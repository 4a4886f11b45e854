"""Exception hierarchy. Each class carries a short category used by the CLI."""


class MMHapticError(Exception):
    category = "error"


class ConfigurationError(MMHapticError, ValueError):
    category = "config"


class EmptyInputError(MMHapticError, ValueError):
    category = "input"


class InputError(MMHapticError, ValueError):
    category = "input"


class DomainError(MMHapticError, ValueError):
    category = "domain"


class DimensionError(MMHapticError, ValueError):
    category = "dimension"


class DegeneratePoseError(MMHapticError, ValueError):
    category = "pose"


class ExtractionError(MMHapticError, RuntimeError):
    category = "extraction"


class SolverError(MMHapticError, RuntimeError):
    category = "solver"

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class ModelError(MMHapticError, RuntimeError):
    """Raised when the augmented normal matrix fails its positive-definite check."""

    category = "model"

    def __init__(self, message, smallest_pivot=None):
        super().__init__(message)
        self.smallest_pivot = smallest_pivot


class CoverageError(MMHapticError, RuntimeError):
    """A pointshell point is inside the surface but outside the voxel grid."""

    category = "coverage"

    def __init__(self, message, sample_index=None):
        super().__init__(message)
        self.sample_index = sample_index
