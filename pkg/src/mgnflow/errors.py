"""Exception hierarchy shared by every stage of the pipeline."""


class MgnFlowError(Exception):
    """Base class for all package errors."""


class InvalidArgument(MgnFlowError, ValueError):
    pass


class MeshingError(MgnFlowError):
    def __init__(self, message, seed_index=None, seed=None):
        if seed_index is not None:
            message = f"{message} (seed #{seed_index} at {tuple(float(c) for c in seed)})"
        super().__init__(message)
        self.seed_index = seed_index
        self.seed = seed


class DegenerateGeometry(MgnFlowError):
    pass


class FactorizationError(MgnFlowError):
    pass


class IllPosedProblem(MgnFlowError):
    pass


class NumericalBlowup(MgnFlowError):
    """Raised when a solver or training loop produces non-finite numbers."""

    def __init__(self, message, where=None):
        super().__init__(message if where is None else f"{message} [{where}]")
        self.where = where


class InvalidConfig(MgnFlowError, ValueError):
    pass


class DegenerateStats(MgnFlowError):
    pass


class ShapeError(MgnFlowError, ValueError):
    pass


class IncompatibleArtifacts(MgnFlowError):
    """Checkpoint and dataset were produced under different configurations."""
