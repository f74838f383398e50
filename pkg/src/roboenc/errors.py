"""Exception hierarchy shared by every roboenc module."""


class RoboencError(Exception):
    """Base class for all library errors."""


class ShapeError(RoboencError):
    """Operands have incompatible shapes."""


class NumericError(RoboencError):
    """A NaN or Inf appeared where only finite values are allowed."""


class ContractError(RoboencError):
    """An argument violates a documented precondition."""


class DegenerateInput(RoboencError):
    """Orthogonalization hit a (numerically) linearly dependent row."""


class GenerationError(RoboencError):
    """Random generation kept producing degenerate draws."""


class FormatError(RoboencError):
    """A file does not match its expected binary or JSON layout."""


class CorruptCodebook(RoboencError):
    """A loaded codebook fails its orthogonality or norm invariants."""


class TrainingDiverged(RoboencError):
    """Training loss became non-finite or blew past the divergence guard."""

    def __init__(self, epoch: int, message: str = ""):
        self.epoch = epoch
        super().__init__(message or f"training diverged at epoch {epoch}")
