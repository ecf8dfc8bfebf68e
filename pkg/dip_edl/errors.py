class DIPError(Exception):
    """Base class for every error raised by dip_edl."""


class DomainError(DIPError, ValueError):
    """An argument lies outside the domain of the operation."""


class DimensionMismatchError(DIPError, ValueError):
    def __init__(self, what: str, expected: object, got: object) -> None:
        self.what = what
        self.expected = expected
        self.got = got
        super().__init__(f"Dimension mismatch for {what}: expected {expected}, got {got}")


class NonFiniteEvidenceError(DIPError, ArithmeticError):
    """Raised when a pseudo-count factor or their product is not finite."""

    def __init__(self, factor: str) -> None:
        self.factor = factor
        super().__init__(f"Non-finite evidence, offending factor: {factor}")


class TrainingDivergedError(DIPError, ArithmeticError):
    def __init__(self, epoch: int, loss: float) -> None:
        self.epoch = epoch
        self.loss = loss
        super().__init__(f"Non-finite loss {loss} at epoch {epoch}")


class DegenerateEstimatorError(DIPError, ValueError):
    """A fitted estimator has no spread to normalize by."""


class DatasetFormatError(DIPError, ValueError):
    def __init__(self, line: int, message: str) -> None:
        self.line = line
        super().__init__(f"line {line}: {message}")


class ConfigError(DIPError, ValueError):
    def __init__(self, key: str, message: str) -> None:
        self.key = key
        super().__init__(f"{key}: {message}")


class CheckpointError(DIPError, ValueError):
    """Checkpoint file is malformed or does not match the data."""
