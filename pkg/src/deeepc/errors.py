"""Exception types shared across the package."""


class DeeepcError(Exception):
    """Base class for all package-specific errors."""


class DimensionMismatch(DeeepcError):
    pass


class LengthMismatch(DeeepcError):
    pass


class DepthExceedsLength(DeeepcError):
    pass


class InsufficientHistory(DeeepcError):
    pass


class MissingColumn(DeeepcError):
    pass


class NonNumericCell(DeeepcError):
    def __init__(self, row: int, col: str, value: str = ""):
        self.row = row
        self.col = col
        super().__init__(f"non-numeric cell at row {row}, column {col!r}: {value!r}")


class EmptyFile(DeeepcError):
    pass


class NotControllable(DeeepcError):
    pass


class NotPSD(DeeepcError):
    pass


class Infeasible(DeeepcError):
    pass


class MissingIni(DeeepcError):
    pass


class NonFiniteLoss(DeeepcError):
    def __init__(self, epoch: int, detail: str = ""):
        self.epoch = epoch
        super().__init__(f"non-finite loss at epoch {epoch}: {detail}")


class CollapseDetected(DeeepcError):
    pass


class StateDiverged(DeeepcError):
    pass


class PlantFault(DeeepcError):
    pass


class QuadratureTooCoarse(DeeepcError):
    pass


class InvalidConfig(DeeepcError):
    pass
