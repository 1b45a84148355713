"""Exception hierarchy shared by every pnbench module."""


class PnbenchError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(PnbenchError, ValueError):
    def __init__(self, op, *shapes):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        desc = " vs ".join(str(s) for s in self.shapes)
        super().__init__(f"{op}: incompatible shapes {desc}")


class DomainError(PnbenchError, ValueError):
    """An operand lies outside the mathematical domain of an operation."""


class ContractError(PnbenchError, ValueError):
    """A documented precondition was violated by the caller."""


class NumericError(PnbenchError, ArithmeticError):
    """A computation produced non-finite values."""


class ModelFileError(PnbenchError, IOError):
    pass


class CorruptFileError(ModelFileError):
    pass


class VersionError(ModelFileError):
    pass


class TrainingError(PnbenchError, RuntimeError):
    def __init__(self, message, epoch=None):
        self.epoch = epoch
        if epoch is not None:
            message = f"{message} (epoch {epoch})"
        super().__init__(message)


class AttackError(PnbenchError, RuntimeError):
    pass


class ConfigError(PnbenchError, ValueError):
    pass


class CSVParseError(PnbenchError, ValueError):
    def __init__(self, message, row=None, col=None):
        self.row = row
        self.col = col
        where = []
        if row is not None:
            where.append(f"row {row}")
        if col is not None:
            where.append(f"col {col}")
        if where:
            message = f"{message} at {', '.join(where)}"
        super().__init__(message)
