"""Exception types raised across the package."""


class RfibError(Exception):
    """Base class for every error raised by rfib."""


class DimensionMismatch(RfibError, ValueError):
    pass


class NonPositiveVariance(RfibError, ValueError):
    pass


class ValidityViolation(RfibError, ValueError):
    """The closed-form Renyi divergence is undefined for these inputs.

    ``bound`` carries the largest admissible variance when one exists.
    """

    def __init__(self, message, bound=None):
        super().__init__(message)
        self.bound = bound


class QuadratureNonConvergence(RfibError, ArithmeticError):
    pass


class NonFiniteActivation(RfibError, ArithmeticError):
    pass


class NonFiniteLoss(RfibError, ArithmeticError):
    def __init__(self, message, epoch=None, batch=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch


class LengthMismatch(RfibError, ValueError):
    pass


class EmptyDataset(RfibError, ValueError):
    pass


class SingleClassTraining(RfibError, ValueError):
    pass


class MissingSubgroup(RfibError, ValueError):
    """A subgroup (or a (y, s) cell) needed by a metric has no records."""

    def __init__(self, message, cell=None):
        super().__init__(message)
        self.cell = cell


class MissingSubgroupCell(MissingSubgroup):
    pass


class LambdaOutOfRange(RfibError, ValueError):
    pass


class UndefinedITA(RfibError, ValueError):
    pass


class InvalidSpec(RfibError, ValueError):
    pass


class ConfigError(RfibError, ValueError):
    pass


class ParseError(RfibError, ValueError):
    def __init__(self, message, line=None):
        super().__init__(message)
        self.line = line


class NonBinaryLabel(ParseError):
    pass


class CheckpointError(RfibError, ValueError):
    pass
