"""Exception hierarchy shared by all ndl modules."""


class NDLError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(NDLError, ValueError):
    pass


class EmptyInputError(NDLError, ValueError):
    pass


class SymmetryError(NDLError, ValueError):
    pass


class FactorizationError(NDLError, ArithmeticError):
    """Cholesky failed; the caller should retry with a larger ridge."""


class LevelError(NDLError, IndexError):
    pass


class StatsError(NDLError, ArithmeticError):
    pass


class StaleStatsError(NDLError, ValueError):
    """A replay store was used against a model whose top width changed."""


class UnsupportedError(NDLError, ValueError):
    pass


class IdxFormatError(NDLError, ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class PairingError(NDLError, ValueError):
    pass


class ConfigError(NDLError, ValueError):
    pass


class CheckpointError(NDLError, ValueError):
    pass


class ComparisonError(NDLError, ValueError):
    pass
