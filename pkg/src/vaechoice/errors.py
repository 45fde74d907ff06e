"""Exception hierarchy.

Every error raised by the package derives from :class:`VaeChoiceError`.  The
three mid-level classes map onto the CLI exit codes (2 usage/config, 3
data/schema, 4 numerical failure).
"""


class VaeChoiceError(Exception):
    exit_code = 1


class ConfigError(VaeChoiceError, ValueError):
    exit_code = 2


class DataError(VaeChoiceError, ValueError):
    exit_code = 3


class NumericalError(VaeChoiceError, ArithmeticError):
    exit_code = 4


class ShapeError(ConfigError):
    """Operand dimensions do not agree."""


class ParameterError(ConfigError):
    pass


class ContractError(ConfigError):
    """A function was used outside its contract (e.g. non-scalar output)."""


class NestStructureError(ConfigError):
    pass


class UnsupportedCheckError(ConfigError):
    pass


class SpecError(ConfigError):
    """A model family is missing inputs it requires (BC values, nests)."""


class SchemaError(DataError):
    pass


class ParseError(DataError):
    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class ValidationError(DataError):
    pass


class CheckpointVersionError(DataError):
    pass


class DegenerateChoiceSetError(NumericalError):
    """No alternative in the choice set has positive availability."""


class DivergenceError(NumericalError):
    def __init__(self, message, iteration):
        super().__init__(message)
        self.iteration = iteration


class FilterInfeasibleError(NumericalError):
    def __init__(self, mode, threshold, draws):
        super().__init__(
            f"filter mode {mode!r} with threshold {threshold:g} accepted too few "
            f"alternatives after {draws} draws"
        )
        self.mode = mode
        self.threshold = threshold
        self.draws = draws
