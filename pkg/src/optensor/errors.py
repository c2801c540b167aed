"""Exception hierarchy. ``category`` feeds the CLI's ``error:<category>:`` prefix."""


class OptensorError(Exception):
    category = "internal"


class DimensionError(OptensorError, ValueError):
    category = "dimension"


class UsageError(OptensorError, ValueError):
    category = "usage"


class DomainError(OptensorError, ValueError):
    category = "domain"


class NoSolutionError(OptensorError, ValueError):
    category = "no_solution"


class ConvergenceError(OptensorError, RuntimeError):
    category = "convergence"


class SchemaError(OptensorError, ValueError):
    category = "schema"


class RowError(OptensorError, ValueError):
    category = "row"

    def __init__(self, line, message):
        super().__init__(f"line {line}: {message}")
        self.line = line


class DataError(OptensorError, ValueError):
    category = "data"


class FormatError(OptensorError, ValueError):
    category = "format"


class IntegrityError(OptensorError, ValueError):
    category = "integrity"


class TrainingError(OptensorError, RuntimeError):
    category = "training"
