"""Exception hierarchy shared by every module of the package."""


class DpdError(Exception):
    """Base class for all errors raised by dpdllb."""


class ConfigError(DpdError, ValueError):
    """An invalid configuration value (non-positive rate, T = 0, ...)."""


class ConstraintError(DpdError, ValueError):
    """A parameter vector violates its model's domain."""


class DegenerateDataError(DpdError, ValueError):
    """Data for which a statistic needed by an estimator is undefined."""

    def __init__(self, statistic, message=None):
        self.statistic = statistic
        super().__init__(message or f"degenerate data: {statistic} is undefined")


class ShapeError(DpdError, ValueError):
    """Arrays whose lengths or dimensions do not agree."""


class UnsupportedModelError(DpdError, TypeError):
    """The model lacks a capability the caller requires (e.g. a closed form)."""


class DivergenceError(DpdError, FloatingPointError):
    """A non-finite gradient or iterate appeared during optimization."""

    def __init__(self, iteration, rows=None, message=None):
        self.iteration = iteration
        self.rows = rows
        if message is None:
            message = f"non-finite gradient at iteration {iteration}"
            if rows is not None:
                message += f" (batch rows {list(rows)[:10]})"
        super().__init__(message)


class ReplicateError(DpdError, RuntimeError):
    """A bootstrap replicate failed twice (original seed and one retry)."""

    def __init__(self, replicate, cause=None):
        self.replicate = replicate
        self.cause = cause
        msg = f"bootstrap replicate {replicate} failed after one retry"
        if cause is not None:
            msg += f": {cause}"
        super().__init__(msg)


class InitializationError(DpdError, RuntimeError):
    """A maximum-likelihood initializer did not converge."""


class MixingError(DpdError, RuntimeError):
    """An MCMC chain accepted no proposal during burn-in."""


class SingularityError(DpdError, ValueError):
    """A matrix that must be inverted is numerically singular."""


class BudgetError(DpdError, RuntimeError):
    """A grid quadrature would exceed its evaluation budget."""


class InsufficientDrawsError(DpdError, ValueError):
    """Too few posterior draws for the requested summary."""


class EmptyInputError(DpdError, ValueError):
    """An input file contains no data rows."""


class ParseError(DpdError, ValueError):
    """A malformed input cell; carries its row and column."""

    def __init__(self, row, column, value):
        self.row = row
        self.column = column
        self.value = value
        super().__init__(f"row {row}, column {column}: cannot parse {value!r} as a number")
