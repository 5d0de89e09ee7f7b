"""Exception classes shared across the package.

The CLI maps these onto exit codes: InputError -> 1, NumericError -> 2.
"""


class CoxRateError(Exception):
    """Base class for package errors."""


class InputError(CoxRateError):
    """Invalid input data, schema, configuration, or missing artifact."""


class NumericError(CoxRateError):
    """Numerical failure: non-convergence, singular matrix, overflow."""
