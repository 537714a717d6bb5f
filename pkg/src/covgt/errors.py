"""Exception hierarchy. Every error carries the CLI exit code it maps to."""


class CovgtError(Exception):
    exit_code = 1


class ConfigError(CovgtError, ValueError):
    """Inconsistent or invalid configuration (shapes, head counts, keys)."""

    exit_code = 2


class ValidationError(CovgtError, ValueError):
    """Input data violates a documented invariant."""

    exit_code = 2


class InvalidDetectionError(ValidationError):
    pass


class DataError(ValidationError):
    pass


class FeaturePackError(ValidationError):
    code = "pack_error"


class BadMagicError(FeaturePackError):
    code = "bad_magic"


class TruncatedPackError(FeaturePackError):
    code = "truncated"


class NonFiniteError(FeaturePackError):
    code = "non_finite"


class NumericalError(CovgtError, ArithmeticError):
    """Divergence (NaN/inf loss) or failed gradient check."""

    exit_code = 3
