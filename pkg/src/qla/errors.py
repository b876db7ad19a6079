"""Exception hierarchy shared by all qla modules."""


class QLAError(Exception):
    """Base class for errors raised by qla."""


class DomainError(QLAError, ValueError):
    """A parameter or local coordinate lies outside the admissible set."""


class EvaluationError(QLAError, ArithmeticError):
    """A random-field evaluator returned a non-finite value."""


class ModelError(QLAError, ValueError):
    """Invalid model definition."""


class ProfileError(QLAError, ValueError):
    """A condition profile violates the exponent inequalities."""


class OptimizerError(QLAError, RuntimeError):
    """Every optimizer start failed to converge."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or []


class QuadratureError(QLAError, RuntimeError):
    """Quadrature self-check failed under strict mode."""


class QuadratureWarning(UserWarning):
    """Quadrature self-check exceeded its tolerance."""


class ConfigError(QLAError, ValueError):
    """Malformed or invalid experiment configuration."""

    def __init__(self, message, key=None, line=None):
        where = ""
        if key is not None:
            where += f" [key '{key}'"
            where += f", line {line}]" if line is not None else "]"
        super().__init__(message + where)
        self.key = key
        self.line = line
