from __future__ import annotations


class MemorySimError(Exception):
    """Base class for every failure the simulator reports to the caller."""

    exit_code = 1


class ParameterError(MemorySimError, ValueError):
    exit_code = 3


class DomainError(ParameterError):
    """Non-finite input to a special function."""


class RangeError(ParameterError):
    """Requested value lies outside a sampled function's range."""


class ConsistencyError(MemorySimError, ArithmeticError):
    """A numerical self-check failed (quadrature or eigensolve misconfigured)."""

    exit_code = 4


class ConfigError(MemorySimError):
    exit_code = 2
