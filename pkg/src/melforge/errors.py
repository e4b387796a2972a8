"""Exception hierarchy and process exit codes."""

from __future__ import annotations

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


class MelforgeError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(MelforgeError):
    """Invalid configuration, parameters, or preconditions."""

    exit_code = EXIT_CONFIG


class FormatError(MelforgeError):
    """Malformed file content (headers, truncation, unparseable rows)."""

    exit_code = EXIT_DATA


class UnsupportedError(MelforgeError):
    """Well-formed but unsupported encoding or variant."""

    exit_code = EXIT_DATA


class DataError(MelforgeError):
    """Missing or inconsistent data referenced by a manifest or cache."""

    exit_code = EXIT_DATA


class ShapeError(MelforgeError):
    """Array shape mismatch between paired inputs."""

    exit_code = EXIT_DATA


class DomainError(MelforgeError):
    """Scalar argument outside its mathematical domain."""

    exit_code = EXIT_CONFIG


class NumericError(MelforgeError):
    """Non-finite values produced where finiteness is contractual."""

    exit_code = EXIT_NUMERIC


class DivergenceError(NumericError):
    """Iteration diverged (non-finite state), with location context."""

    exit_code = EXIT_NUMERIC


class CompatibilityError(MelforgeError):
    """Checkpoint or cache incompatible with the requested configuration."""

    exit_code = EXIT_CONFIG
