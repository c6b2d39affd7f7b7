"""
errors.py - exception hierarchy shared by every module of the package.

ConfigError and DataError are the two families the CLI maps to exit codes
(2 and 3 respectively); everything else signals a programming or protocol
mistake by the caller.
"""

from typing import Any, Dict, Optional


class CmhError(Exception):
    """root of all errors raised by this package"""


class ConfigError(CmhError, ValueError):
    """invalid configuration value or combination of values"""


class DataError(CmhError):
    """input data could not be read or does not meet the protocol"""


class ParseError(DataError):
    def __init__(self, line_no: int, message: str):
        super().__init__(f"ERROR: line {line_no}: {message}")
        self.line_no = line_no


class EmptyInputError(DataError):
    pass


class SamplingError(DataError):
    pass


class MissingNodeError(CmhError, KeyError):
    def __init__(self, node: Any):
        super().__init__(f"ERROR: node {node!r} is not in the graph")
        self.node = node

    def __str__(self) -> str:
        return self.args[0]


class SelfLoopError(CmhError, ValueError):
    pass


class IneligibleTargetError(CmhError, ValueError):
    pass


class InvalidActionError(CmhError, ValueError):
    pass


class ProtocolError(CmhError, RuntimeError):
    pass


class ExhaustedError(CmhError, RuntimeError):
    pass


class TrainingError(CmhError, RuntimeError):
    def __init__(self, message: str, diagnostics: Optional[Dict[str, float]] = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
