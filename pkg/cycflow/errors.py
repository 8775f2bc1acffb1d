"""Exception hierarchy shared by every cycflow module.

Each class carries the process exit code the CLI reports for it:
1 validation, 2 I/O, 3 numeric.
"""
from __future__ import annotations


class CycflowError(Exception):
    exit_code = 1


class ValidationError(CycflowError):
    exit_code = 1


class DimensionError(ValidationError):
    pass


class VocabularyError(ValidationError):
    pass


class AdapterTargetError(ValidationError):
    pass


class ConfigError(ValidationError):
    pass


class StorageError(CycflowError):
    exit_code = 2

    def __init__(self, message: str, path=None):
        self.path = path
        if path is not None:
            message = f"{message} ({path})"
        super().__init__(message)


class NumericError(CycflowError):
    exit_code = 3

    def __init__(self, message: str, **context):
        self.context = context
        if context:
            detail = ", ".join(f"{k}={v}" for k, v in context.items())
            message = f"{message} [{detail}]"
        super().__init__(message)
