#!/usr/bin/env python3
"""
Error types shared by every module
Each class carries the CLI exit status it maps to
"""

from typing import Optional, Sequence, Tuple


EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_BACKEND = 4
EXIT_METRIC = 5


class SimulMTError(Exception):
    """Base class for all errors raised by this package"""

    exit_code = EXIT_UNEXPECTED


# Usage errors

class ConfigError(SimulMTError, ValueError):
    """Invalid or inconsistent configuration"""

    exit_code = EXIT_USAGE


class InvalidInputError(SimulMTError, ValueError):
    """An operation received input violating its precondition"""

    exit_code = EXIT_USAGE


class EmptySourceError(InvalidInputError):
    """A source sentence (or revealed prefix) has no words"""


# IO / format errors

class _LineError(SimulMTError):
    exit_code = EXIT_IO

    def __init__(self, message: str, path: Optional[str] = None, line: Optional[int] = None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        elif line is not None:
            where = f"line {line}: "
        super().__init__(f"{where}{message}")


class CorpusFormatError(_LineError):
    """Malformed TSV corpus line"""


class TraceFormatError(_LineError):
    """Malformed trace JSONL line"""


class FixtureFormatError(_LineError):
    """Malformed or invalid scripted-backend fixture entry"""


# Backend errors

class BackendError(SimulMTError):
    """A generation request failed"""

    exit_code = EXIT_BACKEND

    def __init__(self, message: str, request_id: Optional[str] = None):
        self.request_id = request_id
        prefix = f"[{request_id}] " if request_id else ""
        super().__init__(f"{prefix}{message}")


class BackendTransportError(BackendError):
    """Connection refused, HTTP error status, broken transfer"""


class BackendTimeoutError(BackendError):
    """The backend did not answer within the configured timeout"""


class MalformedResponseError(BackendError):
    """The backend answered with something that violates the wire schema"""


class FixtureMissError(BackendError):
    """The scripted backend has no entry for (id, cursor)"""

    def __init__(self, key: Tuple[str, int], request_id: Optional[str] = None):
        self.key = key
        super().__init__(f"no fixture entry for id={key[0]!r} cursor={key[1]}", request_id)


class SessionError(SimulMTError):
    """A streaming session aborted"""

    exit_code = EXIT_BACKEND

    def __init__(self, message: str, session_id: str, invocation_index: Optional[int] = None,
                 cause: Optional[BaseException] = None):
        self.session_id = session_id
        self.invocation_index = invocation_index
        self.cause = cause
        at = f" at invocation {invocation_index}" if invocation_index is not None else ""
        super().__init__(f"session {session_id}{at}: {message}")
        if isinstance(cause, SimulMTError):
            self.exit_code = cause.exit_code


class EmissionCapError(SessionError):
    """The session committed more target tokens than max_target_tokens allows"""


# Metric errors

class MetricError(SimulMTError, ValueError):
    """A metric is undefined for its input, or inputs are misaligned"""

    exit_code = EXIT_METRIC


class MissingReferenceError(MetricError):
    """Some trace ids have no reference (or vice versa)"""

    def __init__(self, missing: Sequence[str], what: str = "reference"):
        self.missing = list(missing)
        shown = ", ".join(self.missing[:10])
        more = f" ... and {len(self.missing) - 10} more" if len(self.missing) > 10 else ""
        super().__init__(f"missing {what} for id(s): {shown}{more}")
