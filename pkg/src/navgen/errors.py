"""Exception types shared across the package.

Every error the CLI maps to an exit code derives from NavgenError; the
class decides the code (config 2, data 3, numeric 4).
"""


class NavgenError(Exception):
    exit_code = 1


class ConfigError(NavgenError):
    """Invalid configuration. Collects all offending keys, not just the first."""

    exit_code = 2

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class DataError(NavgenError):
    exit_code = 3


class WorldLookupError(DataError):
    """Unknown viewpoint or object id."""


class GenerationExhausted(DataError):
    """Episode synthesis gave up after max_tries draws."""


class SchemaError(DataError):
    """PromptParts incompatible with the task kind's schema."""


class ParseError(DataError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class FormatVersionError(DataError):
    def __init__(self, expected, found):
        self.expected = expected
        self.found = found
        super().__init__(f"unsupported format version: expected {expected}, found {found}")


class MagicError(DataError):
    def __init__(self, expected, found):
        super().__init__(f"bad file magic: expected {expected!r}, found {found!r}")


class ChecksumError(DataError):
    def __init__(self, message="checksum mismatch (file truncated or corrupt)"):
        super().__init__(message)


class ShapeError(NavgenError):
    exit_code = 4


class DecodeError(NavgenError):
    exit_code = 4


class NumericError(NavgenError):
    """Non-finite value during training; carries diagnostics."""

    exit_code = 4

    def __init__(self, message, step=None, batch_hash=None):
        self.step = step
        self.batch_hash = batch_hash
        extra = []
        if step is not None:
            extra.append(f"step={step}")
        if batch_hash is not None:
            extra.append(f"batch_hash={batch_hash}")
        if extra:
            message = f"{message} ({', '.join(extra)})"
        super().__init__(message)


class EmptyReportError(NavgenError):
    exit_code = 3
