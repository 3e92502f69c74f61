"""Exception hierarchy shared by all modules."""


class MTInstructError(Exception):
    """Base class for every error raised by this package."""


class ParseError(MTInstructError, ValueError):
    """Malformed text input.

    ``offset`` is the byte offset (UTF-8) into the parsed string at which
    the problem was detected.
    """

    kind = "syntax"

    def __init__(self, message, offset=0, text=None):
        self.offset = offset
        self.text = text
        super().__init__(f"{message} (at byte {offset})")

    @staticmethod
    def byte_offset(text, index):
        return len(text[:index].encode("utf-8"))


class BoxSyntaxError(ParseError):
    kind = "box-syntax"


class BoxRangeError(ParseError):
    kind = "box-range"


class BoxOrderError(ParseError):
    kind = "box-order"


class TrailingGarbageError(ParseError):
    kind = "trailing"


class PromptSyntaxError(ParseError):
    kind = "prompt-syntax"


class UnknownIdentifierError(ParseError):
    kind = "unknown-identifier"


class MarkupError(ParseError):
    kind = "markup"


class OutOfRangeError(MTInstructError, ValueError):
    """A pixel box that does not lie inside its image."""

    def __init__(self, coordinate, value, limit):
        self.coordinate = coordinate
        self.value = value
        self.limit = limit
        super().__init__(f"{coordinate}={value!r} outside [0, {limit}]")


class ValidationError(MTInstructError, ValueError):
    """A value violates a type invariant."""


class SchemaError(MTInstructError, ValueError):
    """A JSONL record does not conform to its schema."""

    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"{line}: "
        elif where:
            where += " "
        super().__init__(f"{where}{message}")


class PlanValidationError(MTInstructError, ValueError):
    """A stage plan failed structural or inclusion-matrix checks."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class ConfigError(MTInstructError, ValueError):
    """Bad configuration (unknown benchmark, lexicon mismatch, ...)."""
