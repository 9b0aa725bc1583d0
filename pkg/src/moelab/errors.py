"""Exception types shared across the toolkit."""


class MoelabError(Exception):
    """Base class for all toolkit errors."""


# --- codec errors ---------------------------------------------------------

class BadMagic(MoelabError):
    """Input does not start with the trace-file magic bytes."""


class UnsupportedVersion(MoelabError):
    """Trace file declares a format version this build cannot read."""


class Truncated(MoelabError):
    """Byte stream ended before the declared payload was complete."""


class ParseError(MoelabError):
    """Malformed JSONL input.

    Carries the 1-based line number of the offending line.
    """

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class InvariantViolation(MoelabError):
    """A trace violates its structural invariants.

    Raised by the codecs; `validate` returns the same information as a
    list instead of raising.  Coordinates identify the first offending
    (sequence, layer, token) when applicable.
    """

    def __init__(self, message: str, sequence=None, layer=None, token=None):
        loc = []
        if sequence is not None:
            loc.append(f"sequence {sequence}")
        if layer is not None:
            loc.append(f"layer {layer}")
        if token is not None:
            loc.append(f"token {token}")
        where = " @ " + ", ".join(loc) if loc else ""
        super().__init__(message + where)
        self.sequence = sequence
        self.layer = layer
        self.token = token


# --- metric errors --------------------------------------------------------

class InvalidSegmentLength(MoelabError):
    """Segment length must be a positive integer."""


class ExpertOutOfRange(MoelabError):
    """Expert key does not exist in the trace header."""


class UndefinedSrp(MoelabError):
    """The expert (or group) is never activated, so best-F1 is 0/0."""


class EmptyGroup(MoelabError):
    """A group operation was given no experts."""


class EmptyTrace(MoelabError):
    """The trace contains no tokens."""


class UndefinedCV(MoelabError):
    """Domain CV needs at least two domains and a nonzero mean rate."""


class MissingTokenStream(MoelabError):
    """The requested token stream (predicted / ground-truth) is absent."""


class UndefinedScore(MoelabError):
    """Vocabulary specialization is undefined for this expert."""


class DegenerateInput(MoelabError):
    """Correlation input has fewer than 3 pairs or zero variance."""


class BudgetExceeded(MoelabError):
    """Brute-force enumeration would exceed the configured budget."""
