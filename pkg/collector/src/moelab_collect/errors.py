"""Exception types raised during collection."""


class CollectorError(Exception):
    """Base class for collection failures."""


class UnsupportedArchitecture(CollectorError):
    """No router adapter for this checkpoint's architecture, or the loaded
    model exposed no hookable router modules.

    The adapter list is a deliberate allowlist: hook points differ per
    model family, so anything unknown is refused rather than guessed at.
    """


class TokenizationUnderflow(CollectorError):
    """Every source document tokenized to fewer than seq_len tokens, so
    nothing could be collected."""


class StreamNotSupported(CollectorError):
    """Predicted or ground-truth token streams were requested from an
    adapter that cannot produce them."""
