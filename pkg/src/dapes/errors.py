"""Shared error types."""


class DomainError(ValueError):
    """An argument is outside the formula's or operation's domain."""


class LengthMismatch(ValueError):
    """Bitmaps of different lengths (or collections) were combined."""
