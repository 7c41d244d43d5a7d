"""Exception and warning types shared across the package."""


class SarScanError(Exception):
    """Base class for all errors raised by this package."""


class InputDataError(SarScanError):
    """Invalid user input: malformed files, inconsistent shapes, bad options."""


class NumericalError(SarScanError):
    """A computation could not be carried out (degenerate data, singular system)."""


class SarScanWarning(UserWarning):
    """Non-fatal conditions worth surfacing (degenerate geometry, skipped fits)."""
