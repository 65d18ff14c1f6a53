"""Exception hierarchy shared across the package."""


class MvgamError(ValueError):
    """Base class for all recoverable input and model errors."""


class ParseError(MvgamError):
    """Malformed input file."""


class SpecError(MvgamError):
    """Invalid model specification."""


class NotTransductiveError(MvgamError):
    """Smoother fails rho(S_UU) < 1."""


class SaturatedError(MvgamError):
    """A selection criterion has a zero denominator."""
