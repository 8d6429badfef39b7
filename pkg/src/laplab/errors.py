"""Exception hierarchy shared by all laplab modules."""


class LaplabError(Exception):
    """Base class for every error raised by laplab."""


class RefusedError(LaplabError, ValueError):
    """A precondition of an operation is not met; the computation was not attempted."""


class NumericalFailure(LaplabError, RuntimeError):
    """An iterative or direct solver did not deliver a certified answer."""


class ConfigError(LaplabError, ValueError):
    """Malformed configuration or potential identifier."""
