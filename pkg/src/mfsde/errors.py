"""Exception types shared across the package."""


class MfsdeError(Exception):
    """Base class for all package errors."""


class EvaluationError(MfsdeError):
    """A model or functional produced non-finite values.

    Carries enough context (time, offending point or atom index) to locate
    the bad evaluation.
    """

    def __init__(self, message, t=None, where=None):
        super().__init__(message)
        self.t = t
        self.where = where


class SingularDiffusionError(EvaluationError):
    """The diffusion inverse failed or returned non-finite entries."""


class DivergenceError(MfsdeError):
    """A particle trajectory left the finite range during time stepping."""

    def __init__(self, step, particle, message=None):
        msg = message or f"non-finite state at step {step}, particle {particle}"
        super().__init__(msg)
        self.step = step
        self.particle = particle


class ConfigError(MfsdeError):
    """Invalid experiment configuration; ``field`` is the dotted path."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field
