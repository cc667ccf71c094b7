"""Shared exception types for the whole toolchain."""


class PplError(Exception):
    """Base class for all errors raised by this package."""


class SyntaxErrorPpl(PplError):
    """Lexing or parsing failure, with a source position."""

    def __init__(self, message, line, col):
        super().__init__(f"{line}:{col}: {message}")
        self.message = message
        self.line = line
        self.col = col


class DesugarError(PplError):
    """Surface syntax that cannot be lowered to the core calculus."""


class AnalysisError(PplError):
    """Static analysis was given malformed input (e.g. unlabeled terms)."""


class RuntimeErrorPpl(PplError):
    """Dynamic type error or invalid operation during evaluation."""

    def __init__(self, message, span=None):
        if span is not None:
            message = f"{span[0]}:{span[1]}: {message}"
        super().__init__(message)
        self.span = span


class InferenceError(PplError):
    """Inference cannot proceed (e.g. all particles have zero likelihood)."""


class AlignmentError(InferenceError):
    """Aligned SMC observed a non-homogeneous particle population.

    This signals that a supposedly aligned weight was not executed by every
    particle, i.e. the static analysis result was unsound for this program.
    """

    def __init__(self, particle_index, detail):
        super().__init__(
            f"particle {particle_index} violates alignment: {detail}"
        )
        self.particle_index = particle_index
