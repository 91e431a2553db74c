"""
Exception types shared across the package.

Each stage raises its own subclass so the CLI can tell usage problems
(exit 1) from runtime failures (exit 2).
"""

from typing import Optional


class PhraseMMTError(Exception):
    """Base class for all errors raised by phrase_mmt."""
    pass


class ConfigError(PhraseMMTError, ValueError):
    """Invalid configuration value or combination."""
    pass


class ShapeError(PhraseMMTError, ValueError):
    """Tensor dimensions do not agree."""
    pass


class DomainError(PhraseMMTError, ValueError):
    """Input outside the domain of an operation (empty sequence, zero norm...)."""
    pass


class CorpusParseError(PhraseMMTError):
    """Malformed record in a JSONL file."""

    def __init__(self, message: str, line_number: Optional[int] = None):
        self.line_number = line_number
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)


class GroundingError(PhraseMMTError):
    """A noun phrase could not be resolved to an image region."""
    pass


class RetrievalError(PhraseMMTError):
    """Query against an empty index or with invalid K."""
    pass


class IndexBuildError(PhraseMMTError):
    """Encoder, checkpoint and phrase set disagree while building an index."""
    pass


class TrainingError(PhraseMMTError):
    """Training diverged."""

    def __init__(self, message: str, step: Optional[int] = None):
        self.step = step
        if step is not None:
            message = f"step {step}: {message}"
        super().__init__(message)


class OptimizerError(PhraseMMTError):
    """An optimizer update could not be applied to a parameter."""

    def __init__(self, message: str, parameter: str):
        self.parameter = parameter
        super().__init__(f"{parameter}: {message}")


class AnalysisError(PhraseMMTError):
    """An analysis could not be computed on the given data."""
    pass


class UsageError(PhraseMMTError):
    """Bad command-line usage."""
    pass
