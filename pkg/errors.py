"""
errors.py - Exception hierarchy for botdna.

Library code raises these; only main.py turns them into exit codes.
"""


class BotDnaError(Exception):
    """Base class for every error botdna raises on purpose."""


class SchemaError(BotDnaError):
    """A JSONL line violates the account schema."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"{message} at line {line}"
        super().__init__(message)
        self.line = line


class LabelError(BotDnaError):
    """A record or target lacks a valid 0/1 label."""


class IneligibleRecordError(BotDnaError):
    """A record cannot be encoded (empty timeline, empty corpus)."""


class SplitError(BotDnaError):
    """Split fractions or split assignment are invalid."""


class AlphabetError(BotDnaError):
    """Unknown alphabet, foreign symbol, or mixed alphabets."""


class PaletteError(BotDnaError):
    """Palette levels collide or do not cover the alphabet."""


class CanvasError(BotDnaError):
    """Canvas side too small, or image in the wrong channel layout."""


class ShapeError(BotDnaError):
    """Tensor shapes do not satisfy an op's contract."""


class NonFiniteError(BotDnaError):
    """An op produced NaN or Inf."""


class FeatureError(BotDnaError):
    """Encoder features are missing or have the wrong dimensionality."""


class TrainingError(BotDnaError):
    """Training cannot proceed (empty split, diverged loss)."""


class ConfigError(BotDnaError):
    """Configuration file or flags are invalid."""


class FormatError(BotDnaError):
    """A binary container has a bad magic, header or length."""


class InsufficientDataError(BotDnaError):
    """Too few accounts or curve points for the requested operation."""
