"""Exception hierarchy shared across the toolkit.

The CLI maps these onto process exit codes: transport failures exit 2,
schema/validation problems exit 3, artifact digest mismatches exit 4,
anything unexpected exits 1.
"""

from __future__ import annotations


class TextsupError(Exception):
    """Base class for all toolkit-specific errors."""


class SchemaError(TextsupError):
    """A file, document, or in-memory structure violates its schema."""


class DegenerateVectorError(TextsupError):
    """A vector became (numerically) zero where a direction was required."""


class TransportError(TextsupError):
    """Talking to the language-model endpoint failed."""


class UnparseableResponseError(TransportError):
    """The endpoint answered, but no descriptions could be parsed out."""


class ArtifactMismatchError(TextsupError):
    """Two pipeline artifacts that must agree (by digest) do not."""


class DivergenceError(TextsupError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int):
        super().__init__(f"training diverged (non-finite loss) at epoch {epoch}")
        self.epoch = epoch
