"""Exception types shared across the package.

The CLI maps these onto process exit codes; library code raises them
directly so callers can distinguish configuration mistakes from missing
artifacts without parsing messages.
"""

from __future__ import annotations


class MWTDiffError(Exception):
    """Base class for package-specific failures."""


class ConfigError(MWTDiffError):
    """Bad configuration: unknown keys, unparseable files, invalid values."""


class DependencyError(MWTDiffError):
    """A required artifact (checkpoint, dataset, report) is missing or stale."""


class DataError(MWTDiffError):
    """A dataset on disk is malformed or fails validation."""


class VocabularyError(ValueError):
    """A caption references a category outside the active vocabulary."""

    def __init__(self, category: str, vocabulary: list[str]):
        self.category = category
        self.vocabulary = list(vocabulary)
        valid = ", ".join(repr(c) for c in self.vocabulary)
        super().__init__(
            f"unknown category {category!r}; valid categories are: {valid}"
        )
