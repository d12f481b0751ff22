"""Exception types shared across the package."""

from __future__ import annotations


class InvalidInputError(ValueError):
    """Argument violates an operation's precondition."""


class NumericError(FloatingPointError):
    """A loss or ratio became non-finite.

    ``location`` identifies the offending term, e.g. ``(group, trajectory, token)``.
    """

    def __init__(self, message: str, location: tuple = ()) -> None:
        super().__init__(f"{message} at {location}" if location else message)
        self.location = location


class DegenerateConditionalError(ValueError):
    """Conditioning on R=1 is impossible because P(R=1) is zero."""
