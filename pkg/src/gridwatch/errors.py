"""Exception hierarchy shared across the package.

InputError maps to CLI exit code 2, NumericError to exit code 3.
"""


class GridwatchError(Exception):
    """Base class for all package errors."""


class InputError(GridwatchError):
    """Invalid user input: malformed files, bad flags, violated preconditions."""


class NumericError(GridwatchError):
    """Numerical failure: non-convergence, singular or non-PD matrices."""


class DeadIslandError(NumericError):
    """A grid component has no voltage reference (slack or DER bus).

    Carries the 1-based bus indices of the dead island.
    """

    def __init__(self, buses):
        self.buses = tuple(sorted(buses))
        super().__init__(f"dead island with no voltage reference: buses {list(self.buses)}")
