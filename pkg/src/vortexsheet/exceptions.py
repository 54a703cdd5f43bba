"""Exception types raised across the package."""


class SheetError(ValueError):
    """Invalid sheet state or trajectory."""


class DegenerateSegmentError(SheetError):
    """Two consecutive nodes coincide."""


class SingularityError(ValueError):
    """A singular kernel was evaluated at its singular point."""


class NumericalAbort(RuntimeError):
    """The time integration cannot continue.

    ``category`` is a short machine-readable tag (``"self_intersection"``,
    ``"cfl"``) that the command line layer maps to an exit code.
    """

    def __init__(self, category, message):
        super().__init__(message)
        self.category = category
