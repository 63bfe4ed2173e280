"""Exception types raised across the package."""


class FdiError(Exception):
    """Base class for all package errors."""


class DimensionError(FdiError, ValueError):
    """Incompatible matrix or signal dimensions."""


class AllBranchesInfeasible(FdiError):
    """No sub-program of the branch family admits a sensitive residual generator.

    Consistent with the fault being non-detectable for the chosen filter degree.
    """


class Stage2Infeasible(FdiError):
    """The second (sensitivity) stage failed and no fallback was allowed."""


class NonPsdInput(FdiError, ValueError):
    """A matrix expected to be positive semidefinite has a significantly negative eigenvalue."""


class UnstableDenominator(FdiError, ValueError):
    """The filter denominator has a root with nonnegative real part."""


class ImproperTransferFunction(FdiError, ValueError):
    """Numerator degree exceeds denominator degree."""


class EquilibriumError(FdiError):
    """The supplied point is not an equilibrium within tolerance."""


class ConvergenceError(FdiError):
    """An iterative solver did not converge.

    Attributes
    ----------
    best : ndarray or None
        Best iterate found before giving up.
    residual : float
        Residual norm at ``best``.
    """

    def __init__(self, msg, best=None, residual=float("nan")):
        super().__init__(msg)
        self.best = best
        self.residual = residual


class SimulationDiverged(FdiError):
    """Non-finite state encountered during integration.

    ``partial`` holds the trajectory computed up to the failure.
    """

    def __init__(self, msg, partial=None):
        super().__init__(msg)
        self.partial = partial


class StiffnessError(FdiError, ValueError):
    """Integration step too large for the fastest mode of the system."""


class UndefinedIndicator(FdiError, ValueError):
    """Detection indicator undefined, e.g. for an identically zero residual."""


class ModelFileError(FdiError, ValueError):
    """Malformed model description file."""


class InsufficientScenarios(FdiError, ValueError):
    """Fewer scenarios than the sample-complexity bound requires for the requested (epsilon, beta)."""

    def __init__(self, msg, n_given=0, n_required=0):
        super().__init__(msg)
        self.n_given = n_given
        self.n_required = n_required
