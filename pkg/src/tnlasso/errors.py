"""Exception types raised across the package."""


class TnlassoError(Exception):
    """Base class for all package errors."""


class SvdConvergenceError(TnlassoError):
    def __init__(self, sweeps, off):
        super().__init__(f"Jacobi SVD did not converge after {sweeps} sweeps "
                         f"(off-diagonal measure {off:.3e})")
        self.sweeps = sweeps
        self.off = off


class RankDeficiencyError(TnlassoError):
    pass


class SolverError(TnlassoError):
    """An iterative solver stopped at its iteration cap.

    ``gap`` holds the last certified relative gap (or residual) and
    ``partial`` whatever iterate the solver had when it gave up.
    """

    def __init__(self, message, gap=None, iterations=None, partial=None):
        super().__init__(message)
        self.gap = gap
        self.iterations = iterations
        self.partial = partial


class FactorizationError(TnlassoError):
    pass


class ConfigError(TnlassoError):
    pass
