"""Random walks with unbounded jump range on marked point processes.

Homogenization and hydrodynamic-limit experiments at desk scale: sample an
environment, build the rescaled generator, compute the effective diffusion
matrix from the corrector problem, and compare microscopic dynamics
(resolvents, semigroups, exclusion processes) against their macroscopic
limits.
"""

__version__ = "0.1.0"


class SolverError(RuntimeError):
    """An iterative solve did not reach its tolerance.

    ``residual`` carries the last relative residual and ``iterations`` the
    number of steps taken.
    """

    def __init__(self, message, residual=float("nan"), iterations=0):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations
