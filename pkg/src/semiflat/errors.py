"""Exception types shared across the workbench."""


class SemiflatError(Exception):
    """Base class for all workbench errors."""


class ResolutionTooLow(SemiflatError):
    pass


class NonPositiveDefinite(SemiflatError):
    def __init__(self, location, eigenvalue):
        self.location = location
        self.eigenvalue = eigenvalue
        super().__init__(
            f"metric not positive definite at grid point {location} "
            f"(eigenvalue {eigenvalue:.3e})"
        )


class InvalidEpsilon(SemiflatError):
    pass


class DeterminantDrift(SemiflatError):
    def __init__(self, max_drift):
        self.max_drift = max_drift
        super().__init__(f"gauge determinant drifted from 1 by {max_drift:.3e}")


class CurvatureTooLarge(SemiflatError):
    """Small-curvature precondition of a fiber operation failed."""


class NewtonDiverged(SemiflatError):
    def __init__(self, last_residual):
        self.last_residual = last_residual
        super().__init__(f"fiber diagonalization Newton diverged (residual {last_residual:.3e})")


class NearNilpotent(SemiflatError):
    """Constant connection matrix has (near) coincident eigenvalues with a
    nonzero nilpotent part; the holomorphic structure is a nontrivial
    self-extension rather than a sum of line bundles."""


class PreconditionCurvature(SemiflatError):
    pass


class NonConvergence(SemiflatError):
    def __init__(self, last_residual):
        self.last_residual = last_residual
        super().__init__(f"flow did not reach tolerance (residual {last_residual:.3e})")


class BlowUp(SemiflatError):
    def __init__(self, sup_f):
        self.sup_f = sup_f
        super().__init__(f"curvature sup-norm exceeded blow-up guard ({sup_f:.3e})")


class InsufficientFamily(SemiflatError):
    pass


class FitUnreliable(SemiflatError):
    def __init__(self, r_squared):
        self.r_squared = r_squared
        super().__init__(f"exponential fit unreliable (R^2 = {r_squared:.3f})")


class IncompatibleData(SemiflatError):
    pass


class SolverStall(SemiflatError):
    pass


class NotCalabiYau(SemiflatError):
    pass


class BranchTrackingAmbiguous(SemiflatError):
    pass


class ConfigInvalid(SemiflatError):
    def __init__(self, field, reason):
        self.field = field
        self.reason = reason
        super().__init__(f"config field '{field}': {reason}")
