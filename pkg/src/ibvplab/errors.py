"""Exception and warning types shared by every module."""


class IbvpError(Exception):
    """Base class for all errors raised by the package."""


class AdmissibilityError(IbvpError):
    """Inputs violate a precondition of the owning operation (CLI exit code 2)."""


class SolverError(IbvpError):
    """A numerical solver failed (CLI exit code 1)."""


class NonSimple(AdmissibilityError):
    pass


class StepTooLarge(SolverError):
    pass


class BadResolution(AdmissibilityError):
    pass


class SolverFailure(SolverError):
    pass


class ResonantTau(AdmissibilityError):
    pass


class NoContraction(SolverError):
    pass


class ChartMaskViolation(AdmissibilityError):
    pass


class RankDeficient(AdmissibilityError):
    pass


class EigenvalueAtZero(AdmissibilityError):
    pass


class MeshMismatch(AdmissibilityError):
    pass


class NonPositiveFactor(AdmissibilityError):
    pass


class DegenerateJacobian(AdmissibilityError):
    pass


class ResidualTooLarge(SolverError):
    pass


class EpsilonTooLarge(AdmissibilityError):
    pass


class SmallnessViolated(AdmissibilityError):
    pass


class AprioriViolated(AdmissibilityError):
    pass


class ExpressionError(AdmissibilityError):
    pass


class TruncationWarning(UserWarning):
    """Spectral truncation leaves more than 1% of the energy unresolved."""
