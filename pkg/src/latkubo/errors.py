"""Exception and warning types shared across the package."""


class LatKuboError(Exception):
    """Base class for all package errors."""


class DimMismatch(LatKuboError):
    """Operands act on spaces of different dimension."""


class NotHermitian(LatKuboError):
    """Operator lacks the hermitian flag or fails the symmetry check."""


class InvalidP(LatKuboError):
    """Schatten exponent must satisfy p >= 1."""


class NonPositiveEpsilon(LatKuboError):
    """Adiabatic rate / resolvent offset must be > 0."""


class NonPositiveBeta(LatKuboError):
    """Inverse temperature must be > 0."""


class NonPositiveStep(LatKuboError):
    """Integrator step must be > 0."""


class NonPositiveN(LatKuboError):
    """Sample count must be >= 1."""


class FluxIncommensurate(LatKuboError):
    """Flux denominator does not divide the torus side lengths."""


class RequiresCleanModel(LatKuboError):
    """Operation is defined for disorder-free models only."""


class GapClosure(LatKuboError):
    """Selected bands touch the rest of the spectrum on the momentum grid."""


class RangeExceedsHalfTorus(LatKuboError):
    """Kernel offsets must stay within half the torus in each direction."""


class NotEquilibrium(LatKuboError):
    """State does not commute with the Hamiltonian within tolerance."""


class StepTooLarge(LatKuboError):
    """Richardson levels of the finite-difference derivative disagree."""


class UnsupportedModulation(LatKuboError):
    """Closed-form route requires constant or pure-cosine modulation."""


class DiagonalObstruction(LatKuboError):
    """Current has an energy-diagonal component paired with the state
    gradient; the adiabatic limit does not exist."""


class NotSpectralProjection(LatKuboError):
    """Operator is not a spectral projection of the given Hamiltonian."""


class BoxExceedsTorus(LatKuboError):
    """Requested sub-box does not fit inside the torus."""


class ConfigError(LatKuboError):
    """Experiment configuration is malformed; message names the key."""


class IoError(LatKuboError):
    """Report file could not be written."""


class FermiOnEigenvalue(UserWarning):
    """Fermi energy sits on (or within 1e-9 of) an eigenvalue."""
