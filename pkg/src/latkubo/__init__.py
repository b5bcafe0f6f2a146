"""latkubo: linear response on finite magnetic tight-binding lattices.

Library layout:

    operators   tracial-algebra toolkit (traces, Schatten norms, Liouvillian)
    lattice     magnetic torus models, Bloch reduction, Chern oracle
    dynamics    switch profiles, gauge conjugation, BCH, propagation
    response    net currents and the five conductivity routes
    ensemble    disorder sampling, covariance, trace-per-volume estimators
    runner      configuration-driven sweeps writing CSV/JSON + figures
"""

from .errors import LatKuboError
from .lattice import LatticeOperatorSet, ModelSpec, build_model
from .operators import Operator, SpectralData, TracialAlgebra
from .dynamics import (
    CompactBump,
    Constant,
    FourierCosine,
    PerturbationProfile,
)

__version__ = "0.1.0"

__all__ = [
    "CompactBump",
    "Constant",
    "FourierCosine",
    "LatKuboError",
    "LatticeOperatorSet",
    "ModelSpec",
    "Operator",
    "PerturbationProfile",
    "SpectralData",
    "TracialAlgebra",
    "build_model",
    "__version__",
]
