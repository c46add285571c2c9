"""Mean-field analysis of least-loaded-of-d load balancing.

Computes limiting workload and response-time distributions of the LL(d)
policy for general job sizes (fixed-point iteration, exponential closed
forms, phase-type ODE/DDE systems), the SQ(d) power-of-d baseline, and
validates against a finite-N discrete-event simulator.
"""

from .analytic_exp import ModelParams
from .curves import CcdfCurve, kolmogorov_distance
from .jobsize import (
    Deterministic,
    DetPlusPH,
    ErlangK,
    Exponential,
    HexpFitSpec,
    HyperExp2,
    JobSizeLaw,
    PHRep,
    PhaseType,
    PowerLaw,
    as_ph,
    fit_hyperexp,
    parse_law,
)

__version__ = "0.1.0"

__all__ = [
    "ModelParams",
    "CcdfCurve",
    "kolmogorov_distance",
    "JobSizeLaw",
    "Exponential",
    "HyperExp2",
    "ErlangK",
    "Deterministic",
    "PowerLaw",
    "PhaseType",
    "DetPlusPH",
    "PHRep",
    "HexpFitSpec",
    "fit_hyperexp",
    "as_ph",
    "parse_law",
    "__version__",
]
