"""Structured singular value bounds, H-infinity norms and robustness analyses."""

from .bounds import mu_lower_bound, mu_upper_bound
from .hinf import bilinear_to_continuous, hinf_norm
from .robust import (AnalysisOptions, AnalysisResult, RobustStabilityNotEstablished,
                     branch_and_bound, robust_stability_margin, worst_case_hinf)
from .structure import MuStructure
