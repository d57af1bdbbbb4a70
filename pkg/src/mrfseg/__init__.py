"""MAP image segmentation with hidden Potts and causal Markov mesh priors.

Solvers: Iterated Conditional Modes on the second-order Potts posterior,
alpha-expansion graph cuts on the first-order Potts posterior, and
Path-Constrained Viterbi Training for the second-order Markov mesh.
"""

from .core import (
    ClassParams,
    ConvergenceError,
    DomainError,
    LabelMap,
    MultiSpectralImage,
    NeighborhoodSystem,
    PottsModel,
)
from .emission import em_fit, em_ml_classify, estimate_class_params, log_densities, ml_classify
from .graphcut import alpha_expansion, binary_mapcut, gc_segment, max_flow
from .icm import icm_segment
from .metrics import confusion, kappa, kappa_interval, overall_accuracy, relative_improvement
from .pcvt import pcvt_segment
from .potts import estimate_beta, posterior_energy

__version__ = "0.1.0"

__all__ = [
    "ClassParams",
    "ConvergenceError",
    "DomainError",
    "LabelMap",
    "MultiSpectralImage",
    "NeighborhoodSystem",
    "PottsModel",
    "alpha_expansion",
    "binary_mapcut",
    "confusion",
    "em_fit",
    "em_ml_classify",
    "estimate_beta",
    "estimate_class_params",
    "gc_segment",
    "icm_segment",
    "kappa",
    "kappa_interval",
    "log_densities",
    "max_flow",
    "ml_classify",
    "overall_accuracy",
    "pcvt_segment",
    "posterior_energy",
    "relative_improvement",
]
