"""Equilibrium metrics and Bergman kernels for radial weights on the Riemann sphere."""

from .bergman import (
    KernelEval,
    LogNorms,
    SectionSpace,
    bergman_function,
    bergman_measure,
    dimension_identity,
    gram_oracle,
    kernel_offdiag_sq,
    lelong_slope,
    monomial_log_norms,
)
from .envelope import (
    EnvelopeResult,
    SlopeWindow,
    c11_probe,
    constrained_envelope,
    contact_set,
    envelope_oracle,
    equilibrium_measure,
    legendre_transform,
)
from .presets import PRESETS, list_presets
from .weight import Bump, GridFn, VGrid, Weight, curvature_mass, eval_potential, fs_density, positive_set

__version__ = "0.1.0"
