"""Objective Bayes for isotropic Gaussian-process regression.

Reference prior on the correlation length, integrated likelihood,
normalized posterior, prediction, and the diagnostic suites of the
underlying C++ library.
"""

from ._refprior import (
    Gp,
    eval_kernel,
    eval_kernel_dtheta,
    kernel_spec,
    spectral_quadratic_form,
)

__all__ = [
    "Gp",
    "eval_kernel",
    "eval_kernel_dtheta",
    "kernel_spec",
    "spectral_quadratic_form",
]

__version__ = "0.1.0"
