"""slicelab: slice-sampling kernels and a numerical comparison laboratory.

The package provides ideal and hybrid slice samplers (independent-proposal,
stepping-out/shrinkage, Hit-and-Run on-slice kernels), the Metropolis family
with reference-reversible proposals, weak-Poincare certificate machinery, and
a matrix-based verification lab for Dirichlet-form domination, comparison
inequalities and spectral-gap bounds at desk scale.
"""
from . import geometry, kernels, rng, spectral, targets, wpi

__all__ = ["geometry", "kernels", "rng", "spectral", "targets", "wpi"]
__version__ = "0.1.0"
