"""Lagrangian particle simulation of Euler alignment (Cucker-Smale) hydrodynamics.

The hot pairwise sums run in a compiled extension when it is available and
in numpy otherwise; see :mod:`eulalign.backend`.
"""

from . import backend
from .entropy import EntropyField, ThresholdVerdict, classify, entropy_init, entropy_rhs, residual
from .integrate import BlowUpDetected, BlowUpSignal, StepControl
from .kernels import Domain, Kernel, convolve, eval, eval_grad
from .particles import FlockState, Particle, advance, step
from .scenarios import (HypothesisViolation, PerturbedSpec, UnidirectionalSpec, build_perturbed,
                        build_unidirectional, limiting_velocity)

__version__ = "0.1.0"

__all__ = [
    "backend", "EntropyField", "ThresholdVerdict", "classify", "entropy_init", "entropy_rhs",
    "residual", "BlowUpDetected", "BlowUpSignal", "StepControl", "Domain", "Kernel", "convolve",
    "eval", "eval_grad", "FlockState", "Particle", "advance", "step", "HypothesisViolation",
    "PerturbedSpec", "UnidirectionalSpec", "build_perturbed", "build_unidirectional",
    "limiting_velocity", "__version__",
]
