"""Simulation and exact oracles for conservative rotor diffusions on periodic lattices."""

from .lattice import EdgeClass, LatticeError, SublatticeClass, TorusLattice
from .measure import GaussianMeasure, PolynomialObservable, wick_expect
from .model import Configuration, LatticeModel, PairField, PrecisionStencil, StencilError
from .integrators import IntegratorSpec, ensemble, simulate

__version__ = "0.1.0"

__all__ = [
    "Configuration",
    "EdgeClass",
    "GaussianMeasure",
    "IntegratorSpec",
    "LatticeError",
    "LatticeModel",
    "PairField",
    "PolynomialObservable",
    "PrecisionStencil",
    "StencilError",
    "SublatticeClass",
    "TorusLattice",
    "ensemble",
    "simulate",
    "wick_expect",
    "__version__",
]
