"""Finite-temperature Hedin/GW solver for electrons and nuclei on a 1D soft-Coulomb lattice,
checked against exact diagonalization."""
from .errors import MultiHedinError
from .hedin import ScfConfig, ScfState, Scheme, scf_run
from .model import Boundary, ExternalFields, LatticeSpec, ModelSystem, SpeciesSpec, Statistics

__all__ = [
    "Boundary", "ExternalFields", "LatticeSpec", "ModelSystem", "MultiHedinError",
    "ScfConfig", "ScfState", "Scheme", "SpeciesSpec", "Statistics", "scf_run",
]
__version__ = "0.1.0"
