"""Species, lattice and one-/two-body Hamiltonian ingredients.

Everything is in Hartree atomic units (hbar = m_e = e = 4 pi eps_0 = 1), so the
Coulomb prefactor is 1 and only masses and charges carry species information.
The lattice is one dimensional with uniform spacing.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import DimensionMismatchError, InvalidLatticeError, UnsupportedLatticeError


class Statistics(str, enum.Enum):
    FERMION = "fermion"
    BOSON = "boson"

    @property
    def zeta(self) -> int:
        """-1 for fermions, +1 for bosons (sign picked up under tau -> tau + beta)."""
        return -1 if self is Statistics.FERMION else 1


class Boundary(str, enum.Enum):
    OPEN = "open"
    PERIODIC = "periodic"


@dataclass(frozen=True)
class SpeciesSpec:
    name: str
    mass: float
    charge: float
    statistics: Statistics
    particle_count: float
    is_electron: bool = False

    def __post_init__(self):
        object.__setattr__(self, "statistics", Statistics(self.statistics))
        if not self.mass > 0:
            raise ValueError(f"species {self.name!r}: mass must be positive, got {self.mass}")
        if self.particle_count < 0:
            raise ValueError(f"species {self.name!r}: particle_count must be >= 0")

    @property
    def zeta(self) -> int:
        return self.statistics.zeta


@dataclass(frozen=True)
class LatticeSpec:
    positions: tuple
    boundary: Boundary = Boundary.OPEN
    softening: float = 1.0
    coupling_scale: float = 1.0

    def __post_init__(self):
        pos = tuple(float(x) for x in self.positions)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "boundary", Boundary(self.boundary))
        if len(pos) == 0:
            raise InvalidLatticeError("lattice needs at least one site")
        if any(b <= a for a, b in zip(pos, pos[1:])):
            raise InvalidLatticeError("positions must be strictly increasing (distinct sites)")
        if self.softening < 0 or self.coupling_scale < 0:
            raise InvalidLatticeError("softening and coupling_scale must be non-negative")

    @property
    def n_sites(self) -> int:
        return len(self.positions)

    @classmethod
    def uniform(cls, n_sites: int, spacing: float = 1.0, **kwargs) -> "LatticeSpec":
        return cls(positions=tuple(spacing * i for i in range(n_sites)), **kwargs)

    def spacing(self) -> float:
        """Uniform grid spacing; raises for nonuniform grids."""
        x = np.asarray(self.positions)
        if x.size < 2:
            return 1.0
        dx = np.diff(x)
        if not np.allclose(dx, dx[0], rtol=1e-12, atol=0.0):
            raise UnsupportedLatticeError("kinetic stencil needs a uniformly spaced lattice")
        return float(dx[0])


@dataclass(frozen=True)
class ExternalFields:
    """Static external potentials: ``phi`` couples with weight Z_k, ``f[k]`` acts on species k only."""

    phi: np.ndarray
    f: np.ndarray  # shape (n_species, n_sites)

    @classmethod
    def zeros(cls, n_species: int, n_sites: int) -> "ExternalFields":
        return cls(phi=np.zeros(n_sites), f=np.zeros((n_species, n_sites)))

    def shifted(self, c: float) -> "ExternalFields":
        return replace(self, phi=self.phi + c)


@dataclass(frozen=True)
class ModelSystem:
    species: tuple
    lattice: LatticeSpec
    beta: float
    fields: ExternalFields = None
    coulomb: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        species = tuple(self.species)
        object.__setattr__(self, "species", species)
        if not species:
            raise ValueError("model needs at least one species")
        if sum(s.is_electron for s in species) > 1:
            raise ValueError("at most one species may be flagged as the electron")
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        nb = self.lattice.n_sites
        if self.fields is None:
            object.__setattr__(self, "fields", ExternalFields.zeros(len(species), nb))
        phi = np.asarray(self.fields.phi, dtype=float)
        f = np.asarray(self.fields.f, dtype=float)
        if phi.shape != (nb,) or f.shape != (len(species), nb):
            raise DimensionMismatchError(
                f"fields have shapes phi={phi.shape}, f={f.shape}; expected ({nb},) and ({len(species)}, {nb})"
            )
        object.__setattr__(self, "fields", ExternalFields(phi=phi, f=f))
        if self.coulomb is None:
            object.__setattr__(self, "coulomb", build_coulomb(self.lattice))

    @property
    def n_species(self) -> int:
        return len(self.species)

    @property
    def n_sites(self) -> int:
        return self.lattice.n_sites

    def onebody(self, k: int) -> np.ndarray:
        return build_onebody(self.species[k], self.lattice, self.fields, k)

    def with_fields(self, fields: ExternalFields) -> "ModelSystem":
        return replace(self, fields=fields)


def build_coulomb(lattice: LatticeSpec) -> np.ndarray:
    """Soft-Coulomb matrix ``lambda / sqrt(d_ij**2 + a**2)``.

    For periodic lattices ``d_ij`` is the minimum-image distance on a ring of
    length ``n_sites * spacing``.
    """
    lam = lattice.coupling_scale
    nb = lattice.n_sites
    if lam == 0.0:
        return np.zeros((nb, nb))
    if lattice.softening <= 0.0:
        raise InvalidLatticeError("softening a=0 makes the on-site Coulomb term diverge")
    x = np.asarray(lattice.positions)
    d = np.abs(x[:, None] - x[None, :])
    if lattice.boundary is Boundary.PERIODIC and nb > 1:
        length = nb * lattice.spacing()
        d = np.minimum(d, length - d)
    return lam / np.sqrt(d**2 + lattice.softening**2)


def build_kinetic(species: SpeciesSpec, lattice: LatticeSpec) -> np.ndarray:
    """Central-difference kinetic energy ``-1/(2m) d^2/dx^2``."""
    nb = lattice.n_sites
    h = lattice.spacing()
    t = np.zeros((nb, nb))
    if nb == 1:
        return t
    diag = 1.0 / (species.mass * h * h)
    hop = -0.5 * diag
    np.fill_diagonal(t, diag)
    for i in range(nb - 1):
        t[i, i + 1] += hop
        t[i + 1, i] += hop
    if lattice.boundary is Boundary.PERIODIC:
        t[0, nb - 1] += hop
        t[nb - 1, 0] += hop
    return t


def build_onebody(species: SpeciesSpec, lattice: LatticeSpec, fields: ExternalFields, k: int = 0) -> np.ndarray:
    """Kinetic matrix plus the static potential ``Z_k phi + f_k`` on the diagonal."""
    nb = lattice.n_sites
    phi = np.asarray(fields.phi, dtype=float)
    f = np.asarray(fields.f, dtype=float)
    if phi.shape != (nb,) or f.ndim != 2 or f.shape[1] != nb or not 0 <= k < f.shape[0]:
        raise DimensionMismatchError("external fields do not match the lattice/species layout")
    return build_kinetic(species, lattice) + np.diag(species.charge * phi + f[k])


def scaled_interaction(k: int, k2: int, coulomb: np.ndarray, species: Sequence[SpeciesSpec]) -> np.ndarray:
    """Species-resolved interaction ``Z_k Z_k2 v``.

    Pair-counting factors are left to the Hamiltonian assembly: same-species
    pairs carry 1/2, distinct species are counted once per unordered pair.
    """
    return species[k].charge * species[k2].charge * np.asarray(coulomb)
