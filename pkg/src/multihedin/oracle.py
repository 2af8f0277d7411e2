"""Exact diagonalization of the multispecies lattice Hamiltonian.

The Fock space is the tensor product of one occupation-number space per
species.  Fermionic species get Jordan-Wigner signs within the species;
operators of different species commute.  Bosonic modes are truncated at
``boson_cap`` quanta each, which is audited by :func:`audit_boson_cap`.

The Hamiltonian conserves every species number, so it is diagonalized block
by block over number sectors and thermal averages are taken in the
grand-canonical ensemble ``exp(-beta (H - sum_k mu_k N_k))``.  The
``canonical`` ensemble keeps the non-electron species at their target
particle number with ``mu = 0`` and leaves only the electron grand canonical.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.optimize import brentq

from .errors import DimensionCapError, UnreachableFillingError
from .gf import ImagTimeGF, MatsubaraGF, MatsubaraMesh
from .model import ExternalFields, ModelSystem, Statistics, scaled_interaction

LOGGER = logging.getLogger(__name__)

DEFAULT_DIM_CAP = 20000


@dataclass
class SpeciesSpace:
    statistics: Statistics
    occupations: np.ndarray  # (dim, n_sites) integer occupations
    annihilators: list  # per site, dense (dim, dim)

    @property
    def dim(self) -> int:
        return len(self.occupations)


def _species_space(statistics: Statistics, n_sites: int, cap: int) -> SpeciesSpace:
    levels = range(2) if statistics is Statistics.FERMION else range(cap + 1)
    occ = np.array(list(itertools.product(levels, repeat=n_sites)), dtype=int)
    lookup = {tuple(o): idx for idx, o in enumerate(occ)}
    dim = len(occ)
    ann = []
    for i in range(n_sites):
        a = np.zeros((dim, dim))
        for col, o in enumerate(occ):
            if o[i] == 0:
                continue
            target = o.copy()
            target[i] -= 1
            if statistics is Statistics.FERMION:
                amp = (-1.0) ** int(o[:i].sum())
            else:
                amp = np.sqrt(o[i])
            a[lookup[tuple(target)], col] = amp
        ann.append(a)
    return SpeciesSpace(statistics, occ, ann)


@dataclass
class FockSpace:
    model: ModelSystem
    boson_cap: int
    spaces: list
    occupations: list  # per species, (D, n_sites) occupations of each composite state
    numbers: np.ndarray  # (D, n_species)

    @property
    def dim(self) -> int:
        return len(self.numbers)

    @property
    def dims(self) -> tuple:
        return tuple(s.dim for s in self.spaces)

    def embed(self, k: int, local: np.ndarray) -> sp.csr_matrix:
        """Lift a species-local operator to the composite space."""
        op = sp.identity(1, format="csr")
        for kk, space in enumerate(self.spaces):
            factor = sp.csr_matrix(local) if kk == k else sp.identity(space.dim, format="csr")
            op = sp.kron(op, factor, format="csr")
        return op

    def annihilator(self, k: int, i: int) -> sp.csr_matrix:
        return self.embed(k, self.spaces[k].annihilators[i])


def build_fock_space(model: ModelSystem, boson_cap: int = 4, dim_cap: int = DEFAULT_DIM_CAP) -> FockSpace:
    nb = model.n_sites
    spaces = []
    for s in model.species:
        if s.statistics is Statistics.BOSON and boson_cap < 1:
            raise ValueError("boson_cap must be >= 1")
    estimate = 1
    for s in model.species:
        estimate *= 2**nb if s.statistics is Statistics.FERMION else (boson_cap + 1) ** nb
    if estimate > dim_cap:
        raise DimensionCapError(f"Fock dimension {estimate} exceeds the cap {dim_cap}")
    spaces = [_species_space(s.statistics, nb, boson_cap) for s in model.species]
    grids = np.meshgrid(*[np.arange(s.dim) for s in spaces], indexing="ij")
    local_index = [g.ravel() for g in grids]
    occupations = [space.occupations[idx] for space, idx in zip(spaces, local_index)]
    numbers = np.stack([o.sum(axis=1) for o in occupations], axis=1)
    return FockSpace(model, boson_cap, spaces, occupations, numbers)


def build_hamiltonian(space: FockSpace, model: ModelSystem | None = None) -> sp.csr_matrix:
    """Second-quantized Hamiltonian as a sparse real symmetric matrix.

    Kinetic and external terms are the only off-diagonal pieces; all
    interactions are density-density in the site basis.
    """
    model = space.model if model is None else model
    species = model.species
    v = model.coulomb
    ham = sp.csr_matrix((space.dim, space.dim))
    for k in range(len(species)):
        local = space.spaces[k]
        h = model.onebody(k)
        one = np.zeros((local.dim, local.dim))
        for i, j in zip(*np.nonzero(h)):
            one += h[i, j] * local.annihilators[i].T @ local.annihilators[j]
        ham = ham + space.embed(k, one)
    diag = np.zeros(space.dim)
    for k in range(len(species)):
        nk = space.occupations[k].astype(float)
        vkk = scaled_interaction(k, k, v, species)
        # psi_i^dag psi_j^dag psi_j psi_i = n_i n_j - delta_ij n_i for both statistics
        diag += 0.5 * (np.einsum("di,ij,dj->d", nk, vkk, nk) - nk @ np.diag(vkk))
        for k2 in range(k + 1, len(species)):
            vk2 = scaled_interaction(k, k2, v, species)
            diag += np.einsum("di,ij,dj->d", nk, vk2, space.occupations[k2].astype(float))
    return (ham + sp.diags(diag)).tocsr()


@dataclass
class Sector:
    numbers: tuple
    indices: np.ndarray
    energies: np.ndarray
    vectors: np.ndarray


@dataclass
class EDSpectrum:
    space: FockSpace
    sectors: list
    hamiltonian: sp.csr_matrix = field(repr=False)

    @property
    def eigenvalues(self) -> np.ndarray:
        return np.sort(np.concatenate([s.energies for s in self.sectors]))

    def sector_index(self, numbers: tuple) -> int | None:
        for idx, s in enumerate(self.sectors):
            if s.numbers == numbers:
                return idx
        return None


def diagonalize(space: FockSpace, ham: sp.csr_matrix | None = None) -> EDSpectrum:
    """Dense eigensolve in every particle-number sector."""
    ham = build_hamiltonian(space) if ham is None else ham
    keys = [tuple(row) for row in space.numbers]
    groups: dict = {}
    for idx, key in enumerate(keys):
        groups.setdefault(key, []).append(idx)
    sectors = []
    for key in sorted(groups):
        idx = np.array(groups[key])
        block = ham[idx][:, idx].toarray()
        e, u = np.linalg.eigh(block)
        sectors.append(Sector(tuple(int(x) for x in key), idx, e, u))
    return EDSpectrum(space, sectors, ham)


@dataclass
class ThermalState:
    """Spectrum plus chemical potentials, temperature and normalized weights."""

    spectrum: EDSpectrum
    beta: float
    mus: np.ndarray
    active: list  # sector indices taking part in the ensemble
    log_weights: list = field(default_factory=list, repr=False)  # per active sector, log w_n

    @property
    def model(self) -> ModelSystem:
        return self.spectrum.space.model

    def weights(self) -> list:
        return [np.exp(lw) for lw in self.log_weights]

    def partition_function(self) -> float:
        return float(np.exp(self.log_partition))

    def shifted_energies(self, s: Sector) -> np.ndarray:
        return s.energies - float(np.dot(self.mus, s.numbers))


def thermal_state(spectrum: EDSpectrum, beta: float, mus, ensemble: str = "grand") -> ThermalState:
    model = spectrum.space.model
    mus = np.asarray(mus, dtype=float).copy()
    active = []
    for idx, s in enumerate(spectrum.sectors):
        if ensemble == "canonical":
            ok = all(
                sp_.is_electron or s.numbers[k] == round(sp_.particle_count) for k, sp_ in enumerate(model.species)
            )
            if not ok:
                continue
        active.append(idx)
    if ensemble == "canonical":
        for k, sp_ in enumerate(model.species):
            if not sp_.is_electron:
                mus[k] = 0.0
    state = ThermalState(spectrum, beta, mus, active)
    _refresh_weights(state)
    return state


def _refresh_weights(state: ThermalState) -> None:
    shifted = [state.shifted_energies(state.spectrum.sectors[i]) for i in state.active]
    emin = min(float(e.min()) for e in shifted)
    logs = [-state.beta * (e - emin) for e in shifted]
    log_z = np.logaddexp.reduce(np.concatenate(logs))
    state.log_weights = [lw - log_z for lw in logs]
    state.log_partition = float(log_z - state.beta * emin)


def particle_numbers(state: ThermalState) -> np.ndarray:
    total = np.zeros(len(state.mus))
    for i, w in zip(state.active, state.weights()):
        total += w.sum() * np.asarray(state.spectrum.sectors[i].numbers, dtype=float)
    return total


def tune_chemical_potentials(state: ThermalState, targets=None, tol: float = 1e-12, max_sweeps: int = 200) -> ThermalState:
    """Adjust each grand-canonical ``mu_k`` until ``<N_k>`` hits its target.

    Species are swept cyclically with a bracketed root find per species.
    Species held canonical keep ``mu = 0``.
    """
    model = state.model
    targets = np.array([s.particle_count for s in model.species] if targets is None else targets, dtype=float)
    free = [k for k in range(model.n_species) if _is_grand(state, k)]
    for _ in range(max_sweeps):
        for k in free:
            def err(mu, k=k):
                state.mus[k] = mu
                _refresh_weights(state)
                return particle_numbers(state)[k] - targets[k]

            lo, hi = _bracket(err, state.mus[k])
            state.mus[k] = brentq(err, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
            _refresh_weights(state)
        miss = np.abs(particle_numbers(state) - targets)[free] if free else np.zeros(1)
        if np.all(miss <= tol):
            return state
    LOGGER.warning("oracle chemical potentials not converged: residual %s", miss)
    return state


def _is_grand(state: ThermalState, k: int) -> bool:
    numbers = {state.spectrum.sectors[i].numbers[k] for i in state.active}
    return len(numbers) > 1


def _bracket(f, start: float, step: float = 1.0, limit: int = 80):
    lo, hi = start - step, start + step
    for _ in range(limit):
        flo, fhi = f(lo), f(hi)
        if flo < 0 < fhi:
            return lo, hi
        if flo >= 0:
            lo -= step
        if fhi <= 0:
            hi += step
        step *= 2
    raise UnreachableFillingError("could not bracket the target particle number")


def solve_thermal(model: ModelSystem, boson_cap: int = 4, ensemble: str = "grand", mus=None,
                  dim_cap: int = DEFAULT_DIM_CAP, tune: bool = True, tol: float = 1e-12) -> ThermalState:
    """Build, diagonalize and (optionally) tune ``mu_k`` to the species targets."""
    space = build_fock_space(model, boson_cap, dim_cap)
    spectrum = diagonalize(space)
    mus = np.zeros(model.n_species) if mus is None else mus
    state = thermal_state(spectrum, model.beta, mus, ensemble)
    if tune:
        tune_chemical_potentials(state, tol=tol)
    return state


def density_matrices(state: ThermalState) -> list:
    """Per-species ``n_ij = <psi_j^dag psi_i>``."""
    space = state.spectrum.space
    nb = space.model.n_sites
    out = []
    for k in range(space.model.n_species):
        ann = [space.annihilator(k, i) for i in range(nb)]
        rho = np.zeros((nb, nb))
        for i in range(nb):
            for j in range(i, nb):
                op = (ann[j].T @ ann[i]).tocsr()
                val = 0.0
                for sidx, w in zip(state.active, state.weights()):
                    s = state.spectrum.sectors[sidx]
                    block = op[s.indices][:, s.indices]
                    if block.nnz == 0:
                        continue
                    val += float(np.einsum("n,an,an->", w, s.vectors, block @ s.vectors))
                rho[i, j] = rho[j, i] = val
        out.append(rho)
    return out


def densities(state: ThermalState) -> list:
    return [np.diag(r).copy() for r in density_matrices(state)]


def total_energy(state: ThermalState) -> float:
    return float(sum(w @ state.spectrum.sectors[i].energies for i, w in zip(state.active, state.weights())))


@dataclass
class LehmannData:
    """Poles ``Ẽ_n - Ẽ_m`` with their matrix elements and thermal weights."""

    zeta: int
    beta: float
    delta: np.ndarray  # (P,)
    amp: np.ndarray  # (P, nb)   <m|psi_i|n>
    log_wm: np.ndarray  # (P,)
    log_wn: np.ndarray  # (P,)


def lehmann_data(state: ThermalState, k: int, prune: float = 1e-18) -> LehmannData:
    space = state.spectrum.space
    model = space.model
    nb = model.n_sites
    ann = [space.annihilator(k, i) for i in range(nb)]
    by_numbers = {state.spectrum.sectors[i].numbers: (i, lw) for i, lw in zip(state.active, state.log_weights)}
    deltas, amps, lwm, lwn = [], [], [], []
    log_prune = np.log(prune)
    for numbers, (nidx, lw_n) in by_numbers.items():
        if numbers[k] == 0:
            continue
        lower = list(numbers)
        lower[k] -= 1
        hit = by_numbers.get(tuple(lower))
        if hit is None:
            continue
        midx, lw_m = hit
        sn = state.spectrum.sectors[nidx]
        sm = state.spectrum.sectors[midx]
        keep = np.maximum(lw_m[:, None], lw_n[None, :]) > log_prune
        if not keep.any():
            continue
        mats = np.stack([sm.vectors.T @ (ann[i][sm.indices][:, sn.indices] @ sn.vectors) for i in range(nb)], axis=-1)
        en = state.shifted_energies(sn)
        em = state.shifted_energies(sm)
        mi, ni = np.nonzero(keep)
        deltas.append(en[ni] - em[mi])
        amps.append(mats[mi, ni])
        lwm.append(lw_m[mi])
        lwn.append(lw_n[ni])
    zeta = model.species[k].zeta
    if not deltas:
        return LehmannData(zeta, state.beta, np.zeros(0), np.zeros((0, nb)), np.zeros(0), np.zeros(0))
    return LehmannData(zeta, state.beta, np.concatenate(deltas), np.concatenate(amps),
                       np.concatenate(lwm), np.concatenate(lwn))


def lehmann_green(state: ThermalState, k: int, mesh: MatsubaraMesh, chunk: int = 4096) -> MatsubaraGF:
    r"""Exact ``G_ij(iw) = sum A_i A_j^* (w_m - zeta w_n) / (iw - (Ẽ_n - Ẽ_m))``.

    For bosons a vanishing denominator at ``nu_0`` is replaced by its limit
    ``-beta w_m``; nearly degenerate pairs use the equivalent
    ``w_m expm1(-beta Δ) / Δ`` form so no cancellation occurs.
    """
    data = lehmann_data(state, k)
    if mesh.parity.zeta != data.zeta:
        raise ValueError("mesh parity must match the species statistics")
    nb = state.model.n_sites
    out = np.zeros((len(mesh.iw), nb, nb), dtype=complex)
    wm = np.exp(data.log_wm)
    wn = np.exp(data.log_wn)
    for start in range(0, len(data.delta), chunk):
        sl = slice(start, start + chunk)
        d = data.delta[sl]
        coef = np.einsum("pi,pj->pij", data.amp[sl], data.amp[sl].conj())
        denom = mesh.iw[:, None] - d[None, :]
        weight = (wm[sl] - data.zeta * wn[sl])[None, :] / np.where(denom == 0, 1.0, denom)
        if data.zeta == 1:
            zero = np.nonzero(mesh.indices == 0)[0]
            if zero.size:
                x = data.beta * d
                small = np.abs(x) < 1e-8
                safe_d = np.where(small, 1.0, d)
                limit = np.where(small, -data.beta * wm[sl] * (1 - 0.5 * x), wm[sl] * np.expm1(-x) / safe_d)
                weight[zero[0]] = limit
        out += np.einsum("wp,pij->wij", weight, coef)
    return MatsubaraGF(mesh=mesh, data=out, species=k)


def lehmann_tau(state: ThermalState, k: int, n_tau: int) -> ImagTimeGF:
    """Exact ``G_ij(tau) = -sum w_m exp(-tau Δ) A_i A_j^*`` on ``tau_j = j beta/n_tau``."""
    data = lehmann_data(state, k)
    taus = np.linspace(0.0, state.beta, n_tau + 1)
    x = taus[:, None] / state.beta
    log_w = (1 - x) * data.log_wm[None, :] + x * data.log_wn[None, :]
    coef = np.einsum("pi,pj->pij", data.amp, data.amp.conj())
    values = -np.einsum("tp,pij->tij", np.exp(log_w), coef)
    parity = Statistics.FERMION if data.zeta == -1 else Statistics.BOSON
    return ImagTimeGF(beta=state.beta, data=values, parity=parity, species=k)


def static_response(model: ModelSystem, mus, boson_cap: int = 4, h: float = 1e-4,
                    ensemble: str = "grand") -> dict:
    """Central finite-difference density response to a site potential ``phi_j``.

    Returns ``{"charge": d rho_i / d phi_j, "species": [d n_k,i / d phi_j]}`` at
    fixed chemical potentials; ``rho = sum_k Z_k n_k``.
    """
    nb = model.n_sites
    z = np.array([s.charge for s in model.species])
    per_species = np.zeros((model.n_species, nb, nb))
    for j in range(nb):
        dens = []
        for sign in (1.0, -1.0):
            phi = model.fields.phi.copy()
            phi[j] += sign * h
            shifted = model.with_fields(ExternalFields(phi=phi, f=model.fields.f))
            st = solve_thermal(shifted, boson_cap, ensemble, mus=mus, tune=False)
            dens.append(np.array(densities(st)))
        per_species[:, :, j] = (dens[0] - dens[1]) / (2 * h)
    return {"charge": np.einsum("k,kij->ij", z, per_species), "species": per_species}


def exact_observables(state: ThermalState) -> dict:
    rho = density_matrices(state)
    return {
        "density_matrices": rho,
        "densities": [np.diag(r).copy() for r in rho],
        "particle_numbers": particle_numbers(state),
        "energy": total_energy(state),
        "mus": state.mus.copy(),
    }


def audit_boson_cap(model: ModelSystem, cap: int, threshold: float = 1e-6, ensemble: str = "grand") -> dict:
    """Compare tuned-``mu`` densities at ``cap`` and ``cap + 1``."""
    a = exact_observables(solve_thermal(model, cap, ensemble))
    b = exact_observables(solve_thermal(model, cap + 1, ensemble))
    site = max(float(np.max(np.abs(x - y))) for x, y in zip(a["densities"], b["densities"]))
    matrix = max(float(np.max(np.abs(x - y))) for x, y in zip(a["density_matrices"], b["density_matrices"]))
    return {"cap": cap, "site_change": site, "matrix_change": matrix, "cap_limited": site > threshold}
