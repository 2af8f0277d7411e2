"""Multispecies GW: Hartree potential, bubbles, screened interaction, Dyson, SCF.

All species share one reduced screened interaction ``W~`` solving
``(I - v P_tot) W~ = v`` with ``P_tot = sum_k Z_k^2 P_k``; species ``k`` sees
``W_k = Z_k^2 W~``.  Imaginary-time products use

* ``P_ij(tau) = -G_ij(tau) G_ji(beta - tau)`` (any statistics),
* ``Sigma_ij(tau) = -Z_k^2 G_ij(tau) W~c_ij(tau)`` with ``W~c = W~ - v``,
* exchange ``Sigma_x = -Z_k^2 v * G(0^-)``, ``G(0^-) = zeta G(beta^-)``.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .errors import (
    DimensionMismatchError,
    DivergingPropagatorError,
    ParityMismatchError,
    ScreeningInstabilityError,
    UnreachableFillingError,
)
from .gf import (
    ImagTimeGF,
    MatsubaraGF,
    MatsubaraMesh,
    PoleReference,
    density_matrix,
    g0_matsubara,
    g_beta_minus,
    matsubara_to_tau,
    tau_to_matsubara,
)
from .model import ModelSystem, Statistics

LOGGER = logging.getLogger(__name__)

_COND_LIMIT = 1e13


class Scheme(str, enum.Enum):
    HARTREE_ONLY = "hartree_only"
    GW0 = "gw0"
    SCGW = "scgw"
    GW_GAMMA1 = "gw_gamma1"


@dataclass(frozen=True)
class ScfConfig:
    scheme: Scheme = Scheme.SCGW
    max_iter: int = 200
    tol: float = 1e-9
    mixing: float = 0.5
    mu_tol: float = 1e-12
    n_freq: int = 256
    n_tau: int = 512
    vertex_n_freq: int = 16
    suppress_w: bool = False  # test hook: force W~ = 0 while keeping the scheme's code path

    def __post_init__(self):
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        if not 0.0 < self.mixing <= 1.0:
            raise ValueError("mixing must lie in (0, 1]")
        if self.tol <= 0 or self.mu_tol <= 0 or self.max_iter < 1:
            raise ValueError("tol, mu_tol must be positive and max_iter >= 1")
        if self.n_tau < 2 * self.n_freq:
            raise ValueError("n_tau must be at least 2*n_freq")


@dataclass
class ScreenedInteraction:
    mesh: MatsubaraMesh  # bosonic
    data: np.ndarray  # reduced W~(i nu), (2 n_freq, nb, nb)
    bare: np.ndarray  # v

    def for_species(self, charge: float) -> np.ndarray:
        return charge**2 * self.data

    @property
    def correlation(self) -> np.ndarray:
        return self.data - self.bare[None]

    @classmethod
    def zero(cls, mesh: MatsubaraMesh, nb: int) -> "ScreenedInteraction":
        return cls(mesh, np.zeros((2 * mesh.n_freq, nb, nb), dtype=complex), np.zeros((nb, nb)))


@dataclass
class SelfEnergy:
    species: int
    static: np.ndarray  # exchange part, real symmetric
    dynamic: MatsubaraGF | None  # frequency-dependent part; None means zero

    def dynamic_data(self) -> np.ndarray | None:
        return None if self.dynamic is None else self.dynamic.data

    def is_zero(self) -> bool:
        dyn = self.dynamic_data()
        return not np.any(self.static) and (dyn is None or not np.any(dyn))


def hartree_potential(densities, species, coulomb, fields=None) -> list:
    """``V_tot,k = Z_k phi + f_k + Z_k v rho`` with ``rho = sum_k Z_k n_k``.

    Without ``fields`` only the induced part ``Z_k v rho`` is returned.
    """
    coulomb = np.asarray(coulomb)
    nb = coulomb.shape[0]
    dens = [np.asarray(n, dtype=float) for n in densities]
    if len(dens) != len(species) or any(n.shape != (nb,) for n in dens):
        raise DimensionMismatchError("densities must be one length-n_sites vector per species")
    rho = sum(s.charge * n for s, n in zip(species, dens))
    induced = coulomb @ rho
    out = []
    for k, s in enumerate(species):
        v = s.charge * induced
        if fields is not None:
            v = v + s.charge * fields.phi + fields.f[k]
        out.append(v)
    return out


def boson_mesh(mesh: MatsubaraMesh) -> MatsubaraMesh:
    return mesh.with_parity(Statistics.BOSON)


def polarization_gw(g: ImagTimeGF, n_freq: int | None = None) -> MatsubaraGF:
    """Bubble ``P_ij(tau) = -G_ij(tau) G_ji(beta - tau)`` on bosonic frequencies."""
    n_freq = g.n_tau // 2 if n_freq is None else n_freq
    # Hamiltonians are real symmetric, so G(tau) is real; dropping the rounding-level
    # imaginary part keeps G(iw)^* = G(-iw)^T exact. Without it that symmetry-breaking
    # mode is amplified by the scf loop.
    gr = g.data.real
    p_tau = -gr * np.transpose(gr[::-1], (0, 2, 1))
    p = ImagTimeGF(beta=g.beta, data=p_tau, parity=Statistics.BOSON, species=g.species)
    return tau_to_matsubara(p, n_freq, subtract_jump=False, subtract_kink=True)


def total_polarization(p_all, species) -> np.ndarray:
    return sum(s.charge**2 * p.data for s, p in zip(species, p_all))


def _screening_matrix(p_all, species, coulomb) -> tuple:
    meshes = {p.mesh for p in p_all}
    if len(meshes) != 1:
        raise ValueError("all polarizations must live on the same bosonic mesh")
    mesh = meshes.pop()
    if mesh.parity is not Statistics.BOSON:
        raise ParityMismatchError("polarizations must have bosonic parity")
    v = np.asarray(coulomb, dtype=float)
    nb = v.shape[0]
    a = np.eye(nb)[None] - v[None] @ total_polarization(p_all, species)
    cond = np.linalg.cond(a)
    bad = np.nonzero(~np.isfinite(cond) | (cond > _COND_LIMIT))[0]
    if bad.size:
        n = int(mesh.indices[bad[0]])
        raise ScreeningInstabilityError(f"I - v P_tot is singular at bosonic index m={n}", freq_index=n)
    return mesh, v, a


def solve_screened_interaction(p_all, species, coulomb) -> ScreenedInteraction:
    """Per frequency ``(I - v P_tot) W~ = v``."""
    mesh, v, a = _screening_matrix(p_all, species, coulomb)
    w = np.linalg.solve(a, np.broadcast_to(v.astype(complex), a.shape))
    return ScreenedInteraction(mesh, w, v)


def inverse_dielectric(p_all, species, coulomb) -> np.ndarray:
    """Reduced ``eps~^-1 = (I - v P_tot)^-1``; species k's inverse dielectric is ``Z_k eps~^-1``."""
    _, _, a = _screening_matrix(p_all, species, coulomb)
    return np.linalg.inv(a)


def self_energy_gw(g: ImagTimeGF, w: ScreenedInteraction, charge: float, n_freq: int | None = None) -> SelfEnergy:
    """GW self-energy: bare-v exchange in ``static``, screening part in ``dynamic``."""
    if w.mesh.parity is not Statistics.BOSON:
        raise ParityMismatchError("screened interaction must have bosonic parity")
    n_freq = w.mesh.n_freq if n_freq is None else n_freq
    z2 = charge**2
    static = (-z2 * w.bare * g.zeta * g.data[-1]).real
    wc = w.correlation
    if not np.any(wc):
        return SelfEnergy(g.species, static, None)
    wc_tau = matsubara_to_tau(MatsubaraGF(w.mesh, wc), g.n_tau)
    sigma_tau = -z2 * g.data.real * wc_tau.data.real
    dyn = tau_to_matsubara(ImagTimeGF(g.beta, sigma_tau, g.parity, g.species), n_freq)
    return SelfEnergy(g.species, static, dyn)


@dataclass
class DysonResult:
    g: MatsubaraGF
    residual: float  # max over frequencies of ||A G - I||_F


def dyson_static(h_static: np.ndarray, mu: float, mesh: MatsubaraMesh, sigma_dyn: np.ndarray | None = None,
                 species: int = 0) -> DysonResult:
    """``G = [(iw + mu) I - h_static - Sigma_dyn(iw)]^-1``.

    Static-only problems go through the eigenbasis of ``h_static`` so they
    coincide with :func:`g0_matsubara` bit for bit.
    """
    nb = h_static.shape[0]
    eye = np.eye(nb)
    xi = h_static - mu * eye
    if sigma_dyn is None or not np.any(sigma_dyn):
        g = g0_matsubara(h_static, mu, mesh, species)
        a = mesh.iw[:, None, None] * eye - xi[None]
    else:
        a = mesh.iw[:, None, None] * eye - xi[None] - sigma_dyn
        try:
            data = np.linalg.inv(a)
        except np.linalg.LinAlgError as exc:
            raise DivergingPropagatorError(f"singular Dyson matrix: {exc}") from exc
        g = MatsubaraGF(mesh, data, species, PoleReference.from_hermitian(xi))
    resid = np.linalg.norm(a @ g.data - eye, axis=(1, 2))
    if not np.all(np.isfinite(resid)):
        n = int(mesh.indices[np.nonzero(~np.isfinite(resid))[0][0]])
        raise DivergingPropagatorError(f"propagator diverges at index {n}", freq_index=n)
    return DysonResult(g, float(resid.max()))


def dyson_solve(g0: MatsubaraGF, sigma: SelfEnergy | None = None, v_static=None) -> MatsubaraGF:
    """Interacting propagator from ``G0``, a static potential and a self-energy."""
    nb = g0.n_basis
    extra = np.zeros((nb, nb))
    if v_static is not None:
        v_static = np.asarray(v_static, dtype=float)
        extra = extra + (np.diag(v_static) if v_static.ndim == 1 else v_static)
    if sigma is not None:
        extra = extra + sigma.static
    dyn = None if sigma is None else sigma.dynamic_data()
    if not np.any(extra) and (dyn is None or not np.any(dyn)):
        return g0
    if g0.reference is None:
        raise ValueError("g0 must carry its static reference (build it with g0_matsubara)")
    xi0 = g0.reference.matrix().real
    return dyson_static(xi0 + extra, 0.0, g0.mesh, dyn, g0.species).g


def _particle_number(h_static, mu, mesh, sigma_dyn) -> float:
    g = dyson_static(h_static, mu, mesh, sigma_dyn).g
    return float(np.trace(density_matrix(g)))


def chemical_potential_search(h_static: np.ndarray, target: float, mesh: MatsubaraMesh,
                              sigma_dyn: np.ndarray | None = None, mu_tol: float = 1e-12,
                              guess: float | None = None) -> float:
    """Root of ``N(mu) = target`` at fixed static Hamiltonian and self-energy.

    Bosonic searches stay below the lowest pole of ``h_static + Sigma(i nu_0)``.
    """
    nb = h_static.shape[0]
    if target <= 0:
        raise UnreachableFillingError("target particle number must be positive")
    evals = np.linalg.eigvalsh(h_static)
    spread = float(evals[-1] - evals[0]) + 1.0
    center = float(evals.mean()) if guess is None else guess

    def f(mu):
        return _particle_number(h_static, mu, mesh, sigma_dyn) - target

    if mesh.parity is Statistics.FERMION:
        if target >= nb:
            raise UnreachableFillingError(f"target {target} >= capacity {nb}")
        lo, hi = center - spread, center + spread
        for _ in range(200):
            if f(lo) < 0:
                break
            lo -= spread
            spread *= 2
        for _ in range(200):
            if f(hi) > 0:
                break
            hi += spread
            spread *= 2
    else:
        stat = h_static
        if sigma_dyn is not None:
            s0 = sigma_dyn[mesh.position(0)]
            stat = h_static + 0.5 * (s0 + s0.conj().T).real
        top = float(np.linalg.eigvalsh(stat)[0])
        hi = top - max(1e-13, 1e-12 * abs(top))
        lo = top - spread
        for _ in range(200):
            if f(lo) < 0:
                break
            lo -= spread
            spread *= 2
        if f(hi) <= 0:
            raise UnreachableFillingError("bosonic filling not reachable below the lowest pole")
    if not (f(lo) < 0 < f(hi)):
        raise UnreachableFillingError(f"could not bracket N={target}")
    return brentq(f, lo, hi, xtol=mu_tol * 1e-3, rtol=4 * np.finfo(float).eps, maxiter=500)


@dataclass
class ScfState:
    model: ModelSystem
    config: ScfConfig
    mus: np.ndarray
    g: list  # MatsubaraGF per species
    sigma: list  # SelfEnergy per species
    density_matrices: list
    v_hartree: list
    polarizations: list = field(default_factory=list)
    w: ScreenedInteraction | None = None
    iteration: int = 0
    converged: bool = False
    history: list = field(default_factory=list)

    @property
    def densities(self) -> list:
        return [np.diag(r).copy() for r in self.density_matrices]

    def g_tau(self, k: int) -> ImagTimeGF:
        return matsubara_to_tau(self.g[k], self.config.n_tau)


def _static_h(model: ModelSystem, k: int, v_h: np.ndarray, sigma: SelfEnergy | None) -> np.ndarray:
    h = model.onebody(k) + np.diag(v_h)
    if sigma is not None:
        h = h + sigma.static
    return h


def _species_mesh(model: ModelSystem, k: int, cfg: ScfConfig) -> MatsubaraMesh:
    return MatsubaraMesh(model.beta, cfg.n_freq, model.species[k].statistics)


def _solve_species(model, k, cfg, v_h, sigma, guess=None):
    mesh = _species_mesh(model, k, cfg)
    h = _static_h(model, k, v_h, sigma)
    dyn = None if sigma is None else sigma.dynamic_data()
    mu = chemical_potential_search(h, model.species[k].particle_count, mesh, dyn, cfg.mu_tol, guess)
    res = dyson_static(h, mu, mesh, dyn, k)
    return mu, res


def _low_freq_slice(mesh: MatsubaraMesh) -> np.ndarray:
    order = np.argsort(np.abs(mesh.values), kind="stable")
    return np.sort(order[:2])


def _mix_sigma(new: SelfEnergy, old: SelfEnergy | None, alpha: float) -> SelfEnergy:
    if old is None or alpha == 1.0:
        return new
    static = alpha * new.static + (1 - alpha) * old.static
    nd, od = new.dynamic, old.dynamic
    if nd is None and od is None:
        return SelfEnergy(new.species, static, None)
    base = nd if nd is not None else od
    ndata = nd.data if nd is not None else 0.0
    odata = od.data if od is not None else 0.0
    dyn = MatsubaraGF(base.mesh, alpha * ndata + (1 - alpha) * odata, base.species, base.reference)
    return SelfEnergy(new.species, static, dyn)


def _screening_step(model, cfg, gs, w_prev, iteration):
    """P, W~ and Sigma for every species from the current propagators."""
    from . import vertex

    species = model.species
    g_taus = [matsubara_to_tau(g, cfg.n_tau) for g in gs]
    use_vertex = cfg.scheme is Scheme.GW_GAMMA1
    gammas = [None] * len(species)
    if use_vertex and w_prev is not None:
        gammas = [vertex.gamma_first_order(g, w_prev, s.charge, cfg.vertex_n_freq) for g, s in zip(gs, species)]
    p_all = []
    for k, gt in enumerate(g_taus):
        if gammas[k] is None:
            p_all.append(polarization_gw(gt, cfg.n_freq))
        else:
            p_all.append(vertex.polarization_vertex_corrected(gt, gs[k], gammas[k], cfg.n_freq))
    bmesh = p_all[0].mesh
    if cfg.suppress_w:
        w = ScreenedInteraction.zero(bmesh, model.n_sites)
    else:
        try:
            w = solve_screened_interaction(p_all, species, model.coulomb)
        except ScreeningInstabilityError as exc:
            exc.iteration = iteration
            raise
    sigmas = []
    for k, gt in enumerate(g_taus):
        if gammas[k] is None:
            sigmas.append(self_energy_gw(gt, w, species[k].charge, cfg.n_freq))
        else:
            sigmas.append(vertex.self_energy_gw_gamma(gt, gs[k], w, gammas[k], species[k].charge, cfg.n_freq))
    return p_all, w, sigmas


def scf_run(model: ModelSystem, cfg: ScfConfig | None = None) -> ScfState:
    """Self-consistent loop for the configured scheme.

    Non-convergence is reported through ``state.converged``; screening
    instabilities propagate with the iteration number attached.
    """
    cfg = ScfConfig() if cfg is None else cfg
    ns = model.n_species
    nb = model.n_sites
    zero_v = [np.zeros(nb) for _ in range(ns)]
    mus, gs, residuals = [], [], []
    for k in range(ns):
        mu, res = _solve_species(model, k, cfg, zero_v[k], None)
        mus.append(mu)
        gs.append(res.g)
        residuals.append(res.residual)
    rho = [density_matrix(g) for g in gs]
    state = ScfState(model, cfg, np.array(mus), gs, [None] * ns, rho, zero_v)
    state.history.append({"iteration": 0, "dyson_residual": max(residuals)})

    if cfg.scheme is Scheme.GW0:
        hartree = scf_run(model, ScfConfig(**{**cfg.__dict__, "scheme": Scheme.HARTREE_ONLY}))
        p_all, w, sigmas = _screening_step(model, cfg, hartree.g, None, 1)
        new_mus, new_g, residuals = [], [], []
        for k in range(ns):
            mu, res = _solve_species(model, k, cfg, hartree.v_hartree[k], sigmas[k], hartree.mus[k])
            new_mus.append(mu)
            new_g.append(res.g)
            residuals.append(res.residual)
        hist = hartree.history + [{"iteration": hartree.iteration + 1, "stage": "gw0",
                                   "dyson_residual": max(residuals)}]
        return ScfState(model, cfg, np.array(new_mus), new_g, sigmas, [density_matrix(g) for g in new_g],
                        hartree.v_hartree, p_all, w, hartree.iteration + 1, hartree.converged, hist)

    dynamic = cfg.scheme in (Scheme.SCGW, Scheme.GW_GAMMA1)
    alpha = cfg.mixing
    sigmas = [None] * ns
    for it in range(1, cfg.max_iter + 1):
        v_h = hartree_potential([np.diag(r) for r in state.density_matrices], model.species, model.coulomb)
        if dynamic:
            p_all, w, new_sigmas = _screening_step(model, cfg, state.g, state.w, it)
            sigmas = [_mix_sigma(n, o, alpha) for n, o in zip(new_sigmas, sigmas)]
            state.polarizations, state.w = p_all, w
        new_mus, new_g, residuals = [], [], []
        for k in range(ns):
            mu, res = _solve_species(model, k, cfg, v_h[k], sigmas[k], state.mus[k])
            new_mus.append(mu)
            new_g.append(res.g)
            residuals.append(res.residual)
        new_rho = [density_matrix(g) for g in new_g]
        d_rho = max(float(np.max(np.abs(a - b))) for a, b in zip(new_rho, state.density_matrices))
        d_g = 0.0
        for g_new, g_old in zip(new_g, state.g):
            sl = _low_freq_slice(g_new.mesh)
            d_g = max(d_g, float(np.linalg.norm(g_new.data[sl] - g_old.data[sl])))
        state.history.append({"iteration": it, "density_change": d_rho, "g_change": d_g,
                              "dyson_residual": max(residuals), "mus": [float(m) for m in new_mus]})
        state.mus = np.array(new_mus)
        state.g = new_g
        state.sigma = sigmas
        state.v_hartree = v_h
        state.iteration = it
        if d_rho < cfg.tol and d_g < cfg.tol:
            state.density_matrices = new_rho
            state.converged = True
            break
        state.density_matrices = [alpha * a + (1 - alpha) * b for a, b in zip(new_rho, state.density_matrices)]
    else:
        LOGGER.warning("SCF (%s) not converged after %d iterations", cfg.scheme.value, cfg.max_iter)
    if not state.converged:
        state.density_matrices = [density_matrix(g) for g in state.g]
    return state
