"""First-order vertex correction beyond GW.

One iteration of the vertex equation with the GW kernel
``dSigma/dG = -W`` (the ``dW/dG`` piece is dropped) gives

    Gamma(1,2;3) = delta(1,2) delta(1,3) - W(1,2) G(1,3) G(3,2).

In frequency space the correction is stored as

    gamma_{cd;b}(i Omega, i nu) = -1/beta sum_w W_cd(i Omega - i w) G_cb(i w) G_bd(i w - i nu)

on a reduced mesh of ``Omega`` (species parity) and ``nu`` (bosonic); the
inner sum runs over the full propagator mesh.  Contractions:

    P_ab(i nu)    = bubble - zeta/beta sum_Omega G_ac(i Omega) gamma_{cd;b}(i Omega, i nu) G_da(i Omega - i nu)
    Sigma_ae(i w) = GW     - 1/beta sum_nu W_af(i nu) G_ac(i w - i nu) gamma_{ce;f}(i w - i nu, -i nu)

Corrections outside the reduced mesh are set to zero.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import UnsupportedSizeError
from .gf import ImagTimeGF, MatsubaraGF, MatsubaraMesh
from .hedin import ScreenedInteraction, SelfEnergy, polarization_gw, self_energy_gw
from .model import Statistics

MAX_SITES = 4
MAX_VERTEX_FREQ = 32


@dataclass
class VertexKernel:
    fermion_mesh: MatsubaraMesh  # reduced mesh of the propagator frequency Omega
    boson_mesh: MatsubaraMesh  # reduced bosonic transfer mesh
    correction: np.ndarray | None  # (2 nf, 2 nb, nb, nb, nb) indexed [Omega, nu, c, d, b]

    @property
    def is_bare(self) -> bool:
        return self.correction is None

    def full(self) -> np.ndarray:
        """Dense ``Gamma_{cd;b}`` including the ``delta delta`` part (for inspection)."""
        nb = self.n_basis
        bare = np.zeros((nb, nb, nb))
        for c in range(nb):
            bare[c, c, c] = 1.0
        out = np.broadcast_to(bare, (2 * self.fermion_mesh.n_freq, 2 * self.boson_mesh.n_freq, nb, nb, nb))
        return out + (0.0 if self.correction is None else self.correction)

    n_basis: int = 0


def _check_size(nb: int, n_vertex: int) -> None:
    if nb > MAX_SITES or n_vertex > MAX_VERTEX_FREQ:
        raise UnsupportedSizeError(
            f"stored vertex limited to n_sites <= {MAX_SITES} and n_freq <= {MAX_VERTEX_FREQ}; got {nb}, {n_vertex}"
        )


def _index_map(mesh: MatsubaraMesh, n: np.ndarray):
    # Bosonic meshes drop index -n_freq, which has no mirror partner; keeping
    # every truncated sum symmetric preserves G(iw)^* = G(-iw)^T exactly.
    pos = n + mesh.n_freq
    first = 1 if mesh.parity is Statistics.BOSON else 0
    ok = (pos >= first) & (pos < 2 * mesh.n_freq)
    return pos, ok


def _symmetrize(data: np.ndarray, mesh: MatsubaraMesh) -> np.ndarray:
    """Project onto ``X(iw)^* = X(-iw)^T`` (exact for real Hamiltonians).

    Truncated vertex sums satisfy it only up to rounding, and the scf loop
    amplifies any violation.
    """
    idx = mesh.indices
    mirror = -idx - 1 if mesh.parity is Statistics.FERMION else -idx
    pos, ok = _index_map(mesh, mirror)
    out = data.copy()
    out[ok] = 0.5 * (data[ok] + np.conj(np.transpose(data[pos[ok]], (0, 2, 1))))
    return out


def gamma_first_order(g: MatsubaraGF, w: ScreenedInteraction, charge: float, n_vertex: int = 16) -> VertexKernel:
    nb = g.n_basis
    _check_size(nb, n_vertex)
    fmesh = MatsubaraMesh(g.beta, n_vertex, g.mesh.parity)
    bmesh = MatsubaraMesh(g.beta, n_vertex, Statistics.BOSON)
    wk = charge**2 * w.data
    if not np.any(wk):
        return VertexKernel(fmesh, bmesh, None, nb)
    q = g.mesh.indices
    _, qok = _index_map(g.mesh, q)
    corr = np.zeros((2 * n_vertex, 2 * n_vertex, nb, nb, nb), dtype=complex)
    for ip, p in enumerate(fmesh.indices):
        wpos, wok = _index_map(w.mesh, p - q)
        for im, m in enumerate(bmesh.indices):
            gpos, gok = _index_map(g.mesh, q - m)
            ok = qok & wok & gok
            corr[ip, im] = -np.einsum(
                "qcd,qcb,qbd->cdb", wk[wpos[ok]], g.data[ok], g.data[gpos[ok]]
            ) / g.beta
    return VertexKernel(fmesh, bmesh, corr, nb)


def polarization_vertex_corrected(g_tau: ImagTimeGF, g: MatsubaraGF, gamma: VertexKernel,
                                  n_freq: int | None = None) -> MatsubaraGF:
    """Bubble plus the vertex correction; identical to the bubble when ``gamma`` is bare."""
    bubble = polarization_gw(g_tau, n_freq)
    if gamma.is_bare:
        return bubble
    zeta = g.mesh.zeta
    delta_p = np.zeros_like(bubble.data)
    fm, bm = gamma.fermion_mesh, gamma.boson_mesh
    gpos_p, pok = _index_map(g.mesh, fm.indices)
    _, fok = _index_map(fm, fm.indices)
    for im, m in enumerate(bm.indices):
        target, tok = _index_map(bubble.mesh, np.array([m]))
        _, mok = _index_map(bm, np.array([m]))
        if not (tok[0] and mok[0]):
            continue
        shifted, sok = _index_map(g.mesh, fm.indices - m)
        ok = pok & fok & sok
        delta = np.einsum("pac,pcdb,pda->ab", g.data[gpos_p[ok]], gamma.correction[ok, im], g.data[shifted[ok]])
        delta_p[target[0]] = -zeta * delta / g.beta
    return MatsubaraGF(bubble.mesh, bubble.data + _symmetrize(delta_p, bubble.mesh), bubble.species)


def self_energy_gw_gamma(g_tau: ImagTimeGF, g: MatsubaraGF, w: ScreenedInteraction, gamma: VertexKernel,
                         charge: float, n_freq: int | None = None) -> SelfEnergy:
    """GW self-energy plus the first-order vertex correction on the reduced mesh."""
    gw = self_energy_gw(g_tau, w, charge, n_freq)
    if gamma.is_bare:
        return gw
    wk = charge**2 * w.data
    fm, bm = gamma.fermion_mesh, gamma.boson_mesh
    nb = g.n_basis
    out_mesh = MatsubaraMesh(g.beta, w.mesh.n_freq if n_freq is None else n_freq, g.mesh.parity)
    delta = np.zeros((2 * out_mesh.n_freq, nb, nb), dtype=complex)
    for n in fm.indices:
        tgt, tok = _index_map(out_mesh, np.array([n]))
        _, nok = _index_map(fm, np.array([n]))
        if not (tok[0] and nok[0]):
            continue
        m = bm.indices
        inner, iok = _index_map(fm, n - m)
        neg, nok = _index_map(bm, -m)
        wpos, wok = _index_map(w.mesh, m)
        gpos, gok = _index_map(g.mesh, n - m)
        _, mok = _index_map(bm, m)
        ok = mok & iok & nok & wok & gok
        delta[tgt[0]] = -np.einsum(
            "maf,mac,mcef->ae", wk[wpos[ok]], g.data[gpos[ok]], gamma.correction[inner[ok], neg[ok]]
        ) / g.beta
    delta = _symmetrize(delta, out_mesh)
    if gw.dynamic is None:
        dyn = MatsubaraGF(out_mesh, delta, g.species)
    else:
        dyn = MatsubaraGF(gw.dynamic.mesh, gw.dynamic.data + delta, g.species, gw.dynamic.reference)
    return SelfEnergy(gw.species, gw.static, dyn)
