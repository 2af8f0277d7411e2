r"""Green's functions on Matsubara and imaginary-time grids.

Conventions
-----------
``G_ij(tau) = -<T psi_i(tau) psi_j^dag(0)>`` for ``0 < tau < beta`` and

.. math:: G(i\omega_n) = \int_0^\beta d\tau\, e^{i\omega_n\tau} G(\tau),
          \qquad G(\tau) = \frac{1}{\beta}\sum_n e^{-i\omega_n\tau} G(i\omega_n).

A free level ``xi`` gives ``G(iw) = 1/(iw - xi)``.

Tail handling: every transform subtracts a pole reference
``R(iw) = sum_p A_p / (iw - e_p)`` whose imaginary-time form is known in
closed form, and Fourier-sums only the smooth remainder.  Propagators carry
the static effective Hamiltonian as reference (leading tail ``I/(iw)`` plus
the whole static part), so a free or static-only propagator is transformed
exactly.  Without a reference a fermionic function falls back to the bare
``I/(iw)`` tail, i.e. ``-1/2`` in imaginary time.

The remainder is sampled on ``tau_j = j beta / n_tau``; with
``n_tau >= 2 n_freq`` the discrete pair below is an exact inverse pair on the
kept frequencies.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ParityMismatchError, SingularPropagatorError
from .model import Statistics


@dataclass(frozen=True)
class MatsubaraMesh:
    """Frequencies ``n = -n_freq .. n_freq-1``; ``(2n+1) pi/beta`` or ``2n pi/beta``."""

    beta: float
    n_freq: int
    parity: Statistics = Statistics.FERMION

    def __post_init__(self):
        object.__setattr__(self, "parity", Statistics(self.parity))
        if not self.beta > 0 or self.n_freq < 1:
            raise ValueError("mesh needs beta > 0 and n_freq >= 1")

    @property
    def indices(self) -> np.ndarray:
        return np.arange(-self.n_freq, self.n_freq)

    @property
    def values(self) -> np.ndarray:
        offset = 1 if self.parity is Statistics.FERMION else 0
        return (2 * self.indices + offset) * np.pi / self.beta

    @property
    def iw(self) -> np.ndarray:
        return 1j * self.values

    @property
    def zeta(self) -> int:
        return self.parity.zeta

    def position(self, n: int) -> int:
        """Array position of Matsubara index ``n``."""
        return n + self.n_freq

    def with_parity(self, parity) -> "MatsubaraMesh":
        return replace(self, parity=Statistics(parity))


def pole_tau(e: np.ndarray, tau: np.ndarray, beta: float, zeta: int) -> np.ndarray:
    """Imaginary-time image of ``1/(iw - e)``, shape ``(len(tau), len(e))``.

    ``-exp(-e tau) / (1 - zeta exp(-beta e))`` evaluated without overflow.
    At ``tau = 0`` and ``tau = beta`` this gives the one-sided limits 0+ and beta-.
    """
    e = np.asarray(e, dtype=float)[None, :]
    tau = np.asarray(tau, dtype=float)[:, None]
    if zeta == -1:
        return -np.exp(-e * tau - np.logaddexp(0.0, -beta * e))
    if np.any(e == 0.0):
        raise SingularPropagatorError("bosonic pole at zero energy has no thermal image")
    pos = e > 0
    e_pos = np.where(pos, e, 1.0)
    e_neg = np.where(pos, -1.0, e)
    out_pos = np.exp(-e_pos * tau) / np.expm1(-beta * e_pos)
    out_neg = np.exp(e_neg * (beta - tau)) / -np.expm1(beta * e_neg)
    return np.where(pos, out_pos, out_neg)


@dataclass(frozen=True)
class PoleReference:
    """``R(iw) = sum_p residues[p] / (iw - poles[p])``."""

    poles: np.ndarray
    residues: np.ndarray  # (n_poles, nb, nb)

    @classmethod
    def from_hermitian(cls, xi: np.ndarray) -> "PoleReference":
        e, u = np.linalg.eigh(xi)
        return cls(poles=e, residues=np.einsum("ip,jp->pij", u, u.conj()))

    @classmethod
    def single(cls, coeff: np.ndarray, pole: float) -> "PoleReference":
        return cls(poles=np.array([float(pole)]), residues=np.asarray(coeff, dtype=complex)[None])

    def matrix(self) -> np.ndarray:
        """Static matrix ``sum_p e_p A_p`` (``h - mu`` for a propagator reference)."""
        return np.einsum("p,pij->ij", self.poles, self.residues)

    def matsubara(self, mesh: MatsubaraMesh) -> np.ndarray:
        return np.einsum("wp,pij->wij", 1.0 / (mesh.iw[:, None] - self.poles[None, :]), self.residues)

    def tau(self, taus: np.ndarray, beta: float, zeta: int) -> np.ndarray:
        return np.einsum("tp,pij->tij", pole_tau(self.poles, taus, beta, zeta), self.residues)


@dataclass(frozen=True)
class MatsubaraGF:
    mesh: MatsubaraMesh
    data: np.ndarray  # (2 n_freq, nb, nb)
    species: int = 0
    reference: PoleReference | None = field(default=None, repr=False)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=complex)
        if data.ndim != 3 or data.shape[0] != 2 * self.mesh.n_freq:
            raise ValueError(f"data shape {data.shape} does not match mesh with n_freq={self.mesh.n_freq}")
        object.__setattr__(self, "data", data)

    @property
    def n_basis(self) -> int:
        return self.data.shape[1]

    @property
    def beta(self) -> float:
        return self.mesh.beta

    def at(self, n: int) -> np.ndarray:
        return self.data[self.mesh.position(n)]

    def _reference_or_default(self) -> PoleReference | None:
        if self.reference is not None:
            return self.reference
        if self.mesh.parity is Statistics.FERMION:
            return PoleReference.single(np.eye(self.n_basis), 0.0)
        return None


@dataclass(frozen=True)
class ImagTimeGF:
    beta: float
    data: np.ndarray  # (n_tau + 1, nb, nb); row 0 is tau=0+, row n_tau is tau=beta-
    parity: Statistics = Statistics.FERMION
    species: int = 0
    reference: PoleReference | None = field(default=None, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "parity", Statistics(self.parity))
        object.__setattr__(self, "data", np.asarray(self.data))

    @property
    def n_tau(self) -> int:
        return self.data.shape[0] - 1

    @property
    def taus(self) -> np.ndarray:
        return np.linspace(0.0, self.beta, self.n_tau + 1)

    @property
    def zeta(self) -> int:
        return self.parity.zeta


def g0_matsubara(h0: np.ndarray, mu: float, mesh: MatsubaraMesh, species: int = 0) -> MatsubaraGF:
    """Free propagator ``[(iw + mu) I - h0]^-1`` via the eigenbasis of ``h0``."""
    h0 = np.asarray(h0, dtype=float)
    if not np.allclose(h0, h0.T, atol=1e-13):
        raise ValueError("h0 must be symmetric")
    ref = PoleReference.from_hermitian(h0 - mu * np.eye(len(h0)))
    if mesh.parity is Statistics.BOSON and np.any(np.abs(ref.poles) < 1e-14):
        raise SingularPropagatorError(f"mu={mu} coincides with an eigenvalue of h0 at nu_0")
    return MatsubaraGF(mesh=mesh, data=ref.matsubara(mesh), species=species, reference=ref)


def _phase(parity: Statistics, n_tau: int) -> np.ndarray:
    j = np.arange(n_tau)
    if parity is Statistics.FERMION:
        return np.exp(1j * np.pi * j / n_tau)
    return np.ones(n_tau)


def matsubara_to_tau(g: MatsubaraGF, n_tau: int | None = None) -> ImagTimeGF:
    """Fourier sum to ``tau_j = j beta/n_tau`` with the reference summed analytically."""
    mesh = g.mesh
    n_tau = 2 * mesh.n_freq if n_tau is None else int(n_tau)
    if n_tau < 2 * mesh.n_freq:
        raise ValueError(f"n_tau={n_tau} must be >= 2*n_freq={2 * mesh.n_freq} for an invertible pair")
    ref = g._reference_or_default()
    diff = g.data if ref is None else g.data - ref.matsubara(mesh)
    buf = np.zeros((n_tau,) + diff.shape[1:], dtype=complex)
    buf[mesh.indices % n_tau] = diff
    series = np.fft.fft(buf, axis=0) / mesh.beta
    j = np.arange(n_tau + 1)
    phase = np.exp(-1j * np.pi * j / n_tau) if mesh.parity is Statistics.FERMION else np.ones(n_tau + 1)
    values = phase[:, None, None] * series[j % n_tau]
    taus = np.linspace(0.0, mesh.beta, n_tau + 1)
    if ref is not None:
        values = values + ref.tau(taus, mesh.beta, mesh.zeta)
    return ImagTimeGF(beta=mesh.beta, data=values, parity=mesh.parity, species=g.species, reference=g.reference)


def _jump_reference(g: ImagTimeGF) -> PoleReference | None:
    jump = g.data[0] - g.zeta * g.data[-1]
    if not np.any(np.abs(jump) > 1e-15):
        return None
    pole = 0.0 if g.parity is Statistics.FERMION else np.pi / g.beta
    return PoleReference.single(-jump, pole)


def _endpoint_slopes(data: np.ndarray, dtau: float) -> tuple:
    """Fourth-order one-sided derivatives at ``tau = 0+`` and ``tau = beta-``."""
    c = np.array([-25.0, 48.0, -36.0, 16.0, -3.0]) / (12.0 * dtau)
    head = np.einsum("t,tij->ij", c, data[:5])
    tail = -np.einsum("t,tij->ij", c, data[::-1][:5])
    return head, tail


def _kink_transform(data: np.ndarray, beta: float, mesh: "MatsubaraMesh"):
    """Coefficient ``c`` of ``c tau (beta - tau)`` matching the slope jump, and its transform."""
    n_tau = data.shape[0] - 1
    head, tail = _endpoint_slopes(data, beta / n_tau)
    c = (tail - head) / (-2.0 * beta)
    nu = mesh.values
    with np.errstate(divide="ignore"):
        shape = np.where(nu == 0.0, beta**3 / 6.0, -2.0 * beta / np.where(nu == 0.0, 1.0, nu) ** 2)
    return c, shape[:, None, None] * c[None]


def tau_to_matsubara(g: ImagTimeGF, n_freq: int | None = None, parity=None,
                     subtract_jump: bool = True, subtract_kink: bool = False) -> MatsubaraGF:
    """Inverse of :func:`matsubara_to_tau` (discrete quadrature of the remainder).

    Without a stored reference, a discontinuity ``f(0+) - zeta f(beta-)`` is
    removed with a single pole before the quadrature; pass
    ``subtract_jump=False`` for kernels that are continuous by construction.
    ``subtract_kink`` (bosonic, continuous input) also removes the slope jump
    at the boundary with ``c tau (beta - tau)``, lifting the quadrature from
    second to fourth order in the grid spacing.
    """
    if parity is not None and Statistics(parity) is not g.parity:
        raise ParityMismatchError(f"requested {Statistics(parity).value} parity for a {g.parity.value} function")
    n_tau = g.n_tau
    n_freq = n_tau // 2 if n_freq is None else int(n_freq)
    if 2 * n_freq > n_tau:
        raise ValueError("n_freq too large for the tau grid")
    ref = g.reference
    if ref is None and subtract_jump:
        ref = _jump_reference(g)
    mesh = MatsubaraMesh(g.beta, n_freq, g.parity)
    samples = g.data[:n_tau].astype(complex)
    if ref is not None:
        samples = samples - ref.tau(g.taus[:n_tau], g.beta, g.zeta)
    kink = None
    if subtract_kink:
        if g.parity is not Statistics.BOSON or ref is not None or n_tau < 8:
            raise ValueError("kink subtraction needs a continuous bosonic function on at least 8 intervals")
        c, kink = _kink_transform(g.data, g.beta, mesh)
        t = g.taus[:n_tau]
        samples = samples - (t * (g.beta - t))[:, None, None] * c[None]
    spectrum = g.beta * np.fft.ifft(_phase(g.parity, n_tau)[:, None, None] * samples, axis=0)
    data = spectrum[mesh.indices % n_tau]
    if ref is not None:
        data = data + ref.matsubara(mesh)
    if kink is not None:
        data = data + kink
    return MatsubaraGF(mesh=mesh, data=data, species=g.species, reference=ref)


def g_beta_minus(g: MatsubaraGF) -> np.ndarray:
    """``G(beta^-)`` straight from the Matsubara data."""
    mesh = g.mesh
    ref = g._reference_or_default()
    if ref is None:
        return mesh.zeta * g.data.sum(axis=0) / mesh.beta
    diff = g.data - ref.matsubara(mesh)
    return mesh.zeta * diff.sum(axis=0) / mesh.beta + ref.tau(np.array([mesh.beta]), mesh.beta, mesh.zeta)[0]


def density_matrix(g: MatsubaraGF | ImagTimeGF) -> np.ndarray:
    """One-body density matrix ``n_ij = <psi_j^dag psi_i> = -G_ij(beta^-)``."""
    gb = g.data[-1] if isinstance(g, ImagTimeGF) else g_beta_minus(g)
    return (-gb).real


def density_from_gf(g: MatsubaraGF | ImagTimeGF) -> np.ndarray:
    """Site occupations ``<psi_i^dag psi_i>``."""
    return np.diag(density_matrix(g)).copy()


def kms_residual(g: ImagTimeGF) -> float:
    """``max |G(0+) - zeta G(beta-) + I|``: boundary condition plus the equal-time (anti)commutator."""
    nb = g.data.shape[1]
    return float(np.max(np.abs(g.data[0] - g.zeta * g.data[-1] + np.eye(nb))))


def tail_residual(g: MatsubaraGF) -> float:
    """Spectral norm of ``iw G(iw) - I`` at the largest positive kept frequency."""
    n = g.mesh.n_freq - 1
    iw = g.mesh.iw[g.mesh.position(n)]
    return float(np.linalg.norm(iw * g.at(n) - np.eye(g.n_basis), ord=2))


def reality_residual(g: MatsubaraGF) -> float:
    """``max |G(iw_n)^* - G(iw_{-n-1})^T|`` (fermionic) or ``G(i nu_{-m})`` (bosonic)."""
    mesh = g.mesh
    idx = mesh.indices
    mirror = -idx - 1 if mesh.parity is Statistics.FERMION else -idx
    keep = (mirror >= -mesh.n_freq) & (mirror < mesh.n_freq)
    a = g.data[keep].conj()
    b = np.transpose(g.data[mirror[keep] + mesh.n_freq], (0, 2, 1))
    return float(np.max(np.abs(a - b))) if a.size else 0.0
