"""Bloch-Redfield master equation for small rings.

Every site couples to its own bath through ``sigma^z`` with an Ohmic spectrum.
The generator is assembled in the eigenbasis of ``H``; the relaxation tensor
follows the standard four-term expression

    R_abcd = -1/2 sum_alpha { delta_bd sum_n A_an A_nc S(w_cn) - A_ac A_db S(w_ca)
                              + delta_ac sum_n A_dn A_nb S(w_dn) - A_ac A_db S(w_db) }

with ``hbar = 1``.  Positive ``S`` arguments are energy-lowering transitions.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
from scipy.integrate import solve_ivp

from .hamiltonians import SparseHamiltonian, site_operator
from .observables import blockade_density, bubble_densities, magnetization

N_MAX_REDFIELD = 6
SPECTRUM_FORMS = ("paper-literal", "cutoff-corrected", "thermal")


class DegeneracyWarning(UserWarning):
    pass


class IntegratorError(RuntimeError):
    pass


class ContractError(ValueError):
    pass


@dataclass(frozen=True)
class BathSpec:
    """Ohmic bath ``S(w) = eta * w * theta(w) * exp(-w/omega_c)`` and variants.

    ``form="paper-literal"`` keeps ``exp(+w/omega_c)``; ``"thermal"`` replaces
    the step function by the Bose factor so that ``S(-w) = exp(-w/T) S(w)``.
    """

    eta: float
    omega_c: float = 10.0
    form: str = "cutoff-corrected"
    temperature: float | None = None

    def __post_init__(self):
        if not (0.0 <= self.eta < 1.0):
            raise ValueError("eta must lie in [0, 1)")
        if self.omega_c <= 0:
            raise ValueError("omega_c must be positive")
        if self.form not in SPECTRUM_FORMS:
            raise ValueError(f"unknown spectrum form {self.form!r}")
        if self.form == "thermal" and not (self.temperature and self.temperature > 0):
            raise ValueError("thermal spectrum needs a positive temperature")

    def spectrum(self, w) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        if self.form == "thermal":
            T = float(self.temperature)
            x = w / T
            out = np.empty_like(w)
            small = np.abs(x) < 1e-8
            # w / (1 - exp(-w/T)) -> T at w = 0
            out[small] = T * (1 + x[small] / 2)
            big = ~small
            out[big] = w[big] / -np.expm1(-x[big])
            return self.eta * out * np.exp(-np.abs(w) / self.omega_c)
        sign = 1.0 if self.form == "paper-literal" else -1.0
        return np.where(w > 0, self.eta * w * np.exp(sign * w / self.omega_c), 0.0)

    def to_dict(self) -> dict:
        return {"eta": self.eta, "omega_c": self.omega_c, "form": self.form, "temperature": self.temperature}


@dataclass
class RedfieldTensor:
    R: np.ndarray  # (d, d, d, d), secular mask applied
    energies: np.ndarray
    vectors: np.ndarray
    couplings: np.ndarray  # (K, d, d) in the eigenbasis
    bath: BathSpec
    secular: bool
    threshold: float
    groups: list[list[int]] = field(default_factory=list)

    @property
    def dim(self) -> int:
        return self.energies.size

    def generator(self) -> np.ndarray:
        """Superoperator acting on row-major ``vec(rho)`` in the eigenbasis."""
        d = self.dim
        w = self.energies[:, None] - self.energies[None, :]
        L = self.R.reshape(d * d, d * d).copy()
        L[np.diag_indices(d * d)] += -1j * w.reshape(-1)
        return L

    def to_eigenbasis(self, rho: np.ndarray) -> np.ndarray:
        V = self.vectors
        return V.conj().T @ rho @ V

    def from_eigenbasis(self, rho: np.ndarray) -> np.ndarray:
        V = self.vectors
        return V @ rho @ V.conj().T

    def steady_state(self) -> np.ndarray:
        """Kernel of the generator, returned as a unit-trace density matrix in the site basis."""
        L = self.generator()
        _, s, vh = la.svd(L)
        v = vh[-1].conj().reshape(self.dim, self.dim)
        rho = self.from_eigenbasis(v)
        rho = 0.5 * (rho + rho.conj().T)
        return rho / np.trace(rho).real


def coupling_operators(n_sites: int) -> list[np.ndarray]:
    return [site_operator("z", j, n_sites).toarray() for j in range(n_sites)]


def _eigen(H) -> tuple[np.ndarray, np.ndarray]:
    M = H.toarray() if hasattr(H, "toarray") else np.asarray(H)
    return la.eigh(M)


def frequency_groups(energies: np.ndarray, threshold: float) -> list[list[int]]:
    """Clusters of eigenvalues closer than ``threshold`` (single-linkage)."""
    order = np.argsort(energies)
    groups = [[int(order[0])]]
    for a, b in zip(order, order[1:]):
        if energies[b] - energies[a] < threshold:
            groups[-1].append(int(b))
        else:
            groups.append([int(b)])
    return groups


def build_redfield(
    H,
    bath: BathSpec,
    secular: bool = True,
    threshold: float = 1e-9,
    operators: list[np.ndarray] | None = None,
    n_sites: int | None = None,
) -> RedfieldTensor:
    """Assemble the relaxation tensor for ``H`` with one ``sigma^z`` bath per site."""
    if n_sites is None:
        n_sites = H.n_sites if isinstance(H, SparseHamiltonian) else int(round(math.log2(np.shape(H)[0])))
    if n_sites > N_MAX_REDFIELD:
        raise ContractError(f"Redfield tensor limited to N <= {N_MAX_REDFIELD}")
    E, V = _eigen(H)
    d = E.size
    ops = operators if operators is not None else coupling_operators(n_sites)
    A = np.array([V.conj().T @ op @ V for op in ops])
    w = E[:, None] - E[None, :]  # w[c, n] = E_c - E_n
    S = bath.spectrum(w)

    T1 = np.einsum("kan,knc,cn->ac", A, A, S)
    T3 = np.einsum("kdn,dn,knb->db", A, S, A)
    G = np.einsum("kac,kdb->abcd", A, A)
    eye = np.eye(d)
    R = G * (S.T[:, None, :, None] + S.T[None, :, None, :])  # S(w_ca) + S(w_db)
    R -= np.einsum("bd,ac->abcd", eye, T1)
    R -= np.einsum("ac,db->abcd", eye, T3)
    R *= 0.5

    groups = frequency_groups(E, threshold)
    if secular:
        wab = w.reshape(d, d, 1, 1)
        wcd = w.reshape(1, 1, d, d)
        gap = np.abs(wab - wcd)
        R = np.where(gap < threshold, R, 0.0)
        near = (gap >= threshold) & (gap < 1e3 * threshold)
        if np.any(near):
            warnings.warn(
                f"{int(near.sum())} frequency differences lie within 1e3 x threshold of the secular cut;"
                f" grouping used: {groups}",
                DegeneracyWarning,
                stacklevel=2,
            )
    return RedfieldTensor(R, E, V, A, bath, secular, threshold, groups)


# ----------------------------------------------------------------------------
# evolution


@dataclass
class MasterTrajectory:
    times: np.ndarray
    states: list[np.ndarray]
    trace: np.ndarray
    hermiticity: np.ndarray
    min_eigenvalue: np.ndarray
    meta: dict = field(default_factory=dict)

    def rows(self, n_max: int = 6) -> list[list[float]]:
        out = []
        for t, rho, tr, mn in zip(self.times, self.states, self.trace, self.min_eigenvalue):
            lam = bubble_densities(rho, n_max)
            out.append([float(t), magnetization(rho), *[lam.get(n, 0.0) for n in range(1, n_max + 1)],
                        blockade_density(rho), float(tr), float(mn)])
        return out

    @staticmethod
    def header(n_max: int = 6) -> list[str]:
        return ["time", "M", *[f"lambda_{n}" for n in range(1, n_max + 1)], "Q_B", "trace", "min_eigenvalue"]


def _check_rho(rho: np.ndarray, tol: float = 1e-8) -> None:
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise ContractError("density matrix must be square")
    if np.max(np.abs(rho - rho.conj().T)) > tol:
        raise ContractError("density matrix is not Hermitian")
    if abs(np.trace(rho).real - 1.0) > tol:
        raise ContractError("density matrix must have unit trace")
    if la.eigvalsh(rho).min() < -tol:
        raise ContractError("density matrix is not positive semidefinite")


def evolve_master(
    rho0: np.ndarray,
    tensor: RedfieldTensor,
    T: float,
    dt: float,
    method: str = "expm",
    rtol: float = 1e-10,
    atol: float = 1e-12,
) -> MasterTrajectory:
    """Integrate ``d rho/dt = L rho`` and record every ``dt`` up to ``T``.

    ``method`` is ``"expm"`` (exact propagator per record interval, the default
    for static generators), ``"rk45"`` (adaptive Dormand-Prince) or ``"rk4"``
    (fixed step ``dt``).
    """
    rho0 = np.asarray(rho0, dtype=complex)
    _check_rho(rho0)
    d = tensor.dim
    if rho0.shape != (d, d):
        raise ContractError("density matrix and tensor dimensions disagree")
    n_rec = max(1, int(round(T / dt))) if T > 0 else 0
    times = np.linspace(0.0, n_rec * dt, n_rec + 1) if T > 0 else np.array([0.0])
    L = tensor.generator()
    x0 = tensor.to_eigenbasis(rho0).reshape(-1)

    if method == "expm":
        P = la.expm(L * dt)
        xs = [x0]
        for _ in range(n_rec):
            xs.append(P @ xs[-1])
    elif method == "rk4":
        xs = [x0]
        diag = np.arange(d) * (d + 1)
        for k in range(n_rec):
            x = xs[-1]
            k1 = L @ x
            k2 = L @ (x + 0.5 * dt * k1)
            k3 = L @ (x + 0.5 * dt * k2)
            k4 = L @ (x + dt * k3)
            xs.append(x + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4))
            tr = xs[-1][diag].sum().real
            if not abs(tr - 1.0) <= 1e-6:
                raise IntegratorError(f"trace drifted to {tr!r} at t={(k + 1) * dt:.6g}")
            # L is trace-free, so an unstable step shows up in the norm first
            if not np.linalg.norm(xs[-1]) <= 2.0:
                raise IntegratorError(f"step dt={dt} is unstable (norm blow-up at t={(k + 1) * dt:.6g})")
    elif method == "rk45":
        if n_rec == 0:
            xs = [x0]
        else:
            sol = solve_ivp(lambda t, x: L @ x, (0.0, times[-1]), x0, method="RK45", t_eval=times,
                            rtol=rtol, atol=atol)
            if not sol.success:
                raise IntegratorError(sol.message)
            xs = list(sol.y.T)
    else:
        raise ValueError(f"unknown method {method!r}")

    states, trace, herm, mins = [], [], [], []
    for t, x in zip(times, xs):
        rho_e = x.reshape(d, d)
        rho = tensor.from_eigenbasis(rho_e)
        tr = np.trace(rho).real
        if abs(tr - 1.0) > 1e-6:
            raise IntegratorError(f"trace drifted to {tr!r} at t={t:.6g}")
        states.append(rho)
        trace.append(tr)
        herm.append(float(np.max(np.abs(rho - rho.conj().T))))
        mins.append(float(la.eigvalsh(0.5 * (rho + rho.conj().T)).min()))
    return MasterTrajectory(times, states, np.array(trace), np.array(herm), np.array(mins),
                            {"bath": tensor.bath.to_dict(), "secular": tensor.secular, "method": method})


def trace_distance(a: np.ndarray, b: np.ndarray) -> float:
    ev = la.eigvalsh(0.5 * ((a - b) + (a - b).conj().T))
    return 0.5 * float(np.abs(ev).sum())


def gibbs_state(H, temperature: float) -> np.ndarray:
    E, V = _eigen(H)
    p = np.exp(-(E - E.min()) / temperature)
    p /= p.sum()
    return (V * p) @ V.conj().T


def ground_projector(H) -> np.ndarray:
    E, V = _eigen(H)
    g = V[:, 0]
    return np.outer(g, g.conj())
