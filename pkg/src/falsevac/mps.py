"""Open-chain matrix-product states and fourth-order TEBD.

Tensors have legs ``(left bond, physical, right bond)`` with physical index
0 = up, 1 = down.  Gates are applied while sweeping the orthogonality centre,
so every two-site update is an exact SVD of a centre-carrying block.

Observables average over the sites that remain after discarding ``discard``
sites at each end.  A window is attributed to the site of its first flipped
spin, and densities are divided by the number of kept sites ``N - 2 discard``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as la

from .hamiltonians import OperatorTerm, SparseHamiltonian, terms_to_matrix
from .lattice import ModelParams, SpinConfig
from .observables import ShotSet, shot_uniforms

PAULI = {
    "id": np.eye(2, dtype=complex),
    "x": np.array([[0, 1], [1, 0]], dtype=complex),
    "y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "z": np.diag([1.0, -1.0]).astype(complex),
    "+": np.array([[0, 1], [0, 0]], dtype=complex),
    "-": np.array([[0, 0], [1, 0]], dtype=complex),
    "pu": np.diag([1.0, 0.0]).astype(complex),
    "pd": np.diag([0.0, 1.0]).astype(complex),
}

# Forest-Ruth triple jump around a Strang step
FR_THETA = 1.0 / (2.0 - 2.0 ** (1.0 / 3.0))


class FidelityWarning(UserWarning):
    pass


class FidelityError(RuntimeError):
    pass


@dataclass(frozen=True)
class MpsConfig:
    chi: int = 128
    dt: float = 0.01
    cutoff: float = 1e-10
    discard: int = 2

    def __post_init__(self):
        if self.chi < 1:
            raise ValueError("chi must be >= 1")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if not (0 < self.cutoff <= 1e-6):
            raise ValueError("cutoff must lie in (0, 1e-6]")
        if self.discard < 0:
            raise ValueError("discard must be >= 0")


@dataclass
class MpsState:
    tensors: list[np.ndarray]
    center: int = 0
    discard: int = 2

    @property
    def N(self) -> int:
        return len(self.tensors)

    @property
    def bond_dims(self) -> list[int]:
        return [t.shape[2] for t in self.tensors[:-1]]

    def copy(self) -> "MpsState":
        return MpsState([t.copy() for t in self.tensors], self.center, self.discard)

    @classmethod
    def product(cls, config: SpinConfig | Sequence[int], discard: int = 2) -> "MpsState":
        bits = config.bits if isinstance(config, SpinConfig) else tuple(config)
        tensors = []
        for b in bits:
            t = np.zeros((1, 2, 1), dtype=complex)
            t[0, int(b), 0] = 1.0
            tensors.append(t)
        return cls(tensors, 0, discard)

    @classmethod
    def random(cls, N: int, chi: int, rng: np.random.Generator, discard: int = 2) -> "MpsState":
        dims = [1] + [min(chi, 2 ** min(k, N - k)) for k in range(1, N)] + [1]
        tensors = [
            rng.normal(size=(dims[k], 2, dims[k + 1])) + 1j * rng.normal(size=(dims[k], 2, dims[k + 1]))
            for k in range(N)
        ]
        state = cls(tensors, N - 1, discard)
        state.canonicalize(0)
        state.normalize()
        return state

    # gauge handling -------------------------------------------------------

    def _shift_right(self, k: int) -> None:
        A = self.tensors[k]
        l, d, r = A.shape
        Q, R = la.qr(A.reshape(l * d, r), mode="economic")
        self.tensors[k] = Q.reshape(l, d, Q.shape[1])
        self.tensors[k + 1] = np.tensordot(R, self.tensors[k + 1], axes=(1, 0))

    def _shift_left(self, k: int) -> None:
        A = self.tensors[k]
        l, d, r = A.shape
        Q, R = la.qr(A.reshape(l, d * r).T, mode="economic")
        self.tensors[k] = Q.T.reshape(Q.shape[1], d, r)
        self.tensors[k - 1] = np.tensordot(self.tensors[k - 1], R.T, axes=(2, 0))

    def move_center(self, target: int) -> None:
        while self.center < target:
            self._shift_right(self.center)
            self.center += 1
        while self.center > target:
            self._shift_left(self.center)
            self.center -= 1

    def canonicalize(self, target: int = 0) -> None:
        """Full sweep so that every tensor left (right) of ``target`` is isometric."""
        self.center = 0
        for k in range(self.N - 1):
            self._shift_right(k)
        self.center = self.N - 1
        self.move_center(target)

    def norm(self) -> float:
        return float(np.linalg.norm(self.tensors[self.center]))

    def normalize(self) -> None:
        self.tensors[self.center] /= self.norm()

    def to_dense(self) -> np.ndarray:
        if self.N > 20:
            raise ValueError("dense conversion limited to N <= 20")
        psi = self.tensors[0]
        for t in self.tensors[1:]:
            psi = np.tensordot(psi, t, axes=(psi.ndim - 1, 0))
        return psi.reshape(-1)

    @classmethod
    def from_dense(cls, psi: np.ndarray, chi: int | None = None, discard: int = 2) -> "MpsState":
        N = int(round(math.log2(psi.size)))
        tensors = []
        rest = np.asarray(psi, dtype=complex).reshape(1, -1)
        for k in range(N - 1):
            l = rest.shape[0]
            U, S, Vh = la.svd(rest.reshape(l * 2, -1), full_matrices=False)
            keep = max(1, int(np.sum(S > 1e-14 * S[0])))
            if chi:
                keep = min(keep, chi)
            tensors.append(U[:, :keep].reshape(l, 2, keep))
            rest = S[:keep, None] * Vh[:keep]
        tensors.append(rest.reshape(rest.shape[0], 2, 1))
        return cls(tensors, N - 1, discard)


# ----------------------------------------------------------------------------
# contractions


def _environments(state: MpsState):
    """Left and right norm environments; ``L[k]`` covers sites ``< k``."""
    N = state.N
    L = [np.ones((1, 1), dtype=complex)]
    for A in state.tensors:
        L.append(np.einsum("ab,asc,bsd->cd", L[-1], A, A.conj(), optimize=True))
    R = [np.ones((1, 1), dtype=complex)]
    for A in reversed(state.tensors):
        R.append(np.einsum("asc,bsd,cd->ab", A, A.conj(), R[-1], optimize=True))
    R = R[::-1]  # R[k] covers sites >= k
    return L, R


def _window_value(state, L, R, start: int, ops: Sequence[np.ndarray]) -> complex:
    env = L[start]
    for k, op in enumerate(ops):
        A = state.tensors[start + k]
        env = np.einsum("ab,asc,ts,btd->cd", env, A, op, A.conj(), optimize=True)
    return complex(np.sum(env * R[start + len(ops)]))


def _diag_window(state, L, R, start: int, pattern: Sequence[int]) -> float:
    env = L[start]
    for k, s in enumerate(pattern):
        A = state.tensors[start + k][:, s, :]
        env = A.T @ env @ A.conj()
    return float(np.real(np.sum(env * R[start + len(pattern)])))


class ContractError(ValueError):
    pass


def mps_expectation(state: MpsState, observable: Sequence[OperatorTerm] | OperatorTerm, max_support: int = 8) -> float:
    """``<psi| sum of terms |psi> / <psi|psi>`` for contiguous local terms."""
    terms = [observable] if isinstance(observable, OperatorTerm) else list(observable)
    L, R = _environments(state)
    nrm = float(np.real(np.sum(L[-1])))
    total = 0.0 + 0.0j
    for term in terms:
        if not term.factors:
            total += term.coefficient * nrm
            continue
        sites = [s for s, _ in term.factors]
        lo, hi = min(sites), max(sites)
        if lo < 0 or hi >= state.N:
            raise ContractError("operator sites outside the open chain")
        if hi - lo + 1 > max_support:
            raise ContractError(f"operator support {hi - lo + 1} exceeds {max_support} contiguous sites")
        ops = [PAULI["id"]] * (hi - lo + 1)
        for s, p in term.factors:
            ops[s - lo] = PAULI[p]
        total += term.coefficient * _window_value(state, L, R, lo, ops)
    return float(np.real(total)) / nrm


def _kept(state) -> range:
    d = state.discard
    if state.N - 2 * d < 1:
        raise ValueError("discard leaves no sites")
    return range(d, state.N - d)


def bubble_density_mps(state: MpsState, n: int) -> float:
    L, R = _environments(state)
    nrm = float(np.real(np.sum(L[-1])))
    kept = _kept(state)
    total = 0.0
    pattern = [0] + [1] * n + [0]
    for j in kept:
        if j - 1 < 0 or j + n > state.N - 1:
            continue
        total += _diag_window(state, L, R, j - 1, pattern)
    return total / nrm / len(kept)


def blockade_density_mps(state: MpsState) -> float:
    L, R = _environments(state)
    nrm = float(np.real(np.sum(L[-1])))
    kept = _kept(state)
    total = sum(_diag_window(state, L, R, j, [1, 1]) for j in kept if j + 1 < state.N)
    return total / nrm / len(kept)


def magnetization_mps(state: MpsState) -> float:
    L, R = _environments(state)
    nrm = float(np.real(np.sum(L[-1])))
    kept = _kept(state)
    total = sum(_diag_window(state, L, R, j, [0]) - _diag_window(state, L, R, j, [1]) for j in kept)
    return total / nrm / len(kept)


def interface_density_mps(state: MpsState) -> np.ndarray:
    """``<P^down_{j-1} P^up_j P^down_{j+1}>`` for every site (0 at the chain ends)."""
    L, R = _environments(state)
    nrm = float(np.real(np.sum(L[-1])))
    out = np.zeros(state.N)
    for j in range(1, state.N - 1):
        out[j] = _diag_window(state, L, R, j - 1, [1, 0, 1]) / nrm
    return out


def sample_mps(state: MpsState, count: int, seed: int, schedule_hash: str = "") -> ShotSet:
    """Sequential z-basis sampling; shot ``i`` uses uniforms ``i*N .. i*N+N-1``."""
    _, R = _environments(state)
    nrm = float(np.real(np.sum(R[0])))
    N = state.N
    u = shot_uniforms(seed, 0, count * N).reshape(count, N)
    samples = np.zeros((count, N), dtype=np.uint8)
    for i in range(count):
        left = np.ones(1, dtype=complex) / math.sqrt(nrm)
        for k, A in enumerate(state.tensors):
            v0 = left @ A[:, 0, :]
            p0 = float(np.real(v0 @ R[k + 1] @ v0.conj()))
            if u[i, k] < p0:
                left = v0 / math.sqrt(p0)
            else:
                v1 = left @ A[:, 1, :]
                left = v1 / math.sqrt(max(1.0 - p0, 1e-300))
                samples[i, k] = 1
    return ShotSet(samples, seed, schedule_hash, {"source": "mps"})


# ----------------------------------------------------------------------------
# Hamiltonian pieces


def bond_hamiltonians(params: ModelParams, h_x: float | None = None, h_z: float | None = None) -> list[np.ndarray]:
    """Two-site terms of the open Ising chain; single-site fields are shared between bonds."""
    N, J = params.N, params.J
    hx = params.h_x if h_x is None else h_x
    hz = params.h_z if h_z is None else h_z
    X, Z, I = PAULI["x"], PAULI["z"], PAULI["id"]
    out = []
    for i in range(N - 1):
        wl = 1.0 if i == 0 else 0.5
        wr = 1.0 if i + 1 == N - 1 else 0.5
        h = -J * np.kron(Z, Z)
        h -= hx * (wl * np.kron(X, I) + wr * np.kron(I, X))
        h -= hz * (wl * np.kron(Z, I) + wr * np.kron(I, Z))
        out.append(h)
    return out


def open_chain_terms(params: ModelParams, h_x: float | None = None, h_z: float | None = None) -> list[OperatorTerm]:
    N, J = params.N, params.J
    hx = params.h_x if h_x is None else h_x
    hz = params.h_z if h_z is None else h_z
    terms = [OperatorTerm(-J, ((i, "z"), (i + 1, "z"))) for i in range(N - 1)]
    terms += [OperatorTerm(-hx, ((i, "x"),)) for i in range(N)]
    terms += [OperatorTerm(-hz, ((i, "z"),)) for i in range(N)]
    return terms


def open_chain_hamiltonian(params: ModelParams) -> SparseHamiltonian:
    """Dense-basis Hamiltonian of the open chain (reference for small ``N``)."""
    return SparseHamiltonian(terms_to_matrix(open_chain_terms(params), params.N), params.N, label="open")


def mps_energy(state: MpsState, params: ModelParams) -> float:
    return mps_expectation(state, open_chain_terms(params))


# ----------------------------------------------------------------------------
# TEBD


def _apply_gate(state: MpsState, i: int, gate: np.ndarray, chi: int, cutoff: float) -> float:
    """Apply a 4x4 gate on sites ``(i, i+1)``; returns the discarded weight."""
    state.move_center(i)
    A, B = state.tensors[i], state.tensors[i + 1]
    l, r = A.shape[0], B.shape[2]
    theta = np.tensordot(A, B, axes=(2, 0))  # l s t r
    theta = np.tensordot(gate.reshape(2, 2, 2, 2), theta, axes=([2, 3], [1, 2]))  # s t l r
    theta = theta.transpose(2, 0, 1, 3).reshape(l * 2, 2 * r)
    try:
        U, S, Vh = la.svd(theta, full_matrices=False, lapack_driver="gesdd")
    except la.LinAlgError:
        U, S, Vh = la.svd(theta, full_matrices=False, lapack_driver="gesvd")
    w = S**2
    total = w.sum()
    # smallest set of singular values whose discarded weight stays below cutoff
    tail = np.cumsum(w[::-1])[::-1] / total
    keep = int(np.sum(tail > cutoff))
    keep = max(1, min(keep, chi))
    discarded = float(w[keep:].sum() / total)
    S = S[:keep] / math.sqrt(w[:keep].sum())
    state.tensors[i] = U[:, :keep].reshape(l, 2, keep)
    state.tensors[i + 1] = (S[:, None] * Vh[:keep]).reshape(keep, 2, r)
    state.center = i + 1
    return discarded


def forest_ruth_stages() -> list[tuple[int, float]]:
    """``(layer, fraction of dt)`` for the 4th-order triple jump; layer 0 = even bonds."""
    th = FR_THETA
    stages = []
    for c in (th, 1 - 2 * th, th):
        stages += [(0, c / 2), (1, c), (0, c / 2)]
    merged: list[tuple[int, float]] = []
    for layer, frac in stages:
        if merged and merged[-1][0] == layer:
            merged[-1] = (layer, merged[-1][1] + frac)
        else:
            merged.append((layer, frac))
    return merged


def strang_stages() -> list[tuple[int, float]]:
    return [(0, 0.5), (1, 1.0), (0, 0.5)]


@dataclass
class MpsTrajectory:
    times: list[float] = field(default_factory=list)
    records: list = field(default_factory=list)
    truncation: list[float] = field(default_factory=list)
    state: MpsState | None = None


def tebd4_evolve(
    state: MpsState,
    params: ModelParams,
    T: float,
    cfg: MpsConfig,
    record_every: float | None = None,
    observe: Callable[[float, MpsState], object] | None = None,
    fields: Callable[[float], tuple[float, float]] | None = None,
    order: int = 4,
    strict: bool = False,
) -> MpsTrajectory:
    """Evolve an open-chain MPS for time ``T`` with 4th-order TEBD.

    ``fields(t) -> (h_x, h_z)`` makes the couplings time dependent; each stage
    then uses the fields at its own midpoint.  ``order=2`` switches to plain
    Strang splitting (used as a convergence contrast).
    """
    if state.N != params.N:
        raise ValueError("state and params disagree on N")
    psi = state.copy()
    psi.discard = cfg.discard
    n_steps = max(1, int(round(T / cfg.dt)))
    dt = T / n_steps
    stages = forest_ruth_stages() if order == 4 else strang_stages()
    traj = MpsTrajectory()
    traj.times.append(0.0)
    traj.records.append(observe(0.0, psi) if observe else None)
    traj.truncation.append(0.0)
    gate_cache: dict[tuple, list[np.ndarray]] = {}

    def gates(layer, tau, hx, hz):
        key = (layer, round(tau, 15), hx, hz)
        if key not in gate_cache:
            if len(gate_cache) > 64:
                gate_cache.clear()
            hb = bond_hamiltonians(params, hx, hz)
            gate_cache[key] = [la.expm(-1j * tau * hb[i]) for i in range(layer, params.N - 1, 2)]
        return gate_cache[key]

    next_rec = record_every or dt
    for step in range(n_steps):
        t0 = step * dt
        err = 0.0
        elapsed = 0.0
        direction = 1
        for layer, frac in stages:
            tau = frac * dt
            if fields is None:
                hx, hz = params.h_x, params.h_z
            else:
                hx, hz = fields(t0 + elapsed + 0.5 * tau)
            bonds = list(range(layer, params.N - 1, 2))
            gs = gates(layer, tau, hx, hz)
            pairs = list(zip(bonds, gs))
            if direction < 0:
                pairs = pairs[::-1]
            for i, g in pairs:
                err += _apply_gate(psi, i, g, cfg.chi, cfg.cutoff)
            direction = -direction
            if layer == 1:
                elapsed += frac * dt
        if err > 1e-6 and max(psi.bond_dims) >= cfg.chi:
            msg = f"bond dimension saturated at t={t0 + dt:.4g} with truncation error {err:.2e}"
            if strict:
                raise FidelityError(msg)
            warnings.warn(msg, FidelityWarning, stacklevel=2)
        t = (step + 1) * dt
        traj.truncation[-1] += err
        if t >= next_rec - 1e-9 * dt or step == n_steps - 1:
            traj.times.append(t)
            traj.records.append(observe(t, psi) if observe else None)
            traj.truncation.append(0.0)
            while next_rec <= t + 1e-9 * dt:
                next_rec += record_every or dt
    traj.state = psi
    return traj
