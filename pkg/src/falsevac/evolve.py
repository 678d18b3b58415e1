"""Closed-system propagation of dense state vectors.

Krylov (Lanczos) stepping is the working path; :func:`propagate_dense`
diagonalises the Hamiltonian and is kept as the reference for small rings.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as la

from .hamiltonians import SparseHamiltonian
from .lattice import N_MAX_DENSE, ModelParams, SpinConfig
from .observables import down_count, interface_density
from .schedules import DriveSchedule

log = logging.getLogger(__name__)


DENSE_AUTO_DIM = 1 << 11


class ContractError(ValueError):
    pass


class ResolutionWarning(UserWarning):
    pass


class ResolutionError(ValueError):
    pass


class LayoutError(ValueError):
    pass


def basis_state(config: SpinConfig) -> np.ndarray:
    psi = np.zeros(1 << config.N, dtype=complex)
    psi[config.index] = 1.0
    return psi


def all_up_state(N: int) -> np.ndarray:
    return basis_state(SpinConfig.all_up(N))


def _matrix(H):
    return H.matrix if isinstance(H, SparseHamiltonian) else H


def check_hermitian(H, tol: float = 1e-10) -> None:
    if isinstance(H, SparseHamiltonian):
        err = H.hermiticity_error()
        scale = max(1.0, float(np.max(np.abs(H.matrix.data))) if H.matrix.nnz else 1.0)
    else:
        M = H.toarray() if hasattr(H, "toarray") else np.asarray(H)
        err = float(np.max(np.abs(M - M.conj().T))) if M.size else 0.0
        scale = max(1.0, float(np.max(np.abs(M))) if M.size else 1.0)
    if err > tol * scale:
        raise ContractError(f"Hamiltonian is not Hermitian (max |H - H^dag| = {err:.3e})")


def _norm_estimate(M) -> float:
    """Upper bound on the spectral radius (max absolute row sum)."""
    if hasattr(M, "tocsr"):
        return float(np.max(np.asarray(abs(M).sum(axis=1)))) if M.nnz else 0.0
    return float(np.max(np.sum(np.abs(M), axis=1)))


def _lanczos_step(M, v: np.ndarray, tau: float, m_max: int, tol: float):
    """One Krylov step of ``exp(-i M tau) v``; returns ``(w, tau_done, m_used)``.

    Full reorthogonalisation.  The a-posteriori bound
    ``beta_m |[exp(-i T tau)]_{m,0}|`` decides convergence; when ``m_max``
    vectors do not reach ``tol`` the step is shortened on the small
    tridiagonal problem instead of being discarded.
    """
    beta0 = np.linalg.norm(v)
    if beta0 == 0:
        return v.copy(), tau, 0
    n = v.size
    m_max = min(m_max, n)
    V = np.empty((m_max, n), dtype=complex)
    alpha = np.zeros(m_max)
    beta = np.zeros(m_max)
    V[0] = v / beta0
    for j in range(m_max):
        w = M @ V[j]
        alpha[j] = np.vdot(V[j], w).real
        w -= alpha[j] * V[j]
        if j > 0:
            w -= beta[j - 1] * V[j - 1]
        # reorthogonalise against the whole basis
        w -= ((V[: j + 1] @ w.conj()).conj()) @ V[: j + 1]
        beta[j] = np.linalg.norm(w)
        m = j + 1
        breakdown = beta[j] < 1e-13 * max(1.0, abs(alpha[j]))
        if breakdown or m == m_max or m % 4 == 0:
            if m > 1:
                evals, evecs = la.eigh_tridiagonal(alpha[:m], beta[: m - 1])
            else:
                evals, evecs = alpha[:1], np.ones((1, 1))
            first = evecs[0].conj()

            def coef(s):
                return evecs @ (np.exp(-1j * evals * s) * first)

            if breakdown:
                return beta0 * (coef(tau) @ V[:m]), tau, m
            if beta[j] * abs(coef(tau)[-1]) < tol:
                return beta0 * (coef(tau) @ V[:m]), tau, m
            if m == m_max:
                lo, hi = 0.0, tau
                for _ in range(40):
                    mid = 0.5 * (lo + hi)
                    if beta[j] * abs(coef(mid)[-1]) < tol:
                        lo = mid
                    else:
                        hi = mid
                if lo == 0.0:
                    raise RuntimeError("Krylov propagation failed to converge")
                return beta0 * (coef(lo) @ V[:m]), lo, m
        if breakdown:
            break
        V[j + 1] = w / beta[j]
    raise RuntimeError("unreachable")


def expm_krylov(H, v: np.ndarray, t: float, m_max: int = 40, tol: float = 1e-13) -> np.ndarray:
    """``exp(-i H t) v`` by adaptive Lanczos substeps."""
    M = _matrix(H)
    w = np.array(v, dtype=complex)
    if t == 0:
        return w
    sign = 1.0 if t > 0 else -1.0
    remaining = abs(float(t))
    nrm = _norm_estimate(M)
    tau = remaining if nrm == 0 else min(remaining, 0.5 * m_max / nrm)
    while remaining > 1e-15 * abs(t):
        tau = min(tau, remaining)
        w, done, m = _lanczos_step(M, w, sign * tau, m_max, tol)
        done = abs(done)
        remaining -= done
        tau = done * (1.5 if m < m_max else 1.05)
    return w


def propagate_dense(state: np.ndarray, H, t: float) -> np.ndarray:
    """Reference propagation through a dense eigendecomposition (small ``N`` only)."""
    M = _matrix(H)
    M = M.toarray() if hasattr(M, "toarray") else np.asarray(M)
    if M.shape[0] > 1 << N_MAX_DENSE:
        raise ValueError("dense propagation refused above N_MAX_DENSE")
    evals, evecs = la.eigh(M)
    return evecs @ (np.exp(-1j * evals * t) * (evecs.conj().T @ state))


def propagate(state: np.ndarray, H, t: float, method: str = "krylov", check: bool = True) -> np.ndarray:
    """``exp(-i H t) |state>`` for a Hermitian ``H``."""
    M = _matrix(H)
    if np.asarray(state).shape != (M.shape[0],):
        raise ContractError("state and Hamiltonian dimensions differ")
    if check:
        check_hermitian(H)
    if method == "dense":
        return propagate_dense(state, H, t)
    if method != "krylov":
        raise ValueError(f"unknown method {method!r}")
    return expm_krylov(H, np.asarray(state, dtype=complex), t)


def evolve_static(
    state: np.ndarray,
    H,
    times: Sequence[float],
    method: str = "auto",
    observe: Callable | None = None,
    keep_states: bool = True,
) -> "Trajectory":
    """Sample the evolution under a time-independent ``H`` at increasing ``times``.

    ``method="auto"`` diagonalises once when the dimension is at most
    ``DENSE_AUTO_DIM`` and otherwise steps with Krylov.
    """
    check_hermitian(H)
    if method == "auto":
        method = "dense" if _matrix(H).shape[0] <= DENSE_AUTO_DIM else "krylov"
    times = np.asarray(times, dtype=float)
    if np.any(np.diff(times) < 0) or times[0] < 0:
        raise ValueError("times must be non-negative and non-decreasing")
    traj = Trajectory()
    psi = np.asarray(state, dtype=complex)
    if method == "dense":
        M = _matrix(H)
        evals, evecs = la.eigh(M.toarray() if hasattr(M, "toarray") else M)
        coeffs = evecs.conj().T @ psi
    t_prev = 0.0
    for t in times:
        if method == "dense":
            psi = evecs @ (np.exp(-1j * evals * t) * coeffs)
        else:
            psi = expm_krylov(H, psi, t - t_prev)
        t_prev = t
        traj.append(t, psi, observe(t, psi, H) if observe else None, keep_state=keep_states)
    return traj


@dataclass
class Trajectory:
    times: list[float] = field(default_factory=list)
    states: list[np.ndarray] = field(default_factory=list)
    records: list = field(default_factory=list)
    last_state: np.ndarray | None = None

    def append(self, t, state, rec=None, keep_state: bool = True):
        self.times.append(float(t))
        self.last_state = state
        if keep_state:
            self.states.append(np.array(state, copy=True))
        self.records.append(rec)

    @property
    def final(self) -> np.ndarray:
        return self.states[-1] if self.states else self.last_state

    def __len__(self) -> int:
        return len(self.times)


class HamiltonianCache:
    """Memoises ``builder(h_x, h_z)`` so static segments build only once."""

    def __init__(self, builder: Callable[[float, float], SparseHamiltonian], size: int = 8):
        self.builder = builder
        self.size = size
        self._cache: dict[tuple[float, float], SparseHamiltonian] = {}

    def __call__(self, h_x: float, h_z: float):
        key = (float(h_x), float(h_z))
        H = self._cache.get(key)
        if H is None:
            H = self.builder(*key)
            if len(self._cache) >= self.size:
                self._cache.pop(next(iter(self._cache)))
            self._cache[key] = H
        return H


def propagate_driven(
    state: np.ndarray,
    schedule: DriveSchedule,
    builder: Callable[[float, float], SparseHamiltonian],
    dt: float,
    record_every: float | None = None,
    observe: Callable | None = None,
    keep_states: bool = True,
    strict: bool = False,
) -> Trajectory:
    """Step through ``schedule`` with the Hamiltonian sampled at step midpoints.

    Each segment is cut into equal steps no longer than ``dt``; static
    segments are propagated in one Krylov sweep between record times.
    ``record_every`` (default: every step) sets the spacing of the returned
    snapshots.  A ``dt`` coarser than a tenth of the fastest schedule feature
    warns, or raises in ``strict`` mode.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    feature = schedule.min_feature()
    if dt > feature / 10:
        msg = f"dt={dt} does not resolve schedule features of size {feature:.3g}"
        if strict:
            raise ResolutionError(msg)
        warnings.warn(msg, ResolutionWarning, stacklevel=2)
    build = builder if isinstance(builder, HamiltonianCache) else HamiltonianCache(builder)
    psi = np.asarray(state, dtype=complex).copy()
    traj = Trajectory()
    t0 = 0.0
    H0 = build(*schedule.fields(0.0))
    traj.append(0.0, psi, observe(0.0, psi, H0) if observe else None, keep_states)
    next_record = record_every if record_every else 0.0
    for seg in schedule.segments:
        if seg.duration == 0:
            continue
        if seg.is_static():
            H = build(*seg.fields(0.0))
            check_hermitian(H)
            marks = _record_marks(t0, t0 + seg.duration, record_every, next_record)
            t_prev = t0
            for tm in marks:
                psi = expm_krylov(H, psi, tm - t_prev)
                t_prev = tm
                traj.append(tm, psi, observe(tm, psi, H) if observe else None, keep_states)
            if record_every:
                while next_record <= t0 + seg.duration + 1e-12:
                    next_record += record_every
            t0 += seg.duration
            continue
        n_steps = max(1, math.ceil(seg.duration / dt - 1e-9))
        h = seg.duration / n_steps
        for k in range(n_steps):
            H = build(*seg.fields((k + 0.5) * h))
            psi = expm_krylov(H, psi, h)
            t = t0 + (k + 1) * h
            if not record_every or t >= next_record - 1e-9 * h or k == n_steps - 1:
                traj.append(t, psi, observe(t, psi, H) if observe else None, keep_states)
                if record_every:
                    while next_record <= t + 1e-9 * h:
                        next_record += record_every
        t0 += seg.duration
    return traj


def _record_marks(a, b, every, next_record):
    if not every:
        return [b]
    marks = []
    t = next_record
    while t < b - 1e-12:
        if t > a + 1e-12:
            marks.append(t)
        t += every
    marks.append(b)
    return marks


# ----------------------------------------------------------------------------
# two-bubble exchange quench


def two_bubble_config(N: int, n1: int, n2: int) -> tuple[SpinConfig, int]:
    """``up, n1 x down, up, n2 x down, up...`` and the index of the separating up spin."""
    if n1 < 0 or n2 < 1 or n1 + n2 > N - 3:
        raise LayoutError(f"bubbles of {n1} and {n2} spins do not fit on a ring of {N} with delimiters")
    bits = [0] * N
    for j in range(1, 1 + n1):
        bits[j] = 1
    sep = n1 + 1
    for j in range(sep + 1, sep + 1 + n2):
        bits[j] = 1
    return SpinConfig(tuple(bits)), sep


@dataclass
class TwoBubbleResult:
    times: np.ndarray
    profiles: np.ndarray  # (time, site)
    down_counts: np.ndarray
    norms: np.ndarray
    energies: np.ndarray
    separator: int
    config: SpinConfig

    def front_position(self) -> np.ndarray:
        return front_position(self.profiles, self.separator)

    def block_front(self, width: float) -> tuple[np.ndarray, np.ndarray]:
        """Front position of profiles averaged over consecutive time blocks of ``width``.

        Block averaging removes the fast ``O(h_x^2)`` dressing oscillation so
        that only the slow exchange dynamics moves the front.
        """
        t, prof = block_average(self.times, self.profiles, width)
        return t, front_position(prof, self.separator)

    def to_csv(self, path) -> None:
        N = self.profiles.shape[1]
        header = "time," + ",".join(f"site_{j}" for j in range(N))
        np.savetxt(path, np.column_stack([self.times, self.profiles]), delimiter=",",
                   header=header, comments="", fmt="%.17g")


def block_average(times, values, width: float) -> tuple[np.ndarray, np.ndarray]:
    """Means of ``values`` (time along axis 0) over non-overlapping blocks of ``width``.

    Assumes uniformly spaced ``times``; a trailing partial block is dropped.
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    step = times[1] - times[0]
    m = max(1, int(round(width / step)))
    nb = len(times) // m
    if nb < 1:
        raise ValueError("block width exceeds the sampled time span")
    shape = (nb, m) + values.shape[1:]
    return times[: nb * m].reshape(nb, m).mean(axis=1), values[: nb * m].reshape(shape).mean(axis=1)


def front_position(profiles: np.ndarray, origin: int) -> np.ndarray:
    """RMS cyclic distance of the interface density from ``origin``."""
    profiles = np.atleast_2d(profiles)
    N = profiles.shape[1]
    d = np.abs(np.arange(N) - origin)
    d = np.minimum(d, N - d).astype(float)
    w = profiles.sum(axis=1)
    return np.sqrt(profiles @ d**2 / np.where(w > 0, w, 1.0))


def quench_two_bubble_scenario(
    N: int,
    n1: int,
    n2: int,
    params: ModelParams,
    times: Sequence[float],
    H: SparseHamiltonian | None = None,
) -> TwoBubbleResult:
    """Quench from two neighbouring bubbles and follow the interface density.

    ``n1 = 0`` degenerates to a single bubble of ``n2`` spins.
    """
    from .hamiltonians import build_full

    if params.N != N:
        raise LayoutError("params.N must equal N")
    config, sep = two_bubble_config(N, n1, n2)
    if H is None:
        H = build_full(params)
    traj = evolve_static(basis_state(config), H, times)
    profiles = np.array([interface_density(s) for s in traj.states])
    downs = np.array([down_count(s) for s in traj.states])
    norms = np.array([np.vdot(s, s).real for s in traj.states])
    energies = np.array([np.vdot(s, H @ s).real for s in traj.states])
    return TwoBubbleResult(np.asarray(traj.times), profiles, downs, norms, energies, sep, config)
