"""Effective Hamiltonians near the bubble resonances ``h_z = -2J/n``.

The analytic models are assembled from projector-dressed operator strings.
:func:`extract_effective_couplings` and :func:`extract_creation_coefficient`
recover the same couplings numerically from the full Ising ring and serve as
their independent check.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp

from .hamiltonians import OperatorTerm, SparseHamiltonian, build_full, global_flip, terms_to_matrix
from .lattice import ModelParams, ResonanceSpec, SpinConfig, basis_bits, check_size, classical_energies

# creation coefficients quoted for the n = 2 and n = 3 resonances
REFERENCE_CREATION_COEFFICIENTS = {2: Fraction(-1), 3: Fraction(-81, 64)}


class DegeneracyError(RuntimeError):
    """Out-of-sector states collide with the sector energy."""

    def __init__(self, message: str, colliding: Sequence[str] = ()):
        super().__init__(message)
        self.colliding = list(colliding)


@dataclass(frozen=True)
class EffectiveCoupling:
    """Energy scales of the effective model at resonance ``n``."""

    n: int
    c_n: float
    h_x: float
    J: float = 1.0
    provenance: str = "reference"

    @classmethod
    def for_resonance(cls, n: int, h_x: float, J: float = 1.0, c_n: float | None = None):
        if c_n is not None:
            return cls(n, float(c_n), h_x, J, provenance="extracted")
        if n in REFERENCE_CREATION_COEFFICIENTS:
            return cls(n, float(REFERENCE_CREATION_COEFFICIENTS[n]), h_x, J)
        if n == 1:
            return cls(1, -1.0, h_x, J)
        raise KeyError(f"no tabulated c_{n}; extract it with extract_creation_coefficient")

    @property
    def creation_scale(self) -> float:
        return self.h_x**self.n / self.J ** (self.n - 1)

    @property
    def hop_scale(self) -> float:
        return self.h_x**2 / (4 * self.J)

    @property
    def exchange_scale(self) -> float:
        n = self.n
        return self.h_x**2 * n**2 / (4 * self.J * (n + 1))


def _term(coef, factors, N):
    """OperatorTerm with cyclic sites; repeated projectors on one site are merged.

    Returns None when the product vanishes identically (``pu * pd``).
    """
    merged: dict[int, str] = {}
    for site, prim in factors:
        site %= N
        if site in merged:
            prev = merged[site]
            if prev == prim and prim in ("pu", "pd"):
                continue
            if {prev, prim} == {"pu", "pd"}:
                return None
            raise ValueError(f"ring N={N} too small for overlapping factors at site {site}")
        merged[site] = prim
    return OperatorTerm(coef, tuple(merged.items()))


def _collect(terms, N):
    return [t for t in terms if t is not None and t.coefficient != 0]


def _hop_terms(coef, flank, N):
    out = []
    for j in range(N):
        for a, b in (("+", "-"), ("-", "+")):
            out.append(_term(coef, [(j - 1, flank), (j, a), (j + 1, b), (j + 2, flank)], N))
    return out


def eff_n1_terms(params: ModelParams, delta: float, second_order: bool = True) -> list[OperatorTerm]:
    N, J, hx = params.N, params.J, params.h_x
    terms = [_term(-hx, [(j - 1, "pu"), (j, "x"), (j + 1, "pu")], N) for j in range(N)]
    terms += [_term(-delta, [(j, "z")], N) for j in range(N)]
    if second_order:
        s = hx**2 / (4 * J)
        terms += _hop_terms(s, "pu", N)
        terms += [_term(2 * s, [(j, "pd")], N) for j in range(N)]
        terms += [_term(-1.5 * s, [(j - 1, "pd"), (j + 1, "pd")], N) for j in range(N)]
    return _collect(terms, N)


def build_eff_n1(
    params: ModelParams, delta: float | None = None, second_order: bool = True
) -> SparseHamiltonian:
    """First- plus second-order effective model at the ``n = 1`` resonance.

    ``delta`` defaults to ``params.h_z + 2J``.
    """
    check_size(params.N)
    if delta is None:
        delta = ResonanceSpec(1, params.J).delta(params.h_z)
    mat = terms_to_matrix(eff_n1_terms(params, delta, second_order), params.N)
    return SparseHamiltonian(mat, params.N, label="eff_n1")


def creation_terms(N: int, n: int, amplitude: float) -> list[OperatorTerm]:
    """``amplitude * sum_j P^up_j (prod sigma^-) P^up_{j+n+1} + h.c.``"""
    terms = []
    for j in range(N):
        for lower in ("-", "+"):
            body = [(j + k, lower) for k in range(1, n + 1)]
            terms.append(_term(amplitude, [(j, "pu"), *body, (j + n + 1, "pu")], N))
    return _collect(terms, N)


def eff_n_terms(params: ModelParams, n: int, delta: float, c_n: float) -> list[OperatorTerm]:
    N, J, hx = params.N, params.J, params.h_x
    terms = creation_terms(N, n, c_n * hx**n / J ** (n - 1))
    terms += [_term(-delta, [(j, "z")], N) for j in range(N)]
    d = hx**2 * n / (4 * J)
    weights = {("pd", "pd"): d / (n + 1), ("pu", "pd"): d, ("pd", "pu"): d, ("pu", "pu"): -d / (n - 1)}
    for (left, right), w in weights.items():
        terms += [_term(w, [(j - 1, left), (j, "z"), (j + 1, right)], N) for j in range(N)]
    terms += _hop_terms(hx**2 * n**2 / (4 * J * (n - 1)), "pu", N)
    terms += _hop_terms(-(hx**2) * n**2 / (4 * J * (n + 1)), "pd", N)
    return _collect(terms, N)


def build_eff_n(
    params: ModelParams, n: int, delta: float | None = None, c_n: float | None = None
) -> SparseHamiltonian:
    """Effective model at resonance ``n >= 2``: order-``n`` creation plus order-1/2 terms."""
    if n < 2:
        raise ValueError("build_eff_n needs n >= 2; use build_eff_n1 for the n = 1 resonance")
    check_size(params.N)
    if params.N < n + 2:
        raise ValueError(f"ring of N={params.N} cannot host a delimited {n}-bubble")
    if delta is None:
        delta = ResonanceSpec(n, params.J).delta(params.h_z)
    if c_n is None:
        c_n = EffectiveCoupling.for_resonance(n, params.h_x, params.J).c_n
    mat = terms_to_matrix(eff_n_terms(params, n, delta, c_n), params.N)
    return SparseHamiltonian(mat, params.N, label=f"eff_n{n}")


# ----------------------------------------------------------------------------
# constrained subspaces and the PXP mapping


@dataclass(frozen=True)
class ConstrainedSubspace:
    N: int
    indices: np.ndarray
    constraint: str

    def __len__(self) -> int:
        return len(self.indices)

    def configs(self) -> list[SpinConfig]:
        return [SpinConfig.from_index(int(i), self.N) for i in self.indices]

    def restrict(self, H: SparseHamiltonian) -> sp.csr_matrix:
        ix = self.indices
        return H.matrix[ix][:, ix].tocsr()

    def projector_diagonal(self) -> np.ndarray:
        mask = np.zeros(1 << self.N, dtype=bool)
        mask[self.indices] = True
        return mask


def constrained_subspace(N: int, predicate: Callable[[np.ndarray], np.ndarray], constraint: str):
    """Subspace of basis states whose bit rows satisfy ``predicate`` (vectorised)."""
    bits = basis_bits(N)
    return ConstrainedSubspace(N, np.flatnonzero(predicate(bits)), constraint)


def no_adjacent_down(bits: np.ndarray) -> np.ndarray:
    return ~np.any(bits & np.roll(bits, -1, axis=1), axis=1)


def blockaded_subspace(N: int) -> ConstrainedSubspace:
    return constrained_subspace(N, no_adjacent_down, "no two adjacent down")


def lucas_number(n: int) -> int:
    a, b = 2, 1
    for _ in range(n):
        a, b = b, a + b
    return a


@dataclass(frozen=True)
class PXPRestriction:
    subspace: ConstrainedSubspace
    matrix: sp.csr_matrix


def to_pxp(H_eff_n1: SparseHamiltonian) -> PXPRestriction:
    """Restrict an ``n = 1`` effective model to the blockaded subspace."""
    sub = blockaded_subspace(H_eff_n1.n_sites)
    return PXPRestriction(sub, sub.restrict(H_eff_n1))


def pxp_model(N: int) -> SparseHamiltonian:
    """Rydberg-convention PXP, ``sum_j P^down_{j-1} X_j P^down_{j+1}`` on all ``2**N`` states."""
    terms = [_term(1.0, [(j - 1, "pd"), (j, "x"), (j + 1, "pd")], N) for j in range(N)]
    return SparseHamiltonian(terms_to_matrix(_collect(terms, N), N), N, label="pxp")


def pxp_in_bubble_frame(N: int) -> sp.csr_matrix:
    """PXP conjugated by the global spin flip, i.e. with up-spin projectors."""
    F = global_flip(N)
    return (F @ pxp_model(N).matrix @ F).tocsr()


# ----------------------------------------------------------------------------
# numerical extraction of effective couplings


def _dense(H) -> np.ndarray:
    if isinstance(H, SparseHamiltonian):
        return H.toarray()
    if sp.issparse(H):
        return H.toarray()
    return np.asarray(H)


def _sector_indices(sector, N) -> np.ndarray:
    out = []
    for s in sector:
        if isinstance(s, SpinConfig):
            out.append(s.index)
        elif isinstance(s, str):
            out.append(SpinConfig.from_string(s).index)
        else:
            out.append(int(s))
    return np.asarray(out, dtype=np.int64)


def resonant_sector(params: ModelParams, reference: SpinConfig | None = None, tol: float = 1e-9):
    """Basis states sharing the classical energy of ``reference`` (default all-up)."""
    E = classical_energies(params)
    ref = 0 if reference is None else reference.index
    return np.flatnonzero(np.abs(E - E[ref]) < tol * params.J)


def extract_effective_couplings(
    H_full: SparseHamiltonian,
    sector,
    order: int = 2,
    method: str = "perturbative",
    gap_tol: float = 1e-6,
) -> np.ndarray:
    """Effective matrix elements between the basis states of ``sector``.

    ``method="perturbative"`` splits ``H_full`` into its diagonal ``H0`` and
    off-diagonal ``V`` and returns the order-``order`` contribution:
    ``V_PP`` at first order, the symmetrised second-order sum over
    out-of-sector intermediates, and for ``order >= 3`` the leading chain
    ``V_PQ (R V_QQ)^(order-2) R V_QP`` with ``R = (E_P - H0_Q)^-1``.

    ``method="exact"`` block-diagonalises ``H_full`` and returns the Hermitian
    effective Hamiltonian of the eigenvectors continuously connected to the
    sector (all orders, rows ordered like ``sector``).
    """
    H = _dense(H_full)
    N = H_full.n_sites if isinstance(H_full, SparseHamiltonian) else int(round(math.log2(H.shape[0])))
    P = _sector_indices(sector, N)
    if method == "exact":
        return _exact_effective(H, P, gap_tol)
    if method != "perturbative":
        raise ValueError(f"unknown method {method!r}")
    E0 = np.real(np.diag(H)).copy()
    V = H - np.diag(np.diag(H))
    Q = np.setdiff1d(np.arange(H.shape[0]), P)
    if order == 1:
        return V[np.ix_(P, P)]
    EP = E0[P]
    EQ = E0[Q]
    Eref = EP.mean()
    close = np.abs(EQ - Eref) < gap_tol
    if np.any(close):
        names = [SpinConfig.from_index(int(q), N).to_string() for q in Q[close]]
        raise DegeneracyError(f"{close.sum()} out-of-sector states degenerate with the sector", names)
    VPQ = V[np.ix_(P, Q)]
    VQP = V[np.ix_(Q, P)]
    if order == 2:
        inv = 1.0 / (EP[:, None] - EQ[None, :])  # (a, m)
        return 0.5 * ((VPQ * inv) @ VQP + VPQ @ (VQP * inv.T))
    R = 1.0 / (Eref - EQ)
    chain = R[:, None] * VQP
    VQQ = V[np.ix_(Q, Q)]
    for _ in range(order - 2):
        chain = R[:, None] * (VQQ @ chain)
    return VPQ @ chain


def _exact_effective(H: np.ndarray, P: np.ndarray, gap_tol: float) -> np.ndarray:
    evals, evecs = la.eigh(H)
    B = evecs[P, :]  # overlap of each eigenvector with the sector states
    weight = np.sum(np.abs(B) ** 2, axis=0)
    d = len(P)
    order = np.argsort(weight)[::-1]
    chosen = order[:d]
    if d < len(weight) and weight[order[d - 1]] - weight[order[d]] < 0.5:
        raise DegeneracyError(
            "sector eigenvectors are not separated from the rest "
            f"(weights {weight[order[d - 1]]:.3f} vs {weight[order[d]]:.3f})"
        )
    A = B[:, chosen]  # (sector state, eigvec)
    S = A @ A.conj().T
    w, U = la.eigh(S)
    if w.min() < gap_tol:
        raise DegeneracyError("projected eigenvectors are linearly dependent")
    S_inv_half = (U / np.sqrt(w)) @ U.conj().T
    Heff = S_inv_half @ (A * evals[chosen]) @ A.conj().T @ S_inv_half
    return 0.5 * (Heff + Heff.conj().T)


def bubble_config(N: int, start: int, n: int) -> SpinConfig:
    return SpinConfig.all_up(N).flip(range(start, start + n))


@dataclass
class CreationExtraction:
    n: int
    N: int
    value: float
    ladder: list[float]
    ratios: list[float]
    residual: float
    method: str = "exact"
    provenance: str = "extracted"
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(
            {
                "n": self.n,
                "N": self.N,
                "value": self.value,
                "h_x_ladder": self.ladder,
                "ratios": self.ratios,
                "extrapolation_residual": self.residual,
                "method": self.method,
                "provenance": self.provenance,
            },
            indent=2,
        )


def richardson(values: Sequence[float], hs: Sequence[float], power: int = 2) -> tuple[float, float]:
    """Extrapolate ``values(h) = v0 + a h^p + b h^2p + ...`` to ``h -> 0``.

    Returns the estimate and the change made by the last elimination level.
    """
    table = [list(map(float, values))]
    hs = list(map(float, hs))
    for level in range(1, len(values)):
        prev = table[-1]
        row = []
        for k in range(len(prev) - 1):
            r = (hs[k] / hs[k + level]) ** power
            row.append((r * prev[k + 1] - prev[k]) / (r - 1))
        table.append(row)
    best = table[-1][0]
    residual = abs(best - table[-2][-1]) if len(table) > 1 else float("nan")
    return best, residual


def extract_creation_coefficient(
    n: int,
    N: int,
    ladder: Sequence[float] = (1e-2, 5e-3, 2.5e-3),
    J: float = 1.0,
    start: int = 1,
) -> CreationExtraction:
    """Numerical ``c_n``: exact effective creation element at ``h_z = -2J/n`` over ``h_x``.

    The element ``<n-bubble| H_eff |all up>`` divided by ``h_x^n / J^(n-1)``
    carries corrections in even powers of ``h_x``; the ladder is Richardson
    extrapolated to ``h_x -> 0``.
    """
    check_size(N, 12)
    h_z = ResonanceSpec(n, J).h_z_res
    target = bubble_config(N, start, n)
    ratios = []
    for hx in ladder:
        params = ModelParams(N, J=J, h_x=hx, h_z=h_z)
        sector = resonant_sector(params.replace(h_x=0.0))
        H = build_full(params)
        Heff = extract_effective_couplings(H, sector, method="exact")
        a = int(np.flatnonzero(sector == 0)[0])
        b = int(np.flatnonzero(sector == target.index)[0])
        ratios.append(float(np.real(Heff[b, a])) / (hx**n / J ** (n - 1)))
    value, residual = richardson(ratios, ladder, power=2)
    return CreationExtraction(n, N, value, list(map(float, ladder)), ratios, residual)


def perturbative_creation_coefficient(n: int, N: int, J: float = 1.0, start: int = 1) -> float:
    """``c_n`` from the leading order-``n`` chain of the perturbative extractor."""
    h_z = ResonanceSpec(n, J).h_z_res
    params = ModelParams(N, J=J, h_x=1.0, h_z=h_z)
    sector = resonant_sector(params)
    Heff = extract_effective_couplings(build_full(params), sector, order=n)
    a = int(np.flatnonzero(sector == 0)[0])
    b = int(np.flatnonzero(sector == bubble_config(N, start, n).index)[0])
    return float(np.real(Heff[b, a])) * J ** (n - 1)
