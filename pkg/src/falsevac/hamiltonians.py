"""Sparse operators over the ``2**N`` computational basis.

Every primitive used here maps a basis state to at most one basis state, so an
operator string is applied to the whole basis at once with integer bit tricks.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .lattice import N_MAX_SPARSE, ModelParams, check_size, classical_energies

PRIMITIVES = ("x", "y", "z", "+", "-", "pu", "pd", "id")


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class OperatorTerm:
    """``coefficient * prod(primitive at site)`` with at most one factor per site.

    Primitives: ``x``, ``y``, ``z`` (Pauli), ``+``/``-`` (raising/lowering,
    ``-`` turns up into down), ``pu``/``pd`` (projectors on up/down), ``id``.
    """

    coefficient: complex
    factors: tuple[tuple[int, str], ...] = field(default_factory=tuple)

    def __post_init__(self):
        factors = tuple((int(s), str(p)) for s, p in self.factors)
        sites = [s for s, _ in factors]
        if len(set(sites)) != len(sites):
            raise ValueError("at most one primitive per site per term")
        for _, p in factors:
            if p not in PRIMITIVES:
                raise ValueError(f"unknown primitive {p!r}")
        object.__setattr__(self, "factors", factors)

    def wrapped(self, n_sites: int) -> "OperatorTerm":
        return OperatorTerm(self.coefficient, tuple((s % n_sites, p) for s, p in self.factors))

    @property
    def support(self) -> list[int]:
        return [s for s, p in self.factors if p != "id"]


def _apply_primitive(idx: np.ndarray, amp: np.ndarray, shift: int, prim: str):
    bit = (idx >> shift) & 1
    mask = np.int64(1) << shift
    if prim == "id":
        return idx, amp
    if prim == "z":
        return idx, amp * (1 - 2 * bit)
    if prim == "pu":
        return idx, amp * (bit == 0)
    if prim == "pd":
        return idx, amp * (bit == 1)
    if prim == "x":
        return idx ^ mask, amp
    if prim == "y":
        # sigma_y |up> = i |down>, sigma_y |down> = -i |up>
        return idx ^ mask, amp * np.where(bit == 0, 1j, -1j)
    if prim == "+":
        return idx ^ mask, amp * (bit == 1)
    if prim == "-":
        return idx ^ mask, amp * (bit == 0)
    raise ValueError(prim)


def term_action(term: OperatorTerm, n_sites: int, columns: np.ndarray | None = None):
    """Rows and amplitudes of ``term`` applied to each basis state in ``columns``."""
    if columns is None:
        columns = np.arange(1 << n_sites, dtype=np.int64)
    idx = columns.astype(np.int64, copy=True)
    amp = np.full(idx.shape, complex(term.coefficient))
    # right-most factor acts first; all primitives on distinct sites commute anyway
    for site, prim in reversed(term.wrapped(n_sites).factors):
        idx, amp = _apply_primitive(idx, amp, n_sites - 1 - site, prim)
    return idx, amp


def terms_to_matrix(terms: Iterable[OperatorTerm], n_sites: int) -> sp.csr_matrix:
    dim = 1 << n_sites
    cols_all = np.arange(dim, dtype=np.int64)
    rows, cols, vals = [], [], []
    for term in terms:
        r, a = term_action(term, n_sites, cols_all)
        keep = a != 0
        rows.append(r[keep])
        cols.append(cols_all[keep])
        vals.append(a[keep])
    if not rows:
        return sp.csr_matrix((dim, dim), dtype=complex)
    mat = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(dim, dim)
    ).tocsr()
    mat.sum_duplicates()
    mat.eliminate_zeros()
    return mat


@dataclass(frozen=True)
class SparseHamiltonian:
    """Immutable sparse operator on the ``2**n_sites`` basis (CSR storage)."""

    matrix: sp.csr_matrix
    n_sites: int
    label: str = ""

    def __post_init__(self):
        m = sp.csr_matrix(self.matrix, dtype=complex)
        m.sum_duplicates()
        m.sort_indices()
        if m.shape != (1 << self.n_sites,) * 2:
            raise ShapeError(f"matrix shape {m.shape} does not match N={self.n_sites}")
        object.__setattr__(self, "matrix", m)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def shape(self):
        return self.matrix.shape

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()

    def __matmul__(self, other):
        return self.matrix @ other

    def __add__(self, other: "SparseHamiltonian") -> "SparseHamiltonian":
        return SparseHamiltonian(self.matrix + other.matrix, self.n_sites, self.label)

    def scaled(self, factor: float) -> "SparseHamiltonian":
        return SparseHamiltonian(self.matrix * factor, self.n_sites, self.label)

    def hermiticity_error(self) -> float:
        diff = self.matrix - self.matrix.getH()
        return float(np.max(np.abs(diff.data))) if diff.nnz else 0.0

    def is_hermitian(self, tol: float = 1e-12) -> bool:
        return self.hermiticity_error() <= tol

    def diagonal(self) -> np.ndarray:
        return self.matrix.diagonal()

    def triplets(self) -> list[tuple[int, int, complex]]:
        """Stored entries in row-major order."""
        coo = self.matrix.tocoo()
        order = np.lexsort((coo.col, coo.row))
        return [(int(coo.row[k]), int(coo.col[k]), complex(coo.data[k])) for k in order]

    def element(self, row: int, col: int) -> complex:
        return complex(self.matrix[row, col])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["row", "col", "re", "im"])
            for r, c, v in self.triplets():
                writer.writerow([r, c, repr(v.real), repr(v.imag)])

    @classmethod
    def from_csv(cls, path, n_sites: int, label: str = "") -> "SparseHamiltonian":
        rows, cols, vals = [], [], []
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            for rec in reader:
                rows.append(int(rec["row"]))
                cols.append(int(rec["col"]))
                vals.append(complex(float(rec["re"]), float(rec["im"])))
        dim = 1 << n_sites
        return cls(sp.coo_matrix((vals, (rows, cols)), shape=(dim, dim)).tocsr(), n_sites, label)


def site_operator(prim: str, site: int, n_sites: int) -> SparseHamiltonian:
    return SparseHamiltonian(terms_to_matrix([OperatorTerm(1.0, ((site, prim),))], n_sites), n_sites)


def transverse_sum(n_sites: int) -> sp.csr_matrix:
    """``sum_j sigma^x_j`` as a real CSR matrix."""
    dim = 1 << n_sites
    cols = np.arange(dim, dtype=np.int64)
    rows = np.concatenate([cols ^ (np.int64(1) << k) for k in range(n_sites)])
    data = np.ones(rows.size)
    mat = sp.csr_matrix((data, (rows, np.tile(cols, n_sites))), shape=(dim, dim))
    mat.sort_indices()
    return mat


def build_full(params: ModelParams, n_max: int = N_MAX_SPARSE) -> SparseHamiltonian:
    """Ising ring ``-J sum zz - h_x sum x - h_z sum z`` with periodic bonds."""
    n = check_size(params.N, n_max)
    diag = sp.diags(classical_energies(params).astype(float))
    mat = diag - params.h_x * transverse_sum(n) if params.h_x != 0 else sp.csr_matrix(diag)
    return SparseHamiltonian(mat, n, label="full")


class FullModelFamily:
    """Cheap rebuilds of the full Hamiltonian at varying ``(h_x, h_z)``.

    The ``zz``, ``z`` and ``x`` pieces are cached once per ring size.
    """

    def __init__(self, N: int, J: float = 1.0):
        self.N = check_size(N)
        self.J = J
        z = ModelParams(N, J=1.0, h_x=0.0, h_z=0.0)
        self._zz = classical_energies(z).astype(float)  # -sum zz
        self._z = (classical_energies(z.replace(h_z=1.0)) - self._zz).astype(float)  # -sum z
        self._x = transverse_sum(N)

    def diagonal(self, h_z: float) -> np.ndarray:
        return self.J * self._zz + h_z * self._z

    def __call__(self, h_x: float, h_z: float) -> SparseHamiltonian:
        mat = sp.diags(self.diagonal(h_z)) - h_x * self._x
        return SparseHamiltonian(sp.csr_matrix(mat), self.N, label="full")

    def params(self, h_x: float, h_z: float) -> ModelParams:
        return ModelParams(self.N, J=self.J, h_x=h_x, h_z=h_z)


def build_annealer_form(
    h_fields: Sequence[float],
    couplings: Sequence[float],
    A: float,
    B: float,
    g: float = 1.0,
) -> SparseHamiltonian:
    """Annealer Hamiltonian on a ring.

    ``-(A/2) sum x + (B/2) (g sum h_i z_i + sum J_{i,i+1} z_i z_{i+1})`` where
    ``couplings[i]`` couples sites ``i`` and ``i+1 (mod N)``.
    """
    h = np.asarray(h_fields, dtype=float)
    Jb = np.asarray(couplings, dtype=float)
    if h.ndim != 1 or Jb.shape != h.shape:
        raise ShapeError("need one field per site and one coupling per ring bond")
    n = check_size(h.size)
    terms = [OperatorTerm(0.5 * B * g * h[i], ((i, "z"),)) for i in range(n) if h[i] != 0]
    terms += [
        OperatorTerm(0.5 * B * Jb[i], ((i, "z"), ((i + 1) % n, "z"))) for i in range(n) if Jb[i] != 0
    ]
    mat = terms_to_matrix(terms, n)
    if A != 0:
        mat = mat - 0.5 * A * transverse_sum(n)
    return SparseHamiltonian(mat, n, label="annealer")


@dataclass(frozen=True)
class SectorSplit:
    """Blocks of ``H`` grouped by magnetization ``M = 1 - 2 k / N``."""

    indices: dict[float, np.ndarray]
    blocks: dict[float, sp.csr_matrix]
    offblock: sp.csr_matrix

    def sizes(self) -> dict[float, int]:
        return {m: len(ix) for m, ix in self.indices.items()}

    def inter_sector_pairs(self) -> int:
        """Number of unordered basis pairs coupled across sectors."""
        upper = sp.triu(self.offblock, k=1)
        return int((upper != 0).sum())


def sector_split(H: SparseHamiltonian) -> SectorSplit:
    n = H.n_sites
    down = np.array([bin(i).count("1") for i in range(H.dim)])
    mags = 1.0 - 2.0 * down / n
    indices, blocks = {}, {}
    mat = H.matrix.tocsr()
    for k in range(n + 1):
        ix = np.flatnonzero(down == k)
        m = 1.0 - 2.0 * k / n
        indices[m] = ix
        blocks[m] = mat[ix][:, ix]
    coo = mat.tocoo()
    cross = mags[coo.row] != mags[coo.col]
    offblock = sp.csr_matrix((coo.data[cross], (coo.row[cross], coo.col[cross])), shape=mat.shape)
    return SectorSplit(indices, blocks, offblock)


def global_flip(n_sites: int) -> sp.csr_matrix:
    """Permutation matrix of ``prod_j sigma^x_j``."""
    dim = 1 << n_sites
    cols = np.arange(dim)
    return sp.csr_matrix((np.ones(dim), (cols ^ (dim - 1), cols)), shape=(dim, dim))
