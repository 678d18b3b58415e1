"""Measurements shared by every backend.

All observables here are diagonal in the z basis.  Ring states (dense vectors,
density matrices, single configurations) are reduced to basis probabilities
and contracted with per-basis-state tables; matrix-product states delegate to
their own local contractions in :mod:`falsevac.mps`.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np

from .lattice import SpinConfig, basis_bits

N_MAX_DEFAULT = 6


class WindowError(ValueError):
    """A projector window longer than the ring."""


class NormalizationError(ValueError):
    pass


# ----------------------------------------------------------------------------
# per-basis-state tables (ring convention)


@lru_cache(maxsize=64)
def _bits(N: int) -> np.ndarray:
    b = basis_bits(N).astype(bool)
    b.setflags(write=False)
    return b


@lru_cache(maxsize=256)
def bubble_table(N: int, n: int) -> np.ndarray:
    """Per basis state: number of windows ``up, n x down, up`` divided by ``N``."""
    if n < 1 or n + 2 > N:
        raise WindowError(f"{n}-bubble window needs n + 2 <= N (N={N})")
    down = _bits(N)
    hit = ~down & np.roll(~down, -(n + 1), axis=1)
    for k in range(1, n + 1):
        hit &= np.roll(down, -k, axis=1)
    out = hit.sum(axis=1) / N
    out.setflags(write=False)
    return out


@lru_cache(maxsize=64)
def blockade_table(N: int) -> np.ndarray:
    down = _bits(N)
    out = (down & np.roll(down, -1, axis=1)).sum(axis=1) / N
    out.setflags(write=False)
    return out


@lru_cache(maxsize=64)
def magnetization_table(N: int) -> np.ndarray:
    out = 1.0 - 2.0 * _bits(N).sum(axis=1) / N
    out.setflags(write=False)
    return out


@lru_cache(maxsize=64)
def interface_table(N: int) -> np.ndarray:
    """``(2**N, N)`` indicator of ``down, up, down`` centred at each site."""
    down = _bits(N)
    out = (np.roll(down, 1, axis=1) & ~down & np.roll(down, -1, axis=1)).astype(float)
    out.setflags(write=False)
    return out


@lru_cache(maxsize=64)
def down_count_table(N: int) -> np.ndarray:
    out = _bits(N).sum(axis=1).astype(float)
    out.setflags(write=False)
    return out


def _is_mps(state) -> bool:
    return hasattr(state, "tensors") and hasattr(state, "discard")


def probabilities(state, N: int | None = None) -> tuple[np.ndarray, int]:
    """Basis probabilities and ring size of a ring state."""
    if isinstance(state, SpinConfig):
        p = np.zeros(1 << state.N)
        p[state.index] = 1.0
        return p, state.N
    arr = np.asarray(state)
    if arr.ndim == 1:
        p = np.abs(arr) ** 2
    elif arr.ndim == 2 and arr.shape[0] == arr.shape[1]:
        p = np.real(np.diagonal(arr)).copy()
    else:
        raise TypeError(f"unsupported state with shape {arr.shape}")
    n = int(round(np.log2(p.size)))
    if 1 << n != p.size:
        raise ValueError("state length is not a power of two")
    if N is not None and N != n:
        raise ValueError("N mismatch")
    return p, n


def _norm_of(p: np.ndarray) -> float:
    return float(p.sum())


def bubble_density(state, n: int) -> float:
    """``lambda_n``: average of ``P^up_i (prod P^down) P^up_{i+n+1}`` over sites."""
    if _is_mps(state):
        from .mps import bubble_density_mps

        return bubble_density_mps(state, n)
    p, N = probabilities(state)
    return float(p @ bubble_table(N, n))


def bubble_densities(state, n_max: int = N_MAX_DEFAULT) -> dict[int, float]:
    if _is_mps(state):
        from .mps import bubble_density_mps

        return {n: bubble_density_mps(state, n) for n in range(1, n_max + 1)}
    p, N = probabilities(state)
    return {n: float(p @ bubble_table(N, n)) for n in range(1, min(n_max, N - 2) + 1)}


def blockade_density(state) -> float:
    """``Q_B``: density of neighbouring down pairs."""
    if _is_mps(state):
        from .mps import blockade_density_mps

        return blockade_density_mps(state)
    p, N = probabilities(state)
    return float(p @ blockade_table(N))


def blockade_density_spin_form(state) -> float:
    """``Q_B`` through ``1/4 + <sum zz>/4N - <sum z>/2N``."""
    p, N = probabilities(state)
    z = 1 - 2 * _bits(N).astype(float)
    zz = (z * np.roll(z, -1, axis=1)).sum(axis=1)
    return float(p.sum() / 4 + (p @ zz) / (4 * N) - (p @ z.sum(axis=1)) / (2 * N))


def magnetization(state) -> float:
    if _is_mps(state):
        from .mps import magnetization_mps

        return magnetization_mps(state)
    p, N = probabilities(state)
    return float(p @ magnetization_table(N))


def interface_density(state) -> np.ndarray:
    """Per-site ``<P^down_{j-1} P^up_j P^down_{j+1}>``."""
    if _is_mps(state):
        from .mps import interface_density_mps

        return interface_density_mps(state)
    p, N = probabilities(state)
    return p @ interface_table(N)


def down_count(state) -> float:
    p, N = probabilities(state)
    return float(p @ down_count_table(N))


# ----------------------------------------------------------------------------
# records


@dataclass
class ObservableRecord:
    time: float
    M: float
    lam: dict[int, float]
    Q_B: float
    energy: float = float("nan")
    norm: float = 1.0
    extra: dict[str, float] = field(default_factory=dict)

    def row(self, n_max: int = N_MAX_DEFAULT) -> list[float]:
        lam = [self.lam.get(n, 0.0) for n in range(1, n_max + 1)]
        return [self.time, self.M, *lam, self.Q_B, self.energy, self.norm, *self.extra.values()]

    @staticmethod
    def header(n_max: int = N_MAX_DEFAULT, extra: Sequence[str] = (), norm_name: str = "norm") -> list[str]:
        return ["time", "M", *[f"lambda_{n}" for n in range(1, n_max + 1)], "Q_B", "energy", norm_name, *extra]


def record(state, time: float, H=None, n_max: int = N_MAX_DEFAULT) -> ObservableRecord:
    """Snapshot of all standard observables of a dense state or density matrix."""
    arr = np.asarray(state)
    if arr.ndim == 1:
        norm = float(np.vdot(arr, arr).real)
        energy = float(np.vdot(arr, H @ arr).real) if H is not None else float("nan")
    else:
        norm = float(np.trace(arr).real)
        energy = float(np.trace(H @ arr).real) if H is not None else float("nan")
    return ObservableRecord(
        time=float(time),
        M=magnetization(arr),
        lam=bubble_densities(arr, n_max),
        Q_B=blockade_density(arr),
        energy=energy,
        norm=norm,
    )


# ----------------------------------------------------------------------------
# z-basis shots


def shot_uniforms(seed: int, start: int, count: int) -> np.ndarray:
    """Uniforms of shots ``start .. start+count-1`` from the counter-based stream.

    Shot ``i`` always consumes the ``i``-th double of ``Philox(key=seed)``, so
    disjoint shot ranges can be drawn independently and concatenated.
    """
    bitgen = np.random.Philox(key=int(seed))
    # one Philox counter step yields four 64-bit words
    bitgen.advance(start // 4)
    gen = np.random.Generator(bitgen)
    skip = start % 4
    return gen.random(count + skip)[skip:]


@dataclass
class ShotSet:
    """z-basis measurement outcomes; ``samples[k]`` holds the bits of shot ``k``."""

    samples: np.ndarray
    seed: int
    schedule_hash: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.uint8)
        if self.samples.ndim != 2:
            raise ValueError("samples must be (count, N)")

    @property
    def count(self) -> int:
        return self.samples.shape[0]

    @property
    def N(self) -> int:
        return self.samples.shape[1]

    def configs(self) -> list[SpinConfig]:
        return [SpinConfig(tuple(row)) for row in self.samples]

    def indices(self) -> np.ndarray:
        weights = 1 << np.arange(self.N - 1, -1, -1, dtype=np.int64)
        return self.samples.astype(np.int64) @ weights

    # estimators: per-shot values and their sample means
    def magnetization_values(self) -> np.ndarray:
        return 1.0 - 2.0 * self.samples.sum(axis=1) / self.N

    def bubble_density_values(self, n: int) -> np.ndarray:
        down = self.samples.astype(bool)
        hit = ~down & np.roll(~down, -(n + 1), axis=1)
        for k in range(1, n + 1):
            hit &= np.roll(down, -k, axis=1)
        return hit.sum(axis=1) / self.N

    def blockade_values(self) -> np.ndarray:
        down = self.samples.astype(bool)
        return (down & np.roll(down, -1, axis=1)).sum(axis=1) / self.N

    def estimate(self, values: np.ndarray) -> tuple[float, float]:
        """Sample mean and its standard error."""
        return float(values.mean()), float(values.std(ddof=1) / np.sqrt(len(values))) if len(values) > 1 else 0.0

    # serialisation
    _MAGIC = b"FVSH"

    def to_bytes(self) -> bytes:
        digest = bytes.fromhex(self.schedule_hash) if self.schedule_hash else b""
        digest = digest[:32].ljust(32, b"\0")
        header = self._MAGIC + struct.pack("<HHQQ", 1, self.N, self.count, self.seed) + digest
        return header + np.packbits(self.samples, axis=1).tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "ShotSet":
        if blob[:4] != cls._MAGIC:
            raise ValueError("not a shot file")
        version, N, count, seed = struct.unpack("<HHQQ", blob[4:24])
        if version != 1:
            raise ValueError(f"unsupported shot file version {version}")
        digest = blob[24:56].rstrip(b"\0").hex()
        packed = np.frombuffer(blob[56:], dtype=np.uint8).reshape(count, -1)
        samples = np.unpackbits(packed, axis=1)[:, :N]
        return cls(samples, seed, digest)

    def to_text(self) -> str:
        return "".join("".join(map(str, row)) + "\n" for row in self.samples)

    @classmethod
    def from_text(cls, text: str, seed: int = 0) -> "ShotSet":
        rows = [[int(c) for c in line.strip()] for line in text.splitlines() if line.strip()]
        return cls(np.array(rows, dtype=np.uint8), seed)


def schedule_hash(obj) -> str:
    return hashlib.sha256(repr(obj).encode()).hexdigest()


def sample_shots(state, count: int, seed: int, schedule_hash: str = "", tol: float = 1e-8) -> ShotSet:
    """Draw ``count`` z-basis outcomes from the Born distribution of ``state``."""
    if _is_mps(state):
        from .mps import sample_mps

        return sample_mps(state, count, seed, schedule_hash)
    p, N = probabilities(state)
    total = p.sum()
    if abs(total - 1.0) > tol or np.any(p < -tol):
        raise NormalizationError(f"state is not normalised (total probability {total!r})")
    cdf = np.cumsum(np.clip(p, 0.0, None))
    cdf /= cdf[-1]
    u = shot_uniforms(seed, 0, count)
    idx = np.minimum(np.searchsorted(cdf, u, side="right"), p.size - 1)
    shifts = np.arange(N - 1, -1, -1)
    samples = ((idx[:, None] >> shifts[None, :]) & 1).astype(np.uint8)
    return ShotSet(samples, seed, schedule_hash, {"source": "dense"})
