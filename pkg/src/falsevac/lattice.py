"""Spin configurations on a ring and the bit-level basis machinery.

Site ``j`` (0-based) of an ``N``-site ring is stored in bit ``N - 1 - j`` of the
basis index, so the string form ``'0110'`` lists site 0 first and its integer
value is the canonical basis index.  Bit 0 is an up spin, bit 1 a down spin.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, NamedTuple

import numpy as np

# exact-backend limits; dense propagation above N_MAX_DENSE is refused
N_MIN = 3
N_MAX_DENSE = 14
N_MAX_SPARSE = 24


class SizeError(ValueError):
    """Ring size outside the range supported by a backend."""


def check_size(n_sites: int, n_max: int = N_MAX_SPARSE) -> int:
    n_sites = int(n_sites)
    if n_sites < N_MIN or n_sites > n_max:
        raise SizeError(f"ring size N={n_sites} outside [{N_MIN}, {n_max}]")
    return n_sites


@dataclass(frozen=True)
class SpinConfig:
    """A classical spin pattern on a ring of ``N`` sites.

    ``bits[j] == 1`` means site ``j`` points down.
    """

    bits: tuple[int, ...]

    def __post_init__(self):
        bits = tuple(int(b) for b in self.bits)
        if len(bits) < N_MIN:
            raise SizeError(f"ring needs at least {N_MIN} sites, got {len(bits)}")
        if any(b not in (0, 1) for b in bits):
            raise ValueError("bits must be 0 (up) or 1 (down)")
        object.__setattr__(self, "bits", bits)

    @property
    def N(self) -> int:
        return len(self.bits)

    @classmethod
    def from_string(cls, text: str) -> "SpinConfig":
        mapping = {"0": 0, "1": 1, "u": 0, "d": 1, "↑": 0, "↓": 1}
        try:
            return cls(tuple(mapping[c] for c in text.strip()))
        except KeyError as exc:
            raise ValueError(f"bad spin character {exc.args[0]!r}") from None

    @classmethod
    def from_index(cls, index: int, n_sites: int) -> "SpinConfig":
        return cls(tuple((index >> (n_sites - 1 - j)) & 1 for j in range(n_sites)))

    @classmethod
    def all_up(cls, n_sites: int) -> "SpinConfig":
        return cls((0,) * n_sites)

    @classmethod
    def all_down(cls, n_sites: int) -> "SpinConfig":
        return cls((1,) * n_sites)

    @property
    def index(self) -> int:
        value = 0
        for b in self.bits:
            value = (value << 1) | b
        return value

    def to_string(self) -> str:
        return "".join(str(b) for b in self.bits)

    def pretty(self) -> str:
        return "".join("↓" if b else "↑" for b in self.bits)

    def z(self) -> np.ndarray:
        """Spin values ``+1`` (up) / ``-1`` (down) per site."""
        return 1 - 2 * np.asarray(self.bits, dtype=int)

    def down_count(self) -> int:
        return sum(self.bits)

    def rotate(self, shift: int) -> "SpinConfig":
        """Cyclic relabelling: site ``j`` of the result is site ``j - shift`` of self."""
        shift %= self.N
        return SpinConfig(self.bits[-shift:] + self.bits[:-shift] if shift else self.bits)

    def flip(self, sites: Iterable[int]) -> "SpinConfig":
        bits = list(self.bits)
        for s in sites:
            bits[s % self.N] ^= 1
        return SpinConfig(tuple(bits))

    def __str__(self) -> str:
        return self.to_string()


@dataclass(frozen=True)
class ModelParams:
    """Couplings of the ferromagnetic Ising ring, energies in units of ``J``."""

    N: int
    J: float = 1.0
    h_x: float = 0.0
    h_z: float = 0.0

    def __post_init__(self):
        if self.J <= 0:
            raise ValueError("J must be positive (ferromagnet)")
        if int(self.N) != self.N or self.N < N_MIN:
            raise SizeError(f"ring size must be an integer >= {N_MIN}")

    def replace(self, **changes) -> "ModelParams":
        fields = {"N": self.N, "J": self.J, "h_x": self.h_x, "h_z": self.h_z}
        fields.update(changes)
        return ModelParams(**fields)


@dataclass(frozen=True)
class ResonanceSpec:
    """Longitudinal field at which creating an ``n``-bubble costs no energy."""

    n: int
    J: float = 1.0

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError("resonance index n must be a positive integer")

    @property
    def h_z_res(self) -> float:
        return float(Fraction(-2) / self.n) * self.J

    def delta(self, h_z: float) -> float:
        """Detuning ``h_z + 2J/n``."""
        return h_z + 2.0 * self.J / self.n

    def h_z_at(self, delta: float) -> float:
        return self.h_z_res + delta


class BubbleRun(NamedTuple):
    start: int
    length: int
    wrapping: bool = False


def enumerate_basis(n_sites: int, n_max: int = N_MAX_DENSE) -> list[SpinConfig]:
    """All ``2**N`` configurations ordered by basis index."""
    n_sites = check_size(n_sites, n_max)
    return [SpinConfig.from_index(i, n_sites) for i in range(1 << n_sites)]


def basis_bits(n_sites: int) -> np.ndarray:
    """``(2**N, N)`` uint8 array; row ``i`` holds the bits of basis state ``i``."""
    idx = np.arange(1 << n_sites, dtype=np.int64)
    shifts = np.arange(n_sites - 1, -1, -1, dtype=np.int64)
    return ((idx[:, None] >> shifts[None, :]) & 1).astype(np.uint8)


def magnetization_of(config: SpinConfig) -> float:
    return 1.0 - 2.0 * config.down_count() / config.N


def classical_energy(config: SpinConfig, params: ModelParams) -> float:
    if config.N != params.N:
        raise SizeError("config and params disagree on N")
    z = config.z()
    return float(-params.J * np.sum(z * np.roll(z, -1)) - params.h_z * np.sum(z))


def classical_energies(params: ModelParams) -> np.ndarray:
    """Diagonal energies of every basis state, vectorised."""
    z = 1 - 2 * basis_bits(params.N).astype(np.int64)
    return -params.J * np.sum(z * np.roll(z, -1, axis=1), axis=1) - params.h_z * np.sum(z, axis=1)


def bubble_decomposition(config: SpinConfig) -> list[BubbleRun]:
    """Maximal cyclic runs of down spins as ``(start, length)`` pairs.

    The all-down ring has no up delimiter; it is returned as one run of length
    ``N`` with ``wrapping=True``.
    """
    bits = config.bits
    N = config.N
    if all(bits):
        return [BubbleRun(0, N, True)]
    # start scanning just after an up spin so no run is cut in two
    first_up = bits.index(0)
    runs = []
    length = 0
    start = None
    for k in range(1, N + 1):
        j = (first_up + k) % N
        if bits[j]:
            if length == 0:
                start = j
            length += 1
        elif length:
            runs.append(BubbleRun(start, length))
            length = 0
    return sorted(runs)
