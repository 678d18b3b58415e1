"""Resonance scans, Landau-Zener exponent fits and scaling collapse."""

from __future__ import annotations

import csv
import io
import json
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .evolve import all_up_state, evolve_static, propagate_driven
from .hamiltonians import FullModelFamily
from .lattice import N_MAX_SPARSE, ResonanceSpec
from .observables import bubble_densities, magnetization
from .schedules import DriveSchedule

COLLAPSE_GRID = 200


class ConfigError(ValueError):
    pass


class DataError(ValueError):
    pass


class RangeError(ValueError):
    pass


class FitWarning(UserWarning):
    pass


# ----------------------------------------------------------------------------
# resonance scans


@dataclass
class ScanResult:
    axis_name: str
    axis: list[float]
    M: list[float]
    lam: dict[int, list[float]]
    meta: dict = field(default_factory=dict)
    heatmap_times: list[float] = field(default_factory=list)
    heatmap: list[list[float]] = field(default_factory=list)  # M(t) per grid point

    def __post_init__(self):
        a = np.asarray(self.axis, dtype=float)
        if a.size > 1 and not (np.all(np.diff(a) > 0) or np.all(np.diff(a) < 0)):
            raise ValueError("scan grid must be strictly monotone")

    def lam_array(self, n: int) -> np.ndarray:
        return np.asarray(self.lam[n], dtype=float)

    def resonances(self, J: float = 1.0, window: float | None = None) -> list[dict]:
        """Flag local maxima of ``lambda_n`` that stand out against ``lambda_{n-1}``, ``lambda_{n+1}``.

        A point qualifies when it is a 3-point local maximum and exceeds twice
        the neighbouring-``n`` densities at the same field; only peaks within
        ``window`` (default: two grid steps) of ``-2J/n`` are reported.
        """
        x = np.asarray(self.axis, dtype=float)
        step = float(np.min(np.abs(np.diff(x)))) if x.size > 1 else 0.0
        window = 2 * step if window is None else window
        out = []
        ns = sorted(self.lam)
        for n in ns:
            y = self.lam_array(n)
            target = ResonanceSpec(n, J).h_z_res
            for i in range(1, y.size - 1):
                if not (y[i] > y[i - 1] and y[i] >= y[i + 1] and y[i] > 0):
                    continue
                rivals = [self.lam_array(m)[i] for m in (n - 1, n + 1) if m in self.lam]
                if rivals and y[i] < 2 * max(rivals):
                    continue
                if abs(x[i] - target) <= window + 1e-12:
                    out.append({"n": n, "index": i, "h_z": float(x[i]), "value": float(y[i])})
        return out

    def to_json(self) -> str:
        d = asdict(self)
        d["lam"] = {str(k): v for k, v in self.lam.items()}
        d["resonances"] = self.resonances(self.meta.get("J", 1.0))
        return json.dumps(d, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ScanResult":
        d = json.loads(text)
        d.pop("resonances", None)
        d["lam"] = {int(k): v for k, v in d["lam"].items()}
        return cls(**d)

    def heatmap_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([self.axis_name, *[repr(float(t)) for t in self.heatmap_times]])
        for a, row in zip(self.axis, self.heatmap):
            w.writerow([repr(float(a)), *[repr(float(v)) for v in row]])
        return buf.getvalue()

    def table_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        ns = sorted(self.lam)
        w.writerow([self.axis_name, "M", *[f"lambda_{n}" for n in ns]])
        for i, a in enumerate(self.axis):
            w.writerow([repr(float(a)), repr(float(self.M[i])), *[repr(float(self.lam[n][i])) for n in ns]])
        return buf.getvalue()


def quench_template(duration: float) -> Callable[[float, float], DriveSchedule]:
    """Sudden quench: constant ``(h_x, h_z)`` for ``duration``."""
    return lambda h_x, h_z: DriveSchedule.constant(h_x, h_z, duration)


def resonance_scan(
    h_z_grid: Sequence[float],
    h_x: float,
    N: int,
    schedule_template: Callable[[float, float], DriveSchedule] | None = None,
    duration: float = 200.0,
    J: float = 1.0,
    backend: str = "exact",
    n_max: int = 6,
    dt: float = 0.02,
    heatmap_points: int = 51,
    meta: dict | None = None,
    workers: int = 1,
) -> ScanResult:
    """Evolve the false vacuum at each ``h_z`` and record final ``M`` and ``lambda_n``.

    Without a template every point is a sudden quench of length ``duration``.
    """
    grid = np.asarray(h_z_grid, dtype=float)
    if backend != "exact":
        raise ConfigError(f"resonance scans support the exact backend only, got {backend!r}")
    if N > N_MAX_SPARSE or N < 3:
        raise ConfigError(f"exact backend cannot handle N={N}")
    if np.any(grid >= 0) or np.any(grid < -4 * J):
        raise ConfigError("scan grid must lie within [-4J, 0)")
    fam = FullModelFamily(N, J)
    template = schedule_template or quench_template(duration)

    def point(hz):
        sched = template(h_x, float(hz))
        T = sched.total_time
        sample = np.linspace(0.0, T, heatmap_points)
        if len(sched.segments) == 1 and sched.segments[0].is_static():
            traj = evolve_static(all_up_state(N), fam(*sched.fields(0.0)), sample,
                                 observe=lambda t, s, H: magnetization(s), keep_states=False)
            final = traj.last_state
        else:
            traj = propagate_driven(all_up_state(N), sched, fam, dt, record_every=T / (heatmap_points - 1),
                                    observe=lambda t, s, H: magnetization(s))
            final = traj.final
        return magnetization(final), bubble_densities(final, n_max), traj

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(point, grid))
    else:
        results = [point(hz) for hz in grid]
    Ms, lams, heat = [], {n: [] for n in range(1, min(n_max, N - 2) + 1)}, []
    times = None
    for m, lam, traj in results:
        Ms.append(m)
        for n, v in lam.items():
            lams[n].append(v)
        heat.append([float(v) for v in traj.records])
        times = list(map(float, traj.times))
    info = {"h_x": h_x, "N": N, "J": J, "backend": backend, "duration": duration}
    info.update(meta or {})
    return ScanResult("h_z", [float(g) for g in grid], Ms, lams, info, times or [], heat)


# ----------------------------------------------------------------------------
# Landau-Zener exponent


@dataclass
class ExponentFit:
    slope: float
    intercept: float
    ci: tuple[float, float]
    degenerate: bool
    n_points: int

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def lz_exponent_fit(
    h_x: Sequence[float],
    lam: Sequence[float],
    n_boot: int = 2000,
    seed: int = 0,
    level: float = 0.95,
) -> ExponentFit:
    """Least-squares slope of ``log lambda`` against ``log h_x`` with a bootstrap interval."""
    x = np.asarray(h_x, dtype=float)
    y = np.asarray(lam, dtype=float)
    if x.shape != y.shape or x.size < 4:
        raise DataError("need at least 4 matching (h_x, lambda) points")
    if np.any(y <= 0) or np.any(x <= 0):
        raise DataError("densities and fields must be positive for a log-log fit")
    if x.max() / x.min() < 10:
        warnings.warn("h_x ladder spans less than a decade", FitWarning, stacklevel=2)
    if np.any(y >= 0.05):
        warnings.warn("densities above 0.05 leave the perturbative regime", FitWarning, stacklevel=2)
    lx, ly = np.log(x), np.log(y)
    if np.ptp(ly) < 1e-12:
        return ExponentFit(0.0, float(ly[0]), (0.0, 0.0), True, x.size)
    slope, intercept = np.polyfit(lx, ly, 1)
    rng = np.random.default_rng(seed)
    boots = []
    for _ in range(n_boot):
        idx = rng.integers(0, x.size, x.size)
        if np.ptp(lx[idx]) == 0:
            continue
        boots.append(np.polyfit(lx[idx], ly[idx], 1)[0])
    lo, hi = np.quantile(boots, [(1 - level) / 2, (1 + level) / 2])
    return ExponentFit(float(slope), float(intercept), (float(lo), float(hi)), False, x.size)


# ----------------------------------------------------------------------------
# scaling collapse


@dataclass
class CollapseReport:
    exponent: float
    window: tuple[float, float]
    grid: list[float]
    rescaled: list[dict]
    residual: float
    raw_residual: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def _as_curves(curves):
    out = []
    for param, t, y in curves:
        t = np.asarray(t, dtype=float)
        y = np.asarray(y, dtype=float)
        if t.shape != y.shape or t.size < 2:
            raise DataError("each curve needs matching time and value arrays")
        out.append((float(param), t, y))
    return out


def scaling_collapse(
    curves,
    exponent: float,
    window: tuple[float, float] | None = None,
    n_grid: int = COLLAPSE_GRID,
) -> CollapseReport:
    """Rescale ``t -> |param|**p * t`` and measure the spread of the curves.

    The residual is the largest pairwise L-infinity distance between the
    curves, linearly interpolated onto ``n_grid`` points of the common rescaled
    window and divided by the value range there (so it is unchanged by an
    affine map applied to all values).  ``window`` clips the common window.
    """
    cs = _as_curves(curves)
    if len(cs) < 3:
        raise DataError("scaling collapse needs at least 3 curves")
    scaled = [(p, abs(p) ** exponent * t, y) for p, t, y in cs]
    lo = max(s[0] for _, s, _ in scaled)
    hi = min(s[-1] for _, s, _ in scaled)
    if window is not None:
        lo, hi = max(lo, window[0]), min(hi, window[1])
    if not hi > lo:
        raise RangeError("rescaled curves have no common window")
    grid = np.linspace(lo, hi, n_grid)
    ys = np.array([np.interp(grid, s, y) for _, s, y in scaled])
    raw = float(np.max(ys.max(axis=0) - ys.min(axis=0)))
    span = float(ys.max() - ys.min())
    resid = raw / span if span > 0 else 0.0
    rescaled = [{"param": p, "values": list(map(float, y))} for (p, _, _), y in zip(scaled, ys)]
    return CollapseReport(float(exponent), (float(lo), float(hi)), list(map(float, grid)), rescaled, resid, raw)


def best_exponent(curves, exponents: Sequence[float], window=None) -> tuple[float, np.ndarray]:
    """Exponent with the smallest collapse residual over a scan of candidates."""
    res = []
    for p in exponents:
        try:
            res.append(scaling_collapse(curves, p, window).residual)
        except RangeError:
            res.append(math.inf)
    res = np.asarray(res)
    return float(np.asarray(exponents)[int(np.argmin(res))]), res
