"""Piecewise field schedules ``h_x(t)``, ``h_z(t)``.

Times are in units of ``1/J``.  ``DriveSchedule.time_scale_ns`` optionally
records how many physical nanoseconds one time unit stands for; nothing in the
numerics depends on it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence, Union

import numpy as np


@dataclass(frozen=True)
class Constant:
    value: float

    def __call__(self, tau: float, duration: float) -> float:
        return self.value

    def features(self) -> list[float]:
        return []

    def to_dict(self) -> dict:
        return {"kind": "constant", "value": self.value}


@dataclass(frozen=True)
class Linear:
    start: float
    end: float

    def __call__(self, tau: float, duration: float) -> float:
        if duration <= 0:
            return self.end
        s = min(max(tau / duration, 0.0), 1.0)
        return self.start + (self.end - self.start) * s

    def features(self) -> list[float]:
        return []

    def to_dict(self) -> dict:
        return {"kind": "linear", "start": self.start, "end": self.end}


@dataclass(frozen=True)
class Tabulated:
    """Linear interpolation of measured samples; times are local to the segment."""

    times: tuple[float, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        t = tuple(float(x) for x in self.times)
        v = tuple(float(x) for x in self.values)
        if len(t) != len(v) or len(t) < 2:
            raise ValueError("tabulated profile needs >= 2 matching samples")
        if any(b <= a for a, b in zip(t, t[1:])):
            raise ValueError("tabulated times must increase")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    def __call__(self, tau: float, duration: float) -> float:
        return float(np.interp(tau, self.times, self.values))

    def features(self) -> list[float]:
        return [float(np.min(np.diff(self.times)))]

    @classmethod
    def load(cls, path) -> "Tabulated":
        data = np.loadtxt(path, delimiter=",", ndmin=2, comments="#")
        return cls(tuple(data[:, 0]), tuple(data[:, 1]))

    def to_dict(self) -> dict:
        return {"kind": "tabulated", "times": list(self.times), "values": list(self.values)}


@dataclass(frozen=True)
class ModulatedFlip:
    """Sign flip of ``h_z`` followed by a damped oscillation around the target.

    ``h_z`` falls linearly from ``start`` and passes zero after the crossing
    time ``k * target**2``; once it reaches ``target`` it oscillates as
    ``target + amplitude * exp(-s/decay_time) * sin(2 pi frequency s)``.
    ``offset`` shifts the profile so that a later segment can continue it.
    """

    target: float
    start: float = 1.0
    k: float = 1.0
    amplitude: float = 0.0
    frequency: float = 1.0
    settling_time: float = 0.75
    decay_time: float | None = None
    offset: float = 0.0

    @property
    def crossing_time(self) -> float:
        return self.k * self.target**2

    @property
    def decay(self) -> float:
        # e^-5 < 1 % of the amplitude left at the settling time
        return self.decay_time if self.decay_time is not None else self.settling_time / 5.0

    @property
    def ramp_time(self) -> float:
        """Time at which the linear part reaches the target."""
        if self.start > 0 and self.target < 0:
            return self.crossing_time * (self.start - self.target) / self.start
        return self.crossing_time

    def __call__(self, tau: float, duration: float = 0.0) -> float:
        t = tau + self.offset
        tr = self.ramp_time
        if t < tr:
            if tr <= 0:
                return self.target
            return self.start + (self.target - self.start) * t / tr
        s = t - tr
        return self.target + self.amplitude * math.exp(-s / self.decay) * math.sin(2 * math.pi * self.frequency * s)

    def continued(self, elapsed: float) -> "ModulatedFlip":
        return replace(self, offset=self.offset + elapsed)

    def features(self) -> list[float]:
        out = [self.ramp_time] if self.ramp_time > 0 else []
        if self.amplitude:
            out += [1.0 / self.frequency, self.decay]
        return out

    def to_dict(self) -> dict:
        d = {"kind": "modulated_flip"}
        d.update({k: getattr(self, k) for k in (
            "target", "start", "k", "amplitude", "frequency", "settling_time", "decay_time", "offset")})
        return d


Profile = Union[Constant, Linear, Tabulated, ModulatedFlip]


def profile_from_dict(d) -> Profile:
    if isinstance(d, (int, float)):
        return Constant(float(d))
    d = dict(d)
    kind = d.pop("kind")
    if kind == "constant":
        return Constant(float(d.pop("value")))
    if kind == "linear":
        return Linear(float(d.pop("start")), float(d.pop("end")))
    if kind == "tabulated":
        if "path" in d:
            return Tabulated.load(d.pop("path"))
        return Tabulated(tuple(d.pop("times")), tuple(d.pop("values")))
    if kind == "modulated_flip":
        return ModulatedFlip(**d)
    raise ValueError(f"unknown profile kind {kind!r}")


@dataclass(frozen=True)
class Segment:
    duration: float
    h_x: Profile
    h_z: Profile
    name: str = ""

    def __post_init__(self):
        if self.duration < 0:
            raise ValueError("segment durations must be >= 0")

    def fields(self, tau: float) -> tuple[float, float]:
        return self.h_x(tau, self.duration), self.h_z(tau, self.duration)

    def is_static(self) -> bool:
        return isinstance(self.h_x, Constant) and isinstance(self.h_z, Constant)


@dataclass(frozen=True)
class DriveSchedule:
    segments: tuple[Segment, ...]
    time_scale_ns: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))

    @property
    def total_time(self) -> float:
        return float(sum(s.duration for s in self.segments))

    def boundaries(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum([s.duration for s in self.segments])])

    def locate(self, t: float) -> tuple[int, float]:
        edges = self.boundaries()
        k = int(np.searchsorted(edges, t, side="right") - 1)
        k = min(max(k, 0), len(self.segments) - 1)
        return k, t - edges[k]

    def fields(self, t: float) -> tuple[float, float]:
        k, tau = self.locate(t)
        return self.segments[k].fields(tau)

    def anchors(self) -> dict[str, float]:
        """Durations of the named protocol stages (``irt``, ``pt``, ``mt``, ...)."""
        out: dict[str, float] = {}
        for s in self.segments:
            if s.name:
                out[s.name] = out.get(s.name, 0.0) + s.duration
        return out

    def min_feature(self) -> float:
        feats = [s.duration for s in self.segments if s.duration > 0 and not s.is_static()]
        for s in self.segments:
            for prof in (s.h_x, s.h_z):
                feats += [f for f in prof.features() if f > 0]
        return min(feats) if feats else math.inf

    def to_dict(self) -> dict:
        return {
            "time_scale_ns": self.time_scale_ns,
            "segments": [
                {"duration": s.duration, "name": s.name, "h_x": s.h_x.to_dict(), "h_z": s.h_z.to_dict()}
                for s in self.segments
            ],
        }

    @classmethod
    def from_dict(cls, d) -> "DriveSchedule":
        allowed = {"segments", "time_scale_ns"}
        unknown = set(d) - allowed
        if unknown:
            raise ValueError(f"unknown schedule fields {sorted(unknown)}")
        segs = []
        for s in d["segments"]:
            extra = set(s) - {"duration", "name", "h_x", "h_z"}
            if extra:
                raise ValueError(f"unknown segment fields {sorted(extra)}")
            segs.append(Segment(float(s["duration"]), profile_from_dict(s["h_x"]),
                                profile_from_dict(s["h_z"]), s.get("name", "")))
        return cls(tuple(segs), d.get("time_scale_ns"))

    @classmethod
    def constant(cls, h_x: float, h_z: float, duration: float) -> "DriveSchedule":
        return cls((Segment(duration, Constant(h_x), Constant(h_z), "pt"),))


def false_vacuum_protocol(
    h_x: float,
    flip: ModulatedFlip,
    pause: float,
    irt: float = 0.0,
    mt: float = 0.0,
) -> DriveSchedule:
    """Ramp-in, flip, pause and measurement ramp.

    During the ramp-in ``h_z`` stays at ``flip.start > 0`` while ``h_x`` rises
    from 0; the flip segment lasts until ``h_z`` first reaches its target, and
    its modulation carries on through the pause and the measurement ramp.
    """
    segs = []
    if irt > 0:
        segs.append(Segment(irt, Linear(0.0, h_x), Constant(flip.start), "irt"))
    tr = flip.ramp_time
    if tr > 0:
        segs.append(Segment(tr, Constant(h_x), flip, "flip"))
    segs.append(Segment(pause, Constant(h_x), flip.continued(tr), "pt"))
    if mt > 0:
        segs.append(Segment(mt, Linear(h_x, 0.0), flip.continued(tr + pause), "mt"))
    return DriveSchedule(tuple(segs))
