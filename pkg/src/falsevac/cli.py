"""Command-line harness: ``falsevac run <config.json>`` and ``falsevac plot <dir>``.

Artifacts go to ``<root>/<output>`` where ``root`` is ``--root``, the
``FALSEVAC_OUTPUT_ROOT`` environment variable, or ``./runs``.  Every run
writes a ``manifest.json`` (config hash, package version, seed) next to its
data.  Exit codes: 0 success, 2 configuration or schema error, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import shutil
import sys
import tempfile
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, load_config

ENV_ROOT = "FALSEVAC_OUTPUT_ROOT"


class NumericalFailure(RuntimeError):
    def __init__(self, message: str, time: float | None = None):
        super().__init__(message)
        self.time = time


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def read_csv(path: Path) -> tuple[list[str], np.ndarray]:
    with open(path) as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array([[float(v) for v in r] for r in rows[1:]], dtype=float)


# ----------------------------------------------------------------------------
# runners: each writes its files into ``out`` and returns nothing


def _params(cfg: RunConfig):
    from .lattice import ModelParams

    p = cfg.params
    try:
        return ModelParams(p["N"], p["J"], p["h_x"], p["h_z"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _initial(cfg: RunConfig, N: int):
    from .lattice import SpinConfig

    init = cfg.options.get("initial")
    if init is None:
        return SpinConfig.all_up(N)
    try:
        c = SpinConfig.from_string(init)
    except ValueError as exc:
        raise ConfigError(f"bad initial configuration: {exc}") from exc
    if c.N != N:
        raise ConfigError("initial configuration length differs from params.N")
    return c


def _schedule(cfg: RunConfig, params, duration: float):
    from .schedules import DriveSchedule

    if cfg.schedule is not None:
        return DriveSchedule.from_dict(cfg.schedule)
    return DriveSchedule.constant(params.h_x, params.h_z, duration)


def _builder(cfg: RunConfig, params):
    from .effective import build_eff_n, build_eff_n1
    from .hamiltonians import FullModelFamily

    model = cfg.options.get("model", "full")
    if model == "full":
        return FullModelFamily(params.N, params.J)
    if model == "eff_n1":
        return lambda hx, hz: build_eff_n1(params.replace(h_x=hx, h_z=hz))
    if model == "eff_n":
        n = int(cfg.options.get("n", 2))
        return lambda hx, hz: build_eff_n(params.replace(h_x=hx, h_z=hz), n)
    raise ConfigError(f"unknown model {model!r}")


def run_evolve(cfg: RunConfig, out: Path, strict: bool, threads: int) -> None:
    from .evolve import basis_state, propagate_driven
    from .observables import ObservableRecord, record

    params = _params(cfg)
    n_max = int(cfg.options["n_max"])
    sched = _schedule(cfg, params, float(cfg.options["duration"]))
    build = _builder(cfg, params)
    psi0 = basis_state(_initial(cfg, params.N))
    traj = propagate_driven(psi0, sched, build, float(cfg.options["dt"]),
                            record_every=float(cfg.options["record_every"]),
                            observe=lambda t, s, H: record(s, t, H, n_max), keep_states=False, strict=strict)
    rows = [r.row(n_max) for r in traj.records]
    norms = [r.norm for r in traj.records]
    bad = [r.time for r, n in zip(traj.records, norms) if abs(n - 1) > 1e-8]
    if bad:
        raise NumericalFailure("norm drift above 1e-8", bad[0])
    write_csv(out / "trajectory.csv", ObservableRecord.header(n_max), rows)


def run_scan(cfg: RunConfig, out: Path, strict: bool, threads: int) -> None:
    from .analysis import ConfigError as ScanConfigError
    from .analysis import resonance_scan

    params = _params(cfg)
    g = cfg.options["h_z_grid"]
    if isinstance(g, dict):
        bad = set(g) - {"start", "stop", "num"}
        if bad:
            raise ConfigError(f"unknown h_z_grid fields {sorted(bad)}")
        grid = np.linspace(float(g["start"]), float(g["stop"]), int(g["num"]))
    else:
        grid = np.asarray(g, dtype=float)
    template = None
    if cfg.schedule is not None:
        from .schedules import Constant, DriveSchedule, Segment

        base = DriveSchedule.from_dict(cfg.schedule)

        def template(hx, hz):
            # constant h_z profiles are replaced by the scanned value
            segs = tuple(Segment(s.duration, s.h_x, Constant(hz) if isinstance(s.h_z, Constant) else s.h_z, s.name)
                         for s in base.segments)
            return DriveSchedule(segs, base.time_scale_ns)

    try:
        res = resonance_scan(grid, params.h_x, params.N, template, float(cfg.options["duration"]), params.J,
                             "exact", int(cfg.options["n_max"]), heatmap_points=int(cfg.options["heatmap_points"]),
                             meta={"seed": cfg.seed}, workers=threads)
    except ScanConfigError as exc:
        raise ConfigError(str(exc)) from exc
    (out / "scan.json").write_text(res.to_json())
    (out / "scan.csv").write_text(res.table_csv())
    (out / "heatmap.csv").write_text(res.heatmap_csv())


def collapse_curves(cfg: RunConfig):
    """Simulate the curves of a collapse run; returns ``[(param, t, values)]``."""
    from .evolve import all_up_state, evolve_static, propagate_driven
    from .hamiltonians import FullModelFamily
    from .observables import bubble_density, magnetization
    from .schedules import ModulatedFlip, false_vacuum_protocol

    params = _params(cfg)
    o = cfg.options
    obs = o["observable"]
    if obs == "M":
        f = magnetization
    else:
        n = int(obs.split("_")[1])
        f = lambda s: bubble_density(s, n)  # noqa: E731
    fam = FullModelFamily(params.N, params.J)
    curves = []
    for v in o["values"]:
        v = float(v)
        if o["parameter"] == "h_x":
            T = float(o["duration"]) if o["duration"] else 5.0 / v**2
            ts = np.linspace(0.0, T, int(o["points"]))
            tr = evolve_static(all_up_state(params.N), fam(v, params.h_z), ts,
                               observe=lambda t, s, H: f(s), keep_states=False)
            curves.append((v, ts, np.array(tr.records)))
        else:
            flip = ModulatedFlip(target=v, **(o["flip"] or {}))
            pause = float(o["pause"])
            sched = false_vacuum_protocol(params.h_x, flip, pause)
            tr = propagate_driven(all_up_state(params.N), sched, fam, float(o["dt"]),
                                  record_every=pause / (int(o["points"]) - 1),
                                  observe=lambda t, s, H: f(s), keep_states=False)
            t = np.array(tr.times) - flip.ramp_time
            keep = t >= -1e-9
            curves.append((v, np.clip(t[keep], 0, None), np.array(tr.records)[keep]))
    return curves


def run_collapse(cfg: RunConfig, out: Path, strict: bool, threads: int) -> None:
    from .analysis import best_exponent, scaling_collapse

    o = cfg.options
    curves = collapse_curves(cfg)
    window = tuple(o["window"]) if o["window"] else None
    rep = scaling_collapse(curves, float(o["exponent"]), window)
    doc = json.loads(rep.to_json())
    doc["parameter"] = o["parameter"]
    doc["observable"] = o["observable"]
    if o["exponent_search"]:
        s = o["exponent_search"]
        ps = np.linspace(float(s["start"]), float(s["stop"]), int(s["num"]))
        best, res = best_exponent(curves, ps, window)
        doc["search"] = {"exponents": list(map(float, ps)), "residuals": list(map(float, res)), "best": best}
    (out / "collapse.json").write_text(json.dumps(doc, indent=2, sort_keys=True))
    rows = [[p, t, y] for p, ts, ys in curves for t, y in zip(ts, ys)]
    write_csv(out / "curves.csv", [o["parameter"], "time", o["observable"]], rows)


def run_redfield(cfg: RunConfig, out: Path, strict: bool, threads: int) -> None:
    from .evolve import basis_state
    from .hamiltonians import build_full
    from .redfield import BathSpec, MasterTrajectory, build_redfield, evolve_master

    params = _params(cfg)
    o = cfg.options
    try:
        bath = BathSpec(**o["bath"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad bath: {exc}") from exc
    psi = basis_state(_initial(cfg, params.N))
    tensor = build_redfield(build_full(params), bath, bool(o["secular"]), float(o["threshold"]))
    tr = evolve_master(np.outer(psi, psi.conj()), tensor, float(o["duration"]), float(o["dt"]), o["method"])
    write_csv(out / "trajectory.csv", MasterTrajectory.header(), tr.rows())
    (out / "bath.json").write_text(json.dumps(tr.meta, indent=2, sort_keys=True))


def run_tebd(cfg: RunConfig, out: Path, strict: bool, threads: int) -> None:
    from .mps import MpsConfig, MpsState, mps_energy, tebd4_evolve
    from .observables import blockade_density, bubble_densities, magnetization

    params = _params(cfg)
    o = cfg.options
    try:
        mc = MpsConfig(int(o["chi"]), float(o["dt"]), float(o["cutoff"]), int(o["discard"]))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    state = MpsState.product(_initial(cfg, params.N), mc.discard)
    fields = None
    if cfg.schedule is not None:
        from .schedules import DriveSchedule

        sched = DriveSchedule.from_dict(cfg.schedule)
        fields = sched.fields
        T = sched.total_time
    else:
        T = float(o["duration"])

    def observe(t, s):
        lam = bubble_densities(s, 6)
        return [t, magnetization(s), *[lam[n] for n in range(1, 7)], blockade_density(s), mps_energy(s, params),
                s.norm()]

    tr = tebd4_evolve(state, params, T, mc, float(o["record_every"]), observe, fields, int(o["order"]), strict)
    rows = [r + [e] for r, e in zip(tr.records, tr.truncation)]
    header = ["time", "M", *[f"lambda_{n}" for n in range(1, 7)], "Q_B", "energy", "norm", "truncation"]
    write_csv(out / "trajectory.csv", header, rows)


def run_two_bubble(cfg: RunConfig, out: Path, strict: bool, threads: int) -> None:
    from .evolve import LayoutError, quench_two_bubble_scenario

    params = _params(cfg)
    o = cfg.options
    times = np.arange(0.0, float(o["duration"]) + 1e-12, float(o["record_every"]))
    try:
        res = quench_two_bubble_scenario(params.N, int(o["n1"]), int(o["n2"]), params, times)
    except LayoutError as exc:
        raise ConfigError(str(exc)) from exc
    N = params.N
    write_csv(out / "interface.csv", ["time", *[f"site_{j}" for j in range(N)]],
              [[t, *row] for t, row in zip(res.times, res.profiles)])
    write_csv(out / "front.csv", ["time", "front", "down_count", "norm", "energy"],
              [[t, f, d, n, e] for t, f, d, n, e in zip(res.times, res.front_position(), res.down_counts,
                                                        res.norms, res.energies)])
    width = float(o["block_width"])
    if 0 < width <= res.times[-1] - res.times[0]:
        tb, fb = res.block_front(width)
        write_csv(out / "front_blocks.csv", ["time", "front"], [[t, f] for t, f in zip(tb, fb)])


def run_sample(cfg: RunConfig, out: Path, strict: bool, threads: int) -> None:
    from .evolve import basis_state, propagate_driven
    from .hamiltonians import FullModelFamily
    from .observables import bubble_density, magnetization, sample_shots, schedule_hash

    params = _params(cfg)
    o = cfg.options
    sched = _schedule(cfg, params, float(o["duration"]))
    traj = propagate_driven(basis_state(_initial(cfg, params.N)), sched, FullModelFamily(params.N, params.J),
                            float(o["dt"]), record_every=sched.total_time, keep_states=False, strict=strict)
    shots = sample_shots(traj.final, int(o["count"]), cfg.seed, schedule_hash(sched.to_dict()))
    (out / "shots.bin").write_bytes(shots.to_bytes())
    (out / "shots.txt").write_text(shots.to_text())
    summary = {"count": shots.count, "seed": cfg.seed, "schedule_hash": shots.schedule_hash}
    m, e = shots.estimate(shots.magnetization_values())
    summary["M"] = {"mean": m, "stderr": e, "exact": magnetization(traj.final)}
    summary["lambda_1"] = {"mean": shots.estimate(shots.bubble_density_values(1))[0],
                           "exact": bubble_density(traj.final, 1)}
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))


RUNNERS = {
    "evolve": run_evolve,
    "scan": run_scan,
    "collapse": run_collapse,
    "redfield": run_redfield,
    "tebd": run_tebd,
    "two-bubble": run_two_bubble,
    "sample": run_sample,
}


def output_root(arg: str | None) -> Path:
    return Path(arg or os.environ.get(ENV_ROOT) or "runs")


def execute(cfg: RunConfig, root: Path, strict: bool = False, threads: int = 1) -> Path:
    """Run ``cfg`` into a temporary directory and rename it into place."""
    root.mkdir(parents=True, exist_ok=True)
    name = cfg.output or f"{cfg.kind}-{cfg.hash()[:12]}"
    final = root / name
    tmp = Path(tempfile.mkdtemp(prefix=f".{name}.", dir=root))
    try:
        with warnings.catch_warnings():
            if strict:
                warnings.simplefilter("error")
            RUNNERS[cfg.kind](cfg, tmp, strict, threads)
        files = sorted(p.name for p in tmp.iterdir())
        manifest = {"config_hash": cfg.hash(), "version": __version__, "seed": cfg.seed, "kind": cfg.kind,
                    "files": files, "config": cfg.canonical()}
        (tmp / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
        if final.exists():
            shutil.rmtree(final)
        os.replace(tmp, final)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return final


# ----------------------------------------------------------------------------
# plotting


def plot_dir(path: Path) -> list[Path]:
    from . import svg
    from .analysis import ScanResult
    from .lattice import ResonanceSpec

    mf = path / "manifest.json"
    if not mf.exists():
        raise ConfigError(f"{path} has no manifest.json")
    try:
        manifest = json.loads(mf.read_text())
        kind = manifest["kind"]
    except (json.JSONDecodeError, KeyError) as exc:
        raise ConfigError(f"unreadable manifest: {exc}") from exc
    written = []

    def save(name, text):
        p = path / name
        p.write_text(text)
        written.append(p)

    try:
        if kind in ("evolve", "redfield", "tebd"):
            header, data = read_csv(path / "trajectory.csv")
            t = data[:, header.index("time")]
            save("magnetization.svg", svg.line_plot([("M", t, data[:, header.index("M")])],
                                                    "Magnetization", "time (1/J)", "M"))
            lam = [(f"lambda_{n}", t, data[:, header.index(f"lambda_{n}")]) for n in range(1, 4)
                   if f"lambda_{n}" in header]
            save("bubbles.svg", svg.line_plot(lam, "Bubble densities", "time (1/J)", "density"))
        elif kind == "scan":
            res = ScanResult.from_json((path / "scan.json").read_text())
            J = res.meta.get("J", 1.0)
            lo, hi = min(res.axis), max(res.axis)
            marks = [ResonanceSpec(n, J).h_z_res for n in range(1, 7)]
            marks = [m for m in marks if lo <= m <= hi]
            series = [(f"lambda_{n}", res.axis, res.lam[n]) for n in sorted(res.lam)]
            save("scan.svg", svg.line_plot(series, "Bubble densities after the quench", "h_z / J", "density", marks))
            if res.heatmap:
                save("heatmap.svg", svg.heatmap(res.heatmap, res.heatmap_times, res.axis, "M(t, h_z)",
                                                "time (1/J)", "h_z / J"))
        elif kind == "collapse":
            doc = json.loads((path / "collapse.json").read_text())
            series = [(f"{doc['parameter']}={c['param']:.4g}", doc["grid"], c["values"]) for c in doc["rescaled"]]
            save("collapse.svg", svg.line_plot(series, f"Collapse at p={doc['exponent']:.3g}, "
                                               f"residual {doc['residual']:.3g}",
                                               f"|{doc['parameter']}|^p t", doc["observable"]))
        elif kind == "two-bubble":
            header, data = read_csv(path / "interface.csv")
            save("interface.svg", svg.heatmap(data[:, 1:], np.arange(data.shape[1] - 1), data[:, 0],
                                              "Interface density", "site", "time (1/J)"))
            h2, d2 = read_csv(path / "front.csv")
            save("front.svg", svg.line_plot([("front", d2[:, 0], d2[:, 1])], "Front position",
                                            "time (1/J)", "sites"))
        elif kind == "sample":
            from .observables import ShotSet

            shots = ShotSet.from_bytes((path / "shots.bin").read_bytes())
            vals = shots.magnetization_values()
            counts = np.bincount(((vals + 1) / 2 * shots.N).round().astype(int), minlength=shots.N + 1)
            xs = np.linspace(-1, 1, shots.N + 1)
            save("shots.svg", svg.line_plot([("shots", xs, counts)], "Shot magnetization histogram", "M",
                                            "count"))
        else:
            raise ConfigError(f"unknown artifact kind {kind!r}")
    except (FileNotFoundError, ValueError, KeyError, IndexError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"artifact schema mismatch: {exc}") from exc
    return written


# ----------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="falsevac", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run an experiment described by a JSON config")
    r.add_argument("config", help="path to the JSON run configuration")
    r.add_argument("--strict", action="store_true", help="escalate resolution and fidelity warnings to errors")
    r.add_argument("--threads", type=int, default=1, help="worker threads for independent simulations")
    r.add_argument("--seed", type=int, default=None, help="override the config seed")
    r.add_argument("--root", default=None, help=f"output root (default: ${ENV_ROOT} or ./runs)")
    q = sub.add_parser("plot", help="render SVG plots for an artifact directory")
    q.add_argument("directory")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "run":
        try:
            cfg = load_config(args.config, args.seed)
            if args.threads < 1:
                raise ConfigError("--threads must be >= 1")
            out = execute(cfg, output_root(args.root), args.strict, args.threads)
        except ConfigError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return 2
        except NumericalFailure as exc:
            print(f"numerical failure at t={exc.time}: {exc}", file=sys.stderr)
            return 3
        except (ArithmeticError, RuntimeError, ValueError, UserWarning, np.linalg.LinAlgError) as exc:
            t = getattr(exc, "time", None)
            where = f" at t={t}" if t is not None else ""
            print(f"numerical failure{where}: {type(exc).__name__}: {exc}", file=sys.stderr)
            return 3
        print(out)
        return 0
    try:
        for p in plot_dir(Path(args.directory)):
            print(p)
    except ConfigError as exc:
        print(f"schema error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
