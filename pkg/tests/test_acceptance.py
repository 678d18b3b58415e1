"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line.

Run ``pytest tests/test_acceptance.py -v`` and read the "acceptance criteria"
section of the terminal summary.
"""

import warnings

import numpy as np
import pytest
from scipy.sparse.linalg import expm_multiply

from falsevac.analysis import FitWarning, best_exponent, lz_exponent_fit, resonance_scan, scaling_collapse
from falsevac.cli import collapse_curves
from falsevac.config import parse_config
from falsevac.effective import (
    blockaded_subspace,
    build_eff_n1,
    extract_creation_coefficient,
    lucas_number,
    pxp_in_bubble_frame,
    to_pxp,
)
from falsevac.evolve import all_up_state, block_average, evolve_static, propagate_driven, quench_two_bubble_scenario
from falsevac.hamiltonians import FullModelFamily, build_full
from falsevac.lattice import ModelParams, SpinConfig
from falsevac.mps import MpsConfig, MpsState, magnetization_mps, open_chain_hamiltonian, tebd4_evolve
from falsevac.observables import blockade_density, bubble_density, magnetization
from falsevac.redfield import BathSpec, build_redfield, evolve_master, gibbs_state, ground_projector, trace_distance
from falsevac.schedules import ModulatedFlip, false_vacuum_protocol

pytestmark = pytest.mark.acceptance


def all_up_rho(N):
    rho = np.zeros((1 << N, 1 << N), dtype=complex)
    rho[0, 0] = 1
    return rho


def test_criterion_01_effective_coefficients(verdict):
    c2 = extract_creation_coefficient(2, 6).value
    c3 = extract_creation_coefficient(3, 8).value
    e2 = abs(c2 + 1) / 1
    e3 = abs(c3 + 81 / 64) / (81 / 64)
    verdict(1, "effective coefficients", e2 < 1e-3 and e3 < 1e-2,
            f"c2={c2:.10f} (rel err {e2:.1e}), c3={c3:.10f} (rel err {e3:.1e})")


def test_criterion_02_effective_vs_full(verdict):
    N = 10
    devs = []
    for hx in (0.08, 0.04, 0.02):
        p = ModelParams(N, 1.0, hx, -2.0)
        ts = np.linspace(0, 5 / hx, 1001)
        full = evolve_static(all_up_state(N), build_full(p), ts, observe=lambda t, s, H: magnetization(s),
                             keep_states=False).records
        eff = evolve_static(all_up_state(N), build_eff_n1(p), ts, observe=lambda t, s, H: magnetization(s),
                            keep_states=False).records
        devs.append(float(np.max(np.abs(np.array(full) - np.array(eff)))))
    ok = devs[0] > devs[1] > devs[2]
    verdict(2, "effective vs full dynamics", ok, "max |dM| at h_x=0.08,0.04,0.02: " +
            ", ".join(f"{d:.3e}" for d in devs))


def test_criterion_03_emergent_blockade(verdict):
    N = 10
    traj = evolve_static(all_up_state(N), build_eff_n1(ModelParams(N, 1.0, 0.05, -2.0)),
                         np.linspace(0, 200, 201), observe=lambda t, s, H: blockade_density(s), keep_states=False)
    qb_eff = max(traj.records)
    N = 12
    traj = evolve_static(all_up_state(N), build_full(ModelParams(N, 1.0, 0.02, -2.0)),
                         np.linspace(0, 100, 201), observe=lambda t, s, H: blockade_density(s), keep_states=False)
    qb_full = max(traj.records)
    verdict(3, "emergent blockade", qb_eff < 1e-12 and qb_full < 5e-3,
            f"max Q_B effective={qb_eff:.1e}, full N=12 to Jt=100={qb_full:.2e}")


def test_criterion_04_pxp_equivalence(verdict):
    worst, dims_ok = 0.0, True
    hx = 0.05
    for N in range(4, 15):
        dims_ok &= len(blockaded_subspace(N)) == lucas_number(N)
        r = to_pxp(build_eff_n1(ModelParams(N, 1.0, hx, -2.0), second_order=False))
        ix = r.subspace.indices
        ref = -hx * pxp_in_bubble_frame(N)[ix][:, ix]
        diff = abs(r.matrix - ref)
        worst = max(worst, diff.max() if diff.nnz else 0.0)
    verdict(4, "PXP equivalence", dims_ok and worst < 1e-14,
            f"N=4..14, Lucas dimensions {'exact' if dims_ok else 'WRONG'}, max entry diff {worst:.1e}")


def _lz_densities(n, ladder, N=10, pause=10.0):
    fam = FullModelFamily(N)
    out = []
    for hx in ladder:
        sched = false_vacuum_protocol(hx, ModulatedFlip(target=-2.0 / n, start=1.0, k=1.0), pause)
        tr = propagate_driven(all_up_state(N), sched, fam, dt=0.02, keep_states=False, record_every=1e9,
                              observe=lambda t, s, H: bubble_density(s, n))
        out.append(tr.records[-1])
    return np.array(out)


def test_criterion_05_landau_zener_exponents(verdict):
    l1 = (0.001, 0.002, 0.004, 0.008, 0.016)
    l2 = (0.005, 0.01, 0.02, 0.04, 0.08)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", FitWarning)
        f1 = lz_exponent_fit(l1, _lz_densities(1, l1))
        f2 = lz_exponent_fit(l2, _lz_densities(2, l2))
    ok = abs(f1.slope - 1.0) <= 0.2 and abs(f2.slope - 2.0) <= 0.2
    verdict(5, "Landau-Zener exponents", ok,
            f"slope n=1 {f1.slope:.3f} (target 1.0), n=2 {f2.slope:.3f} (target 2.0)")


def test_criterion_06_hx_squared_collapse(verdict):
    N = 10
    curves = []
    for hx in (0.01, 0.02, 0.04):
        ts = np.linspace(0, 5 / hx**2, 2001)
        tr = evolve_static(all_up_state(N), build_full(ModelParams(N, 1.0, hx, -1.0)), ts,
                           observe=lambda t, s, H: magnetization(s), keep_states=False)
        curves.append((hx, ts, np.array(tr.records)))
    r = {p: scaling_collapse(curves, p, window=(0.0, 5.0)).residual for p in (1, 2, 3)}
    ok = r[2] * 5 <= r[1] and r[2] * 5 <= r[3]
    verdict(6, "h_x^2 collapse at n=2", ok, f"residual p=1 {r[1]:.4f}, p=2 {r[2]:.4f}, p=3 {r[3]:.4f}")


def test_criterion_07_hz_squared_collapse(verdict):
    cfg = parse_config({
        "kind": "collapse",
        "params": {"N": 10, "h_x": 0.002},
        "options": {"parameter": "h_z", "values": [-0.8, -0.9, -1.0, -1.1, -1.2], "observable": "lambda_2",
                    "flip": {"start": 1.0, "k": 1.0}, "pause": 40.0, "points": 201},
    })
    curves = collapse_curves(cfg)
    ps = np.arange(0.0, 4.01, 0.1)
    best, res = best_exponent(curves, ps)
    verdict(7, "tau_Q ~ h_z^2 collapse", abs(best - 2.0) <= 0.3,
            f"best exponent {best:.2f}, residual at p=2 {res[20]:.3f}, min {np.min(res):.3f}")


def test_criterion_08_resonance_selectivity(verdict):
    weak = resonance_scan(np.round(np.arange(-2.5, -1.5, 0.05), 10), 0.002, 10, duration=200.0)
    l1 = weak.lam_array(1)
    i = int(np.argmax(l1))
    others = max(weak.lam_array(n).max() for n in range(2, 7) if n in weak.lam)
    ok1 = abs(weak.axis[i] + 2.0) <= 0.05 + 1e-9 and others < 1e-3 * l1[i]
    strong = resonance_scan(np.round(np.arange(-1.5, -0.5, 0.05), 10), 0.05, 10, duration=200.0)
    peaks = [r for r in strong.resonances() if r["n"] == 2]
    ok2 = bool(peaks) and abs(peaks[0]["h_z"] + 1.0) <= 0.1 + 1e-9
    where = f"{peaks[0]['h_z']:.2f}" if peaks else "none"
    verdict(8, "resonance selectivity", ok1 and ok2,
            f"lambda_1 peak at {weak.axis[i]:.2f}, max other/peak {others / l1[i]:.1e}; lambda_2 peak at {where}")


def test_criterion_09_tebd_order_and_fidelity(verdict):
    N, T = 6, 1.0
    params = ModelParams(N, 1.0, 0.5, -0.5)
    c = SpinConfig.all_up(N)
    v = np.zeros(1 << N, dtype=complex)
    v[0] = 1
    ref = expm_multiply(-1j * T * open_chain_hamiltonian(params).matrix, v)

    def err(dt):
        s = tebd4_evolve(MpsState.product(c), params, T, MpsConfig(chi=64, dt=dt, cutoff=1e-30)).state.to_dense()
        return np.linalg.norm(s - ref * np.vdot(ref, s) / abs(np.vdot(ref, s)))

    ratio = err(0.1) / err(0.05)

    N = 10
    params = ModelParams(N, 1.0, 0.2, -1.0)
    H = open_chain_hamiltonian(params).matrix
    times = np.arange(0, 20.01, 1.0)
    psi = np.zeros(1 << N, dtype=complex)
    psi[0] = 1
    dense = expm_multiply(-1j * H, psi, start=0, stop=20.0, num=len(times), endpoint=True)
    bits = (np.arange(1 << N)[:, None] >> np.arange(N - 1, -1, -1)) & 1
    z = 1 - 2 * bits.mean(axis=1)
    m_dense = np.abs(dense) ** 2 @ z
    tr = tebd4_evolve(MpsState.product(SpinConfig.all_up(N), discard=0), params, 20.0,
                      MpsConfig(chi=64, dt=0.02, cutoff=1e-14, discard=0), record_every=1.0,
                      observe=lambda t, s: magnetization_mps(s))
    dm = float(np.max(np.abs(np.array(tr.records) - m_dense)))
    verdict(9, "TEBD4 order and fidelity", 12 <= ratio <= 20 and dm < 1e-6,
            f"error ratio {ratio:.2f}, max |dM| vs dense N=10 to Jt=20 {dm:.1e}")


def test_criterion_10_redfield_fixed_points(verdict):
    H = build_full(ModelParams(3, 1.0, 0.05, -1.0))
    d_ground = trace_distance(build_redfield(H, BathSpec(0.15)).steady_state(), ground_projector(H))
    d_gibbs = trace_distance(build_redfield(H, BathSpec(0.15, form="thermal", temperature=0.4)).steady_state(),
                             gibbs_state(H, 0.4))
    verdict(10, "Redfield fixed points", d_ground < 1e-6 and d_gibbs < 1e-6,
            f"trace distance to ground {d_ground:.1e}, to Gibbs(T=0.4) {d_gibbs:.1e}")


def test_criterion_11_open_system_collapse(verdict):
    curves = []
    for hx in (0.01, 0.02, 0.03, 0.04, 0.05):
        tensor = build_redfield(build_full(ModelParams(3, 1.0, hx, -1.0)), BathSpec(0.15, 10.0))
        T = 20 / hx**2
        tr = evolve_master(all_up_rho(3), tensor, T, T / 2000)
        curves.append((hx, tr.times, np.array([magnetization(r) for r in tr.states])))
    r = {p: scaling_collapse(curves, p, window=(0.0, 5.0)).residual for p in (1, 2, 3)}
    ok = r[2] * 3 <= r[1] and r[2] * 3 <= r[3]
    verdict(11, "open-system h_x^2 collapse", ok, f"residual p=1 {r[1]:.4f}, p=2 {r[2]:.4f}, p=3 {r[3]:.4f}")


def test_criterion_12_two_bubble_exchange(verdict):
    N = 14
    times = np.arange(0, 800.01, 0.5)
    res = quench_two_bubble_scenario(N, 5, 6, ModelParams(N, 1.0, 0.02, -1.0), times)
    drift = float(np.max(np.abs(res.down_counts - res.down_counts[0])))
    tb, front = res.block_front(50.0)
    monotone = bool(np.all(np.diff(front) > 0))
    _, blocks = block_average(res.times, res.profiles, 50.0)
    off = 1 - blocks[:, res.separator] / blocks.sum(axis=1)
    spread = bool(np.all(np.diff(off) > 0)) and off[-1] > 1e-2
    verdict(12, "two-bubble exchange", drift < 1e-3 and monotone and spread,
            f"max |d down count| {drift:.3e}, front {front[0]:.4f} -> {front[-1]:.4f} "
            f"({'monotone' if monotone else 'not monotone'}), off-separator weight {off[-1]:.3f}")


def test_criterion_13_conservation(verdict):
    worst_norm = worst_energy = 0.0
    cases = [
        (build_full(ModelParams(10, 1.0, 0.2, -1.0)), all_up_state(10), 50.0),
        (build_full(ModelParams(12, 1.0, 0.02, -2.0)), all_up_state(12), 100.0),
        (build_eff_n1(ModelParams(10, 1.0, 0.05, -2.0)), all_up_state(10), 200.0),
        (build_full(ModelParams(8, 1.0, 0.5, -0.3)), all_up_state(8), 30.0),
    ]
    for H, psi, T in cases:
        e0 = np.vdot(psi, H @ psi).real
        for s in evolve_static(psi, H, np.linspace(0, T, 26)).states:
            worst_norm = max(worst_norm, abs(np.linalg.norm(s) - 1))
            worst_energy = max(worst_energy, abs(np.vdot(s, H @ s).real - e0))
    res = quench_two_bubble_scenario(10, 3, 3, ModelParams(10, 1.0, 0.02, -1.0), np.linspace(0, 100, 26))
    worst_norm = max(worst_norm, float(np.max(np.abs(res.norms - 1))))
    worst_energy = max(worst_energy, float(np.ptp(res.energies)))

    worst_trace = worst_herm = 0.0
    for hx, bath, method, dt in [
        (0.05, BathSpec(0.15), "expm", 1.0),
        (0.3, BathSpec(0.15, form="thermal", temperature=0.4), "expm", 1.0),
        (0.05, BathSpec(0.15), "rk45", 1.0),
        (0.3, BathSpec(0.15, form="paper-literal"), "rk4", 0.01),
    ]:
        tensor = build_redfield(build_full(ModelParams(3, 1.0, hx, -1.0)), bath)
        tr = evolve_master(all_up_rho(3), tensor, 50.0, dt, method=method)
        worst_trace = max(worst_trace, float(np.max(np.abs(tr.trace - 1))))
        worst_herm = max(worst_herm, float(np.max(tr.hermiticity)))
    ok = worst_norm < 1e-10 and worst_energy < 1e-10 and worst_trace < 1e-10 and worst_herm < 1e-12
    verdict(13, "conservation", ok, f"norm {worst_norm:.1e}, energy {worst_energy:.1e}, "
            f"trace {worst_trace:.1e}, hermiticity {worst_herm:.1e}")
