import numpy as np
import pytest
import scipy.linalg as la

from falsevac.hamiltonians import build_full
from falsevac.lattice import ModelParams
from falsevac.redfield import (
    BathSpec,
    ContractError,
    DegeneracyWarning,
    build_redfield,
    evolve_master,
    frequency_groups,
    gibbs_state,
    ground_projector,
    trace_distance,
)

X = np.array([[0, 1], [1, 0]], dtype=complex)
Z = np.diag([1.0, -1.0]).astype(complex)


def ring3(hx=0.03, hz=-1.0):
    return build_full(ModelParams(3, 1.0, hx, hz))


def random_rho(d, seed):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    rho = A @ A.conj().T
    return rho / np.trace(rho).real


def all_up_rho(N):
    rho = np.zeros((1 << N, 1 << N), dtype=complex)
    rho[0, 0] = 1
    return rho


def test_spectrum_forms():
    w = np.array([-1.0, 0.0, 0.5, 2.0])
    cut = BathSpec(0.1, 10.0).spectrum(w)
    assert cut[0] == 0 and cut[1] == 0
    assert cut[2] == pytest.approx(0.1 * 0.5 * np.exp(-0.05))
    lit = BathSpec(0.1, 10.0, form="paper-literal").spectrum(w)
    assert lit[3] == pytest.approx(0.2 * np.exp(0.2))
    th = BathSpec(0.1, 10.0, form="thermal", temperature=0.3)
    pos, neg = th.spectrum(np.array([0.7])), th.spectrum(np.array([-0.7]))
    assert neg[0] == pytest.approx(np.exp(-0.7 / 0.3) * pos[0])
    assert th.spectrum(np.array([0.0]))[0] == pytest.approx(0.1 * 0.3)
    for bad in (dict(eta=1.0), dict(eta=0.1, omega_c=0.0), dict(eta=0.1, form="x"),
                dict(eta=0.1, form="thermal")):
        with pytest.raises(ValueError):
            BathSpec(**bad)


def test_zero_coupling_is_unitary():
    H = ring3(0.2)
    tensor = build_redfield(H, BathSpec(0.0))
    assert np.all(tensor.R == 0)
    rho0 = all_up_rho(3)
    traj = evolve_master(rho0, tensor, 5.0, 0.5)
    U = la.expm(-1j * 5.0 * H.toarray())
    assert np.max(np.abs(traj.states[-1] - U @ rho0 @ U.conj().T)) < 1e-8


def test_zero_time_returns_initial():
    rho0 = random_rho(8, 1)
    traj = evolve_master(rho0, build_redfield(ring3(), BathSpec(0.1)), 0.0, 0.1)
    assert len(traj.states) == 1
    assert np.allclose(traj.states[0], rho0, atol=1e-13)


def test_two_level_golden_rule_rate():
    hx = 0.5
    H = -hx * X
    bath = BathSpec(0.1)
    tensor = build_redfield(H, bath, operators=[Z], n_sites=1)
    E, V = la.eigh(H)
    excited = np.outer(V[:, 1], V[:, 1].conj())
    traj = evolve_master(excited, tensor, 10.0, 1.0)
    pe = np.array([np.real(V[:, 1].conj() @ r @ V[:, 1]) for r in traj.states])
    rate = bath.spectrum(np.array([2 * hx]))[0]
    assert np.allclose(pe, np.exp(-rate * traj.times), atol=1e-12)
    assert trace_distance(tensor.steady_state(), ground_projector(H)) < 1e-12


def test_generator_preserves_trace_and_hermiticity():
    tensor = build_redfield(ring3(0.04), BathSpec(0.15), secular=False)
    L = tensor.generator()
    d = tensor.dim
    for seed in range(3):
        x = tensor.to_eigenbasis(random_rho(d, seed)).reshape(-1)
        dx = (L @ x).reshape(d, d)
        assert abs(np.trace(dx)) < 1e-12
        assert np.max(np.abs(dx - dx.conj().T)) < 1e-12


@pytest.mark.parametrize("secular", [True, False])
def test_ground_state_fixed_point(secular):
    H = ring3(0.05, -1.0)
    tensor = build_redfield(H, BathSpec(0.15), secular=secular)
    assert trace_distance(tensor.steady_state(), ground_projector(H)) < 1e-6


def test_thermal_fixed_point_is_gibbs():
    H = ring3(0.05, -1.0)
    T = 0.4
    tensor = build_redfield(H, BathSpec(0.15, form="thermal", temperature=T))
    assert trace_distance(tensor.steady_state(), gibbs_state(H, T)) < 1e-6


def test_long_run_relaxes_to_ground_state():
    H = ring3(1.0, -0.3)
    tensor = build_redfield(H, BathSpec(0.15))
    # slowest decaying mode of the generator sets the relaxation time
    ev = la.eigvals(tensor.generator()).real
    rate = np.min(-ev[ev < -1e-10])
    T = 10 / rate
    traj = evolve_master(all_up_rho(3), tensor, T, T / 20)
    dist = [trace_distance(r, ground_projector(H)) for r in traj.states]
    assert dist[-1] < 1e-3
    assert dist[-1] < dist[len(dist) // 2] < dist[0]


def test_linearity():
    tensor = build_redfield(ring3(0.05), BathSpec(0.15))
    r1, r2 = random_rho(8, 4), random_rho(8, 5)
    a = 0.3
    mix = evolve_master(a * r1 + (1 - a) * r2, tensor, 4.0, 1.0).states[-1]
    s1 = evolve_master(r1, tensor, 4.0, 1.0).states[-1]
    s2 = evolve_master(r2, tensor, 4.0, 1.0).states[-1]
    assert np.max(np.abs(mix - (a * s1 + (1 - a) * s2))) < 1e-12


def test_integrators_agree():
    tensor = build_redfield(ring3(0.05), BathSpec(0.15))
    rho0 = all_up_rho(3)
    ref = evolve_master(rho0, tensor, 10.0, 0.5)
    rk45 = evolve_master(rho0, tensor, 10.0, 0.5, method="rk45")
    rk4 = evolve_master(rho0, tensor, 10.0, 0.01, method="rk4")
    assert np.max(np.abs(ref.states[-1] - rk45.states[-1])) < 1e-8
    assert np.max(np.abs(ref.states[-1] - rk4.states[-1])) < 1e-8


def test_trajectory_diagnostics():
    tensor = build_redfield(ring3(0.05), BathSpec(0.15))
    traj = evolve_master(all_up_rho(3), tensor, 200.0, 1.0)
    assert np.max(np.abs(traj.trace - 1)) < 1e-10
    assert traj.hermiticity.max() < 1e-12
    assert traj.min_eigenvalue.min() > -1e-8
    rows = traj.rows()
    assert len(rows[0]) == len(traj.header())


def test_contract_errors():
    tensor = build_redfield(ring3(), BathSpec(0.1))
    with pytest.raises(ContractError):
        evolve_master(2 * all_up_rho(3), tensor, 1.0, 0.1)
    with pytest.raises(ContractError):
        evolve_master(np.diag([1.5, -0.5, 0, 0, 0, 0, 0, 0]).astype(complex), tensor, 1.0, 0.1)
    with pytest.raises(ContractError):
        build_redfield(build_full(ModelParams(7, h_x=0.1)), BathSpec(0.1))


def test_near_degenerate_spectrum_warns_with_grouping():
    H = np.diag([0.0, 1.0, 1.0 + 5e-9, 3.0]).astype(complex)
    H[0, 3] = H[3, 0] = 0.2
    ops = [np.kron(Z, np.eye(2)), np.kron(np.eye(2), Z)]
    with pytest.warns(DegeneracyWarning, match="grouping"):
        build_redfield(H, BathSpec(0.1), operators=ops, n_sites=2)
    groups = frequency_groups(np.array([0.0, 1.0, 1.0 + 1e-12, 3.0]), 1e-9)
    assert groups == [[0], [1, 2], [3]]


def test_unstable_step_raises_integrator_error():
    from falsevac.redfield import IntegratorError

    tensor = build_redfield(ring3(0.5, -1.0), BathSpec(0.15))
    with pytest.raises(IntegratorError):
        evolve_master(random_rho(8, 0), tensor, 500.0, 5.0, method="rk4")
