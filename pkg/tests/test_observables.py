import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.sparse.linalg import expm_multiply

from falsevac.effective import blockaded_subspace
from falsevac.hamiltonians import OperatorTerm, build_full, terms_to_matrix
from falsevac.lattice import ModelParams, SpinConfig, bubble_decomposition
from falsevac.observables import (
    NormalizationError,
    ShotSet,
    WindowError,
    blockade_density,
    blockade_density_spin_form,
    bubble_densities,
    bubble_density,
    down_count,
    interface_density,
    magnetization,
    record,
    sample_shots,
    shot_uniforms,
)

configs = st.integers(4, 10).flatmap(
    lambda n: st.lists(st.integers(0, 1), min_size=n, max_size=n).map(lambda b: SpinConfig(tuple(b)))
)


def vec(c):
    v = np.zeros(1 << c.N, dtype=complex)
    v[c.index] = 1
    return v


def evolved(N=8, t=3.0, hx=0.3, hz=-1.0):
    H = build_full(ModelParams(N, 1.0, hx, hz)).matrix
    psi = np.zeros(1 << N, dtype=complex)
    psi[0] = 1
    return expm_multiply(-1j * t * H, psi), H


def test_bubble_density_examples():
    assert all(v == 0 for v in bubble_densities(SpinConfig.all_up(10)).values())
    one = SpinConfig.all_up(10).flip([3])
    assert bubble_density(one, 1) == pytest.approx(0.1)
    assert bubble_density(one, 2) == 0.0
    c = SpinConfig.from_string("↑↓↓↑↓↑↑↑")
    assert bubble_density(c, 2) == pytest.approx(1 / 8)
    assert bubble_density(c, 1) == pytest.approx(1 / 8)
    with pytest.raises(WindowError):
        bubble_density(SpinConfig.all_up(4), 3)


def test_blockade_examples():
    assert blockade_density(SpinConfig.all_up(6)) == 0
    assert blockade_density(SpinConfig.all_down(6)) == 1
    assert blockade_density(SpinConfig.from_string("↑↓↑↓↑↓")) == 0


def test_interface_examples():
    c = SpinConfig.all_up(10).flip([1, 2, 4, 5])
    prof = interface_density(c)
    assert prof[3] == 1 and prof.sum() == 1
    assert not interface_density(SpinConfig.all_up(10)).any()


def _projector_string(N, factors):
    return terms_to_matrix([OperatorTerm(1.0, tuple((j % N, p) for j, p in factors))], N)


def test_dense_observables_match_projector_oracle():
    N = 10
    psi, _ = evolved(N, t=2.0)
    prof = interface_density(psi)
    for j in range(N):
        P = _projector_string(N, [(j - 1, "pd"), (j, "pu"), (j + 1, "pd")])
        assert prof[j] == pytest.approx(np.vdot(psi, P @ psi).real, abs=1e-10)
    for n in (1, 2, 3):
        tot = sum(
            np.vdot(psi, _projector_string(N, [(j, "pu"), *[(j + k, "pd") for k in range(1, n + 1)],
                                               (j + n + 1, "pu")]) @ psi).real
            for j in range(N)
        )
        assert bubble_density(psi, n) == pytest.approx(tot / N, abs=1e-12)


def test_density_matrix_agrees_with_vector():
    psi, _ = evolved(6)
    rho = np.outer(psi, psi.conj())
    assert magnetization(rho) == pytest.approx(magnetization(psi), abs=1e-14)
    assert bubble_densities(rho) == pytest.approx(bubble_densities(psi), abs=1e-14)
    assert down_count(rho) == pytest.approx(down_count(psi), abs=1e-12)


def test_spin_form_identity():
    for t in (0.5, 3.0, 7.0):
        psi, _ = evolved(8, t=t, hx=0.4)
        assert abs(blockade_density(psi) - blockade_density_spin_form(psi)) < 1e-12


def test_blockaded_states_have_zero_qb():
    sub = blockaded_subspace(10)
    rng = np.random.default_rng(1)
    psi = np.zeros(1 << 10, dtype=complex)
    psi[sub.indices] = rng.normal(size=len(sub)) + 1j * rng.normal(size=len(sub))
    psi /= np.linalg.norm(psi)
    assert blockade_density(psi) == 0.0


def test_record_fields():
    psi, H = evolved(6)
    r = record(psi, 1.5, H)
    assert r.time == 1.5 and r.norm == pytest.approx(1.0)
    assert len(r.row()) == len(r.header())
    assert -1 <= r.M <= 1


@settings(max_examples=200, deadline=None)
@given(configs)
def test_classical_sum_rule(c):
    runs = bubble_decomposition(c)
    # a run of N-1 shares one delimiter on both sides and has no window
    if (runs and runs[0].wrapping) or any(r.length > c.N - 2 for r in runs):
        return
    lam = bubble_densities(c, c.N - 2)
    assert sum(n * v * c.N for n, v in lam.items()) == pytest.approx(c.down_count())
    for n, v in lam.items():
        assert 0 <= v <= 1 / (n + 1) + 1e-12


@settings(max_examples=100, deadline=None)
@given(configs, st.integers(1, 9))
def test_observables_rotation_invariant(c, k):
    r = c.rotate(k)
    assert magnetization(r) == magnetization(c)
    assert blockade_density(r) == blockade_density(c)
    assert bubble_densities(r, 2) == bubble_densities(c, 2)
    assert np.array_equal(np.roll(interface_density(c), k), interface_density(r))


def test_basis_state_shots_identical():
    c = SpinConfig.from_string("0110100")
    shots = sample_shots(vec(c), 50, seed=3)
    assert all(s == c for s in shots.configs())


def test_two_state_superposition_frequencies():
    v = np.zeros(4)
    v[0] = v[3] = 1 / np.sqrt(2)
    shots = sample_shots(v, 4000, seed=11)
    idx = shots.indices()
    assert set(idx.tolist()) <= {0, 3}
    f = np.mean(idx == 0)
    assert abs(f - 0.5) < 3 * np.sqrt(0.25 / 4000)


def test_shot_estimates_match_exact():
    psi, _ = evolved(8, t=4.0, hx=0.5)
    shots = sample_shots(psi, 100_000, seed=5)
    for vals, exact in ((shots.bubble_density_values(1), bubble_density(psi, 1)),
                        (shots.magnetization_values(), magnetization(psi)),
                        (shots.blockade_values(), blockade_density(psi))):
        mean, err = shots.estimate(vals)
        assert abs(mean - exact) < 3 * err


def test_estimator_unbiased_over_seeds():
    psi, _ = evolved(6, t=2.0, hx=0.5)
    means = [sample_shots(psi, 500, seed=s).magnetization_values().mean() for s in range(40)]
    se = np.std(means, ddof=1) / np.sqrt(len(means))
    assert abs(np.mean(means) - magnetization(psi)) < 4 * se


def test_shots_reproducible_and_counter_based():
    psi, _ = evolved(6)
    a = sample_shots(psi, 100, seed=9)
    b = sample_shots(psi, 100, seed=9)
    assert np.array_equal(a.samples, b.samples)
    full = shot_uniforms(9, 0, 40)
    assert np.array_equal(full[13:29], shot_uniforms(9, 13, 16))


def test_unnormalised_state_rejected():
    with pytest.raises(NormalizationError):
        sample_shots(np.ones(8), 10, seed=0)


def test_shot_serialisation_roundtrip():
    psi, _ = evolved(7)
    shots = sample_shots(psi, 37, seed=2, schedule_hash="ab" * 32)
    back = ShotSet.from_bytes(shots.to_bytes())
    assert np.array_equal(back.samples, shots.samples)
    assert back.seed == 2 and back.schedule_hash == "ab" * 32
    text = ShotSet.from_text(shots.to_text())
    assert np.array_equal(text.samples, shots.samples)
    with pytest.raises(ValueError):
        ShotSet.from_bytes(b"XXXX" + shots.to_bytes()[4:])
