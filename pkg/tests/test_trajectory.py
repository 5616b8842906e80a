import math

import numpy as np
import pytest
from scipy.linalg import expm

from eetsim.experiments import load_preset, tetramer_setup
from eetsim.model import HamiltonianMatrix, khz, pauli_string_matrix
from eetsim.spectral import AMPLITUDE, Debye, NoiseProfile, OhmicStep, chi, modulation_profile
from eetsim.trajectory import (EnsembleResult, NoiseMapping, NoiseRealization, PiecewiseHamiltonianSchedule,
                               draw_phases, ensemble_average, fft_period, noise_phase, noise_signal,
                               propagate_trajectory, resolve_mapping, sample_noise, splitmix64,
                               step_coefficients, trajectory_seed, write_audit)

T_NMR = 5e-5


def test_splitmix64_reference_value():
    # first output of the reference generator seeded with 0
    assert splitmix64(0) == 0xE220A8397B1DCDAF
    assert trajectory_seed(1, 0) != trajectory_seed(1, 1) != trajectory_seed(2, 0)


def test_phases_are_deterministic():
    a, b = draw_phases(5, 2, 10), draw_phases(5, 2, 10)
    assert np.array_equal(a, b) and a.shape == (2, 10)
    assert np.all((a >= 0) & (a < 2 * np.pi))
    assert not np.array_equal(a, draw_phases(6, 2, 10))


def test_signal_matches_direct_cosine_sum():
    prof = NoiseProfile(0.3, 4, 0.7, [1.0, 0.5, 0.2, 0.1])
    real = NoiseRealization.draw(prof, 3)
    t = np.linspace(0, 10, 17)
    direct = sum(a * np.cos(w * t + p) for a, w, p in zip(prof.line_amplitudes, prof.omegas, real.phases))
    assert np.allclose(real.signal(t), direct, atol=1e-14)
    assert np.array_equal(sample_noise(prof, 3, t), real.signal(t))


def test_periodogram_recovers_line_amplitudes():
    prof = modulation_profile(OhmicStep(), T_NMR, 0.5, 20)
    N = 128
    t = 2 * np.pi / prof.omega0 * np.arange(N) / N
    beta = sample_noise(prof, 11, t)
    spec = np.abs(np.fft.rfft(beta)) * 2 / N
    assert np.allclose(spec[1:prof.J + 1], prof.line_amplitudes, rtol=1e-10)
    assert np.max(spec[prof.J + 1:]) < 1e-12 * prof.line_amplitudes.max()


@pytest.mark.parametrize("channel", ["dephasing", AMPLITUDE])
def test_fft_phase_matches_direct_sum(channel):
    F = np.linspace(1.0, 0.1, 30)
    prof = NoiseProfile(khz(0.05), 30, 0.3, F, channel=channel)
    dt = 2 * np.pi / prof.omega0 / 200
    assert fft_period(prof, dt) == 200
    phases = draw_phases(2, 3, prof.J)
    fast = noise_phase(prof, phases, dt, 450)
    slow = noise_phase(prof, phases, dt * (1 + 1e-7), 450)  # not commensurate: direct sums
    assert fft_period(prof, dt * (1 + 1e-7)) is None
    amp = prof.alpha * prof.F * (1 if channel == "dephasing" else 1 / prof.omegas)

    def exact(step):
        # analytic integral of the comb on the grid k * step
        arg = np.multiply.outer(step * np.arange(451), prof.omegas)[None] + phases[:, None, :]
        if channel == "dephasing":
            return np.sin(arg) @ amp - (np.sin(phases) @ amp)[:, None]
        return (np.cos(phases) @ amp)[:, None] - np.cos(arg) @ amp

    assert np.allclose(fast, exact(dt), atol=1e-11)
    assert np.allclose(slow, exact(dt * (1 + 1e-7)), atol=1e-11)


def test_step_coefficients_integrate_signal():
    prof = NoiseProfile(1.0, 3, 1.0, [1.0, 0.3, 0.1])
    ph = draw_phases(0, 1, 3)
    dt = 1e-3
    phi = noise_phase(prof, ph, dt, 1000)
    coef = step_coefficients(phi, dt)[0]
    mid = noise_signal(prof, ph[0], dt * (np.arange(1000) + 0.5))
    assert np.allclose(coef, mid, atol=1e-6)


def test_zero_noise_matches_expm():
    h, _, _, _, psi0 = tetramer_setup(load_preset("methods_tetramer"))
    dt, steps = 0.002, 250
    res = propagate_trajectory(PiecewiseHamiltonianSchedule.noiseless(h, dt, steps), psi0, 50)
    for k, tk in enumerate(res.t):
        psi = expm(-1j * h.elements * tk) @ psi0
        assert np.allclose(res.populations[k], np.abs(psi) ** 2, atol=1e-10)


def test_density_matrix_input_matches_vector():
    rng = np.random.default_rng(4)
    h = HamiltonianMatrix(np.diag([1.0, -1.0]) + 0.3 * pauli_string_matrix("X"))
    coef = rng.normal(size=(100, 1))
    sched = PiecewiseHamiltonianSchedule(h, 0.01, [pauli_string_matrix("Z")], coef)
    psi = np.array([0.6, 0.8j])
    a = propagate_trajectory(sched, psi)
    b = propagate_trajectory(sched, np.outer(psi, psi.conj()))
    assert np.allclose(a.populations, b.populations, atol=1e-12)
    assert np.allclose(b.state, np.outer(a.state, a.state.conj()), atol=1e-12)
    with pytest.raises(ValueError):
        propagate_trajectory(sched, np.array([1.0, 1.0]))


def test_norm_preserved_over_long_run():
    h, _, _, _, psi0 = tetramer_setup(load_preset("methods_tetramer"))
    rng = np.random.default_rng(0)
    mp = resolve_mapping("two_qubit", 4)
    coef = khz(2) * rng.normal(size=(100_000, 2))
    # a non-diagonal operator exercises the general eigendecomposition branch too
    ops = np.concatenate([mp.operators, [pauli_string_matrix("XX")]])
    coef = np.concatenate([coef, khz(0.5) * rng.normal(size=(100_000, 1))], axis=1)
    sched = PiecewiseHamiltonianSchedule(h, 0.002, ops, coef)
    res = propagate_trajectory(sched, psi0, record_every=10_000)
    assert np.max(np.abs(res.populations.sum(axis=1) - 1)) <= 1e-10
    assert abs(np.vdot(res.state, res.state).real - 1) <= 1e-10


@pytest.fixture(scope="module")
def short_setup():
    p = load_preset("methods_tetramer")
    p["t_max_ms"] = 0.4
    return tetramer_setup(p)


def test_zero_alpha_reproduces_noiseless(short_setup):
    h, _, prof, t, psi0 = short_setup
    quiet = NoiseProfile(prof.omega0, prof.J, 0.0, prof.F)
    ens = ensemble_average(h, quiet, 3, 0.002, t, psi0, 1)
    for k in (5, 20):
        psi = expm(-1j * h.elements * t[k]) @ psi0
        assert np.allclose(ens.mean[k], np.abs(psi) ** 2, atol=1e-10)
    assert np.max(ens.stderr) < 1e-12


def test_ensemble_is_deterministic_and_thread_invariant(short_setup):
    h, _, prof, t, psi0 = short_setup
    a = ensemble_average(h, prof, 30, 0.002, t, psi0, 9, threads=1, batch_size=7)
    b = ensemble_average(h, prof, 30, 0.002, t, psi0, 9, threads=4, batch_size=7)
    c = ensemble_average(h, prof, 30, 0.002, t, psi0, 10, threads=1, batch_size=7)
    assert np.array_equal(a.mean, b.mean) and np.array_equal(a.stderr, b.stderr)
    assert not np.array_equal(a.mean, c.mean)
    assert np.allclose(a.mean.sum(axis=1), 1, atol=1e-12)


def test_batch_merge_matches_direct_moments(short_setup):
    h, _, prof, t, psi0 = short_setup
    audit = []
    ens = ensemble_average(h, prof, 12, 0.002, t, psi0, 2, batch_size=5, audit=audit)
    # rebuild each trajectory from the audited phases
    assert [s for s, _ in audit] == [trajectory_seed(2, i) for i in range(12)]
    pops = []
    from eetsim.trajectory import _batch_moments
    mp = resolve_mapping("two_qubit", 4)
    record = np.rint(t / 0.002).astype(int)
    for seed, _ in audit:
        _, mean, _ = _batch_moments(h, prof, mp, 0.002, int(record[-1]), record, psi0, [seed], None)
        pops.append(mean)
    pops = np.array(pops)
    assert np.allclose(ens.mean, pops.mean(axis=0), atol=1e-13)
    assert np.allclose(ens.stderr, pops.std(axis=0, ddof=1) / math.sqrt(12), atol=1e-13)


def test_audit_and_csv(tmp_path, short_setup):
    h, _, prof, t, psi0 = short_setup
    audit = []
    ens = ensemble_average(h, prof, 3, 0.002, t, psi0, 4, audit=audit)
    write_audit(tmp_path / "audit.csv", audit)
    rows = (tmp_path / "audit.csv").read_text().splitlines()
    assert len(rows) == 3 * 2 and len(rows[0].split(",")) == 2 + prof.J
    ens.to_csv(tmp_path / "ens.csv")
    back = EnsembleResult.from_csv(tmp_path / "ens.csv")
    assert np.array_equal(back.mean, ens.mean) and np.array_equal(back.stderr, ens.stderr)
    assert (tmp_path / "ens.csv").read_text().splitlines()[0] == "t_ms,P1,P1_se,P2,P2_se,P3,P3_se,P4,P4_se"


def test_ensemble_input_errors(short_setup):
    h, _, prof, t, psi0 = short_setup
    with pytest.raises(ValueError):
        ensemble_average(h, prof, 0, 0.002, t, psi0, 0)
    with pytest.raises(ValueError):
        ensemble_average(h, prof, 2, 0.003, t, psi0, 0)
    with pytest.raises(ValueError):
        ensemble_average(h, prof, 2, 0.002, t, 2 * psi0, 0)
    with pytest.raises(ValueError):
        ensemble_average(h, prof, 2, 0.002, t, psi0, 0, mapping="nope")
    amp = NoiseProfile(prof.omega0, prof.J, prof.alpha, prof.F, channel=AMPLITUDE)
    with pytest.raises(ValueError):
        ensemble_average(h, amp, 2, 0.002, t, psi0, 0)


def test_single_qubit_dephasing_envelope():
    # noise n = (b1 - b2)/2 on X turns <Z> of |0> into cos(2 Phi), whose mean is exp(-2 chi)
    prof = modulation_profile(Debye(khz(0.01), khz(45)), 300 * math.pi / 3e8, khz(0.02), 250)
    t = np.linspace(0, 2.0, 41)
    mp = resolve_mapping("single_qubit", 2)
    on_x = NoiseMapping("single_qubit_x", np.array([pauli_string_matrix("X")]), mp.mix)
    ens = ensemble_average(HamiltonianMatrix(np.zeros((2, 2))), prof, 2000, 0.01, t,
                           np.array([1.0, 0.0]), 3, mapping=on_x)
    z_mean, z_se = 2 * ens.mean[:, 0] - 1, 2 * ens.stderr[:, 0]
    expect = np.exp(-2 * chi(prof, t))
    ok = np.abs(z_mean - expect) <= 3 * z_se
    assert ok[1:].mean() >= 0.95
