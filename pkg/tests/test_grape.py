import math

import numpy as np
import pytest
from scipy.linalg import expm
from scipy.stats import unitary_group

from eetsim.grape import (CNOT, ControlPulse, IllConditionedGradient, SpinSystem, compile_propagator,
                          fidelity, gate_fidelity, gradient, optimize)
from eetsim.model import pauli_string_matrix

FREE1 = SpinSystem((0.0,))


def test_zero_pulse_is_free_evolution():
    sys = SpinSystem.chloroform()
    pulse = ControlPulse.zeros(40, 2, 0.05)
    U = compile_propagator(pulse, sys)
    assert np.allclose(U, expm(-1j * sys.hamiltonian().elements * pulse.duration), atol=1e-12)
    assert np.allclose(compile_propagator(ControlPulse.zeros(5, 1, 0.1), FREE1), np.eye(2))


def test_chloroform_hamiltonian_values():
    H = SpinSystem.chloroform().hamiltonian().elements
    w1, w2, J = (2 * math.pi * 1e-3 * x for x in (3206.5, 7787.9, 215.1))
    assert np.allclose(np.diag(H).real, [(w1 + w2) / 2 + J / 4, (w1 - w2) / 2 - J / 4,
                                         (-w1 + w2) / 2 - J / 4, -(w1 + w2) / 2 + J / 4])


def test_half_pi_x_rotation():
    L, dt = 10, 0.1
    u = np.zeros((L, 1, 2))
    u[:, 0, 0] = math.pi / 4 / (L * dt)
    U = compile_propagator(ControlPulse(u, dt), FREE1)
    target = expm(-1j * math.pi / 4 * pauli_string_matrix("X"))
    assert np.allclose(U, target, atol=1e-12)
    assert gate_fidelity(target, U) == pytest.approx(1.0, abs=1e-12)


def test_random_pulse_is_unitary():
    pulse = ControlPulse.random(60, 2, 0.05, seed=3)
    U = compile_propagator(pulse, SpinSystem.chloroform())
    assert np.allclose(U.conj().T @ U, np.eye(4), atol=1e-12)


def test_fidelity_cases():
    assert gate_fidelity(CNOT, np.eye(4)) == pytest.approx(0.5)
    U = unitary_group.rvs(4, random_state=1)
    assert gate_fidelity(U, np.exp(0.7j) * U) == pytest.approx(1.0, abs=1e-12)
    assert 0 <= gate_fidelity(U, unitary_group.rvs(4, random_state=2)) <= 1
    with pytest.raises(ValueError):
        gate_fidelity(np.eye(2), np.eye(4))


def central_difference(pulse, target, sys, h=1e-6):
    g = np.zeros_like(pulse.u)
    for idx in np.ndindex(pulse.u.shape):
        up, dn = pulse.u.copy(), pulse.u.copy()
        up[idx] += h
        dn[idx] -= h
        g[idx] = (fidelity(target, ControlPulse(up, pulse.dt), sys)
                  - fidelity(target, ControlPulse(dn, pulse.dt), sys)) / (2 * h)
    return g


@pytest.mark.parametrize("n", [1, 2])
def test_exact_gradient_matches_finite_differences(n):
    rng = np.random.default_rng(n)
    worst = 0.0
    for _ in range(50):
        shifts = tuple(rng.uniform(-3000, 3000, size=n))
        sys = SpinSystem(shifts, {(0, 1): rng.uniform(50, 300)} if n == 2 else {})
        pulse = ControlPulse.random(8, n, 0.05, seed=int(rng.integers(1 << 30)))
        target = unitary_group.rvs(2**n, random_state=int(rng.integers(1 << 30)))
        g = gradient(pulse, target, sys)
        fd = central_difference(pulse, target, sys)
        worst = max(worst, np.linalg.norm(g - fd) / np.linalg.norm(fd))
    assert worst < 1e-4


def test_first_order_gradient_error_is_linear_in_dt():
    sys = SpinSystem.chloroform()
    target = unitary_group.rvs(4, random_state=5)
    errs = []
    for L in (50, 100, 200):
        dt = 1.0 / L
        # same piecewise-smooth control on every grid
        s = (np.arange(L) + 0.5) / L
        u = np.stack([np.stack([np.sin(2 * np.pi * s + k), np.cos(3 * np.pi * s - k)], axis=-1)
                      for k in range(2)], axis=1) * 2.0
        pulse = ControlPulse(u, dt)
        exact = gradient(pulse, target, sys)
        approx = gradient(pulse, target, sys, method="first_order")
        errs.append(np.linalg.norm(approx - exact) / np.linalg.norm(exact))
    assert errs[0] / errs[1] == pytest.approx(2.0, rel=0.15)
    assert errs[1] / errs[2] == pytest.approx(2.0, rel=0.15)


def test_gradient_vanishes_at_optimum():
    sys = SpinSystem.chloroform()
    pulse = ControlPulse.random(30, 2, 0.05, seed=8)
    target = compile_propagator(pulse, sys) * np.exp(0.3j)
    g, F = gradient(pulse, target, sys, return_fidelity=True)
    assert F == pytest.approx(1.0, abs=1e-12)
    assert np.max(np.abs(g)) < 1e-7


def test_gradient_errors():
    pulse = ControlPulse.zeros(4, 1, 0.1)
    with pytest.raises(IllConditionedGradient):
        gradient(pulse, pauli_string_matrix("X"), FREE1)
    with pytest.raises(ValueError):
        gradient(ControlPulse.random(4, 1, 0.1), np.eye(2), FREE1, method="second_order")
    with pytest.raises(ValueError):
        compile_propagator(pulse, SpinSystem.chloroform())


def test_pulse_validation_and_csv(tmp_path):
    with pytest.raises(ValueError):
        ControlPulse(np.zeros((3, 1)), 0.1)
    with pytest.raises(ValueError):
        ControlPulse(np.full((3, 1, 2), np.nan), 0.1)
    with pytest.raises(ValueError):
        ControlPulse(np.ones((3, 1, 2)), 0.1, amplitude_cap=0.5)
    pulse = ControlPulse.random(7, 2, np.float64(0.05), seed=1)
    path = tmp_path / "pulse.csv"
    pulse.to_csv(path)
    assert path.read_text().splitlines()[0] == "# L=7,dt=0.050000000000000003,n_qubits=2"
    back = ControlPulse.from_csv(path)
    assert np.array_equal(back.u, pulse.u) and back.dt == pulse.dt


def test_optimize_single_qubit_not_gate():
    res = optimize(pauli_string_matrix("X"), SpinSystem((1000.0,)), L=20, dt=0.05, seed=2,
                   target_fidelity=0.9999)
    assert res.status == "target" and res.fidelity >= 0.9999
    assert res.trace[-1] == res.fidelity and np.all(np.diff(res.trace) > 0)
    assert fidelity(pauli_string_matrix("X"), res.pulse, SpinSystem((1000.0,))) == pytest.approx(res.fidelity)


def test_optimize_stops_on_budget():
    res = optimize(CNOT, SpinSystem.chloroform(), L=20, dt=0.05, max_iter=3, seed=0)
    assert res.status == "max_iter" and res.iterations == 3
    with pytest.raises(ValueError):
        optimize(CNOT, SpinSystem.chloroform(), target_fidelity=1.5)
