"""
A CNOT gate on chloroform by gradient ascent
============================================

Two heteronuclear spins with shifts 3206.5 Hz and 7787.9 Hz and a 215.1 Hz
coupling are driven by 100 piecewise-constant x/y controls over 5 ms.
"""

import numpy as np

from eetsim.grape import CNOT, SpinSystem, compile_propagator, gate_fidelity, optimize

system = SpinSystem.chloroform()
result = optimize(CNOT, system, L=100, dt=0.05, target_fidelity=0.999, seed=0)

print(f"status {result.status} after {result.iterations} iterations")
for k in (0, 10, 50, len(result.trace) - 1):
    k = min(k, len(result.trace) - 1)
    print(f"  accepted step {k:4d}: F = {result.trace[k]:.5f}")

U = compile_propagator(result.pulse, system)
print(f"final fidelity {gate_fidelity(CNOT, U):.5f}")
print(f"peak control amplitude {np.abs(result.pulse.u).max() / (2 * np.pi):.3f} kHz")
