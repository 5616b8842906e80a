"""
Ramsey fringes from a classical noise comb
==========================================

A Debye bath at 300 K (after the energy scaling) is replaced by a comb of
random-phase cosines.  The ensemble-averaged fringe is compared with the
closed form, then its envelope is demodulated.
"""

import math

import numpy as np

from eetsim.model import khz
from eetsim.ramsey import RamseyConfig, extract_envelope, ramsey_analytic, ramsey_simulate
from eetsim.spectral import Debye, fit_t2, modulation_profile

# comb lines every 5 Hz up to 25 kHz
profile = modulation_profile(Debye(khz(0.01), khz(45)), 300 * math.pi / 3e8, khz(5e-3), 5000)
print(f"T2 from 2 chi(T2) = 1: {fit_t2(profile):.3f} ms")

t = 0.02 * np.arange(501)
config = RamseyConfig(khz(15), t, profile, dt=0.02, M=500)
sim = ramsey_simulate(config, profile, master_seed=1)
exact = ramsey_analytic(config)

rms = np.sqrt(np.mean((sim.mean - exact) ** 2))
print(f"RMS deviation {rms:.4f}, mean standard error {sim.stderr.mean():.4f}")

print("\n t (ms)   simulated   analytic")
for k in range(0, 501, 50):
    print(f"{t[k]:6.2f}   {sim.mean[k]:9.4f}   {exact[k]:8.4f}")

env = extract_envelope(t, sim.mean, config.omega_L)
print(f"\nexponential fit to the envelope: A = {env.amplitude:.3f}, tau = {env.decay_time:.3f} ms")
