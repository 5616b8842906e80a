"""
How fast does the hierarchy grow?
=================================

The number of auxiliary density matrices is a binomial coefficient in the
depth and the number of bath modes.  Stirling-type bounds bracket it.
"""

from eetsim.heom import cost_estimate

for n_sites, k in ((4, 1), (7, 1), (7, 3)):
    print(f"\n{n_sites} sites, {k} exponential(s) per bath")
    print(" depth        count      lower bound      upper bound")
    for depth in (2, 4, 8, 16):
        c = cost_estimate(n_sites, k, depth)
        print(f"{depth:6d} {c.count:12d} {c.stirling_lower:16.4g} {c.stirling_bound:16.4g}")
