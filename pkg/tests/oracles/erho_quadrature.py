"""Brute-force cut-off energy of a step profile on the circle.

Counts jumps in (y, y+z] directly and integrates n^2 / z^2 over
y in (0,1), rho < z < 1/2 with nested adaptive quadrature (the z-integrand
doubled for negative offsets).  Prints JSON for freezing.
"""

import json

import numpy as np
from scipy.integrate import quad


def count(x, y, z):
    ahead = (x - y) % 1.0
    return int(np.sum((ahead > 0) & (ahead <= z)))


def erho(points, rho, lam=1.0):
    x = np.asarray(points, float) % 1.0
    n = x.size

    def inner(z):
        cuts = sorted(set([0.0, 1.0] + list(x) + list((x - z) % 1.0)))
        return sum(count(x, 0.5 * (a + b), z) ** 2 * (b - a) for a, b in zip(cuts, cuts[1:])) / z**2

    offs = sorted({float(d) for d in ((x[:, None] - x[None, :]) % 1.0).ravel() if rho < d < 0.5})
    val, _ = quad(inner, rho, 0.5, points=offs or None, epsabs=1e-13, epsrel=1e-13, limit=500)
    return 2.0 * (lam / n) ** 2 * val


CASES = {
    "N1_rho0.1": ([0.37], 0.1),
    "N2_even_rho0.05": ([0.0, 0.5], 0.05),
    "N2_d0.3_rho0.05": ([0.0, 0.3], 0.05),
    "N3_rho0.05": ([0.05, 0.31, 0.72], 0.05),
}

if __name__ == "__main__":
    print(json.dumps({k: erho(*v) for k, v in CASES.items()}, indent=1))
