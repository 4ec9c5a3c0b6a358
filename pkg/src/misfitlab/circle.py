"""Periodic dislocation model on the unit circle.

Dislocations sit at ``N`` points of ``[0, 1)``.  With the core width sent
to zero the displacement minus the misfit ramp becomes a step profile
``h_X`` that drops by ``lam / N`` at every point.  Its full interface energy
diverges, so the energy is cut off at distance ``rho``; the cut-off energy
differs from a closed pair sum by a constant, and the pair sum is minimised
exactly by evenly spaced points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.optimize import brentq, isotonic_regression

from .core import PiecewiseAffine
from .exceptions import (
    BadK,
    BudgetExceeded,
    CoincidentPoints,
    CutoffTooLarge,
    CutoffViolation,
    InvalidParameters,
    NoConvergence,
    OnBoundary,
    SeparationViolation,
)

# distances within this of rho count as sitting on the constraint
BOUNDARY_ATOL = 1e-12


def circ_dist(x, y):
    """Distance on the circle ``R / Z``; broadcasts."""
    t = np.abs(np.asarray(x, dtype=float) - np.asarray(y, dtype=float)) % 1.0
    d = np.minimum(t, 1.0 - t)
    return float(d) if np.ndim(d) == 0 else d


def pair_distances(points) -> np.ndarray:
    """Circular distances of all unordered pairs ``i < j``."""
    x = np.asarray(points, dtype=float)
    i, j = np.triu_indices(x.size, k=1)
    return circ_dist(x[i], x[j])


@dataclass(frozen=True)
class CircleConfig:
    points: tuple
    rho: float
    lam: float = 1.0

    def __post_init__(self):
        pts = tuple(sorted(float(p) % 1.0 for p in self.points))
        object.__setattr__(self, "points", pts)
        n = len(pts)
        if not (math.isfinite(self.lam) and self.lam > 0):
            raise InvalidParameters("lambda must be positive")
        if n == 0:
            raise InvalidParameters("need at least one point")
        if not 0 < self.rho < 1.0 / n:
            raise InvalidParameters(f"rho={self.rho} must lie in (0, 1/N) = (0, {1.0 / n})")
        if n > 1:
            d = pair_distances(pts).min()
            if d < self.rho - BOUNDARY_ATOL:
                raise SeparationViolation(f"points are {d} apart, closer than rho={self.rho}")

    @property
    def N(self) -> int:
        return len(self.points)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.points, dtype=float)

    def rotated(self, c: float) -> "CircleConfig":
        return CircleConfig(tuple(p + c for p in self.points), self.rho, self.lam)

    def to_dict(self) -> dict:
        return {"points": list(self.points), "rho": self.rho, "lambda": self.lam, "N": self.N}

    @classmethod
    def from_dict(cls, d: dict) -> "CircleConfig":
        return cls(tuple(d["points"]), float(d["rho"]), float(d.get("lambda", 1.0)))


def evenly_spaced(N: int, rho: float, lam: float = 1.0, offset: float = 0.0) -> CircleConfig:
    return CircleConfig(tuple(offset + k / N for k in range(N)), rho, lam)


def f_pair(d):
    """``-log d + 2 d`` on ``(0, 1/2]``, mirrored about ``1/2`` on ``(0, 1)``."""
    d = np.asarray(d, dtype=float)
    m = np.minimum(d, 1.0 - d)
    out = -np.log(m) + 2.0 * m
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------- pair energy


def _energy_tilde(x) -> float:
    d = pair_distances(x)
    if d.size and d.min() <= 0:
        raise CoincidentPoints("two points coincide")
    # ordered pairs count every unordered pair twice
    return 4.0 * math.fsum(-np.log(d) + 2.0 * d)


def energy_tilde(X: CircleConfig) -> float:
    """``2 sum_{i != j} f(d_ij)`` over ordered pairs."""
    return _energy_tilde(X.as_array())


def _gradient_tilde(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    out = np.zeros(x.size)
    for i in range(x.size):
        total = 0.0
        for j in range(x.size):
            if i == j:
                continue
            # y - x_i reduced to the window (-1/2, 1/2]
            r = -((x[i] - x[j] + 0.5) % 1.0 - 0.5)
            if r < 0:
                total += (-1.0 - 2.0 * r) / -r
            elif r > 0:
                total += (1.0 - 2.0 * r) / r
            else:
                raise CoincidentPoints("two points coincide")
        out[i] = 4.0 * total
    return out


def gradient_tilde(X: CircleConfig) -> np.ndarray:
    """First variation of :func:`energy_tilde`, summed over the window around each point."""
    x = X.as_array()
    if X.N > 1:
        d = pair_distances(x)
        if np.any(np.abs(d - X.rho) <= BOUNDARY_ATOL):
            raise OnBoundary("a pair sits at distance rho; only one-sided variations exist")
    return _gradient_tilde(x)


def gk_decomposition(X: CircleConfig, k: int) -> tuple[float, list]:
    """Energy of the pairs ``k`` steps apart in circular order, and their arc lengths."""
    n = X.N
    if not (isinstance(k, (int, np.integer)) and 1 <= k <= n - 1):
        raise BadK(f"k must be an integer in [1, {n - 1}], got {k!r}")
    x = X.as_array()
    i = np.arange(n)
    j = i + k
    d = np.where(j < n, x[j % n] - x[i], 1.0 - (x[i] - x[j % n]))
    return math.fsum(f_pair(d)), d.tolist()


# --------------------------------------------------------- cut-off energy


def _overlap_square(x, z):
    """``int_0^1 n(y, z)^2 dy`` with ``n`` the number of points in ``(y, y + z]``."""
    # n is constant between the points x_k and x_k - z
    cuts = np.unique(np.concatenate(([0.0, 1.0], x % 1.0, (x - z) % 1.0)))
    mids = 0.5 * (cuts[:-1] + cuts[1:])
    ahead = (x[None, :] - mids[:, None]) % 1.0
    n = np.sum((ahead > 0) & (ahead <= z), axis=1)
    return float(np.dot(n * n, np.diff(cuts)))


def energy_Erho(X: CircleConfig) -> float:
    """Cut-off energy of the step profile ``h_X``, integrated exactly.

    For fixed ``z`` the jump count in ``(y, y + z]`` is piecewise constant
    in ``y``; its mean square ``g(z)`` is affine in ``z`` between the
    pairwise offsets, so each piece of ``int g(z) / z^2`` is elementary.
    Negative offsets give the same integral.
    """
    x = X.as_array()
    n = X.N
    if n > 1 and pair_distances(x).min() < X.rho - BOUNDARY_ATOL:
        raise CutoffTooLarge(f"rho={X.rho} exceeds the smallest pair distance")
    offs = ((x[None, :] - x[:, None]) % 1.0).ravel()
    knots = np.unique(np.concatenate(([X.rho, 0.5], offs[(offs > X.rho) & (offs < 0.5)])))
    total = []
    for za, zb in zip(knots[:-1], knots[1:]):
        if zb - za <= 0:
            continue
        z1 = za + (zb - za) / 3.0
        z2 = za + 2.0 * (zb - za) / 3.0
        g1, g2 = _overlap_square(x, z1), _overlap_square(x, z2)
        B = (g2 - g1) / (z2 - z1)
        A = g1 - B * z1
        total.append(A * (1.0 / za - 1.0 / zb) + B * math.log(zb / za))
    return 2.0 * (X.lam / n) ** 2 * math.fsum(total)


def erho_offset(N: int, rho: float) -> float:
    """``E_rho / (lam/N)^2 - energy_tilde``, the same for every admissible configuration."""
    return 2.0 * N * math.log(1.0 / (2.0 * rho)) - 2.0 * N * (N - 1) * (1.0 + math.log(2.0))


def constancy_check(X1: CircleConfig, X2: CircleConfig) -> float:
    """Difference of ``E_rho / (lam/N)^2 - energy_tilde`` between two configurations."""
    if (X1.N, X1.rho, X1.lam) != (X2.N, X2.rho, X2.lam):
        raise InvalidParameters("configurations must share N, rho and lambda")
    s1 = (X1.lam / X1.N) ** 2
    s2 = (X2.lam / X2.N) ** 2
    return (energy_Erho(X1) / s1 - energy_tilde(X1)) - (energy_Erho(X2) / s2 - energy_tilde(X2))


# ---------------------------------------------------------------- minimiser


def _project_circle(y, rho):
    """Projection onto sorted coordinates with all circular gaps at least ``rho``."""
    n = y.size
    shift = rho * np.arange(n)
    w = y - shift
    s = isotonic_regression(w).x
    c = 1.0 - n * rho
    if s[-1] - s[0] <= c:
        return s + shift

    def dphi(t):
        lo = s < t
        hi = s > t + c
        return np.sum(t - w[lo]) + np.sum(t + c - w[hi])

    a = float(np.min(w)) - c - 1.0
    b = float(np.max(w)) + 1.0
    t = brentq(dphi, a, b, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    return np.clip(s, t, t + c) + shift


def max_gap_error(X: CircleConfig) -> float:
    x = X.as_array()
    gaps = np.diff(np.concatenate((x, [x[0] + 1.0])))
    return float(np.max(np.abs(gaps - 1.0 / X.N)))


@dataclass
class CircleRun:
    config: CircleConfig
    energy: float
    start_energy: float
    iterations: int


def minimize_circle(N: int, rho: float, seed=0, lam: float = 1.0, x0=None, gtol: float = 1e-11,
                    max_iter: int = 10_000) -> CircleRun:
    """Projected descent of :func:`energy_tilde` from a random admissible start.

    The rotation mode is removed from every gradient, so steps keep the
    mean of the points fixed.
    """
    from .interval_opt import spg_minimize

    if not (isinstance(N, (int, np.integer)) and N >= 1):
        raise InvalidParameters("N must be a positive integer")
    if not 0 < rho < 1.0 / N:
        raise InvalidParameters(f"rho must lie in (0, 1/N), got {rho}")
    rng = np.random.default_rng(seed)
    if x0 is None:
        gaps = rho + (1.0 - N * rho) * rng.dirichlet(np.ones(N))
        x0 = rng.uniform() + np.concatenate(([0.0], np.cumsum(gaps[:-1])))
    else:
        x0 = np.sort(np.asarray(x0, dtype=float) % 1.0)
    if N == 1:
        X = CircleConfig((float(x0[0]),), rho, lam)
        return CircleRun(X, 0.0, 0.0, 0)

    def evaluate(z, gradient=True):
        E = _energy_tilde(z)
        if not gradient:
            return E
        g = _gradient_tilde(z)
        return E, g - g.mean()

    start = _energy_tilde(x0)
    res = spg_minimize(evaluate, x0, lambda y: _project_circle(y, rho), gtol=gtol,
                       max_iter=max_iter, noise=64 * np.finfo(float).eps * max(1.0, start))
    if not res.converged:
        raise NoConvergence(f"descent stalled with projected gradient {res.pg_norm:.3e}", res)
    X = CircleConfig(tuple(res.x), rho, lam)
    return CircleRun(X, res.energy, start, res.iterations)


def even_energy(N: int) -> float:
    """``energy_tilde`` of ``N`` evenly spaced points."""
    return 2.0 * math.fsum(N * f_pair(k / N) for k in range(1, N))


# ----------------------------------------------------- finite core width


def core_width(N: int, lam: float, Lam: float) -> float:
    """Core width that makes a displacement with ``N`` cores periodic."""
    return lam / (N * (lam + Lam))


@dataclass(frozen=True, eq=False)
class PeriodicDisplacement:
    """``v`` on ``[0, 1]`` with slope ``-Lam`` on ``N`` arcs of width ``delta`` and ``lam`` elsewhere."""

    centers: tuple
    lam: float
    Lam: float

    def __post_init__(self):
        c = tuple(sorted(float(p) % 1.0 for p in self.centers))
        object.__setattr__(self, "centers", c)
        if not (self.lam > 0 and self.Lam >= self.lam):
            raise InvalidParameters("need 0 < lambda <= Lambda")
        n = len(c)
        if n == 0:
            raise InvalidParameters("need at least one core")
        if n > 1 and pair_distances(c).min() < self.delta - BOUNDARY_ATOL:
            raise SeparationViolation("cores overlap")

    @property
    def N(self) -> int:
        return len(self.centers)

    @property
    def delta(self) -> float:
        return core_width(self.N, self.lam, self.Lam)

    def core_arcs(self) -> np.ndarray:
        """Core intervals inside ``[0, 1]``; an arc through 0 is split in two."""
        half = 0.5 * self.delta
        out = []
        for c in self.centers:
            a, b = c - half, c + half
            if a < 0:
                out += [(0.0, b), (a + 1.0, 1.0)]
            elif b > 1:
                out += [(a, 1.0), (0.0, b - 1.0)]
            else:
                out.append((a, b))
        out = [(a, b) for a, b in out if b > a]
        return np.array(sorted(out))

    def as_piecewise(self) -> PiecewiseAffine:
        arcs = self.core_arcs()
        pts = np.unique(np.concatenate(([0.0, 1.0], arcs.ravel())))
        mids = 0.5 * (pts[:-1] + pts[1:])
        inside = np.zeros(mids.size, dtype=bool)
        for a, b in arcs:
            inside |= (mids > a) & (mids < b)
        return PiecewiseAffine(pts, np.where(inside, -self.Lam, self.lam), 0.0)

    def h(self) -> PiecewiseAffine:
        """``v - lam * t`` on ``[0, 1]``."""
        v = self.as_piecewise()
        return PiecewiseAffine(v.breakpoints, v.slopes - self.lam, v.value_at_zero)


class _Periodized:
    """Extension of ``h`` on ``[0, 1]`` to the line by ``h(t + 1) = h(t) + step``."""

    def __init__(self, h: PiecewiseAffine):
        self.h = h
        self.step = float(h.values[-1] - h.values[0])

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        k = np.floor(t)
        return self.h(t - k) + self.step * k

    def kinks(self, a, b):
        base = self.h.breakpoints
        lo, hi = math.floor(a) - 1, math.ceil(b) + 1
        allk = (base[None, :] + np.arange(lo, hi + 1)[:, None]).ravel()
        return np.unique(allk[(allk > a) & (allk < b)])


def bv_norm(h: PiecewiseAffine) -> float:
    """``int |h| + total variation`` on the domain of ``h``."""
    b = h.breakpoints
    v = h.values
    total = []
    for x0, x1, y0, y1 in zip(b[:-1], b[1:], v[:-1], v[1:]):
        if y0 * y1 >= 0:
            total.append(0.5 * (abs(y0) + abs(y1)) * (x1 - x0))
        else:
            # the segment crosses zero
            total.append(0.5 * (y0 * y0 + y1 * y1) / abs(y1 - y0) * (x1 - x0))
    return math.fsum(total) + float(np.sum(np.abs(h.slopes) * np.diff(b)))


def _quad(fun, a, b, points, tol, what):
    pts = np.unique([p for p in points if a < p < b])
    # break points closer than rounding leave slivers quad cannot subdivide
    pts = pts[np.concatenate(([True], np.diff(pts) > 1e-12 * (b - a)))].tolist() if pts.size else []
    out = integrate.quad(fun, a, b, points=pts or None, epsabs=tol, epsrel=0.0, limit=400,
                         full_output=1)
    if len(out) == 4 and "roundoff" not in out[3]:
        raise BudgetExceeded(f"{what}: {out[3].strip().splitlines()[0]}")
    return out[0]


def _strip_row(H: _Periodized, y: float, z0: float, z1: float) -> float:
    """``int_{z0}^{z1} (H(y + z) - H(y))^2 / z^2 dz`` for ``0 < z0 < z1``, exactly.

    ``H`` is affine between kinks, so every piece integrates to logs and
    reciprocals.
    """
    hy = float(H(y))
    cuts = np.concatenate(([z0], H.kinks(y + z0, y + z1) - y, [z1]))
    total = []
    for za, zb in zip(cuts[:-1], cuts[1:]):
        if zb <= za:
            continue
        ha, hb = float(H(y + za)) - hy, float(H(y + zb)) - hy
        slope = (hb - ha) / (zb - za)
        a = ha - slope * za  # numerator a + slope z
        total.append(a * a * (1 / za - 1 / zb) + 2 * a * slope * math.log(zb / za) + slope * slope * (zb - za))
    return math.fsum(total)


def cutoff_energy(h: PiecewiseAffine, rho: float, tol: float = 1e-10) -> float:
    """``int_0^1 int_{rho < |z| < 1/2} (h(y + z) - h(y))^2 / z^2 dz dy`` for the periodized ``h``.

    The inner integral is exact; the outer one is adaptive quadrature split
    at the kinks of the inner integrand.
    """
    H = _Periodized(h)
    ref = _Periodized(h.reflected())

    def row(y):
        # negative offsets of h are positive offsets of the reflection
        return _strip_row(H, y, rho, 0.5) + _strip_row(ref, 1.0 - y, rho, 0.5)

    kinks = h.breakpoints
    pts = np.concatenate([(kinks + s) % 1.0 for s in (0.0, rho, -rho, 0.5, -0.5)])
    return _quad(row, 0.0, 1.0, np.unique(pts), tol, "cut-off energy")


def periodic_energy_identity(v: PeriodicDisplacement, quad_tol: float = 1e-6) -> tuple[float, float]:
    """Both sides of the change of variables ``v -> h = v - lam t`` on the circle.

    ``lhs`` integrates ``|v(x) - v(y)|^2 / d(x, y)^2`` over the square with
    the circular distance; ``rhs`` integrates ``|h(y + z) - h(y)|^2 / z^2``
    over ``[0, 1] x (-1/2, 1/2)`` and subtracts ``lam^2``.  Both are nested
    adaptive quadratures with absolute tolerance ``quad_tol``.
    """
    if quad_tol <= 0:
        raise ValueError("quad_tol must be positive")
    vp = v.as_piecewise()
    H = _Periodized(v.h())
    kinks = vp.breakpoints
    inner_tol = 0.25 * quad_tol
    outer_tol = 0.5 * quad_tol

    def lhs_inner(y):
        vy = float(vp(y))

        def fun(x):
            d = circ_dist(x, y)
            if d == 0.0:
                return 0.0
            return (float(vp(x)) - vy) ** 2 / (d * d)

        pts = np.unique(np.concatenate((kinks, [y, (y + 0.5) % 1.0])))
        return _quad(fun, 0.0, 1.0, pts, inner_tol, "identity lhs")

    def rhs_inner(y):
        hy = float(H(y))

        def fun(z):
            if z == 0.0:
                return 0.0
            return (float(H(y + z)) - hy) ** 2 / (z * z)

        pts = np.concatenate((H.kinks(y - 0.5, y + 0.5) - y, [0.0]))
        return _quad(fun, -0.5, 0.5, pts, inner_tol, "identity rhs")

    outer_pts = np.unique(np.concatenate([(kinks + s) % 1.0 for s in (0.0, 0.5)]))
    lhs = _quad(lhs_inner, 0.0, 1.0, outer_pts, outer_tol, "identity lhs")
    rhs = _quad(rhs_inner, 0.0, 1.0, outer_pts, outer_tol, "identity rhs") - v.lam**2
    return lhs, rhs


@dataclass
class LimitPoint:
    Lambda: float
    delta: float
    value: float
    gap: float


def lambda_limit_table(X: CircleConfig, Lambda_list, tol: float = 1e-10) -> list:
    """Cut-off energy of the finite-core profile against the step-profile limit."""
    target = energy_Erho(X)
    rows = []
    for Lam in Lambda_list:
        delta = core_width(X.N, X.lam, float(Lam))
        if X.rho <= 0.5 * delta:
            raise CutoffViolation(f"rho={X.rho} must exceed delta/2={0.5 * delta} for Lambda={Lam}")
        v = PeriodicDisplacement(X.points, X.lam, float(Lam))
        value = cutoff_energy(v.h(), X.rho, tol)
        rows.append(LimitPoint(float(Lam), delta, value, abs(value - target)))
    return rows


def lambda_limit_convergence(X: CircleConfig, Lambda_list, tol: float = 1e-10) -> list:
    """``|E^Lam_rho(h^Lam) - E_rho(h_X)|`` for each ``Lam``."""
    return [r.gap for r in lambda_limit_table(X, Lambda_list, tol)]
