"""Optimal dislocation configurations on a bounded interface.

The energy of a configuration is evaluated through its cores only.  With
``u' = lam - J 1_cores`` (``J = lam + Lam``) and the kernel ``k`` of
:mod:`misfitlab.halfline`,

    E = lam^2 l^2 - 2 lam J sum_a A_a + J^2 (sum_a D_a + 2 sum_{a<b} B_ab)

with ``A_a = int_{I_a} int_0^l k``, ``D_a = int_{I_a^2} k`` and
``B_ab = int_{I_a x I_b} k``.  Each ``B_ab`` splits into terms depending on
one core only, which sum in O(N), plus ``int int log(s - t)``.  For cores at
least 16 widths apart that last term is a short series in the center
distance, so an evaluation costs one logarithm per far pair and exact
block formulas for the near ones.  The gradient with respect to the centers
comes out of the same decomposition.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import isotonic_regression
from scipy.special import xlogy

from .core import (
    DislocationConfig,
    ModelParams,
    PiecewiseAffine,
    validate_config,
)
from .exceptions import Infeasible, NoConvergence, SlopeTooSteep, TooShort
from .halfline import _diagonal_block, _dlog, _log_pair, energy_exact, evenly_spaced_config

logger = logging.getLogger(__name__)

# keeps boundary centers strictly inside (-delta/2, l + delta/2)
_EDGE_MARGIN = 1e-9
# pairs closer than this many indices are integrated exactly
_NEAR = 16
# series coefficients of the mean of log(M + w), w = sum of two U[-d/2, d/2]
_FAR_K = np.arange(1, 6)
_FAR_C = 2.0 / (2 * _FAR_K * (2 * _FAR_K + 1) * (2 * _FAR_K + 2))
_FAR_DC = 2.0 / ((2 * _FAR_K + 1) * (2 * _FAR_K + 2))


def _ramp_t_log(p, q, L, h=None):
    """``int_p^q t log(L / t) dt`` for ``0 <= p <= q``."""
    h = q - p if h is None else h
    s = q + p
    pos = p > 0
    tail = np.where(pos, p * p * np.log1p(h / np.where(pos, p, 1.0)), 0.0)
    return 0.25 * h * s + 0.5 * h * s * np.log(L / np.where(q > 0, q, 1.0)) - 0.5 * tail


class CoreEnergy:
    """Energy and center-gradient of configurations for fixed parameters."""

    def __init__(self, params: ModelParams):
        self.params = params
        self.jump = params.lam + params.Lam
        self._far_cache: dict = {}
        self._near_cache: dict = {}
        L = params.l
        # cancellation in the per-core sums scales like eps * l^2
        self.noise = 8 * np.finfo(float).eps * (self.jump * L) ** 2 * max(1.0, math.log(L + 1.0))

    def _far_pairs(self, n):
        if n not in self._far_cache:
            self._far_cache = {n: np.triu_indices(n, k=_NEAR)}
        return self._far_cache[n]

    def _near_pairs(self, n, first, last):
        key = (n, first, last)
        if key not in self._near_cache:
            ia, ib = [], []
            for k in range(1, min(_NEAR, n)):
                a = np.arange(n - k)
                ia.append(a)
                ib.append(a + k)
            # only the outermost cores can be truncated
            for i, flag in ((0, first), (n - 1, last)):
                if flag:
                    others = np.arange(n)
                    others = others[np.abs(others - i) >= _NEAR]
                    ia.append(np.minimum(others, i))
                    ib.append(np.maximum(others, i))
            if ia:
                pairs = np.unique(np.concatenate(ia) * n + np.concatenate(ib))
                self._near_cache = {key: (pairs // n, pairs % n)}
            else:
                empty = np.zeros(0, dtype=int)
                self._near_cache = {key: (empty, empty)}
        return self._near_cache[key]

    def _psi0(self, t):
        """``int_0^l k(t, s) ds``."""
        L = self.params.l
        with np.errstate(divide="ignore"):
            return 2.0 * (xlogy(L - t, L / (L - t)) + xlogy(t, L / t))

    def _row(self, t, c0, c1):
        """``int_{c0}^{c1} k(t, s) ds``."""
        L = self.params.l
        logL = math.log(L)
        u0 = np.clip(t, c0, c1)
        w1 = np.clip(t, c0, c1)
        up = (
            _dlog(u0, c1)
            + xlogy(c1 - u0, L - t)
            - (c1 - u0) * logL
            - _dlog(np.maximum(u0 - t, 0.0), np.maximum(c1 - t, 0.0))
        )
        low = (
            xlogy(w1 - c0, t)
            + _dlog(L - w1, L - c0, w1 - c0)
            - (w1 - c0) * logL
            - _dlog(np.maximum(t - w1, 0.0), np.maximum(t - c0, 0.0))
        )
        return 2.0 * (up + low)

    def evaluate(self, x, gradient=True):
        p = self.params
        L = p.l
        lam, J = p.lam, self.jump
        x = np.asarray(x, dtype=float)
        n = x.size
        base = lam * lam * L * L
        if n == 0:
            return (base, np.zeros(0)) if gradient else base
        half = 0.5 * p.delta
        lo = np.clip(x - half, 0.0, L)
        hi = np.clip(x + half, 0.0, L)
        h = hi - lo
        logL = math.log(L)

        A = 2.0 * (_ramp_t_log(lo, hi, L, h) + _ramp_t_log(L - hi, L - lo, L, h))
        D = _diagonal_block(lo, hi, L)
        Lg = _dlog(lo, hi, h)
        Rg = _dlog(L - hi, L - lo, h)
        H = math.fsum(h)
        before = np.cumsum(h) - h
        after = H - before - h
        P = math.fsum(Lg * before)
        Q = math.fsum(Rg * after)
        R = 0.5 * (H * H - math.fsum(h * h))

        # near pairs and pairs touching a truncated core: exact blocks
        clipped = h < p.delta * (1 - 1e-12)
        ea, eb = self._near_pairs(n, bool(clipped[0]), bool(clipped[-1]))
        S_exact = _log_pair(lo[ea], hi[ea], lo[eb], hi[eb])

        # remaining pairs: both cores full width and at least _NEAR indices apart
        i0 = 1 if n and clipped[0] else 0
        i1 = n - 1 if n and clipped[-1] else n
        fa, fb = self._far_pairs(max(i1 - i0, 0))
        fa = fa + i0
        fb = fb + i0
        M = x[fb] - x[fa]
        r2 = (p.delta / M) ** 2
        poly = np.full_like(M, _FAR_C[-1])
        for c in _FAR_C[-2::-1]:
            poly = poly * r2 + c
        poly *= r2
        S_far = p.delta**2 * (np.log(M) - poly)
        # pairwise summation is accurate enough for the far terms
        S = math.fsum(S_exact) + float(np.sum(S_far))

        E = base - 2.0 * lam * J * math.fsum(A) + J * J * (
            math.fsum(D) + 4.0 * (P + Q - R * logL - S)
        )
        if not gradient:
            return E

        # derivatives with respect to the lower and upper core edges
        Lg_after = np.cumsum(Lg[::-1])[::-1] - Lg
        Rg_before = np.cumsum(Rg) - Rg
        dP_hi = Lg_after + xlogy(before, hi)
        dP_lo = -Lg_after - xlogy(before, lo)
        dQ_hi = Rg_before + xlogy(after, L - hi)
        dQ_lo = -Rg_before - xlogy(after, L - lo)
        dR = H - h
        pa, qa, pb, qb = lo[ea], hi[ea], lo[eb], hi[eb]
        ha, hb = h[ea], h[eb]
        dS_lo = np.bincount(ea, -_dlog(pb - pa, qb - pa, hb), n) + np.bincount(eb, -_dlog(pb - qa, pb - pa, ha), n)
        dS_hi = np.bincount(ea, _dlog(pb - qa, qb - qa, hb), n) + np.bincount(eb, _dlog(qb - qa, qb - pa, ha), n)
        psi0_hi = self._psi0(hi)
        psi0_lo = self._psi0(lo)
        g_hi = -2.0 * lam * J * psi0_hi + J * J * (
            2.0 * self._row(hi, lo, hi) + 4.0 * (dP_hi + dQ_hi - dR * logL - dS_hi)
        )
        g_lo = 2.0 * lam * J * psi0_lo + J * J * (
            -2.0 * self._row(lo, lo, hi) + 4.0 * (dP_lo + dQ_lo + dR * logL - dS_lo)
        )
        moves_lo = (x - half > 0.0) & (x - half < L)
        moves_hi = (x + half > 0.0) & (x + half < L)
        g = np.where(moves_hi, g_hi, 0.0) + np.where(moves_lo, g_lo, 0.0)
        # far pairs: S depends on the center distance only
        dpoly = np.full_like(M, _FAR_DC[-1])
        for c in _FAR_DC[-2::-1]:
            dpoly = dpoly * r2 + c
        dF = p.delta**2 * (1.0 + dpoly * r2) / M
        g -= 4.0 * J * J * (np.bincount(fb, dF, n) - np.bincount(fa, dF, n))
        return E, g

    def energy(self, x) -> float:
        return self.evaluate(x, gradient=False)

    def gradient(self, x) -> np.ndarray:
        return self.evaluate(x)[1]

    def energy_and_gradient(self, x):
        return self.evaluate(x)


def center_bounds(params: ModelParams) -> tuple[float, float]:
    m = _EDGE_MARGIN * params.delta
    return -0.5 * params.delta + m, params.l + 0.5 * params.delta - m


def project_ordered(y, delta: float, lo: float, hi: float) -> np.ndarray:
    """Euclidean projection onto ``{lo <= x_1, x_{i+1} - x_i >= delta, x_N <= hi}``.

    Shifting by ``(i - 1) delta`` turns the polytope into monotone vectors in a
    box, whose projection is the clipped isotonic regression.
    """
    y = np.asarray(y, dtype=float)
    n = y.size
    if n == 0:
        return y.copy()
    shift = delta * np.arange(n)
    z = isotonic_regression(y - shift).x
    z = np.clip(z, lo, hi - (n - 1) * delta)
    x = z + shift
    # guard against rounding in the shift
    x[0] = max(x[0], lo)
    x[1:] = np.maximum(x[1:], x[:-1] + delta)
    return x


@dataclass
class SolverOptions:
    restarts: int = 16
    seed: int = 0
    gtol: float = 1e-8
    max_iter: int = 10_000
    window: int = 2
    perturbation: float = 0.25  # in units of delta
    memory: int = 8  # quasi-Newton pairs; 0 gives plain spectral projected gradient
    record_history: bool = False


@dataclass
class SolverResult:
    x: np.ndarray
    energy: float
    iterations: int
    pg_norm: float
    converged: bool
    history: list = field(default_factory=list)


def _two_loop(g, pairs, gamma):
    """L-BFGS product ``H g`` from the stored ``(s, y, 1 / y.s)`` pairs."""
    q = g.copy()
    alphas = []
    for s, y, rho in reversed(pairs):
        a = rho * float(np.dot(s, q))
        alphas.append(a)
        q -= a * y
    q *= gamma
    for (s, y, rho), a in zip(pairs, reversed(alphas)):
        b = rho * float(np.dot(y, q))
        q += (a - b) * s
    return q


def spg_minimize(evaluate, x0, project, gtol=1e-8, max_iter=10_000, noise=0.0, memory=8,
                 record_history=False):
    """Monotone projected descent with Armijo backtracking.

    ``evaluate(x)`` returns ``(E, grad)``.  The trial direction is the
    projection of a limited-memory quasi-Newton step (``memory`` pairs); if
    that is not a descent direction, or ``memory == 0``, the spectral
    projected gradient step ``P(x - alpha g) - x`` with Barzilai-Borwein
    ``alpha`` is used instead.  Both keep the iterate feasible.

    Stops when the projected gradient ``P(x - g) - x`` has Euclidean norm at
    most ``gtol * max(1, |E|)``.  Energies closer than ``noise`` are treated
    as equal; inside that band a step is accepted when the slope along it
    has flattened as much as the Armijo condition demands (the approximate
    Wolfe test of Hager and Zhang).  Accepted steps never raise the energy
    by more than ``noise``.
    """
    c1 = 1e-4
    x = project(np.asarray(x0, dtype=float))
    E, g = evaluate(x)
    history = [E] if record_history else []
    pg = project(x - g) - x
    pgn = float(np.linalg.norm(pg))
    alpha = 1.0 / max(float(np.max(np.abs(pg), initial=0.0)), 1e-12)
    pairs: list = []
    gamma = alpha
    it = 0
    while it < max_iter:
        if pgn <= gtol * max(1.0, abs(E)):
            return SolverResult(x, E, it, pgn, True, history)
        d = None
        if memory and pairs:
            d = project(x - _two_loop(g, pairs, gamma)) - x
            gd = float(np.dot(g, d))
            if not gd < 0:
                d = None
        if d is None:
            d = project(x - alpha * g) - x
            gd = float(np.dot(g, d))
            if not gd < 0:
                break
        t = 1.0
        while True:
            xn = x + t * d
            En, gn = evaluate(xn)
            if En <= E + c1 * t * gd:
                break
            if En <= E + noise and float(np.dot(gn, d)) <= (2 * c1 - 1) * gd:
                break
            # safeguarded quadratic interpolation
            curv = En - E - t * gd
            t_new = -gd * t * t / (2 * curv) if curv > 0 else 0.5 * t
            t = min(max(t_new, 0.1 * t), 0.5 * t)
            if t < 1e-14:
                xn = None
                break
        if xn is None:
            break
        assert En <= E + noise, "energy increased beyond round-off"
        s = xn - x
        yv = gn - g
        sy = float(np.dot(s, yv))
        if sy > 1e-12 * float(np.dot(s, s)) ** 0.5 * float(np.dot(yv, yv)) ** 0.5:
            alpha = min(max(float(np.dot(s, s)) / sy, 1e-12), 1e12)
            gamma = sy / float(np.dot(yv, yv))
            if memory:
                pairs.append((s, yv, 1.0 / sy))
                if len(pairs) > memory:
                    pairs.pop(0)
        x, E, g = xn, En, gn
        if record_history:
            history.append(E)
        pg = project(x - g) - x
        pgn = float(np.linalg.norm(pg))
        it += 1
    converged = pgn <= gtol * max(1.0, abs(E))
    result = SolverResult(x, E, it, pgn, converged, history)
    if not converged and it >= max_iter:
        raise NoConvergence(f"projected gradient norm {pgn:.3e} after {it} iterations", result)
    return result


def _check_feasible(N: int, params: ModelParams):
    if N < 0:
        raise ValueError("N must be non-negative")
    if N * params.delta >= params.l + params.delta:
        raise Infeasible(f"{N} cores of width {params.delta} do not fit in l={params.l}")


def spread_centers(N: int, params: ModelParams) -> np.ndarray:
    return (np.arange(N) + 0.5) * params.l / N if N else np.zeros(0)


def random_centers(N: int, params: ModelParams, rng: np.random.Generator) -> np.ndarray:
    """Uniform sample from the polytope of admissible ordered centers."""
    lo, hi = center_bounds(params)
    span = hi - lo - (N - 1) * params.delta
    z = np.sort(rng.uniform(0.0, span, N))
    return lo + z + params.delta * np.arange(N)


def minimize_positions(
    N: int, params: ModelParams, opts: SolverOptions | None = None, x0=None
) -> tuple[DislocationConfig, float]:
    """Local minimiser of the energy over ``N`` ordered, separated centers."""
    opts = opts or SolverOptions()
    _check_feasible(N, params)
    model = CoreEnergy(params)
    if N == 0:
        return validate_config([], params), model.energy(np.zeros(0))
    res = _local_solve(model, N, params, opts, spread_centers(N, params) if x0 is None else x0)
    return _to_config(res.x, params), res.energy


def _local_solve(model, N, params, opts, x0) -> SolverResult:
    lo, hi = center_bounds(params)

    def proj(y):
        return project_ordered(y, params.delta, lo, hi)

    return spg_minimize(
        model.evaluate, x0, proj, opts.gtol, opts.max_iter, model.noise, opts.memory,
        opts.record_history,
    )


def _to_config(x, params):
    lo, hi = center_bounds(params)
    return validate_config(np.clip(x, lo, hi), params)


@dataclass
class ClEstimate:
    l: float
    N_star: int
    centers_star: list
    c_l: float
    restarts: int
    solver_tol: float
    params: ModelParams | None = None
    energies_by_N: dict = field(default_factory=dict)

    def config(self) -> DislocationConfig:
        return validate_config(self.centers_star, self.params)

    def to_dict(self) -> dict:
        d = {
            "l": self.l,
            "N_star": self.N_star,
            "centers_star": list(self.centers_star),
            "c_l": self.c_l,
            "restarts": self.restarts,
            "solver_tol": self.solver_tol,
            "energies_by_N": {str(k): v for k, v in sorted(self.energies_by_N.items())},
        }
        if self.params is not None:
            d.update(self.params.to_dict())
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ClEstimate":
        params = ModelParams(float(d["lambda"]), float(d["Lambda"]), float(d["delta"]), float(d["l"]))
        return cls(
            l=float(d["l"]),
            N_star=int(d["N_star"]),
            centers_star=[float(c) for c in d["centers_star"]],
            c_l=float(d["c_l"]),
            restarts=int(d["restarts"]),
            solver_tol=float(d["solver_tol"]),
            params=params,
            energies_by_N={int(k): float(v) for k, v in d.get("energies_by_N", {}).items()},
        )


def _best_for_N(model, N, params, opts, rng):
    """Multistart local search at fixed ``N``; returns (energy, centers)."""
    if N == 0:
        return model.energy(np.zeros(0)), np.zeros(0)
    best = None
    try:
        even = evenly_spaced_config(params)
        even_x = even.as_array() if even.N == N else None
    except TooShort:
        even_x = None
    # uniform random starts converge slowly and rarely win once N is large,
    # so only a share of the budget goes to them
    n_random = max(1, opts.restarts // 8)
    for k in range(max(1, opts.restarts)):
        if k == 0:
            x0 = spread_centers(N, params)
        elif k == 1 and even_x is not None:
            x0 = even_x
        elif n_random > 0 or best is None:
            x0 = random_centers(N, params, rng)
            n_random -= 1
        else:
            x0 = best[1] + rng.normal(0.0, opts.perturbation * params.delta, N)
        try:
            res = _local_solve(model, N, params, opts, x0)
        except NoConvergence as exc:
            res = exc.args[1]
            logger.warning("N=%d restart %d stopped at the iteration cap (|pg|=%.2e)", N, k, res.pg_norm)
        if best is None or res.energy < best[0]:
            best = (res.energy, res.x)
    return best


def estimate_cl(params: ModelParams, opts: SolverOptions | None = None) -> ClEstimate:
    """Minimal energy per unit length, searching ``N`` around ``n* l``."""
    opts = opts or SolverOptions()
    rng = np.random.default_rng(opts.seed)
    model = CoreEnergy(params)
    n_max = int(math.floor((params.l + params.delta) / params.delta - 1e-12))
    while n_max * params.delta >= params.l + params.delta:
        n_max -= 1
    n0 = int(round(params.n_star * params.l))
    lo_n = max(0, n0 - opts.window)
    hi_n = min(n_max, n0 + opts.window)
    results: dict[int, tuple[float, np.ndarray]] = {}

    def scan(ns):
        for N in ns:
            if N not in results:
                results[N] = _best_for_N(model, N, params, opts, rng)

    scan(range(lo_n, hi_n + 1))
    # the empty configuration is always a competitor
    scan([0])
    while True:
        energies = {N: r[0] for N, r in results.items()}
        best_N = min(energies, key=lambda N: (energies[N], N))
        grown = False
        if best_N == hi_n and hi_n < n_max:
            hi_n += 1
            scan([hi_n])
            grown = True
        if best_N == lo_n and lo_n > 0:
            lo_n -= 1
            scan([lo_n])
            grown = True
        if not grown:
            break
    E_best, x_best = results[best_N]
    X = _to_config(x_best, params)
    solver_tol = max(opts.gtol * max(1.0, abs(E_best)), 1e-12 * abs(E_best)) / params.l
    return ClEstimate(
        l=params.l,
        N_star=best_N,
        centers_star=list(X.centers),
        c_l=E_best / params.l,
        restarts=opts.restarts,
        solver_tol=solver_tol,
        params=params,
        energies_by_N={N: r[0] for N, r in sorted(results.items())},
    )


def subadditivity_check(h: float, l: float, params: ModelParams, opts: SolverOptions | None = None,
                        estimates: dict | None = None) -> bool:
    """``c_h <= l / (l - r) c_l`` with ``r = l - h floor(l / h)``.

    ``estimates`` may map lengths to precomputed :class:`ClEstimate` objects.
    """
    if not 0 < h < l:
        raise ValueError("need 0 < h < l")
    estimates = {} if estimates is None else estimates
    for length in (h, l):
        if length not in estimates:
            estimates[length] = estimate_cl(params.with_length(length), opts)
    ch, cl = estimates[h], estimates[l]
    r = l - h * math.floor(l / h)
    if r < 1e-12 * l:
        r = 0.0
    factor = l / (l - r)
    slack = 2.0 * (ch.solver_tol + cl.solver_tol)
    return bool(ch.c_l <= factor * cl.c_l + slack)


@dataclass
class DensityHistogram:
    bin_edges: list
    counts: list
    normalized_density: list

    def to_rows(self):
        edges = self.bin_edges
        return [
            (0.5 * (edges[i] + edges[i + 1]), self.counts[i], self.normalized_density[i])
            for i in range(len(self.counts))
        ]


def dislocation_density(X: DislocationConfig, bins: int, window=(0.0, 1.0)) -> DensityHistogram:
    """Histogram of ``x_i / l``; densities are dislocations per unit physical length."""
    if bins < 1:
        raise ValueError("bins must be at least 1")
    a, b = window
    edges = np.linspace(a, b, bins + 1)
    counts, _ = np.histogram(X.as_array() / X.params.l, bins=edges)
    width = (b - a) / bins
    dens = counts / (X.params.l * width)
    return DensityHistogram(edges.tolist(), counts.astype(int).tolist(), dens.tolist())


def split_energy_diagnostic(u: PiecewiseAffine, l: float, x_split: float) -> float:
    """Cross energy between ``(0, x_split)`` and ``(x_split, l)``, divided by ``l``."""
    if not 0 <= x_split <= l:
        raise ValueError("x_split must lie in [0, l]")
    if x_split <= 0 or x_split >= l:
        return 0.0
    whole = energy_exact(u, l).value
    left = energy_exact(u.restrict(0.0, x_split)).value
    right = energy_exact(u.restrict(x_split, l)).value
    return 0.5 * (whole - left - right) / l


def recovery_spacings(w: PiecewiseAffine, l: float, params: ModelParams) -> np.ndarray:
    """Prescribed gap between inserted points on each affine piece of ``w``."""
    alpha = w.slopes
    if np.any(alpha == 0):
        raise ValueError("the target needs non-zero slopes on every piece")
    root = math.sqrt(l)
    return np.where(alpha > 0, params.lam * params.delta / (alpha * root),
                    params.Lam * params.delta / (-alpha * root))


def plug_points(w: PiecewiseAffine, l: float, params: ModelParams, base_centers,
                exclusion: float | None = None) -> np.ndarray:
    """Insertion points in ``(0, 1)`` at the prescribed spacing, kept off the existing cores.

    A target point falling within ``exclusion`` (rescaled units) of a
    rescaled base center is moved to the nearest end of the excluded zone.
    """
    if exclusion is None:
        exclusion = 0.5 * params.delta / l
    sigma = recovery_spacings(w, l, params)
    if np.any(sigma * l < params.delta):
        raise SlopeTooSteep(
            f"required spacing {sigma.min() * l:.3g} is below the core width {params.delta}; use a larger l"
        )
    xi = np.sort(np.asarray(base_centers, dtype=float) / l)
    # merged excluded zones
    zones = []
    for c in xi:
        a, b = c - exclusion, c + exclusion
        if zones and a <= zones[-1][1]:
            zones[-1][1] = max(zones[-1][1], b)
        else:
            zones.append([a, b])
    zlo = np.array([z[0] for z in zones])
    zhi = np.array([z[1] for z in zones])
    pts = []
    b = w.breakpoints
    for j in range(w.slopes.size):
        t = b[j] + 0.5 * sigma[j]
        while t < b[j + 1]:
            pts.append(t)
            t += sigma[j]
    pts = np.array(pts)
    if zones and pts.size:
        k = np.searchsorted(zlo, pts, side="right") - 1
        inside = (k >= 0) & (pts > zlo[np.maximum(k, 0)]) & (pts < zhi[np.maximum(k, 0)])
        kk = np.maximum(k, 0)
        to_lo = pts - zlo[kk] <= zhi[kk] - pts
        moved = np.where(to_lo, zlo[kk], zhi[kk])
        pts = np.where(inside, moved, pts)
    pts = pts[(pts > 0) & (pts < 1)]
    return np.sort(pts)


def build_recovery_sequence(
    w: PiecewiseAffine,
    l: float,
    params: ModelParams,
    base: DislocationConfig | None = None,
    exclusion: float | None = None,
    opts: SolverOptions | None = None,
) -> DislocationConfig:
    """Admissible configuration at scale ``l`` whose rescaled displacement tracks ``w``.

    The base minimiser is stretched by inserting an interval of physical
    length ``delta`` at every plugged point: where ``w`` increases the
    inserted interval is elastic (slope ``lam``), where it decreases it is a
    new core (slope ``-Lam``).  The stretched map is then cut back to
    ``(0, l)``.
    """
    p = params.with_length(l)
    if base is None:
        base = estimate_cl(p, opts).config()
    base_x = base.as_array()
    pts = plug_points(w, l, p, base_x, exclusion)
    seg = np.clip(np.searchsorted(w.breakpoints, pts, side="right") - 1, 0, w.slopes.size - 1)
    decreasing = w.slopes[seg] < 0
    phys = pts * l
    # number of insertions strictly left of a physical position
    shift_base = p.delta * np.searchsorted(phys, base_x, side="left")
    centers = list(base_x + shift_base)
    before = np.arange(phys.size)
    new_cores = phys + p.delta * before + 0.5 * p.delta
    centers.extend(new_cores[decreasing].tolist())
    half = 0.5 * p.delta
    centers = sorted(c for c in centers if -half + _EDGE_MARGIN * p.delta < c < l + half - _EDGE_MARGIN * p.delta)
    return validate_config(centers, p)


def recovery_energy(X: DislocationConfig) -> float:
    """Rescaled energy ``E(u_X) / l`` of a recovery configuration."""
    return CoreEnergy(X.params).energy(X.as_array()) / X.params.l


def sweep_cl(params: ModelParams, lengths, opts: SolverOptions | None = None):
    """``estimate_cl`` over several lengths; returns ``(estimate, runtime)`` pairs."""
    out = []
    for l in lengths:
        t0 = time.perf_counter()
        est = estimate_cl(params.with_length(float(l)), opts)
        out.append((est, time.perf_counter() - t0))
    return out
