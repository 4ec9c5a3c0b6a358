"""The H^{1/2} interface energy on a bounded interval.

For a piecewise-affine ``u`` on ``[0, L]`` the energy

    E(u) = int_0^L int_0^L |u(x) - u(y)|^2 / |x - y|^2 dx dy

is computed in closed form by first integrating out the kernel: writing
``u(x) - u(y)`` as an integral of ``u'`` gives

    E(u) = int int u'(t) u'(s) k(t, s) dt ds,
    k(t, s) = 2 log( b (L - a) / (L (b - a)) ),  a = min(t, s), b = max(t, s),

and ``k`` integrates to elementary functions over every pair of segments.
An adaptive cubature of the original double integral serves as an
independent check.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import xlogy

from .core import (
    DislocationConfig,
    ModelParams,
    PiecewiseAffine,
    RescaledDisplacement,
    displacement_from_config,
    oscillation,
    validate_config,
)
from .exceptions import DegenerateSegment, TooShort
from .quadrature import adaptive_cells


class Method(str, enum.Enum):
    CLOSED_FORM = "ClosedForm"
    ADAPTIVE_QUADRATURE = "AdaptiveQuadrature"


@dataclass(frozen=True)
class EnergyReport:
    value: float
    method: Method
    abs_error_estimate: float

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "method": self.method.value,
            "abs_error_estimate": self.abs_error_estimate,
        }


# antiderivatives: H1' = log, T2' = z log z, G2'' = log
def _H1(z):
    return xlogy(z, z) - z


def _T2(z):
    return 0.5 * xlogy(z * z, z) - 0.25 * z * z


def _G2(z):
    return 0.5 * xlogy(z * z, z) - 0.75 * z * z


def _dlog(c0, c1, h=None):
    """``int_{c0}^{c1} log s ds`` for ``0 <= c0 <= c1``, without the ``z log z`` cancellation.

    Pass the width ``h`` when it is known more accurately than ``c1 - c0``.
    """
    h = c1 - c0 if h is None else h
    pos = c0 > 0
    tail = np.where(pos, c0 * np.log1p(h / np.where(pos, c0, 1.0)), 0.0)
    return xlogy(h, c1) - h + tail


def _log_pair(a0, a1, c0, c1):
    """``int_{a0}^{a1} int_{c0}^{c1} log(s - t) ds dt`` for ``a1 <= c0`` (broadcasts).

    Centered at the midpoint distance ``M``; far pairs use the even-moment
    series of ``log(M + w)``, near pairs a ``log1p`` form of the corner
    differences.
    """
    ha = a1 - a0
    hc = c1 - c0
    M = 0.5 * (c0 + c1) - 0.5 * (a0 + a1)
    Ms = np.where(M > 0, M, 1.0)
    logM = np.log(Ms)
    e1 = 0.5 * (ha + hc)
    e2 = 0.5 * (hc - ha)

    def q(e):
        z = Ms + e
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(z > 0, z * z * np.log1p(e / Ms), 0.0)

    near = ha * hc * (logM - 1.5) + 0.5 * (q(e1) - q(e2) - q(-e2) + q(-e1))
    # E[x^(2j)] for x uniform on [-h/2, h/2] is (h/2)^(2j) / (2j + 1)
    u = [np.ones_like(ha)]
    v = [np.ones_like(hc)]
    for _ in range(5):
        u.append(u[-1] * (0.25 * ha * ha))
        v.append(v[-1] * (0.25 * hc * hc))
    series = np.zeros_like(near)
    inv = 1.0 / (Ms * Ms)
    invk = np.ones_like(Ms)
    for k in range(1, 6):
        invk = invk * inv
        mom = sum(math.comb(2 * k, 2 * j) / ((2 * j + 1) * (2 * k - 2 * j + 1)) * u[j] * v[k - j]
                  for j in range(k + 1))
        series = series + mom * invk / (2 * k)
    far = ha * hc * (logM - series)
    out = np.where(np.maximum(ha, hc) <= Ms / 16.0, far, near)
    return np.where(M > 0, out, 0.0)


def _disjoint_block(a0, a1, c0, c1, L):
    """``int_{[a0,a1] x [c0,c1]} k`` for intervals with ``a1 <= c0`` (broadcasts)."""
    ha = a1 - a0
    hc = c1 - c0
    log_max = ha * _dlog(c0, c1)
    log_min = hc * _dlog(L - a1, L - a0, ha)
    return 2.0 * (log_max + log_min - ha * hc * math.log(L) - _log_pair(a0, a1, c0, c1))


def _ramp_log(a, h):
    """``int_0^h x log(a + x) dx`` for ``a >= 0``."""
    pos = a > 0
    sa = np.where(pos, a, 1.0)
    r = h / sa
    closed = 0.5 * ((r * r - 1.0) * np.log1p(r) - 0.5 * r * r + r)
    # alternating series of int_0^r y log(1 + y) dy for small r
    rs = np.minimum(r, 0.125)
    series = np.zeros_like(rs)
    for k in range(18, 0, -1):
        series = series + (-1.0) ** (k + 1) * rs ** (k + 2) / (k * (k + 2))
    P = np.where(r <= 0.125, series, closed)
    with_a = 0.5 * h * h * np.log(sa) + sa * sa * P
    return np.where(pos, with_a, _T2(h))


def _diagonal_block(a0, a1, L):
    """``int_{[a0,a1]^2} k``; the log singularity on the diagonal is integrated exactly."""
    h = a1 - a0
    log_max = 2.0 * _ramp_log(a0, h)
    log_min = 2.0 * _ramp_log(L - a1, h)
    log_diff = 2.0 * _G2(h)
    return 2.0 * (log_max + log_min - h * h * math.log(L) - log_diff)


def _check_domain(u: PiecewiseAffine, L: float):
    if L <= 0:
        raise ValueError("interval length must be positive")
    if not (np.isclose(u.breakpoints[0], 0.0) and np.isclose(u.breakpoints[-1], L, rtol=1e-12)):
        raise ValueError(f"u must be defined on [0, {L}]")
    if np.any(np.diff(u.breakpoints) <= 0):
        raise DegenerateSegment("zero-length segment")


def energy_exact(u: PiecewiseAffine, L: float | None = None, block: int = 512) -> EnergyReport:
    """Closed-form H^{1/2} energy of ``u`` on ``[0, L]``."""
    L = u.length if L is None else float(L)
    _check_domain(u, L)
    b = u.breakpoints
    s = u.slopes
    a0, a1 = b[:-1], b[1:]
    diag = _diagonal_block(a0, a1, L)
    terms = [float(np.dot(s * s, diag))]
    n = s.size
    # upper triangle, processed in row blocks to bound memory
    for start in range(0, n, block):
        rows = slice(start, min(start + block, n))
        A0 = a0[rows, None]
        A1 = a1[rows, None]
        M = _disjoint_block(A0, A1, a0[None, :], a1[None, :], L)
        idx = np.arange(rows.start, rows.stop)[:, None]
        mask = np.arange(n)[None, :] > idx
        contrib = np.where(mask, s[rows, None] * s[None, :] * M, 0.0)
        terms.append(2.0 * float(contrib.sum()))
    value = math.fsum(terms)
    # rounding in the corner differences grows like eps * L^2 log L per pair
    scale = float(np.sum(np.abs(s) * (a1 - a0))) ** 2 + 1.0
    err = 64 * np.finfo(float).eps * scale * max(1.0, math.log(L + 1.0)) * n
    return EnergyReport(max(value, 0.0), Method.CLOSED_FORM, float(err))


def _difference_quotient_sq(X, Y, P):
    # P: ax, ux, sx, ay, uy, sy, same, weight
    ax, ux, sx, ay, uy, sy, same, weight = (P[..., k] for k in range(8))
    num = (ux + sx * (X - ax)) - (uy + sy * (Y - ay))
    den = X - Y
    safe = np.where(den == 0.0, 1.0, den)
    q = np.where(same > 0.5, sx, num / safe)
    return weight * q * q


def energy_quadrature(
    u: PiecewiseAffine, L: float | None = None, tol: float = 1e-10, order: int = 8,
    max_cells: int = 400_000,
) -> EnergyReport:
    """Adaptive cubature of the energy, cells aligned with the segments of ``u``.

    Cells touching the diagonal at a corner carry a bounded but non-smooth
    integrand; adaptivity concentrates refinement there.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    L = u.length if L is None else float(L)
    _check_domain(u, L)
    b = u.breakpoints
    v = u.values
    s = u.slopes
    n = s.size
    i, j = np.triu_indices(n)
    cells = np.column_stack((b[i], b[i + 1], b[j], b[j + 1]))
    same = (i == j).astype(float)
    # the integrand is symmetric: off-diagonal cells stand in for their mirror image
    params = np.column_stack((b[i], v[i], s[i], b[j], v[j], s[j], same, 2.0 - same))
    res = adaptive_cells(_difference_quotient_sq, cells, params, tol, order, max_cells)
    return EnergyReport(max(res.value, 0.0), Method.ADAPTIVE_QUADRATURE, float(res.error))


def rescaled_energy(u: PiecewiseAffine, l: float) -> tuple[RescaledDisplacement, float]:
    """Rescaled displacement ``w(x) = u(l x)/sqrt(l)`` and its energy on ``[0, 1]``."""
    w = RescaledDisplacement.from_displacement(u, l)
    return w, energy_exact(w.w, 1.0).value


def oscillation_certificate(u: PiecewiseAffine, L: float, Lam: float | None = None) -> tuple[float, float, bool]:
    """Oscillation bound ``E <= (2 M^2 + 2 Lam^2) L`` for ``L > 1``.

    ``Lam`` must dominate the Lipschitz constant of ``u``; it defaults to that constant.
    """
    if Lam is None:
        Lam = u.lipschitz()
    if L <= 1:
        raise ValueError("the oscillation bound needs L > 1")
    M = oscillation(u)
    C = 2 * M * M + 2 * Lam * Lam
    E = energy_exact(u, L)
    return M, C, bool(E.value <= C * L + E.abs_error_estimate)


def evenly_spaced_config(params: ModelParams) -> DislocationConfig:
    """Periodic array with ``floor(l / gamma)`` cores ending at ``i * gamma``."""
    gamma = params.period
    if params.l <= gamma:
        raise TooShort(f"l={params.l} does not exceed the period {gamma}")
    n = int(math.floor(params.l / gamma))
    centers = [i * gamma - 0.5 * params.delta for i in range(1, n + 1)]
    return validate_config(centers, params)


def energy_of_config(X: DislocationConfig) -> float:
    return energy_exact(displacement_from_config(X), X.params.l).value
