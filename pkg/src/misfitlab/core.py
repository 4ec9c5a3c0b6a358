"""Model parameters, dislocation configurations and interface displacements.

A configuration is a finite, ordered set of dislocation centers on the
interface ``(0, l)``.  Each center carries a core of width ``delta`` on
which the displacement has slope ``-Lambda``; everywhere else on
``(0, l)`` the slope is ``lambda``.  Cores sticking out of ``(0, l)`` are
truncated.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import (
    DegenerateSegment,
    InvalidParameters,
    OutOfRange,
    SeparationViolation,
)

# absorbs floating point drift when two cores touch exactly
SEPARATION_ATOL = 1e-12


@dataclass(frozen=True)
class ModelParams:
    lam: float
    Lam: float
    delta: float
    l: float

    def __post_init__(self):
        for name in ("lam", "Lam", "delta", "l"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise InvalidParameters(f"{name} must be a positive finite number, got {value!r}")
        if self.Lam < self.lam:
            raise InvalidParameters(
                f"core strain Lambda={self.Lam} must not be smaller than misfit lambda={self.lam}"
            )

    @property
    def period(self) -> float:
        """Spacing of the evenly spaced array, ``(lam + Lam) / lam * delta``."""
        return (self.lam + self.Lam) / self.lam * self.delta

    @property
    def n_star(self) -> float:
        """Predicted dislocations per unit length, ``lam / (delta (lam + Lam))``."""
        return self.lam / (self.delta * (self.lam + self.Lam))

    @property
    def n_star_Lambda(self) -> float:
        """Alternative density constant with ``Lam`` in the numerator."""
        return self.Lam / (self.delta * (self.lam + self.Lam))

    def with_length(self, l: float) -> "ModelParams":
        return ModelParams(self.lam, self.Lam, self.delta, float(l))

    def to_dict(self) -> dict:
        return {"lambda": self.lam, "Lambda": self.Lam, "delta": self.delta, "l": self.l}


@dataclass(frozen=True)
class DislocationConfig:
    centers: tuple[float, ...]
    params: ModelParams

    @property
    def N(self) -> int:
        return len(self.centers)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.centers, dtype=float)

    def to_dict(self) -> dict:
        d = self.params.to_dict()
        d["centers"] = list(self.centers)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "DislocationConfig":
        params = ModelParams(
            float(data["lambda"]), float(data["Lambda"]), float(data["delta"]), float(data["l"])
        )
        return validate_config(data.get("centers", []), params)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "DislocationConfig":
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path) -> "DislocationConfig":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


@dataclass(frozen=True, eq=False)
class PiecewiseAffine:
    """Continuous piecewise-affine function on ``[breakpoints[0], breakpoints[-1]]``."""

    breakpoints: np.ndarray
    slopes: np.ndarray
    value_at_zero: float = 0.0
    _values: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        b = np.array(self.breakpoints, dtype=float)
        s = np.array(self.slopes, dtype=float)
        if b.ndim != 1 or b.size < 2:
            raise ValueError("need at least two breakpoints")
        if s.shape != (b.size - 1,):
            raise ValueError("need exactly one slope per segment")
        if np.any(np.diff(b) <= 0):
            raise DegenerateSegment("breakpoints must be strictly increasing")
        values = np.concatenate(([0.0], np.cumsum(s * np.diff(b)))) + self.value_at_zero
        for arr in (b, s, values):
            arr.setflags(write=False)
        object.__setattr__(self, "breakpoints", b)
        object.__setattr__(self, "slopes", s)
        object.__setattr__(self, "_values", values)

    @classmethod
    def affine(cls, slope: float, length: float, value_at_zero: float = 0.0) -> "PiecewiseAffine":
        return cls(np.array([0.0, length]), np.array([slope]), value_at_zero)

    @property
    def length(self) -> float:
        return float(self.breakpoints[-1] - self.breakpoints[0])

    @property
    def lengths(self) -> np.ndarray:
        return np.diff(self.breakpoints)

    @property
    def values(self) -> np.ndarray:
        """Function values at the breakpoints."""
        return self._values

    def __call__(self, x):
        return np.interp(x, self.breakpoints, self._values)

    def shifted(self, c: float) -> "PiecewiseAffine":
        return PiecewiseAffine(self.breakpoints, self.slopes, self.value_at_zero + c)

    def reflected(self) -> "PiecewiseAffine":
        """``x -> u(L - x)`` on the same domain."""
        b = self.breakpoints
        nb = b[0] + b[-1] - b[::-1]
        return PiecewiseAffine(nb, -self.slopes[::-1], float(self._values[-1]))

    def restrict(self, a: float, b: float) -> "PiecewiseAffine":
        """Restriction to ``[a, b]``, re-based so the domain starts at 0."""
        if not (self.breakpoints[0] <= a < b <= self.breakpoints[-1]):
            raise ValueError(f"[{a}, {b}] is not a subinterval of the domain")
        inner = self.breakpoints[(self.breakpoints > a) & (self.breakpoints < b)]
        nb = np.concatenate(([a], inner, [b]))
        mids = 0.5 * (nb[:-1] + nb[1:])
        idx = np.clip(np.searchsorted(self.breakpoints, mids) - 1, 0, self.slopes.size - 1)
        return PiecewiseAffine(nb - a, self.slopes[idx], float(self(a)))

    def lipschitz(self) -> float:
        return float(np.max(np.abs(self.slopes)))


@dataclass(frozen=True, eq=False)
class RescaledDisplacement:
    """``w(x) = u(l x) / sqrt(l)`` on ``[0, 1]``."""

    w: PiecewiseAffine
    scale: float

    @classmethod
    def from_displacement(cls, u: PiecewiseAffine, l: float) -> "RescaledDisplacement":
        root = math.sqrt(l)
        w = PiecewiseAffine(u.breakpoints / l, u.slopes * root, u.value_at_zero / root)
        return cls(w, float(l))

    def __call__(self, x):
        return self.w(x)


def validate_config(centers, params: ModelParams) -> DislocationConfig:
    """Sort ``centers`` and check admissibility against ``params``."""
    xs = sorted(float(c) for c in centers)
    half = 0.5 * params.delta
    for c in xs:
        if not (-half < c < params.l + half):
            raise OutOfRange(f"center {c} outside ({-half}, {params.l + half})")
    for a, b in zip(xs, xs[1:]):
        if b - a < params.delta - SEPARATION_ATOL:
            raise SeparationViolation(
                f"centers {a} and {b} are {b - a} apart, less than delta={params.delta}"
            )
    return DislocationConfig(tuple(xs), params)


def core_intervals(X: DislocationConfig) -> np.ndarray:
    """Cores truncated to ``[0, l]`` as an ``(N, 2)`` array; empty cores dropped."""
    c = X.as_array()
    half = 0.5 * X.params.delta
    lo = np.clip(c - half, 0.0, X.params.l)
    hi = np.clip(c + half, 0.0, X.params.l)
    keep = hi > lo
    return np.column_stack((lo[keep], hi[keep]))


def displacement_from_config(X: DislocationConfig) -> PiecewiseAffine:
    """Interface displacement induced by ``X``, normalised by ``u(0) = 0``."""
    p = X.params
    cores = core_intervals(X)
    points = np.unique(np.concatenate(([0.0, p.l], cores.ravel())))
    mids = 0.5 * (points[:-1] + points[1:])
    in_core = np.zeros(mids.size, dtype=bool)
    for lo, hi in cores:
        in_core |= (mids > lo) & (mids < hi)
    slopes = np.where(in_core, -p.Lam, p.lam)
    return PiecewiseAffine(points, slopes, 0.0)


def centers_from_displacement(u: PiecewiseAffine, params: ModelParams) -> list[float]:
    """Read dislocation centers back off the ``-Lambda`` segments of ``u``."""
    out = []
    L = u.breakpoints[-1]
    for (a, b), s in zip(zip(u.breakpoints[:-1], u.breakpoints[1:]), u.slopes):
        if not np.isclose(s, -params.Lam):
            continue
        if a <= 0.0 and b - a < params.delta:
            out.append(b - 0.5 * params.delta)
        elif b >= L and b - a < params.delta:
            out.append(a + 0.5 * params.delta)
        else:
            out.append(0.5 * (a + b))
    return out


def oscillation(u: PiecewiseAffine) -> float:
    """``max u - min u``; extrema of a piecewise-affine map sit at breakpoints."""
    v = u.values
    return float(v.max() - v.min())
