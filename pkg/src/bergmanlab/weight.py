"""Radial metrics on O(m) over the Riemann sphere, written on the line v = ln|z|^2.

A metric is a potential ``u(v) = m*ln(1 + e^v) + chi(v)`` where ``chi`` is a
smooth compactly supported mollifier bump.  Everything downstream works with
per-node samples of ``u`` and its exact derivatives.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np


@dataclass(frozen=True)
class VGrid:
    """Uniform grid on the log-modulus line."""

    v_min: float
    v_max: float
    n_points: int

    def __post_init__(self):
        if not (np.isfinite(self.v_min) and np.isfinite(self.v_max)):
            raise ValueError("grid bounds must be finite")
        if not self.v_min < self.v_max:
            raise ValueError(f"need v_min < v_max, got {self.v_min} >= {self.v_max}")
        if int(self.n_points) != self.n_points or self.n_points < 3:
            raise ValueError(f"n_points must be an integer >= 3, got {self.n_points}")

    @property
    def h(self) -> float:
        return (self.v_max - self.v_min) / (self.n_points - 1)

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(self.v_min, self.v_max, self.n_points)

    def refined(self, factor: int = 2) -> "VGrid":
        """Grid with the same span and ``factor`` times as many cells."""
        return VGrid(self.v_min, self.v_max, (self.n_points - 1) * factor + 1)


DEFAULT_GRID = VGrid(-12.0, 12.0, 4096)


@dataclass(frozen=True)
class GridFn:
    grid: VGrid
    values: np.ndarray = field(compare=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (self.grid.n_points,):
            raise ValueError(
                f"expected {self.grid.n_points} values, got shape {values.shape}"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("grid function has non-finite values")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def v(self) -> np.ndarray:
        return self.grid.nodes

    def __call__(self, v):
        """Piecewise-linear interpolation, clamped at the grid ends."""
        return np.interp(v, self.v, self.values)


@dataclass(frozen=True)
class Bump:
    amplitude: float
    center: float
    halfwidth: float

    def __post_init__(self):
        if not self.halfwidth > 0:
            raise ValueError("bump halfwidth must be positive")

    @property
    def support(self) -> tuple[float, float]:
        return self.center - self.halfwidth, self.center + self.halfwidth


def _bump(b: Bump, v, order: int):
    # chi = A*exp(psi(t)), psi = 1 - 1/(1 - t^2), t = (v - c)/w
    v = np.asarray(v, dtype=float)
    t = (v - b.center) / b.halfwidth
    inside = np.abs(t) < 1.0
    ti = np.where(inside, t, 0.0)
    q = 1.0 - ti * ti
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        e = np.where(inside, np.exp(1.0 - 1.0 / q), 0.0)
        if order == 0:
            out = b.amplitude * e
        elif order == 1:
            out = b.amplitude * e * (-2.0 * ti / q**2) / b.halfwidth
        else:
            d1 = -2.0 * ti / q**2
            d2 = -(2.0 + 6.0 * ti * ti) / q**3
            out = b.amplitude * e * (d1 * d1 + d2) / b.halfwidth**2
    # exp underflows to 0 well before the rational factors overflow
    return np.where(e > 0.0, out, 0.0)


@dataclass(frozen=True)
class Weight:
    """Radial metric ``u(v) = degree_m*ln(1+e^v) + bump(v)``."""

    degree_m: int = 1
    bump: Optional[Bump] = None

    def __post_init__(self):
        if int(self.degree_m) != self.degree_m or self.degree_m < 1:
            raise ValueError(f"degree_m must be a positive integer, got {self.degree_m}")

    @classmethod
    def from_dict(cls, d: dict) -> "Weight":
        bump = d.get("bump")
        if bump is not None:
            bump = Bump(
                float(bump["amplitude"]), float(bump["center"]), float(bump["halfwidth"])
            )
        return cls(int(d["degree_m"]), bump)

    @classmethod
    def from_json(cls, text: str) -> "Weight":
        return cls.from_dict(json.loads(text))

    def to_dict(self) -> dict:
        bump = None
        if self.bump is not None:
            bump = {
                "amplitude": self.bump.amplitude,
                "center": self.bump.center,
                "halfwidth": self.bump.halfwidth,
            }
        return {"degree_m": self.degree_m, "bump": bump}

    def __call__(self, v, order: int = 0):
        return eval_potential(self, v, order)

    def sample(self, grid: VGrid, order: int = 0) -> GridFn:
        return GridFn(grid, eval_potential(self, grid.nodes, order))


def eval_potential(w: Weight, v, order: int = 0):
    """Return ``u``, ``u'`` or ``u''`` at ``v`` (scalar or array)."""
    if order not in (0, 1, 2):
        raise ValueError(f"order must be 0, 1 or 2, got {order}")
    scalar = np.ndim(v) == 0
    v = np.asarray(v, dtype=float)
    m = w.degree_m
    if order == 0:
        out = m * np.logaddexp(0.0, v)
    elif order == 1:
        out = m / (1.0 + np.exp(-v))
    else:
        out = m * fs_density(v)
    if w.bump is not None:
        out = out + _bump(w.bump, v, order)
    return float(out) if scalar else out


def log_fs_density(v):
    """ln g''(v) = v - 2 ln(1 + e^v), stable for large |v|."""
    v = np.asarray(v, dtype=float)
    return v - 2.0 * np.logaddexp(0.0, v)


def fs_density(v):
    """Density of the Fubini-Study area form pushed to the v-line.

    Equal to ``e^v / (1 + e^v)^2``; integrates to one over the real line.
    """
    scalar = np.ndim(v) == 0
    out = np.exp(log_fs_density(v))
    return float(out) if scalar else out


def positive_set(w: Weight, grid: VGrid, eps: float) -> np.ndarray:
    """Nodes where the curvature u'' exceeds ``eps``."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    return eval_potential(w, grid.nodes, 2) > eps


class GridTooNarrowError(ValueError):
    pass


def curvature_mass(w: Weight, grid: VGrid, tol: float = 1e-6) -> float:
    """Total curvature ``u'(v_max) - u'(v_min)``, which should equal degree_m."""
    left = eval_potential(w, grid.v_min, 1)
    right = eval_potential(w, grid.v_max, 1)
    if left >= tol or w.degree_m - right >= tol:
        raise GridTooNarrowError(
            f"end slopes {left:.3g}, {right:.3g} are not within {tol:g} of 0 and "
            f"{w.degree_m}; widen the grid"
        )
    return right - left
