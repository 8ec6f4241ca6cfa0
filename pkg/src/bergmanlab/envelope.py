"""Equilibrium potentials as slope-constrained convex minorants.

The equilibrium potential of ``u`` is the largest convex function lying below
``u`` whose slopes stay inside a window ``[s_lo, s_hi]``.  It is computed as a
double Legendre transform, with the dual domain clipped to the window.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .weight import GridFn, VGrid, Weight, eval_potential

CONVEXITY_TOL = 1e-6


class InvalidWindowError(ValueError):
    pass


class ConvexityError(ValueError):
    pass


@dataclass(frozen=True)
class SlopeWindow:
    s_lo: float
    s_hi: float

    def __post_init__(self):
        if not self.s_lo < self.s_hi:
            raise InvalidWindowError(f"need s_lo < s_hi, got [{self.s_lo}, {self.s_hi}]")
        if self.s_lo < 0:
            raise InvalidWindowError(f"s_lo must be >= 0, got {self.s_lo}")

    @property
    def width(self) -> float:
        return self.s_hi - self.s_lo

    def check(self, weight: Weight) -> None:
        if self.s_hi > weight.degree_m:
            raise InvalidWindowError(
                f"s_hi={self.s_hi} exceeds degree_m={weight.degree_m}"
            )

    @classmethod
    def full(cls, weight: Weight) -> "SlopeWindow":
        return cls(0.0, float(weight.degree_m))


@dataclass(frozen=True)
class EnvelopeResult:
    u: GridFn
    u_e: GridFn
    contact_mask: np.ndarray
    dual: GridFn
    slope_fn: GridFn
    window: SlopeWindow

    @property
    def grid(self) -> VGrid:
        return self.u.grid

    def gap(self) -> np.ndarray:
        """u - u_e per node."""
        return self.u.values - self.u_e.values

    def free_boundary(self) -> list[float]:
        return free_boundary(self.contact_mask, self.grid)

    def to_csv(self, path) -> None:
        from ._io import write_csv

        meas = equilibrium_measure(self)
        write_csv(
            path,
            ["v", "u", "u_e", "contact", "slope", "ma_density"],
            [
                self.u.v,
                self.u.values,
                self.u_e.values,
                self.contact_mask.astype(int),
                self.slope_fn.values,
                meas.density.values,
            ],
        )


def lower_hull(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Indices of the vertices of the lower convex hull of points sorted by x.

    One pass keeping a stack of vertices whose edge slopes increase; a new
    point pops every vertex whose incoming slope is not below the slope to it.
    """
    xs = x.tolist()
    ys = y.tolist()
    stack = [0]
    slopes: list[float] = []
    for i in range(1, len(xs)):
        while slopes:
            j = stack[-1]
            if (ys[i] - ys[j]) / (xs[i] - xs[j]) > slopes[-1]:
                break
            stack.pop()
            slopes.pop()
        j = stack[-1]
        slopes.append((ys[i] - ys[j]) / (xs[i] - xs[j]))
        stack.append(i)
    return np.array(stack)


def _conjugate(x: np.ndarray, y: np.ndarray, s: np.ndarray) -> np.ndarray:
    """max_i (s*x_i - y_i) for every s, via the hull of (x, y) and a slope merge."""
    hull = lower_hull(x, y)
    hx, hy = x[hull], y[hull]
    edge = np.diff(hy) / np.diff(hx)
    # vertex k is optimal for edge[k-1] <= s <= edge[k]
    k = np.searchsorted(edge, s, side="left")
    return s * hx[k] - hy[k]


def legendre_transform(f: GridFn, slope_grid: VGrid) -> GridFn:
    """Discrete convex conjugate ``f*(s) = max_v (s*v - f(v))`` on ``slope_grid``.

    Exact for the sampled data: hull of the graph followed by a linear merge
    against the sorted slopes.
    """
    s = slope_grid.nodes
    return GridFn(slope_grid, _conjugate(f.v, f.values, s))


def _hull_breakpoints(v: np.ndarray, u: np.ndarray, window: SlopeWindow) -> np.ndarray:
    hull = lower_hull(v, u)
    edge = np.diff(u[hull]) / np.diff(v[hull])
    inner = edge[(edge > window.s_lo) & (edge < window.s_hi)]
    return np.unique(np.concatenate([[window.s_lo], inner, [window.s_hi]]))


def constrained_envelope(
    u: GridFn, window: SlopeWindow, n_slopes: int = 1025
) -> EnvelopeResult:
    """Largest convex minorant of ``u`` with slopes in ``window``.

    ``u_e = (u* restricted to [s_lo, s_hi])*``.  The restricted conjugate is
    piecewise linear with kinks at the hull edge slopes, so transforming back
    from those kinks (plus the window ends) reproduces the discrete envelope
    exactly.  ``dual`` samples the conjugate on ``n_slopes`` uniform slopes.
    """
    if not window.s_lo < window.s_hi:
        raise InvalidWindowError(f"need s_lo < s_hi, got {window}")
    v, vals = u.v, u.values
    s = _hull_breakpoints(v, vals, window)
    ustar = _conjugate(v, vals, s)
    ue = _conjugate(s, ustar, v)
    u_e = GridFn(u.grid, ue)
    tol = 1e-9 * (1.0 + np.abs(vals))
    mask = (vals - ue) <= tol
    dual = legendre_transform(u, VGrid(window.s_lo, window.s_hi, n_slopes))
    return EnvelopeResult(u, u_e, mask, dual, _forward_slopes(u_e), window)


def envelope_oracle(u: GridFn, window: SlopeWindow) -> GridFn:
    """Brute-force check of :func:`constrained_envelope`.

    Builds the lower hull of the data points plus two far points that stand in
    for rays of slope ``s_lo`` (leftwards) and ``s_hi`` (rightwards), using
    Andrew's monotone chain, then reads the hull off at the nodes.
    """
    if not window.s_lo < window.s_hi:
        raise InvalidWindowError(f"need s_lo < s_hi, got {window}")
    v = u.v
    y = u.values
    reach = v[-1] - v[0]
    x_left = v[0] - reach
    x_right = v[-1] + reach
    # lowest line of slope s through a data point, evaluated at the far ends
    y_left = np.min(y - window.s_lo * v) + window.s_lo * x_left
    y_right = np.min(y - window.s_hi * v) + window.s_hi * x_right
    px = [x_left] + v.tolist() + [x_right]
    py = [y_left] + y.tolist() + [y_right]

    hx: list[float] = []
    hy: list[float] = []
    for x0, y0 in zip(px, py):
        while len(hx) >= 2:
            cross = (hx[-1] - hx[-2]) * (y0 - hy[-2]) - (hy[-1] - hy[-2]) * (x0 - hx[-2])
            if cross > 0:
                break
            hx.pop()
            hy.pop()
        hx.append(x0)
        hy.append(y0)
    return GridFn(u.grid, np.interp(v, hx, hy))


def contact_set(u: GridFn, u_e: GridFn, tol: float) -> np.ndarray:
    if u.grid != u_e.grid:
        raise ValueError(f"grid mismatch: {u.grid} vs {u_e.grid}")
    if not tol > 0:
        raise ValueError("tol must be positive")
    return (u.values - u_e.values) <= tol


def free_boundary(mask: np.ndarray, grid: VGrid) -> list[float]:
    """Midpoints between neighbouring nodes on opposite sides of the contact set."""
    flips = np.flatnonzero(mask[1:] != mask[:-1])
    v = grid.nodes
    return [0.5 * (v[i] + v[i + 1]) for i in flips]


def _forward_slopes(f: GridFn) -> GridFn:
    d = np.diff(f.values) / f.grid.h
    return GridFn(f.grid, np.append(d, d[-1]))


def second_difference(f: GridFn) -> np.ndarray:
    """Interior second difference quotients, length n_points - 2."""
    y = f.values
    return (y[2:] - 2.0 * y[1:-1] + y[:-2]) / f.grid.h**2


@dataclass(frozen=True)
class EquilibriumMeasure:
    """Density of (u_e)'' on the grid plus the mass escaping past each end.

    The atoms carry the slope left over between the grid ends and the window
    ends, so the total always equals the window width.
    """

    density: GridFn
    left_atom: float
    right_atom: float

    @property
    def interior_mass(self) -> float:
        return float(self.density.values[1:-1].sum() * self.density.grid.h)

    @property
    def total_mass(self) -> float:
        return self.interior_mass + self.left_atom + self.right_atom

    def mass_on(self, mask: np.ndarray) -> float:
        """Interior density mass on the masked nodes (atoms excluded)."""
        m = mask.copy()
        m[0] = m[-1] = False
        return float(self.density.values[m].sum() * self.density.grid.h)


def equilibrium_measure(res: EnvelopeResult) -> EquilibriumMeasure:
    d2 = second_difference(res.u_e)
    if d2.min() < -CONVEXITY_TOL:
        i = int(np.argmin(d2)) + 1
        raise ConvexityError(
            f"second difference {d2.min():.3e} at v={res.grid.nodes[i]:.6g}"
        )
    d2 = np.maximum(d2, 0.0)
    density = np.concatenate([[d2[0]], d2, [d2[-1]]])
    h = res.grid.h
    y = res.u_e.values
    first = (y[1] - y[0]) / h
    last = (y[-1] - y[-2]) / h
    return EquilibriumMeasure(
        GridFn(res.grid, density),
        left_atom=first - res.window.s_lo,
        right_atom=res.window.s_hi - last,
    )


def slope_jump(res: EnvelopeResult) -> float:
    """Largest change of the slope function across a contact-set edge."""
    flips = np.flatnonzero(res.contact_mask[1:] != res.contact_mask[:-1])
    if len(flips) == 0:
        return 0.0
    s = res.slope_fn.values
    return float(np.max(np.abs(s[flips + 1] - s[flips])))


def c11_probe(
    weight: Weight, window: SlopeWindow, grids: Sequence[VGrid]
) -> list[dict]:
    """Second-difference and slope-jump diagnostics of u_e on each grid.

    Bounded second differences under refinement point to a Lipschitz first
    derivative; a vanishing slope jump at the free boundary means u_e meets
    u with matching slope.
    """
    rows = []
    for grid in grids:
        res = constrained_envelope(weight.sample(grid), window)
        rows.append(
            {
                "n_points": grid.n_points,
                "h": grid.h,
                "max_second_diff": float(np.max(np.abs(second_difference(res.u_e)))),
                "slope_jump": slope_jump(res),
                "sup_u2": float(np.max(eval_potential(weight, grid.nodes, 2))),
            }
        )
    return rows
