"""Weighted polynomial section spaces and their Bergman kernels.

Sections of O(m)^k are polynomials of degree <= m*k.  For a radial weight the
monomials z^j are orthogonal, so everything reduces to the squared norms

    c_j^2 = integral of exp(j*v - k*u(v)) * g''(v) dv,

kept in log scale because they span hundreds of orders of magnitude.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np
from scipy.integrate import simpson
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

from .envelope import SlopeWindow, second_difference
from .weight import GridFn, VGrid, Weight, eval_potential, log_fs_density

# integrand must drop ~40 decimal digits below its peak at both grid ends
ENDPOINT_DROP = 92.0
QUAD_GRID = VGrid(-120.0, 120.0, 2**15 + 1)
GRAM_MAX_K = 40


class TruncationError(ValueError):
    pass


class ToleranceError(AssertionError):
    pass


class GramConditioningError(np.linalg.LinAlgError):
    def __init__(self, condition: float, msg: str = ""):
        self.condition = condition
        super().__init__(msg or f"Gram matrix numerically singular (condition ~ {condition:.3e})")


@dataclass(frozen=True)
class SectionSpace:
    """Span of z^j for j_lo <= j <= j_hi inside H^0(O(m)^k)."""

    k: int
    j_lo: int
    j_hi: int
    weight: Weight

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 0:
            raise ValueError(f"k must be a non-negative integer, got {self.k}")
        if not 0 <= self.j_lo <= self.j_hi <= self.weight.degree_m * self.k:
            raise ValueError(
                f"index window [{self.j_lo}, {self.j_hi}] outside [0, {self.weight.degree_m * self.k}]"
            )

    @property
    def dim(self) -> int:
        return self.j_hi - self.j_lo + 1

    @property
    def indices(self) -> np.ndarray:
        return np.arange(self.j_lo, self.j_hi + 1)

    @classmethod
    def full(cls, weight: Weight, k: int) -> "SectionSpace":
        return cls(k, 0, weight.degree_m * k, weight)

    @classmethod
    def vanishing_at_zero(cls, weight: Weight, k: int, order: Optional[int] = None):
        """Sections vanishing to order ``order`` (default k) at z = 0."""
        order = k if order is None else order
        return cls(k, order, weight.degree_m * k, weight)

    @classmethod
    def vanishing_at_infinity(cls, weight: Weight, k: int, order: Optional[int] = None):
        """Sections vanishing to order ``order`` (default k) at z = infinity.

        z^j vanishes there to order m*k - j.
        """
        order = k if order is None else order
        return cls(k, 0, weight.degree_m * k - order, weight)

    @classmethod
    def from_window(cls, weight: Weight, k: int, window: SlopeWindow):
        return cls(k, int(round(window.s_lo * k)), int(round(window.s_hi * k)), weight)

    def window(self) -> SlopeWindow:
        return SlopeWindow(self.j_lo / self.k, self.j_hi / self.k)


@dataclass(frozen=True)
class LogNorms:
    j_lo: int
    log_c2: np.ndarray

    def __getitem__(self, j):
        return self.log_c2[np.asarray(j) - self.j_lo]


@dataclass(frozen=True)
class KernelEval:
    k: int
    log_B: GridFn
    bergman_metric: GridFn
    condition: Optional[float] = None

    @property
    def grid(self) -> VGrid:
        return self.log_B.grid

    @property
    def B(self) -> np.ndarray:
        return np.exp(self.log_B.values)

    def to_csv(self, path) -> None:
        from ._io import write_csv

        write_csv(
            path,
            ["v", "log_B", "bergman_metric", "bergman_ma_density"],
            [
                self.grid.nodes,
                self.log_B.values,
                self.bergman_metric.values,
                bergman_measure(self).values,
            ],
        )


def simpson_weights(n: int, h: float) -> np.ndarray:
    if n % 2 == 0:
        raise ValueError("Simpson weights need an odd number of nodes")
    w = np.full(n, 2.0)
    w[1::2] = 4.0
    w[0] = w[-1] = 1.0
    return w * h / 3.0


def _log_simpson(E: np.ndarray, h: float) -> np.ndarray:
    """Row-wise log of the Simpson integral of exp(E)."""
    peak = E.max(axis=1, keepdims=True)
    w = simpson_weights(E.shape[1], h)
    return np.log(np.exp(E - peak) @ w) + peak[:, 0]


@functools.lru_cache(maxsize=64)
def _log_norms_all(weight: Weight, k: int, grid: VGrid, rtol: float) -> np.ndarray:
    if (grid.n_points - 1) % 4:
        raise ValueError(f"quadrature grid needs n_points = 4q + 1, got {grid.n_points}")
    js = np.arange(weight.degree_m * k + 1, dtype=float)
    for _ in range(4):
        v = grid.nodes
        base = -k * eval_potential(weight, v, 0) + log_fs_density(v)
        fine = np.empty_like(js)
        coarse = np.empty_like(js)
        block = max(1, 4_000_000 // grid.n_points)
        for start in range(0, len(js), block):
            jb = js[start : start + block]
            E = jb[:, None] * v[None, :] + base[None, :]
            peak = E.max(axis=1)
            bad = (E[:, 0] > peak - ENDPOINT_DROP) | (E[:, -1] > peak - ENDPOINT_DROP)
            if bad.any():
                j = int(jb[np.argmax(bad)])
                raise TruncationError(
                    f"integrand for j={j}, k={k} is not negligible at the ends of "
                    f"[{grid.v_min}, {grid.v_max}]; use a wider grid"
                )
            fine[start : start + len(jb)] = _log_simpson(E, grid.h)
            coarse[start : start + len(jb)] = _log_simpson(E[:, ::2], 2 * grid.h)
        if np.max(np.abs(np.expm1(fine - coarse))) < rtol:
            return fine
        grid = grid.refined(2)
    raise ToleranceError(f"norm quadrature did not settle to {rtol:g} for k={k}")


def monomial_log_norms(
    space: SectionSpace, grid: VGrid = QUAD_GRID, rtol: float = 1e-12
) -> LogNorms:
    """ln c_j^2 for every monomial index in the space.

    Log-domain composite Simpson on ``grid``, doubled until the Simpson value
    and its half-resolution counterpart agree to ``rtol``.
    """
    full = _log_norms_all(space.weight, space.k, grid, rtol)
    out = full[space.j_lo : space.j_hi + 1].copy()
    out.setflags(write=False)
    return LogNorms(space.j_lo, out)


def _log_kernel_diag(space: SectionSpace, norms: LogNorms, v: np.ndarray) -> np.ndarray:
    """ln K_k(v, v) = ln sum_j exp(j*v - ln c_j^2)."""
    js = space.indices.astype(float)
    lc = norms[space.indices]
    out = np.full(v.shape, -np.inf)
    block = max(1, 4_000_000 // max(len(v), 1))
    for start in range(0, len(js), block):
        E = js[start : start + block, None] * v[None, :] - lc[start : start + block, None]
        out = np.logaddexp(out, logsumexp(E, axis=0))
    return out


def bergman_function(
    space: SectionSpace, norms: Optional[LogNorms] = None, grid: VGrid = QUAD_GRID
) -> KernelEval:
    """ln B_k and the Bergman metric (1/k) ln K_k(x, x) on ``grid``."""
    if norms is None:
        norms = monomial_log_norms(space)
    v = grid.nodes
    log_k = _log_kernel_diag(space, norms, v)
    u = eval_potential(space.weight, v, 0)
    return KernelEval(
        space.k,
        GridFn(grid, log_k - space.k * u),
        GridFn(grid, log_k / space.k),
    )


def dimension_identity(space: SectionSpace, ev: KernelEval, rtol: float = 1e-6) -> float:
    """Integral of B_k against the reference area; must equal the dimension."""
    v = ev.grid.nodes
    total = float(simpson(np.exp(ev.log_B.values + log_fs_density(v)), x=v))
    if abs(total - space.dim) > rtol * space.dim:
        raise ToleranceError(
            f"integral of B_k is {total!r}, expected {space.dim} (grid {ev.grid})"
        )
    return total


def kernel_offdiag_sq(space: SectionSpace, norms: LogNorms, x, y):
    """|K_k(x, y)|^2 in the weighted norm, with x, y given as (v, theta).

    The y coordinates may be arrays; the result then has their broadcast shape.
    """
    (vx, tx), (vy, ty) = x, y
    vy, ty = np.broadcast_arrays(np.asarray(vy, dtype=float), np.asarray(ty, dtype=float))
    js = space.indices.astype(float)[:, None]
    k = space.k
    ux = eval_potential(space.weight, vx, 0)
    uy = eval_potential(space.weight, vy.ravel(), 0)
    a = js * 0.5 * (vx + vy.ravel()[None, :]) - norms[space.indices][:, None] - 0.5 * k * (ux + uy)
    peak = a.max(axis=0)
    s = np.sum(np.exp(a - peak) * np.exp(1j * js * (tx - ty.ravel()[None, :])), axis=0)
    out = (np.exp(2.0 * peak) * np.abs(s) ** 2).reshape(vy.shape)
    return float(out) if out.ndim == 0 else out


def bergman_measure(ev: KernelEval) -> GridFn:
    """Second difference quotient of the Bergman metric, ends copied inward."""
    d2 = second_difference(ev.bergman_metric)
    return GridFn(ev.grid, np.concatenate([[d2[0]], d2, [d2[-1]]]))


def lelong_slope(ev: KernelEval, end: str) -> float:
    """One-sided slope of the Bergman metric at a grid end."""
    y = ev.bergman_metric.values
    h = ev.grid.h
    if end == "left":
        return float((y[1] - y[0]) / h)
    if end == "right":
        return float((y[-1] - y[-2]) / h)
    raise ValueError(f"end must be 'left' or 'right', got {end!r}")


def section_value_sq(space: SectionSpace, coeffs: np.ndarray, v) -> np.ndarray:
    """|sum_j a_j z^j|^2 e^{-k u} along the positive real ray (theta = 0)."""
    v = np.asarray(v, dtype=float)
    js = space.indices.astype(float)
    E = js[:, None] * 0.5 * v[None, :] - 0.5 * space.k * eval_potential(space.weight, v, 0)
    peak = E.max(axis=0)
    s = coeffs @ np.exp(E - peak)
    return np.abs(s) ** 2 * np.exp(2.0 * peak)


Potential = Union[Weight, Callable[[np.ndarray, np.ndarray], np.ndarray]]


def _potential_fn(potential: Potential):
    if isinstance(potential, Weight):
        return lambda v, theta: eval_potential(potential, v, 0) + 0.0 * theta
    return potential


def gram_oracle(
    potential: Potential,
    k: int,
    j_lo: int,
    j_hi: int,
    eval_grid: VGrid,
    v_grid: VGrid = VGrid(-60.0, 60.0, 4001),
    n_theta: Optional[int] = None,
    eval_theta: float = 0.0,
    max_condition: float = 1e14,
) -> KernelEval:
    """B_k from the monomial Gram matrix under a 2D polar quadrature.

    Does not assume the weight is radial: the Gram matrix is assembled in
    full, Cholesky-factorised, and B_k(x) = e^{-k phi} z(x)^H G^{-1} z(x).
    The monomial Gram matrix is exponentially ill-conditioned, so this is only
    usable for k <= 40; ``max_condition`` bounds the 2-norm condition number.
    """
    if k > GRAM_MAX_K:
        raise ValueError(f"gram_oracle supports k <= {GRAM_MAX_K}, got {k}")
    if not 0 <= j_lo <= j_hi:
        raise ValueError(f"bad index window [{j_lo}, {j_hi}]")
    phi = _potential_fn(potential)
    js = np.arange(j_lo, j_hi + 1, dtype=float)
    if n_theta is None:
        n_theta = max(2 * (j_hi - j_lo) + 2, 64)
    thetas = 2.0 * np.pi * np.arange(n_theta) / n_theta
    v = v_grid.nodes
    log_w = np.log(simpson_weights(v_grid.n_points, v_grid.h)) + log_fs_density(v) - np.log(n_theta)

    G = np.zeros((len(js), len(js)), dtype=complex)
    for theta in thetas:
        amp = js[None, :] * 0.5 * v[:, None] + 0.5 * (log_w - k * phi(v, theta))[:, None]
        Z = np.exp(amp) * np.exp(1j * js * theta)[None, :]
        G += Z.conj().T @ Z
    G = 0.5 * (G + G.conj().T)

    eig = np.linalg.eigvalsh(G)
    condition = float(eig[-1] / eig[0]) if eig[0] > 0 else float("inf")
    if condition > max_condition:
        raise GramConditioningError(condition)
    try:
        L = np.linalg.cholesky(G)
    except np.linalg.LinAlgError as exc:
        raise GramConditioningError(condition) from exc

    ve = eval_grid.nodes
    phi_e = phi(ve, np.full_like(ve, eval_theta))
    z = np.exp(js[:, None] * 0.5 * ve[None, :] - 0.5 * k * phi_e[None, :])
    z = z * np.exp(1j * js * eval_theta)[:, None]
    y = solve_triangular(L, z, lower=True)
    log_B = np.log(np.sum(np.abs(y) ** 2, axis=0))
    return KernelEval(
        k,
        GridFn(eval_grid, log_B),
        GridFn(eval_grid, (log_B + k * phi_e) / k),
        condition=condition,
    )
