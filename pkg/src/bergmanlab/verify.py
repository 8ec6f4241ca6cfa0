"""Convergence harness: one report per asymptotic statement.

Each report carries per-k error rows plus the criterion string that decided
its verdict.  Thresholds are calibration choices and are printed with every
report.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy.integrate import quad, trapezoid

from ._io import write_csv
from .bergman import (
    QUAD_GRID,
    SectionSpace,
    _log_kernel_diag,
    bergman_function,
    lelong_slope,
    monomial_log_norms,
    simpson_weights,
)
from .envelope import (
    EnvelopeResult,
    SlopeWindow,
    c11_probe,
    constrained_envelope,
    equilibrium_measure,
)
from .weight import GridFn, VGrid, Weight, eval_potential, fs_density, log_fs_density

THEOREMS = (
    "L1",
    "UNIFORM",
    "DECAY",
    "MORSE",
    "OFFDIAG",
    "EXPANSION",
    "EQMEASURE",
    "LELONG",
    "DIVISOR_RADIUS",
    "REGULARITY",
)
DEFAULT_KS = (25, 50, 100, 200, 400, 800)
# wide enough that tails beyond the ends are below 1e-17
VERIFY_GRID = VGrid(-40.0, 40.0, 2**15 + 1)
REGULARITY_GRIDS = (VGrid(-12.0, 12.0, 2**12), VGrid(-12.0, 12.0, 2**13), VGrid(-12.0, 12.0, 2**14))
# node at v = 0; the 1e-4 volume check needs the boundary within ~2e-4
DIVISOR_GRID = VGrid(-12.0, 12.0, 2**17 + 1)
MIN_GAP = 0.05


class ProbeInDError(ValueError):
    pass


class BadProbeError(ValueError):
    pass


@dataclass(frozen=True)
class Row:
    k: int
    error: float
    aux: dict = field(default_factory=dict)


@dataclass
class ConvergenceReport:
    theorem_id: str
    criterion: str
    rows: list[Row]
    verdict: str

    def __post_init__(self):
        if self.theorem_id not in THEOREMS:
            raise ValueError(f"unknown theorem id {self.theorem_id!r}")
        self.rows = sorted(self.rows, key=lambda r: r.k)

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    @property
    def ks(self) -> list[int]:
        return [r.k for r in self.rows]

    @property
    def errors(self) -> np.ndarray:
        return np.array([r.error for r in self.rows])

    def column(self, name: str) -> np.ndarray:
        return np.array([r.aux[name] for r in self.rows])

    def to_dict(self) -> dict:
        return {
            "schema": 1,
            "theorem_id": self.theorem_id,
            "criterion": self.criterion,
            "rows": [{"k": r.k, "error": r.error, "aux": dict(r.aux)} for r in self.rows],
            "verdict": self.verdict,
        }

    def to_csv(self, path) -> None:
        keys: list[str] = []
        for r in self.rows:
            keys.extend(key for key in r.aux if key not in keys)
        cols = [[r.k for r in self.rows], [r.error for r in self.rows]]
        cols += [[r.aux.get(key, float("nan")) for r in self.rows] for key in keys]
        write_csv(path, ["k", "error", *keys], cols)

    def summary(self) -> str:
        return f"[{self.verdict.upper()}] {self.theorem_id}: {self.criterion}"


def _verdict(ok: bool) -> str:
    return "pass" if ok else "fail"


def _window(weight: Weight, window: Optional[SlopeWindow]) -> SlopeWindow:
    if window is None:
        return SlopeWindow.full(weight)
    window.check(weight)
    return window


@functools.lru_cache(maxsize=16)
def envelope_on(weight: Weight, window: SlopeWindow, grid: VGrid) -> EnvelopeResult:
    return constrained_envelope(weight.sample(grid), window)


@functools.lru_cache(maxsize=32)
def kernel_on(weight: Weight, window: SlopeWindow, k: int, grid: VGrid):
    space = SectionSpace.from_window(weight, k, window)
    return bergman_function(space, monomial_log_norms(space), grid)


def log_bergman_at(weight: Weight, window: SlopeWindow, k: int, v) -> np.ndarray:
    """ln B_k at arbitrary points, without a grid."""
    space = SectionSpace.from_window(weight, k, window)
    v = np.atleast_1d(np.asarray(v, dtype=float))
    norms = monomial_log_norms(space)
    return _log_kernel_diag(space, norms, v) - k * eval_potential(weight, v, 0)


def limit_density(res: EnvelopeResult, weight: Weight) -> np.ndarray:
    """1_{D and u''>0} * u'' per node."""
    u2 = eval_potential(weight, res.grid.nodes, 2)
    return np.where(res.contact_mask & (u2 > 0), u2, 0.0)


def _strictly_decreasing(x) -> bool:
    x = np.asarray(x)
    return bool(np.all(np.diff(x) < 0))


def l1_report(
    weight: Weight,
    window: Optional[SlopeWindow] = None,
    ks: Sequence[int] = DEFAULT_KS,
    grid: VGrid = VERIFY_GRID,
) -> ConvergenceReport:
    """L1 distance between k^-1 B_k and its limit density, both against dv."""
    window = _window(weight, window)
    res = envelope_on(weight, window, grid)
    target = limit_density(res, weight)
    v = grid.nodes
    g2 = fs_density(v)
    rows = []
    for k in ks:
        dens = np.exp(kernel_on(weight, window, k, grid).log_B.values) * g2 / k
        err = float(trapezoid(np.abs(dens - target), x=v))
        outside = float(trapezoid(np.where(res.contact_mask, 0.0, dens), x=v))
        rows.append(Row(k, err, {"mass_off_contact": outside}))
    errs = [r.error for r in rows]
    ok = _strictly_decreasing(errs) and errs[-1] <= 0.25 * errs[0]
    return ConvergenceReport(
        "L1",
        "error strictly decreasing in k and error(k_max) <= 0.25 * error(k_min)",
        rows,
        _verdict(ok),
    )


def uniform_report(
    weight: Weight,
    window: Optional[SlopeWindow] = None,
    ks: Sequence[int] = DEFAULT_KS,
    grid: VGrid = VERIFY_GRID,
    v_range: tuple[Optional[float], Optional[float]] = (None, None),
    band: float = 3.0,
) -> ConvergenceReport:
    """Sup distance between the Bergman metric and the equilibrium potential."""
    window = _window(weight, window)
    res = envelope_on(weight, window, grid)
    v = grid.nodes
    sel = np.ones(len(v), dtype=bool)
    if v_range[0] is not None:
        sel &= v >= v_range[0]
    if v_range[1] is not None:
        sel &= v <= v_range[1]
    rows = []
    for k in ks:
        bm = kernel_on(weight, window, k, grid).bergman_metric.values
        err = float(np.max(np.abs(bm - res.u_e.values)[sel]))
        rows.append(Row(k, err, {"ratio": err / (math.log(k) / k)}))
    ratios = [r.aux["ratio"] for r in rows]
    ok = max(ratios) <= band * min(ratios)
    return ConvergenceReport(
        "UNIFORM",
        f"error / (ln k / k) stays within a factor-{band:g} band",
        rows,
        _verdict(ok),
    )


def decay_report(
    weight: Weight,
    window: Optional[SlopeWindow] = None,
    probes: Optional[Sequence[float]] = None,
    ks: Sequence[int] = DEFAULT_KS,
    grid: VGrid = VERIFY_GRID,
) -> ConvergenceReport:
    """Exponential decay rate of B_k off the contact set.

    Without explicit probes, the node with the largest gap u - u_e is used.
    """
    window = _window(weight, window)
    res = envelope_on(weight, window, grid)
    if probes is None:
        gap = res.gap()
        if gap.max() < MIN_GAP:
            raise ProbeInDError(f"largest gap u - u_e is {gap.max():.3g} < {MIN_GAP}")
        probes = [float(grid.nodes[int(np.argmax(gap))])]
    probes = np.asarray(probes, dtype=float)
    delta = eval_potential(weight, probes, 0) - res.u_e(probes)
    if np.any(delta < MIN_GAP):
        bad = probes[np.argmin(delta)]
        raise ProbeInDError(
            f"probe v={bad:g} has gap {delta.min():.3g} < {MIN_GAP}; probes must lie off the contact set"
        )
    rows = []
    for k in ks:
        log_b = log_bergman_at(weight, window, k, probes)
        rate = -(log_b - math.log(k)) / k
        err = float(np.max(np.abs(rate - delta)))
        rows.append(Row(k, err, {"rate": float(rate[np.argmax(np.abs(rate - delta))]),
                                 "min_gap": float(delta.min())}))
    errs = [r.error for r in rows]
    ok = errs[-1] <= 0.5 * float(delta.min()) and _strictly_decreasing(errs)
    return ConvergenceReport(
        "DECAY",
        "|-(1/k) ln(B_k/k) - (u - u_e)| at k_max <= 0.5 * min gap, strictly decreasing",
        rows,
        _verdict(ok),
    )


def morse_report(
    weight: Weight,
    ks: Sequence[int] = DEFAULT_KS,
    eps: float = 0.01,
    grid: VGrid = VERIFY_GRID,
) -> ConvergenceReport:
    """Constant in the pointwise bound k^-1 B_k g'' <= C_k u'' on {u'' > eps}."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    window = SlopeWindow.full(weight)
    v = grid.nodes
    u2 = eval_potential(weight, v, 2)
    pos = u2 > eps
    rows = []
    for k in ks:
        log_b = kernel_on(weight, window, k, grid).log_B.values
        ratio = np.exp(log_b[pos] - math.log(k) + log_fs_density(v[pos])) / u2[pos]
        c_k = float(ratio.max())
        rows.append(Row(k, abs(c_k - 1.0), {"C_k": c_k}))
    cks = [r.aux["C_k"] for r in rows]
    ok = _strictly_decreasing(np.array(cks) - 1.0) and cks[-1] < cks[0]
    return ConvergenceReport(
        "MORSE",
        f"C_k - 1 strictly decreasing in k and C(k_max) < C(k_min), over u'' > {eps:g}",
        rows,
        _verdict(ok),
    )


TestFn = Union[GridFn, Callable[[np.ndarray], np.ndarray]]


def _as_callable(f: TestFn):
    if isinstance(f, GridFn):
        return lambda v: np.interp(v, f.v, f.values, left=0.0, right=0.0)
    return f


def gaussian_profile(center: float, width: float = 1.0):
    return lambda v: np.exp(-0.5 * ((np.asarray(v) - center) / width) ** 2)


def smooth_bump(lo: float, hi: float):
    """C-infinity function supported on [lo, hi], equal to 1 at the midpoint."""
    c, w = 0.5 * (lo + hi), 0.5 * (hi - lo)

    def f(v):
        t = (np.asarray(v, dtype=float) - c) / w
        inside = np.abs(t) < 1
        q = 1.0 - np.where(inside, t, 0.0) ** 2
        with np.errstate(divide="ignore", over="ignore"):
            return np.where(inside, np.exp(1.0 - 1.0 / q), 0.0)

    return f


def offdiag_mass(weight: Weight, window: SlopeWindow, k: int, f: TestFn, g: TestFn,
                 grid: VGrid = QUAD_GRID) -> float:
    """k^-1 times the double integral of |K_k(x,y)|^2 f(x) g(y).

    Integrating out both angles leaves sum_j <f>_j <g>_j, where <f>_j is the
    average of f under the probability density |z^j|^2 e^{-ku} g'' / c_j^2.
    """
    space = SectionSpace.from_window(weight, k, window)
    norms = monomial_log_norms(space)
    v = grid.nodes
    fv, gv = _as_callable(f)(v), _as_callable(g)(v)
    w = simpson_weights(grid.n_points, grid.h)
    base = -k * eval_potential(weight, v, 0) + log_fs_density(v)
    js = space.indices.astype(float)
    lc = norms[space.indices]
    total = 0.0
    block = max(1, 4_000_000 // grid.n_points)
    for start in range(0, len(js), block):
        p = np.exp(js[start : start + block, None] * v[None, :] + base[None, :]
                   - lc[start : start + block, None]) * w[None, :]
        total += float(np.sum((p @ fv) * (p @ gv)))
    return total / k


def offdiag_report(
    weight: Weight,
    window: Optional[SlopeWindow] = None,
    k: int = 300,
    f: Optional[TestFn] = None,
    g: Optional[TestFn] = None,
    grid: VGrid = VERIFY_GRID,
    tol: float = 0.05,
) -> ConvergenceReport:
    """Concentration of the full kernel on the diagonal, tested against f x g."""
    window = _window(weight, window)
    if f is None:
        f = gaussian_profile(expansion_point(weight, window, grid))
    g = f if g is None else g
    res = envelope_on(weight, window, grid)
    v = grid.nodes
    target = float(trapezoid(_as_callable(f)(v) * _as_callable(g)(v) * limit_density(res, weight), x=v))
    s_k = offdiag_mass(weight, window, k, f, g)
    err = abs(s_k - target) / (abs(target) + 1e-12)
    ok = k >= 300 and err <= tol
    return ConvergenceReport(
        "OFFDIAG",
        f"relative error <= {tol:g} at k >= 300",
        [Row(k, err, {"S_k": s_k, "target": target})],
        _verdict(ok),
    )


def expansion_point(weight: Weight, window: SlopeWindow, grid: VGrid = VERIFY_GRID) -> float:
    """A contact node well inside D where u'' is largest."""
    res = envelope_on(weight, window, grid)
    v = grid.nodes
    flips = np.asarray(res.free_boundary())
    if len(flips):
        dist = np.min(np.abs(v[:, None] - flips[None, :]), axis=1)
    else:
        dist = np.full(len(v), np.inf)
    dist = np.where(res.contact_mask, dist, -np.inf)
    need = min(1.0, 0.5 * float(dist.max()))
    u2 = eval_potential(weight, v, 2)
    cand = np.where(dist >= need, u2, -np.inf)
    best = cand.max()
    ties = np.flatnonzero(cand >= best - 1e-12 * abs(best))
    return float(v[ties[np.argmin(np.abs(v[ties]))]])


def expansion_probe(
    weight: Weight,
    v_star: Optional[float] = None,
    ks: Sequence[int] = DEFAULT_KS,
    window: Optional[SlopeWindow] = None,
    grid: VGrid = VERIFY_GRID,
    stabilize: float = 0.2,
) -> ConvergenceReport:
    """Leading term of k^-1 B_k g'' at a contact point, and its 1/k correction."""
    window = _window(weight, window)
    res = envelope_on(weight, window, grid)
    if v_star is None:
        v_star = expansion_point(weight, window, grid)
    i = int(round((v_star - grid.v_min) / grid.h))
    u2 = eval_potential(weight, v_star, 2)
    interior = 0 < i < grid.n_points - 1 and res.contact_mask[i - 1 : i + 2].all()
    if not interior or not u2 > 0:
        raise BadProbeError(f"v*={v_star:g} is not interior to the contact set with u'' > 0")
    g2 = fs_density(v_star)
    rows = []
    for k in ks:
        a_k = float(np.exp(log_bergman_at(weight, window, k, v_star)[0])) * g2 / k
        diff = a_k - u2
        rows.append(Row(k, abs(diff), {"a_k": a_k, "diff": diff, "scaled": k * diff}))
    scaled = [r.aux["scaled"] for r in rows]
    errs = [r.error for r in rows]
    # a_k - u'' may change sign before the 1/k term takes over
    ok = (
        errs[-1] < errs[0]
        and bool(np.all(np.diff(errs[-3:]) <= 0))
        and abs(scaled[-1] - scaled[-2]) <= stabilize * abs(scaled[-1])
    )
    return ConvergenceReport(
        "EXPANSION",
        f"|a_k - u''| below its first value and non-increasing over the last three k; "
        f"last two k*(a_k - u'') within {stabilize:.0%}",
        rows,
        _verdict(ok),
    )


def divisor_example_report(which: str, grid: VGrid = DIVISOR_GRID) -> ConvergenceReport:
    """Free-boundary radius of the two divisor examples on O(2).

    ``example_5_2``: sections of degree <= k, contact set a disc |z| <= r.
    ``example_5_3``: sections vanishing to order k at 0, contact set |z| >= r.
    In both cases r is fixed by requiring the area 2*omega_FS of the contact
    side to be one.
    """
    weight = Weight(2)
    if which == "example_5_2":
        window, inside_left = SlopeWindow(0.0, 1.0), True
    elif which == "example_5_3":
        window, inside_left = SlopeWindow(1.0, 2.0), False
    else:
        raise ValueError(f"unknown divisor example {which!r}")
    res = constrained_envelope(weight.sample(grid), window)
    bounds = res.free_boundary()
    v = grid.nodes
    if len(bounds) != 1:
        return ConvergenceReport(
            "DIVISOR_RADIUS", "exactly one free boundary", [Row(0, float("inf"), {})], "fail"
        )
    vb = bounds[0]
    r = math.exp(vb / 2.0)
    side = v < vb if inside_left else v > vb
    meas = equilibrium_measure(res)
    mass = meas.mass_on(res.contact_mask) + (meas.left_atom if inside_left else meas.right_atom)
    lims = (-np.inf, vb) if inside_left else (vb, np.inf)
    volume = quad(lambda t: 2.0 * fs_density(t), *lims, epsabs=1e-13, epsrel=1e-13, limit=200)[0]
    shape_ok = bool(np.array_equal(res.contact_mask, side))
    ok = abs(r - 1.0) <= 1e-3 and abs(mass - 1.0) <= 1e-4 and abs(volume - 1.0) <= 1e-4 and shape_ok
    aux = {
        "radius": r,
        "v_boundary": vb,
        "contact_mass": mass,
        "volume": volume,
        "contact_side_ok": float(shape_ok),
        "h": grid.h,
    }
    return ConvergenceReport(
        "DIVISOR_RADIUS",
        "r = 1 +- 1e-3, contact-side equilibrium mass = 1 +- 1e-4, 2*omega_FS volume = 1 +- 1e-4",
        [Row(0, abs(r - 1.0), aux)],
        _verdict(ok),
    )


def eqmeasure_report(
    weight: Weight,
    window: Optional[SlopeWindow] = None,
    grid: VGrid = VERIFY_GRID,
    constant: float = 10.0,
    exclude: int = 3,
) -> ConvergenceReport:
    """Envelope Monge-Ampere density against 1_{D, u''>0} u'' away from free boundaries."""
    window = _window(weight, window)
    res = envelope_on(weight, window, grid)
    density = equilibrium_measure(res).density.values
    target = limit_density(res, weight)
    keep = np.ones(grid.n_points, dtype=bool)
    keep[0] = keep[-1] = False
    for i in np.flatnonzero(res.contact_mask[1:] != res.contact_mask[:-1]):
        keep[max(0, i - exclude + 1) : i + exclude + 1] = False
    dev = float(np.max(np.abs(density - target)[keep]))
    bound = constant * grid.h
    return ConvergenceReport(
        "EQMEASURE",
        f"max deviation <= {constant:g} h outside {exclude} cells of each free boundary",
        [Row(0, dev, {"h": grid.h, "bound": bound})],
        _verdict(dev <= bound),
    )


def lelong_report(
    ks: Sequence[int] = DEFAULT_KS,
    grid: VGrid = VERIFY_GRID,
    tol: float = 1e-6,
) -> ConvergenceReport:
    """Left-end slope of the Bergman metric for sections vanishing to order k at 0.

    Uses O(2) with the Fubini-Study weight; also requires uniform convergence on
    v >= -4, away from the divisor.
    """
    weight = Weight(2)
    window = SlopeWindow(1.0, 2.0)
    full = SlopeWindow.full(weight)
    rows = []
    for k in ks:
        s_div = lelong_slope(kernel_on(weight, window, k, grid), "left")
        s_full = lelong_slope(kernel_on(weight, full, k, grid), "left")
        rows.append(Row(k, abs(s_div - 1.0), {"slope_divisor": s_div, "slope_full": s_full}))
    uni = uniform_report(weight, window, ks, grid, v_range=(-4.0, None))
    ok = all(r.error <= tol for r in rows) and uni.passed
    for r, u in zip(rows, uni.rows):
        r.aux["uniform_error"] = u.error
    return ConvergenceReport(
        "LELONG",
        f"left slope = 1 within {tol:g} for every k, and uniform convergence on v >= -4 passes",
        rows,
        _verdict(ok),
    )


def regularity_report(
    weight: Weight,
    window: Optional[SlopeWindow] = None,
    grids: Sequence[VGrid] = REGULARITY_GRIDS,
    factor: float = 1.5,
) -> ConvergenceReport:
    """Bounded second differences of u_e under refinement; rows keyed by n_points."""
    window = _window(weight, window)
    probe = c11_probe(weight, window, grids)
    rows = [
        Row(p["n_points"], p["max_second_diff"], {"h": p["h"], "slope_jump": p["slope_jump"]})
        for p in probe
    ]
    d2 = [r.error for r in rows]
    ok = max(d2) <= factor * min(d2) and all(r.aux["slope_jump"] <= 2 * r.aux["h"] for r in rows)
    return ConvergenceReport(
        "REGULARITY",
        f"max second difference within factor {factor:g} across grids; slope jump <= 2h",
        rows,
        _verdict(ok),
    )


def run_suite(
    weight: Weight,
    window: Optional[SlopeWindow] = None,
    ks: Sequence[int] = DEFAULT_KS,
    grid: VGrid = VERIFY_GRID,
) -> list[ConvergenceReport]:
    """Every per-weight report; DECAY is skipped when the contact set is everything."""
    window = _window(weight, window)
    reports = [
        l1_report(weight, window, ks, grid),
        uniform_report(weight, window, ks, grid),
    ]
    try:
        reports.append(decay_report(weight, window, None, ks, grid))
    except ProbeInDError:
        pass
    if window == SlopeWindow.full(weight):
        reports.append(morse_report(weight, ks, grid=grid))
    reports += [
        offdiag_report(weight, window, max(300, max(ks)), grid=grid),
        expansion_probe(weight, None, ks, window, grid),
        eqmeasure_report(weight, window, grid),
        regularity_report(weight, window),
    ]
    return reports
