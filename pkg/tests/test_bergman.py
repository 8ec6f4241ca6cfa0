import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bergmanlab.bergman import (
    GramConditioningError,
    SectionSpace,
    ToleranceError,
    TruncationError,
    bergman_function,
    bergman_measure,
    dimension_identity,
    gram_oracle,
    kernel_offdiag_sq,
    lelong_slope,
    monomial_log_norms,
    section_value_sq,
    simpson_weights,
)
from bergmanlab.envelope import SlopeWindow
from bergmanlab.weight import Bump, VGrid, Weight, log_fs_density

FS = Weight(1)
BUMP = Weight(1, Bump(-1.5, 0.0, 2.0))
EVAL = VGrid(-8.0, 8.0, 161)

# mpmath quadrature, 40 digits
BUMP_LOG_C2_K10 = {0: 7.5386784349615159, 3: 6.5966375008019191, 5: 6.4145890731374871, 10: 7.5386784349615159}
BUMP_LOG_B_K10 = {0.0: 3.6725447343126468, 0.5: 3.1800734784754047, -3.0: -7.9478180689709251}


def beta_log_norm(j, n):
    # integral of e^{(j+1)v} (1+e^v)^{-(n+2)} dv = B(j+1, n-j+1)
    return math.lgamma(j + 1) + math.lgamma(n - j + 1) - math.lgamma(n + 2)


def test_section_space_windows():
    w = Weight(2)
    assert SectionSpace.full(w, 5).indices.tolist() == list(range(11))
    assert (SectionSpace.vanishing_at_zero(w, 5).j_lo, SectionSpace.vanishing_at_zero(w, 5).j_hi) == (5, 10)
    assert SectionSpace.vanishing_at_infinity(w, 5).j_hi == 5
    assert SectionSpace.vanishing_at_zero(w, 5, order=6).j_lo == 6
    assert SectionSpace.from_window(w, 4, SlopeWindow(0.5, 1.5)).indices.tolist() == [2, 3, 4, 5, 6]
    assert SectionSpace(4, 2, 6, w).window() == SlopeWindow(0.5, 1.5)
    with pytest.raises(ValueError):
        SectionSpace(3, 0, 7, w)


@pytest.mark.parametrize("m,k", [(1, 10), (1, 50), (2, 20), (3, 7)])
def test_fs_norms_are_beta_integrals(m, k):
    norms = monomial_log_norms(SectionSpace.full(Weight(m), k))
    n = m * k
    for j in range(n + 1):
        assert norms[j] == pytest.approx(beta_log_norm(j, n), abs=1e-10)


def test_bump_norms_and_kernel_against_high_precision():
    space = SectionSpace.full(BUMP, 10)
    norms = monomial_log_norms(space)
    for j, ref in BUMP_LOG_C2_K10.items():
        assert norms[j] == pytest.approx(ref, abs=1e-12)
    g = VGrid(-3.0, 0.5, 15)
    ev = bergman_function(space, norms, g)
    for v, ref in BUMP_LOG_B_K10.items():
        i = int(round((v - g.v_min) / g.h))
        assert ev.log_B.values[i] == pytest.approx(ref, abs=1e-12)


@pytest.mark.parametrize("k", [1, 10, 200, 800])
def test_fs_bergman_is_constant(k):
    ev = bergman_function(SectionSpace.full(FS, k), grid=EVAL)
    np.testing.assert_allclose(ev.B, k + 1, rtol=1e-10)


def test_fs_k2_metric_at_origin():
    ev = bergman_function(SectionSpace.full(FS, 2), grid=VGrid(-1, 1, 3))
    assert ev.bergman_metric.values[1] == pytest.approx(0.5 * math.log(12), abs=1e-14)


@pytest.mark.parametrize("weight,lo,hi,k", [(FS, 0, 1, 30), (BUMP, 0, 1, 30), (Weight(2), 1, 2, 40)])
def test_dimension_identity(weight, lo, hi, k):
    space = SectionSpace.from_window(weight, k, SlopeWindow(lo, hi))
    ev = bergman_function(space, grid=VGrid(-60, 60, 8001))
    assert dimension_identity(space, ev) == pytest.approx(space.dim, rel=1e-9)
    with pytest.raises(ToleranceError):
        dimension_identity(space, bergman_function(space, grid=VGrid(-0.2, 0.2, 101)))


@settings(max_examples=25, deadline=None)
@given(k=st.integers(2, 40), lo=st.integers(0, 20), hi=st.integers(0, 20))
def test_nesting(k, lo, hi):
    lo, hi = min(lo, k), min(hi, k)
    if lo > hi:
        lo, hi = hi, lo
    sub = SectionSpace(k, lo, hi, BUMP)
    big = SectionSpace.full(BUMP, k)
    a = bergman_function(sub, grid=EVAL).log_B.values
    b = bergman_function(big, grid=EVAL).log_B.values
    assert np.all(a <= b + 1e-12)


@pytest.mark.parametrize("k", [3, 25, 100])
def test_degree_scaling(k):
    two = bergman_function(SectionSpace.full(Weight(2), k), grid=EVAL)
    one = bergman_function(SectionSpace.full(Weight(1), 2 * k), grid=EVAL)
    np.testing.assert_allclose(two.log_B.values, one.log_B.values, atol=1e-11)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31), k=st.integers(1, 25), v=st.floats(-6, 6))
def test_extremal_property(seed, k, v):
    # |s(x)|^2 e^{-ku} / ||s||^2 never exceeds B_k(x)
    space = SectionSpace.full(BUMP, k)
    norms = monomial_log_norms(space)
    rng = np.random.default_rng(seed)
    a = rng.normal(size=space.dim) + 1j * rng.normal(size=space.dim)
    norm_sq = float(np.sum(np.abs(a) ** 2 * np.exp(norms[space.indices])))
    val = section_value_sq(space, a, np.array([v]))[0] / norm_sq
    g = VGrid(v - 1, v + 1, 3)
    b = bergman_function(space, norms, g).B[1]
    assert val <= b * (1 + 1e-12)


def test_extremal_is_attained_by_kernel_section():
    space = SectionSpace.full(BUMP, 12)
    norms = monomial_log_norms(space)
    v = 0.7
    a = np.exp(space.indices * 0.5 * v - norms[space.indices])
    norm_sq = float(np.sum(a**2 * np.exp(norms[space.indices])))
    val = section_value_sq(space, a, np.array([v]))[0] / norm_sq
    b = bergman_function(space, norms, VGrid(v - 1, v + 1, 3)).B[1]
    assert val == pytest.approx(b, rel=1e-12)


def test_reproducing_property_by_2d_quadrature():
    # integral over y of |K(x, y)|^2 against the reference area gives B(x)
    k = 6
    space = SectionSpace.full(BUMP, k)
    norms = monomial_log_norms(space)
    vg = VGrid(-60, 60, 6001)
    n_theta = 2 * k + 3
    thetas = 2 * np.pi * np.arange(n_theta) / n_theta
    V, T = np.meshgrid(vg.nodes, thetas)
    x = (0.4, 1.1)
    ksq = kernel_offdiag_sq(space, norms, x, (V, T))
    w = simpson_weights(vg.n_points, vg.h) * np.exp(log_fs_density(vg.nodes))
    total = float(np.sum(ksq.mean(axis=0) * w))
    b = bergman_function(space, norms, VGrid(-0.6, 1.4, 3)).B[1]
    assert total == pytest.approx(b, rel=1e-9)
    assert kernel_offdiag_sq(space, norms, x, x) == pytest.approx(b**2, rel=1e-12)


@pytest.mark.parametrize("weight", [FS, BUMP], ids=["fs", "bump"])
@pytest.mark.parametrize("k", [5, 20, 30])
def test_gram_oracle_matches_radial_path(weight, k):
    ora = gram_oracle(weight, k, 0, k, EVAL)
    ev = bergman_function(SectionSpace.full(weight, k), grid=EVAL)
    np.testing.assert_allclose(ora.log_B.values, ev.log_B.values, atol=1e-9)
    assert ora.condition > 1


def test_gram_oracle_non_radial_potential():
    # rotating the argument of a radial potential must not change B along theta = 0
    k = 8
    phi = lambda v, t: np.logaddexp(0, v) + 0.0 * t
    ora = gram_oracle(phi, k, 0, k, EVAL)
    np.testing.assert_allclose(ora.B, k + 1, rtol=1e-9)


def test_gram_conditioning_error():
    with pytest.raises(GramConditioningError) as info:
        gram_oracle(Weight(1, Bump(3.0, 0.0, 2.0)), 40, 0, 40, EVAL)
    assert info.value.condition > 1e14
    with pytest.raises(ValueError):
        gram_oracle(FS, 41, 0, 41, EVAL)


def test_truncation_error():
    with pytest.raises(TruncationError):
        monomial_log_norms(SectionSpace.full(FS, 20), grid=VGrid(-5, 5, 1025))


def test_lelong_slopes():
    w = Weight(2)
    g = VGrid(-40, 40, 8001)
    for k in (10, 50):
        div = bergman_function(SectionSpace.vanishing_at_zero(w, k), grid=g)
        full = bergman_function(SectionSpace.full(w, k), grid=g)
        assert lelong_slope(div, "left") == pytest.approx(1.0, abs=1e-9)
        assert lelong_slope(full, "left") == pytest.approx(0.0, abs=1e-9)
        assert lelong_slope(full, "right") == pytest.approx(2.0, abs=1e-9)
    with pytest.raises(ValueError):
        lelong_slope(full, "middle")


def test_bergman_measure_mass():
    k = 100
    ev = bergman_function(SectionSpace.full(BUMP, k), grid=VGrid(-40, 40, 16001))
    mass = float(np.sum(bergman_measure(ev).values[1:-1]) * ev.grid.h)
    assert mass == pytest.approx(1.0, abs=1e-6)


def test_kernel_csv(tmp_path):
    ev = bergman_function(SectionSpace.full(FS, 10), grid=VGrid(-1, 1, 5))
    ev.to_csv(tmp_path / "b.csv")
    lines = (tmp_path / "b.csv").read_text().splitlines()
    assert lines[0] == "v,log_B,bergman_metric,bergman_ma_density"
    assert float(lines[1].split(",")[1]) == pytest.approx(math.log(11), abs=1e-12)
