import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bergmanlab.envelope import (
    ConvexityError,
    InvalidWindowError,
    SlopeWindow,
    c11_probe,
    constrained_envelope,
    contact_set,
    envelope_oracle,
    equilibrium_measure,
    legendre_transform,
    lower_hull,
    second_difference,
)
from bergmanlab.presets import PRESETS
from bergmanlab.weight import Bump, GridFn, VGrid, Weight

GRID = VGrid(-12.0, 12.0, 2049)


def _random_data(seed, n=400):
    rng = np.random.default_rng(seed)
    g = VGrid(-5.0, 5.0, n)
    y = np.cumsum(rng.normal(size=n)) * 0.1 + 0.05 * g.nodes**2
    return GridFn(g, y)


def test_window_validation():
    with pytest.raises(InvalidWindowError):
        SlopeWindow(1.0, 1.0)
    with pytest.raises(InvalidWindowError):
        SlopeWindow(-0.5, 1.0)
    with pytest.raises(InvalidWindowError):
        SlopeWindow(0.0, 3.0).check(Weight(2))
    assert SlopeWindow.full(Weight(2)) == SlopeWindow(0.0, 2.0)


def test_lower_hull_square_points():
    x = np.arange(7.0)
    y = np.array([3.0, 1.0, 2.0, 0.0, 0.5, 4.0, 1.0])
    idx = lower_hull(x, y)
    assert idx.tolist() == [0, 1, 3, 6]


def test_legendre_of_quadratic():
    g = VGrid(-10, 10, 4001)
    f = GridFn(g, 0.5 * g.nodes**2)
    dual = legendre_transform(f, VGrid(-3, 3, 61))
    s = dual.v
    np.testing.assert_allclose(dual.values, 0.5 * s**2, atol=g.h**2)


def test_legendre_of_affine_and_softplus():
    g = VGrid(-8, 8, 1601)
    dual = legendre_transform(GridFn(g, g.nodes.copy()), VGrid(0, 2, 21))
    assert dual(1.0) == pytest.approx(0.0, abs=1e-14)
    np.testing.assert_allclose(dual.values, 8 * np.abs(dual.v - 1), atol=1e-12)
    soft = Weight(1).sample(VGrid(-12, 12, 4097))
    s = 0.3
    ent = s * math.log(s) + (1 - s) * math.log(1 - s)
    assert legendre_transform(soft, VGrid(0.3, 0.5, 3)).values[0] == pytest.approx(ent, abs=1e-5)


def test_convex_weight_is_its_own_envelope():
    res = constrained_envelope(Weight(1).sample(GRID), SlopeWindow(0.0, 1.0))
    np.testing.assert_allclose(res.u_e.values, res.u.values, atol=1e-13)
    assert res.contact_mask.all()
    assert res.free_boundary() == []


def test_divisor_envelope_closed_form():
    # 2 ln(1+e^v) with slopes <= 1: tangent line of slope 1 from v = 0 on
    w = Weight(2)
    res = constrained_envelope(w.sample(GRID), SlopeWindow(0.0, 1.0))
    v = GRID.nodes
    exact = np.where(v <= 0, 2 * np.logaddexp(0, v), 2 * math.log(2) + v)
    np.testing.assert_allclose(res.u_e.values, exact, atol=1e-12)
    assert float(w(2.0) - res.u_e(2.0)) == pytest.approx(0.86756166096605437, abs=1e-12)
    np.testing.assert_array_equal(res.contact_mask, v <= 0)
    assert res.free_boundary() == [pytest.approx(0.5 * GRID.h)]


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_oracle_agrees_on_presets(name):
    p = PRESETS[name]
    u = p.weight.sample(VGrid(-12, 12, 2**14))
    res = constrained_envelope(u, p.slope_window())
    assert np.max(np.abs(res.u_e.values - envelope_oracle(u, p.slope_window()).values)) < 1e-12


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), lo=st.floats(0, 0.5), width=st.floats(0.1, 1.5))
def test_envelope_properties(seed, lo, width):
    u = _random_data(seed)
    win = SlopeWindow(lo, lo + width)
    res = constrained_envelope(u, win)
    ue = res.u_e.values
    tol = 1e-10 * (1 + np.abs(u.values))
    assert np.all(ue <= u.values + tol)
    assert second_difference(res.u_e).min() * u.grid.h**2 >= -1e-10
    slopes = np.diff(ue) / u.grid.h
    assert slopes.min() >= win.s_lo - 1e-8 and slopes.max() <= win.s_hi + 1e-8
    # idempotent
    again = constrained_envelope(res.u_e, win)
    np.testing.assert_allclose(again.u_e.values, ue, atol=1e-10)
    # agrees with the primal oracle
    np.testing.assert_allclose(envelope_oracle(u, win).values, ue, atol=1e-9)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), bump=st.floats(0.0, 2.0))
def test_envelope_monotone_in_obstacle(seed, bump):
    u = _random_data(seed)
    w = GridFn(u.grid, u.values + bump * np.exp(-u.grid.nodes**2))
    win = SlopeWindow(0.0, 1.0)
    a = constrained_envelope(u, win).u_e.values
    b = constrained_envelope(w, win).u_e.values
    assert np.all(a <= b + 1e-10)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_window_nesting(seed):
    u = _random_data(seed)
    narrow = constrained_envelope(u, SlopeWindow(0.3, 0.6)).u_e.values
    wide = constrained_envelope(u, SlopeWindow(0.1, 0.9)).u_e.values
    assert np.all(narrow <= wide + 1e-10)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), a=st.floats(0.1, 0.9), b=st.floats(-1, 1))
def test_extremal_among_affine_candidates(seed, a, b):
    # any admissible affine minorant lies below the envelope
    u = _random_data(seed)
    v = u.grid.nodes
    c = np.min(u.values - a * v)
    res = constrained_envelope(u, SlopeWindow(0.0, 1.0))
    assert np.all(a * v + c <= res.u_e.values + 1e-10)


def test_contact_set_checks():
    res = constrained_envelope(Weight(2).sample(GRID), SlopeWindow(0.0, 1.0))
    np.testing.assert_array_equal(contact_set(res.u, res.u_e, 1e-9), res.contact_mask)
    with pytest.raises(ValueError):
        contact_set(res.u, Weight(2).sample(VGrid(-1, 1, 5)), 1e-9)
    with pytest.raises(ValueError):
        contact_set(res.u, res.u_e, 0.0)


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_equilibrium_measure_total_mass(name):
    p = PRESETS[name]
    res = constrained_envelope(p.weight.sample(GRID), p.slope_window())
    meas = equilibrium_measure(res)
    assert meas.total_mass == pytest.approx(p.slope_window().width, abs=1e-9)
    assert meas.left_atom >= -1e-12 and meas.right_atom >= -1e-12


def test_equilibrium_measure_rejects_nonconvex():
    g = VGrid(-1, 1, 101)
    u = GridFn(g, -g.nodes**2)
    res = constrained_envelope(u, SlopeWindow(0.0, 1.0))
    fake = type(res)(res.u, u, res.contact_mask, res.dual, res.slope_fn, res.window)
    with pytest.raises(ConvexityError):
        equilibrium_measure(fake)


def test_bump_contact_band():
    p = PRESETS["bump"]
    res = constrained_envelope(p.weight.sample(VGrid(-12, 12, 2**14)), p.slope_window())
    fb = res.free_boundary()
    assert len(fb) == 2
    assert fb[0] == pytest.approx(-0.48, abs=0.01) and fb[1] == pytest.approx(0.48, abs=0.01)


def test_c11_probe_rows():
    grids = [VGrid(-12, 12, n) for n in (1024, 2048)]
    rows = c11_probe(Weight(2), SlopeWindow(0.0, 1.0), grids)
    assert [r["n_points"] for r in rows] == [1024, 2048]
    for r in rows:
        assert r["max_second_diff"] <= 0.5 + 1e-9
        assert r["slope_jump"] <= 2 * r["h"]


def test_csv_output(tmp_path):
    res = constrained_envelope(Weight(1, Bump(-1.0, 0.0, 1.0)).sample(VGrid(-3, 3, 31)), SlopeWindow(0, 1))
    path = tmp_path / "env.csv"
    res.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "v,u,u_e,contact,slope,ma_density"
    assert len(lines) == 32
