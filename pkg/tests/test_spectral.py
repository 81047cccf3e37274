import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cascadekit.cascade import CascadeSystem, extract_char_fn
from cascadekit.errors import EmptyBox, NotInSpectrum, OnLevelSet, WrongSpace
from cascadekit.models import platoon_system, robot_system
from cascadekit.polyrat import Poly, RatFun
from cascadekit.spectral import (
    approx_eigenvector,
    check_contractivity,
    check_uniform_boundedness,
    condition2_probe,
    default_box,
    off_diagonal_blocks,
    repeated_pole_form,
    resolvent_estimate,
    trace_level_set,
    witness_length,
    witness_state,
)

QUARTIC = CascadeSystem(np.array([[0.0, 1.0], [-2.0, -2.0]]), np.array([[0.0, -1.0], [0.0, 0.0]]), 1.0, "quartic")


def symbol_sup(sys, lam, n=4096):
    # l^2 norm of a block Toeplitz operator: sup of its symbol over the circle
    z = np.exp(2j * np.pi * np.arange(n) / n)
    M = lam * np.eye(sys.m)[None] - sys.A0[None] - z[:, None, None] * sys.A1[None]
    return float(np.max(np.linalg.norm(np.linalg.inv(M), 2, axis=(1, 2))))


# ------------------------------------------------------------ level sets


@pytest.mark.parametrize(
    "sys,zeta,box",
    [
        (robot_system(), 1.0, (-3, 1, -2, 2)),
        (platoon_system(1.0), 1.0, (-3, 1, -2, 2)),
        (platoon_system(2.0), 2.0, (-5, 1, -3, 3)),
    ],
)
def test_level_set_is_circle(sys, zeta, box):
    ls = trace_level_set(extract_char_fn(sys), box, 1e-2)
    pts = ls.points()
    assert pts.size > 100
    assert np.max(np.abs(np.abs(pts + zeta) - zeta)) < 1e-6
    assert len(ls.polylines) == 1 and ls.closed == [True]


def test_default_box_contains_level_set():
    cf = extract_char_fn(platoon_system(2.0))
    x0, x1, y0, y1 = default_box(cf)
    assert x0 <= -4 and x1 >= 0 and y0 <= -2 and y1 >= 2
    ls = trace_level_set(cf)
    assert np.max(np.abs(np.abs(ls.points() + 2) - 2)) < 1e-6


def test_level_set_quartic_matches_modulus():
    cf = extract_char_fn(QUARTIC)
    ls = trace_level_set(cf, (-3, 1, -2, 2), 2e-2)
    vals = np.abs(cf(ls.points()))
    assert np.max(np.abs(vals - 1)) < 1e-6


def test_constant_phi_gives_empty_set():
    f = RatFun(Poly([0.5]), Poly([1.0]))
    ls = trace_level_set(f, (-1, 1, -1, 1), 0.1)
    assert ls.polylines == []


def test_level_set_errors():
    cf = extract_char_fn(robot_system())
    with pytest.raises(EmptyBox):
        trace_level_set(cf, (1, 1, -1, 1))
    with pytest.raises(ValueError):
        trace_level_set(cf, (-3, 1, -2, 2), 0.0)


def test_level_set_csv_rows():
    ls = trace_level_set(extract_char_fn(robot_system()), (-3, 1, -2, 2), 0.05)
    rows = list(ls.csv_rows())
    assert len(rows) == ls.points().size
    assert {r[2] for r in rows} == {0}


# ------------------------------------------------------------ resolvent estimates


@pytest.mark.parametrize("lam", [1.0, 0.05 + 0.3j, -2.5, -1 + 1.5j])
@pytest.mark.parametrize("p", [1.0, 2.0, np.inf])
def test_robot_interval_contains_exact_norm(lam, p):
    # |R(lam, A)| = 1/(|lam+1| - 1) on every l^p for this scalar Toeplitz kernel
    sys = robot_system(p)
    est = resolvent_estimate(sys, extract_char_fn(sys), lam)
    exact = 1 / abs(abs(lam + 1) - 1)
    assert est.lower - 1e-12 <= exact <= est.upper + 1e-12
    assert est.witness_ratio <= est.q_norm * (1 + 1e-12)
    assert est.witness_defect <= 1e-3 * est.q_norm


@pytest.mark.parametrize("lam", [0.2j, 0.5 + 0.5j, -3.5 + 0.2j])
def test_platoon_interval_contains_symbol_norm(lam):
    sys = platoon_system(1.0, 2.0)
    cf = extract_char_fn(sys)
    est = resolvent_estimate(sys, cf, lam)
    exact = symbol_sup(sys, lam)
    assert est.lower - 1e-9 <= exact <= est.upper + 1e-9


@pytest.mark.parametrize("lam", [0.3j, 0.4 + 0.1j, -2.6])
def test_off_diagonal_norm_equals_center(lam):
    # for p = 2 the off-diagonal part's norm is again a symbol sup
    sys = platoon_system(1.0, 2.0)
    cf = extract_char_fn(sys)
    blocks, dmin = off_diagonal_blocks(sys, cf, lam)
    z = np.exp(2j * np.pi * np.arange(4096) / 4096)
    offs = np.arange(blocks.shape[0]) + dmin
    S = np.einsum("zd,dij->zij", z[:, None] ** offs[None], blocks)
    sup = np.max(np.linalg.norm(S, 2, axis=(1, 2)))
    est = resolvent_estimate(sys, cf, lam, witness=False)
    assert sup == pytest.approx(est.center, rel=1e-6)


def test_witness_state_is_coherent():
    sys = robot_system(1.0)
    cf = extract_char_fn(sys)
    x = witness_state(sys, cf, 1.0, 10)
    assert x.n == 10 and x.norm(1) == pytest.approx(10.0)


def test_witness_length_grows_near_level_set():
    assert witness_length(0.5, 2.0) < witness_length(0.99, 2.0)


def test_blowup_slope_along_axis():
    for sys in (robot_system(), platoon_system(1.0)):
        cf = extract_char_fn(sys)
        s = np.geomspace(1e-4, 1e-2, 9)
        c = [resolvent_estimate(sys, cf, 1j * v, witness=False).center for v in s]
        slope = np.polyfit(np.log(s), np.log(c), 1)[0]
        assert slope == pytest.approx(-cf.n_phi, abs=0.05)


def test_estimate_on_level_set_rejected():
    sys = robot_system()
    with pytest.raises(OnLevelSet):
        resolvent_estimate(sys, extract_char_fn(sys), -1 + 1j)
    with pytest.raises(NotInSpectrum):
        resolvent_estimate(sys, extract_char_fn(sys), -1.0)


# ------------------------------------------------------------ approximate eigenvectors


@settings(max_examples=30, deadline=None)
@given(st.floats(0.05, 2 * np.pi - 0.05), st.integers(1, 40), st.sampled_from([1.0, 1.5, 2.0, 3.0]))
def test_defect_formula(theta, n, p):
    sys = platoon_system(1.0, p)
    cf = extract_char_fn(sys)
    lam = -1 + np.exp(1j * theta)
    _, defect, formula = approx_eigenvector(sys, cf, lam, n)
    assert defect == pytest.approx(formula, rel=1e-10)


def test_robot_defect_value():
    sys = robot_system(1.0)
    _, defect, formula = approx_eigenvector(sys, extract_char_fn(sys), 0.0, 10)
    assert defect == pytest.approx(2 / 21, rel=1e-12)
    assert formula == pytest.approx(2 / 21, rel=1e-12)


def test_defect_rate():
    sys = robot_system(2.0)
    cf = extract_char_fn(sys)
    d = [approx_eigenvector(sys, cf, -1 + 1j, n)[1] for n in (10, 100, 1000)]
    for a, b, na, nb in zip(d, d[1:], (10, 100), (100, 1000)):
        assert a / b == pytest.approx(((2 * nb + 1) / (2 * na + 1)) ** 0.5, rel=1e-10)


def test_approx_eigenvector_errors():
    cf = extract_char_fn(robot_system())
    with pytest.raises(WrongSpace):
        approx_eigenvector(robot_system(np.inf), cf, 0.0, 5)
    with pytest.raises(NotInSpectrum):
        approx_eigenvector(robot_system(), cf, 0.5, 5)


# ------------------------------------------------------------ boundedness


def test_contractivity():
    sys = robot_system()
    con = check_contractivity(sys, extract_char_fn(sys))
    assert con.passes and abs(con.achieved_sup - 1) <= 1e-9
    sys = platoon_system(1.0)
    con = check_contractivity(sys, extract_char_fn(sys))
    assert not con.passes and con.achieved_sup > 1


def test_repeated_pole_forms():
    assert repeated_pole_form(extract_char_fn(robot_system()).phi) == pytest.approx((1.0, 1))
    z, k = repeated_pole_form(extract_char_fn(platoon_system(2.0)).phi)
    assert z == pytest.approx(2.0) and k == 3
    assert repeated_pole_form(extract_char_fn(QUARTIC).phi) is None


def test_boundedness_verdicts():
    sys = robot_system()
    assert check_uniform_boundedness(sys, extract_char_fn(sys)).verdict == "proved_contractive"
    rep = check_uniform_boundedness(platoon_system(1.0), extract_char_fn(platoon_system(1.0)))
    assert rep.verdict == "proved_bounded_repeated_pole"
    assert rep.condition1_sup == pytest.approx(8 / 7, rel=1e-3)
    assert rep.condition2_sup == pytest.approx(1.0)
    rep = check_uniform_boundedness(QUARTIC, extract_char_fn(QUARTIC))
    assert rep.verdict == "numeric_pass" and not rep.rigorous


def test_condition2_probe_robot_is_one():
    by_n, _ = condition2_probe(extract_char_fn(robot_system()), 10)
    assert np.allclose(by_n, 1.0, atol=1e-6)
