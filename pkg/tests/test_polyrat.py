import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cascadekit.errors import DegenerateDenominator, DegreeTooLarge
from cascadekit.polyrat import (
    Poly,
    RatFun,
    modulus_diff_along,
    modulus_diff_on_axis,
    reduce_coprime,
    resultant,
)

roots_st = st.lists(
    st.complex_numbers(min_magnitude=0.1, max_magnitude=3.0, allow_nan=False, allow_infinity=False),
    min_size=1,
    max_size=4,
)


def product_resultant(pr, qr, a=1.0, b=1.0):
    # a^deg q * b^deg p * prod (r_i - s_j): the root-product formula
    return a ** len(qr) * b ** len(pr) * np.prod([ri - sj for ri in pr for sj in qr])


def test_poly_basic_arithmetic():
    p = Poly([1, 2])  # 1 + 2x
    q = Poly([0, 1, 1])
    assert (p * q).coeffs.tolist() == [0, 1, 3, 2]
    assert (p + q).coeffs.tolist() == [1, 3, 1]
    assert (p - p).is_zero()
    assert Poly().degree == -1
    assert p(2.0) == 5.0


def test_degree_cap():
    with pytest.raises(DegreeTooLarge):
        Poly(np.ones(100))


def test_zero_denominator():
    with pytest.raises(DegenerateDenominator):
        RatFun(Poly([1.0]), Poly())
    with pytest.raises(DegenerateDenominator):
        reduce_coprime([1.0], [0.0, 0.0])


def test_resultant_small_cases():
    # x - 1 and x - 3
    assert resultant(Poly([-1, 1]), Poly([-3, 1])) == pytest.approx(-2.0)
    assert resultant(Poly([-1, 1]), Poly([-1, 1])) == pytest.approx(0.0)


@settings(max_examples=60, deadline=None)
@given(roots_st, roots_st)
def test_resultant_matches_root_product(pr, qr):
    p = Poly.from_roots(pr)
    q = Poly.from_roots(qr)
    got = resultant(p, q)
    want = product_resultant(pr, qr)
    scale = np.prod([abs(r) + abs(s) for r in pr for s in qr])
    assert abs(got - want) <= 1e-9 * scale


@settings(max_examples=60, deadline=None)
@given(roots_st, roots_st, roots_st)
def test_reduce_coprime_preserves_values(common, extra_num, extra_den):
    # the cancelled representation agrees with the raw quotient off the poles
    num = Poly.from_roots(common + extra_num)
    den = Poly.from_roots(common + extra_den)
    f = reduce_coprime(num, den)
    assert abs(f.den.lead - 1) < 1e-12
    z = np.array([0.37 + 4.1j, -5.2 + 0.3j, 6.0 - 2.0j])
    raw = num(z) / den(z)
    assert np.allclose(f(z), raw, rtol=1e-6, atol=1e-9)


def test_reduce_coprime_cancels_common_factor():
    # (x+1)(x+2) / ((x+1)(x+3)) -> (x+2)/(x+3)
    f = reduce_coprime(Poly.from_roots([-1, -2]), Poly.from_roots([-1, -3]))
    assert f.num.degree == 1 and f.den.degree == 1
    assert np.allclose(f.den.roots(), [-3])
    assert f.is_coprime()


def test_reduce_coprime_repeated_roots():
    # (x+1)^2 / (x+1)^3 -> 1/(x+1)
    f = reduce_coprime(Poly.from_roots([-1, -1]), Poly.from_roots([-1, -1, -1]))
    assert f.num.degree == 0 and f.den.degree == 1
    assert np.allclose(f.den.coeffs, [1, 1])


def test_reduce_coprime_keeps_coprime_input():
    f = reduce_coprime([2.0], Poly.from_roots([-1, -1]))
    assert f.den.degree == 2
    assert f(0.0) == pytest.approx(2.0)


def test_taylor_against_finite_differences():
    f = RatFun(Poly([1.0]), Poly([1.0, 1.0]))  # 1/(1+x)
    c = f.taylor(0.0, 5)
    assert np.allclose(c, [(-1) ** k for k in range(6)])
    g = RatFun(Poly([2.0, 0.5]), Poly([3.0, 1.0, 1.0]))
    h = 1e-4
    d1 = (g(0.2 + h) - g(0.2 - h)) / (2 * h)
    assert g.taylor(0.2, 2)[1] == pytest.approx(d1, rel=1e-7)


def test_deriv_against_finite_difference():
    g = RatFun(Poly([2.0, 0.5]), Poly([3.0, 1.0, 1.0]))
    h = 1e-5
    x = 0.7 - 0.2j
    assert g.deriv()(x) == pytest.approx((g(x + h) - g(x - h)) / (2 * h), rel=1e-8)


def test_modulus_diff_on_axis_robot():
    # phi = 1/(1+x): |1+is|^2 - 1 = s^2
    r = modulus_diff_on_axis(RatFun(Poly([1.0]), Poly([1.0, 1.0])))
    assert np.allclose(r.coeffs, [0, 0, 1])


@settings(max_examples=40, deadline=None)
@given(roots_st, st.floats(-3, 3))
def test_modulus_diff_matches_direct(den_roots, s):
    f = RatFun(Poly([1.3, -0.2]), Poly.from_roots(den_roots))
    r = modulus_diff_on_axis(f)
    lam = 1j * s
    direct = abs(f.den(lam)) ** 2 - abs(f.num(lam)) ** 2
    assert r(s) == pytest.approx(direct, rel=1e-9, abs=1e-9 * (1 + abs(f.den(lam)) ** 2))


def test_modulus_diff_real_direction():
    f = RatFun(Poly([2.0]), Poly([2.0, 1.0]))
    r = modulus_diff_along(f, 1.0)
    for x in (0.3, -1.2, 5.0):
        assert r(x) == pytest.approx((2 + x) ** 2 - 4)


def test_imag_residue_is_roundoff_only():
    rng = np.random.default_rng(3)
    c = rng.normal(size=4) + 1j * rng.normal(size=4)
    f = RatFun(Poly(c[:2]), Poly(c))
    r = modulus_diff_on_axis(f)
    assert r.imag_residue <= 1e-14 * np.max(np.abs(c)) ** 2
