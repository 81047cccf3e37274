import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cascadekit.cascade import (
    CascadeSystem,
    check_assumptions,
    extract_char_fn,
    kernel_basis,
    limit_lift,
    parse_p,
    remark_pathologies,
    resolvent_growth_parameter,
)
from cascadekit.errors import ConfigError, NoCharacteristicFunction, NotInRange, NotInSpectrum, WrongSpace
from cascadekit.models import platoon_system, robot_system
from cascadekit.semigroup import apply_generator


def direct_phi(sys, lam):
    # oracle: project A1 R A1 onto A1 with a plain linear solve
    M = sys.A1 @ np.linalg.solve(lam * np.eye(sys.m) - sys.A0, sys.A1)
    return np.vdot(sys.A1, M) / np.vdot(sys.A1, sys.A1)


QUARTIC = CascadeSystem(np.array([[0.0, 1.0], [-2.0, -2.0]]), np.array([[0.0, -1.0], [0.0, 0.0]]), 1.0, "quartic")


def test_parse_p():
    assert parse_p("inf") == np.inf
    assert parse_p(2) == 2.0
    with pytest.raises(ConfigError):
        parse_p(0.5)


def test_shape_validation():
    with pytest.raises(ConfigError):
        CascadeSystem(np.eye(2), np.eye(3))


@pytest.mark.parametrize("sys", [robot_system(), platoon_system(1.0), platoon_system(2.0), QUARTIC])
def test_phi_matches_direct_solve(sys):
    cf = extract_char_fn(sys)
    for lam in (0.3 + 0.7j, -0.2 - 1.5j, 2.0, 5j):
        assert cf(lam) == pytest.approx(direct_phi(sys, lam), rel=1e-10)
    assert cf.validation_residual < 1e-10


def test_robot_values():
    cf = extract_char_fn(robot_system())
    assert cf.n_phi == 2
    assert cf.phi0 == pytest.approx(1.0)
    assert cf.dphi0 == pytest.approx(-1.0)


@pytest.mark.parametrize("zeta", [0.5, 1.0, 2.0])
def test_platoon_closed_form(zeta):
    cf = extract_char_fn(platoon_system(zeta))
    for lam in (0.1j, -0.5 + 0.2j, 3.0):
        assert cf(lam) == pytest.approx(zeta ** 3 / (lam + zeta) ** 3, rel=1e-10)
    assert cf.n_phi == 2
    assert cf.dphi0 == pytest.approx(-3.0 / zeta)


def test_quartic_order():
    cf = extract_char_fn(QUARTIC)
    assert cf.n_phi == 4
    for s in (0.3, 0.1):
        assert cf(1j * s) == pytest.approx(2 / ((1j * s) ** 2 + 2j * s + 2))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_rank_one_coupling_is_bilinear_form(seed):
    # A1 = u v^T always satisfies the proportionality; phi = v^T R u
    rng = np.random.default_rng(seed)
    m = int(rng.integers(1, 5))
    A0 = rng.normal(size=(m, m)) - 3 * np.eye(m)
    u, v = rng.normal(size=m), rng.normal(size=m)
    sys = CascadeSystem(A0, np.outer(u, v))
    cf = extract_char_fn(sys)
    lam = complex(rng.normal(), rng.normal())
    want = v @ np.linalg.solve(lam * np.eye(m) - A0, u)
    assert cf(lam) == pytest.approx(want, rel=1e-8, abs=1e-10)


def test_identity_coupling_fails_a2():
    sys = CascadeSystem(np.diag([-1.0, -2.0]), np.eye(2))
    with pytest.raises(NoCharacteristicFunction):
        extract_char_fn(sys)
    rep = check_assumptions(sys)
    assert rep.a1_holds and not rep.a2_holds


def test_zero_coupling_fails_a1():
    rep = check_assumptions(CascadeSystem([[-1.0]], [[0.0]]))
    assert not rep.a1_holds
    assert any(d.startswith("(A1)") for d in rep.diagnostics)


def test_unstable_a0_fails_a3():
    rep = check_assumptions(CascadeSystem([[0.5]], [[1.0]]))
    assert rep.a2_holds and not rep.a3_holds


def test_phi0_off_circle_fails_a4():
    # phi = 0.5/(lam+1): |phi(0)| = 1/2
    rep = check_assumptions(CascadeSystem([[-1.0]], [[0.5]]))
    assert rep.a3_holds and not rep.a4_holds


def test_report_fields_for_presets():
    rep = check_assumptions(robot_system())
    assert (rep.a1_holds, rep.a2_holds, rep.a3_holds, rep.a4_holds) == (True,) * 4
    assert rep.a5_status == "proved_contractive"
    rep = check_assumptions(platoon_system(1.0))
    assert rep.a4_holds
    assert rep.a5_status == "proved_bounded_repeated_pole"
    assert set(rep.to_dict()) == {"a1_holds", "a2_holds", "a3_holds", "a4_holds", "a5_status", "diagnostics"}


def test_growth_parameter_rejects_off_circle():
    from cascadekit.errors import NotEvenOrder
    from cascadekit.polyrat import Poly, RatFun

    class F:
        phi = RatFun(Poly([0.5]), Poly([1.0, 1.0]))

    with pytest.raises(NotEvenOrder):
        resolvent_growth_parameter(F)


def test_pathology_remark():
    # e_2 is an eigenvector of A0 for -2 and lies in ker A1
    sys = CascadeSystem(np.diag([-1.0, -2.0]), np.array([[0.0, 0.0], [1.0, 0.0]]))
    notes = remark_pathologies(sys)
    assert any("-2" in n and "ker" in n for n in notes)


@pytest.mark.parametrize("lam", [0.0, -1 + 1j, -2.0])
def test_kernel_vector_is_eigenvector(lam):
    sys = robot_system(np.inf)
    cf = extract_char_fn(sys)
    (kv,) = kernel_basis(sys, cf, lam)
    x = kv.as_state()
    ax = apply_generator(sys, x)
    assert ax.sup_diff(x.scaled(lam)) < 1e-12


def test_kernel_vector_platoon():
    sys = platoon_system(1.0, np.inf)
    cf = extract_char_fn(sys)
    lam = -1 + np.exp(0.7j)
    for kv in kernel_basis(sys, cf, lam):
        x = kv.as_state()
        assert apply_generator(sys, x).sup_diff(x.scaled(lam)) < 1e-10


def test_kernel_basis_errors():
    cf = extract_char_fn(robot_system())
    with pytest.raises(WrongSpace):
        kernel_basis(robot_system(1.0), cf, 0.0)
    with pytest.raises(NotInSpectrum):
        kernel_basis(robot_system(np.inf), cf, 0.5)


def test_limit_lift_platoon():
    sys = platoon_system(1.0)
    for c in (1.0, -0.3):
        z = limit_lift(sys, [-c, 0.0, 0.0])
        assert np.allclose(z, [c, -c / 3, 0.0], atol=1e-12)
    z = limit_lift(sys, [1.0, 0, 0])
    M = sys.A1 @ np.linalg.inv(sys.A0)
    assert np.allclose(M @ z, [1.0, 0, 0])


def test_limit_lift_rejects_outside_range():
    with pytest.raises(NotInRange):
        limit_lift(platoon_system(1.0), [0.0, 1.0, 0.0])


def test_limit_lift_robot_is_negation():
    assert limit_lift(robot_system(np.inf), [2.0]) == pytest.approx([-2.0])
