"""Cascade systems ``x'_k = A0 x_k + A1 x_{k-1}`` on l^p(C^m).

Extraction of the characteristic function, the standing-assumption checks,
the resolvent growth parameter, eigenvectors for p = inf and the lift ``L``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    CascadeError,
    ConfigError,
    NoCharacteristicFunction,
    NotEvenOrder,
    NotInRange,
    NotInSpectrum,
    WrongSpace,
)
from .polyrat import Poly, RatFun, modulus_diff_along, modulus_diff_on_axis, reduce_coprime

MAX_BLOCK = 16
A2_TOL = 1e-9
A3_MARGIN = 1e-10
A4_TOL = 1e-9
NPHI_TOL = 1e-10
RANK_TOL = 1e-12


def parse_p(p):
    if isinstance(p, str):
        if p.lower() in ("inf", "infinity", "oo"):
            return np.inf
        p = float(p)
    p = float(p)
    if not (p >= 1.0):
        raise ConfigError(f"p must lie in [1, inf], got {p}")
    return p


def p_label(p):
    return "inf" if np.isinf(p) else (int(p) if float(p).is_integer() else float(p))


@dataclass(frozen=True, eq=False)
class CascadeSystem:
    A0: np.ndarray
    A1: np.ndarray
    p: float = 1.0
    name: str = ""

    def __post_init__(self):
        A0 = np.array(self.A0, dtype=complex)
        A1 = np.array(self.A1, dtype=complex)
        if A0.ndim != 2 or A0.shape[0] != A0.shape[1]:
            raise ConfigError(f"A0 must be square, got shape {A0.shape}")
        if A1.shape != A0.shape:
            raise ConfigError(f"A1 shape {A1.shape} does not match A0 shape {A0.shape}")
        if A0.shape[0] > MAX_BLOCK:
            raise ConfigError(f"block size {A0.shape[0]} exceeds {MAX_BLOCK}")
        A0.setflags(write=False)
        A1.setflags(write=False)
        object.__setattr__(self, "A0", A0)
        object.__setattr__(self, "A1", A1)
        object.__setattr__(self, "p", parse_p(self.p))

    @property
    def m(self):
        return self.A0.shape[0]

    def with_p(self, p):
        return CascadeSystem(self.A0, self.A1, p, self.name)

    def resolvent0(self, lam):
        """``R(lam, A0) = (lam - A0)^{-1}``."""
        return np.linalg.solve(lam * np.eye(self.m) - self.A0, np.eye(self.m))

    def sigma0(self):
        return np.linalg.eigvals(self.A0)

    def a1_holds(self):
        return bool(np.any(self.A1 != 0))


@dataclass(frozen=True, eq=False)
class CharacteristicFn:
    phi: RatFun
    validation_residual: float
    n_phi: int | None = None
    phi0: complex | None = None
    dphi0: complex | None = None
    dphi: RatFun = field(default=None, repr=False)

    def __call__(self, lam):
        return self.phi(lam)

    def derivative(self, lam):
        return self.dphi(lam)

    def poles(self):
        return self.phi.poles()

    def one_minus_abs(self, lam):
        """``1 - |phi(lam)|`` without cancellation on the real and imaginary axes."""
        lam = complex(lam)
        p, q = self.phi.num, self.phi.den
        if lam.real == 0.0 or lam.imag == 0.0:
            if lam.real == 0.0:
                r = modulus_diff_on_axis(self.phi)(lam.imag)
            else:
                r = modulus_diff_along(self.phi, 1.0)(lam.real)
            aq = abs(q(lam))
            ap = 0.0 if p.is_zero() else abs(p(lam))
            return float(r / (aq * (aq + ap)))
        return 1.0 - abs(self.phi(lam))


def _fro(M):
    return float(np.linalg.norm(M))


def extract_char_fn(sys, n_points=20):
    """Characteristic function ``phi`` with ``A1 R(lam, A0) A1 = phi(lam) A1``.

    ``phi * det(lam - A0)`` is a polynomial of degree < m; its coefficients
    are read off from samples on a circle well outside sigma(A0) by a
    discrete Fourier transform, then the fraction is reduced.
    """
    if not sys.a1_holds():
        raise NoCharacteristicFunction("(A1) violated: A1 = 0")
    m = sys.m
    A1 = sys.A1
    a1n2 = _fro(A1) ** 2
    charpoly = Poly(np.poly(sys.A0)[::-1])
    radius = 2.0 * (1.0 + np.linalg.norm(sys.A0, 2))
    n = max(n_points, 2 * m)
    w = np.exp(2j * np.pi * np.arange(n) / n)
    lams = radius * w
    coef = np.empty(n, dtype=complex)
    for j, lam in enumerate(lams):
        M = A1 @ sys.resolvent0(lam) @ A1
        coef[j] = np.vdot(A1, M) / a1n2
    vals = coef * charpoly(lams)
    b = np.fft.fft(vals) / n  # b[k] = numerator coefficient k times radius**k
    num = b[:m] / radius ** np.arange(m)
    if not (np.any(sys.A0.imag) or np.any(sys.A1.imag)):
        num = num.real  # real data: discard round-off imaginary parts
    phi = reduce_coprime(Poly(num), charpoly)
    # defining identity at fresh points, using the reduced function itself
    check = radius * np.exp(2j * np.pi * (np.arange(n) + 0.5) / n)
    resid = 0.0
    for lam in np.concatenate([lams, check]):
        M = A1 @ sys.resolvent0(lam) @ A1
        resid = max(resid, _fro(M - phi(lam) * A1))
    if resid > A2_TOL * _fro(A1):
        raise NoCharacteristicFunction(
            f"(A2) fails: A1 R(lam,A0) A1 is not proportional to A1 (residual {resid:.3e})"
        )
    dphi = phi.deriv()
    phi0 = dphi0 = None
    if not np.any(np.isclose(sys.sigma0(), 0.0, atol=1e-12)) and abs(phi.den(0.0)) > 0:
        phi0 = complex(phi(0.0))
        dphi0 = complex(dphi(0.0))
    cf = CharacteristicFn(phi, resid, None, phi0, dphi0, dphi)
    if phi0 is not None and abs(abs(phi0) - 1.0) <= A4_TOL:
        try:
            n_phi = resolvent_growth_parameter(cf)
        except NotEvenOrder:
            n_phi = None
        cf = CharacteristicFn(phi, resid, n_phi, phi0, dphi0, dphi)
    return cf


def resolvent_growth_parameter(cf, tol=NPHI_TOL):
    """Even order ``n`` with ``1 - |phi(is)| ~ |s|^n`` as ``s -> 0``."""
    r = modulus_diff_on_axis(cf.phi).coeffs
    if r.size == 0:
        raise NotEvenOrder("|phi(is)| = 1 identically on the imaginary axis")
    big = np.max(np.abs(r))
    idx = np.nonzero(np.abs(r) > tol * big)[0]
    n = int(idx[0])
    if n == 0:
        raise NotEvenOrder(f"|phi(0)| != 1 (r(0) = {r[0]:.3e}); 0 is not on the level set")
    if n % 2 or r[n] < 0:
        raise NotEvenOrder(f"lowest surviving coefficient of r is at s^{n} with value {r[n]:.3e}")
    return n


@dataclass
class AssumptionReport:
    a1_holds: bool
    a2_holds: bool = False
    a3_holds: bool = False
    a4_holds: bool = False
    a5_status: str = "unknown"
    diagnostics: list = field(default_factory=list)
    char_fn: CharacteristicFn | None = field(default=None, repr=False)
    boundedness: object = field(default=None, repr=False)

    def to_dict(self):
        return {
            "a1_holds": self.a1_holds,
            "a2_holds": self.a2_holds,
            "a3_holds": self.a3_holds,
            "a4_holds": self.a4_holds,
            "a5_status": self.a5_status,
            "diagnostics": list(self.diagnostics),
        }


def _rank(M):
    s = np.linalg.svd(M, compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.sum(s > RANK_TOL * s[0] * max(M.shape)))


def remark_pathologies(sys):
    """Eigenvalues of A0 that are forced into sigma(A) by the kernel/range tests."""
    out = []
    m = sys.m
    seen = []
    for lam in sys.sigma0():
        if any(abs(lam - s) < 1e-8 * max(1.0, abs(s)) for s in seen):
            continue
        seen.append(lam)
        B = lam * np.eye(m) - sys.A0
        if _rank(np.vstack([B, sys.A1])) < m:
            out.append(f"ker({lam:.6g} - A0) and ker(A1) intersect nontrivially: {lam:.6g} lies in sigma(A)")
        if _rank(np.hstack([B, sys.A1])) < m:
            out.append(f"ran({lam:.6g} - A0) + ran(A1) != C^m: {lam:.6g} lies in sigma(A)")
    return out


def probe_right_half_plane(sys, cf, n_grid=400):
    """Largest |phi| on a grid of the open right half plane (should stay < 1)."""
    a0 = np.linalg.norm(sys.A0, 2)
    a1 = np.linalg.norm(sys.A1, 2)
    extent = max(4.0 * a0, a0 + a1, 1.0)
    re = np.linspace(extent / n_grid, extent, n_grid)
    im = np.linspace(-extent, extent, n_grid)
    Z = re[None, :] + 1j * im[:, None]
    vals = np.abs(cf.phi(Z))
    k = np.unravel_index(np.argmax(vals), vals.shape)
    return float(vals[k]), complex(Z[k])


def axis_touches_only_at_zero(cf, n_phi):
    """True if ``r(s) = s^n r0(s)`` has ``r0 > 0`` on the whole real line."""
    r = modulus_diff_on_axis(cf.phi).coeffs
    r0 = r[n_phi:]
    if r0.size == 0 or r0[0] <= 0:
        return False
    if r0.size == 1:
        return True
    roots = np.roots(r0[::-1])
    real_roots = roots[np.abs(roots.imag) <= 1e-7 * np.maximum(1.0, np.abs(roots))].real
    if real_roots.size == 0:
        return True
    # sign-change refinement near candidate roots of even multiplicity
    for x in real_roots:
        xs = x + np.linspace(-1e-4, 1e-4, 41) * max(1.0, abs(x))
        if np.any(np.polyval(r0[::-1], xs) <= 0):
            return False
    return True


def check_assumptions(sys, with_a5=True):
    report = AssumptionReport(a1_holds=sys.a1_holds())
    report.diagnostics.extend(remark_pathologies(sys))
    if not report.a1_holds:
        report.diagnostics.append("(A1) violated: A1 = 0")
        return report
    try:
        cf = extract_char_fn(sys)
    except NoCharacteristicFunction as exc:
        report.diagnostics.append(str(exc))
        return report
    report.a2_holds = True
    report.char_fn = cf
    eig = sys.sigma0()
    report.a3_holds = bool(np.all(eig.real < -A3_MARGIN))
    if not report.a3_holds:
        report.diagnostics.append(f"(A3) violated: max Re sigma(A0) = {eig.real.max():.6g}")
        return report
    a4 = True
    if cf.phi0 is None or abs(abs(cf.phi0) - 1.0) > A4_TOL:
        a4 = False
        report.diagnostics.append(f"(A4) violated: |phi(0)| = {abs(cf.phi0):.12g} != 1")
    elif abs(cf.dphi0) <= A4_TOL:
        a4 = False
        report.diagnostics.append("(A4) violated: phi'(0) = 0")
    else:
        if cf.n_phi is None:
            a4 = False
            report.diagnostics.append("(A4) violated: 1 - |phi(is)| has no even positive order at 0")
        elif not axis_touches_only_at_zero(cf, cf.n_phi):
            a4 = False
            report.diagnostics.append("(A4) violated: level set meets the imaginary axis away from 0")
        else:
            top, where = probe_right_half_plane(sys, cf)
            if top >= 1.0:
                a4 = False
                report.diagnostics.append(f"(A4) violated: |phi({where:.4g})| = {top:.6g} >= 1 in the right half plane")
    report.a4_holds = a4
    if with_a5 and a4:
        from .spectral import assess_boundedness

        verdict = assess_boundedness(sys, cf)
        report.a5_status = verdict.verdict
        report.boundedness = verdict
    return report


@dataclass(frozen=True)
class KernelVector:
    """Eigenvector ``(phi(lam)^k x0)_k`` of A on l^inf."""

    x0: np.ndarray
    ratio: complex

    def block(self, k):
        return self.ratio ** k * self.x0

    def as_state(self):
        from .semigroup import SeqState, TailRule

        tail = TailRule([self.x0], self.ratio)
        return SeqState(np.zeros((0, self.x0.size), dtype=complex), 0, tail, tail, np.inf)


def kernel_basis(sys, cf, lam, tol=1e-9):
    """Basis of ``ker(lam - A)`` on l^inf for ``lam`` on the level set."""
    if not np.isinf(sys.p):
        raise WrongSpace("eigenvectors on the level set exist only for p = inf")
    lam = complex(lam)
    if np.any(np.abs(sys.sigma0() - lam) < 1e-12):
        raise NotInSpectrum(f"{lam} lies in sigma(A0)")
    ph = complex(cf(lam))
    if abs(abs(ph) - 1.0) > tol:
        raise NotInSpectrum(f"|phi({lam})| = {abs(ph):.12g} != 1")
    B = sys.resolvent0(lam) @ sys.A1
    U, s, _ = np.linalg.svd(B)
    r = _rank(sys.A1)
    return [KernelVector(U[:, j] * np.exp(-1j * np.angle(U[np.argmax(np.abs(U[:, j])), j])), ph) for j in range(r)]


def _range_basis(M):
    U, s, _ = np.linalg.svd(M)
    if s.size == 0 or s[0] == 0:
        return U[:, :0]
    return U[:, : int(np.sum(s > RANK_TOL * s[0] * max(M.shape)))]


def limit_lift(sys, y0, tol=1e-10):
    """``L y0``: the unique ``z0`` in ran(A0^{-1} A1) with ``A1 A0^{-1} z0 = y0``."""
    y0 = np.asarray(y0, dtype=complex).ravel()
    ny = np.linalg.norm(y0)
    if ny == 0:
        return np.zeros(sys.m, dtype=complex)
    A0inv = np.linalg.inv(sys.A0)
    ran1 = _range_basis(sys.A1)
    proj = ran1 @ (ran1.conj().T @ y0)
    if np.linalg.norm(y0 - proj) > tol * ny * 10:
        raise NotInRange(f"y0 is not in ran(A1) (residual {np.linalg.norm(y0 - proj):.3e})")
    Bz = _range_basis(A0inv @ sys.A1)
    G = sys.A1 @ A0inv @ Bz
    w, *_ = np.linalg.lstsq(G, y0, rcond=None)
    z0 = Bz @ w
    res = np.linalg.norm(G @ w - y0)
    if res > tol * ny:
        raise NotInRange(f"A1 A0^-1 z = y0 has no solution in ran(A0^-1 A1) (residual {res:.3e})")
    return z0


def system_summary(sys):
    return {"m": sys.m, "p": p_label(sys.p), "name": sys.name}


__all__ = [
    "AssumptionReport",
    "CascadeError",
    "CascadeSystem",
    "CharacteristicFn",
    "KernelVector",
    "check_assumptions",
    "extract_char_fn",
    "kernel_basis",
    "limit_lift",
    "remark_pathologies",
    "resolvent_growth_parameter",
]
