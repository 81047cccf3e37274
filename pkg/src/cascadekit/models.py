"""Platoon and robot-rendezvous presets, robot closed forms, and the
variable-coefficient robot chain with its resolvent-growth function m(r)."""

from __future__ import annotations

import functools
from dataclasses import dataclass, field
from math import lgamma, log, pi, sqrt
from typing import Callable

import numpy as np
from scipy.optimize import minimize_scalar

from .cascade import CascadeSystem
from .errors import DomainError, InfiniteM, OutOfRange, TooCloseToSpectrum

DIST_MARGIN = 1e-9


# ------------------------------------------------------------- platoon


@dataclass(frozen=True)
class PlatoonParams:
    """Feedback coefficients ``alpha0, alpha1, alpha2`` of the platoon model."""

    alpha0: complex = 1.0
    alpha1: complex = 3.0
    alpha2: complex = 3.0
    zeta: float | None = 1.0

    def __post_init__(self):
        if self.zeta is not None and not self.zeta > 0:
            raise ValueError("zeta must be positive")

    @classmethod
    def repeated(cls, zeta=1.0):
        """Coefficients of ``(lam + zeta)^3``."""
        zeta = float(zeta)
        if not zeta > 0:
            raise ValueError("zeta must be positive")
        return cls(zeta ** 3, 3 * zeta ** 2, 3 * zeta, zeta)

    @classmethod
    def from_feedback(cls, tau, beta1, beta2, beta3):
        """Controller ``u = beta1 y + beta2 w + beta3 a`` with time constant ``tau``."""
        if not tau > 0:
            raise ValueError("tau must be positive")
        return cls(-beta1 / tau, -beta2 / tau, (1 - beta3) / tau, None)

    def char_poly(self):
        """Ascending coefficients of ``lam^3 + alpha2 lam^2 + alpha1 lam + alpha0``."""
        return np.array([self.alpha0, self.alpha1, self.alpha2, 1.0], dtype=complex)


def platoon_system(params=None, p=1.0):
    """States (separation error, excess velocity, acceleration) per vehicle."""
    if params is None:
        params = PlatoonParams.repeated(1.0)
    elif not isinstance(params, PlatoonParams):
        params = PlatoonParams.repeated(float(params))
    a0, a1, a2 = params.alpha0, params.alpha1, params.alpha2
    real = all(complex(a).imag == 0 for a in (a0, a1, a2))
    dt = float if real else complex
    A0 = np.array([[0, 1, 0], [0, 0, 1], [-a0, -a1, -a2]], dtype=dt)
    A1 = np.zeros((3, 3), dtype=dt)
    A1[0, 1] = -1.0
    name = f"platoon(zeta={params.zeta:g})" if params.zeta is not None else "platoon"
    return CascadeSystem(A0, A1, p, name)


def robot_system(p=1.0):
    return CascadeSystem(np.array([[-1.0]]), np.array([[1.0]]), p, "robot")


# ------------------------------------------------------ robot closed forms


@dataclass
class RobotKernel:
    """Poisson weights ``e^{-t} t^n / n!`` for ``n = start .. start+len-1``.

    ``y_scaled[k] = e^{-t} y_k(t)`` on the same index range; the unscaled
    ``|y(t)|_1`` overflows for moderate t, so only scaled quantities are kept.
    """

    t: float
    start: int
    poisson: np.ndarray
    y_scaled: np.ndarray
    bound_value: float  # e^{-t}(1 + |y(t)|_1)

    @property
    def norm1_scaled(self):
        """``e^{-t} |y(t)|_1``."""
        return float(np.sum(np.abs(self.y_scaled)))

    @property
    def norm1(self):
        with np.errstate(over="ignore"):
            return float(np.exp(self.t) * self.norm1_scaled) if self.t < 700 else float("inf")


def poisson_weights(t, mass_tol=1e-15):
    """Poisson probabilities ``e^{-t} t^n / n!`` around the mode.

    Relative weights are built by the ratio recurrence outward from the mode
    (value 1 there), extended until the neglected mass is below ``mass_tol``,
    then normalised by their sum; this avoids both ``t^n / n!`` and the
    cancellation in ``-t + n log t - log n!`` for large t.
    """
    t = float(t)
    if t < 0:
        raise DomainError("t must be non-negative")
    if t == 0:
        return 0, np.array([1.0])
    mode = int(np.floor(t))
    right, left = [1.0], []
    w_hi = w_lo = 1.0
    n_hi = n_lo = mode
    total = 1.0
    while True:
        w_hi *= t / (n_hi + 1)
        n_hi += 1
        right.append(w_hi)
        total += w_hi
        if n_lo > 0:
            w_lo *= n_lo / t
            n_lo -= 1
            left.append(w_lo)
            total += w_lo
        # remaining right tail <= w_hi * t/(n_hi+1-t) (geometric majorant)
        tail_hi = w_hi * t / max(n_hi + 1 - t, 1e-300) if n_hi + 1 > t else np.inf
        tail_lo = w_lo * n_lo / max(t - n_lo, 1e-300) if n_lo > 0 else 0.0
        if tail_hi + tail_lo <= mass_tol * 1e-2 * total:
            break
    w = np.array(left[::-1] + right)
    return n_lo, w / w.sum()


def robot_kernel_closed_form(t, mass_tol=1e-15):
    """Poisson weights and the sequence ``y_k(t) = t^k/k! - t^{k+1}/(k+1)!`` (scaled by e^{-t})."""
    start, w = poisson_weights(t, mass_tol)
    # e^{-t} y_k = w_k - w_{k+1} for k >= 0
    nxt = np.append(w[1:], 0.0)
    y = w - nxt
    if start > 0:
        # below the window the weights increase monotonically, so the
        # differences there telescope to w_start - w_0
        below = w[0] - np.exp(-t)
    else:
        below = 0.0
    bound = float(np.exp(-t) + np.sum(np.abs(y)) + below)
    return RobotKernel(float(t), start, w, y, bound)


def robot_at_bound(t):
    """``e^{-t}(1 + |y(t)|_1)``, an upper bound for ``|A T(t)|`` in the robot model."""
    return robot_kernel_closed_form(t).bound_value


def robot_AT_bound_constant(t0):
    """Constant C with ``|A T(t)| <= C t^{-1/2}`` for all ``t >= t0 > 1``."""
    t0 = float(t0)
    if not t0 > 1:
        raise DomainError(f"t0 = {t0} must exceed 1")
    return sqrt(t0) * np.exp(-t0) + sqrt(2 / pi) * (1 - 1 / t0) ** (-t0 - 0.5)


def stirling_bound_scaled(t):
    """``e^{-t} 2 t^n / n!`` with ``n = floor(t)``."""
    n = int(np.floor(t))
    return 2 * np.exp(-t + (n * log(t) if t > 0 else 0.0) - lgamma(n + 1))


# ------------------------------------------------ variable-coefficient chain


@dataclass(frozen=True)
class RobotChain:
    """``xdot_k = x_{k-1} + alpha_k x_k`` with ``alpha_k = alphas[(k - offset) mod period]``.

    ``values`` is the closure of ``{alpha_k}``; for periodic rules it is the
    pattern itself.  A custom rule may be given as ``rule`` together with an
    explicit ``values`` set.
    """

    alphas: tuple = (-1.0,)
    offset: int = 0
    rule: Callable | None = field(default=None, compare=False)
    values: tuple | None = None

    def __post_init__(self):
        vals = self.omega()
        for a in vals:
            if not (abs(a + 1) <= 1e-14 or a.real < -1):
                raise ValueError(f"alpha = {a} is neither -1 nor has real part < -1")

    @classmethod
    def uniform(cls):
        return cls((-1.0,))

    def alpha(self, k):
        k = np.asarray(k)
        if self.rule is not None:
            return np.asarray(np.vectorize(self.rule, otypes=[complex])(k))
        pat = np.asarray(self.alphas, dtype=complex)
        return pat[np.mod(k - self.offset, pat.size)]

    def omega(self):
        vals = self.values if self.values is not None else self.alphas
        return np.unique(np.asarray(vals, dtype=complex))

    def dist(self, lam):
        lam = np.asarray(lam, dtype=complex)
        om = self.omega()
        return np.min(np.abs(lam[..., None] - om), axis=-1)


def varcoef_resolvent_apply(chain, x, lam, tol=1e-12):
    """``R(lam, A) x`` for the chain, with the bound ``|R(lam, A)| <= 1/(dist(lam, Omega) - 1)``.

    ``y_k = sum_l x_{k-l} prod_{j=0..l} 1/(lam - alpha_{k-j})`` satisfies
    ``y_k = (x_k + y_{k-1})/(lam - alpha_k)``; the sum is run by that
    recursion and cut where the geometric tail in ``1/dist`` drops below tol.
    """
    from .semigroup import SeqState

    lam = complex(lam)
    d = float(chain.dist(lam))
    if d <= 1 + DIST_MARGIN:
        raise TooCloseToSpectrum(f"dist({lam}, Omega) = {d:.12g} <= 1")
    if x.has_tails():
        raise ValueError("the chain resolvent is applied to finitely supported states")
    if x.m != 1:
        raise ValueError("the robot chain is scalar")
    extra = max(0, int(np.ceil((log(tol) + log(d - 1)) / -log(d))))
    a, b = x.offset, x.end
    ks = np.arange(a, b + extra)
    g = 1.0 / (lam - chain.alpha(ks))
    xin = np.zeros(ks.size, dtype=complex)
    xin[: x.n] = x.core[:, 0]
    y = np.empty(ks.size, dtype=complex)
    prev = 0.0
    for i in range(ks.size):
        prev = g[i] * (xin[i] + prev)
        y[i] = prev
    return SeqState(y[:, None], a, p=x.p), 1.0 / (d - 1.0)


def varcoef_apply_generator(chain, x):
    """``(A x)_k = x_{k-1} + alpha_k x_k`` for finitely supported x."""
    from .semigroup import SeqState

    a, b = x.offset, x.end
    ks = np.arange(a, b + 1)
    xs = x.window(a, b + 1)[:, 0]
    prev = x.window(a - 1, b)[:, 0]
    return SeqState((prev + chain.alpha(ks) * xs)[:, None], a, p=x.p)


# ---------------------------------------------------------- m(r), m_log


@dataclass(frozen=True)
class PsiRegion:
    """``{lam : Re lam <= -psi(|Im lam|)}`` for ``|Im lam| <= 1``.

    ``psi_minus_one`` (optional) returns ``psi(s) - 1`` without cancellation;
    m(r) depends on tiny excesses of the distance over 1.
    """

    psi: Callable
    psi_prime: Callable
    name: str = "psi"
    psi_minus_one: Callable | None = None

    def __post_init__(self):
        if abs(self.psi(0.0) - 1.0) > 1e-12:
            raise ValueError("psi(0) must be 1")
        s = np.linspace(0, 1, 1000)
        v = np.array([self.psi(x) for x in s])
        if np.any(np.diff(v) < -1e-14):
            raise ValueError("psi must be non-decreasing")
        if np.any(v[1:] <= 1.0):
            raise ValueError("psi(s) must exceed 1 for s > 0")

    @classmethod
    def power(cls, alpha):
        """``psi(s) = 1 + s^alpha``."""
        alpha = float(alpha)
        if alpha < 1:
            raise ValueError("alpha >= 1 required")

        def dpsi(s):
            if s > 0:
                return alpha * s ** (alpha - 1)
            return 1.0 if alpha == 1 else 0.0

        return cls(lambda s: 1.0 + s ** alpha, dpsi, f"power({alpha:g})", lambda s: s ** alpha)

    def _pm1(self, u):
        return self.psi_minus_one(u) if self.psi_minus_one is not None else self.psi(u) - 1.0

    def nearest(self, r):
        """``q(r)``: the root of ``u + psi(u) psi'(u) = r`` in ``(0, 1]``, by bisection."""
        def p(u):
            return u + self.psi(u) * self.psi_prime(u)

        if r > p(1.0):
            return None
        lo, hi = 0.0, 1.0
        for _ in range(200):
            mid = (lo + hi) / 2
            if p(mid) < r:
                lo = mid
            else:
                hi = mid
            if hi - lo <= 1e-16 * hi:
                break
        return (lo + hi) / 2

    def excess_at(self, r, u):
        """``|i r - boundary(u)| - 1`` with boundary point ``(-psi(u), u)``."""
        pm1 = self._pm1(u)
        sq = pm1 * (self.psi(u) + 1.0) + (u - r) ** 2  # |.|^2 - 1
        return sq / (sqrt(self.psi(u) ** 2 + (u - r) ** 2) + 1.0)

    def excess(self, r):
        """``dist(i r, region) - 1`` for ``r >= 0``."""
        r = abs(float(r))
        if self.psi_prime(0.0) == 0.0:
            u = self.nearest(r)
            if u is not None:
                d1 = self.psi_prime(u)
                # psi sqrt(1 + psi'^2) - 1, rearranged to avoid cancellation
                return self._pm1(u) + self.psi(u) * d1 * d1 / (sqrt(1.0 + d1 * d1) + 1.0)
        res = minimize_scalar(lambda u: self.excess_at(r, u), bounds=(0.0, 1.0), method="bounded",
                              options={"xatol": 1e-15})
        return float(min(self.excess_at(r, 0.0), self.excess_at(r, 1.0), float(res.fun)))

    def dist(self, r):
        return 1.0 + self.excess(r)


@dataclass
class MValue:
    r: float
    sup_form: float
    point_form: float

    @property
    def differs(self):
        return abs(self.sup_form - self.point_form) > 1e-9 * max(1.0, abs(self.point_form))

    @property
    def value(self):
        return self.sup_form

    def to_dict(self):
        return {"r": self.r, "sup_form": self.sup_form, "point_form": self.point_form, "differs": self.differs}


def _finite_excess(omega, s):
    """``min_alpha |i s - alpha| - 1`` without cancellation (``s`` scalar or array)."""
    s = np.asarray(s, dtype=float)[..., None]
    z = 1j * s - omega
    sq = (omega.real ** 2 - 1.0) + (s - omega.imag) ** 2
    return np.min(sq / (np.abs(z) + 1.0), axis=-1)


def m_of_r(source, r, n_grid=None):
    """``m(r)`` in both forms: the sup over ``r <= |s| <= 1`` and the value at ``s = r``.

    ``source`` is a RobotChain, a sequence of alpha values (``-1`` is always
    included), or a PsiRegion.  The sup is taken on a log grid (4000 points
    for finite sets, 400 for regions, whose distance is itself an
    optimisation) with local refinement at the best point.
    """
    if n_grid is None:
        n_grid = 400 if isinstance(source, PsiRegion) else 4000
    r = float(r)
    if not 0 < r <= 1:
        raise ValueError("r must lie in (0, 1]")
    if isinstance(source, PsiRegion):
        def excess(s):
            return source.excess(abs(s))

        def excess_grid(g):
            return np.array([excess(a) for a in g])
    else:
        omega = source.omega() if isinstance(source, RobotChain) else np.unique(np.asarray(source, complex))
        omega = np.union1d(omega, [-1.0 + 0j])
        # a point on Re = -1 puts i Im(alpha) at distance exactly 1
        touch = omega[(np.abs(omega.real + 1.0) <= 1e-14) & (np.abs(omega.imag) >= r) & (np.abs(omega.imag) <= 1.0)]
        if touch.size:
            raise InfiniteM(f"dist(i s, Omega) = 1 at s = {touch[0].imag:.12g}")

        def excess(s):
            return float(_finite_excess(omega, s))

        excess_grid = functools.partial(_finite_excess, omega)

    best = np.inf
    grid = np.geomspace(r, 1.0, n_grid // 2) if r < 1 else np.array([1.0])
    for sign in (1.0, -1.0):
        d = excess_grid(sign * grid)
        i = int(np.argmin(d))
        if d[i] <= 0.0:
            raise InfiniteM(f"dist(i s, Omega) <= 1 at s = {sign * grid[i]:.12g}")
        val = d[i]
        lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, grid.size - 1)]
        if hi > lo:
            res = minimize_scalar(lambda a: excess(sign * a), bounds=(lo, hi), method="bounded",
                                  options={"xatol": 1e-15})
            val = min(val, float(res.fun))
        best = min(best, val)
    if best <= 0.0:
        raise InfiniteM("dist(i s, Omega) <= 1 on 0 < |s| <= 1")
    at_r = min(excess(r), excess(-r))
    return MValue(r, 1.0 / best, 1.0 / at_r)


def m_function(source, form="sup"):
    """``r -> m(r)`` as a plain callable."""
    if isinstance(source, PsiRegion) and form == "point":
        return lambda r: 1.0 / source.excess(r)

    def m(r):
        v = m_of_r(source, r)
        return v.sup_form if form == "sup" else v.point_form

    return m


def m_log(m, r):
    mr = m(r)
    return mr * log(1.0 + mr / r)


class BoundedRegime(float):
    """Marker for ``m_log(0+) < c t``: the inverse does not exist."""


def mlog_inverse(m, c, t, rtol=1e-10):
    """``r*`` with ``m_log(r*) = c t`` for non-increasing ``m`` on ``(0, 1]``."""
    if not 0 < c < 1:
        raise ValueError("c must lie in (0, 1)")
    target = c * float(t)
    top = m_log(m, 1.0)
    if target < top:
        raise OutOfRange(f"t = {t} is below m_log(1)/c = {top / c:.6g}")
    if target == top:
        return 1.0
    hi, lo = 0.0, -1.0  # log r bracket with m_log(e^hi) <= target < m_log(e^lo)
    while m_log(m, np.exp(lo)) <= target:
        hi = lo
        lo *= 2
        if lo < -700:
            return BoundedRegime(0.0)
    for _ in range(400):
        mid = (lo + hi) / 2
        if m_log(m, np.exp(mid)) > target:
            lo = mid
        else:
            hi = mid
        if hi - lo <= rtol * 0.5:
            break
    return float(np.exp((lo + hi) / 2))


__all__ = [
    "PlatoonParams",
    "platoon_system",
    "robot_system",
    "RobotKernel",
    "poisson_weights",
    "robot_kernel_closed_form",
    "robot_at_bound",
    "robot_AT_bound_constant",
    "stirling_bound_scaled",
    "RobotChain",
    "varcoef_resolvent_apply",
    "varcoef_apply_generator",
    "PsiRegion",
    "MValue",
    "m_of_r",
    "m_function",
    "m_log",
    "mlog_inverse",
    "BoundedRegime",
]
