"""Complex polynomials and rational functions in ascending-coefficient form.

Only what the characteristic-function machinery needs: evaluation,
arithmetic, derivatives, Taylor shifts, GCD cancellation by root
clustering, and the real polynomial ``|q(s d)|^2 - |p(s d)|^2`` along a
direction ``d`` of the complex plane.
"""

from __future__ import annotations

from math import comb

import numpy as np

from .errors import DegenerateDenominator, DegreeTooLarge, NonRealResidue

MAX_DEGREE = 64
DROP_TOL = 1e-14  # relative size below which a leading coefficient is dropped
CLUSTER_TOL = 1e-8  # GCD cancellation tolerance, relative to coefficient scale
COPRIME_TOL = 1e-8
REAL_RESIDUE_TOL = 1e-12


def _trim(c, real=False):
    c = np.asarray(c, dtype=float if real else complex).ravel()
    if c.size == 0:
        return c
    scale = np.max(np.abs(c))
    if scale == 0.0:
        return c[:0]
    keep = np.nonzero(np.abs(c) > DROP_TOL * scale)[0]
    return c[: keep[-1] + 1].copy()


def _horner(c, x):
    x = np.asarray(x)
    out = np.zeros(x.shape, dtype=np.result_type(c.dtype, x.dtype, complex if np.iscomplexobj(c) else float))
    for a in c[::-1]:
        out = out * x + a
    return out


class Poly:
    """Complex polynomial, coefficients in ascending degree.

    The zero polynomial has an empty coefficient array and degree -1.
    """

    __slots__ = ("_c",)

    def __init__(self, coeffs=()):
        c = _trim(coeffs)
        if c.size - 1 > MAX_DEGREE:
            raise DegreeTooLarge(f"degree {c.size - 1} exceeds {MAX_DEGREE}")
        c.setflags(write=False)
        self._c = c

    @property
    def coeffs(self):
        return self._c

    @property
    def degree(self):
        return self._c.size - 1

    def is_zero(self):
        return self._c.size == 0

    @property
    def lead(self):
        return self._c[-1] if self._c.size else 0j

    def scale(self):
        return float(np.max(np.abs(self._c))) if self._c.size else 0.0

    def __call__(self, x):
        if self.is_zero():
            return np.zeros(np.shape(x), dtype=complex) if np.ndim(x) else 0j
        val = _horner(self._c, x)
        return val if np.ndim(val) else complex(val)

    def __repr__(self):
        return f"Poly({np.array2string(self._c, precision=6)})"

    def __eq__(self, other):
        return isinstance(other, Poly) and np.array_equal(self._c, other._c)

    def __hash__(self):
        return hash(self._c.tobytes())

    def __neg__(self):
        return Poly(-self._c)

    def __add__(self, other):
        other = as_poly(other)
        n = max(self._c.size, other._c.size)
        out = np.zeros(n, dtype=complex)
        out[: self._c.size] += self._c
        out[: other._c.size] += other._c
        return Poly(out)

    __radd__ = __add__

    def __sub__(self, other):
        return self + (-as_poly(other))

    def __rsub__(self, other):
        return as_poly(other) - self

    def __mul__(self, other):
        if np.isscalar(other):
            return Poly(self._c * other)
        other = as_poly(other)
        if self.is_zero() or other.is_zero():
            return Poly()
        return Poly(np.convolve(self._c, other._c))

    __rmul__ = __mul__

    def __pow__(self, k):
        out = Poly([1.0])
        for _ in range(int(k)):
            out = out * self
        return out

    def deriv(self, order=1):
        c = self._c
        for _ in range(order):
            if c.size <= 1:
                return Poly()
            c = c[1:] * np.arange(1, c.size)
        return Poly(c)

    def roots(self):
        if self.degree < 1:
            return np.zeros(0, dtype=complex)
        return np.roots(self._c[::-1]).astype(complex)

    def monic(self):
        if self.is_zero():
            raise DegenerateDenominator("zero polynomial has no leading coefficient")
        return Poly(self._c / self._c[-1])

    def taylor(self, x0):
        """Coefficients of ``h -> p(x0 + h)`` in ascending powers of ``h``."""
        n = self._c.size
        out = np.zeros(n, dtype=complex)
        for j, a in enumerate(self._c):
            for i in range(j + 1):
                out[i] += a * comb(j, i) * x0 ** (j - i)
        return out

    @classmethod
    def from_roots(cls, roots, lead=1.0):
        c = np.array([1.0 + 0j])
        for r in roots:
            c = np.convolve(c, [-r, 1.0])
        return cls(lead * c)


def as_poly(x):
    if isinstance(x, Poly):
        return x
    if np.isscalar(x):
        return Poly([x])
    return Poly(x)


class RealPoly:
    """Real polynomial, ascending coefficients."""

    __slots__ = ("_c", "imag_residue")

    def __init__(self, coeffs, imag_residue=0.0):
        c = _trim(coeffs, real=True)
        c.setflags(write=False)
        self._c = c
        self.imag_residue = float(imag_residue)

    @property
    def coeffs(self):
        return self._c

    @property
    def degree(self):
        return self._c.size - 1

    def __call__(self, x):
        if self._c.size == 0:
            return np.zeros(np.shape(x)) if np.ndim(x) else 0.0
        val = _horner(self._c, x)
        return val if np.ndim(val) else float(val)

    def __repr__(self):
        return f"RealPoly({np.array2string(self._c, precision=6)})"


class RatFun:
    """Rational function ``num / den``."""

    __slots__ = ("num", "den")

    def __init__(self, num, den):
        num, den = as_poly(num), as_poly(den)
        if den.is_zero():
            raise DegenerateDenominator("denominator is the zero polynomial")
        self.num = num
        self.den = den

    def __call__(self, x):
        return self.num(x) / self.den(x)

    def __repr__(self):
        return f"RatFun(num={self.num!r}, den={self.den!r})"

    def deriv(self):
        p, q = self.num, self.den
        return RatFun(p.deriv() * q - p * q.deriv(), q * q)

    def poles(self):
        return self.den.roots()

    def zeros(self):
        return self.num.roots()

    def resultant(self):
        return resultant(self.num, self.den)

    def is_coprime(self, tol=COPRIME_TOL):
        p, q = self.num, self.den
        if p.is_zero():
            return q.degree == 0
        if p.degree == 0 or q.degree == 0:
            return True
        res = abs(resultant(p, q))
        scale = p.scale() ** q.degree * q.scale() ** p.degree
        return res > tol * scale

    def taylor(self, x0, order):
        """First ``order + 1`` Taylor coefficients of the function at ``x0``."""
        a = self.num.taylor(x0)
        b = self.den.taylor(x0)
        if abs(b[0]) == 0.0:
            raise DegenerateDenominator(f"{x0} is a pole")
        a = np.concatenate([a, np.zeros(max(0, order + 1 - a.size))])[: order + 1]
        b = np.concatenate([b, np.zeros(max(0, order + 1 - b.size))])[: order + 1]
        out = np.zeros(order + 1, dtype=complex)
        for n in range(order + 1):
            out[n] = (a[n] - np.dot(b[1 : n + 1], out[:n][::-1])) / b[0]
        return out


def poly_eval(p, x):
    return as_poly(p)(x)


def resultant(p, q):
    """Resultant via the determinant of the Sylvester matrix."""
    p, q = as_poly(p), as_poly(q)
    m, n = p.degree, q.degree
    if m < 0 or n < 0:
        return 0j
    if m == 0:
        return complex(p.coeffs[0] ** n)
    if n == 0:
        return complex(q.coeffs[0] ** m)
    size = m + n
    syl = np.zeros((size, size), dtype=complex)
    pd, qd = p.coeffs[::-1], q.coeffs[::-1]
    for i in range(n):
        syl[i, i : i + m + 1] = pd
    for i in range(m):
        syl[n + i, i : i + n + 1] = qd
    return complex(np.linalg.det(syl))


def _cluster(roots, radius):
    """Single-linkage clusters; returns list of (centroid, multiplicity)."""
    roots = list(roots)
    out = []
    while roots:
        group = [roots.pop()]
        grew = True
        while grew:
            grew = False
            for r in list(roots):
                if any(abs(r - g) <= radius * max(1.0, abs(g)) for g in group):
                    group.append(r)
                    roots.remove(r)
                    grew = True
        out.append((complex(np.mean(group)), len(group)))
    return out


def _root_multiplicity(p, x, limit, tol):
    """How many leading Taylor coefficients of ``p`` at ``x`` vanish (up to ``limit``)."""
    c = p.coeffs
    absc = np.abs(c)
    ax = abs(x)
    k = 0
    while k < limit and k <= p.degree:
        val = sum(c[j] * comb(j, k) * x ** (j - k) for j in range(k, c.size))
        mag = sum(absc[j] * comb(j, k) * ax ** (j - k) for j in range(k, c.size))
        if abs(val) > tol * max(mag, p.scale()):
            break
        k += 1
    return k


def _deflate(p, x, times):
    c = p.coeffs.copy()
    for _ in range(times):
        # synthetic division by (lambda - x), remainder dropped
        n = c.size - 1
        out = np.zeros(n, dtype=complex)
        acc = 0j
        for j in range(n, 0, -1):
            acc = acc * x + c[j]
            out[j - 1] = acc
        c = out
    return Poly(c)


def reduce_coprime(num, den, tol=CLUSTER_TOL):
    """Cancel common roots of ``num`` and ``den``; the denominator is made monic.

    Roots of ``den`` are clustered so that repeated roots are represented by
    their (accurate) centroid; a cluster is cancelled against ``num`` as many
    times as the Taylor coefficients of ``num`` vanish there, relative to
    ``tol`` times the coefficient scale.
    """
    num, den = as_poly(num), as_poly(den)
    if den.is_zero() or den.scale() == 0.0:
        raise DegenerateDenominator("denominator is (numerically) zero")
    if num.is_zero():
        return RatFun(Poly(), Poly([1.0]))
    if den.degree >= 1 and num.degree >= 1:
        for centre, mult in _cluster(den.roots(), 1e-3):
            k = _root_multiplicity(num, centre, min(mult, num.degree), tol)
            if k:
                num = _deflate(num, centre, k)
                den = _deflate(den, centre, k)
    lead = den.lead
    return RatFun(Poly(num.coeffs / lead), Poly(den.coeffs / lead))


def _conj_along(p, direction):
    """Coefficients in ``s`` of ``p(s d)`` and of its complex conjugate for real ``s``."""
    c = p.coeffs * direction ** np.arange(p.coeffs.size)
    return c, np.conj(c)


def modulus_diff_along(f, direction):
    """Real polynomial ``s -> |q(s d)|^2 - |p(s d)|^2`` for ``f = p/q``."""
    qc, qcc = _conj_along(f.den, direction)
    qq = np.convolve(qc, qcc)
    if f.num.is_zero():
        pp = np.zeros(1, dtype=complex)
    else:
        pc, pcc = _conj_along(f.num, direction)
        pp = np.convolve(pc, pcc)
    n = max(qq.size, pp.size)
    r = np.zeros(n, dtype=complex)
    r[: qq.size] += qq
    r[: pp.size] -= pp
    scale = max(np.max(np.abs(qq)), np.max(np.abs(pp)), 1e-300)
    residue = float(np.max(np.abs(r.imag))) if r.size else 0.0
    if residue > REAL_RESIDUE_TOL * scale:
        raise NonRealResidue(f"imaginary residue {residue:.3e} exceeds tolerance (scale {scale:.3e})")
    real = r.real.copy()
    # |q|^2 - |p|^2 at s = 0 is a difference of two equal numbers when |f(0)| = 1
    if real.size and abs(real[0]) <= REAL_RESIDUE_TOL * scale:
        real[0] = 0.0
    return RealPoly(real, residue)


def modulus_diff_on_axis(f):
    """``r(s) = |q(is)|^2 - |p(is)|^2`` as a real polynomial in ``s``."""
    return modulus_diff_along(f, 1j)
