"""Exact evolution of cascade states.

A state is a finite core of blocks plus closed-form tail rules on either
side.  Every operator used here (the semigroup, the generator, resolvents,
shift averages) is a block Toeplitz operator, so it maps tail-ruled states
to tail-ruled states; the only approximation is the explicitly bounded
truncation of the kernel.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from math import gcd, lgamma, log

import numpy as np
import scipy.linalg as sla
from scipy.signal import fftconvolve

from .errors import (
    EpsilonNonpositive,
    KernelTooLarge,
    OnLevelSet,
    TimeNegative,
    WindowTooNoisy,
)

MAX_BLOCKS = 1 << 18
FFT_THRESHOLD = 1 << 16  # block-products above which convolution goes through the FFT
LEVEL_TOL = 1e-9


def max_workers():
    try:
        return max(1, int(os.environ.get("CASCADE_THREADS", "1")))
    except ValueError:
        return 1


# ---------------------------------------------------------------- states


def block_norms(x):
    """Euclidean norm of each row, safe against underflow of the squares."""
    x = np.asarray(x)
    if x.shape[0] == 0:
        return np.zeros(0)
    a = np.abs(x)
    top = a.max(axis=1)
    scale = np.where(top > 0, top, 1.0)
    return top * np.sqrt(np.sum((a / scale[:, None]) ** 2, axis=1))


class TailRule:
    """Value ``ratio**k * pattern[k mod period]`` at index ``k``.

    ``ratio`` is unimodular; ratio 1 covers the zero, constant and periodic
    rules, any other ratio the geometric eigen-sequences of the level set.
    """

    __slots__ = ("pattern", "ratio")

    def __init__(self, pattern, ratio=1.0):
        pat = np.array(pattern, dtype=complex)
        if pat.ndim == 1:
            pat = pat[None, :]
        if pat.shape[0] == 0:
            raise ValueError("tail pattern needs at least one block")
        pat.setflags(write=False)
        self.pattern = pat
        self.ratio = complex(ratio)

    @classmethod
    def zero(cls, m):
        return cls(np.zeros((1, m)))

    @property
    def period(self):
        return self.pattern.shape[0]

    @property
    def m(self):
        return self.pattern.shape[1]

    def is_zero(self):
        return not np.any(self.pattern)

    @property
    def kind(self):
        if self.is_zero():
            return "zero"
        if self.ratio != 1.0:
            return "geometric"
        if self.period == 1:
            return "constant"
        return "periodic"

    def values(self, lo, hi):
        """Blocks for indices ``lo .. hi - 1``."""
        k = np.arange(lo, hi)
        out = self.pattern[np.mod(k, self.period)]
        if self.ratio != 1.0:
            out = out * (self.ratio ** k)[:, None]
        return out

    def sup_norm(self):
        return float(np.max(block_norms(self.pattern)))

    def far_mean(self, ratio):
        """Limit of averages of ``ratio**(-k) * value(k)`` over long windows."""
        c = self.ratio / complex(ratio)
        d = self.period
        if abs(c ** d - 1.0) > 1e-12:
            return np.zeros(self.m, dtype=complex)
        return (c ** np.arange(d))[:, None].__mul__(self.pattern).mean(axis=0)

    def to_json(self):
        from .io import cvec

        if self.is_zero():
            return {"rule": "zero"}
        if self.ratio == 1.0 and self.period == 1:
            return {"rule": "constant", "value": cvec(self.pattern[0])}
        out = {"rule": "periodic", "pattern": [cvec(b) for b in self.pattern]}
        if self.ratio != 1.0:
            out["ratio"] = cvec([self.ratio])[0]
        return out

    @classmethod
    def from_json(cls, obj, m):
        from .io import parse_cvec

        rule = obj.get("rule", "zero")
        if rule == "zero":
            return cls.zero(m)
        ratio = obj.get("ratio", [1.0, 0.0])
        ratio = complex(*ratio) if isinstance(ratio, (list, tuple)) else complex(ratio)
        if rule == "constant":
            return cls([parse_cvec(obj["value"], m)], ratio)
        if rule == "periodic":
            return cls([parse_cvec(b, m) for b in obj["pattern"]], ratio)
        raise ValueError(f"unknown tail rule {rule!r}")

    def __repr__(self):
        return f"TailRule({self.kind}, period={self.period}, ratio={self.ratio:.6g})"


def _lcm(a, b):
    return a * b // gcd(a, b)


def tail_sup_diff(a, b, samples=4096):
    """``sup_k |a(k) - b(k)|`` over the far field of two tail rules."""
    if a.ratio == b.ratio or a.is_zero() or b.is_zero():
        if a.is_zero():
            return b.sup_norm()
        if b.is_zero():
            return a.sup_norm()
        n = _lcm(a.period, b.period)
        diff = a.pattern[np.arange(n) % a.period] - b.pattern[np.arange(n) % b.period]
        return float(np.max(block_norms(diff)))
    # incommensurate phases: sampled sup
    n = _lcm(a.period, b.period) * samples
    return float(np.max(np.linalg.norm(a.values(0, n) - b.values(0, n), axis=1)))


class SeqState:
    """Doubly infinite block sequence: core blocks ``offset .. offset+n-1`` plus tails."""

    __slots__ = ("core", "offset", "left", "right", "p")

    def __init__(self, core, offset=0, left=None, right=None, p=1.0):
        core = np.array(core, dtype=complex)
        if core.ndim == 1 and core.size:
            core = core[:, None]
        if core.ndim == 2 and core.shape[1] > 0:
            m = core.shape[1]
        else:
            m = left.m if left is not None else right.m
            core = core.reshape(0, m)
        core.setflags(write=False)
        self.core = core
        self.offset = int(offset)
        self.left = left if left is not None else TailRule.zero(m)
        self.right = right if right is not None else TailRule.zero(m)
        self.p = float(p)

    @classmethod
    def finite(cls, blocks, offset=0, p=1.0):
        blocks = np.array(blocks, dtype=complex)
        if blocks.ndim == 1:
            blocks = blocks[:, None]
        return cls(blocks, offset, None, None, p)

    @classmethod
    def delta(cls, m, k=0, vec=None, p=1.0):
        v = np.zeros(m, dtype=complex)
        if vec is None:
            v[0] = 1.0
        else:
            v[:] = vec
        return cls(v[None, :], k, None, None, p)

    @classmethod
    def constant(cls, vec, p=np.inf):
        vec = np.atleast_1d(np.asarray(vec, dtype=complex))
        t = TailRule([vec])
        return cls(np.zeros((0, vec.size)), 0, t, t, p)

    @property
    def m(self):
        return self.core.shape[1]

    @property
    def n(self):
        return self.core.shape[0]

    @property
    def end(self):
        """One past the last core index."""
        return self.offset + self.n

    def has_tails(self):
        return not (self.left.is_zero() and self.right.is_zero())

    def window(self, lo, hi):
        """Blocks for indices ``lo .. hi - 1`` (tails filled in)."""
        out = np.empty((max(hi - lo, 0), self.m), dtype=complex)
        if hi <= lo:
            return out
        a, b = self.offset, self.end
        if lo < a:
            out[: min(a, hi) - lo] = self.left.values(lo, min(a, hi))
        c0, c1 = max(lo, a), min(hi, b)
        if c1 > c0:
            out[c0 - lo : c1 - lo] = self.core[c0 - a : c1 - a]
        if hi > b:
            s = max(lo, b)
            out[s - lo :] = self.right.values(s, hi)
        return out

    def block(self, k):
        return self.window(k, k + 1)[0]

    def norm(self, p=None):
        p = self.p if p is None else float(p)
        core = block_norms(self.core) if self.n else np.zeros(0)
        if np.isinf(p):
            vals = [core.max() if core.size else 0.0, self.left.sup_norm(), self.right.sup_norm()]
            return float(max(vals))
        if self.has_tails():
            return float("inf")
        if not core.size:
            return 0.0
        top = core.max()
        if top == 0.0:
            return 0.0
        return float(top * np.sum((core / top) ** p) ** (1.0 / p))

    def trimmed(self, tol=0.0):
        """Drop core blocks that agree with the adjacent tail rule."""
        if not self.n:
            return self
        lv = self.left.values(self.offset, self.end)
        rv = self.right.values(self.offset, self.end)
        okl = block_norms(self.core - lv) <= tol
        okr = block_norms(self.core - rv) <= tol
        i = 0
        while i < self.n and okl[i]:
            i += 1
        j = self.n
        while j > i and okr[j - 1]:
            j -= 1
        return SeqState(self.core[i:j], self.offset + i, self.left, self.right, self.p)

    def __sub__(self, other):
        lo = min(self.offset, other.offset)
        hi = max(self.end, other.end)
        if self.left.ratio != other.left.ratio and not (self.left.is_zero() or other.left.is_zero()):
            raise ValueError("left tails with different ratios cannot be subtracted exactly")
        if self.right.ratio != other.right.ratio and not (self.right.is_zero() or other.right.is_zero()):
            raise ValueError("right tails with different ratios cannot be subtracted exactly")
        core = self.window(lo, hi) - other.window(lo, hi)
        return SeqState(core, lo, _tail_sub(self.left, other.left), _tail_sub(self.right, other.right), self.p)

    def __add__(self, other):
        return self - other.scaled(-1.0)

    def scaled(self, c):
        return SeqState(
            self.core * c,
            self.offset,
            TailRule(self.left.pattern * c, self.left.ratio),
            TailRule(self.right.pattern * c, self.right.ratio),
            self.p,
        )

    def sup_diff(self, other):
        """Sup-norm of ``self - other`` (handles tails with different ratios)."""
        lo = min(self.offset, other.offset)
        hi = max(self.end, other.end)
        core = self.window(lo, hi) - other.window(lo, hi)
        vals = [block_norms(core).max() if core.size else 0.0]
        vals.append(tail_sup_diff(self.left, other.left))
        vals.append(tail_sup_diff(self.right, other.right))
        return float(max(vals))

    def to_json(self):
        from .io import cvec

        return {
            "offset": self.offset,
            "core": [cvec(b) for b in self.core],
            "left_tail": self.left.to_json(),
            "right_tail": self.right.to_json(),
        }

    @classmethod
    def from_json(cls, obj, m, p=1.0):
        from .io import parse_cvec

        core = [parse_cvec(b, m) for b in obj.get("core", [])]
        core = np.array(core, dtype=complex).reshape(len(core), m)
        left = TailRule.from_json(obj.get("left_tail", {"rule": "zero"}), m)
        right = TailRule.from_json(obj.get("right_tail", {"rule": "zero"}), m)
        return cls(core, obj.get("offset", 0), left, right, p)

    def __repr__(self):
        return f"SeqState(offset={self.offset}, n={self.n}, m={self.m}, left={self.left!r}, right={self.right!r})"


def _tail_sub(a, b):
    if b.is_zero():
        return a
    if a.is_zero():
        return TailRule(-b.pattern, b.ratio)
    n = _lcm(a.period, b.period)
    return TailRule(a.pattern[np.arange(n) % a.period] - b.pattern[np.arange(n) % b.period], a.ratio)


# ------------------------------------------------------ toeplitz action


def _tail_image(tail, blocks, dmin):
    """Tail rule of ``sum_d K_d x_{k-d}`` when every ``x_{k-d}`` follows ``tail``."""
    if tail.is_zero():
        return tail
    d_per = tail.period
    offs = np.arange(blocks.shape[0]) + dmin
    weights = tail.ratio ** (-offs.astype(float)) if tail.ratio != 1.0 else np.ones(offs.size)
    out = np.zeros_like(tail.pattern)
    for j in range(d_per):
        src = tail.pattern[np.mod(j - offs, d_per)]  # (nd, m)
        out[j] = np.einsum("d,dij,dj->i", weights, blocks, src)
    return TailRule(out, tail.ratio)


def apply_toeplitz(state, blocks, dmin=0):
    """``y_k = sum_d K_d x_{k-d}``, ``d = dmin .. dmin+len(blocks)-1``."""
    blocks = np.asarray(blocks, dtype=complex)
    nd = blocks.shape[0]
    dmax = dmin + nd - 1
    a, b = state.offset, state.end
    out_lo, out_hi = a + dmin, b + dmax  # output core indices [out_lo, out_hi)
    src_lo, src_hi = out_lo - dmax, out_hi - dmin
    x = state.window(src_lo, src_hi)
    width = out_hi - out_lo
    y = np.zeros((max(width, 0), state.m), dtype=complex)
    if width > 0 and x.shape[0]:
        # y index w <-> output k = out_lo + w; full convolution index = w + (dmax - dmin)
        sl = slice(dmax - dmin, dmax - dmin + width)
        if nd * width <= FFT_THRESHOLD:
            for i in range(nd):
                s = out_lo - (dmin + i) - src_lo
                y += x[s : s + width] @ blocks[i].T
        else:
            for a in range(state.m):
                for b in range(state.m):
                    kern = blocks[:, a, b]
                    if np.any(kern):
                        y[:, a] += fftconvolve(x[:, b], kern)[sl]
    left = _tail_image(state.left, blocks, dmin)
    right = _tail_image(state.right, blocks, dmin)
    return SeqState(y, out_lo, left, right, state.p)


# ---------------------------------------------------------------- kernels


@dataclass
class BlockKernel:
    t: float
    blocks: np.ndarray
    tail_bound: float
    alias_bound: float = 0.0

    @property
    def L(self):
        return self.blocks.shape[0] - 1

    @property
    def error_bound(self):
        """Bound on ``sum_l |B_l - computed B_l|`` including discarded blocks."""
        return self.tail_bound + self.alias_bound


def log_norm(A):
    """Logarithmic 2-norm ``max eig((A + A^H)/2)``."""
    return float(np.max(np.linalg.eigvalsh((A + A.conj().T) / 2)))


def expm_stack(M, cond_max=1e4, shift=False):
    """``exp`` of a stack of small matrices through batched eigendecomposition.

    Members whose eigenvector basis has condition number above ``cond_max``
    (near-defective) go through scipy's Pade route one by one.  With
    ``shift`` the result is returned as ``(E, s)`` with ``exp(M) = e^s E``,
    ``s`` the largest real part of the spectrum of each member.
    """
    M = np.asarray(M, dtype=complex)
    w, V = np.linalg.eig(M)
    s = w.real.max(axis=-1) if shift else np.zeros(M.shape[:-2])
    sv = np.linalg.svd(V, compute_uv=False)
    with np.errstate(divide="ignore"):
        ok = sv[..., 0] <= cond_max * sv[..., -1]
    out = np.empty_like(M)
    if np.any(ok):
        Vo = V[ok]
        ew = np.exp(w[ok] - s[ok][..., None])
        out[ok] = (Vo * ew[..., None, :]) @ np.linalg.inv(Vo)
    bad = ~ok
    if np.any(bad):
        eye = np.eye(M.shape[-1])
        out[bad] = sla.expm(M[bad] - s[bad][..., None, None] * eye)
    return (out, s) if shift else out


def _symbol_log_sup(sys, t, rhos, n_theta=128):
    """log of ``max_theta |exp(t(A0 + rho e^{i theta} A1))|_2`` for each rho, on a theta grid."""
    th = 2 * np.pi * np.arange(n_theta) / n_theta
    z = np.asarray(rhos)[:, None] * np.exp(1j * th)[None, :]
    M = t * (sys.A0[None, None] + z[..., None, None] * sys.A1[None, None])
    E, shift = expm_stack(M, shift=True)
    norms = np.linalg.norm(E, ord=2, axis=(-2, -1))
    return np.max(shift + np.log(norms), axis=1)


class _TailEstimator:
    """Bounds on ``sum_{l > L} |B_l(t)|``.

    Two routes, the smaller wins: the Taylor bound from the Dyson series
    ``|B_l| <= e^{t mu} (|A1| t)^l / l!`` and a Cauchy bound from the
    generating function ``sum_l B_l z^l = exp(t(A0 + z A1))`` on circles
    ``|z| = rho > 1``.
    """

    TAYLOR_ONLY = 512  # extra blocks are cheaper than sampling the symbol

    def __init__(self, sys, t):
        self.sys = sys
        self.t = t
        self.mu = log_norm(sys.A0)
        self.a = float(np.linalg.norm(sys.A1, 2))
        self.log_g = None

    def _cauchy(self):
        if self.log_g is None:
            rhos = np.exp(np.geomspace(1e-6, 4.0, 64))
            # sampled sup over theta; factor 2 as a safety margin
            self.log_g = _symbol_log_sup(self.sys, self.t, rhos) + log(2.0)
            self.log_rho = np.log(rhos)

    def log_taylor(self, L):
        at = self.a * self.t
        if at == 0:
            return -np.inf
        if L + 2 <= at:
            return np.inf
        return self.t * self.mu + (L + 1) * log(at) - lgamma(L + 2) - log(1 - at / (L + 2))

    def log_bound(self, L):
        if self.a * self.t == 0:
            return -np.inf
        self._cauchy()
        vals = self.log_g - (L + 1) * self.log_rho - np.log1p(-np.exp(-self.log_rho))
        return min(float(np.min(vals)), self.log_taylor(L))

    def smallest_L(self, log_eps):
        for L in range(self.TAYLOR_ONLY + 1):
            if self.log_taylor(L) <= log_eps:
                self.used = self.log_taylor
                return L
        self.used = self.log_bound
        if self.log_bound(0) <= log_eps:
            return 0
        lo, hi = 0, 1
        while self.log_bound(hi) > log_eps:
            lo, hi = hi, hi * 2
            if hi > MAX_BLOCKS:
                raise KernelTooLarge(
                    f"more than {MAX_BLOCKS} kernel blocks needed at t={self.t}; "
                    f"tail bound at the cap is {np.exp(self.log_bound(MAX_BLOCKS)):.3e}"
                )
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if self.log_bound(mid) <= log_eps:
                hi = mid
            else:
                lo = mid
        return hi


def block_kernels(sys, t, eps=1e-12):
    """Toeplitz blocks ``B_0 .. B_L`` of ``T(t)`` with ``sum_{l>L} |B_l| <= eps / 2``.

    Blocks come from the discrete Fourier transform of the symbol
    ``exp(t(A0 + z A1))`` sampled on ``N >= 2(L+1)`` roots of unity; the
    aliasing error of block ``l`` is ``sum_k B_{l+kN}``, which the tail bound
    already dominates.
    """
    t = float(t)
    if t < 0:
        raise TimeNegative(f"t = {t} < 0")
    if not eps > 0:
        raise EpsilonNonpositive(f"epsilon = {eps} must be positive")
    m = sys.m
    if t == 0.0:
        return BlockKernel(0.0, np.eye(m, dtype=complex)[None], 0.0, 0.0)
    est = _TailEstimator(sys, t)
    L = est.smallest_L(log(eps / 2))
    tail = float(np.exp(est.used(L)))
    n = 16
    while n < 2 * (L + 1):
        n *= 2
    z = np.exp(2j * np.pi * np.arange(n) / n)
    E = expm_stack(t * (sys.A0[None] + z[:, None, None] * sys.A1[None]))
    B = np.fft.fft(E, axis=0) / n
    if not (np.any(sys.A0.imag) or np.any(sys.A1.imag)):
        B = B.real.astype(complex)  # real data has real blocks
    return BlockKernel(t, B[: L + 1].copy(), tail, tail)


def apply_semigroup(sys, state, t, eps=1e-12, kernel=None):
    """``T(t) x`` for a tail-ruled state."""
    kernel = kernel if kernel is not None else block_kernels(sys, t, eps)
    return apply_toeplitz(state, kernel.blocks, 0)


def apply_generator(sys, state):
    """``(A x)_k = A0 x_k + A1 x_{k-1}``."""
    return apply_toeplitz(state, np.stack([sys.A0, sys.A1]), 0)


def resolvent_blocks(sys, cf, lam, tol=1e-12):
    """Toeplitz blocks and first offset of ``R(lam, A)``."""
    lam = complex(lam)
    R = sys.resolvent0(lam)
    ph = complex(cf(lam))
    a = abs(ph)
    if abs(a - 1.0) <= LEVEL_TOL:
        raise OnLevelSet(f"|phi({lam})| = {a:.12g} is on the level set")
    RAR = R @ sys.A1 @ R
    c = np.linalg.norm(RAR, 2)
    q = a if a < 1 else 1.0 / a
    # geometric tail c q^{n+1}/(1-q) (times 1/|phi| in the outer branch) below tol
    if c == 0 or q == 0:
        n = 0
    else:
        n = max(0, int(np.ceil((log(tol * (1 - q)) - log(c)) / log(q))))
    if a < 1:
        w = ph ** np.arange(n + 1)
        blocks = np.concatenate([R[None], w[:, None, None] * RAR[None]])
        return blocks, 0
    w = -(ph ** -(np.arange(n + 1) + 1.0))
    blocks = (w[:, None, None] * RAR[None])[::-1].copy()  # offsets -n .. 0
    blocks[-1] += R
    return blocks, -n


def apply_resolvent(sys, cf, state, lam, tol=1e-12, verify=False):
    """``R(lam, A) x`` from the two geometric-series formulas off the level set.

    With ``verify`` the residual ``|(lam - A) R x - x|`` (sup over blocks) is
    returned alongside the result.
    """
    blocks, dmin = resolvent_blocks(sys, cf, lam, tol)
    out = apply_toeplitz(state, blocks, dmin)
    if not verify:
        return out
    back = out.scaled(complex(lam)) - apply_generator(sys, out)
    return out, back.sup_diff(state)


# ------------------------------------------------------------ trajectory


@dataclass
class Trajectory:
    times: np.ndarray
    states: list
    state_norms: np.ndarray
    derivative_norms: np.ndarray
    distance_norms: np.ndarray | None = None
    tail_bounds: np.ndarray | None = None
    p: float = 1.0
    x0_norm: float = 1.0
    n_phi: int | None = None

    def quantity(self, name):
        if name in ("state_norm", "state"):
            return self.state_norms
        if name in ("derivative_norm", "derivative"):
            return self.derivative_norms
        if name in ("distance", "distance_to", "distance_to_z"):
            if self.distance_norms is None:
                raise ValueError("trajectory was simulated without a limit state")
            return self.distance_norms
        raise ValueError(f"unknown quantity {name!r}")


def simulate(sys, x0, times, eps=1e-12, limit=None, keep_states=True, n_phi=None):
    """Evaluate ``x(t) = T(t) x0`` on a time grid, with ``|x|``, ``|A x|`` and ``|x - z|``."""
    times = np.asarray(times, dtype=float)
    if np.any(times < 0):
        raise TimeNegative("negative time in grid")
    p = sys.p

    def one(t):
        ker = block_kernels(sys, t, eps)
        xt = apply_toeplitz(x0, ker.blocks, 0)
        dx = apply_generator(sys, xt)
        dist = xt.sup_diff(limit) if (limit is not None and np.isinf(p)) else (
            (xt - limit).norm(p) if limit is not None else None
        )
        return xt, xt.norm(p), dx.norm(p), dist, ker.error_bound

    workers = max_workers()
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            rows = list(pool.map(one, times))
    else:
        rows = [one(t) for t in times]
    return Trajectory(
        times=times,
        states=[r[0] for r in rows] if keep_states else [],
        state_norms=np.array([r[1] for r in rows]),
        derivative_norms=np.array([r[2] for r in rows]),
        distance_norms=np.array([r[3] for r in rows]) if limit is not None else None,
        tail_bounds=np.array([r[4] for r in rows]),
        p=p,
        x0_norm=x0.norm(np.inf),
        n_phi=n_phi,
    )


# ----------------------------------------------------------------- cesaro


def shift_average(u, n, ratio):
    """``(1/n) sum_{k=1..n} ratio^k S^k u`` computed exactly by prefix sums."""
    a, b = u.offset, u.end
    lo, hi = a - n, b + n  # materialised input window
    x = u.window(lo, hi)
    idx = np.arange(lo, hi)
    ratio = complex(ratio)
    if ratio == 1.0:
        w = x
    else:
        w = x * (ratio ** (-idx.astype(float)))[:, None]
    W = np.concatenate([np.zeros((1, u.m), dtype=complex), np.cumsum(w, axis=0)])
    # output indices j in [a+1, b+n]; sum_{i=j-n}^{j-1} w_i
    j = np.arange(a + 1, b + n + 1)
    s = W[j - lo] - W[j - n - lo]
    core = s / n
    if ratio != 1.0:
        core = core * (ratio ** j.astype(float))[:, None]

    def tail(t):
        if t.is_zero():
            return t
        d = t.period
        k = np.arange(1, n + 1)
        c = (ratio / t.ratio) ** k if ratio != t.ratio else np.ones(n, dtype=complex)
        out = np.zeros_like(t.pattern)
        for r in range(d):
            coeff = np.bincount(np.mod(r - k, d), weights=c.real, minlength=d) + 1j * np.bincount(
                np.mod(r - k, d), weights=c.imag, minlength=d
            )
            out[r] = coeff @ t.pattern / n
        return TailRule(out, t.ratio)

    return SeqState(core, a + 1, tail(u.left), tail(u.right), u.p)


@dataclass
class CesaroReport:
    convergent: bool
    verdict: str
    limit_y0: np.ndarray | None
    limit_state: SeqState | None
    sup_n_times_residual: float
    n_max: int
    residual_curve: list = field(default_factory=list)
    rate_one_over_n: bool = False
    note: str = ""

    def to_dict(self):
        from .io import cvec

        return {
            "convergent": self.convergent,
            "verdict": self.verdict,
            "limit_y0": cvec(self.limit_y0) if self.limit_y0 is not None else None,
            "limit_state": self.limit_state.to_json() if self.limit_state is not None else None,
            "sup_n_times_residual": self.sup_n_times_residual,
            "n_max": self.n_max,
            "rate_one_over_n": self.rate_one_over_n,
            "residual_curve": [[int(n), float(r)] for n, r in self.residual_curve],
            "note": self.note,
        }


def _decide(ns, res, scale=1.0):
    n_max = ns[-1]
    r_end = res[-1]
    last = [r for n, r in zip(ns, res) if n >= n_max / 10]
    slack = 1e-13 * max(scale, 1e-300)  # round-off in the prefix sums
    if max(res) <= 64 * np.finfo(float).eps * n_max * max(scale, 1e-300):
        return "convergent"  # already at the limit; residual is accumulated round-off
    monotone = all(b <= a + slack for a, b in zip(last, last[1:]))
    if r_end <= max(1e-8, 10.0 / n_max ** 0.9) and monotone:
        return "convergent"
    if r_end >= 0.5 * res[0]:
        return "divergent"
    return "inconclusive"


def _rate_flag(ns, res):
    nr = np.asarray(ns, float) * np.asarray(res)
    n_max = ns[-1]
    late = nr[np.asarray(ns) >= n_max / 10]
    early = nr[(np.asarray(ns) >= n_max / 100) & (np.asarray(ns) < n_max / 10)]
    if early.size == 0:
        early = nr[: max(1, nr.size // 2)]
    return bool(late.max() <= 1.5 * early.max() + 1e-12)


def cesaro_classify(sys, cf, x0, n_max=10000, n_points=40):
    """Ergodic classification of an initial state (p in {1, inf}).

    For ``1 < p < inf`` every solution tends to zero and the report says so
    without computing anything.
    """
    from .cascade import limit_lift

    p = sys.p
    if 1 < p < np.inf:
        return CesaroReport(True, "convergent", np.zeros(sys.m, complex), SeqState.finite(np.zeros((0, sys.m)), p=p),
                            0.0, 0, [], True, "1 < p < inf: every solution tends to 0")
    phi0 = complex(cf.phi0)
    M = sys.A1 @ np.linalg.inv(sys.A0)
    u = apply_toeplitz(x0, M[None], 0)
    ns = np.unique(np.round(np.geomspace(1, n_max, n_points)).astype(int))
    if p == 1:
        y = None
        target = None
    else:
        lm = u.left.far_mean(phi0)
        rm = u.right.far_mean(phi0)
        y = (lm + rm) / 2
        target = SeqState(np.zeros((0, sys.m)), 0, TailRule([y], phi0), TailRule([y], phi0), p)
    res = []
    for n in ns:
        avg = shift_average(u, int(n), phi0)
        res.append(avg.norm(1.0) if p == 1 else avg.sup_diff(target))
    verdict = _decide(list(ns), res, max(u.norm(np.inf), res[0]))
    curve = list(zip(ns.tolist(), res))
    sup_nr = float(np.max(ns * np.asarray(res)))
    limit_state = None
    y0 = None
    if verdict == "convergent":
        if p == 1:
            limit_state = SeqState.finite(np.zeros((0, sys.m)), p=p)
        else:
            y0 = y
            z0 = limit_lift(sys, y)
            limit_state = SeqState(np.zeros((0, sys.m)), 0, TailRule([z0], phi0), TailRule([z0], phi0), p)
    return CesaroReport(
        convergent=verdict == "convergent",
        verdict=verdict,
        limit_y0=y0,
        limit_state=limit_state,
        sup_n_times_residual=sup_nr,
        n_max=int(ns[-1]),
        residual_curve=curve,
        rate_one_over_n=verdict == "convergent" and _rate_flag(list(ns), res),
    )


# ------------------------------------------------------------- decay fits


@dataclass
class DecayFit:
    window: tuple
    fitted_exponent: float
    with_log_factor: bool
    r_squared: float
    predicted_exponent: float | None
    plain_exponent: float = float("nan")
    plain_r_squared: float = float("nan")
    log_exponent: float = float("nan")
    log_r_squared: float = float("nan")
    exact_zero: bool = False
    n_samples: int = 0

    def to_dict(self):
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}


def _linfit(x, y):
    A = np.vstack([x, np.ones_like(x)]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    pred = A @ coef
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(coef[0]), r2


def fit_decay_rate(traj, quantity="derivative_norm", window=None, min_r2=0.9):
    """Slope of ``log q`` against ``log t`` and against ``log((log t)/t)``.

    The log model ``q ~ C ((log t)/t)^c`` is reported with exponent ``-c`` so
    both models read as powers of ``t``.
    """
    t = np.asarray(traj.times, float)
    q = np.asarray(traj.quantity(quantity), float)
    lo, hi = window if window is not None else (t.min(), t.max())
    sel = (t >= lo) & (t <= hi)
    t, q = t[sel], q[sel]
    pred = -1.0 / traj.n_phi if traj.n_phi else None
    tb = np.asarray(traj.tail_bounds)[sel] if traj.tail_bounds is not None else np.zeros_like(t)
    noise = 10 * tb * max(traj.x0_norm, 1e-300)
    zero_tol = 1e-10 * max(traj.x0_norm, 1.0)
    if t.size and np.all(q <= zero_tol):
        return DecayFit((float(lo), float(hi)), float("nan"), False, float("nan"), pred, exact_zero=True, n_samples=int(t.size))
    if t.size < 20:
        raise ValueError(f"need at least 20 samples in the window, got {t.size}")
    if np.any(q <= noise):
        from .errors import AccuracyError

        raise AccuracyError("sampled values are within 10x of the kernel truncation error")
    if lo <= 1.0:
        raise ValueError("the log-corrected model needs t > 1")
    lq = np.log(q)
    b, r2 = _linfit(np.log(t), lq)
    c, r2l = _linfit(np.log(np.log(t) / t), lq)
    if r2 < min_r2 and r2l < min_r2:
        raise WindowTooNoisy(f"r^2 = {r2:.3f} (plain), {r2l:.3f} (log model); widen the window")
    use_log = r2l >= r2
    return DecayFit(
        window=(float(lo), float(hi)),
        fitted_exponent=-c if use_log else b,
        with_log_factor=use_log,
        r_squared=r2l if use_log else r2,
        predicted_exponent=pred,
        plain_exponent=b,
        plain_r_squared=r2,
        log_exponent=-c,
        log_r_squared=r2l,
        n_samples=int(t.size),
    )
