"""Level set of |phi| = 1, resolvent-norm estimates and boundedness criteria."""

from __future__ import annotations

from dataclasses import dataclass, field
from math import comb
from typing import NamedTuple

import numpy as np

from .errors import EmptyBox, NotInSpectrum, OnLevelSet, WrongSpace

LEVEL_TOL = 1e-6
ON_LEVEL_TOL = 1e-9
CONTRACT_TOL = 1e-9


# ----------------------------------------------------------- level set


@dataclass
class LevelSet:
    polylines: list
    grid_resolution: float
    bounding_box: tuple
    closed: list = field(default_factory=list)

    def points(self):
        if not self.polylines:
            return np.zeros(0, dtype=complex)
        return np.concatenate([np.asarray(p) for p in self.polylines])

    def csv_rows(self):
        for i, line in enumerate(self.polylines):
            for z in line:
                yield (float(z.real), float(z.imag), i)

    def to_dict(self):
        return {
            "grid_resolution": self.grid_resolution,
            "bounding_box": list(self.bounding_box),
            "closed": list(self.closed),
            "polylines": [[[float(z.real), float(z.imag)] for z in line] for line in self.polylines],
        }


def _as_ratfun(cf):
    return cf.phi if hasattr(cf, "phi") else cf


def default_box(cf, pad=0.25):
    """Box certain to contain the level set: outside it |phi| < 1."""
    f = _as_ratfun(cf)
    poles = f.poles()
    rmax = float(np.max(np.abs(poles))) if poles.size else 0.0
    den = f.den.monic()
    num = f.num.coeffs / f.den.lead
    radius = max(1.0, 2 * rmax)
    for _ in range(200):
        upper = np.sum(np.abs(num) * radius ** np.arange(num.size))
        lower = np.prod(radius - np.abs(poles)) if poles.size else abs(den.lead)
        if lower > 0 and upper < lower:
            break
        radius *= 1.5
    r = radius * (1 + pad)
    return (-r, r, -r, r)


def _edge_points(z0, z1, g0, f, steps=40):
    """Bisection along segments ``z0 -> z1`` on which ``|f| - 1`` changes sign."""
    a, b = z0.copy(), z1.copy()
    ga = g0.copy()
    for _ in range(steps):
        mid = (a + b) / 2
        gm = np.abs(f(mid)) - 1.0
        same = np.sign(gm) == np.sign(ga)
        a = np.where(same, mid, a)
        ga = np.where(same, gm, ga)
        b = np.where(same, b, mid)
        if np.all(np.abs(gm) <= 1e-14):
            break
    zs = (a + b) / 2
    return zs


def trace_level_set(cf, box=None, resolution=1e-2):
    """Polylines sampling ``{|phi| = 1}`` via marching squares with refined vertices."""
    f = _as_ratfun(cf)
    if not resolution > 0:
        raise ValueError("resolution must be positive")
    box = default_box(f) if box is None else tuple(float(b) for b in box)
    x0, x1, y0, y1 = box
    if not (x1 > x0 and y1 > y0):
        raise EmptyBox(f"degenerate box {box}")
    nx = int(np.ceil((x1 - x0) / resolution)) + 1
    ny = int(np.ceil((y1 - y0) / resolution)) + 1
    xs = np.linspace(x0, x1, nx)
    ys = np.linspace(y0, y1, ny)
    Z = xs[:, None] + 1j * ys[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        G = np.abs(f(Z)) - 1.0
    pos = G > 0
    bad = ~np.isfinite(G)
    # cells holding a pole are skipped
    skip = np.zeros((nx - 1, ny - 1), dtype=bool)
    for pole in f.poles():
        i = np.searchsorted(xs, pole.real) - 1
        j = np.searchsorted(ys, pole.imag) - 1
        for di in (-1, 0, 1):
            for dj in (-1, 0, 1):
                a, b = i + di, j + dj
                if 0 <= a < nx - 1 and 0 <= b < ny - 1:
                    cx0, cx1, cy0, cy1 = xs[a], xs[a + 1], ys[b], ys[b + 1]
                    if cx0 <= pole.real <= cx1 and cy0 <= pole.imag <= cy1:
                        skip[a, b] = True
    skip |= bad[:-1, :-1] | bad[1:, :-1] | bad[:-1, 1:] | bad[1:, 1:]

    c00, c10, c11, c01 = pos[:-1, :-1], pos[1:, :-1], pos[1:, 1:], pos[:-1, 1:]
    code = c00.astype(int) | (c10.astype(int) << 1) | (c11.astype(int) << 2) | (c01.astype(int) << 3)
    active = (code != 0) & (code != 15) & ~skip
    cells = np.argwhere(active)

    # edge keys: ("h", i, j) joins (i,j)-(i+1,j); ("v", i, j) joins (i,j)-(i,j+1)
    segments = []
    for i, j in cells:
        s00, s10, s11, s01 = c00[i, j], c10[i, j], c11[i, j], c01[i, j]
        e = []
        if s00 != s10:
            e.append(("h", i, j))
        if s10 != s11:
            e.append(("v", i + 1, j))
        if s11 != s01:
            e.append(("h", i, j + 1))
        if s01 != s00:
            e.append(("v", i, j))
        if len(e) == 2:
            segments.append((e[0], e[1]))
        elif len(e) == 4:
            bottom, right, top, left = ("h", i, j), ("v", i + 1, j), ("h", i, j + 1), ("v", i, j)
            centre = complex((xs[i] + xs[i + 1]) / 2, (ys[j] + ys[j + 1]) / 2)
            if (abs(f(centre)) > 1.0) == bool(s00):
                segments += [(bottom, right), (top, left)]
            else:
                segments += [(bottom, left), (right, top)]

    keys = sorted({k for s in segments for k in s})
    if not keys:
        return LevelSet([], float(resolution), box, [])
    index = {k: n for n, k in enumerate(keys)}
    za = np.array([Z[i, j] for _, i, j in keys])
    zb = np.array([Z[i + 1, j] if d == "h" else Z[i, j + 1] for d, i, j in keys])
    ga = np.array([G[i, j] for _, i, j in keys])
    verts = _edge_points(za, zb, ga, f)

    adj = {n: [] for n in range(len(keys))}
    for a, b in segments:
        adj[index[a]].append(index[b])
        adj[index[b]].append(index[a])
    seen = set()
    polylines, closed = [], []
    # open chains first (start at endpoints), then loops
    starts = [n for n in adj if len(adj[n]) == 1] + [n for n in adj if len(adj[n]) != 1]
    for s in starts:
        if s in seen:
            continue
        chain = [s]
        seen.add(s)
        prev, cur = None, s
        is_closed = False
        while True:
            nxt = [n for n in adj[cur] if n != prev and n not in seen]
            if not nxt:
                is_closed = len(chain) > 2 and s in adj[cur]
                break
            prev, cur = cur, nxt[0]
            chain.append(cur)
            seen.add(cur)
        pts = verts[chain]
        if is_closed:
            pts = np.append(pts, pts[:1])
        polylines.append(pts)
        closed.append(bool(is_closed))
    return LevelSet(polylines, float(resolution), box, closed)


# --------------------------------------------------- resolvent estimates


@dataclass
class ResolventEstimate:
    lam: complex
    phi: complex
    center: float
    halfwidth: float
    q_norm: float
    witness_defect: float | None = None
    witness_ratio: float | None = None
    witness_length: int | None = None

    @property
    def lower(self):
        return max(0.0, self.center - self.halfwidth)

    @property
    def upper(self):
        return self.center + self.halfwidth

    def to_dict(self):
        d = dict(self.__dict__)
        d["lower"], d["upper"] = self.lower, self.upper
        return d


def _witness_ratio(q, p, n):
    """``|Q x|_p / (|x|_p c)`` for the coherent witness of length ``n``; ``c = sum_l q^l``.

    ``(Qx)_j`` has norm ``c_j = (q^{max(0, j-n)} - q^j)/(1-q)`` times the top
    singular value; everything is summed in closed form.
    """
    if np.isinf(p):
        return 1.0 - q ** n
    j = np.arange(1, n + 1)
    head = np.sum((1.0 - q ** j) ** p)
    tail = (1.0 - q ** n) ** p * q ** p / (1.0 - q ** p)
    return float(((head + tail) / n) ** (1.0 / p))


def witness_length(q, p, eps=1e-3, cap=1 << 24):
    n = max(1, int(np.ceil(1.0 / (1.0 - q))))
    while _witness_ratio(q, p, n) < 1.0 - eps and n < cap:
        n *= 2
    return n


def witness_state(sys, cf, lam, n):
    """Coherent test sequence ``x_k = u^k v`` (``0 <= k < n``) for the off-diagonal part."""
    from .semigroup import SeqState

    R = sys.resolvent0(lam)
    RAR = R @ sys.A1 @ R
    ph = complex(cf(lam))
    _, _, vh = np.linalg.svd(RAR)
    v = vh[0].conj()
    u = ph / abs(ph)
    if abs(ph) < 1:
        ks = np.arange(n)
        return SeqState((u ** ks)[:, None] * v[None], 0, p=sys.p)
    ks = np.arange(-n + 1, 1)
    return SeqState((u ** ks)[:, None] * v[None], -n + 1, p=sys.p)


def resolvent_estimate(sys, cf, lam, eps=1e-3, witness=True):
    """Two-sided estimate of ``|R(lam, A)|`` off the level set.

    ``|R(lam, A)|`` lies within ``halfwidth = |R(lam, A0)|`` of
    ``center = |R A1 R| / |1 - |phi||``; the off-diagonal part has norm
    exactly ``center`` and a finite witness attains it to relative ``eps``.
    Block norms are spectral norms, matching the Euclidean block norm of
    the sequence spaces.
    """
    lam = complex(lam)
    if np.any(np.abs(sys.sigma0() - lam) < 1e-14):
        raise NotInSpectrum(f"{lam} is an eigenvalue of A0")
    ph = complex(cf(lam))
    gap = float(cf.one_minus_abs(lam))
    if abs(gap) <= ON_LEVEL_TOL:
        raise OnLevelSet(f"|phi({lam})| = {abs(ph):.12g}")
    R = sys.resolvent0(lam)
    rar = float(np.linalg.norm(R @ sys.A1 @ R, 2))
    halfwidth = float(np.linalg.norm(R, 2))
    center = rar / abs(gap)
    q_norm = center
    est = ResolventEstimate(lam, ph, center, halfwidth, q_norm)
    if witness:
        q = abs(ph) if abs(ph) < 1 else 1.0 / abs(ph)
        n = witness_length(q, sys.p, eps)
        ratio = q_norm * _witness_ratio(q, sys.p, n)
        est.witness_ratio = ratio
        est.witness_defect = q_norm - ratio
        est.witness_length = n
    return est


def off_diagonal_blocks(sys, cf, lam, tol=1e-14):
    """Toeplitz blocks of the off-diagonal part ``Q`` of ``R(lam, A)``, with first offset."""
    from .semigroup import resolvent_blocks

    blocks, dmin = resolvent_blocks(sys, cf, lam, tol)
    blocks = blocks.copy()
    idx = -dmin  # position of offset 0
    blocks[idx] -= sys.resolvent0(lam)
    return blocks, dmin


def approx_eigenvector(sys, cf, lam, n, y0=None, p=None):
    """Unit-norm approximate eigenvector supported on ``|k| <= n`` for ``lam`` on the level set.

    Returns ``(state, defect, formula)`` where ``defect = |(lam - A) x|_p``
    is computed by applying A, and ``formula`` is the closed form
    ``((|A1 y0|^p + |A1 R A1 y0|^p) / ((2n+1) |R A1 y0|^p))^{1/p}``.
    """
    from .semigroup import SeqState, apply_generator

    p = sys.p if p is None else float(p)
    if np.isinf(p):
        raise WrongSpace("approximate eigenvectors are built for 1 <= p < inf")
    lam = complex(lam)
    ph = complex(cf(lam))
    if abs(abs(ph) - 1.0) > ON_LEVEL_TOL:
        raise NotInSpectrum(f"|phi({lam})| = {abs(ph):.12g} is not 1")
    if n < 1:
        raise ValueError("n must be positive")
    if y0 is None:
        _, _, vh = np.linalg.svd(sys.A1)
        y0 = vh[0].conj()
    y0 = np.asarray(y0, dtype=complex)
    R = sys.resolvent0(lam)
    w = R @ sys.A1 @ y0
    nw = np.linalg.norm(w)
    if nw == 0:
        raise ValueError("A1 y0 = 0")
    ks = np.arange(-n, n + 1)
    core = (ph ** ks.astype(float))[:, None] * w[None] / ((2 * n + 1) ** (1.0 / p) * nw)
    x = SeqState(core, -n, p=p)
    r = x.scaled(lam) - apply_generator(sys, x)
    defect = r.norm(p)
    a = np.linalg.norm(sys.A1 @ y0)
    b = np.linalg.norm(sys.A1 @ R @ sys.A1 @ y0)
    formula = float(((a ** p + b ** p) / ((2 * n + 1) * nw ** p)) ** (1.0 / p))
    return x, defect, formula


# ------------------------------------------------- boundedness criteria


class Contractivity(NamedTuple):
    passes: bool
    achieved_sup: float


def contractivity_profile(sys, cf, lams):
    lams = np.asarray(lams, float)
    out = np.empty(lams.size)
    for i, lam in enumerate(lams):
        R = sys.resolvent0(lam)
        gap = cf.one_minus_abs(lam)
        out[i] = lam * np.linalg.norm(R, 2) + lam * np.linalg.norm(R @ sys.A1 @ R, 2) / gap
    return out


def _gap_slope_at_zero(cf):
    """``lim (1 - |phi(lam)|)/lam`` along the positive reals."""
    return -float((np.conj(cf.phi0) * cf.dphi0).real / abs(cf.phi0))


def check_contractivity(sys, cf, n_grid=2000, lo=1e-6, hi=1e6):
    """Sup of ``lam |R| + lam |R A1 R| / (1 - |phi|)`` over ``lam > 0``.

    Grid values plus the two endpoint limits: 1 at infinity and
    ``|A0^{-1} A1 A0^{-1}| / c`` at 0, where ``1 - |phi(lam)| ~ c lam``.
    """
    lams = np.geomspace(lo, hi, n_grid)
    vals = contractivity_profile(sys, cf, lams)
    ends = [1.0]
    c = _gap_slope_at_zero(cf)
    if c > 0:
        A0i = np.linalg.inv(sys.A0)
        ends.append(float(np.linalg.norm(A0i @ sys.A1 @ A0i, 2) / c))
    else:
        ends.append(float("inf"))
    top = float(max(vals.max(), *ends))
    return Contractivity(bool(top <= 1.0 + CONTRACT_TOL), top)


def repeated_pole_form(f, tol=1e-9):
    """``(zeta, k)`` if ``f = zeta^k / (lam + zeta)^k`` with ``zeta > 0``, else ``None``."""
    f = _as_ratfun(f)
    k = f.den.degree
    if k < 1 or f.num.degree != 0:
        return None
    poles = f.poles()
    zeta = -complex(np.mean(poles))
    if abs(zeta.imag) > tol * max(1.0, abs(zeta)) or zeta.real <= 0:
        return None
    zeta = zeta.real
    den = f.den.coeffs / f.den.lead
    target = np.array([comb(k, j) * zeta ** (k - j) for j in range(k + 1)])
    num = f.num.coeffs[0] / f.den.lead
    scale = max(1.0, np.max(np.abs(target)))
    if np.max(np.abs(den - target)) > 1e-7 * scale or abs(num - zeta ** k) > 1e-7 * max(1.0, zeta ** k):
        return None
    return zeta, k


def condition1_sup(cf, n_grid=2000):
    lams = np.concatenate([np.geomspace(1e-6, 1.0, n_grid)])
    gaps = np.array([cf.one_minus_abs(l) for l in lams])
    vals = np.where(gaps > 0, lams / np.where(gaps > 0, gaps, 1.0), np.inf)
    i = int(np.argmax(vals))
    return float(vals[i]), float(lams[i])


def condition2_probe(cf, n_max=30, lams=None, tail_tol=1e-12, max_terms=200000):
    """Grid sup of ``lam^{n+1}/n! sum_l |d^n phi^l / dlam^n|`` for ``1 <= n <= n_max``.

    Taylor coefficients of ``phi^l`` at each grid point are propagated by
    repeated series multiplication; the sum over ``l`` stops once
    ``|phi|^{l+1}/(1-|phi|) < tail_tol``.  A grid probe, not a proof.
    Returns ``(sup_by_n, lams)``.
    """
    f = _as_ratfun(cf)
    lams = np.geomspace(1e-2, 1e2, 41) if lams is None else np.asarray(lams, float)
    order = n_max + 1
    T = np.zeros((lams.size, order, order), dtype=complex)
    mods = np.empty(lams.size)
    for g, lam in enumerate(lams):
        c = f.taylor(lam, n_max)
        for i in range(order):
            T[g, i, : i + 1] = c[i::-1]
        mods[g] = abs(c[0])
    if np.any(mods >= 1):
        return np.full(n_max, np.inf), lams
    need = np.ceil(np.log(tail_tol * (1 - mods)) / np.log(np.maximum(mods, 1e-300))).astype(int)
    need = np.clip(need, 1, max_terms)
    P = T[:, :, :1].copy()  # series of phi^1
    acc = np.abs(P[:, :, 0])
    for ell in range(2, int(need.max()) + 1):
        P = T @ P
        live = ell <= need
        acc[live] += np.abs(P[live, :, 0])
    n = np.arange(1, order)
    vals = acc[:, 1:] * lams[:, None] ** (n[None, :] + 1)
    return vals.max(axis=0), lams


@dataclass
class BoundednessReport:
    contractive: bool
    contractive_sup: float
    condition1_sup: float
    condition1_at: float
    condition2_sup: float | None
    condition2_form: str
    verdict: str
    repeated_pole: tuple | None = None
    rigorous: bool = True
    notes: list = field(default_factory=list)

    def to_dict(self):
        return dict(self.__dict__)


def check_uniform_boundedness(sys, cf, probe_terms=30):
    """Both sufficient conditions for ``sup_t |T(t)| < inf`` plus contractivity."""
    con = check_contractivity(sys, cf)
    c1, c1_at = condition1_sup(cf)
    form = repeated_pole_form(cf.phi)
    notes = []
    if form is not None:
        zeta, k = form
        c2, tag, rigorous = zeta, "closed_form", True
        notes.append(f"phi = zeta^k/(lam+zeta)^k with zeta={zeta:.12g}, k={k}: condition 2 holds with bound zeta")
    else:
        by_n, _ = condition2_probe(cf, probe_terms)
        c2, tag, rigorous = float(np.max(by_n)), "numeric", False
        growing = np.max(by_n[-10:]) > 1.1 * np.max(by_n[:-10]) if by_n.size > 10 else False
        notes.append("condition 2 evaluated on a finite grid of (n, lam); not a proof")
        if growing:
            notes.append("condition 2 values still growing with n")
    if con.passes:
        verdict = "proved_contractive"
    elif form is not None and np.isfinite(c1):
        verdict = "proved_bounded_repeated_pole"
    elif np.isfinite(c1) and np.isfinite(c2) and c1 < 1e8 and c2 < 1e8 and "condition 2 values still growing with n" not in notes:
        verdict = "numeric_pass"
    else:
        verdict = "numeric_fail"
    return BoundednessReport(
        contractive=con.passes,
        contractive_sup=con.achieved_sup,
        condition1_sup=c1,
        condition1_at=c1_at,
        condition2_sup=c2,
        condition2_form=tag,
        verdict=verdict,
        repeated_pole=form,
        rigorous=rigorous and verdict.startswith("proved"),
        notes=notes,
    )


def assess_boundedness(sys, cf):
    return check_uniform_boundedness(sys, cf)


def sigma0_records(sys):
    return [complex(z) for z in np.sort_complex(sys.sigma0())]


__all__ = [
    "LevelSet",
    "ResolventEstimate",
    "BoundednessReport",
    "Contractivity",
    "trace_level_set",
    "default_box",
    "resolvent_estimate",
    "witness_state",
    "witness_length",
    "off_diagonal_blocks",
    "approx_eigenvector",
    "check_contractivity",
    "check_uniform_boundedness",
    "assess_boundedness",
    "condition1_sup",
    "condition2_probe",
    "repeated_pole_form",
]
