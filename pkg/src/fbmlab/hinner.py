"""Inner products in the reproducing space of fractional Brownian motion.

For BV functions f, g on [0, T] the product <f, g> is computed four ways:
through the Lebesgue-Stieltjes measure of f against the covariance
derivative (``ip_jolis``), through a window split into near and far parts
(``ip_window``), through the spectral representation (``ip_fourier``) and,
for separated supports, through the kernel alpha_H (t - s)^{2H-2}
(``ip_disjoint``). A step-function grid oracle gives an independent
brute-force check.

Singular factors |t - s|^{2H-1} are always evaluated from offsets that are
exact in floating point. Integrals of the form
int_0^x phi(d) sgn(d) |d|^b dd are reduced to |x|^{b+1} int_0^1 phi(x r) r^b dr
and evaluated with a fixed rule for the weight r^b.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .bvfunc import BVFunction, ExpPolyTerm, Piece, eval_terms, to_measure
from .quad import gauss_legendre, graded_rule, plain_rule, power_weight_rule
from .specfun import _h, alpha_h, fgn_autocov, gamma_fn

OUTER_LEVELS = 22
OUTER_NODES = 10


class IPMethod(enum.Enum):
    JolisMeasure = "jolis"
    WindowDecomposed = "window"
    DisjointSupport = "disjoint"
    FourierSpectral = "fourier"
    GridOracle = "grid"


class OverlapError(ValueError):
    """Supports are not separated."""


class TailBoundError(RuntimeError):
    """The certified spectral tail exceeds the requested tolerance."""


# ------------------------------------------------------------------ helpers


def _signed_power_moment(terms, base, x, beta):
    """int_0^x phi(base + d) sgn(d) |d|^beta dd for phi = sum of terms.

    ``base`` and ``x`` broadcast; the result has their common shape.
    """
    r, w = power_weight_rule(beta)
    base = np.asarray(base, dtype=float)
    x = np.asarray(x, dtype=float)
    base, x = np.broadcast_arrays(base, x)
    t = base[..., None] + x[..., None] * r
    vals = eval_terms(terms, t)
    return np.abs(x) ** (beta + 1.0) * (vals @ w)


def _kernel_sum(g: BVFunction, s, beta):
    """P(s) = int g(t) sgn(t - s) |t - s|^beta dt."""
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    for p in g.pieces:
        out += _signed_power_moment(p.terms, s, p.b - s, beta) - _signed_power_moment(p.terms, s, p.a - s, beta)
    return out


def _cov_derivative_integral(g: BVFunction, s, h):
    """int_0^T g(t) dR(s, t)/dt dt as a function of s."""
    beta = 2.0 * h - 1.0
    j0 = float(_kernel_sum(g, np.zeros(1), beta)[0])
    return h * (j0 - _kernel_sum(g, s, beta))


def _density_beta(p: Piece) -> float:
    q = min((t.power for t in p.terms), default=0.0)
    return max(q, -0.999) if (q < 0.0 and p.a == 0.0) else 0.0


def _interior(points, a, b):
    return sorted({float(x) for x in points if a < x < b})


def _common_horizon(f: BVFunction, g: BVFunction):
    if f.t_horizon != g.t_horizon:
        raise ValueError("f and g live on different horizons")
    return f.t_horizon


# ------------------------------------------------------------------ Jolis


def ip_jolis(f: BVFunction, g: BVFunction, h) -> float:
    """<f, g> = -int int g(t) dR(s, t)/dt dt nu_f(ds)."""
    h = _h(h)
    _common_horizon(f, g)
    nu = to_measure(f)
    total = 0.0
    if nu.atoms:
        xs = np.array([x for x, _ in nu.atoms])
        ms = np.array([m for _, m in nu.atoms])
        total += math.fsum(ms * _cov_derivative_integral(g, xs, h))
    for p in nu.density:
        br = _interior(g.breakpoints, p.a, p.b)
        rule = graded_rule(
            p.a, p.b, br or None, n=OUTER_NODES, levels=OUTER_LEVELS, beta_ends=(_density_beta(p), 0.0)
        )
        vals = p(rule.x) * _cov_derivative_integral(g, rule.x, h)
        total += float(rule.integrate(vals))
    return -total


# ------------------------------------------------------------------ disjoint supports


def ip_disjoint(f: BVFunction, g: BVFunction, h) -> float:
    """alpha_H int int f(s) g(t) (t - s)^{2H-2} ds dt for supp f left of supp g.

    Touching supports are allowed: the inner integral is integrated by parts
    so that only the integrable factor (t - s)^{2H-1} remains.
    """
    h = _h(h)
    _common_horizon(f, g)
    if not f.pieces or not g.pieces:
        return 0.0
    if f.support[1] > g.support[0]:
        raise OverlapError(f"supp f ends at {f.support[1]} after supp g starts at {g.support[0]}")
    if h == 0.5:
        return 0.0
    beta = 2.0 * h - 1.0
    total = 0.0
    for fp in f.pieces:
        for gp in g.pieces:
            touch = gp.a == fp.b
            rule = graded_rule(
                fp.a,
                fp.b,
                n=OUTER_NODES,
                levels=OUTER_LEVELS,
                beta_ends=(_density_beta(fp), beta if touch else 0.0),
            )
            s = rule.x
            u0 = (gp.a - fp.b) + rule.d_hi  # exact offset to the start of g's piece
            u1 = gp.b - s
            dterms = gp.derivative_terms()
            with np.errstate(divide="ignore"):
                bound = gp(gp.b) * u1**beta - gp(gp.a) * u0**beta
            part = bound - (
                _signed_power_moment(dterms, s, u1, beta) - _signed_power_moment(dterms, s, u0, beta)
            )
            total += float(rule.integrate(fp(s) * part / beta))
    return alpha_h(h) * total


# ------------------------------------------------------------------ window decomposition


def _far_term(outer: BVFunction, inner: BVFunction, eps: float, a: float) -> float:
    """int_eps^T outer(t) int_0^{t-eps} inner(s) (t - s)^a ds dt."""
    total = 0.0
    for op in outer.pieces:
        lo = max(op.a, eps)
        if lo >= op.b:
            continue
        br = _interior([x + eps for x in inner.breakpoints], lo, op.b)
        rule = graded_rule(lo, op.b, br or None, n=OUTER_NODES, levels=12)
        t = rule.x
        acc = np.zeros_like(t)
        for ip in inner.pieces:
            hi = np.minimum(ip.b, t - eps)
            live = hi > ip.a
            if not live.any():
                continue
            ir = graded_rule(ip.a, np.where(live, hi, ip.a), n=OUTER_NODES, levels=10, beta_ends=(_density_beta(ip), 0.0))
            dist = t[..., None] - ir.x
            val = ip(ir.x) * np.where(ir.w > 0, np.abs(dist), 1.0) ** a
            acc += np.where(live, ir.integrate(val), 0.0)
        total += float(rule.integrate(op(t) * acc))
    return total


def _window_breaks(f: BVFunction, eps1: float, eps2: float):
    """Outer breakpoints for the near term and the subset where it is singular."""
    sing = set(f.breakpoints)
    kinks = set()
    for c in sing:
        kinks |= {c - eps2, c + eps1}
    return sing, kinks


def _near_phi(f: BVFunction, t, rule, eps1, eps2, beta):
    """int (t^beta - sgn(t - s)|t - s|^beta) nu_{f restricted to the window at t}(ds)."""
    out = np.zeros_like(t)

    def offset(point):
        # exact t - point when point is an end of t's subinterval
        return np.where(rule.lo == point, rule.d_lo, np.where(rule.hi == point, -rule.d_hi, t - point))

    for p in f.pieces:
        wlo = t - eps1
        whi = t + eps2
        a_is_win = wlo > p.a
        b_is_win = whi < p.b
        A = np.where(a_is_win, wlo, p.a)
        B = np.where(b_is_win, whi, p.b)
        live = A < B
        # t - A and t - B
        tA = np.where(a_is_win, eps1, offset(p.a))
        tB = np.where(b_is_win, -eps2, offset(p.b))
        fA, fB = p(A), p(B)
        dterms = p.derivative_terms()
        dens = np.zeros_like(t)
        if dterms:
            dens = _signed_power_moment(dterms, t, -tB, beta) - _signed_power_moment(dterms, t, -tA, beta)
        mass = fA - fB + (fB - fA)
        with np.errstate(divide="ignore", invalid="ignore"):
            tb = np.where(t > 0, t, 1.0) ** beta
            atoms = fA * np.sign(tA) * np.abs(tA) ** beta - fB * np.sign(tB) * np.abs(tB) ** beta
        # the density part of int sgn(t - s)|t - s|^beta nu(ds) is -dens
        val = tb * mass - (atoms - dens)
        out += np.where(live, val, 0.0)
    return out


def ip_window(f: BVFunction, g: BVFunction, h, eps1: float = 1.0, eps2: float = 1.0) -> float:
    """Window form of <f, g> with near zone [t - eps1, t + eps2].

    Far parts use the kernel alpha_H |t - s|^{2H-2}; the near part applies
    the covariance derivative to f cut to the window around t.
    """
    h = _h(h)
    T = _common_horizon(f, g)
    if not (0.0 < eps1 < T and 0.0 < eps2 < T):
        raise ValueError("need 0 < eps1, eps2 < T")
    a = 2.0 * h - 2.0
    beta = 2.0 * h - 1.0
    far = _far_term(g, f, eps1, a) + _far_term(f, g, eps2, a)
    sing, kinks = _window_breaks(f, eps1, eps2)
    near = 0.0
    for gp in g.pieces:
        pts = [gp.a] + _interior(sing | kinks, gp.a, gp.b) + [gp.b]
        los, his = np.array(pts[:-1]), np.array(pts[1:])
        bl = np.array([x in sing for x in los])
        bh = np.array([x in sing for x in his])
        for fl in (False, True):
            for fh in (False, True):
                m = (bl == fl) & (bh == fh)
                if not m.any():
                    continue
                rule = graded_rule(
                    los[m],
                    his[m],
                    n=OUTER_NODES,
                    levels=OUTER_LEVELS,
                    beta_ends=(beta if fl else 0.0, beta if fh else 0.0),
                )
                vals = gp(rule.x) * _near_phi(f, rule.x, rule, eps1, eps2, beta)
                near += float(rule.integrate(vals).sum())
    return alpha_h(h) * far - h * near


# ------------------------------------------------------------------ Fourier


def _check_integer_powers(f: BVFunction):
    for p in f.pieces:
        for t in p.terms:
            if t.power != int(t.power) or t.power < 0:
                raise ValueError("closed-form transform needs non-negative integer powers")


def _ft_term(term: ExpPolyTerm, a: float, b: float, xi):
    """int_a^b c t^k e^{r t} e^{-i xi t} dt."""
    k = int(term.power)
    z = term.rate - 1j * np.asarray(xi, dtype=float)
    out = np.empty(z.shape, dtype=complex)
    R = max(abs(a), abs(b))
    small = np.abs(z) * R <= 1.0
    if small.any():
        zs = z[small]
        acc = np.zeros(zs.shape, dtype=complex)
        zm = np.ones_like(zs)
        fact = 1.0
        for m in range(40):
            e = k + m + 1
            acc += zm / fact * (b**e - a**e) / e
            zm = zm * zs
            fact *= m + 1
        out[small] = acc
    big = ~small
    if big.any():
        zb = z[big]

        def anti(t):
            s = np.zeros(zb.shape, dtype=complex)
            c = 1.0
            for j in range(k + 1):
                s += (-1) ** j * c * t ** (k - j) / zb ** (j + 1)
                c *= k - j
            return np.exp(zb * t) * s

        out[big] = anti(b) - anti(a)
    return term.coef * out


def fourier_transform(f: BVFunction, xi) -> np.ndarray:
    """Closed-form int f(t) e^{-i xi t} dt for integer powers."""
    _check_integer_powers(f)
    xi = np.asarray(xi, dtype=float)
    out = np.zeros(xi.shape, dtype=complex)
    for p in f.pieces:
        for t in p.terms:
            out += _ft_term(t, p.a, p.b, xi)
    return out


def _derivative_bv(f: BVFunction) -> BVFunction:
    return BVFunction(tuple(Piece(p.a, p.b, p.derivative_terms()) for p in f.pieces), f.t_horizon)


def _atom_tower(f: BVFunction, depth: int):
    """Atoms of the measures of f, f', ..., f^(depth-1) and the L1 norm of f^(depth)."""
    tower = []
    cur = f
    for _ in range(depth):
        tower.append(to_measure(cur).atoms)
        cur = _derivative_bv(cur)
    l1 = 0.0
    for p in cur.pieces:
        x, w = plain_rule(p.a, p.b, n=32, panels=8)
        l1 += float(np.sum(np.abs(p(x)) * w))
    return tower, 1.1 * l1 + 1e-300


def _osc_tail(mu: float, delta: float, xi0: float) -> complex:
    """int_xi0^inf x^{-mu} e^{-i delta x} dx for mu > 1 and |delta| xi0 >= 50."""
    if delta == 0.0:
        return xi0 ** (1.0 - mu) / (mu - 1.0)
    q = 1j * delta * xi0
    s = 0.0 + 0.0j
    coef = 1.0 + 0.0j
    for n in range(30):
        s += coef
        coef *= -(mu + n) / q
        if abs(coef) < 1e-18:
            break
    return np.exp(-1j * delta * xi0) * xi0 ** (-mu) / (1j * delta) * s


def ip_fourier(
    f: BVFunction, g: BVFunction, h, depth: int = 4, tol: float = 1e-9, xi_cut: float | None = None
) -> float:
    """c_H int F f(xi) conj(F g(xi)) |xi|^{1-2H} dxi with c_H = Gamma(2H+1) sin(pi H)/(2 pi).

    The spectral integral is done by quadrature on [0, Xi]. Beyond Xi both
    transforms are replaced by their jump expansions to order ``depth``,
    whose products integrate in closed form; the remainder is bounded by
    the L1 norms of the ``depth``-th derivatives and must stay below ``tol``.
    """
    h = _h(h)
    T = _common_horizon(f, g)
    _check_integer_powers(f)
    _check_integer_powers(g)
    c_h = gamma_fn(2.0 * h + 1.0) * math.sin(math.pi * h) / (2.0 * math.pi)
    tf, lf = _atom_tower(f, depth)
    tg, lg = _atom_tower(g, depth)

    deltas = {xa - xb for atoms_f in tf for xa, _ in atoms_f for atoms_g in tg for xb, _ in atoms_g}
    nz = [abs(d) for d in deltas if abs(d) > 1e-13 * max(1.0, T)]
    dmin = min(nz, default=1.0)
    dmax = max(nz, default=1.0)
    mf = [sum(abs(m) for _, m in a) for a in tf]
    mg = [sum(abs(m) for _, m in a) for a in tg]

    def remainder_bound(x0):
        # xi^{1-2H} xi^{-p} integrates to x0^{2-2H-p}/(p-2+2H)
        e0 = 2.0 - 2.0 * h
        out = 0.0
        for k in range(depth):
            p = k + 1 + depth
            out += (mf[k] * lg + mg[k] * lf) * x0 ** (e0 - p) / (p - e0)
        p = 2 * depth
        out += lf * lg * x0 ** (e0 - p) / (p - e0)
        return 2.0 * c_h * out

    xi0 = xi_cut if xi_cut is not None else max(500.0, 100.0 / dmin)
    while xi_cut is None and remainder_bound(xi0) > tol and xi0 < 1e6:
        xi0 *= 2.0
    # quadrature on [0, xi0]
    width = min(1.0, 3.0 / dmax)
    head = graded_rule(0.0, width, n=16, levels=30)
    npan = int(math.ceil((xi0 - width) / width))
    x2, w2 = plain_rule(width, width + npan * width, n=20, panels=npan)
    xi0 = width + npan * width
    xs = np.concatenate([head.x, x2])
    ws = np.concatenate([head.w, w2])
    prod = (fourier_transform(f, xs) * np.conj(fourier_transform(g, xs))).real
    body = 2.0 * float(np.sum(prod * xs ** (1.0 - 2.0 * h) * ws))

    # closed-form tail of the jump expansions
    tail = 0.0 + 0.0j
    for k in range(depth):
        for l in range(depth):
            ph = (1.0 / 1j) ** (k + 1) * (1.0 / (-1j)) ** (l + 1)
            mu = k + l + 1 + 2.0 * h
            for xa, ma in tf[k]:
                for xb, mb in tg[l]:
                    d = xa - xb
                    if abs(d) <= 1e-13 * max(1.0, T):
                        d = 0.0
                    tail += ph * ma * mb * _osc_tail(mu, d, xi0)
    tail_val = 2.0 * tail.real

    bound = remainder_bound(xi0)
    if bound > tol:
        raise TailBoundError(f"spectral tail bound {bound:.3g} exceeds {tol:.3g} at cut {xi0:.4g}")
    return c_h * (body + tail_val)


# ------------------------------------------------------------------ grid oracle


@dataclass(frozen=True)
class GridCovariance:
    """Covariances C_ik = E[dB_i dB_k] of increments over n cells of width delta."""

    n: int
    delta: float
    h: float
    row: np.ndarray

    @property
    def c(self) -> np.ndarray:
        i = np.arange(self.n)
        return self.row[np.abs(i[:, None] - i[None, :])]

    def matvec(self, v) -> np.ndarray:
        return toeplitz_matvec(self.row, v)


def toeplitz_matvec(row, v) -> np.ndarray:
    """Symmetric Toeplitz matrix with first row ``row`` times v (last axis) via FFT."""
    row = np.asarray(row, dtype=float)
    v = np.asarray(v, dtype=float)
    n = row.size
    if n == 1:
        return row[0] * v
    m = 1 << int(math.ceil(math.log2(2 * n - 1)))
    circ = np.zeros(m)
    circ[:n] = row
    circ[m - n + 1 :] = row[1:][::-1]
    lam = np.fft.rfft(circ)
    pad = np.zeros(v.shape[:-1] + (m,))
    pad[..., :n] = v
    return np.fft.irfft(np.fft.rfft(pad) * lam, n=m)[..., :n]


def grid_cov(h, n: int, delta: float) -> GridCovariance:
    h = _h(h)
    if n < 1 or delta <= 0:
        raise ValueError("need n >= 1 and delta > 0")
    row = np.asarray(fgn_autocov(np.arange(n), h, delta), dtype=float)
    row.setflags(write=False)
    return GridCovariance(int(n), float(delta), h, row)


def cell_averages(f: BVFunction, n: int) -> np.ndarray:
    """Averages of f over the n uniform cells of [0, T]."""
    T = f.t_horizon
    delta = T / n
    out = np.zeros(n)
    r, wr = gauss_legendre(12)
    r = 0.5 * (r + 1.0)
    wr = 0.5 * wr
    for p in f.pieces:
        i0 = max(int(math.floor(p.a / delta)), 0)
        i1 = min(int(math.ceil(p.b / delta)), n)
        idx = np.arange(i0, i1)
        lo = np.maximum(idx * delta, p.a)
        hi = np.minimum((idx + 1) * delta, p.b)
        ln = np.maximum(hi - lo, 0.0)
        x = lo[:, None] + ln[:, None] * r
        out[idx] += (p(x) * wr).sum(axis=1) * ln
    return out / delta


def ip_grid_oracle(f: BVFunction, g: BVFunction, h, n: int = 8192) -> float:
    """sum_ik fbar_i gbar_k C_ik for cell averages on n uniform cells."""
    T = _common_horizon(f, g)
    cov = grid_cov(h, n, T / n)
    return float(cell_averages(f, n) @ cov.matvec(cell_averages(g, n)))


def tensor_ip_grid_oracle(F, G, h, n: int, delta: float) -> float:
    """sum_ijkl F_ij G_kl C_ik C_jl for n x n cell arrays F and G."""
    F = np.asarray(F, dtype=float)
    G = np.asarray(G, dtype=float)
    if F.shape != (n, n) or G.shape != (n, n):
        raise ValueError(f"expected {n}x{n} arrays")
    cov = grid_cov(h, n, delta)
    CG = cov.matvec(G)  # C applied along rows: (G C)
    CGC = cov.matvec(CG.T).T  # C G C for symmetric C
    return float(np.sum(F * CGC))


def tensor_cell_averages(kernel, t_horizon: float, n: int, nodes: int = 4) -> np.ndarray:
    """Cell averages of a bivariate kernel(t, s) on the n x n grid by tensor Gauss rule."""
    delta = t_horizon / n
    r, wr = gauss_legendre(nodes)
    r = 0.5 * (r + 1.0)
    wr = 0.5 * wr
    c = np.arange(n) * delta
    x = (c[:, None] + delta * r[None, :]).ravel()
    w = np.tile(wr, n)
    K = kernel(x[:, None], x[None, :]) * w[:, None] * w[None, :]
    return K.reshape(n, nodes, n, nodes).sum(axis=(1, 3))


# ------------------------------------------------------------------ dispatch and battery


def inner_product(f: BVFunction, g: BVFunction, h, method: IPMethod | str = IPMethod.JolisMeasure, **kw) -> float:
    method = IPMethod(method) if isinstance(method, str) else method
    if method is IPMethod.JolisMeasure:
        return ip_jolis(f, g, h)
    if method is IPMethod.WindowDecomposed:
        return ip_window(f, g, h, kw.get("eps1", 1.0), kw.get("eps2", 1.0))
    if method is IPMethod.DisjointSupport:
        return ip_disjoint(f, g, h)
    if method is IPMethod.FourierSpectral:
        return ip_fourier(f, g, h)
    return ip_grid_oracle(f, g, h, kw.get("n", 8192))


def standard_battery(t_horizon: float = 4.0) -> list[tuple[str, BVFunction, BVFunction]]:
    """Twelve named (f, g) pairs with breakpoints on a 1/4 grid of [0, T]."""
    T = float(t_horizon)
    E = ExpPolyTerm
    one = lambda a, b, c=1.0: BVFunction.indicator(a, b, T, c)
    single = lambda a, b, *terms: BVFunction.single(a, b, terms, T)
    return [
        ("full-full", one(0, T), one(0, T)),
        ("nested", one(0, 1), one(0, 3)),
        ("disjoint", one(0, 1), one(2, 3)),
        ("touching", one(0, 1.5), one(1.5, 3)),
        ("exp-decay-grow", single(0, 2, E(1.0, 0, -1.0)), single(1, 3, E(1.0, 0, 1.0))),
        ("exp-window", single(0, T, E(1.0, 0, -1.0)), single(0, T, E(math.exp(-T), 0, 1.0))),
        ("linear-quadratic", single(0, 2, E(1.0, 1)), single(0.5, 3.5, E(0.5, 2))),
        ("steps", one(0, 1) + one(1, 2.5, -2.0), one(0.25, 1.75, 3.0)),
        ("poly-exp", single(0, 3, E(1.0, 1, -0.5)), single(1, T, E(2.0, 0, -0.25), E(-1.0, 1))),
        ("mixed-pieces", one(0, 1) + single(1, 2, E(1.0, 1)), single(0.5, 2.5, E(1.0, 0, 0.5))),
        ("far-apart", single(0, 1, E(1.0, 1)), single(3, T, E(1.0, 0, -1.0))),
        ("oscillating", one(0, 0.5) + one(0.5, 1, -1.0) + one(1, 1.5) + one(1.5, 2, -1.0), one(0, 2)),
    ]
