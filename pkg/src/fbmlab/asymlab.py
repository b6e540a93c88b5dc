"""Large-T behaviour of the squared norm of f_T(t, s) = e^{-|t-s|} 1_{[0,T]^2}.

The norm splits into M-terms. Each M-term except M11 is a double integral
over (s1, z) whose s1-density rho(s1) depends on s1 only through the
distances to the two ends of [0, T] and converges exponentially in both.
So V(T) = int_0^T rho(s1) ds1 equals a left edge integral plus a right edge
integral plus (T - 2c) times the bulk density, once T >= 2c. M11 has an
algebraic tail and is evaluated from an exact two-dimensional collapse.

Coordinates are offsets from s1: lb = -s1, rb = T - s1, and the window
[s1 - 1, s1 + 1] clipped to [0, T] becomes [lo, hi] = [max(-1, lb), min(1, rb)].
With A(x) = sgn(x)|x|^{2H-1} and Psi(z, p, q) = int_p^q e^{-|z+v|} v^{2H-2} dv:

    N, Ntilde : K_N(z) = Psi(z, 1, rb - z) on [lb, rb - 1]
    U, Utilde : K_U(z) = Psi(-z, 1, z - lb) on [lb + 1, rb]
    L, P      : K_L(z) = int A(w) e^{-|z+w|} dw over w in [max(lb-z, -1), min(rb-z, 1)]
    M12       : K_U(z) Psi(z, 1, -lb)

paired with the window factors G_N, Gtilde, G_L, G_P defined below.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .bvfunc import BVFunction, ExpPolyTerm
from .hinner import _cov_derivative_integral
from .quad import (
    QuadConfig,
    SingularityHint,
    gauss_legendre,
    graded_rule,
    integrate_1d,
    integrate_semi_inf,
    power_weight_rule,
)
from .specfun import HurstParam, _h, alpha_h, gamma_fn, norm_slope

INF = 1.0e4
Z_CUT = 45.0
EDGE = 25.0
_E = math.e


class AppendixIntegralId(enum.Enum):
    M11 = "M11"
    M12 = "M12"
    N = "N"
    Ntilde = "Ntilde"
    U = "U"
    Utilde = "Utilde"
    L = "L"
    P = "P"
    Q = "Q"
    D = "D"  # diagonal term of the mixed window derivative


LOCALIZED = tuple(i for i in AppendixIntegralId if i is not AppendixIntegralId.M11)


class AsymptoteError(ValueError):
    pass


class AppendixQuadratureError(RuntimeError):
    def __init__(self, ident: AppendixIntegralId, cause: Exception):
        super().__init__(f"{ident.value}: {cause}")
        self.ident = ident


@dataclass(frozen=True)
class FtKernelParams:
    t_horizon: float
    theta: float = 1.0
    h: float | HurstParam = 0.3

    def __post_init__(self):
        if not self.t_horizon > 0 or not self.theta > 0:
            raise ValueError("t_horizon and theta must be positive")
        object.__setattr__(self, "h", _h(self.h))


@dataclass(frozen=True)
class MTermBreakdown:
    m11: float
    m12: float
    m31: float
    m32: float
    m33: float
    total: float
    parts: dict = field(default_factory=dict, compare=False)

    @classmethod
    def compose(cls, h, m11, m12, m31, m32, m33, parts=None) -> "MTermBreakdown":
        a = alpha_h(h)
        total = m33 + 2.0 * (a * a * (m11 + m12) - a * (m31 + m32))
        return cls(m11, m12, m31, m32, m33, total, dict(parts or {}))


@dataclass(frozen=True)
class LinearAsymptote:
    slope: float
    intercept: float
    t_grid: list
    residuals: list
    slope_stderr: float


# ------------------------------------------------------------------ special integrals


@lru_cache(maxsize=64)
def _pm_coeffs(beta: float, terms: int = 20) -> tuple[np.ndarray, np.ndarray]:
    k = np.arange(terms)
    coef = 1.0 / (np.array([math.factorial(int(j)) for j in k], dtype=float) * (k + beta + 1.0))
    return coef[0::2][::-1].copy(), coef[1::2][::-1].copy()


def _series_pm(c, beta: float):
    """(int_0^c x^beta e^{x} dx, int_0^c x^beta e^{-x} dx) for 0 <= c <= 1 (array).

    Both share the power series c^{beta+1} sum_k (+-c)^k / (k! (k+beta+1));
    the even and odd parts are evaluated by Horner's rule in c^2.
    """
    c = np.asarray(c, dtype=float)
    ce, co = _pm_coeffs(beta)
    c2 = c * c
    even = np.full_like(c, ce[0])
    for v in ce[1:]:
        even = even * c2 + v
    odd = np.full_like(c, co[0])
    for v in co[1:]:
        odd = odd * c2 + v
    odd = odd * c
    with np.errstate(divide="ignore", invalid="ignore"):
        lead = np.where(c > 0, c ** (beta + 1.0), 0.0)
    return lead * (even + odd), lead * (even - odd)


def window_exp_integral(p, q, c, beta: float, signed: bool):
    """int_p^q A(x) e^{-|x-c|} [sgn(x-c)] dx for -1 <= p <= q <= 1.

    Split at 0 and c; each piece is a difference of power-exponential series.
    """
    p, q, c = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (p, q, c)))
    out = np.zeros(p.shape)
    for region in (-1, 1):
        r0 = np.maximum(p, 0.0) if region > 0 else p
        r1 = q if region > 0 else np.minimum(q, 0.0)
        r1 = np.maximum(r1, r0)
        cc = np.clip(c, r0, r1)
        # S(|u|, +-1) at the three cut points of this region
        s_r0, s_c, s_r1 = (_series_pm(np.abs(u), beta) for u in (r0, cc, r1))
        with np.errstate(over="ignore", invalid="ignore"):
            below = np.where(cc > r0, np.exp(-c), 0.0)
            above = np.where(r1 > cc, np.exp(c), 0.0)
        # below c: e^{-|x-c|} = e^{-c} e^{x}; above c: e^{c} e^{-x}
        if region > 0:
            v_below = s_c[0] - s_r0[0]
            v_above = s_r1[1] - s_c[1]
        else:
            # x = -y: int A(x) e^{+-x} dx over negative x equals -int y^beta e^{-+y} dy
            v_below = -(s_r0[1] - s_c[1])
            v_above = -(s_c[0] - s_r1[0])
        sb = -1.0 if signed else 1.0
        out += np.where(cc > r0, sb * below * v_below, 0.0) + np.where(r1 > cc, above * v_above, 0.0)
    return out


def _apow(x, beta):
    """A(x) = sgn(x)|x|^beta with A(0) = 0."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(x == 0.0, 0.0, np.sign(x) * np.abs(x) ** beta)


class _PowExpTables:
    """Accurate int e^{v} v^a and int e^{-v} v^a on [1, X] for Psi."""

    def __init__(self, a: float, x_max: float = 200.0, step: float = 0.25):
        self.a = a
        self.step = step
        self.grid = 1.0 + step * np.arange(int(round((x_max - 1.0) / step)) + 1)
        self.x_max = float(self.grid[-1])
        r, w = gauss_legendre(16)
        self._r = 0.5 * (r + 1.0)
        self._w = 0.5 * w
        lo = self.grid[:-1]
        v = lo[:, None] + step * self._r
        seg_up = (np.exp(v - lo[:, None]) * v**a * self._w).sum(1) * step  # scaled by e^{-lo}
        seg_dn = (np.exp(-v) * v**a * self._w).sum(1) * step
        # F+(x_k) = int_1^{x_k} e^v v^a, accumulated upward
        fp = np.zeros(self.grid.size)
        for k in range(1, self.grid.size):
            fp[k] = fp[k - 1] + math.exp(lo[k - 1]) * seg_up[k - 1]
        self.fplus = fp
        gm = np.zeros(self.grid.size)
        for k in range(self.grid.size - 2, -1, -1):
            gm[k] = gm[k + 1] + seg_dn[k]
        # tail beyond x_max: int_X^inf e^{-v} v^a ~ e^{-X} X^a
        gm += math.exp(-self.x_max) * self.x_max**a
        self.gminus = gm

    def _partial(self, x0, x1, sign):
        # width <= step, so six Gauss nodes are exact to rounding
        r, w = gauss_legendre(6)
        r = 0.5 * (r + 1.0)
        w = 0.5 * w
        v = x0[..., None] + (x1 - x0)[..., None] * r
        return (np.exp(sign * v + self.a * np.log(v)) @ w) * (x1 - x0)

    def fplus_at(self, x):
        """int_1^x e^v v^a dv for 1 <= x <= x_max."""
        x = np.clip(np.asarray(x, dtype=float), 1.0, self.x_max)
        k = np.minimum(((x - 1.0) / self.step).astype(int), self.grid.size - 1)
        return self.fplus[k] + self._partial(self.grid[k], x, 1.0)

    def gminus_at(self, x):
        """int_x^inf e^{-v} v^a dv for x >= 1 (zero beyond the table)."""
        x = np.asarray(x, dtype=float)
        xc = np.clip(x, 1.0, self.x_max)
        k = np.minimum(((xc - 1.0) / self.step).astype(int) + 1, self.grid.size - 1)
        val = self.gminus[k] + self._partial(xc, self.grid[k], -1.0)
        return np.where(x >= self.x_max, 0.0, val)

    def psi(self, z, p, q):
        """Psi(z, p, q) = int_p^q e^{-|z+v|} v^a dv with 1 <= p."""
        z, p, q = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (z, p, q)))
        m = -z
        out = np.zeros(z.shape)
        # v above the kink: e^{-z} (G(max(p, m)) - G(q))
        P = np.maximum(p, m)
        up = q > P
        if up.any():
            with np.errstate(over="ignore", invalid="ignore"):
                val = np.exp(-z) * (self.gminus_at(np.where(up, P, 1.0)) - self.gminus_at(np.where(up, q, 1.0)))
            out += np.where(up, val, 0.0)
        # v below the kink: e^{z} (F(min(q, m)) - F(p))
        Qm = np.minimum(q, m)
        dn = Qm > p
        if dn.any():
            with np.errstate(over="ignore", invalid="ignore"):
                val = np.exp(z) * (self.fplus_at(np.where(dn, Qm, 1.0)) - self.fplus_at(np.where(dn, p, 1.0)))
            out += np.where(dn, val, 0.0)
        return out


@lru_cache(maxsize=16)
def _tables(h: float) -> _PowExpTables:
    return _PowExpTables(2.0 * h - 2.0)


# ------------------------------------------------------------------ densities in (s1, z)


def _window(lb, rb):
    return np.maximum(-1.0, lb), np.minimum(1.0, rb)


def _z_rule(lb, rb, zlo, zhi, n, levels, beta, singular_ends=False):
    lb = np.asarray(lb, dtype=float)
    rb = np.asarray(rb, dtype=float)
    lo, hi = _window(lb, rb)
    a = np.maximum(zlo, -Z_CUT)
    b = np.minimum(zhi, Z_CUT)
    b = np.maximum(a, b)
    # kinks of the K and G factors; these coincide with -2..2 when the window is not clipped
    br = np.stack(
        [lb + 1, rb - 1, lo - 1, lo, lo + 1, hi - 1, hi, hi + 1]
        + [np.full_like(lb, c) for c in (-1.0, 0.0, 1.0)],
        axis=-1,
    )
    # a break may coincide with a singular end, so interior breaks get the same substitution
    bs = beta if singular_ends else 0.0
    return graded_rule(a, b, br, n=n, levels=levels, beta_ends=(bs, bs), beta_breaks=bs)


# z-rule sizes; Q and D carry end singularities and are cheap, so they get finer grading
_Z_RULE = {AppendixIntegralId.Q: (8, 18), AppendixIntegralId.D: (8, 18)}


def _density(ident: AppendixIntegralId, h: float, lb, rb, n: int | None = None, levels: int | None = None):
    """rho(lb, rb) for a localized appendix integral; lb, rb are 1-D arrays."""
    dn, dl = _Z_RULE.get(ident, (6, 10))
    n = n or dn
    levels = levels or dl
    beta = 2.0 * h - 1.0
    tab = _tables(h)
    lb = np.asarray(lb, dtype=float)
    rb = np.asarray(rb, dtype=float)
    lo, hi = _window(lb, rb)
    I = AppendixIntegralId
    col = lambda v: np.asarray(v)[:, None]

    if ident is I.D:
        # 2 int_{lo}^{hi} (-A(x)) K_L(x) dx, split at 0
        out = np.zeros(lb.shape)
        for a_, b_, bends in ((lo, np.minimum(0.0, hi), (0.0, beta)), (np.maximum(0.0, lo), hi, (beta, 0.0))):
            rule = graded_rule(
                a_, np.maximum(a_, b_), np.stack([lb + 1, rb - 1], -1), n=n, levels=levels, beta_ends=bends, beta_breaks=beta
            )
            x = rule.x
            # exact x near 0 from the offsets of the sub-interval touching 0
            if bends[1] != 0.0:
                ax = np.where(rule.hi == 0.0, -rule.d_hi, x)
            else:
                ax = np.where(rule.lo == 0.0, rule.d_lo, x)
            kl = window_exp_integral(np.maximum(col(lb) - x, -1.0), np.minimum(col(rb) - x, 1.0), -x, beta, False)
            out += rule.integrate(2.0 * (-_apow(ax, beta)) * kl)
        return out

    if ident in (I.N, I.Ntilde):
        zlo, zhi = lb, rb - 1.0
    elif ident in (I.U, I.Utilde, I.M12):
        zlo, zhi = lb + 1.0, rb
    else:
        zlo, zhi = lb, rb
    rule = _z_rule(lb, rb, zlo, zhi, n, levels, beta, singular_ends=ident is I.Q)
    z = rule.x
    LB, RB, LO, HI = col(lb), col(rb), col(lo), col(hi)

    def g_tilde():
        return -_apow(LO, beta) * np.exp(-np.abs(z - LO)) + _apow(HI, beta) * np.exp(-np.abs(z - HI))

    if ident in (I.N, I.Ntilde):
        k = tab.psi(z, 1.0, RB - z)
        g = -window_exp_integral(LO, HI, z, beta, True) if ident is I.N else g_tilde()
        vals = k * g
    elif ident in (I.U, I.Utilde):
        k = tab.psi(-z, 1.0, z - LB)
        g = -window_exp_integral(LO, HI, z, beta, True) if ident is I.U else g_tilde()
        vals = k * g
    elif ident is I.M12:
        vals = tab.psi(-z, 1.0, z - LB) * tab.psi(z, 1.0, np.maximum(-LB, 1.0))
    elif ident in (I.L, I.P):
        kl = window_exp_integral(np.maximum(LB - z, -1.0), np.minimum(RB - z, 1.0), -z, beta, False)
        if ident is I.L:
            g = -window_exp_integral(LO, HI, z, beta, False)
        else:
            g = -_apow(LO, beta) * np.exp(-np.abs(z - LO)) * np.sign(LO - z) + _apow(HI, beta) * np.exp(
                -np.abs(z - HI)
            ) * np.sign(HI - z)
        vals = kl * g
    elif ident is I.Q:
        # exact distances to the ends of [lb, rb] near the singular ends
        dl = np.where(rule.lo == LB, rule.d_lo, z - LB)
        dr = np.where(rule.hi == RB, rule.d_hi, RB - z)
        vals = np.zeros_like(z)
        for x, cx in ((LO, 1.0), (HI, -1.0)):
            ax = -_apow(x, beta)
            for yw, w, cw in ((np.minimum(1.0, dl), np.maximum(z - 1.0, LB), 1.0), (-np.minimum(1.0, dr), np.minimum(z + 1.0, RB), -1.0)):
                vals = vals + cx * cw * ax * _apow(yw, beta) * np.exp(-np.abs(w - x))
        vals = vals * np.exp(-np.abs(z))
    else:
        raise ValueError(ident)
    return rule.integrate(vals)


def _density_chunked(ident, h, lb, rb, chunk: int = 48, **kw):
    lb = np.atleast_1d(np.asarray(lb, dtype=float))
    rb = np.broadcast_to(np.asarray(rb, dtype=float), lb.shape)
    out = np.empty(lb.shape)
    for i in range(0, lb.size, chunk):
        out[i : i + chunk] = _density(ident, h, lb[i : i + chunk], rb[i : i + chunk], **kw)
    return out


def bulk_density(ident: AppendixIntegralId, h) -> float:
    """Limit of the s1-density far from both ends; equals the slope of V(T)."""
    h = _h(h)
    if ident is AppendixIntegralId.M11:
        return m11_bulk_slope(h)
    return float(_density_chunked(ident, h, [-INF], [INF], levels=18, n=10)[0])


S_RULE = (8, 10)  # nodes per panel, grading levels of the s1 rule


def _s_rule(length, beta):
    n, levels = S_RULE
    br = [x for x in (1.0, 2.0, 3.0, 4.0) if x < length]
    return graded_rule(0.0, length, br or None, n=n, levels=levels, beta_ends=(beta, 0.0))


@lru_cache(maxsize=256)
def _edges(ident: AppendixIntegralId, h: float) -> tuple[float, float, float]:
    beta = 2.0 * h - 1.0
    rule = _s_rule(EDGE, beta)
    s = rule.x
    left = float(rule.integrate(_density_chunked(ident, h, -s, np.full_like(s, INF))))
    right = float(rule.integrate(_density_chunked(ident, h, np.full_like(s, -INF), s)))
    return left, right, bulk_density(ident, h)


def _localized_value(ident: AppendixIntegralId, t_horizon: float, h: float) -> float:
    T = float(t_horizon)
    if T >= 2.0 * EDGE:
        left, right, bulk = _edges(ident, h)
        return left + right + (T - 2.0 * EDGE) * bulk
    beta = 2.0 * h - 1.0
    br = sorted({x for c in (1.0, 2.0, 3.0, 4.0) for x in (c, T - c) if 0.0 < x < T})
    n, levels = S_RULE
    rule = graded_rule(0.0, T, br or None, n=n, levels=levels, beta_ends=(beta, beta))
    s = rule.x
    # offsets to the ends are exact: s and T - s
    rb = np.where(rule.hi == T, rule.d_hi, T - s)
    return float(rule.integrate(_density_chunked(ident, h, -s, rb)))


# ------------------------------------------------------------------ M11


def _m11_j(q, R):
    """Inner double integral of M11 over the diagonal shift, in closed form."""
    k = R - np.maximum(q, 0.0)
    aq = np.abs(q)
    val = np.exp(-aq) * (k - 0.5 + 0.5 * np.exp(-2.0 * np.maximum(k, 0.0)) + aq * k)
    return np.where(k > 0, val, 0.0)


def _m11_rule(t_horizon: float):
    """Nodes in (u, q) covering u in [1, T], q in [1 - u, T - u] with e^{-|q|} cut at 40."""
    T = float(t_horizon)
    ub = sorted({1.0, T} | {2.0**k for k in range(1, 40) if 2.0**k < T} | {x for x in (41.0, T - 40.0, T - 1.0) if 1 < x < T})
    us, uw = [], []
    r, w = gauss_legendre(16)
    r = 0.5 * (r + 1.0)
    w = 0.5 * w
    for a, b in zip(ub[:-1], ub[1:]):
        us.append(a + (b - a) * r)
        uw.append((b - a) * w)
    u = np.concatenate(us)
    wu = np.concatenate(uw)
    qa = np.maximum(1.0 - u, -40.0)
    qb = np.minimum(T - u, 40.0)
    rule = graded_rule(qa, qb, np.stack([np.zeros_like(u)], -1), n=12, levels=8)
    return u, wu, rule


def m11_value(t_horizon: float, h) -> float:
    """M11(T) = int_1^T du u^a int (u+q)^a J(q, T-u) dq."""
    h = _h(h)
    a = 2.0 * h - 2.0
    T = float(t_horizon)
    if T <= 1.0:
        return 0.0
    u, wu, rule = _m11_rule(T)
    q = rule.x
    v = u[:, None] + q
    inner = rule.integrate(np.where(rule.w > 0, np.maximum(v, 1.0) ** a, 0.0) * _m11_j(q, (T - u)[:, None]))
    return float(np.sum(u**a * inner * wu))


def _algebraic_tail(g, a: float, cfg: QuadConfig) -> float:
    """int_a^inf g(u) du for algebraically decaying g, via u = a / x."""
    f = lambda x: g(a / x) * a / (x * x)
    v, _ = integrate_1d(lambda x: np.where(x > 0, f(np.maximum(x, 1e-300)), 0.0), 0.0, 1.0, (), cfg)
    return v


def m11_bulk_slope(h) -> float:
    """int_1^inf u^a int_{q >= 1-u} (u+q)^a (1 + |q|) e^{-|q|} dq du."""
    h = _h(h)
    a = 2.0 * h - 2.0
    cfg = QuadConfig(abs_tol=1e-14, rel_tol=1e-11)

    def inner(u):
        u = np.atleast_1d(u)
        out = np.empty(u.shape)
        for i, uu in enumerate(u):
            f = lambda q: (uu + q) ** a * (1.0 + np.abs(q)) * np.exp(-np.abs(q))
            lo = max(1.0 - uu, -60.0)
            v1 = integrate_1d(f, lo, 0.0, cfg=cfg)[0] if lo < 0 else 0.0
            v2, _ = integrate_semi_inf(f, 0.0, cfg=cfg, alpha=1.0)
            out[i] = v1 + v2
        return u**a * out

    return _algebraic_tail(inner, 1.0, QuadConfig(abs_tol=1e-12, rel_tol=1e-10))


# ------------------------------------------------------------------ public evaluation


def eval_appendix_integral(ident: AppendixIntegralId | str, t_horizon: float, h) -> float:
    """Value of one appendix integral at horizon T (theta = 1)."""
    ident = AppendixIntegralId(ident) if isinstance(ident, str) else ident
    h = _h(h)
    if t_horizon < 2.0:
        raise ValueError("t_horizon must be at least 2")
    try:
        if ident is AppendixIntegralId.M11:
            return m11_value(t_horizon, h)
        return _localized_value(ident, t_horizon, h)
    except (ArithmeticError, RuntimeError, ValueError) as exc:
        raise AppendixQuadratureError(ident, exc) from exc


def m11_raw_oracle(t_horizon: float, h, n: int = 6, levels: int = 3) -> float:
    """M11 from its four-fold definition by nested tensor quadrature (small T only)."""
    h = _h(h)
    a = 2.0 * h - 2.0
    T = float(t_horizon)
    # s1, t1 in [1, T] with a kink on the diagonal
    r1 = graded_rule(1.0, T, [2.0] if T > 2 else None, n=n, levels=levels)
    s1 = r1.x
    r2 = graded_rule(np.ones_like(s1), T, s1[:, None], n=n, levels=levels)
    t1 = r2.x  # (S, T)
    S1 = s1[:, None]
    # s2 in [0, s1 - 1], t2 in [0, t1 - 1] with a kink at t2 = s2
    r3 = graded_rule(np.zeros_like(t1), np.broadcast_to(S1 - 1.0, t1.shape), n=n, levels=levels)
    s2 = r3.x  # (S, T, A)
    r4 = graded_rule(np.zeros_like(s2), np.broadcast_to((t1 - 1.0)[..., None], s2.shape), s2[..., None], n=n, levels=levels)
    t2 = r4.x  # (S, T, A, B)
    inner = r4.integrate((t1[..., None, None] - t2) ** a * np.exp(-np.abs(t2 - s2[..., None])))
    lvl3 = r3.integrate((S1[..., None] - s2) ** a * inner)
    lvl2 = r2.integrate(np.exp(-np.abs(S1 - t1)) * lvl3)
    return float(r1.integrate(lvl2))


# ------------------------------------------------------------------ closed-form slopes


_CFG = QuadConfig(abs_tol=1e-13, rel_tol=1e-11)


def _q01(f, beta):
    """int_0^1 f(x) x^beta dx."""
    v, _ = integrate_1d(lambda x: f(x) * x**beta, 0.0, 1.0, [SingularityHint(0.0, beta)], _CFG)
    return v


def _q1inf(f, a):
    v, _ = integrate_semi_inf(lambda u: f(u) * u**a, 1.0, cfg=_CFG)
    return v


def _slope_pieces(h):
    a = 2.0 * h - 2.0
    b = 2.0 * h - 1.0
    i1 = _q1inf(lambda u: np.exp(-u), a)
    im = _q01(lambda x: np.exp(x) - np.exp(-x), b)
    return a, b, i1, im


def _double_m11(h):
    # int_1^inf e^{-v} v^a int_1^v e^u u^a du dv = int_0^inf e^{-w} int_1^inf (u+w)^a u^a du dw
    a = 2.0 * h - 2.0

    def inner(w):
        w = np.atleast_1d(w)
        out = np.empty(w.shape)
        for i, ww in enumerate(w):
            out[i] = _algebraic_tail(lambda u: (u + ww) ** a * u**a, 1.0, _CFG)
        return np.exp(-w) * out

    v, _ = integrate_semi_inf(inner, 0.0, cfg=QuadConfig(abs_tol=1e-12, rel_tol=1e-10))
    return v


def _double_l(h):
    # int_0^1 e^{-u} u^b int_0^u e^v v^b dv du
    b = 2.0 * h - 1.0

    def inner(u):
        u = np.atleast_1d(u)
        return np.array([_q01(lambda v: np.exp(uu * v) * uu ** (b + 1.0), b) for uu in u])

    v, _ = integrate_1d(lambda u: np.exp(-u) * u**b * inner(u), 0.0, 1.0, [SingularityHint(0.0, b)], QuadConfig(1e-12, 1e-10))
    return v


def _diag_slope(h):
    """2 int_{-1}^1 (-A(x)) int_{-1}^1 e^{-|x+w|} A(w) dw dx by nested adaptive quadrature."""
    b = 2.0 * h - 1.0
    cfg = QuadConfig(1e-12, 1e-10)

    def kl(x):
        x = float(x)
        f = lambda w: _apow(w, b) * np.exp(-np.abs(x + w))
        tot = 0.0
        for lo, hi in ((-1.0, 0.0), (0.0, 1.0)):
            hints = [SingularityHint(0.0, b)]
            v, _ = integrate_1d(f, lo, hi, hints, cfg, breaks=[-x] if lo < -x < hi else ())
            tot += v
        return tot

    # the integrand is even in x; integrate on (0, 1] and double
    g = lambda x: np.array([-_apow(xx, b) * kl(xx) for xx in np.atleast_1d(x)])
    v, _ = integrate_1d(g, 0.0, 1.0, [SingularityHint(0.0, b)], QuadConfig(1e-11, 1e-9))
    return 4.0 * v


@lru_cache(maxsize=256)
def closed_form_slope(ident: AppendixIntegralId | str, h) -> float:
    """Slope constants of the appendix integrals from their one- and two-fold integral forms."""
    ident = AppendixIntegralId(ident) if isinstance(ident, str) else ident
    h = _h(h)
    if not 0.0 < h < 0.5:
        raise ValueError("need 0 < H < 1/2")
    I = AppendixIntegralId
    a, b, i1, im = _slope_pieces(h)
    if ident is I.M11:
        return 2.0 * ((4 * h - 1) * _double_m11(h) + _q1inf(lambda u: np.exp(1.0 - u), a))
    if ident is I.M12:
        return (4 * h - 1) * i1**2 + 2.0 * _q1inf(lambda u: np.exp(-1.0 - u), a)
    if ident in (I.N, I.U):
        return i1 * (1 / _E - _E + (4 * h - 1) * im) + _q01(lambda x: np.exp(x - 1) - np.exp(-x - 1), b)
    if ident in (I.Ntilde, I.Utilde):
        return (1 + _E**-2) + ((2 * h + 1) / _E + (2 * h - 1) * _E) * i1
    if ident is I.L:
        ee = _q01(lambda u: np.exp(-u), b)
        dm = _q01(lambda u: np.exp(-u - 1) - np.exp(u - 1), b)
        return 4.0 * ((4 * h + 1) * _double_l(h) - (2 * h + 0.5) * ee**2 + dm)
    if ident is I.P:
        return 2.0 * (1 - _E**-2 - (2 * h + 1) * _q01(lambda u: np.exp(u - 1) - np.exp(-u - 1), b))
    if ident is I.Q:
        return 6.0 * _E**-2 + 2.0
    if ident is I.D:
        return _diag_slope(h)
    raise ValueError(ident)


def n_slope_series(h) -> float:
    """N slope from the incomplete-gamma recurrence and power series (no quadrature)."""
    from scipy.special import gammaincc

    h = _h(h)
    s = 2.0 * h - 1.0
    # Gamma(s, 1) = (Gamma(s + 1, 1) - e^{-1}) / s with Gamma(2H, 1) = Gamma(2H) Q(2H, 1)
    i1 = (gamma_fn(2.0 * h) * gammaincc(2.0 * h, 1.0) - math.exp(-1.0)) / s
    im = 2.0 * sum(1.0 / (math.factorial(k) * (k + s + 1.0)) for k in range(1, 40, 2))
    return i1 * (1 / _E - _E + (4 * h - 1) * im) + im / _E


# ------------------------------------------------------------------ asymptotes


def fit_asymptote(samples) -> LinearAsymptote:
    """Slope from successive differences over the tail half of the grid."""
    samples = sorted((float(t), float(v)) for t, v in samples)
    if len(samples) < 4:
        raise AsymptoteError("need at least 4 samples")
    ts = np.array([t for t, _ in samples])
    vs = np.array([v for _, v in samples])
    if np.any(np.diff(ts) <= 0):
        raise AsymptoteError("T values must be strictly increasing")
    d = np.diff(vs) / np.diff(ts)
    tail = d[len(d) // 2 :]
    slope = float(np.mean(tail))
    stderr = float(np.std(tail, ddof=1) / math.sqrt(tail.size)) if tail.size > 1 else 0.0
    res = vs - slope * ts
    intercept = float(np.mean(res[len(res) // 2 :]))
    return LinearAsymptote(slope, intercept, ts.tolist(), (res - intercept).tolist(), stderr)


def _terms_at(t_horizon: float, h: float) -> dict:
    return {i: eval_appendix_integral(i, t_horizon, h) for i in AppendixIntegralId}


def norm_ft_sq(p: FtKernelParams, include_diagonal: bool = True) -> MTermBreakdown:
    """Squared tensor norm of f_T with its M-term breakdown.

    ``include_diagonal=False`` reproduces the decomposition without the
    diagonal term D; only the default gives the actual norm.
    """
    h = p.h
    T = p.t_horizon * p.theta
    if T < 2.0:
        raise ValueError("theta * t_horizon must be at least 2")
    v = _terms_at(T, h)
    I = AppendixIntegralId
    m33 = h * h * (-v[I.L] + 2.0 * v[I.P] + v[I.Q] + (v[I.D] if include_diagonal else 0.0))
    sc = p.theta ** (-4.0 * h)
    parts = {k.value: sc * val for k, val in v.items()}
    return MTermBreakdown.compose(
        h,
        sc * v[I.M11],
        sc * v[I.M12],
        sc * h * (v[I.N] - v[I.Ntilde]),
        sc * h * (v[I.U] - v[I.Utilde]),
        sc * m33,
        parts,
    )


def ft_kernel(t, s, theta: float = 1.0):
    return np.exp(-theta * np.abs(np.asarray(t) - np.asarray(s)))


def ht_kernel(t, s, t_horizon: float, theta: float = 1.0):
    return np.exp(-theta * (t_horizon - np.asarray(t)) - theta * (t_horizon - np.asarray(s)))


# ------------------------------------------------------------------ cross term with h_T


def _exp_kernel_sum(t, s, T, beta, deriv: bool):
    """int_0^T k(t, u) sgn(u - s)|u - s|^beta du with k = e^{-|t-u|} or its t-derivative.

    ``t`` has shape (M, 1) and ``s`` shape (M, K). When s lies in a piece of k
    the signed power moments from s stay inside that piece; otherwise the
    piece is integrated directly, since continuing e^{+-(u-t)} past t would
    grow like e^{T}.
    """
    r, w = power_weight_rule(beta, n=8, levels=10)
    s = np.broadcast_to(s, np.broadcast(t, s).shape)
    t = np.broadcast_to(t, s.shape)
    out = np.zeros(s.shape)
    # u < t: e^{u-t} with t-derivative -e^{u-t}; u > t: e^{t-u} with t-derivative +e^{t-u}
    for a, b, rate, dcoef in ((np.zeros_like(t), t, 1.0, -1.0), (t, np.full_like(t, T), -1.0, 1.0)):
        coef = dcoef if deriv else 1.0
        inside = (s >= a) & (s <= b)
        val = np.zeros(s.shape)
        for edge, sign in ((b, 1.0), (a, -1.0)):
            x = np.where(inside, edge - s, 0.0)
            uu = s[..., None] + x[..., None] * r
            val += sign * np.abs(x) ** (beta + 1.0) * (np.exp(rate * (uu - t[..., None])) @ w)
        # the exponential peaks at u = t; break at distances 1, 4, 16 from it
        peak = b if rate > 0 else a
        br = peak[..., None] - rate * np.array([1.0, 4.0, 16.0])
        rule = graded_rule(a, np.maximum(a, b), br, n=8, levels=10, beta_ends=(beta, beta))
        left = (s < a)[..., None]
        a3, b3 = a[..., None], b[..., None]
        d_left = np.where(rule.lo == a3, (a - s)[..., None] + rule.d_lo, rule.x - s[..., None])
        d_right = np.where(rule.hi == b3, (s - b)[..., None] + rule.d_hi, s[..., None] - rule.x)
        dist = np.where(left, d_left, d_right)
        dist = np.where(inside[..., None], 1.0, dist)  # unused there; keeps the power finite
        with np.errstate(divide="ignore"):
            sgp = np.where(left, 1.0, -1.0) * dist**beta
        direct = rule.integrate(np.exp(rate * (rule.x - t[..., None])) * sgp)
        out += coef * np.where(inside, val, direct)
    return out


def _psi_and_derivative(t, h, T, chunk: int = 24):
    """psi(t) = <f_T(t, .), phi_T> and psi'(t) for phi_T(u) = e^{u - T} on [0, T].

    Uses -int nu_phi(ds) H (P_t(0) - P_t(s)); the atom of phi at 0 meets
    a vanishing kernel, so only the atom -1 at T and the density remain.
    """
    beta = 2.0 * h - 1.0
    t = np.asarray(t, dtype=float)
    lo = max(0.0, T - 40.0)
    psi = np.empty(t.size)
    dpsi = np.empty(t.size)
    for i in range(0, t.size, chunk):
        tc = t[i : i + chunk, None]
        rule = graded_rule(np.full(tc.shape[0], lo), T, np.clip(tc, lo, T), n=8, levels=10)
        sn = np.concatenate([rule.x, np.full(tc.shape, T)], axis=-1)
        for deriv, dest in ((False, psi), (True, dpsi)):
            pk = _exp_kernel_sum(tc, np.concatenate([np.zeros_like(tc), sn], axis=-1), T, beta, deriv)
            ker = h * (pk[:, :1] - pk[:, 1:])
            dens = rule.integrate(np.exp(rule.x - T) * ker[:, :-1])
            dest[i : i + chunk] = -(dens - ker[:, -1])
    return psi, dpsi


def _psi_via_kernel_measure(t, h, T, phi: BVFunction, chunk: int = 24):
    """psi and psi' from the measure of u -> e^{-|t-u|} paired with I_phi(u).

    nu of e^{-|t-.|}: atoms e^{-t} at 0 and -e^{-(T-t)} at T, density
    sgn(t-u) e^{-|t-u|}. nu of its t-derivative: atoms -e^{-t} at 0,
    -e^{-(T-t)} at T and +2 at u = t, density -e^{-|t-u|}. I_phi(0) = 0.
    """
    t = np.asarray(t, dtype=float)
    psi = np.empty(t.size)
    dpsi = np.empty(t.size)
    i_T = float(_cov_derivative_integral(phi, np.array([T]), h)[0])
    i_t = _cov_derivative_integral(phi, t, h)
    for i in range(0, t.size, chunk):
        tc = t[i : i + chunk, None]
        a = np.clip(tc[:, 0] - 40.0, 0.0, T)
        b = np.clip(tc[:, 0] + 40.0, 0.0, T)
        rule = graded_rule(a, b, np.clip(tc, a[:, None], b[:, None]), n=8, levels=10)
        u = rule.x
        k = np.exp(-np.abs(tc - u))
        iu = _cov_derivative_integral(phi, u, h)
        tail = np.exp(-(T - tc[:, 0])) * i_T
        psi[i : i + chunk] = -(-tail + rule.integrate(np.sign(tc - u) * k * iu))
        dpsi[i : i + chunk] = -(-tail + 2.0 * i_t[i : i + chunk] - rule.integrate(k * iu))
    return psi, dpsi


def cross_ip_ft_ht(p: FtKernelParams, order: str = "st") -> float:
    """<f_T, h_T> in the tensor space with h_T = phi_T (x) phi_T, phi_T = e^{. - T} on [0, T].

    Computed as <psi, phi_T> with psi(t) = <f_T(t, .), phi_T>; the outer
    product pairs the measure of psi (atoms and psi') with phi_T. ``order``
    selects how psi is formed: "st" (default) integrates the measure of
    f_T(t, .) against phi_T, "ts" integrates the measure of phi_T against
    f_T(t, .). The "ts" route is slower and serves as the cross-check.
    """
    h = p.h
    T = p.t_horizon * p.theta
    beta = 2.0 * h - 1.0
    phi = BVFunction.single(0.0, T, (ExpPolyTerm(math.exp(-T), 0.0, 1.0),), T)
    br = sorted({x for x in (1.0, T - 1.0, T - 4.0) if 0.0 < x < T})
    rule = graded_rule(0.0, T, br, n=8, levels=12, beta_ends=(beta, beta))
    nodes = np.concatenate([[0.0, T], rule.x])
    if order == "ts":
        psi, dpsi = _psi_and_derivative(nodes, h, T)
    elif order == "st":
        psi, dpsi = _psi_via_kernel_measure(nodes, h, T, phi)
    else:
        raise ValueError("order must be 'ts' or 'st'")
    i_phi = _cov_derivative_integral(phi, nodes, h)
    val = -(psi[0] * i_phi[0] - psi[1] * i_phi[1] + float(rule.integrate(dpsi[2:] * i_phi[2:])))
    return p.theta ** (-4.0 * h) * val


# ------------------------------------------------------------------ slope identity


@dataclass(frozen=True)
class CompositeSlopes:
    a1: float
    a2: float
    a3: float


def composite_slopes(h, include_diagonal: bool = True) -> CompositeSlopes:
    """Slopes of M11 + M12, M31 + M32 and M33 composed from the integral slopes."""
    h = _h(h)
    I = AppendixIntegralId
    c = lambda i: closed_form_slope(i, h)
    a1 = c(I.M11) + c(I.M12)
    a2 = h * (c(I.N) - c(I.Ntilde) + c(I.U) - c(I.Utilde))
    a3 = h * h * (-c(I.L) + 2.0 * c(I.P) + c(I.Q) + (c(I.D) if include_diagonal else 0.0))
    return CompositeSlopes(a1, a2, a3)


def stated_composite_expressions(h) -> CompositeSlopes:
    """The three slope expressions written as single closed formulas, evaluated literally."""
    h = _h(h)
    a, b, i1, im = _slope_pieces(h)
    a1 = (4 * h - 1) * i1**2 + 2.0 * _q1inf(lambda u: np.exp(1 - u) + np.exp(-1 - u), a) + 2.0 * (4 * h - 1) * _double_m11(h)
    i1b = _q1inf(lambda u: np.exp(-u), b)
    ip = _q01(lambda x: np.exp(x) + np.exp(-x), b)
    a2 = 2.0 * h * (i1b * (-2.0 * h * (1 / _E + _E) + (4 * h - 1) * ip) + im / _E - (1 + _E**-2))
    ee = _q01(lambda u: np.exp(-u), b)
    dm = _q01(lambda u: np.exp(-1 - u) - np.exp(-1 + u), b)
    a3 = 2.0 * h * h * (-2.0 * (4 * h + 1) * _double_l(h) + (4 * h + 1) * ee**2 + 4.0 * h * dm + _E**-2 + 3.0)
    return CompositeSlopes(a1, a2, a3)


@dataclass(frozen=True)
class IdentityCheck:
    lhs: float
    rhs: float
    rel_err: float


def identity_check(h, slopes: CompositeSlopes | None = None) -> IdentityCheck:
    """Compare 2(H Gamma(2H))^2 sigma_H^2 with a3 + 2 alpha_H (alpha_H a1 - a2)."""
    h = _h(h)
    s = slopes or composite_slopes(h)
    al = alpha_h(h)
    lhs = norm_slope(h)
    rhs = s.a3 + 2.0 * al * (al * s.a1 - s.a2)
    return IdentityCheck(lhs, rhs, abs(lhs - rhs) / abs(lhs))


@dataclass(frozen=True)
class Theorem11Report:
    fit: LinearAsymptote
    target_slope: float
    rel_err: float
    rows: list  # (T, total, residual, total/T - target, T^{2H-1}, 1/T)

    @property
    def residual_steps(self) -> list:
        r = [row[2] for row in self.rows]
        return [abs(y - x) for x, y in zip(r[:-1], r[1:])]


def theorem11_report(h, theta: float = 1.0, t_grid=(50.0, 100.0, 200.0, 400.0)) -> Theorem11Report:
    h = _h(h)
    target = norm_slope(h) * theta ** (1.0 - 4.0 * h)
    samples = []
    rows = []
    for T in t_grid:
        tot = norm_ft_sq(FtKernelParams(T, theta, h)).total
        samples.append((T, tot))
        rows.append((T, tot, tot - target * T, tot / T - target, T ** (2 * h - 1), 1.0 / T))
    fit = fit_asymptote(samples)
    return Theorem11Report(fit, target, abs(fit.slope - target) / target, rows)
