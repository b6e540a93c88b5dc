"""Quadrature for integrands with algebraic endpoint singularities.

Two layers live here.

``integrate_1d`` and friends are adaptive: panels are bisected where the
local error estimate is largest, which grades the mesh geometrically
(ratio 1/2) toward hinted singular points. A panel that touches a hinted
point x0 with exponent beta is integrated after the substitution
x = x0 + h r^{1/(1+beta)}, which turns |x - x0|^beta * smooth into a smooth
function of r.

``graded_rule`` is a fixed, vectorised product rule used by the heavier
numerical code: every subinterval gets a mesh graded toward both of its
ends, with the same substitution on the innermost panels. Rules for many
intervals are built at once by broadcasting.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np


ROUNDING_FLOOR = 100.0 * np.finfo(float).eps


class QuadratureError(RuntimeError):
    """Base class for quadrature failures."""


class BudgetExceeded(QuadratureError):
    """Raised when the panel budget runs out before the tolerance is met."""


class NonFiniteIntegrand(QuadratureError):
    """Raised when the integrand returns inf or nan at a quadrature node."""


@dataclass(frozen=True)
class QuadConfig:
    abs_tol: float = 1e-12
    rel_tol: float = 1e-10
    max_panels: int = 4000
    nodes_per_panel: int = 12

    def __post_init__(self):
        if self.abs_tol <= 0 or self.rel_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.nodes_per_panel < 4 or self.max_panels < 8:
            raise ValueError("need nodes_per_panel >= 4 and max_panels >= 8")

    def tightened(self, factor: float) -> "QuadConfig":
        return QuadConfig(self.abs_tol / factor, self.rel_tol / factor, self.max_panels, self.nodes_per_panel)


@dataclass(frozen=True)
class SingularityHint:
    location: float
    exponent: float = 0.0

    def __post_init__(self):
        if not -1.0 < self.exponent <= 0.0:
            raise ValueError(f"singularity exponent must lie in (-1, 0], got {self.exponent}")


@lru_cache(maxsize=None)
def gauss_legendre(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights on [-1, 1]."""
    if not 2 <= n <= 64:
        raise ValueError("gauss_legendre supports 2 <= n <= 64")
    x, w = np.polynomial.legendre.leggauss(n)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


@lru_cache(maxsize=None)
def _unit_rule(n: int, power: float, flip: bool) -> tuple[np.ndarray, np.ndarray]:
    # n-point rule on [0, 1]; with power p != 1 the nodes are r^p, clustered at 0
    x, w = gauss_legendre(n)
    r = 0.5 * (x + 1.0)
    wr = 0.5 * w
    if power != 1.0:
        wr = wr * power * r ** (power - 1.0)
        r = r**power
    if flip:
        r = 1.0 - r[::-1]
        wr = wr[::-1]
    r = np.ascontiguousarray(r)
    wr = np.ascontiguousarray(wr)
    r.setflags(write=False)
    wr.setflags(write=False)
    return r, wr


def _power(beta):
    return 1.0 if beta is None or beta == 0.0 else 1.0 / (1.0 + beta)


# ---------------------------------------------------------------- adaptive


@dataclass(order=True)
class _Panel:
    neg_err: float
    lo: float = field(compare=False)
    hi: float = field(compare=False)
    beta_lo: float | None = field(compare=False)
    beta_hi: float | None = field(compare=False)
    value: float = field(compare=False)


def _panel_rule(lo, hi, beta_lo, beta_hi, n):
    # beta_lo/beta_hi are None when the end is not a hinted singular point
    h = hi - lo
    r, wr = _unit_rule(n, 1.0, False)
    if beta_lo not in (None, 0.0) or beta_hi not in (None, 0.0):
        at_lo = beta_lo not in (None, 0.0)
        p = _power(beta_lo if at_lo else beta_hi)
        d = h * r**p
        x = lo + d if at_lo else hi - d
        # the Jacobian uses the distance that survived rounding, so a pure
        # power |x - x0|^beta is still integrated exactly
        da = (x - lo) if at_lo else (hi - x)
        keep = da > 0.0
        w = wr * p * h * (da / h) ** ((p - 1.0) / p)
        if not keep.all():
            # nodes that collapsed onto x0: in r the substituted integrand is
            # nearly constant, so their weight moves to the nearest kept node
            j0 = int(np.argmax(keep))
            w = w.copy()
            w[j0] += w[j0] / wr[j0] * wr[~keep].sum()
        return x[keep], w[keep]
    return lo + h * r, h * wr


def _eval(f, x):
    y = np.asarray(f(x), dtype=float)
    if y.shape != x.shape:
        y = np.broadcast_to(y, x.shape)
    if not np.all(np.isfinite(y)):
        bad = x[~np.isfinite(y)][0]
        raise NonFiniteIntegrand(f"integrand not finite at x = {bad!r}")
    return y


def _split(p: _Panel):
    mid = 0.5 * (p.lo + p.hi)
    # a panel with singular points at both ends is always split first
    return (p.lo, mid, p.beta_lo, None), (mid, p.hi, None, p.beta_hi)


def integrate_1d(
    f: Callable[[np.ndarray], np.ndarray],
    a: float,
    b: float,
    hints: Sequence[SingularityHint] = (),
    cfg: QuadConfig | None = None,
    breaks: Sequence[float] = (),
) -> tuple[float, float]:
    """Adaptive integral of a vectorised ``f`` over [a, b].

    ``hints`` mark algebraic singularities |x - x0|^beta; ``breaks`` mark
    kinks or jumps that should be panel boundaries. Returns (value, err_est).
    """
    cfg = cfg or QuadConfig()
    a, b = float(a), float(b)
    if a == b:
        return 0.0, 0.0
    sign = 1.0
    if b < a:
        a, b, sign = b, a, -1.0
    n = cfg.nodes_per_panel
    sing = {}
    for hnt in hints:
        if a <= hnt.location <= b:
            sing[float(hnt.location)] = min(sing.get(float(hnt.location), 0.0), hnt.exponent)
    pts = sorted({a, b, *sing, *(float(c) for c in breaks if a < c < b)})

    def make(lo, hi, bl, bh):
        if bl not in (None, 0.0) and bh not in (None, 0.0):
            mid = 0.5 * (lo + hi)
            return make(lo, mid, bl, None) + make(mid, hi, None, bh)
        x, w = _panel_rule(lo, hi, bl, bh, n)
        return [(lo, hi, bl, bh, x, w)]

    def value_of(specs):
        xs = np.concatenate([s[4] for s in specs])
        ys = _eval(f, xs)
        out, k = [], 0
        for s in specs:
            m = s[4].size
            out.append(float(np.dot(s[5], ys[k : k + m])))
            k += m
        return out

    def children(lo, hi, bl, bh):
        mid = 0.5 * (lo + hi)
        return make(lo, mid, bl, None) + make(mid, hi, None, bh)

    # initial panels: one per subinterval (split when both ends singular)
    init = []
    for lo, hi in zip(pts[:-1], pts[1:]):
        init += make(lo, hi, sing.get(lo), sing.get(hi))
    vals = value_of(init)
    heap: list[_Panel] = []
    total = 0.0
    # each panel's error is estimated by comparing it with its two children
    pending = [(spec, v) for spec, v in zip(init, vals)]
    n_panels = len(pending)

    def estimate(batch):
        kids = []
        for spec, _ in batch:
            kids.append(children(*spec[:4]))
        flat = [k for ks in kids for k in ks]
        kv = value_of(flat) if flat else []
        out, j = [], 0
        for (spec, v), ks in zip(batch, kids):
            cv = kv[j : j + len(ks)]
            j += len(ks)
            out.append((spec, v, ks, cv))
        return out

    est = estimate(pending)
    for spec, v, ks, cv in est:
        refined = sum(cv)
        heapq.heappush(heap, _Panel(-abs(refined - v), spec[0], spec[1], spec[2], spec[3], refined))
    while True:
        total = math.fsum(p.value for p in heap)
        err = sum(-p.neg_err for p in heap)
        target = max(cfg.abs_tol, cfg.rel_tol * abs(total))
        if err <= target:
            # below this the panel differences are rounding noise, not error estimates
            floor = ROUNDING_FLOOR * math.fsum(abs(p.value) for p in heap)
            if target < floor:
                raise BudgetExceeded(f"requested tolerance {target:.3g} is below the rounding floor {floor:.3g} on [{a}, {b}]")
            return sign * total, err
        if n_panels >= cfg.max_panels:
            raise BudgetExceeded(
                f"panel budget {cfg.max_panels} exhausted on [{a}, {b}]: estimate {total:.6g}, error {err:.3g}"
            )
        # refine the worst few panels at once
        batch = []
        for _ in range(min(len(heap), 8)):
            p = heapq.heappop(heap)
            batch.append(p)
        specs = []
        for p in batch:
            for lo, hi, bl, bh in _split(p):
                specs.append(make(lo, hi, bl, bh)[0] if not (bl and bh) else None)
        specs = [s for s in specs if s is not None]
        vals = value_of(specs)
        n_panels += len(specs)
        for spec, v, ks, cv in estimate(list(zip(specs, vals))):
            refined = sum(cv)
            heapq.heappush(heap, _Panel(-abs(refined - v), spec[0], spec[1], spec[2], spec[3], refined))


def integrate_semi_inf(
    f: Callable[[np.ndarray], np.ndarray],
    a: float,
    cfg: QuadConfig | None = None,
    alpha: float = 0.0,
    bound: float = 1.0,
    hints: Sequence[SingularityHint] = (),
    breaks: Sequence[float] = (),
) -> tuple[float, float]:
    """Integral over [a, inf) of f with |f(u)| <= bound * e^{-u} u^alpha.

    The range is truncated where the tail bound drops below abs_tol / 10.
    """
    cfg = cfg or QuadConfig()
    a = float(a)
    target = cfg.abs_tol / 10.0
    u = max(a, 1.0, 2.0 * abs(alpha))
    # tail of e^{-u} u^alpha beyond u is at most e^{-u} u^alpha / (1 - alpha/u) for u > 2 alpha
    while bound * math.exp(-u) * u**alpha * 2.0 > target:
        u += 1.0
    cut = u
    pts = [c for c in breaks if a < c < cut]
    # panels of width <= 4 keep the exponential well resolved
    extra = list(np.arange(a + 4.0, cut, 4.0))
    val, err = integrate_1d(f, a, cut, hints, cfg, breaks=sorted(set(pts + extra)))
    return val, err + target


@dataclass
class Level:
    """One level of an iterated integral.

    ``lo`` and ``hi`` are callables of the outer variables (outermost first).
    ``hints`` and ``breaks`` are likewise callables returning sequences.
    """

    lo: Callable[..., float]
    hi: Callable[..., float]
    hints: Callable[..., Sequence[SingularityHint]] = lambda *outer: ()
    breaks: Callable[..., Sequence[float]] = lambda *outer: ()


class LevelError(QuadratureError):
    def __init__(self, level: int, cause: Exception):
        super().__init__(f"level {level}: {cause}")
        self.level = level
        self.cause = cause


def integrate_iterated(
    f: Callable[..., float],
    levels: Sequence[Level],
    cfg: QuadConfig | None = None,
) -> tuple[float, float]:
    """Iterated integral of ``f(x0, x1, ...)`` with up to three levels.

    The innermost level calls ``f`` with the outer variables as scalars and
    the innermost variable as an array. Errors add across levels.
    """
    cfg = cfg or QuadConfig()
    if not 1 <= len(levels) <= 3:
        raise ValueError("integrate_iterated supports 1 to 3 levels")
    inner_cfg = cfg.tightened(10.0)

    def run(depth, outer):
        lev = levels[depth]
        lo, hi = lev.lo(*outer), lev.hi(*outer)
        c = cfg if depth == 0 else inner_cfg
        if depth == len(levels) - 1:
            g = lambda x: f(*outer, x)
        else:
            errs = []

            def g(x):
                out = np.empty_like(x)
                for i, xi in enumerate(x):
                    v, e = run(depth + 1, outer + (float(xi),))
                    out[i] = v
                    errs.append(abs(e))
                return out

        try:
            v, e = integrate_1d(g, lo, hi, lev.hints(*outer), c, lev.breaks(*outer))
        except LevelError:
            raise
        except QuadratureError as exc:
            raise LevelError(depth, exc) from exc
        return v, e

    return run(0, ())


# ---------------------------------------------------------------- fixed batch rules


@lru_cache(maxsize=None)
def _graded_template(n: int, levels: int, beta_lo: float, beta_hi: float):
    """Rule on [0, 1] graded geometrically toward both ends.

    Panels [2^-(k+1), 2^-k] for k = 1..levels on each half, plus an
    innermost panel of width 2^-(levels+1) mapped by x = eps r^p.
    Also returns each node's distance to 0 and to 1, computed without
    cancellation.
    """
    r, wr = _unit_rule(n, 1.0, False)
    eps = 0.5 ** (levels + 1)

    def half(beta):
        xs, ws = [], []
        ri, wi = _unit_rule(n, _power(beta), False)
        xs.append(eps * ri)
        ws.append(eps * wi)
        for k in range(levels, 0, -1):
            lo, hi = 0.5 ** (k + 1), 0.5**k
            xs.append(lo + (hi - lo) * r)
            ws.append((hi - lo) * wr)
        return np.concatenate(xs), np.concatenate(ws)

    xl, wl = half(beta_lo)
    xh, wh = half(beta_hi)
    x = np.concatenate([xl, 1.0 - xh[::-1]])
    w = np.concatenate([wl, wh[::-1]])
    d0 = np.concatenate([xl, 1.0 - xh[::-1]])
    d1 = np.concatenate([1.0 - xl, xh[::-1]])
    for arr in (x, w, d0, d1):
        arr.setflags(write=False)
    return x, w, d0, d1


@dataclass
class BatchRule:
    """Nodes, weights and exact distances to the ends of each node's subinterval."""

    x: np.ndarray
    w: np.ndarray
    d_lo: np.ndarray
    d_hi: np.ndarray
    lo: np.ndarray
    hi: np.ndarray

    def __iter__(self):
        # lets callers unpack ``x, w = graded_rule(...)``
        return iter((self.x, self.w))

    def integrate(self, values) -> np.ndarray:
        return np.sum(values * self.w, axis=-1)


def graded_rule(
    a,
    b,
    breaks=None,
    n: int = 10,
    levels: int = 8,
    beta_ends: tuple[float, float] = (0.0, 0.0),
    beta_breaks: float = 0.0,
) -> BatchRule:
    """Broadcast product rule on [a, b] split at ``breaks``.

    ``a`` and ``b`` broadcast to a batch shape S; ``breaks`` has shape
    S + (m,) or (m,) and is clipped to [a, b] and sorted per batch entry.
    Every subinterval is graded toward both ends; the two outer ends use
    the exponents in ``beta_ends`` and interior breakpoints use
    ``beta_breaks`` for the innermost-panel substitution.

    Nodes and weights have shape S + (N,). Zero-width subintervals get zero
    weights. ``d_lo``/``d_hi`` hold each node's distance to the lower and
    upper end of its own subinterval, and ``lo``/``hi`` those ends.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    a, b = np.broadcast_arrays(a, b)
    S = a.shape
    if breaks is None:
        pts = np.stack([a, b], axis=-1)
    else:
        br = np.asarray(breaks, dtype=float)
        br = np.broadcast_to(br, S + br.shape[-1:])
        br = np.clip(br, a[..., None], np.maximum(a, b)[..., None])
        pts = np.concatenate([a[..., None], np.sort(br, axis=-1), b[..., None]], axis=-1)
    m = pts.shape[-1] - 1
    lo = pts[..., :-1]
    hi = np.maximum(pts[..., 1:], lo)
    h = hi - lo
    ba, bb = beta_ends
    if m == 1:
        temps = [_graded_template(n, levels, ba, bb)]
    else:
        temps = (
            [_graded_template(n, levels, ba, beta_breaks)]
            + [_graded_template(n, levels, beta_breaks, beta_breaks)] * (m - 2)
            + [_graded_template(n, levels, beta_breaks, bb)]
        )
    xs, ws, dls, dhs, los, his = [], [], [], [], [], []
    for j, (tx, tw, t0, t1) in enumerate(temps):
        hj = h[..., j, None]
        xs.append(lo[..., j, None] + hj * tx)
        ws.append(hj * tw)
        dls.append(hj * t0)
        dhs.append(hj * t1)
        los.append(np.broadcast_to(lo[..., j, None], S + (tx.size,)))
        his.append(np.broadcast_to(hi[..., j, None], S + (tx.size,)))
    cat = lambda v: np.concatenate(v, axis=-1)
    return BatchRule(cat(xs), cat(ws), cat(dls), cat(dhs), cat(los), cat(his))


def plain_rule(a, b, n: int = 16, panels: int = 1):
    """Broadcast composite Gauss-Legendre rule with equal panels on [a, b]."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    a, b = np.broadcast_arrays(a, b)
    r, wr = _unit_rule(n, 1.0, False)
    k = np.arange(panels)
    loc = (k[:, None] + r[None, :]).ravel() / panels
    wt = np.tile(wr, panels) / panels
    h = (b - a)[..., None]
    return a[..., None] + h * loc, h * wt


@lru_cache(maxsize=None)
def power_weight_rule(beta: float, n: int = 10, levels: int = 12) -> tuple[np.ndarray, np.ndarray]:
    """Nodes r and weights for integrals of phi(r) r^beta over [0, 1]."""
    x, w, d0, _ = _graded_template(n, levels, beta, 0.0)
    wb = w * d0**beta
    x = x.copy()
    x.setflags(write=False)
    wb.setflags(write=False)
    return x, wb
