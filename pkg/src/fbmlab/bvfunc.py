"""Piecewise exponential-polynomial functions of bounded variation.

A piece on [a, b] is a finite sum of terms c * s^p * e^{r s}. The signed
Lebesgue-Stieltjes measure of such a function (extended by zero outside
its pieces) has the derivative as density on each open piece, an atom
+g(a) at the left end of every piece and an atom -g(b) at the right end;
atoms of adjacent pieces merge by summation.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .quad import QuadConfig, SingularityHint, integrate_1d

ATOM_PRUNE = 1e-15


@dataclass(frozen=True)
class ExpPolyTerm:
    coef: float
    power: float = 0.0
    rate: float = 0.0

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        if self.power == 0.0:
            base = np.ones_like(s)
        else:
            with np.errstate(divide="ignore"):
                base = s**self.power
        return self.coef * base * np.exp(self.rate * s)

    def derivative(self) -> tuple["ExpPolyTerm", ...]:
        out = []
        if self.power != 0.0:
            out.append(ExpPolyTerm(self.coef * self.power, self.power - 1.0, self.rate))
        if self.rate != 0.0:
            out.append(ExpPolyTerm(self.coef * self.rate, self.power, self.rate))
        return tuple(out)

    def scaled(self, c: float) -> "ExpPolyTerm":
        return ExpPolyTerm(self.coef * c, self.power, self.rate)


def eval_terms(terms: Sequence[ExpPolyTerm], s) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    for t in terms:
        out = out + t(s)
    return out


def _canonical(terms: Iterable[ExpPolyTerm]) -> tuple[ExpPolyTerm, ...]:
    acc: dict[tuple[float, float], float] = {}
    for t in terms:
        key = (float(t.power), float(t.rate))
        acc[key] = acc.get(key, 0.0) + float(t.coef)
    return tuple(ExpPolyTerm(c, p, r) for (p, r), c in sorted(acc.items()) if c != 0.0)


@dataclass(frozen=True)
class Piece:
    a: float
    b: float
    terms: tuple[ExpPolyTerm, ...]

    def __call__(self, s):
        return eval_terms(self.terms, s)

    def derivative_terms(self) -> tuple[ExpPolyTerm, ...]:
        return _canonical(d for t in self.terms for d in t.derivative())


@dataclass(frozen=True)
class BVFunction:
    """Piecewise exponential-polynomial function on [0, t_horizon]."""

    pieces: tuple[Piece, ...]
    t_horizon: float

    def __post_init__(self):
        ps = sorted(self.pieces, key=lambda p: p.a)
        object.__setattr__(self, "pieces", tuple(ps))
        for p in ps:
            if not p.a < p.b:
                raise ValueError(f"piece [{p.a}, {p.b}] is empty")
            if p.a < 0.0 or p.b > self.t_horizon * (1 + 1e-14):
                raise ValueError(f"piece [{p.a}, {p.b}] leaves [0, {self.t_horizon}]")
        for p, q in zip(ps[:-1], ps[1:]):
            if q.a < p.b:
                raise ValueError("pieces overlap")

    # construction helpers
    @classmethod
    def single(cls, a, b, terms, t_horizon) -> "BVFunction":
        if isinstance(terms, ExpPolyTerm):
            terms = (terms,)
        return cls((Piece(float(a), float(b), _canonical(terms)),), float(t_horizon))

    @classmethod
    def indicator(cls, a, b, t_horizon, coef=1.0) -> "BVFunction":
        return cls.single(a, b, (ExpPolyTerm(coef),), t_horizon)

    @classmethod
    def exp(cls, a, b, rate, t_horizon, coef=1.0) -> "BVFunction":
        return cls.single(a, b, (ExpPolyTerm(coef, 0.0, rate),), t_horizon)

    @property
    def support(self) -> tuple[float, float]:
        if not self.pieces:
            return (0.0, 0.0)
        return self.pieces[0].a, self.pieces[-1].b

    @property
    def breakpoints(self) -> list[float]:
        return sorted({x for p in self.pieces for x in (p.a, p.b)})

    def __call__(self, s):
        return eval_bv(self, s)

    def refine(self, points: Iterable[float]) -> "BVFunction":
        """Same function with pieces split at the given points."""
        pts = sorted(set(points))
        out = []
        for p in self.pieces:
            cuts = [p.a] + [x for x in pts if p.a < x < p.b] + [p.b]
            out += [Piece(lo, hi, p.terms) for lo, hi in zip(cuts[:-1], cuts[1:])]
        return BVFunction(tuple(out), self.t_horizon)

    def __add__(self, other: "BVFunction") -> "BVFunction":
        if self.t_horizon != other.t_horizon:
            raise ValueError("horizons differ")
        pts = sorted(set(self.breakpoints) | set(other.breakpoints))
        out = []
        for lo, hi in zip(pts[:-1], pts[1:]):
            mid = 0.5 * (lo + hi)
            terms = []
            for f in (self, other):
                for p in f.pieces:
                    if p.a <= mid <= p.b:
                        terms += p.terms
            terms = _canonical(terms)
            if terms:
                out.append(Piece(lo, hi, terms))
        return BVFunction(tuple(out), self.t_horizon)

    def __mul__(self, c: float) -> "BVFunction":
        c = float(c)
        return BVFunction(tuple(Piece(p.a, p.b, tuple(t.scaled(c) for t in p.terms)) for p in self.pieces), self.t_horizon)

    __rmul__ = __mul__


def eval_bv(f: BVFunction, s):
    """Evaluate f; at shared piece boundaries the left piece wins, outside the support f = 0."""
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    done = np.zeros(s.shape, dtype=bool)
    for p in f.pieces:
        m = (s >= p.a) & (s <= p.b) & ~done
        if m.any():
            out[m] = p(s[m])
            done |= m
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class SignedMeasure:
    """Density pieces plus point masses."""

    density: tuple[Piece, ...]
    atoms: tuple[tuple[float, float], ...]

    def total_mass(self, cfg: QuadConfig | None = None) -> float:
        tot = math.fsum(m for _, m in self.atoms)
        for p in self.density:
            tot += density_integral(p, lambda s: np.ones_like(s), cfg)
        return tot


def _merge_atoms(atoms: Iterable[tuple[float, float]]) -> tuple[tuple[float, float], ...]:
    acc: dict[float, float] = {}
    for x, m in atoms:
        acc[float(x)] = acc.get(float(x), 0.0) + float(m)
    return tuple((x, m) for x, m in sorted(acc.items()) if abs(m) > ATOM_PRUNE)


def to_measure(f: BVFunction) -> SignedMeasure:
    dens, atoms = [], []
    for p in f.pieces:
        d = p.derivative_terms()
        if d:
            dens.append(Piece(p.a, p.b, d))
        atoms.append((p.a, float(p(p.a))))
        atoms.append((p.b, -float(p(p.b))))
    return SignedMeasure(tuple(dens), _merge_atoms(atoms))


def restrict_window(f: BVFunction, t: float, eps1: float, eps2: float) -> BVFunction:
    """f times the indicator of [(t - eps1) v 0, (t + eps2) ^ T]."""
    if eps1 <= 0 or eps2 <= 0:
        raise ValueError("window half-widths must be positive")
    lo = max(t - eps1, 0.0)
    hi = min(t + eps2, f.t_horizon)
    out = []
    for p in f.pieces:
        a, b = max(p.a, lo), min(p.b, hi)
        if a < b:
            out.append(Piece(a, b, p.terms))
    return BVFunction(tuple(out), f.t_horizon)


def _density_hints(p: Piece) -> list[SingularityHint]:
    # s^q with q < 0 appears in derivatives of s^p, 0 < p < 1
    q = min((t.power for t in p.terms), default=0.0)
    if q < 0.0 and p.a == 0.0:
        return [SingularityHint(0.0, max(q, -0.999999))]
    return []


def density_integral(p: Piece, phi: Callable, cfg: QuadConfig | None = None, hints=(), breaks=()) -> float:
    hs = list(hints) + _density_hints(p)
    v, _ = integrate_1d(lambda s: p(s) * phi(s), p.a, p.b, hs, cfg, breaks)
    return v


def integrate_against(m: SignedMeasure, phi: Callable, cfg: QuadConfig | None = None, hints=(), breaks=()) -> float:
    """Integral of phi against the signed measure m."""
    tot = math.fsum(mass * float(phi(np.asarray(x))) for x, mass in m.atoms)
    for p in m.density:
        tot += density_integral(p, phi, cfg, [h for h in hints if p.a <= h.location <= p.b], breaks)
    return tot


# ---------------------------------------------------------------- mini-grammar

_NUM = r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?"
_TERM = re.compile(
    rf"""\s*(?P<sign>[-+])?\s*
    (?P<coef>{_NUM})?
    (?:\s*\*?\s*(?P<s>s)\s*(?:\^\s*(?P<pow>{_NUM}))?)?
    (?:\s*\*?\s*exp\(\s*(?P<rate>{_NUM})\s*\*\s*s\s*\))?
    \s*@\s*\[\s*(?P<a>{_NUM})\s*,\s*(?P<b>{_NUM})\s*\]\s*""",
    re.VERBOSE,
)


class ParseError(ValueError):
    def __init__(self, text: str, pos: int, msg: str):
        super().__init__(f"{msg} at position {pos}: {text[:pos]}<<>>{text[pos:]}")
        self.pos = pos


def parse_bv(text: str, t_horizon: float) -> BVFunction:
    """Parse a sum of ``c*s^p*exp(r*s)@[a,b]`` terms into a BVFunction.

    Any of the coefficient, power or exponential factors may be omitted,
    e.g. ``1@[0,1]``, ``exp(-1*s)@[0,2]``, ``2*s^2@[0,1] - 1@[1,3]``.
    """
    pos = 0
    result = None
    first = True
    while pos < len(text):
        m = _TERM.match(text, pos)
        if not m or m.end() == pos:
            raise ParseError(text, pos, "expected a term c*s^p*exp(r*s)@[a,b]")
        if not first and m.group("sign") is None:
            raise ParseError(text, pos, "terms must be joined by + or -")
        coef = float(m.group("coef")) if m.group("coef") else 1.0
        if m.group("sign") == "-":
            coef = -coef
        power = float(m.group("pow")) if m.group("pow") else (1.0 if m.group("s") else 0.0)
        rate = float(m.group("rate")) if m.group("rate") else 0.0
        a, b = float(m.group("a")), float(m.group("b"))
        if not (0.0 <= a < b <= t_horizon):
            raise ParseError(text, m.start("a"), f"interval [{a}, {b}] must satisfy 0 <= a < b <= {t_horizon}")
        term = BVFunction.single(a, b, ExpPolyTerm(coef, power, rate), t_horizon)
        result = term if result is None else result + term
        pos = m.end()
        first = False
    if result is None:
        raise ParseError(text, 0, "empty function specification")
    return result
