"""Exact multivariate polynomials and normalized decision atoms.

Polynomials carry :class:`fractions.Fraction` coefficients and are keyed by
variable *names*; a :class:`VarRegistry` records what kind of variable each
name denotes.  Every XADD leaf and inequality decision is built from these.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, Iterable, Mapping, Optional, Tuple, Union

Number = Union[int, Fraction]
# A monomial is a sorted tuple of (variable name, positive exponent) pairs.
Monomial = Tuple[Tuple[str, int], ...]

ONE_MONO: Monomial = ()


class VarKind(enum.Enum):
    BOOLEAN = "boolean"
    CONTINUOUS = "continuous-state"
    PRIMED_BOOLEAN = "primed-boolean"
    PRIMED_CONTINUOUS = "primed-continuous"
    ACTION_PARAM = "action-param"

    @property
    def is_boolean(self) -> bool:
        return self in (VarKind.BOOLEAN, VarKind.PRIMED_BOOLEAN)


@dataclass(frozen=True)
class VarId:
    name: str
    kind: VarKind
    index: int
    primed_of: Optional[str] = None


@dataclass
class VarRegistry:
    """Insertion-ordered registry of variable names and kinds."""

    _vars: Dict[str, VarId] = field(default_factory=dict)

    def add(self, name: str, kind: VarKind, primed_of: Optional[str] = None) -> VarId:
        existing = self._vars.get(name)
        if existing is not None:
            if existing.kind is not kind:
                raise ValueError(f"variable {name!r} already registered as {existing.kind.value}")
            return existing
        if primed_of is not None and primed_of not in self._vars:
            raise ValueError(f"primed variable {name!r} links to unknown {primed_of!r}")
        v = VarId(name, kind, len(self._vars), primed_of)
        self._vars[name] = v
        return v

    def add_state(self, name: str, boolean: bool) -> Tuple[VarId, VarId]:
        """Register a state variable together with its primed twin."""
        kind = VarKind.BOOLEAN if boolean else VarKind.CONTINUOUS
        pkind = VarKind.PRIMED_BOOLEAN if boolean else VarKind.PRIMED_CONTINUOUS
        v = self.add(name, kind)
        return v, self.add(prime_name(name), pkind, primed_of=name)

    def __getitem__(self, name: str) -> VarId:
        return self._vars[name]

    def __contains__(self, name: str) -> bool:
        return name in self._vars

    def __iter__(self):
        return iter(self._vars.values())

    def __len__(self) -> int:
        return len(self._vars)

    def kind(self, name: str) -> VarKind:
        return self._vars[name].kind


def prime_name(name: str) -> str:
    return name + "'"


def unprime_name(name: str) -> str:
    if not name.endswith("'"):
        raise ValueError(f"{name!r} is not primed")
    return name[:-1]


def is_primed(name: str) -> bool:
    return name.endswith("'")


def _mono_key(m: Monomial):
    # graded lexicographic: total degree, then variable/exponent sequence
    return (sum(e for _, e in m), m)


def _mono_mul(a: Monomial, b: Monomial) -> Monomial:
    if not a:
        return b
    if not b:
        return a
    powers = dict(a)
    for v, e in b:
        powers[v] = powers.get(v, 0) + e
    return tuple(sorted(powers.items()))


def _to_fraction(c) -> Fraction:
    if isinstance(c, Fraction):
        return c
    if isinstance(c, int):
        return Fraction(c)
    if isinstance(c, float):
        # decimal text of the float, so 0.1 stays 1/10
        return Fraction(repr(c))
    if isinstance(c, str):
        return Fraction(c)
    raise TypeError(f"cannot use {type(c).__name__} as a coefficient")


class Polynomial:
    """Canonical polynomial: like terms merged, zeros dropped, graded-lex order.

    Instances are immutable and hashable; equal polynomials compare equal
    regardless of how they were built.
    """

    __slots__ = ("terms", "_hash")

    def __init__(self, terms: Tuple[Tuple[Monomial, Fraction], ...] = ()):
        # trusted constructor: terms must already be canonical
        self.terms = terms
        self._hash = hash(terms)

    # -- construction -------------------------------------------------
    @classmethod
    def from_dict(cls, d: Mapping[Monomial, Fraction]) -> "Polynomial":
        items = [(m, c) for m, c in d.items() if c != 0]
        items.sort(key=lambda t: _mono_key(t[0]))
        return cls(tuple(items))

    @classmethod
    def const(cls, c) -> "Polynomial":
        c = _to_fraction(c)
        return cls(((ONE_MONO, c),)) if c != 0 else ZERO

    @classmethod
    def var(cls, name: str) -> "Polynomial":
        return cls(((((name, 1),), Fraction(1)),))

    # -- inspection ---------------------------------------------------
    def __eq__(self, other):
        if isinstance(other, Polynomial):
            return self.terms == other.terms
        if isinstance(other, (int, Fraction)):
            return self.is_constant() and self.constant() == other
        return NotImplemented

    def __hash__(self):
        return self._hash

    def __bool__(self):
        return bool(self.terms)

    def is_zero(self) -> bool:
        return not self.terms

    def is_constant(self) -> bool:
        return not self.terms or (len(self.terms) == 1 and self.terms[0][0] == ONE_MONO)

    def constant(self) -> Fraction:
        if self.terms and self.terms[0][0] == ONE_MONO:
            return self.terms[0][1]
        return Fraction(0)

    def degree(self) -> int:
        return max((sum(e for _, e in m) for m, _ in self.terms), default=0)

    def degree_in(self, v: str) -> int:
        return max((e for m, _ in self.terms for u, e in m if u == v), default=0)

    def variables(self) -> frozenset:
        return frozenset(u for m, _ in self.terms for u, _ in m)

    def is_linear(self) -> bool:
        return self.degree() <= 1

    def coeff_of(self, mono: Monomial) -> Fraction:
        for m, c in self.terms:
            if m == mono:
                return c
        return Fraction(0)

    def leading(self) -> Tuple[Monomial, Fraction]:
        """Highest monomial under graded-lex order."""
        return self.terms[-1]

    def linear_parts(self) -> Tuple[Dict[str, Fraction], Fraction]:
        """Split a degree-<=1 polynomial into ({var: coef}, constant)."""
        coefs: Dict[str, Fraction] = {}
        const = Fraction(0)
        for m, c in self.terms:
            if not m:
                const = c
            elif len(m) == 1 and m[0][1] == 1:
                coefs[m[0][0]] = c
            else:
                raise ValueError(f"{self} is not linear")
        return coefs, const

    def split_in(self, v: str) -> Dict[int, "Polynomial"]:
        """Coefficients of powers of `v`: {k: poly without v}."""
        parts: Dict[int, Dict[Monomial, Fraction]] = {}
        for m, c in self.terms:
            k = 0
            rest = []
            for u, e in m:
                if u == v:
                    k = e
                else:
                    rest.append((u, e))
            bucket = parts.setdefault(k, {})
            key = tuple(rest)
            bucket[key] = bucket.get(key, 0) + c
        return {k: Polynomial.from_dict(d) for k, d in parts.items()}

    # -- arithmetic ---------------------------------------------------
    def __add__(self, other) -> "Polynomial":
        other = as_poly(other)
        if not other.terms:
            return self
        if not self.terms:
            return other
        d = dict(self.terms)
        for m, c in other.terms:
            d[m] = d.get(m, 0) + c
        return Polynomial.from_dict(d)

    __radd__ = __add__

    def __neg__(self) -> "Polynomial":
        return Polynomial(tuple((m, -c) for m, c in self.terms))

    def __sub__(self, other) -> "Polynomial":
        return self + (-as_poly(other))

    def __rsub__(self, other) -> "Polynomial":
        return as_poly(other) - self

    def __mul__(self, other) -> "Polynomial":
        if isinstance(other, (int, Fraction, float)):
            return self.scale(other)
        other = as_poly(other)
        if not self.terms or not other.terms:
            return ZERO
        d: Dict[Monomial, Fraction] = {}
        for m1, c1 in self.terms:
            for m2, c2 in other.terms:
                m = _mono_mul(m1, m2)
                d[m] = d.get(m, 0) + c1 * c2
        return Polynomial.from_dict(d)

    __rmul__ = __mul__

    def __truediv__(self, c) -> "Polynomial":
        return self.scale(1 / _to_fraction(c))

    def scale(self, c) -> "Polynomial":
        c = _to_fraction(c)
        if c == 0:
            return ZERO
        if c == 1:
            return self
        return Polynomial(tuple((m, k * c) for m, k in self.terms))

    def __pow__(self, n: int) -> "Polynomial":
        if n < 0:
            raise ValueError("negative exponent")
        out = ONE
        for _ in range(n):
            out = out * self
        return out

    # -- evaluation / substitution ------------------------------------
    def eval(self, assignment: Mapping[str, Number]) -> Fraction:
        total = Fraction(0)
        for m, c in self.terms:
            t = c
            for v, e in m:
                try:
                    x = assignment[v]
                except KeyError:
                    raise KeyError(f"no value for variable {v!r}") from None
                t = t * (x ** e if e != 1 else x)
            total += t
        return total

    def eval_float(self, assignment: Mapping[str, float]) -> float:
        total = 0.0
        for m, c in self.terms:
            t = float(c)
            for v, e in m:
                t *= assignment[v] ** e
            total += t
        return total

    def substitute(self, sigma: Mapping[str, "Polynomial"]) -> "Polynomial":
        """Simultaneous substitution {var: replacement}."""
        if not sigma or not (self.variables() & sigma.keys()):
            return self
        out: Dict[Monomial, Fraction] = {}
        for m, c in self.terms:
            kept = []
            piece = ONE
            for v, e in m:
                rep = sigma.get(v)
                if rep is None:
                    kept.append((v, e))
                else:
                    piece = piece * (rep if e == 1 else rep ** e)
            piece = piece * Polynomial(((tuple(kept), c),))
            for pm, pc in piece.terms:
                out[pm] = out.get(pm, 0) + pc
        return Polynomial.from_dict(out)

    def rename(self, mapping: Mapping[str, str]) -> "Polynomial":
        return self.substitute({k: Polynomial.var(v) for k, v in mapping.items()})

    def derivative(self, v: str) -> "Polynomial":
        d: Dict[Monomial, Fraction] = {}
        for m, c in self.terms:
            for i, (u, e) in enumerate(m):
                if u == v:
                    nm = m[:i] + (((u, e - 1),) if e > 1 else ()) + m[i + 1:]
                    d[nm] = d.get(nm, 0) + c * e
        return Polynomial.from_dict(d)

    # -- text -----------------------------------------------------------
    def __str__(self) -> str:
        return render_poly(self)

    def __repr__(self) -> str:
        return f"Polynomial({render_poly(self)!r})"


ZERO = Polynomial(())
ONE = Polynomial(((ONE_MONO, Fraction(1)),))


def as_poly(x) -> Polynomial:
    if isinstance(x, Polynomial):
        return x
    if isinstance(x, str):
        return Polynomial.var(x)
    return Polynomial.const(x)


def canonicalize(raw: Iterable[Tuple[object, Mapping[str, int]]]) -> Polynomial:
    """Build a canonical polynomial from (coefficient, {var: exponent}) pairs."""
    d: Dict[Monomial, Fraction] = {}
    for coef, powers in raw:
        if isinstance(powers, tuple):
            powers = dict(powers)
        if any(e < 0 for e in powers.values()):
            raise ValueError("negative exponent")
        m = tuple(sorted((v, e) for v, e in powers.items() if e != 0))
        d[m] = d.get(m, 0) + _to_fraction(coef)
    return Polynomial.from_dict(d)


def poly_eval(p: Polynomial, assignment: Mapping[str, Number]) -> Fraction:
    return p.eval(assignment)


def poly_substitute(p: Polynomial, sigma: Mapping[str, Polynomial]) -> Polynomial:
    """Simultaneous substitution; right-hand sides may not mention substituted names."""
    lhs = set(sigma)
    for v, rhs in sigma.items():
        clash = rhs.variables() & lhs
        if clash and not (len(sigma) == 1 and rhs == Polynomial.var(v)):
            raise ValueError(
                f"substitution for {v!r} mentions substituted variable(s) {sorted(clash)}")
    return p.substitute(sigma)


def derivative(p: Polynomial, v: str) -> Polynomial:
    return p.derivative(v)


class UnsupportedDegreeError(ValueError):
    pass


def solve_for_var(p: Polynomial, v: str) -> Optional[Polynomial]:
    """Root of p = 0 solved for `v`; None when p has no `v` term."""
    parts = p.split_in(v)
    if any(k > 1 for k in parts):
        raise UnsupportedDegreeError(f"{p} has degree {max(parts)} in {v}")
    lin = parts.get(1)
    if lin is None or lin.is_zero():
        return None
    if not lin.is_constant():
        raise UnsupportedDegreeError(f"coefficient of {v} in {p} is not constant")
    rest = parts.get(0, ZERO)
    return rest.scale(-1 / lin.constant())


# -- decisions ------------------------------------------------------------

@dataclass(frozen=True)
class BoolDec:
    var: str

    def __str__(self):
        return self.var


@dataclass(frozen=True)
class IneqDec:
    """The atom ``poly >= 0`` with ``poly`` in normalized form."""

    poly: Polynomial

    def __str__(self):
        return f"{self.poly} >= 0"

    def holds(self, assignment) -> bool:
        return self.poly.eval(assignment) >= 0


Decision = Union[BoolDec, IneqDec]


def normalize_ineq(p: Polynomial):
    """Normalize ``p >= 0``.

    Returns ``(decision, flipped)`` where ``flipped`` means the original atom
    corresponds to the *low* branch of ``decision``.  A constant ``p`` yields
    ``(truth_value, False)`` with ``truth_value`` a bool.
    """
    if p.is_constant():
        return p.constant() >= 0, False
    den = 1
    for _, c in p.terms:
        den = den * c.denominator // math.gcd(den, c.denominator)
    num = 0
    for _, c in p.terms:
        num = math.gcd(num, c.numerator * (den // c.denominator))
    factor = Fraction(den, num)
    flipped = p.leading()[1] < 0
    if flipped:
        factor = -factor
    q = p.scale(factor)
    return IneqDec(q), flipped


def render_number(c: Fraction) -> str:
    if c.denominator == 1:
        return str(c.numerator)
    # exact decimal when the denominator only has factors 2 and 5
    d = c.denominator
    k = 0
    while d % 2 == 0:
        d //= 2
        k += 1
    j = 0
    while d % 5 == 0:
        d //= 5
        j += 1
    if d == 1:
        digits = max(k, j)
        scaled = c * 10 ** digits
        s = str(abs(scaled.numerator)).rjust(digits + 1, "0")
        out = s[:-digits] + "." + s[-digits:]
        return ("-" if c < 0 else "") + out
    return f"{c.numerator}/{c.denominator}"


def _render_mono(m: Monomial) -> str:
    return "*".join(v if e == 1 else f"{v}^{e}" for v, e in m)


def render_poly(p: Polynomial) -> str:
    if not p.terms:
        return "0"
    parts = []
    for i, (m, c) in enumerate(p.terms):
        neg = c < 0
        a = -c if neg else c
        if not m:
            body = render_number(a)
        elif a == 1:
            body = _render_mono(m)
        else:
            body = f"{render_number(a)}*{_render_mono(m)}"
        if i == 0:
            parts.append(("-" if neg else "") + body)
        else:
            parts.append((" - " if neg else " + ") + body)
    return "".join(parts)
