"""Exact feasibility of conjunctions of linear inequalities.

A constraint is ``(coefs, const, strict)`` meaning ``sum(c*v) + const >= 0``
(or ``> 0`` when ``strict``), with ``coefs`` a sorted tuple of
``(var, Fraction)``.  Two engines are provided: Fourier-Motzkin elimination,
which handles strict constraints, and a rational phase-1 simplex with Bland's
rule for larger systems of non-strict constraints.
"""
from __future__ import annotations

from fractions import Fraction
from typing import Dict, Iterable, List, Sequence, Tuple

from .expr import Polynomial

Coefs = Tuple[Tuple[str, Fraction], ...]
Constraint = Tuple[Coefs, Fraction, bool]


class NonlinearConstraintError(ValueError):
    """Raised when a constraint is not linear; linearize the diagram first."""


def constraint_from_poly(p: Polynomial, positive: bool = True, strict: bool = False) -> Constraint:
    """``p >= 0`` (or ``-p >= 0`` when not `positive`) as a normalized constraint."""
    if not p.is_linear():
        raise NonlinearConstraintError(f"constraint {p} >= 0 is not linear")
    coefs, const = p.linear_parts()
    if not positive:
        coefs = {v: -c for v, c in coefs.items()}
        const = -const
    return normalize((tuple(sorted(coefs.items())), const, strict))


def normalize(c: Constraint) -> Constraint:
    coefs, const, strict = c
    coefs = tuple((v, a) for v, a in coefs if a != 0)
    if not coefs:
        return (), const, strict
    scale = max(abs(a) for _, a in coefs)
    return tuple((v, a / scale) for v, a in coefs), const / scale, strict


def _trivially(c: Constraint) -> bool:
    _, const, strict = c
    return const > 0 if strict else const >= 0


def fm_feasible(constraints: Iterable[Constraint]) -> bool:
    """Fourier-Motzkin elimination."""
    cons = set()
    for c in constraints:
        c = normalize(c)
        if not c[0]:
            if not _trivially(c):
                return False
            continue
        cons.add(c)
    while cons:
        # eliminate the variable minimizing the number of generated pairs
        occ: Dict[str, List[int]] = {}
        for coefs, _, _ in cons:
            for v, a in coefs:
                pn = occ.setdefault(v, [0, 0])
                pn[0 if a > 0 else 1] += 1
        var = min(sorted(occ), key=lambda v: occ[v][0] * occ[v][1] - occ[v][0] - occ[v][1])
        pos, neg, rest = [], [], set()
        for c in cons:
            a = dict(c[0]).get(var)
            if a is None:
                rest.add(c)
            elif a > 0:
                pos.append(c)
            else:
                neg.append(c)
        for pc, pconst, pstrict in pos:
            pa = dict(pc)[var]
            for nc, nconst, nstrict in neg:
                na = -dict(nc)[var]
                merged: Dict[str, Fraction] = {}
                for v, a in pc:
                    merged[v] = merged.get(v, 0) + a / pa
                for v, a in nc:
                    merged[v] = merged.get(v, 0) + a / na
                merged.pop(var, None)
                c = normalize((tuple(sorted(merged.items())), pconst / pa + nconst / na,
                               pstrict or nstrict))
                if not c[0]:
                    if not _trivially(c):
                        return False
                    continue
                rest.add(c)
        cons = _drop_dominated(rest)
    return True


def _drop_dominated(cons):
    # same direction, weaker constant -> redundant
    best: Dict[Coefs, Tuple[Fraction, bool]] = {}
    for coefs, const, strict in cons:
        cur = best.get(coefs)
        if cur is None or const < cur[0] or (const == cur[0] and strict and not cur[1]):
            best[coefs] = (const, strict)
    return {(k, c, s) for k, (c, s) in best.items()}


def simplex_feasible(constraints: Sequence[Constraint]) -> bool:
    """Phase-1 simplex over Fractions with Bland's anti-cycling rule.

    Free variables are split as ``v = u - w`` with ``u, w >= 0``; each row
    ``a.x + k >= 0`` becomes ``a.u - a.w - s = -k`` with a surplus ``s``.
    """
    rows = []
    for c in constraints:
        c = normalize(c)
        if c[2]:
            raise ValueError("simplex engine does not handle strict constraints")
        if not c[0]:
            if not _trivially(c):
                return False
            continue
        rows.append(c)
    if not rows:
        return True
    names = sorted({v for coefs, _, _ in rows for v, _ in coefs})
    col = {v: i for i, v in enumerate(names)}
    n, m = len(names), len(rows)
    ncols = 2 * n + m + m
    tab: List[List[Fraction]] = []
    basis: List[int] = []
    for i, (coefs, const, _) in enumerate(rows):
        r = [Fraction(0)] * (ncols + 1)
        for v, a in coefs:
            r[col[v]] = a
            r[n + col[v]] = -a
        r[2 * n + i] = Fraction(-1)
        r[ncols] = -const
        if r[ncols] < 0:
            r = [-x for x in r]
        r[2 * n + m + i] = Fraction(1)
        tab.append(r)
        basis.append(2 * n + m + i)
    cost = [Fraction(0)] * (2 * n + m) + [Fraction(1)] * m
    while True:
        enter = -1
        for j in range(ncols):
            if j in basis:
                continue
            red = cost[j] - sum(cost[basis[i]] * tab[i][j] for i in range(m) if tab[i][j])
            if red < 0:
                enter = j
                break
        if enter < 0:
            break
        leave, best = -1, None
        for i in range(m):
            a = tab[i][enter]
            if a > 0:
                ratio = tab[i][ncols] / a
                if best is None or ratio < best or (ratio == best and basis[i] < basis[leave]):
                    best, leave = ratio, i
        if leave < 0:
            # unbounded direction in phase 1 cannot happen (objective >= 0)
            break
        piv = tab[leave][enter]
        prow = [x / piv for x in tab[leave]]
        tab[leave] = prow
        for i in range(m):
            if i != leave and tab[i][enter]:
                f = tab[i][enter]
                tab[i] = [x - f * y for x, y in zip(tab[i], prow)]
        basis[leave] = enter
    return sum(cost[basis[i]] * tab[i][ncols] for i in range(m)) == 0


def feasible_system(constraints: Sequence[Constraint], fm_max_vars: int = 3) -> bool:
    cons = list(constraints)
    nvars = len({v for coefs, _, _ in cons for v, _ in coefs})
    if nvars <= fm_max_vars or any(c[2] for c in cons):
        return fm_feasible(cons)
    return simplex_feasible(cons)
