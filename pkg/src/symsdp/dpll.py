"""Small DPLL satisfiability checker.

Clauses are iterables of non-zero integer literals (DIMACS style).  This is
plenty for the path formulas checked during redundancy pruning, which rarely
have more than a few dozen atoms.
"""
from __future__ import annotations

from typing import Dict, FrozenSet, Iterable, List, Optional


class SatSolver:
    """Seam for plugging in another propositional solver."""

    def solve(self, clauses: Iterable[Iterable[int]]) -> Optional[Dict[int, bool]]:
        raise NotImplementedError

    def satisfiable(self, clauses) -> bool:
        return self.solve(clauses) is not None


class Dpll(SatSolver):
    def __init__(self):
        self.calls = 0

    def solve(self, clauses):
        self.calls += 1
        cls: List[FrozenSet[int]] = []
        for c in clauses:
            c = frozenset(c)
            if any(-l in c for l in c):
                continue  # tautology
            cls.append(c)
        return _dpll(cls, {})


def _simplify(clauses, lit):
    out = []
    for c in clauses:
        if lit in c:
            continue
        if -lit in c:
            c = c - {-lit}
            if not c:
                return None
        out.append(c)
    return out


def _dpll(clauses, assignment):
    while True:
        unit = next((c for c in clauses if len(c) == 1), None)
        if unit is None:
            break
        (lit,) = unit
        assignment = {**assignment, abs(lit): lit > 0}
        clauses = _simplify(clauses, lit)
        if clauses is None:
            return None
    if not clauses:
        return assignment
    # pure literals
    lits = {l for c in clauses for l in c}
    pure = [l for l in lits if -l not in lits]
    if pure:
        for l in pure:
            assignment = {**assignment, abs(l): l > 0}
            clauses = _simplify(clauses, l)
        return _dpll(clauses, assignment)
    # branch on the most frequent variable
    counts: Dict[int, int] = {}
    for c in clauses:
        for l in c:
            counts[abs(l)] = counts.get(abs(l), 0) + 1
    v = max(sorted(counts), key=counts.get)
    for lit in (v, -v):
        sub = _simplify(clauses, lit)
        if sub is not None:
            r = _dpll(sub, {**assignment, v: lit > 0})
            if r is not None:
                return r
    return None


def satisfiable(clauses) -> bool:
    return Dpll().satisfiable(clauses)
