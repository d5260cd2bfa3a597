"""Feasibility and implication reasoning over XADD paths.

* :func:`feasible` / :func:`test_implied` decide conjunctions of signed linear
  decisions exactly (closed half-spaces, so a single point is feasible).
* :meth:`Pruner.prune_inconsistent` drops branches whose path constraints
  are infeasible.
* :meth:`Pruner.prune_redundant` removes decision nodes whose removal provably
  leaves the function unchanged, using propositional entailment over path
  formulas plus LP-verified implications between decisions.
* :meth:`Pruner.linearize` rewrites univariate quadratic decisions as linear
  tests on their roots.
"""
from __future__ import annotations

import enum
import functools
import itertools
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Set, Tuple

from .dpll import Dpll, SatSolver
from .expr import BoolDec, Decision, IneqDec, Polynomial
from .linear import Constraint, NonlinearConstraintError, constraint_from_poly, feasible_system
from .xadd import Node, XaddStore

log = logging.getLogger(__name__)

SignedDec = Tuple[Decision, bool]
Box = Mapping[str, Tuple[Fraction, Fraction]]


class Implied(enum.Enum):
    TRUE = "implied-true"
    FALSE = "implied-false"
    UNDETERMINED = "undetermined"


class UnsupportedDecision(ValueError):
    pass


@dataclass
class PruneStats:
    lp_calls: int = 0
    lp_cache_hits: int = 0
    implied: int = 0
    nodes_removed: int = 0
    redundant_removed: int = 0
    sat_calls: int = 0
    pair_cap_skips: int = 0
    nonlinear_skipped: int = 0
    irrational_roots: int = 0

    def merge(self, other: "PruneStats"):
        for k, v in vars(other).items():
            setattr(self, k, getattr(self, k) + v)


@dataclass
class ConstraintSet:
    entries: Tuple[SignedDec, ...] = ()
    box: Box = field(default_factory=dict)

    def with_(self, dec: Decision, branch: bool) -> "ConstraintSet":
        return ConstraintSet(self.entries + ((dec, branch),), self.box)


class ImplicationKB:
    """Verified implications between signed decisions (``a => b``) and facts."""

    def __init__(self):
        self.implications: Set[Tuple[SignedDec, SignedDec]] = set()
        self.facts: Set[SignedDec] = set()

    def add(self, a: SignedDec, b: SignedDec):
        self.implications.add((a, b))

    def add_fact(self, a: SignedDec):
        self.facts.add(a)

    def __len__(self):
        return len(self.implications) + len(self.facts)

    def __contains__(self, item):
        return item in self.implications

    def clauses(self, lit) -> List[Tuple[int, ...]]:
        """CNF over literal function ``lit(signed_dec) -> int``."""
        out = [(lit(a),) for a in self.facts]
        out.extend((-lit(a), lit(b)) for a, b in self.implications)
        return out


@functools.lru_cache(maxsize=None)
def _signed_constraint(sd: SignedDec) -> Constraint:
    dec, branch = sd
    return constraint_from_poly(dec.poly, positive=branch)


def _box_constraints(box: Box, variables: Iterable[str]) -> List[Constraint]:
    out = []
    for v in variables:
        b = box.get(v)
        if b is None:
            continue
        lo, hi = b
        p = Polynomial.var(v)
        if lo is not None:
            out.append(constraint_from_poly(p - lo))
        if hi is not None:
            out.append(constraint_from_poly(Polynomial.const(hi) - p))
    return out


def _check_linear(entries: Iterable[SignedDec]):
    for d, _ in entries:
        if isinstance(d, IneqDec) and not d.poly.is_linear():
            raise NonlinearConstraintError(
                f"nonlinear decision {d}; call linearize before feasibility tests")


def feasible(cs, box: Optional[Box] = None) -> bool:
    """Whether the closed region described by `cs` is non-empty."""
    if isinstance(cs, ConstraintSet):
        entries, box = cs.entries, (cs.box if box is None else box)
    else:
        entries = tuple(cs)
    box = box or {}
    _check_linear(entries)
    if not _bool_consistent(entries):
        return False
    cons = [_signed_constraint(e) for e in entries if isinstance(e[0], IneqDec)]
    vars_ = {v for c in cons for v, _ in c[0]}
    cons += _box_constraints(box, sorted(vars_))
    return feasible_system(cons)


def _bool_consistent(entries) -> bool:
    seen: Dict[Decision, bool] = {}
    for d, b in entries:
        if seen.setdefault(d, b) != b:
            return False
    return True


def test_implied(context, candidate: SignedDec, kb: Optional[ImplicationKB] = None,
                 box: Optional[Box] = None) -> Implied:
    entries = context.entries if isinstance(context, ConstraintSet) else tuple(context)
    if box is None and isinstance(context, ConstraintSet):
        box = context.box
    p = Pruner(None, box=box, kb=kb)
    return p.test_implied([e for e in entries if isinstance(e[0], IneqDec)], candidate)


class Pruner:
    """Pruning and linearization bound to one store.

    `box` bounds variables during feasibility tests.  Only variables listed
    there are bounded; callers decide which model bounds to conjoin.
    """

    def __init__(self, store: Optional[XaddStore], box: Optional[Box] = None,
                 kb: Optional[ImplicationKB] = None, stats: Optional[PruneStats] = None,
                 sat: Optional[SatSolver] = None, root_tol: Fraction = Fraction(1, 10 ** 12)):
        self.store = store
        self.box = dict(box or {})
        self.kb = kb if kb is not None else ImplicationKB()
        self.stats = stats if stats is not None else PruneStats()
        self.sat = sat or Dpll()
        self.root_tol = root_tol
        self._feas_cache: Dict[FrozenSet, bool] = {}
        self._implied_cache: Dict[tuple, "Implied"] = {}
        # (node, path context) -> pruned node; valid across calls for a fixed box
        self._incons_memo: Dict[tuple, Node] = {}
        self._box_cons: Dict[str, Tuple[Constraint, ...]] = {}

    # -- linear reasoning -----------------------------------------------------
    def _box_for(self, v: str) -> Tuple[Constraint, ...]:
        r = self._box_cons.get(v)
        if r is None:
            r = tuple(_box_constraints(self.box, [v]))
            self._box_cons[v] = r
        return r

    def _feasible(self, cons: Iterable[Constraint]) -> bool:
        key = frozenset(cons)
        r = self._feas_cache.get(key)
        if r is not None:
            self.stats.lp_cache_hits += 1
            return r
        self.stats.lp_calls += 1
        vars_ = {v for c in key for v, _ in c[0]}
        full = list(key)
        for v in sorted(vars_):
            full.extend(self._box_for(v))
        r = feasible_system(full)
        self._feas_cache[key] = r
        return r

    def test_implied(self, context: Sequence[SignedDec], candidate: SignedDec) -> Implied:
        """Context entries must be linear IneqDec pairs (others are ignored)."""
        dec, branch = candidate
        for d, b in context:
            if d == dec:
                return Implied.TRUE if b == branch else Implied.FALSE
        key = (frozenset(context), candidate)
        r = self._implied_cache.get(key)
        if r is None:
            r = self._implied_cache[key] = self._test_implied(context, candidate)
        return r

    def _test_implied(self, context: Sequence[SignedDec], candidate: SignedDec) -> Implied:
        dec, branch = candidate
        if not dec.poly.is_linear():
            raise NonlinearConstraintError(f"nonlinear candidate {dec}")
        # restrict to constraints connected to the candidate through shared variables
        items = []
        for d, b in context:
            if isinstance(d, IneqDec) and d.poly.is_linear():
                items.append(((d, b), _signed_constraint((d, b)), d.poly.variables()))
        comp_vars = set(dec.poly.variables())
        chosen: List[int] = []
        changed = True
        while changed:
            changed = False
            for i, (_, _, vs) in enumerate(items):
                if i not in chosen and vs & comp_vars:
                    chosen.append(i)
                    comp_vars |= vs
                    changed = True
        base = [items[i][1] for i in sorted(chosen)]
        cand = _signed_constraint(candidate)
        neg = _signed_constraint((dec, not branch))
        result = Implied.UNDETERMINED
        if not self._feasible(base + [neg]):
            result = Implied.TRUE
        elif not self._feasible(base + [cand]):
            result = Implied.FALSE
        if result is not Implied.UNDETERMINED:
            self.stats.implied += 1
            implied = candidate if result is Implied.TRUE else (dec, not branch)
            if not chosen:
                self.kb.add_fact(implied)
            elif len(chosen) == 1:
                self.kb.add(items[chosen[0]][0], implied)
        return result

    # -- consistency pruning ------------------------------------------------------
    def prune_inconsistent(self, root: Node) -> Node:
        store = self.store
        store._check(root)
        before = store.node_count(root)
        memo = self._incons_memo

        def rec(n: Node, ctx: Tuple[SignedDec, ...]) -> Node:
            if n.is_leaf:
                return n
            key = (n, frozenset(ctx))
            r = memo.get(key)
            if r is not None:
                return r
            d = n.dec
            if isinstance(d, BoolDec):
                r = store.get_node(d, rec(n.high, ctx), rec(n.low, ctx))
            elif not d.poly.is_linear():
                self.stats.nonlinear_skipped += 1
                r = store.get_node(d, rec(n.high, ctx), rec(n.low, ctx))
            else:
                verdict = self.test_implied(ctx, (d, True))
                if verdict is Implied.TRUE:
                    r = rec(n.high, ctx)
                elif verdict is Implied.FALSE:
                    r = rec(n.low, ctx)
                else:
                    r = store.get_node(d, rec(n.high, ctx + ((d, True),)),
                                       rec(n.low, ctx + ((d, False),)))
            memo[key] = r
            return r

        out = rec(root, ())
        self.stats.nodes_removed += max(0, before - store.node_count(out))
        return out

    # -- redundancy pruning -------------------------------------------------------
    def build_kb(self, root: Node) -> ImplicationKB:
        """Augment the KB with pairwise implications among `root`'s linear decisions."""
        decs = sorted({n.dec for n in self.store.reachable(root)
                       if not n.is_leaf and isinstance(n.dec, IneqDec) and n.dec.poly.is_linear()},
                      key=self.store.order)
        for d in decs:
            for b in (True, False):
                if not self._feasible([_signed_constraint((d, not b))]):
                    self.kb.add_fact((d, b))
        for d1, d2 in itertools.permutations(decs, 2):
            if not (d1.poly.variables() & d2.poly.variables()):
                continue
            for b1 in (True, False):
                c1 = _signed_constraint((d1, b1))
                for b2 in (True, False):
                    if not self._feasible([c1, _signed_constraint((d2, not b2))]):
                        self.kb.add((d1, b1), (d2, b2))
        return self.kb

    def prune_redundant(self, root: Node, mode: str = "exact", epsilon: float = 1e-9,
                        pair_cap: int = 4096, build_kb: bool = True) -> Node:
        store = self.store
        store._check(root)
        if build_kb:
            self.build_kb(root)
        ids: Dict[Decision, int] = {}

        def lit(sd: SignedDec) -> int:
            d, b = sd
            i = ids.setdefault(d, len(ids) + 1)
            return i if b else -i

        kb_clauses = self.kb.clauses(lit)
        eps = Fraction(epsilon)

        def same(a: Node, b: Node) -> bool:
            if a is b:
                return True
            if mode != "epsilon" or isinstance(a.value, float) or isinstance(b.value, float):
                return False
            diff = a.value - b.value
            return all(abs(c) < eps for _, c in diff.terms)

        before = store.node_count(root)
        memo: Dict[Node, Node] = {}

        def rec(n: Node) -> Node:
            if n.is_leaf:
                return n
            r = memo.get(n)
            if r is not None:
                return r
            h, l = rec(n.high), rec(n.low)
            if h is l:
                r = h
            elif self._equivalent_under(h, l, (n.dec, True), lit, kb_clauses, same, pair_cap):
                r = l
            elif self._equivalent_under(h, l, (n.dec, False), lit, kb_clauses, same, pair_cap):
                r = h
            else:
                r = store.get_node(n.dec, h, l)
            memo[n] = r
            return r

        out = rec(root)
        removed = max(0, before - store.node_count(out))
        self.stats.redundant_removed += removed
        return out

    def _equivalent_under(self, h, l, region: SignedDec, lit, kb_clauses, same, pair_cap) -> bool:
        """No point with `region` true can tell `h` and `l` apart (propositionally)."""
        hp = list(self.store.iter_paths(h))
        lp = list(self.store.iter_paths(l))
        if len(hp) * len(lp) > pair_cap:
            self.stats.pair_cap_skips += 1
            return False
        base = kb_clauses + [(lit(region),)]
        for ph, leaf_h in hp:
            for pl, leaf_l in lp:
                if same(leaf_h, leaf_l):
                    continue
                cl = base + [(lit(sd),) for sd in ph] + [(lit(sd),) for sd in pl]
                self.stats.sat_calls += 1
                if self.sat.satisfiable(cl):
                    return False
        return True

    # -- linearization ----------------------------------------------------------
    def linearize(self, root: Node) -> Node:
        store = self.store
        store._check(root)
        memo: Dict[Node, Node] = {}
        changed = False

        def rec(n: Node) -> Node:
            nonlocal changed
            if n.is_leaf:
                return n
            r = memo.get(n)
            if r is not None:
                return r
            h, l = rec(n.high), rec(n.low)
            d = n.dec
            if isinstance(d, IneqDec) and not d.poly.is_linear():
                changed = True
                r = self._linear_region(d.poly, h, l)
            else:
                r = store.get_node(d, h, l)
            memo[n] = r
            return r

        out = rec(root)
        return store.reorder(out) if changed else out

    def _linear_region(self, p: Polynomial, high: Node, low: Node) -> Node:
        """Diagram equal to ``high`` where ``p >= 0`` and ``low`` elsewhere."""
        vs = p.variables()
        if len(vs) != 1 or p.degree() != 2:
            raise UnsupportedDecision(f"cannot linearize {p} >= 0: not univariate quadratic")
        (x,) = vs
        parts = p.split_in(x)
        a = parts[2].constant()
        b = parts.get(1, Polynomial()).constant()
        c = parts.get(0, Polynomial()).constant()
        disc = b * b - 4 * a * c
        store = self.store
        X = Polynomial.var(x)
        if disc < 0:
            return high if a > 0 else low
        if disc == 0:
            # a > 0: non-negative everywhere; a < 0: zero at a single point only
            return high if a > 0 else low
        s = self._sqrt(disc)
        r1, r2 = sorted(((-b - s) / (2 * a), (-b + s) / (2 * a)))
        if a > 0:
            # p >= 0 outside (r1, r2)
            inner = store.ineq_node(X - r1, low, high)
            return store.ineq_node(X - r2, high, inner)
        inner = store.ineq_node(X - r2, low, high)
        return store.ineq_node(X - r1, inner, low)

    def _sqrt(self, q: Fraction) -> Fraction:
        n, d = q.numerator, q.denominator
        nd = n * d
        r = math.isqrt(nd)
        if r * r == nd:
            return Fraction(r, d)
        self.stats.irrational_roots += 1
        # rational enclosure well inside root_tol
        k = 10 ** (len(str(self.root_tol.denominator)) + 6)
        return Fraction(math.isqrt(nd * k * k), d * k)


def prune_inconsistent(store: XaddStore, root: Node, box: Optional[Box] = None,
                       kb: Optional[ImplicationKB] = None, stats: Optional[PruneStats] = None) -> Node:
    return Pruner(store, box=box, kb=kb, stats=stats).prune_inconsistent(root)


def prune_redundant(store: XaddStore, root: Node, kb: Optional[ImplicationKB] = None,
                    mode: str = "exact", epsilon: float = 1e-9, box: Optional[Box] = None,
                    stats: Optional[PruneStats] = None) -> Node:
    return Pruner(store, box=box, kb=kb, stats=stats).prune_redundant(root, mode=mode, epsilon=epsilon)


def linearize(store: XaddStore, root: Node, stats: Optional[PruneStats] = None) -> Node:
    return Pruner(store, stats=stats).linearize(root)
