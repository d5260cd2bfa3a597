"""Symbolic value iteration for hybrid MDPs.

One Bellman backup per action: prime the previous value function, add the
reward, integrate out every next-state continuous variable by substituting
its (deterministic) transition, sum out next-state booleans with their CPFs,
then maximize over each continuous action parameter in closed form.  The
value function is the case-wise maximum over actions; its leaves carry the
maximizing action and parameter expressions, which is the policy.
"""
from __future__ import annotations

import itertools
import logging
import time
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

from .expr import ZERO, BoolDec, Polynomial, is_primed, prime_name, solve_for_var
from .hmdp.model import ActionSchema, HmdpModel
from .prune import PruneStats, Pruner
from .xadd import NEG_INF, POS_INF, BudgetExceeded, Node, XaddStore

log = logging.getLogger(__name__)

PRUNE_MODES = ("none", "consistency", "full", "heuristic")


class SdpError(Exception):
    pass


class TimeLimitExceeded(SdpError):
    pass


class UnsupportedLeaf(SdpError):
    """Leaf outside what closed-form maximization handles (degree > 2, convex)."""


@dataclass
class SolveOptions:
    prune: str = "consistency"
    epsilon: float = 1e-9
    v0: str = "zero"              # "zero" or "reward"
    budget: Optional[int] = 200_000
    early_stop: bool = True
    convergence_points: int = 1000
    convergence_tol: float = 1e-9
    policy: bool = True           # annotate leaves with the maximizing action
    time_limit: Optional[float] = None   # seconds for the whole solve

    def __post_init__(self):
        if self.prune not in PRUNE_MODES:
            raise ValueError(f"prune mode must be one of {PRUNE_MODES}")
        if self.v0 not in ("zero", "reward"):
            raise ValueError("v0 must be 'zero' or 'reward'")


@dataclass
class IterationStats:
    h: int
    action_count: int
    v_nodes: int
    v_paths: int
    pruned_nodes: int
    ms: float
    q_nodes: Dict[str, int] = field(default_factory=dict)
    allocated: int = 0
    lp_calls: int = 0
    irrational_roots: int = 0


@dataclass
class SolveResult:
    model: HmdpModel
    values: List[Node]
    policies: List[Optional[Node]]
    q: List[Dict[str, Node]]
    stats: List[IterationStats]
    converged_at: Optional[int] = None
    aborted: bool = False
    abort_reason: str = ""
    param_order: Dict[str, List[str]] = field(default_factory=dict)
    options: Optional[SolveOptions] = None

    @property
    def store(self) -> XaddStore:
        return self.model.store

    @property
    def horizon(self) -> int:
        return len(self.values) - 1

    def value_at(self, h: int, state: Mapping):
        return self.store.evaluate(self.values[h], state)


class Solver:
    REORDER_PRUNE_MIN = 1000

    def __init__(self, model: HmdpModel, options: Optional[SolveOptions] = None):
        self.model = model
        self.store = model.store
        self.opts = options or SolveOptions()
        self.stats = PruneStats()
        self._pruners: Dict[Optional[str], Pruner] = {}
        self._deadline: Optional[float] = None

    # -- pruning helpers --------------------------------------------------------
    def pruner(self, action: Optional[ActionSchema] = None) -> Pruner:
        key = action.name if action is not None else None
        p = self._pruners.get(key)
        if p is None:
            box = self.model.param_box(action) if action is not None else {}
            p = Pruner(self.store, box=box, stats=self.stats)
            self._pruners[key] = p
        return p

    def prune(self, f: Node, action: Optional[ActionSchema] = None, redundancy: bool = False) -> Node:
        mode = self.opts.prune
        if mode == "none":
            return f
        p = self.pruner(action)
        f = p.prune_inconsistent(f)
        if redundancy and mode in ("full", "heuristic"):
            f = p.prune_redundant(f, mode="exact" if mode == "full" else "epsilon",
                                  epsilon=self.opts.epsilon)
        return f

    def _prune_reordered(self, f: Node) -> Node:
        # small reorders are cheap to carry; large ones are where infeasible
        # interleavings of parallel hyperplanes pile up
        if self.store.node_count(f) < self.REORDER_PRUNE_MIN:
            return f
        return self.pruner().prune_inconsistent(f)

    def linearize(self, f: Node) -> Node:
        return self.pruner().linearize(f)

    # -- regression ---------------------------------------------------------------
    def prime(self, v: Node) -> Node:
        s = self.store
        vars_ = s.variables(v)
        primed = sorted(x for x in vars_ if is_primed(x))
        if primed:
            raise SdpError(f"cannot prime: already primed variable(s) {primed}")
        sigma = {x: Polynomial.var(prime_name(x)) for x in self.model.cont_vars if x in vars_}
        rename = {b: prime_name(b) for b in self.model.bool_vars if b in vars_}
        return s.substitute(v, sigma, rename)

    def integrate_delta(self, q: Node, xp: str, transition: Node) -> Node:
        """Integrate ``delta(x' - T) * q`` over x', i.e. substitute T for x' casewise."""
        s = self.store
        bad = {v for v in s.variables(transition) if is_primed(v)}
        if bad:
            raise SdpError(f"transition for {xp} mentions primed variable(s) {sorted(bad)}")
        if xp not in s.variables(q):
            return q
        memo: Dict[Node, Node] = {}

        def rec(t: Node) -> Node:
            r = memo.get(t)
            if r is None:
                if t.is_leaf:
                    if isinstance(t.value, float):
                        r = s.neg_inf
                    else:
                        r = s.substitute(q, {xp: t.value})
                else:
                    r = s.get_node(t.dec, rec(t.high), rec(t.low))
                memo[t] = r
            return r

        return s.reorder(rec(transition))

    def marginalize_discrete(self, q: Node, bp: str, cpf: Node) -> Node:
        s = self.store
        if bp not in s.variables(q):
            return q
        for leaf in s.leaves(cpf):
            v = leaf.value
            if isinstance(v, float) or (v.is_constant() and not 0 <= v.constant() <= 1):
                raise SdpError(f"cpf for {bp} has a leaf outside [0, 1]: {v}")
        t = s.restrict(q, bp, True)
        f = s.restrict(q, bp, False)
        return s.add(s.mask(t, cpf), s.mask(f, s.sub(s.one, cpf)))

    def regress(self, v: Node, action: ActionSchema, gamma: Optional[Fraction] = None) -> Node:
        s = self.store
        m = self.model
        gamma = m.discount if gamma is None else Fraction(gamma)
        r = m.reward_for(action)
        reward_primed = any(is_primed(x) for x in s.variables(r))
        if gamma == 0:
            q = s.zero
        else:
            q = s.scale(self.prime(v), gamma)
        if reward_primed:
            q = s.add(r, q)
        for x in m.cont_vars:
            xp = prime_name(x)
            q = self.integrate_delta(q, xp, action.transitions[xp])
            q = self.prune(q, action)
        for b in m.bool_vars:
            bp = prime_name(b)
            q = self.marginalize_discrete(q, bp, action.cpfs[bp])
        if not reward_primed:
            q = s.add(r, q)
        q = self.prune(q, action)
        left = sorted(x for x in s.variables(q) if is_primed(x))
        if left:
            raise SdpError(f"regression left primed variable(s) {left}")
        return q

    # -- maximization -----------------------------------------------------------------
    def _guard_chain(self, conds: Sequence[Tuple[object, bool]], tail: Node) -> Node:
        """`tail` where every condition holds, -inf elsewhere (unordered).

        Conditions are signed decisions ``(dec, branch)`` or polynomials
        ``(p, True)`` meaning ``p >= 0``.
        """
        s = self.store
        acc = tail
        for c, branch in reversed(conds):
            if isinstance(c, Polynomial):
                acc = s.ineq_node(c, acc, s.neg_inf)
            elif branch:
                acc = s.get_node(c, acc, s.neg_inf)
            else:
                acc = s.get_node(c, s.neg_inf, acc)
        return acc

    def continuous_max(self, q: Node, y: str, lo: Fraction, hi: Fraction,
                       action: Optional[ActionSchema] = None) -> Node:
        """``max_{y in [lo, hi]} q`` with leaves annotated by the maximizer."""
        s = self.store
        result = s.neg_inf
        for path, leaf in s.iter_paths(q):
            v = leaf.value
            if v == NEG_INF:
                continue
            if v == POS_INF:
                raise UnsupportedLeaf("cannot maximize a +inf leaf")
            deg = v.degree_in(y)
            if deg > 2:
                raise UnsupportedLeaf(f"leaf {v} has degree {deg} in {y}")
            if deg == 2:
                a2 = v.split_in(y)[2]
                if not a2.is_constant() or a2.constant() > 0:
                    raise UnsupportedLeaf(f"leaf {v} is not concave in {y}")
            lbs: List[Polynomial] = [Polynomial.const(lo)]
            ubs: List[Polynomial] = [Polynomial.const(hi)]
            ind: List[Tuple[object, bool]] = []
            for dec, branch in path:
                if isinstance(dec, BoolDec) or y not in dec.poly.variables():
                    ind.append((dec, branch))
                    continue
                p = dec.poly if branch else -dec.poly
                parts = p.split_in(y)
                if max(parts) > 1 or not parts[1].is_constant():
                    raise UnsupportedLeaf(f"decision {dec} is not linear in {y}")
                c = parts[1].constant()
                bound = parts.get(0, ZERO).scale(-1 / c)
                (lbs if c > 0 else ubs).append(bound)
            ann = leaf.annotation

            def annotated(expr: Polynomial, _v=v, _ann=ann) -> Node:
                val = _v.substitute({y: expr})
                prev = _ann[1] if _ann else ()
                params = tuple((p, e.substitute({y: expr})) for p, e in prev) + ((y, expr),)
                return s.leaf(val, (_ann[0] if _ann else None, params))

            LB = self._extreme(lbs, True)
            UB = self._extreme(ubs, False)
            best = s.max(s.map_leaves(LB, lambda n: annotated(n.value)),
                         s.map_leaves(UB, lambda n: annotated(n.value)))
            if deg == 2:
                root = solve_for_var(v.derivative(y), y)
                if root is not None:
                    conds = [(root - lb, True) for lb in lbs] + [(ub - root, True) for ub in ubs]
                    gated = s.reorder(self._guard_chain(conds, annotated(root)))
                    best = s.max(best, gated)
            conds = list(ind) + [(ub - lb, True) for lb in lbs for ub in ubs]
            gate = s.reorder(self._guard_chain(conds, s.zero))
            piece = s.add(gate, best)
            piece = self.prune(piece, action)
            result = s.max(result, piece)
            result = self.prune(result, action)
        result = self.linearize(result)
        return self.prune(result, action)

    def _extreme(self, polys: Sequence[Polynomial], upper: bool) -> Node:
        s = self.store
        uniq = list(dict.fromkeys(polys))
        acc = s.leaf(uniq[0])
        for p in uniq[1:]:
            acc = s.max(acc, s.leaf(p)) if upper else s.min(acc, s.leaf(p))
        return self.linearize(acc)

    def casemax_merge(self, f: Node, g: Node) -> Node:
        return self.store.max(f, g)

    # -- value iteration ------------------------------------------------------------------
    def backup(self, v: Node, h: int) -> Tuple[Node, Dict[str, Node]]:
        s = self.store
        qs: Dict[str, Node] = {}
        best = s.neg_inf
        for a in self.model.actions:
            self._check_deadline()
            q = self.regress(v, a)
            for y, lo, hi in a.params:
                q = self.continuous_max(q, y, lo, hi, a)
            if self.opts.policy:
                name = a.name
                q = s.map_leaves(q, lambda n, _name=name: n if n.value == NEG_INF else
                                 s.leaf(n.value, (_name, n.annotation[1] if n.annotation else ())))
            else:
                q = s.strip_annotations(q)
            qs[a.name] = q
            best = s.max(best, q)
            best = self.linearize(best)
            best = self.prune(best)
        best = self.prune(best, redundancy=True)
        return best, qs

    def solve(self, horizon: Optional[int] = None) -> SolveResult:
        s = self.store
        self._deadline = None if self.opts.time_limit is None else time.perf_counter() + self.opts.time_limit
        prev = s.reorder_hook
        if self.opts.prune != "none":
            s.reorder_hook = self._prune_reordered
        try:
            return self._solve(horizon)
        finally:
            s.reorder_hook = prev

    def _check_deadline(self):
        if self._deadline is not None and time.perf_counter() > self._deadline:
            raise TimeLimitExceeded(f"time limit of {self.opts.time_limit:g} s exceeded")

    def _solve(self, horizon: Optional[int]) -> SolveResult:
        m = self.model
        s = self.store
        H = m.horizon if horizon is None else horizon
        if H < 0:
            raise ValueError("horizon must be >= 0")
        if self.opts.v0 == "reward":
            v0 = m.reward
            if v0 is None or any(is_primed(x) or x in m.param_box() for x in s.variables(v0)):
                raise SdpError("V0 = R needs a reward over current state only")
        else:
            v0 = s.zero
        res = SolveResult(m, [v0], [None], [{}], [],
                          param_order={a.name: a.param_names for a in m.actions if a.params},
                          options=self.opts)
        v = v0
        for h in range(1, H + 1):
            t0 = time.perf_counter()
            s.start_budget(self.opts.budget)
            lp0, roots0 = self.stats.lp_calls, self.stats.irrational_roots
            removed0 = self.stats.nodes_removed + self.stats.redundant_removed
            try:
                pol, qs = self.backup(v, h)
                nv = s.strip_annotations(pol)
            except (BudgetExceeded, TimeLimitExceeded) as e:
                s.start_budget(None)
                res.aborted = True
                res.abort_reason = f"iteration {h}: {e}"
                log.warning("aborting: %s", res.abort_reason)
                break
            allocated = s.allocated
            s.start_budget(None)
            ms = (time.perf_counter() - t0) * 1000
            res.values.append(nv)
            res.policies.append(pol)
            res.q.append(qs)
            res.stats.append(IterationStats(
                h=h, action_count=len(m.actions), v_nodes=s.node_count(nv), v_paths=s.path_count(nv),
                pruned_nodes=self.stats.nodes_removed + self.stats.redundant_removed - removed0,
                ms=ms, q_nodes={k: s.node_count(q) for k, q in qs.items()},
                allocated=allocated, lp_calls=self.stats.lp_calls - lp0,
                irrational_roots=self.stats.irrational_roots - roots0))
            log.info("h=%d nodes=%d paths=%d %.0f ms", h, res.stats[-1].v_nodes,
                     res.stats[-1].v_paths, ms)
            if self.opts.early_stop and self.same_function(nv, v):
                res.converged_at = h
                break
            v = nv
        return res

    def same_function(self, f: Node, g: Node) -> bool:
        """Structural identity, else agreement on a grid over the state box."""
        if f is g:
            return True
        pts = state_grid(self.model, self.opts.convergence_points)
        s = self.store
        for rho in pts:
            a, b = s.evaluate(f, rho), s.evaluate(g, rho)
            if a == b:
                continue
            if isinstance(a, float) or isinstance(b, float):
                return False
            if abs(a - b) > self.opts.convergence_tol:
                return False
        return True


def state_grid(model: HmdpModel, n_points: int = 1000) -> List[Dict]:
    """Evenly spaced states (per boolean assignment) with about `n_points` in total."""
    conts = list(model.cont_vars.items())
    nb = len(model.bool_vars)
    per_block = max(1, n_points // (2 ** nb))
    k = max(2, int(round(per_block ** (1 / max(1, len(conts)))))) if conts else 1
    axes = []
    for x, (lo, hi) in conts:
        axes.append([(x, lo + (hi - lo) * Fraction(i, k - 1)) for i in range(k)] if k > 1 else [(x, lo)])
    out = []
    for bools in itertools.product([True, False], repeat=nb):
        for combo in itertools.product(*axes) if axes else [()]:
            rho = dict(zip(model.bool_vars, bools))
            rho.update(combo)
            out.append(rho)
    return out


def value_iteration(model: HmdpModel, horizon: Optional[int] = None,
                    options: Optional[SolveOptions] = None, **kw) -> SolveResult:
    if options is None:
        options = SolveOptions(**kw)
    return Solver(model, options).solve(horizon)


def extract_policy(result: SolveResult, h: int, state: Mapping) -> Tuple[Optional[str], Dict[str, Fraction]]:
    """Optimal (action, parameter values) at `state` for horizon `h`."""
    if h < 1 or h >= len(result.policies):
        raise ValueError(f"horizon {h} not solved")
    if result.options is not None and not result.options.policy:
        raise ValueError("solved without policy tracking")
    s = result.store
    leaf = s.evaluate_leaf(result.policies[h], state)
    if leaf.value == NEG_INF or not leaf.annotation:
        return None, {}
    action, params = leaf.annotation
    return action, {p: e.eval(state) for p, e in params}
