"""Hybrid MDP models: construction from the domain AST, validation, discretization."""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

from ..expr import BoolDec, Polynomial, VarKind, VarRegistry, is_primed, prime_name
from ..linear import constraint_from_poly, fm_feasible
from ..xadd import Node, XaddStore
from .parser import (
    And,
    BinOp,
    BoolConst,
    BoolVar,
    Case,
    Compare,
    DomainError,
    DomainFile,
    Inf,
    Neg,
    Not,
    Num,
    Or,
    Pow,
    ActionDecl,
    VarRef,
    expr_variables,
    parse_domain_file,
    substitute_expr,
)

log = logging.getLogger(__name__)

Bounds = Tuple[Fraction, Fraction]


class ValidationError(DomainError):
    pass


@dataclass
class ActionSchema:
    name: str
    params: Tuple[Tuple[str, Fraction, Fraction], ...]
    cpfs: Dict[str, Node]          # primed boolean -> P(b' = true)
    transitions: Dict[str, Node]   # primed continuous -> next-state value
    reward: Optional[Node] = None  # overrides the model reward when set

    @property
    def param_names(self) -> List[str]:
        return [p for p, _, _ in self.params]

    @property
    def is_discrete(self) -> bool:
        return not self.params


@dataclass
class HmdpModel:
    store: XaddStore
    registry: VarRegistry
    bool_vars: List[str]
    cont_vars: Dict[str, Bounds]
    actions: List[ActionSchema]
    reward: Optional[Node]
    discount: Fraction = Fraction(1)
    horizon: int = 1
    name: str = "model"
    source: Optional[DomainFile] = None   # parsed form, used by discretize_actions

    def reward_for(self, action: ActionSchema) -> Node:
        if action.reward is not None:
            return action.reward
        if self.reward is None:
            raise ValidationError(f"action {action.name} has no reward and the model none")
        return self.reward

    def action(self, name: str) -> ActionSchema:
        for a in self.actions:
            if a.name == name:
                return a
        raise KeyError(name)

    def param_box(self, action: Optional[ActionSchema] = None) -> Dict[str, Bounds]:
        acts = [action] if action is not None else self.actions
        box: Dict[str, Bounds] = {}
        for a in acts:
            for p, lo, hi in a.params:
                if p in box:
                    plo, phi = box[p]
                    box[p] = (min(lo, plo), max(hi, phi))
                else:
                    box[p] = (lo, hi)
        return box

    @property
    def state_vars(self) -> List[str]:
        return list(self.bool_vars) + list(self.cont_vars)


# -- compilation --------------------------------------------------------------

class Compiler:
    """Turns expression/condition ASTs into XADDs in one store."""

    def __init__(self, store: XaddStore, bools: Sequence[str], conts: Sequence[str],
                 box: Mapping[str, Bounds]):
        self.store = store
        self.bools = set(bools)
        self.conts = set(conts)
        self.box = dict(box)
        self.scope: set = set()
        self.overlap_checks = 0

    def poly(self, e) -> Polynomial:
        if isinstance(e, Num):
            return Polynomial.const(e.value)
        if isinstance(e, VarRef):
            self._check_var(e.name)
            return Polynomial.var(e.name)
        if isinstance(e, BinOp):
            a, b = self.poly(e.left), self.poly(e.right)
            if e.op == "+":
                return a + b
            if e.op == "-":
                return a - b
            if e.op == "*":
                return a * b
            if not b.is_constant() or b.constant() == 0:
                raise ValidationError("division only by non-zero constants")
            return a.scale(1 / b.constant())
        if isinstance(e, Neg):
            return -self.poly(e.arg)
        if isinstance(e, Pow):
            return self.poly(e.base) ** e.exponent
        raise ValidationError(f"{type(e).__name__} not allowed inside a comparison")

    def _check_var(self, name: str):
        if name in self.bools:
            raise ValidationError(f"boolean variable {name!r} used as a number")
        if name not in self.scope:
            raise ValidationError(f"unbound variable {name!r}")

    def value(self, e) -> Node:
        s = self.store
        if isinstance(e, (Num, VarRef, Pow)):
            return s.leaf(self.poly(e))
        if isinstance(e, Inf):
            return s.neg_inf if e.negative else s.pos_inf
        if isinstance(e, Neg):
            return s.negate(self.value(e.arg))
        if isinstance(e, BinOp):
            if e.op == "/":
                d = self.poly(e.right)
                if not d.is_constant() or d.constant() == 0:
                    raise ValidationError("division only by non-zero constants")
                return s.scale(self.value(e.left), 1 / d.constant())
            a, b = self.value(e.left), self.value(e.right)
            if e.op == "+":
                return s.add(a, b)
            if e.op == "-":
                return s.sub(a, b)
            return s.mul(a, b)
        if isinstance(e, Case):
            return self.case(e)
        raise TypeError(e)

    def case(self, c: Case) -> Node:
        s = self.store
        self.check_overlap(c)
        acc = s.neg_inf
        if any(cond is None for cond, _ in c.branches[:-1]):
            raise ValidationError("'otherwise' must be the last case branch")
        for cond, val in reversed(c.branches):
            v = self.value(val)
            if cond is None:
                acc = v
            else:
                acc = self.cond_ite(cond, v, acc)
        return s.reorder(acc)

    def cond_ite(self, c, high: Node, low: Node) -> Node:
        """Diagram equal to `high` where `c` holds and `low` elsewhere (unordered)."""
        s = self.store
        if isinstance(c, BoolConst):
            return high if c.value else low
        if isinstance(c, BoolVar):
            if c.name not in self.scope:
                raise ValidationError(f"unbound variable {c.name!r}")
            return s.get_node(BoolDec(c.name), high, low)
        if isinstance(c, Not):
            return self.cond_ite(c.arg, low, high)
        if isinstance(c, And):
            acc = high
            for a in reversed(c.args):
                acc = self.cond_ite(a, acc, low)
            return acc
        if isinstance(c, Or):
            acc = low
            for a in reversed(c.args):
                acc = self.cond_ite(a, high, acc)
            return acc
        if isinstance(c, Compare):
            acc = high
            pairs = list(zip(c.exprs, c.ops, c.exprs[1:]))
            for l, op, r in reversed(pairs):
                acc = self._cmp_ite(self.poly(l), op, self.poly(r), acc, low)
            return acc
        raise TypeError(c)

    def _cmp_ite(self, l: Polynomial, op: str, r: Polynomial, high: Node, low: Node) -> Node:
        s = self.store
        d = l - r
        if d.is_constant():
            # decided outright; keep the strictness the author wrote
            c = d.constant()
            holds = {">=": c >= 0, ">": c > 0, "<=": c <= 0, "<": c < 0}[op]
            return high if holds else low
        # otherwise boundaries are immaterial under closed-region semantics
        if op in (">=", ">"):
            return s.ineq_node(l - r, high, low)
        return s.ineq_node(r - l, high, low)

    # -- overlap -----------------------------------------------------------------
    def dnf(self, c, positive: bool = True) -> List[List[tuple]]:
        """Disjunctive normal form; literals are ('b', var, val) or ('p', poly)."""
        if isinstance(c, BoolConst):
            return [[]] if c.value == positive else []
        if isinstance(c, BoolVar):
            return [[("b", c.name, positive)]]
        if isinstance(c, Not):
            return self.dnf(c.arg, not positive)
        if isinstance(c, Compare):
            lits = []
            for l, op, r in zip(c.exprs, c.ops, c.exprs[1:]):
                pl, pr = self.poly(l), self.poly(r)
                p = pl - pr if op in (">=", ">") else pr - pl
                lits.append(p)
            if positive:
                return [[("p", p) for p in lits]]
            return [[("p", -p)] for p in lits]
        conj = isinstance(c, And) == positive
        parts = [self.dnf(a, positive) for a in c.args]
        if conj:
            out = [[]]
            for p in parts:
                out = [a + b for a in out for b in p]
            return out
        return [t for p in parts for t in p]

    def interior_feasible(self, lits: Sequence[tuple]) -> bool:
        bools: Dict[str, bool] = {}
        cons = []
        vars_ = set()
        for lit in lits:
            if lit[0] == "b":
                if bools.setdefault(lit[1], lit[2]) != lit[2]:
                    return False
                continue
            p = lit[1]
            if not p.is_linear():
                continue  # conservative: ignore nonlinear atoms
            if p.is_constant():
                if p.constant() <= 0:
                    return False
                continue
            cons.append(constraint_from_poly(p, strict=True))
            vars_ |= p.variables()
        for v in vars_:
            b = self.box.get(v)
            if b is not None and b[0] < b[1]:
                x = Polynomial.var(v)
                cons.append(constraint_from_poly(x - b[0], strict=True))
                cons.append(constraint_from_poly(Polynomial.const(b[1]) - x, strict=True))
        return fm_feasible(cons)

    def check_overlap(self, c: Case):
        conds = [cond for cond, _ in c.branches if cond is not None]
        forms = [self.dnf(cond) for cond in conds]
        for i, j in itertools.combinations(range(len(conds)), 2):
            for ti in forms[i]:
                for tj in forms[j]:
                    self.overlap_checks += 1
                    if self.interior_feasible(ti + tj):
                        raise ValidationError(
                            f"overlapping case partitions: branch {i + 1} and branch {j + 1}")


# -- model construction ---------------------------------------------------------

def build_model(df: DomainFile, store: Optional[XaddStore] = None, name: str = "model",
                booleans_first: bool = True) -> HmdpModel:
    store = store or XaddStore(booleans_first=booleans_first)
    reg = VarRegistry()
    names = set()
    for b in df.bvariables:
        if b in names:
            raise ValidationError(f"duplicate variable {b!r}")
        names.add(b)
        reg.add_state(b, boolean=True)
    cont: Dict[str, Bounds] = {}
    for x, lo, hi in df.cvariables:
        if x in names:
            raise ValidationError(f"duplicate variable {x!r}")
        names.add(x)
        reg.add_state(x, boolean=False)
        cont[x] = (lo, hi)
    if not (0 <= df.discount <= 1):
        raise ValidationError(f"discount {df.discount} outside [0, 1]")
    if df.horizon < 1:
        raise ValidationError("horizon must be >= 1")
    bools = list(df.bvariables)
    primed_b = [prime_name(b) for b in bools]
    primed_x = [prime_name(x) for x in cont]
    box: Dict[str, Bounds] = dict(cont)
    box.update({prime_name(x): b for x, b in cont.items()})
    for a in df.actions:
        for p in a.params:
            box.setdefault(p.name, (p.lo, p.hi))
    comp = Compiler(store, bools + primed_b, list(cont) + primed_x, box)

    reward = None
    if df.reward is not None:
        params_all = {p.name for a in df.actions for p in a.params}
        comp.scope = set(bools) | set(primed_b) | set(cont) | set(primed_x) | params_all
        reward = comp.value(df.reward)

    actions: List[ActionSchema] = []
    seen_actions = set()
    for a in df.actions:
        if a.name in seen_actions:
            raise ValidationError(f"duplicate action {a.name!r}")
        seen_actions.add(a.name)
        params = []
        for p in a.params:
            if p.name in names:
                raise ValidationError(f"parameter {p.name!r} shadows a state variable")
            if p.lo > p.hi:
                raise ValidationError(f"empty bounds for parameter {p.name!r}")
            reg.add(p.name, VarKind.ACTION_PARAM) if p.name not in reg else None
            params.append((p.name, p.lo, p.hi))
        pnames = {p.name for p in a.params}
        # transitions and CPFs see current state and this action's parameters
        comp.scope = set(bools) | set(cont) | pnames
        trans: Dict[str, Node] = {}
        for var, e in a.transitions:
            if var not in primed_x:
                raise ValidationError(f"transition for unknown continuous variable {var!r}")
            if var in trans:
                raise ValidationError(f"duplicate transition for {var!r}")
            trans[var] = comp.value(e)
        cpfs: Dict[str, Node] = {}
        for var, e in a.cpfs:
            if var not in primed_b:
                raise ValidationError(f"cpf for unknown boolean variable {var!r}")
            if var in cpfs:
                raise ValidationError(f"duplicate cpf for {var!r}")
            cpfs[var] = comp.value(e)
        areward = None
        if a.reward is not None:
            comp.scope = set(bools) | set(primed_b) | set(cont) | set(primed_x) | pnames
            areward = comp.value(a.reward)
        actions.append(ActionSchema(a.name, tuple(params), cpfs, trans, areward))
    if not actions:
        raise ValidationError("model has no actions")

    m = HmdpModel(store, reg, bools, cont, actions, reward, df.discount, df.horizon, name, df)
    validate(m)
    return m


def parse_domain(text: str, name: str = "model", store: Optional[XaddStore] = None,
                 booleans_first: bool = True) -> HmdpModel:
    return build_model(parse_domain_file(text), store=store, name=name,
                       booleans_first=booleans_first)


# -- validation ----------------------------------------------------------------

def _path_interior_feasible(path, box: Mapping[str, Bounds]) -> bool:
    bools: Dict[str, bool] = {}
    cons = []
    vars_ = set()
    for dec, branch in path:
        if isinstance(dec, BoolDec):
            if bools.setdefault(dec.var, branch) != branch:
                return False
            continue
        p = dec.poly if branch else -dec.poly
        if not p.is_linear():
            continue
        cons.append(constraint_from_poly(p, strict=True))
        vars_ |= p.variables()
    for v in vars_:
        b = box.get(v)
        if b is not None and b[0] < b[1]:
            x = Polynomial.var(v)
            cons.append(constraint_from_poly(x - b[0], strict=True))
            cons.append(constraint_from_poly(Polynomial.const(b[1]) - x, strict=True))
    return fm_feasible(cons)


def validate(m: HmdpModel):
    store = m.store
    primed_x = {prime_name(x) for x in m.cont_vars}
    primed_b = {prime_name(b) for b in m.bool_vars}
    for a in m.actions:
        box = dict(m.cont_vars)
        box.update({p: (lo, hi) for p, lo, hi in a.params})
        for xp in primed_x:
            if xp not in a.transitions:
                raise ValidationError(f"action {a.name}: no transition for {xp}")
        for bp in primed_b:
            if bp not in a.cpfs:
                raise ValidationError(f"action {a.name}: no cpf for {bp}")
        for xp, t in a.transitions.items():
            bad = {v for v in store.variables(t) if is_primed(v)}
            if bad:
                raise ValidationError(
                    f"action {a.name}: transition for {xp} mentions primed variable(s) {sorted(bad)}")
            for path, leaf in store.iter_paths(t):
                if isinstance(leaf.value, float) and _path_interior_feasible(path, box):
                    raise ValidationError(f"action {a.name}: transition for {xp} is undefined on a region")
        for bp, cpf in a.cpfs.items():
            bad = {v for v in store.variables(cpf) if is_primed(v)}
            if bad:
                raise ValidationError(f"action {a.name}: cpf for {bp} mentions primed variable(s) {sorted(bad)}")
            for path, leaf in store.iter_paths(cpf):
                if not _path_interior_feasible(path, box):
                    continue
                v = leaf.value
                if isinstance(v, float) or not v.is_constant():
                    raise ValidationError(
                        f"action {a.name}: cpf for {bp} has non-probability leaf {v}")
                if not (0 <= v.constant() <= 1):
                    raise ValidationError(
                        f"action {a.name}: cpf for {bp} has probability {v} outside [0, 1]")
        r = m.reward_for(a)
        allowed = set(m.bool_vars) | set(m.cont_vars) | primed_x | primed_b | set(a.param_names)
        extra = store.variables(r) - allowed
        if extra:
            raise ValidationError(f"action {a.name}: reward mentions unknown variable(s) {sorted(extra)}")


# -- discretization -----------------------------------------------------------------

def grid_values(lo: Fraction, hi: Fraction, n: int) -> List[Fraction]:
    if n < 2:
        raise ValueError("discretization needs n >= 2")
    return [lo + k * (hi - lo) / (n - 1) for k in range(n)]


def _fmt(v: Fraction) -> str:
    from ..expr import render_number

    return render_number(v)


def _grid(a: ActionSchema, n: int):
    grids = [grid_values(lo, hi, n) for _, lo, hi in a.params]
    for combo in itertools.product(*grids):
        values = {p: v for (p, _, _), v in zip(a.params, combo)}
        label = ";".join(f"{p}={_fmt(v)}" for p, v in values.items())
        yield values, f"{a.name}[{label}]"


def discretize_actions(m: HmdpModel, n: int) -> HmdpModel:
    """Replace each parameterized action by `n` grid points per parameter.

    Models that came from a domain file are discretized on the parsed form
    and recompiled, so a comparison such as ``y > 10`` at ``y = 10`` is
    decided with its written strictness.  Grid points sit on the parameter
    bounds, exactly where that matters.
    """
    if n < 2:
        raise ValueError("discretization needs n >= 2")
    if all(a.is_discrete for a in m.actions):
        raise ValidationError("model has no parameterized actions to discretize")
    if m.source is not None:
        return _discretize_source(m, n)
    store = m.store
    out: List[ActionSchema] = []
    for a in m.actions:
        if a.is_discrete:
            out.append(a)
            continue
        for values, name in _grid(a, n):
            sigma = {p: Polynomial.const(v) for p, v in values.items()}
            out.append(ActionSchema(
                name=name,
                params=(),
                cpfs={k: store.substitute(v, sigma) for k, v in a.cpfs.items()},
                transitions={k: store.substitute(v, sigma) for k, v in a.transitions.items()},
                reward=store.substitute(m.reward_for(a), sigma),
            ))
    return replace(m, actions=out, name=f"{m.name}-d{n}")


def _discretize_source(m: HmdpModel, n: int) -> HmdpModel:
    df = m.source
    decls = {a.name: a for a in df.actions}
    out: List[ActionDecl] = []
    for a in m.actions:
        decl = decls[a.name]
        if a.is_discrete:
            out.append(decl)
            continue
        reward = decl.reward if decl.reward is not None else df.reward
        for values, name in _grid(a, n):
            out.append(ActionDecl(
                name=name,
                params=(),
                transitions=tuple((v, substitute_expr(e, values)) for v, e in decl.transitions),
                cpfs=tuple((v, substitute_expr(e, values)) for v, e in decl.cpfs),
                reward=substitute_expr(reward, values),
            ))
    # a shared reward that mentions parameters has no meaning once they are gone
    params = {p.name for d in df.actions for p in d.params}
    shared = df.reward if df.reward is not None and not (expr_variables(df.reward) & params) else None
    new = replace(df, actions=tuple(out), reward=shared)
    return build_model(new, store=m.store, name=f"{m.name}-d{n}")
