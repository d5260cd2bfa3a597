"""Hash-consed extended algebraic decision diagrams (XADDs).

An :class:`XaddStore` owns every node it creates.  Internal nodes test a
:class:`~symsdp.expr.BoolDec` or an :class:`~symsdp.expr.IneqDec` (``p >= 0``)
and terminals hold a polynomial or an infinity, optionally annotated with the
action/parameter choice that produced them.

Regions are treated as closed: the high branch of ``p >= 0`` covers ``p >= 0``
and the low branch covers ``p <= 0``.  :meth:`XaddStore.evaluate` therefore
explores both branches when ``p == 0`` exactly and returns the larger value.
Away from decision boundaries this is ordinary top-down evaluation.
"""
from __future__ import annotations

import enum
import logging
import sys
from fractions import Fraction
from typing import Callable, Dict, Iterator, List, Mapping, Optional, Tuple, Union

from .expr import (
    ONE,
    ZERO,
    BoolDec,
    Decision,
    IneqDec,
    Polynomial,
    normalize_ineq,
    render_number,
)

log = logging.getLogger(__name__)

sys.setrecursionlimit(max(sys.getrecursionlimit(), 20000))

POS_INF = float("inf")
NEG_INF = float("-inf")

Value = Union[Polynomial, float]
# (action name or None, ((param name, maximizer polynomial), ...))
Annotation = Tuple[Optional[str], Tuple[Tuple[str, Polynomial], ...]]


class Op(enum.Enum):
    ADD = "+"
    SUB = "-"
    MUL = "*"
    MAX = "max"
    MIN = "min"
    # weight product: like MUL, but a zero weight annihilates infinities and a
    # unit weight keeps the other operand's annotation
    MASK = "mask"


COMMUTATIVE = {Op.ADD, Op.MUL, Op.MAX, Op.MIN}


class XaddError(Exception):
    pass


class ForeignNodeError(XaddError):
    pass


class UndefinedArithmetic(XaddError):
    """0 * inf, inf - inf and similar."""


class BudgetExceeded(XaddError):
    def __init__(self, allocated: int, budget: int):
        super().__init__(f"node budget exceeded: {allocated} > {budget}")
        self.allocated = allocated
        self.budget = budget


class Node:
    __slots__ = ("id", "store", "dec", "high", "low", "value", "annotation", "raw", "__weakref__")

    def __init__(self, id_, store, dec=None, high=None, low=None, value=None, annotation=None, raw=False):
        self.id = id_
        self.store = store
        self.dec = dec
        self.high = high
        self.low = low
        self.value = value
        self.annotation = annotation
        self.raw = raw

    @property
    def is_leaf(self) -> bool:
        return self.dec is None

    def __repr__(self):
        if self.dec is None:
            return f"<leaf #{self.id} {render_value(self.value)}>"
        return f"<node #{self.id} [{self.dec}] hi=#{self.high.id} lo=#{self.low.id}>"


def render_value(v: Value) -> str:
    if v == POS_INF:
        return "inf"
    if v == NEG_INF:
        return "-inf"
    return str(v)


def render_annotation(ann: Optional[Annotation]) -> str:
    if not ann:
        return ""
    action, params = ann
    bits = []
    if action is not None:
        bits.append(action)
    bits.extend(f"{p} = {e}" for p, e in params)
    return "; ".join(bits)


def _is_inf(v) -> bool:
    return isinstance(v, float)


class XaddStore:
    """Append-only store of hash-consed XADD nodes with operation caches."""

    def __init__(self, booleans_first: bool = False):
        self.booleans_first = booleans_first
        self.nodes: List[Node] = []
        self.node_cache: Dict[tuple, Node] = {}
        self.leaf_cache: Dict[tuple, Node] = {}
        self.apply_cache: Dict[tuple, Node] = {}
        self.reduce_cache: Dict[Node, Node] = {}
        self.reorder_cache: Dict[Node, Node] = {}
        # optional sound simplifier applied to every reordered sub-result;
        # a solver installs consistency pruning here to keep intermediates small
        self.reorder_hook: Optional[Callable[[Node], Node]] = None
        self._ordered: Dict[Node, bool] = {}
        self._inf_flags: Dict[Node, Tuple[bool, bool]] = {}
        self.decisions: List[Decision] = []
        self.decision_index: Dict[Decision, int] = {}
        self._order_key: Dict[Decision, tuple] = {}
        self.budget: Optional[int] = None
        self.allocated = 0
        self.zero = self.leaf(ZERO)
        self.one = self.leaf(ONE)
        self.neg_inf = self.leaf(NEG_INF)
        self.pos_inf = self.leaf(POS_INF)

    # -- bookkeeping ----------------------------------------------------
    def _check(self, *nodes: Node):
        for n in nodes:
            if not isinstance(n, Node) or n.store is not self:
                raise ForeignNodeError(f"{n!r} does not belong to this store")

    def _alloc(self, **kw) -> Node:
        n = Node(len(self.nodes), self, **kw)
        self.nodes.append(n)
        self.allocated += 1
        if self.budget is not None and self.allocated > self.budget:
            raise BudgetExceeded(self.allocated, self.budget)
        return n

    def start_budget(self, budget: Optional[int]):
        """Reset the allocation counter; allocations beyond `budget` raise."""
        self.budget = budget
        self.allocated = 0

    def register(self, dec: Decision) -> int:
        idx = self.decision_index.get(dec)
        if idx is None:
            if isinstance(dec, IneqDec) and dec.poly.is_constant():
                raise ValueError("constant inequality cannot be a decision")
            idx = len(self.decisions)
            self.decisions.append(dec)
            self.decision_index[dec] = idx
            group = 0 if (self.booleans_first and isinstance(dec, BoolDec)) else 1
            self._order_key[dec] = (group, idx)
        return idx

    def order(self, dec: Decision) -> tuple:
        key = self._order_key.get(dec)
        if key is None:
            self.register(dec)
            key = self._order_key[dec]
        return key

    # -- construction ---------------------------------------------------
    def leaf(self, value, annotation: Optional[Annotation] = None) -> Node:
        if not isinstance(value, (Polynomial, float)):
            value = Polynomial.const(value)
        if isinstance(value, float) and value not in (POS_INF, NEG_INF):
            value = Polynomial.const(value)
        key = (value, annotation)
        n = self.leaf_cache.get(key)
        if n is None:
            n = self._alloc(value=value, annotation=annotation)
            self.leaf_cache[key] = n
        return n

    def get_node(self, dec: Decision, high: Node, low: Node) -> Node:
        self._check(high, low)
        if high is low:
            return low
        self.register(dec)
        key = (dec, high, low)
        n = self.node_cache.get(key)
        if n is None:
            n = self._alloc(dec=dec, high=high, low=low)
            self.node_cache[key] = n
        return n

    def make_raw(self, dec: Decision, high: Node, low: Node) -> Node:
        """Unreduced internal node bypassing hash-consing (input to :meth:`reduce`)."""
        self._check(high, low)
        self.register(dec)
        return self._alloc(dec=dec, high=high, low=low, raw=True)

    def ineq_node(self, p: Polynomial, high: Node, low: Node) -> Node:
        """Node for ``p >= 0`` after normalization; may be out of order."""
        dec, flipped = normalize_ineq(p)
        if isinstance(dec, bool):
            return high if dec else low
        if flipped:
            high, low = low, high
        return self.get_node(dec, high, low)

    def indicator(self, dec: Decision, positive: bool = True) -> Node:
        if positive:
            return self.get_node(dec, self.one, self.zero)
        return self.get_node(dec, self.zero, self.one)

    def ite(self, dec: Decision, high: Node, low: Node) -> Node:
        """Ordered ``if dec then high else low``."""
        return self.reorder(self.get_node(dec, high, low))

    def bool_node(self, var: str, high: Node, low: Node) -> Node:
        return self.ite(BoolDec(var), high, low)

    # -- reduce -----------------------------------------------------------
    def reduce(self, root: Node) -> Node:
        self._check(root)
        return self._reduce(root)

    def _reduce(self, f: Node) -> Node:
        if f.is_leaf:
            return self.leaf(f.value, f.annotation)
        r = self.reduce_cache.get(f)
        if r is None:
            r = self.get_node(f.dec, self._reduce(f.high), self._reduce(f.low))
            self.reduce_cache[f] = r
        return r

    # -- ordering -----------------------------------------------------------
    def is_ordered(self, f: Node) -> bool:
        if f.is_leaf:
            return True
        cached = self._ordered.get(f)
        if cached is not None:
            return cached
        k = self.order(f.dec)
        ok = True
        for c in (f.high, f.low):
            if not c.is_leaf and self.order(c.dec) <= k:
                ok = False
                break
        ok = ok and self.is_ordered(f.high) and self.is_ordered(f.low)
        self._ordered[f] = ok
        return ok

    def reorder(self, f: Node) -> Node:
        """Restore decision order by indicator products and sums."""
        self._check(f)
        return self._reorder(f)

    def _reorder(self, f: Node) -> Node:
        if f.is_leaf or self.is_ordered(f):
            return f
        r = self.reorder_cache.get(f)
        if r is not None:
            return r
        h = self._reorder(f.high)
        l = self._reorder(f.low)
        t = self._apply(h, self.indicator(f.dec, True), Op.MASK)
        e = self._apply(l, self.indicator(f.dec, False), Op.MASK)
        r = self._apply(t, e, Op.ADD)
        if self.reorder_hook is not None:
            r = self.reorder_hook(r)
        self.reorder_cache[f] = r
        return r

    # -- apply ----------------------------------------------------------------
    def apply(self, f: Node, g: Node, op: Op) -> Node:
        self._check(f, g)
        r = self._apply(f, g, op)
        if op in (Op.MAX, Op.MIN):
            # comparison decisions are created out of order at the leaves
            r = self._reorder(r)
        return r

    def _apply(self, f: Node, g: Node, op: Op) -> Node:
        if op in COMMUTATIVE and g.id < f.id:
            f, g = g, f
        key = (op, f.id, g.id)
        r = self.apply_cache.get(key)
        if r is not None:
            return r
        r = self._terminal(f, g, op)
        if r is None:
            if f.is_leaf:
                dec = g.dec
            elif g.is_leaf:
                dec = f.dec
            else:
                dec = f.dec if self.order(f.dec) <= self.order(g.dec) else g.dec
            if not f.is_leaf and f.dec == dec:
                fh, fl = f.high, f.low
            else:
                fh = fl = f
            if not g.is_leaf and g.dec == dec:
                gh, gl = g.high, g.low
            else:
                gh = gl = g
            r = self.get_node(dec, self._apply(fh, gh, op), self._apply(fl, gl, op))
        self.apply_cache[key] = r
        return r

    def _terminal(self, f: Node, g: Node, op: Op) -> Optional[Node]:
        """Table-driven shortcuts; returns None when recursion is needed."""
        fl, gl = f.is_leaf, g.is_leaf
        fv = f.value if fl else None
        gv = g.value if gl else None
        if op is Op.ADD:
            if fl and gl and fv == ZERO and gv == ZERO:
                return f if f.annotation is not None else g
            # only an unannotated zero is an identity; an annotated one must
            # reach the leaves so its annotation survives
            if fl and fv == ZERO and f.annotation is None:
                return g
            if gl and gv == ZERO and g.annotation is None:
                return f
            if fl and gl:
                return self.leaf(_add_values(fv, gv))
            if fl and _is_inf(fv):
                pos, neg = self._infs(g)
                if (fv == NEG_INF and not pos) or (fv == POS_INF and not neg):
                    return f
            if gl and _is_inf(gv):
                pos, neg = self._infs(f)
                if (gv == NEG_INF and not pos) or (gv == POS_INF and not neg):
                    return g
            return None
        if op is Op.SUB:
            if gl and gv == ZERO:
                return f
            if fl and gl:
                if _is_inf(fv) and _is_inf(gv):
                    if fv == gv:
                        raise UndefinedArithmetic("inf - inf")
                    return f
                if _is_inf(fv):
                    return f
                if _is_inf(gv):
                    return self.leaf(-gv)
                return self.leaf(fv - gv)
            return None
        if op is Op.MASK:
            # g is the weight
            if gl:
                if gv == ZERO:
                    return self.zero
                if gv == ONE:
                    return f
                if fl:
                    return self.leaf(_mul_values(fv, gv))
            if fl and fv == ZERO and f.annotation is None:
                return self.zero
            return None
        if op is Op.MUL:
            if fl and fv == ONE:
                return g
            if gl and gv == ONE:
                return f
            if fl and fv == ZERO and self._all_finite(g):
                return self.zero
            if gl and gv == ZERO and self._all_finite(f):
                return self.zero
            if fl and gl:
                return self.leaf(_mul_values(fv, gv))
            return None
        if op in (Op.MAX, Op.MIN):
            big = op is Op.MAX
            absorb, neutral = (POS_INF, NEG_INF) if big else (NEG_INF, POS_INF)
            if fl and fv == absorb:
                return f
            if gl and gv == absorb:
                return g
            if fl and fv == neutral:
                return g
            if gl and gv == neutral:
                return f
            if f is g:
                return f
            if fl and gl:
                if fv == gv:
                    return f if f.annotation is not None or g.annotation is None else g
                diff = fv - gv
                if diff.is_constant():
                    first = diff.constant() >= 0
                    return f if first == big else g
                return self.ineq_node(diff, f, g) if big else self.ineq_node(diff, g, f)
            return None
        raise ValueError(op)

    def _infs(self, f: Node) -> Tuple[bool, bool]:
        """(has +inf leaf, has -inf leaf), memoized per node."""
        r = self._inf_flags.get(f)
        if r is None:
            if f.is_leaf:
                r = (f.value == POS_INF, f.value == NEG_INF)
            else:
                a, b = self._infs(f.high), self._infs(f.low)
                r = (a[0] or b[0], a[1] or b[1])
            self._inf_flags[f] = r
        return r

    def _all_finite(self, f: Node) -> bool:
        return not any(self._infs(f))

    # convenience wrappers
    def add(self, f, g):
        return self.apply(f, g, Op.ADD)

    def sub(self, f, g):
        return self.apply(f, g, Op.SUB)

    def mul(self, f, g):
        return self.apply(f, g, Op.MUL)

    def max(self, f, g):
        return self.apply(f, g, Op.MAX)

    def min(self, f, g):
        return self.apply(f, g, Op.MIN)

    def mask(self, f, w):
        return self.apply(f, w, Op.MASK)

    # -- unary --------------------------------------------------------------
    def map_leaves(self, f: Node, fn: Callable[[Node], Node]) -> Node:
        """Rebuild `f` with each terminal replaced by ``fn(terminal)``.

        ``fn`` must return terminals (or diagrams whose decisions come after
        the replaced position; otherwise call :meth:`reorder`).
        """
        self._check(f)
        memo: Dict[Node, Node] = {}

        def rec(n: Node) -> Node:
            r = memo.get(n)
            if r is None:
                if n.is_leaf:
                    r = fn(n)
                else:
                    r = self.get_node(n.dec, rec(n.high), rec(n.low))
                memo[n] = r
            return r

        return rec(f)

    def scale(self, f: Node, c) -> Node:
        c = Fraction(c) if not isinstance(c, Fraction) else c
        if c == 1:
            return f
        if c == 0:
            if not self._all_finite(f):
                raise UndefinedArithmetic("scale(0) of a diagram with infinite leaves")
            return self.zero

        def fn(n: Node) -> Node:
            v = n.value
            if _is_inf(v):
                return self.leaf(v if c > 0 else -v)
            return self.leaf(v.scale(c))

        return self.map_leaves(f, fn)

    def negate(self, f: Node) -> Node:
        return self.scale(f, -1)

    def strip_annotations(self, f: Node) -> Node:
        return self.map_leaves(f, lambda n: self.leaf(n.value) if n.annotation else n)

    def annotate(self, f: Node, fn: Callable[[Node], Optional[Annotation]]) -> Node:
        return self.map_leaves(f, lambda n: self.leaf(n.value, fn(n)))

    # -- substitution / restriction ------------------------------------------
    def substitute(self, f: Node, sigma: Mapping[str, Polynomial],
                   bool_rename: Optional[Mapping[str, str]] = None) -> Node:
        """Apply `sigma` to every leaf, inequality and annotation; rename booleans."""
        self._check(f)
        sigma = dict(sigma)
        bool_rename = dict(bool_rename or {})
        if not sigma and not bool_rename:
            return f
        memo: Dict[Node, Node] = {}
        svars = set(sigma)
        # register image decisions in source order: the build below is bottom-up,
        # and fresh images registered children-first would come out reversed
        decs = sorted({n.dec for n in self.reachable(f) if not n.is_leaf}, key=self.order)
        for d in decs:
            if isinstance(d, BoolDec):
                if d.var in bool_rename:
                    self.register(BoolDec(bool_rename[d.var]))
            elif d.poly.variables() & svars:
                img, _ = normalize_ineq(d.poly.substitute(sigma))
                if not isinstance(img, bool):
                    self.register(img)

        def sub_ann(ann):
            if not ann:
                return ann
            action, params = ann
            return (action, tuple((p, e.substitute(sigma)) for p, e in params))

        def rec(n: Node) -> Node:
            r = memo.get(n)
            if r is not None:
                return r
            if n.is_leaf:
                v = n.value
                if not _is_inf(v):
                    v = v.substitute(sigma)
                r = self.leaf(v, sub_ann(n.annotation))
            else:
                h, l = rec(n.high), rec(n.low)
                d = n.dec
                if isinstance(d, BoolDec):
                    r = self.get_node(BoolDec(bool_rename.get(d.var, d.var)), h, l)
                elif d.poly.variables() & svars:
                    r = self.ineq_node(d.poly.substitute(sigma), h, l)
                else:
                    r = self.get_node(d, h, l)
            memo[n] = r
            return r

        return self._reorder(rec(f))

    def restrict(self, f: Node, var: str, value: bool) -> Node:
        self._check(f)
        memo: Dict[Node, Node] = {}
        target = BoolDec(var)

        def rec(n: Node) -> Node:
            if n.is_leaf:
                return n
            r = memo.get(n)
            if r is None:
                if n.dec == target:
                    r = rec(n.high if value else n.low)
                else:
                    r = self.get_node(n.dec, rec(n.high), rec(n.low))
                memo[n] = r
            return r

        return rec(f)

    def marginalize_bool(self, f: Node, var: str) -> Node:
        return self.add(self.restrict(f, var, True), self.restrict(f, var, False))

    # -- inspection ------------------------------------------------------------
    def reachable(self, f: Node) -> List[Node]:
        """Nodes reachable from `f` in reverse postorder (parents before children)."""
        seen = set()
        order: List[Node] = []
        stack = [(f, False)]
        while stack:
            n, done = stack.pop()
            if done:
                order.append(n)
                continue
            if n.id in seen:
                continue
            seen.add(n.id)
            stack.append((n, True))
            if not n.is_leaf:
                # push low first so high is explored first
                stack.append((n.low, False))
                stack.append((n.high, False))
        order.reverse()
        return order

    def leaves(self, f: Node) -> List[Node]:
        return [n for n in self.reachable(f) if n.is_leaf]

    def node_count(self, f: Node) -> int:
        return len(self.reachable(f))

    def path_count(self, f: Node) -> int:
        memo: Dict[Node, int] = {}

        def rec(n):
            if n.is_leaf:
                return 1
            c = memo.get(n)
            if c is None:
                c = rec(n.high) + rec(n.low)
                memo[n] = c
            return c

        return rec(f)

    def variables(self, f: Node) -> frozenset:
        out = set()
        for n in self.reachable(f):
            if n.is_leaf:
                if not _is_inf(n.value):
                    out |= n.value.variables()
                if n.annotation:
                    for _, e in n.annotation[1]:
                        out |= e.variables()
            elif isinstance(n.dec, BoolDec):
                out.add(n.dec.var)
            else:
                out |= n.dec.poly.variables()
        return frozenset(out)

    def iter_paths(self, f: Node) -> Iterator[Tuple[Tuple[Tuple[Decision, bool], ...], Node]]:
        path: List[Tuple[Decision, bool]] = []

        def rec(n):
            if n.is_leaf:
                yield tuple(path), n
                return
            path.append((n.dec, True))
            yield from rec(n.high)
            path[-1] = (n.dec, False)
            yield from rec(n.low)
            path.pop()

        yield from rec(f)

    def export_paths(self, f: Node) -> List[Tuple[Tuple[Tuple[Decision, bool], ...], Node]]:
        self._check(f)
        return list(self.iter_paths(f))

    # -- evaluation -------------------------------------------------------------
    def evaluate_leaf(self, f: Node, rho: Mapping) -> Node:
        """Terminal reached under `rho`; at exact ties the larger branch wins."""
        self._check(f)
        return self._eval_leaf(f, rho)

    def _eval_leaf(self, n: Node, rho) -> Node:
        while not n.is_leaf:
            d = n.dec
            if isinstance(d, BoolDec):
                try:
                    b = rho[d.var]
                except KeyError:
                    raise KeyError(f"no value for variable {d.var!r}") from None
                n = n.high if b else n.low
                continue
            s = d.poly.eval(rho)
            if s > 0:
                n = n.high
            elif s < 0:
                n = n.low
            else:
                a = self._eval_leaf(n.high, rho)
                b = self._eval_leaf(n.low, rho)
                return a if leaf_value(a, rho) >= leaf_value(b, rho) else b
        return n

    def evaluate(self, f: Node, rho: Mapping):
        """Value of `f` at `rho` (a Fraction or +-inf)."""
        return leaf_value(self.evaluate_leaf(f, rho), rho)

    # -- export -----------------------------------------------------------------
    def to_dot(self, f: Node, name: str = "xadd") -> str:
        self._check(f)
        order = self.reachable(f)
        num = {n.id: i for i, n in enumerate(order)}
        lines = [f"digraph {name} {{"]
        for n in order:
            i = num[n.id]
            if n.is_leaf:
                label = render_value(n.value)
                ann = render_annotation(n.annotation)
                if ann:
                    label += f" ({ann})"
                lines.append(f'  n{i} [shape=box, label="{label}"];')
            else:
                lines.append(f'  n{i} [shape=ellipse, label="{dec_label(n.dec)}"];')
        for n in order:
            if not n.is_leaf:
                i = num[n.id]
                lines.append(f"  n{i} -> n{num[n.high.id]} [style=solid];")
                lines.append(f"  n{i} -> n{num[n.low.id]} [style=dashed];")
        lines.append("}")
        return "\n".join(lines) + "\n"


def dec_label(d: Decision) -> str:
    if isinstance(d, BoolDec):
        return d.var
    return f"{d.poly} >= 0"


def leaf_value(n: Node, rho: Mapping):
    v = n.value
    if _is_inf(v):
        return v
    return v.eval(rho)


def _add_values(a: Value, b: Value) -> Value:
    if _is_inf(a) or _is_inf(b):
        if _is_inf(a) and _is_inf(b) and a != b:
            raise UndefinedArithmetic("inf + -inf")
        return a if _is_inf(a) else b
    return a + b


def _mul_values(a: Value, b: Value) -> Value:
    if _is_inf(a) or _is_inf(b):
        if _is_inf(a) and _is_inf(b):
            return a * b
        inf, other = (a, b) if _is_inf(a) else (b, a)
        if not other.is_constant():
            raise UndefinedArithmetic("infinity times a non-constant polynomial")
        c = other.constant()
        if c == 0:
            raise UndefinedArithmetic("0 * inf")
        return inf if c > 0 else -inf
    return a * b


def format_fraction(x) -> str:
    if isinstance(x, float):
        return render_value(x)
    return render_number(Fraction(x))
