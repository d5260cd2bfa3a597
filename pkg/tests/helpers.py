"""Glue between the oracle trees in ``oracles`` and the diagram store."""
from fractions import Fraction

from symsdp.expr import BoolDec, Polynomial
from symsdp.xadd import XaddStore


def poly_of(d) -> Polynomial:
    return Polynomial.from_dict({m: Fraction(c) for m, c in d.items()})


def build(store: XaddStore, t):
    """Oracle tree -> diagram (unordered construction, then reorder)."""
    def rec(t):
        if t[0] == "leaf":
            v = t[1]
            return store.leaf(v if isinstance(v, float) else poly_of(v))
        _, cond, hi, lo = t
        h, l = rec(hi), rec(lo)
        if cond[0] == "bool":
            return store.get_node(BoolDec(cond[1]), h, l)
        return store.ineq_node(poly_of(cond[1]), h, l)
    return store.reorder(rec(t))


def assert_structure(store: XaddStore, f):
    """Ordered, reduced, and hash-consed (checked on everything reachable)."""
    seen = {}
    sigs = {}
    for n in store.reachable(f):
        assert not n.raw
        if n.is_leaf:
            key = ("leaf", n.value, n.annotation)
        else:
            assert n.high is not n.low
            k = store.order(n.dec)
            for c in (n.high, n.low):
                assert c.is_leaf or store.order(c.dec) > k
            key = (n.dec, n.high.id, n.low.id)
        assert seen.setdefault(key, n) is n
    # isomorphic subgraphs share one id: bottom-up signatures
    for n in reversed(store.reachable(f)):
        sig = ("L", n.value, n.annotation) if n.is_leaf else (n.dec, sigs[n.high.id], sigs[n.low.id])
        sigs[n.id] = sig
    by_sig = {}
    for nid, sig in sigs.items():
        assert by_sig.setdefault(sig, nid) == nid
