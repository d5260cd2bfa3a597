"""Textual domain format: tokenizer, AST and recursive-descent parser.

Example::

    cvariables { x : [0, 500]; }
    bvariables { d; }
    action order(a : [0, 1000000]) {
      transition x' = case { (d) : x + a - 150; (!d) : x + a - 50; };
      cpf d' = case { (d) : 0.7; (!d) : 0.3; };
    }
    reward = case { (x < 0) : -inf; otherwise : 0; };
    discount = 1.0;
    horizon = 2;

Values are arithmetic over numbers, variables, ``inf`` and ``case`` blocks.
Conditions combine boolean variables and (chained) comparisons with ``!``,
``&&`` and ``||``.  Numbers are read as exact rationals.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from fractions import Fraction
from typing import List, Mapping, Optional, Tuple, Union


class DomainError(Exception):
    pass


class ParseError(DomainError):
    def __init__(self, msg: str, line: int, col: int):
        super().__init__(f"line {line}, column {col}: {msg}")
        self.line = line
        self.col = col


# -- AST ----------------------------------------------------------------------

@dataclass(frozen=True)
class Num:
    value: Fraction


@dataclass(frozen=True)
class VarRef:
    name: str


@dataclass(frozen=True)
class Inf:
    negative: bool


@dataclass(frozen=True)
class BinOp:
    op: str  # + - * /
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Neg:
    arg: "Expr"


@dataclass(frozen=True)
class Pow:
    base: "Expr"
    exponent: int


@dataclass(frozen=True)
class Case:
    # condition None means "otherwise"
    branches: Tuple[Tuple[Optional["Cond"], "Expr"], ...]


Expr = Union[Num, VarRef, Inf, BinOp, Neg, Pow, Case]


@dataclass(frozen=True)
class BoolConst:
    value: bool


@dataclass(frozen=True)
class BoolVar:
    name: str


@dataclass(frozen=True)
class Compare:
    """Chained comparison ``e0 op0 e1 op1 e2 ...``."""

    exprs: Tuple[Expr, ...]
    ops: Tuple[str, ...]


@dataclass(frozen=True)
class Not:
    arg: "Cond"


@dataclass(frozen=True)
class And:
    args: Tuple["Cond", ...]


@dataclass(frozen=True)
class Or:
    args: Tuple["Cond", ...]


Cond = Union[BoolConst, BoolVar, Compare, Not, And, Or]


@dataclass(frozen=True)
class ParamDecl:
    name: str
    lo: Fraction
    hi: Fraction


@dataclass(frozen=True)
class ActionDecl:
    name: str
    params: Tuple[ParamDecl, ...]
    transitions: Tuple[Tuple[str, Expr], ...]
    cpfs: Tuple[Tuple[str, Expr], ...]
    reward: Optional[Expr] = None


@dataclass(frozen=True)
class DomainFile:
    cvariables: Tuple[Tuple[str, Fraction, Fraction], ...]
    bvariables: Tuple[str, ...]
    actions: Tuple[ActionDecl, ...]
    reward: Optional[Expr]
    discount: Fraction = Fraction(1)
    horizon: int = 1


# -- tokenizer ----------------------------------------------------------------

_TOKEN_RE = re.compile(r"""
    (?P<ws>[ \t\r\n]+|//[^\n]*)
  | (?P<num>\d+(?:\.\d*)?(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z_0-9]*'?)
  | (?P<op><=|>=|&&|\|\||[<>!+\-*/^(){}\[\]:;,=])
""", re.VERBOSE)

KEYWORDS = {"cvariables", "bvariables", "action", "transition", "cpf", "reward",
            "discount", "horizon", "case", "otherwise", "inf", "true", "false"}


@dataclass
class Token:
    kind: str  # num, ident, op, eof
    text: str
    line: int
    col: int


def tokenize(text: str) -> List[Token]:
    toks: List[Token] = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        s = m.group()
        if kind != "ws":
            toks.append(Token(kind, s, line, pos - line_start + 1))
        nl = s.count("\n")
        if nl:
            line += nl
            line_start = pos + s.rfind("\n") + 1
        pos = m.end()
    toks.append(Token("eof", "", line, pos - line_start + 1))
    return toks


# -- parser -------------------------------------------------------------------

CMP_OPS = ("<=", ">=", "<", ">")


class Parser:
    def __init__(self, text: str):
        self.toks = tokenize(text)
        self.i = 0
        self.bools: set = set()

    # helpers
    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def error(self, msg: str, tok: Optional[Token] = None):
        t = tok or self.tok
        raise ParseError(msg, t.line, t.col)

    def at(self, text: str) -> bool:
        t = self.tok
        return t.text == text and t.kind in ("op", "ident")

    def accept(self, text: str) -> bool:
        if self.at(text):
            self.i += 1
            return True
        return False

    def expect(self, text: str) -> Token:
        if not self.at(text):
            self.error(f"expected {text!r}, found {self.tok.text or 'end of input'!r}")
        t = self.tok
        self.i += 1
        return t

    def ident(self) -> str:
        t = self.tok
        if t.kind != "ident" or t.text in KEYWORDS:
            self.error(f"expected identifier, found {t.text or 'end of input'!r}")
        self.i += 1
        return t.text

    def signed_number(self) -> Fraction:
        neg = self.accept("-")
        t = self.tok
        if t.kind != "num":
            self.error(f"expected number, found {t.text!r}")
        self.i += 1
        v = Fraction(t.text)
        if self.accept("/"):
            d = self.tok
            if d.kind != "num":
                self.error("expected denominator")
            self.i += 1
            v = v / Fraction(d.text)
        return -v if neg else v

    # top level
    def parse(self) -> DomainFile:
        cvars: List[Tuple[str, Fraction, Fraction]] = []
        bvars: List[str] = []
        actions: List[ActionDecl] = []
        reward = None
        discount = Fraction(1)
        horizon = 1
        seen = set()
        while self.tok.kind != "eof":
            t = self.tok
            if self.accept("cvariables"):
                self.expect("{")
                while not self.accept("}"):
                    name = self.ident()
                    self.expect(":")
                    self.expect("[")
                    lo = self.signed_number()
                    self.expect(",")
                    hi = self.signed_number()
                    self.expect("]")
                    self.expect(";")
                    if lo > hi:
                        self.error(f"empty bounds for {name}", t)
                    cvars.append((name, lo, hi))
            elif self.accept("bvariables"):
                self.expect("{")
                while not self.accept("}"):
                    name = self.ident()
                    self.expect(";")
                    bvars.append(name)
                    self.bools.add(name)
                    self.bools.add(name + "'")
            elif self.accept("action"):
                actions.append(self.action())
            elif self.accept("reward"):
                self.expect("=")
                reward = self.expr()
                self.expect(";")
            elif self.accept("discount"):
                self.expect("=")
                discount = self.signed_number()
                self.expect(";")
            elif self.accept("horizon"):
                self.expect("=")
                h = self.signed_number()
                if h.denominator != 1:
                    self.error("horizon must be an integer", t)
                horizon = int(h)
                self.expect(";")
            else:
                self.error(f"unexpected {t.text!r} at top level")
            if t.text in ("reward", "discount", "horizon"):
                if t.text in seen:
                    self.error(f"duplicate {t.text}", t)
                seen.add(t.text)
        return DomainFile(tuple(cvars), tuple(bvars), tuple(actions), reward, discount, horizon)

    def action(self) -> ActionDecl:
        name = self.ident()
        params: List[ParamDecl] = []
        if self.accept("("):
            if not self.accept(")"):
                while True:
                    pname = self.ident()
                    self.expect(":")
                    self.expect("[")
                    lo = self.signed_number()
                    self.expect(",")
                    hi = self.signed_number()
                    self.expect("]")
                    params.append(ParamDecl(pname, lo, hi))
                    if self.accept(")"):
                        break
                    self.expect(",")
        self.expect("{")
        trans: List[Tuple[str, Expr]] = []
        cpfs: List[Tuple[str, Expr]] = []
        reward = None
        while not self.accept("}"):
            t = self.tok
            if self.accept("transition"):
                var = self.ident()
                if not var.endswith("'"):
                    self.error("transition target must be a primed variable", t)
                self.expect("=")
                trans.append((var, self.expr()))
            elif self.accept("cpf"):
                var = self.ident()
                if not var.endswith("'"):
                    self.error("cpf target must be a primed variable", t)
                self.expect("=")
                cpfs.append((var, self.expr()))
            elif self.accept("reward"):
                self.expect("=")
                reward = self.expr()
            else:
                self.error(f"unexpected {t.text!r} in action body")
            self.expect(";")
        return ActionDecl(name, tuple(params), tuple(trans), tuple(cpfs), reward)

    # values
    def expr(self) -> Expr:
        e = self.term()
        while self.tok.text in ("+", "-") and self.tok.kind == "op":
            op = self.tok.text
            self.i += 1
            e = fold(BinOp(op, e, self.term()))
        return e

    def term(self) -> Expr:
        e = self.unary()
        while self.tok.text in ("*", "/") and self.tok.kind == "op":
            op = self.tok.text
            self.i += 1
            e = fold(BinOp(op, e, self.unary()))
        return e

    def unary(self) -> Expr:
        if self.accept("-"):
            return fold(Neg(self.unary()))
        if self.accept("+"):
            return self.unary()
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self.accept("^"):
            t = self.tok
            if t.kind != "num" or not t.text.isdigit():
                self.error("exponent must be a non-negative integer literal")
            self.i += 1
            return fold(Pow(base, int(t.text)))
        return base

    def atom(self) -> Expr:
        t = self.tok
        if t.kind == "num":
            self.i += 1
            return Num(Fraction(t.text))
        if self.accept("("):
            e = self.expr()
            self.expect(")")
            return e
        if self.accept("inf"):
            return Inf(False)
        if self.accept("case"):
            return self.case()
        if t.kind == "ident" and t.text not in KEYWORDS:
            self.i += 1
            return VarRef(t.text)
        self.error(f"unexpected {t.text or 'end of input'!r} in expression")

    def case(self) -> Case:
        self.expect("{")
        branches = []
        while not self.accept("}"):
            if self.accept("otherwise"):
                cond = None
            else:
                cond = self.cond()
            self.expect(":")
            branches.append((cond, self.expr()))
            self.expect(";")
        if not branches:
            self.error("empty case block")
        return Case(tuple(branches))

    # conditions
    def cond(self) -> Cond:
        args = [self.conj()]
        while self.accept("||"):
            args.append(self.conj())
        return args[0] if len(args) == 1 else Or(tuple(args))

    def conj(self) -> Cond:
        args = [self.negation()]
        while self.accept("&&"):
            args.append(self.negation())
        return args[0] if len(args) == 1 else And(tuple(args))

    def negation(self) -> Cond:
        if self.accept("!"):
            return Not(self.negation())
        return self.cond_atom()

    def cond_atom(self) -> Cond:
        t = self.tok
        if self.accept("true"):
            return BoolConst(True)
        if self.accept("false"):
            return BoolConst(False)
        if t.text == "(":
            save = self.i
            try:
                self.i += 1
                c = self.cond()
                self.expect(")")
                if not (self.tok.kind == "op" and self.tok.text in CMP_OPS + ("+", "-", "*", "/", "^")):
                    return c
            except ParseError:
                pass
            self.i = save  # a parenthesized arithmetic expression
        if t.kind == "ident" and t.text in self.bools:
            nxt = self.toks[self.i + 1]
            if not (nxt.kind == "op" and nxt.text in CMP_OPS + ("+", "-", "*", "/", "^")):
                self.i += 1
                return BoolVar(t.text)
        exprs = [self.expr()]
        ops = []
        while self.tok.kind == "op" and self.tok.text in CMP_OPS:
            ops.append(self.tok.text)
            self.i += 1
            exprs.append(self.expr())
        if not ops:
            self.error("expected a comparison or boolean variable", t)
        return Compare(tuple(exprs), tuple(ops))


def fold(e: Expr) -> Expr:
    """Constant-fold numeric sub-expressions (keeps parse and render idempotent)."""
    if isinstance(e, BinOp) and isinstance(e.left, Num) and isinstance(e.right, Num):
        a, b = e.left.value, e.right.value
        if e.op == "+":
            return Num(a + b)
        if e.op == "-":
            return Num(a - b)
        if e.op == "*":
            return Num(a * b)
        if e.op == "/" and b != 0:
            return Num(a / b)
    if isinstance(e, Neg):
        if isinstance(e.arg, Num):
            return Num(-e.arg.value)
        if isinstance(e.arg, Inf):
            return Inf(not e.arg.negative)
    if isinstance(e, Pow) and isinstance(e.base, Num):
        return Num(e.base.value ** e.exponent)
    return e


def substitute_expr(e, values: Mapping[str, Fraction]):
    """Replace numeric variables by constants in an expression or condition, folding as we go."""
    if isinstance(e, VarRef):
        return Num(values[e.name]) if e.name in values else e
    if isinstance(e, (Num, Inf, BoolConst, BoolVar)):
        return e
    if isinstance(e, BinOp):
        return fold(BinOp(e.op, substitute_expr(e.left, values), substitute_expr(e.right, values)))
    if isinstance(e, Neg):
        return fold(Neg(substitute_expr(e.arg, values)))
    if isinstance(e, Pow):
        return fold(Pow(substitute_expr(e.base, values), e.exponent))
    if isinstance(e, Case):
        return Case(tuple((None if c is None else substitute_expr(c, values), substitute_expr(v, values))
                          for c, v in e.branches))
    if isinstance(e, Compare):
        return Compare(tuple(substitute_expr(x, values) for x in e.exprs), e.ops)
    if isinstance(e, Not):
        return Not(substitute_expr(e.arg, values))
    if isinstance(e, (And, Or)):
        return type(e)(tuple(substitute_expr(a, values) for a in e.args))
    raise TypeError(e)


def expr_variables(e) -> set:
    """Names of numeric variables referenced by an expression or condition."""
    if isinstance(e, VarRef):
        return {e.name}
    if isinstance(e, (Num, Inf, BoolConst, BoolVar)) or e is None:
        return set()
    if isinstance(e, BinOp):
        return expr_variables(e.left) | expr_variables(e.right)
    if isinstance(e, (Neg, Not)):
        return expr_variables(e.arg)
    if isinstance(e, Pow):
        return expr_variables(e.base)
    if isinstance(e, Case):
        return set().union(*(expr_variables(c) | expr_variables(v) for c, v in e.branches))
    if isinstance(e, Compare):
        return set().union(*(expr_variables(x) for x in e.exprs))
    if isinstance(e, (And, Or)):
        return set().union(*(expr_variables(a) for a in e.args))
    raise TypeError(e)


def parse_domain_file(text: str) -> DomainFile:
    return Parser(text).parse()


# -- rendering ----------------------------------------------------------------

def render_plain(v: Fraction) -> str:
    """Number as accepted by bounds, discount and horizon (no parentheses)."""
    from ..expr import render_number

    return render_number(v)


def render_num(v: Fraction) -> str:
    s = render_plain(v)
    if "/" in s:
        s = f"({s})"
    return s


def render_expr(e: Expr, indent: str = "") -> str:
    if isinstance(e, Num):
        s = render_num(e.value)
        return f"({s})" if e.value < 0 and not s.startswith("(") else s
    if isinstance(e, VarRef):
        return e.name
    if isinstance(e, Inf):
        return "-inf" if e.negative else "inf"
    if isinstance(e, BinOp):
        return f"({render_expr(e.left, indent)} {e.op} {render_expr(e.right, indent)})"
    if isinstance(e, Neg):
        return f"(-{render_expr(e.arg, indent)})"
    if isinstance(e, Pow):
        return f"{render_expr(e.base, indent)}^{e.exponent}"
    if isinstance(e, Case):
        inner = indent + "  "
        lines = ["case {"]
        for cond, val in e.branches:
            c = "otherwise" if cond is None else render_cond(cond)
            lines.append(f"{inner}{c} : {render_expr(val, inner)};")
        lines.append(indent + "}")
        return "\n".join(lines)
    raise TypeError(e)


def render_cond(c: Cond) -> str:
    if isinstance(c, BoolConst):
        return "true" if c.value else "false"
    if isinstance(c, BoolVar):
        return f"({c.name})"
    if isinstance(c, Compare):
        parts = [render_expr(c.exprs[0])]
        for op, e in zip(c.ops, c.exprs[1:]):
            parts.append(op)
            parts.append(render_expr(e))
        return "(" + " ".join(parts) + ")"
    if isinstance(c, Not):
        return f"!{render_cond(c.arg)}"
    if isinstance(c, And):
        return "(" + " && ".join(render_cond(a) for a in c.args) + ")"
    if isinstance(c, Or):
        return "(" + " || ".join(render_cond(a) for a in c.args) + ")"
    raise TypeError(c)


def render_domain(df: DomainFile) -> str:
    out = []
    if df.cvariables:
        body = " ".join(f"{n} : [{render_plain(lo)}, {render_plain(hi)}];" for n, lo, hi in df.cvariables)
        out.append(f"cvariables {{ {body} }}")
    if df.bvariables:
        out.append("bvariables { " + " ".join(f"{b};" for b in df.bvariables) + " }")
    for a in df.actions:
        ps = ", ".join(f"{p.name} : [{render_plain(p.lo)}, {render_plain(p.hi)}]" for p in a.params)
        out.append(f"action {a.name}({ps}) {{")
        for v, e in a.transitions:
            out.append(f"  transition {v} = {render_expr(e, '  ')};")
        for v, e in a.cpfs:
            out.append(f"  cpf {v} = {render_expr(e, '  ')};")
        if a.reward is not None:
            out.append(f"  reward = {render_expr(a.reward, '  ')};")
        out.append("}")
    if df.reward is not None:
        out.append(f"reward = {render_expr(df.reward)};")
    out.append(f"discount = {render_plain(df.discount)};")
    out.append(f"horizon = {df.horizon};")
    return "\n".join(out) + "\n"
