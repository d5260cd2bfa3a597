"""Built-in domains: continuous-action inventory control, Mars rover, reservoirs.

Each generator returns domain-file text, so built-in models go through the
same parser and validation as user files.  The shipped ``data/*.hmdp`` files
are these texts at their default arguments.
"""
from __future__ import annotations

import re
from fractions import Fraction
from importlib import resources
from typing import Optional

from ..xadd import XaddStore
from .model import HmdpModel, parse_domain


def _num(v) -> str:
    from ..expr import render_number

    return render_number(Fraction(v))


def caic_text(K: int = 1, C: Optional[int] = None, deterministic: bool = False,
              order_max: int = 1000000, horizon: int = 2) -> str:
    """Inventory control with K items and continuous order quantities.

    Demand is high (``d``) or low; high demand consumes 150 units of every
    item, low demand 50.  ``deterministic`` replaces the demand CPF by the
    constant 1 (always high demand).
    """
    if K < 1:
        raise ValueError("caic needs K >= 1")
    C = 500 * K if C is None else C
    xs = ["x"] if K == 1 else [f"x{i}" for i in range(1, K + 1)]
    As = ["a"] if K == 1 else [f"a{i}" for i in range(1, K + 1)]
    hi = 500 if K == 1 and C == 500 else C
    lines = ["// continuous-action inventory control, %d item(s), capacity %s" % (K, _num(C))]
    lines.append("cvariables { " + " ".join(f"{x} : [0, {_num(hi)}];" for x in xs) + " }")
    lines.append("bvariables { d; }")
    params = ", ".join(f"{a} : [0, {_num(order_max)}]" for a in As)
    lines.append(f"action order({params}) {{")
    for x, a in zip(xs, As):
        lines.append(f"  transition {x}' = case {{ (d) : {x} + {a} - 150; (!d) : {x} + {a} - 50; }};")
    if deterministic:
        lines.append("  cpf d' = 1;")
    else:
        lines.append("  cpf d' = case { (d) : 0.7; (!d) : 0.3; };")
    lines.append("}")
    total = " + ".join(xs)
    total_p = " + ".join(x + "'" for x in xs)
    parts = [f"case {{ ({total} > {_num(C)}) || ({total_p} > {_num(C)}) : -inf; otherwise : 0; }}"]
    for x, a in zip(xs, As):
        parts.append(
            "case {\n"
            f"    (d) && ({x} >= 150) : 150 - 0.1 * {a} - 0.05 * {x};\n"
            f"    (d) && ({x} <= 150) : {x} - 0.1 * {a} - 0.05 * {x};\n"
            f"    (!d) && ({x} >= 50) : 50 - 0.1 * {a} - 0.05 * {x};\n"
            f"    (!d) && ({x} <= 50) : {x} - 0.1 * {a} - 0.05 * {x};\n"
            "  }")
        parts.append(f"case {{ ({x} < 0) || ({x}' < 0) : -inf; otherwise : 0; }}")
    lines.append("reward = " + "\n  + ".join(parts) + ";")
    lines.append("discount = 1;")
    lines.append(f"horizon = {horizon};")
    return "\n".join(lines) + "\n"


ROVER_TEXT = """\
// Mars rover: move y in [-10, 10]; a picture taken within [-2, 2] pays 4 - x^2 once
cvariables { x : [-100, 100]; }
bvariables { b; }
action move(y : [-10, 10]) {
  transition x' = case {
    (-10 <= y <= 10) : x + y;
    (y < -10) || (y > 10) : x;
  };
  cpf b' = case {
    (b) || (-2 <= x <= 2) : 1.0;
    (!b) && ((x < -2) || (x > 2)) : 0.0;
  };
}
reward = case {
  (!b) && (-2 <= x <= 2) : 4 - x^2;
  (b) || (x < -2) || (x > 2) : 0;
};
discount = 1;
horizon = 2;
"""

# Each action keeps the reward band on which its own next levels stay within
# [50, 4500]; outside its band the action is illegal.
RESERVOIR_TEXT = """\
// two reservoirs; drain(e) moves water from l2 to l1 for elapsed time e
cvariables { l1 : [0, 5000]; l2 : [0, 5000]; }
action drain(e : [0, 10]) {
  transition l1' = 400 * e + l1 - 700 * e + 500 * e;
  transition l2' = 400 * e + l2 - 500 * e;
  reward = case {
    (50 - 200 * e <= l1 <= 4500 - 200 * e) && (50 + 100 * e <= l2 <= 4500 + 100 * e) : e;
    otherwise : -inf;
  };
}
action nodrain(e : [0, 10]) {
  transition l1' = 400 * e + l1 - 700 * e;
  transition l2' = 400 * e + l2 - 500 * e;
  reward = case {
    (50 + 300 * e <= l1 <= 4500 + 300 * e) && (50 - 400 * e <= l2 <= 4500 - 400 * e) : 0;
    otherwise : -inf;
  };
}
discount = 1;
horizon = 3;
"""


def domain_text(name: str, **kw) -> str:
    m = re.fullmatch(r"caic(\d*)", name)
    if m:
        if m.group(1):
            kw.setdefault("K", int(m.group(1)))
        return caic_text(**kw)
    if name == "rover":
        return ROVER_TEXT
    if name == "reservoir":
        return RESERVOIR_TEXT
    raise KeyError(f"unknown built-in domain {name!r} (caic, caicK, rover, reservoir)")


BUILTIN_NAMES = ("caic1", "rover", "reservoir")


def builtin_domain(name: str, store: Optional[XaddStore] = None, **kw) -> HmdpModel:
    return parse_domain(domain_text(name, **kw), name=name, store=store)


def shipped_text(name: str) -> str:
    return resources.files("symsdp.hmdp").joinpath("data", f"{name}.hmdp").read_text()
