"""Command-line front end: ``symsdp solve|grid|sweep|export-dot``.

Exit codes: 0 success, 2 usage error, 3 domain parse/validation error,
4 node-budget abort (partial artifacts are still written).
"""
from __future__ import annotations

import argparse
import csv
import itertools
import logging
import sys
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from .expr import render_number
from .hmdp import (DomainError, HmdpModel, ParseError, ValidationError, builtin_domain,
                   discretize_actions, parse_domain)
from .sdp import PRUNE_MODES, SdpError, SolveOptions, SolveResult, extract_policy, value_iteration
from .xadd import NEG_INF, POS_INF, XaddError

EXIT_OK, EXIT_USAGE, EXIT_DOMAIN, EXIT_BUDGET = 0, 2, 3, 4

STATS_HEADER = ["h", "action_count", "v_nodes", "v_paths", "pruned_nodes", "ms"]


class UsageError(Exception):
    pass


@dataclass
class GridSpec:
    var: str
    lo: Fraction
    hi: Fraction
    step: Fraction

    def points(self) -> List[Fraction]:
        out, k = [], 0
        while self.lo + k * self.step <= self.hi:
            out.append(self.lo + k * self.step)
            k += 1
        return out


def parse_grid(text: str) -> GridSpec:
    try:
        var, rng = text.split("=", 1)
        lo, hi, step = (Fraction(p) for p in rng.split(":"))
    except ValueError:
        raise UsageError(f"bad grid spec {text!r}, expected var=lo:hi:step") from None
    if step <= 0:
        raise UsageError(f"grid step must be > 0 in {text!r}")
    if hi < lo:
        raise UsageError(f"grid range is empty in {text!r}")
    return GridSpec(var.strip(), lo, hi, step)


@dataclass
class RunConfig:
    domain: Optional[str] = None
    file: Optional[Path] = None
    horizon: Optional[int] = None
    discretize: Optional[int] = None
    prune: str = "consistency"
    epsilon: float = 1e-9
    v0: str = "zero"
    out: Path = Path("out")
    grid: List[GridSpec] = field(default_factory=list)
    budget: Optional[int] = 200_000
    seed: int = 0

    @classmethod
    def from_args(cls, ns: argparse.Namespace) -> "RunConfig":
        if (ns.domain is None) == (ns.file is None):
            raise UsageError("give exactly one of --domain or --file")
        if ns.horizon is not None and ns.horizon < 0:
            raise UsageError("--horizon must be >= 0")
        if ns.budget is not None and ns.budget <= 0:
            raise UsageError("--budget must be positive")
        return cls(domain=ns.domain, file=Path(ns.file) if ns.file else None, horizon=ns.horizon,
                   discretize=ns.discretize, prune=ns.prune, epsilon=ns.epsilon,
                   v0="reward" if ns.v0_reward else "zero", out=Path(ns.out),
                   grid=[parse_grid(g) for g in ns.grid or []], budget=ns.budget, seed=ns.seed)

    def options(self) -> SolveOptions:
        return SolveOptions(prune=self.prune, epsilon=self.epsilon, v0=self.v0, budget=self.budget)


def load_model(cfg: RunConfig, discretize: Optional[int] = None) -> HmdpModel:
    if cfg.file is not None:
        try:
            text = cfg.file.read_text()
        except OSError as e:
            raise UsageError(f"cannot read {cfg.file}: {e}") from None
        m = parse_domain(text, name=cfg.file.stem)
    else:
        try:
            m = builtin_domain(cfg.domain)
        except KeyError as e:
            raise UsageError(str(e.args[0])) from None
    n = discretize if discretize is not None else cfg.discretize
    if n is not None:
        if n < 2:
            raise UsageError("--discretize needs N >= 2")
        m = discretize_actions(m, n)
    return m


def solve(cfg: RunConfig, model: Optional[HmdpModel] = None) -> SolveResult:
    m = model if model is not None else load_model(cfg)
    return value_iteration(m, cfg.horizon, options=cfg.options())


# -- artifacts ----------------------------------------------------------------------

def write_stats(res: SolveResult, path: Path):
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(STATS_HEADER)
        for st in res.stats:
            w.writerow([st.h, st.action_count, st.v_nodes, st.v_paths, st.pruned_nodes, f"{st.ms:.1f}"])


def summary_text(res: SolveResult) -> str:
    s = res.store
    total_ms = sum(st.ms for st in res.stats)
    lines = [
        f"model: {res.model.name}",
        f"horizon solved: {res.horizon}",
        f"converged at: {res.converged_at if res.converged_at is not None else 'no'}",
        f"aborted: {'yes (' + res.abort_reason + ')' if res.aborted else 'no'}",
        f"final value nodes: {s.node_count(res.values[-1])}",
        f"total nodes: {sum(st.v_nodes for st in res.stats)}",
        f"total ms: {total_ms:.1f}",
    ]
    if res.param_order:
        lines.append("parameter order: " + "; ".join(
            f"{a}({', '.join(ps)})" for a, ps in sorted(res.param_order.items())))
    return "\n".join(lines) + "\n"


def write_dots(res: SolveResult, out: Path, horizons: Optional[Sequence[int]] = None):
    s = res.store
    hs = range(len(res.values)) if horizons is None else horizons
    for h in hs:
        (out / f"V_{h}.dot").write_text(s.to_dot(res.values[h], name=f"V_{h}"))
        if h >= 1:
            (out / f"policy_{h}.dot").write_text(s.to_dot(res.policies[h], name=f"policy_{h}"))


def fmt_value(v) -> str:
    if v == NEG_INF:
        return "-inf"
    if v == POS_INF:
        return "inf"
    return render_number(Fraction(v))


def grid_rows(res: SolveResult, h: int, specs: Sequence[GridSpec]) -> Tuple[List[str], List[list]]:
    m = res.model
    by_var = {g.var: g for g in specs}
    for g in specs:
        if g.var not in m.cont_vars:
            raise UsageError(f"grid variable {g.var!r} is not a continuous state variable")
    missing = [x for x in m.cont_vars if x not in by_var]
    if missing:
        raise UsageError(f"no --grid given for {', '.join(missing)}")
    params = sorted({p for a in m.actions for p in a.param_names})
    header = list(m.cont_vars) + list(m.bool_vars) + ["value", "policy_action"] + params
    rows = []
    axes = [by_var[x].points() for x in m.cont_vars]
    for bools in itertools.product([True, False], repeat=len(m.bool_vars)):
        for combo in itertools.product(*axes):
            rho = dict(zip(m.cont_vars, combo))
            rho.update(zip(m.bool_vars, bools))
            v = res.value_at(h, rho)
            act, pv = extract_policy(res, h, rho) if h >= 1 else (None, {})
            rows.append([render_number(c) for c in combo] + [int(b) for b in bools]
                        + [fmt_value(v), act or ""] + [fmt_value(pv[p]) if p in pv else "" for p in params])
    return header, rows


def probe_states(m: HmdpModel, per_axis: int = 5) -> List[Dict]:
    axes = [[(x, lo + (hi - lo) * Fraction(i, per_axis - 1)) for i in range(per_axis)]
            for x, (lo, hi) in m.cont_vars.items()]
    out = []
    for bools in itertools.product([True, False], repeat=len(m.bool_vars)):
        for combo in itertools.product(*axes):
            rho = dict(combo)
            rho.update(zip(m.bool_vars, bools))
            out.append(rho)
    return out


def _probe_label(rho: Dict) -> str:
    return ";".join(f"{k}={fmt_value(v) if not isinstance(v, bool) else int(v)}" for k, v in rho.items())


# -- commands -----------------------------------------------------------------------

def cmd_solve(cfg: RunConfig) -> int:
    res = solve(cfg)
    cfg.out.mkdir(parents=True, exist_ok=True)
    write_stats(res, cfg.out / "stats.csv")
    write_dots(res, cfg.out)
    text = summary_text(res)
    (cfg.out / "summary.txt").write_text(text)
    sys.stdout.write(text)
    return EXIT_BUDGET if res.aborted else EXIT_OK


def cmd_grid(cfg: RunConfig, at: Optional[int]) -> int:
    if not cfg.grid:
        raise UsageError("grid needs at least one --grid var=lo:hi:step")
    m = load_model(cfg)
    for g in cfg.grid:
        if g.var not in m.cont_vars:
            raise UsageError(f"grid variable {g.var!r} is not a continuous state variable")
    res = solve(cfg, m)
    h = res.horizon if at is None else at
    if h > res.horizon:
        raise UsageError(f"horizon {h} not solved (solved up to {res.horizon})")
    header, rows = grid_rows(res, h, cfg.grid)
    cfg.out.mkdir(parents=True, exist_ok=True)
    path = cfg.out / f"grid_{h}.csv"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    print(f"wrote {len(rows)} rows to {path}")
    return EXIT_BUDGET if res.aborted else EXIT_OK


def cmd_sweep(cfg: RunConfig, n_list: Sequence[int]) -> int:
    base = load_model(cfg, discretize=None)
    if all(a.is_discrete for a in base.actions):
        raise UsageError("sweep needs a domain with parameterized actions")
    cont = solve(cfg, base)
    probes = probe_states(base)
    cfg.out.mkdir(parents=True, exist_ok=True)
    path = cfg.out / "sweep.csv"
    aborted = cont.aborted
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n", "h", "nodes", "ms", "probe", "value", "continuous", "dominated"])
        runs = [(str(n), solve(cfg, load_model(cfg, discretize=n))) for n in n_list]
        runs.append(("continuous", cont))
        for label, res in runs:
            aborted = aborted or res.aborted
            for st in res.stats:
                h = st.h
                for rho in probes:
                    v = res.value_at(h, rho)
                    c = cont.value_at(h, rho) if h <= cont.horizon else None
                    dom = "" if c is None else int(v <= c)
                    w.writerow([label, h, st.v_nodes, f"{st.ms:.1f}", _probe_label(rho),
                                fmt_value(v), "" if c is None else fmt_value(c), dom])
    print(f"wrote {path}")
    return EXIT_BUDGET if aborted else EXIT_OK


def cmd_export_dot(cfg: RunConfig, at: int) -> int:
    res = solve(cfg)
    if at > res.horizon:
        raise UsageError(f"horizon {at} not solved (solved up to {res.horizon})")
    cfg.out.mkdir(parents=True, exist_ok=True)
    write_dots(res, cfg.out, [at])
    print(f"wrote V_{at}.dot" + (f" and policy_{at}.dot" if at >= 1 else "") + f" to {cfg.out}")
    return EXIT_OK


# -- argument parsing -------------------------------------------------------------------

def _common(p: argparse.ArgumentParser):
    p.add_argument("--domain", help="built-in domain: caic1, caicK, rover, reservoir")
    p.add_argument("--file", help="path to a domain file")
    p.add_argument("--horizon", type=int, help="override the domain's horizon")
    p.add_argument("--discretize", type=int, metavar="N", help="replace action parameters by N grid values")
    p.add_argument("--prune", choices=PRUNE_MODES, default="consistency")
    p.add_argument("--epsilon", type=float, default=1e-9, help="tolerance for --prune heuristic")
    p.add_argument("--v0-reward", action="store_true", help="start from V0 = R instead of 0")
    p.add_argument("--grid", action="append", metavar="VAR=LO:HI:STEP")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--budget", type=int, default=200_000, help="per-iteration node budget")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="symsdp", description="Exact symbolic dynamic programming for hybrid MDPs.")
    sub = ap.add_subparsers(dest="command", required=True)
    _common(sub.add_parser("solve", help="run value iteration and write stats, DOT files, summary"))
    g = sub.add_parser("grid", help="evaluate value and policy on a state grid")
    _common(g)
    g.add_argument("--at", type=int, help="horizon to tabulate (default: last solved)")
    s = sub.add_parser("sweep", help="compare action discretizations with the continuous solution")
    _common(s)
    s.add_argument("--n-list", default="4,8", help="comma-separated discretization sizes")
    e = sub.add_parser("export-dot", help="write the DOT diagrams for one horizon")
    _common(e)
    e.add_argument("--at", type=int, required=True)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    ap = build_parser()
    ns = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = RunConfig.from_args(ns)
        if ns.command == "solve":
            return cmd_solve(cfg)
        if ns.command == "grid":
            return cmd_grid(cfg, ns.at)
        if ns.command == "sweep":
            try:
                n_list = [int(t) for t in ns.n_list.split(",") if t.strip()]
            except ValueError:
                raise UsageError(f"bad --n-list {ns.n_list!r}") from None
            return cmd_sweep(cfg, n_list)
        return cmd_export_dot(cfg, ns.at)
    except UsageError as e:
        print(f"symsdp: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (ParseError, DomainError, ValidationError, SdpError, XaddError) as e:
        print(f"symsdp: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
