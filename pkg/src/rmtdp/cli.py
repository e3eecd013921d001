"""Command-line front end: ``rmtdp search | evaluate | sweep``.

Exit codes: 0 on success, 2 for bad input (domain spec, parameters,
allocations), 3 when an evaluation fails part way.
"""
from __future__ import annotations

import argparse
import contextlib
import dataclasses
import json
import logging
import re
import sys
from pathlib import Path

from .evaluator import EvaluationError, make_fully_observable, monte_carlo_estimate
from .model import ModelError, PolicyError
from .report import (METHODS, BoundEntry, LeafEntry, ReportError, RunReport, SweepPoint,
                     SweepReport, reports_csv, stats_dict, SCHEMA_VERSION)
from .search import MAXEXP, NOFAIL, SearchError, _evaluate_leaf, branch_and_bound, noprune
from .specfile import SpecError, build_builtin, load_spec
from .top import CompletenessError, TopError

log = logging.getLogger("rmtdp")

EXIT_OK, EXIT_INPUT, EXIT_EVAL = 0, 2, 3

# friendly sweep names -> (field, index path)
SWEEP_ALIASES = {
    "mission-rehearsal": {
        **{f"route{k}-failure-rate": ("fail", (k - 1,)) for k in (1, 2, 3)},
        **{f"route{k}-observe-alive": ("observe_alive", (k - 1,)) for k in (1, 2, 3)},
        **{f"route{k}-observe-failure": ("observe_fail", (k - 1,)) for k in (1, 2, 3)},
        "transport-crash": ("transport_unscouted_crash", ()),
    },
    "rescue-scaled": {
        "fire-growth": ("fire_growth", ()),
        "deterioration": ("deterioration", ()),
        "rescue-prob": ("rescue_prob", ()),
        "observe-out": ("observe_out", ()),
        "extinguish-low": ("extinguish", (0,)),
        "extinguish-high": ("extinguish", (1,)),
    },
}


class InputError(ValueError):
    """Bad command-line input; maps to exit code 2."""


@contextlib.contextmanager
def _evaluating():
    # a model error after loading means some reachable point is broken: an evaluation failure
    try:
        yield
    except ModelError as exc:
        raise EvaluationError(str(exc)) from None


# ---------------------------------------------------------------- parsing helpers

def parse_agents(text: str) -> list:
    """``3``, ``2,4,6`` or ``2-6`` (inclusive)."""
    out = []
    for part in text.split(","):
        part = part.strip()
        m = re.fullmatch(r"(\d+)\s*-\s*(\d+)", part)
        try:
            if m:
                lo, hi = int(m.group(1)), int(m.group(2))
                if hi < lo:
                    raise InputError(f"empty agent range {part!r}")
                out.extend(range(lo, hi + 1))
            else:
                out.append(int(part))
        except ValueError:
            raise InputError(f"bad agent count {part!r}") from None
    if any(a < 0 for a in out):
        raise InputError("agent counts must be non-negative")
    return out


def parse_methods(text: str) -> list:
    methods = [m.strip() for m in text.split(",") if m.strip()]
    for m in methods:
        if m not in METHODS:
            raise InputError(f"unknown method {m!r}; expected one of {', '.join(METHODS)}")
    return methods


def parse_vector(text: str) -> tuple:
    try:
        return tuple(int(x) for x in re.split(r"[,\s]+", text.strip()) if x)
    except ValueError:
        raise InputError(f"allocation {text!r} must be comma-separated integers") from None


def parse_sweep(text: str):
    parts = text.rsplit(":", 3)
    if len(parts) != 4:
        raise InputError("--sweep expects param:min%:max%:step")
    name = parts[0]
    try:
        lo, hi, step = (float(x.rstrip("%")) for x in parts[1:])
    except ValueError:
        raise InputError(f"bad sweep grid in {text!r}") from None
    if step <= 0 or hi < lo:
        raise InputError("sweep grid needs step > 0 and max >= min")
    n = int(round((hi - lo) / step))
    grid = [round(lo + i * step, 10) for i in range(n + 1) if lo + i * step <= hi + 1e-9]
    return name, grid


# ---------------------------------------------------------------- domains and runs

def load_domain(args, agents=None):
    if bool(args.builtin) == bool(args.spec):
        raise InputError("give exactly one of --builtin or --spec")
    if args.spec:
        return load_spec(Path(args.spec), agents=agents, horizon=args.horizon)
    from .domains import BUILDERS
    if args.builtin not in BUILDERS:
        raise InputError(f"unknown builtin {args.builtin!r}; expected one of {', '.join(BUILDERS)}")
    return build_builtin(args.builtin, None, agents, args.horizon)


def _agents_of(domain) -> int:
    return domain.model.n_agents


def run_method(domain, method: str, workers: int = 1, seed=None) -> RunReport:
    """Run one search method and package the outcome."""
    extra = {}
    if method == "noprune-obs":
        res = noprune(domain, workers, mode="history")
    elif method == "noprune-bel":
        res = noprune(domain, workers)
    elif method == "maxexp":
        res = branch_and_bound(domain, MAXEXP, workers)
    elif method == "nofail":
        res = branch_and_bound(domain, NOFAIL, workers)
    else:  # mdp-baseline: choose with full observability, then score in the real model
        fo = domain.with_model(make_fully_observable(domain.model))
        res = noprune(fo, workers)
        if res.best_leaf is not None:
            actual = _evaluate_leaf(domain, domain.leaf_by_vector(res.best_vector))
            extra["value_in_original_model"] = actual.value
    pruned = {id(n) for n in res.pruned}
    bounds = [BoundEntry(list(b.parent.vector()), b.max_estimate, list(b.component_maxima),
                         list(b.component_ids), b.bound_kind, id(b.parent) in pruned)
              for b in res.bounds]
    leaves = [LeafEntry(list(r.leaf.vector()), r.value, r.node_expansions) for r in res.leaves]
    return RunReport(
        domain=domain.name, params=domain.params, method=method, agents=_agents_of(domain),
        best_allocation=list(res.best_vector or ()), best_value=res.best_value,
        stats=stats_dict(res.stats), bounds=bounds, leaves=leaves, seed=seed,
        timing={"wall_time": res.stats.wall_time}, extra=extra)


def find_leaf(domain, vector):
    try:
        return domain.leaf_by_vector(vector)
    except KeyError:
        pass
    leaves = domain.space.leaves()
    n = _agents_of(domain)
    width = len(leaves[0].vector()) if leaves else 0
    if len(vector) != width:
        raise InputError(f"allocation {vector} has {len(vector)} entries; this domain's vectors have "
                         f"{width} (e.g. {leaves[0].vector() if leaves else ()})")
    unconditioned = not any(l.condition_branches for l in leaves)
    if unconditioned and sum(vector) != n:
        raise InputError(f"allocation {vector} sums to {sum(vector)}, not the agent count {n}")
    raise InputError(f"allocation {vector} is not in the allocation space for {n} agents")


def evaluate_allocation(domain, vector, mode="belief", mc_runs=0, seed=0) -> dict:
    leaf = find_leaf(domain, vector)
    res = domain.evaluate(leaf, mode)
    out = {
        "schema_version": SCHEMA_VERSION, "kind": "evaluation", "domain": domain.name,
        "agents": _agents_of(domain), "allocation": list(leaf.vector()), "mode": mode,
        "value": res.value, "node_expansions": res.stats.node_expansions,
        "distinct_indices": list(res.stats.distinct_indices), "monte_carlo": None,
    }
    if mc_runs:
        mean, se = monte_carlo_estimate(domain.model, domain.policy_for(leaf), domain.rule, mc_runs, seed)
        out["monte_carlo"] = {"runs": mc_runs, "seed": seed, "mean": mean, "stderr": se}
    return out


# ---------------------------------------------------------------- sweep

def resolve_parameter(domain, name: str):
    """Map a sweep name to (field, index path); accepts aliases, ``field`` and ``field[i]``."""
    alias = SWEEP_ALIASES.get(domain.name, {}).get(name)
    if alias:
        return alias
    m = re.fullmatch(r"([A-Za-z_][\w-]*)((?:\[\d+\])*)", name)
    if not m or not dataclasses.is_dataclass(domain.params):
        raise InputError(f"unknown parameter {name!r}")
    field_name = m.group(1).replace("-", "_")
    names = {f.name for f in dataclasses.fields(domain.params)}
    if field_name not in names:
        known = sorted(SWEEP_ALIASES.get(domain.name, {})) + sorted(names)
        raise InputError(f"unknown parameter {name!r}; known: {', '.join(known)}")
    path = tuple(int(i) for i in re.findall(r"\[(\d+)\]", m.group(2)))
    return field_name, path


def _get(value, path):
    for i in path:
        value = value[i]
    return value


def _set(value, path, new):
    if not path:
        return new
    items = list(value)
    items[path[0]] = _set(items[path[0]], path[1:], new)
    return tuple(items)


def perturbed_params(params, field_name, path, percent):
    try:
        base = _get(getattr(params, field_name), path)
    except (IndexError, TypeError):
        raise InputError(f"parameter {field_name}{list(path)} does not exist") from None
    if isinstance(base, bool) or not isinstance(base, float):
        raise InputError(f"parameter {field_name}{list(path) or ''} is not real-valued")
    new = base * (1.0 + percent / 100.0)
    if not field_name.startswith("r_"):  # probabilities stay probabilities
        new = min(1.0, max(0.0, new))
    if percent == 0:
        new = base
    return dataclasses.replace(params, **{field_name: _set(getattr(params, field_name), path, new)}), new


def stability_range(points, baseline_alloc) -> list:
    """Widest run of consecutive grid points around 0% that keep the baseline allocation."""
    pts = sorted(points, key=lambda p: p.percent)
    if not pts:
        return [0.0, 0.0]
    centre = min(range(len(pts)), key=lambda i: (abs(pts[i].percent), pts[i].percent))
    if list(pts[centre].allocation) != list(baseline_alloc):
        return [0.0, 0.0]
    lo = hi = centre
    while lo > 0 and list(pts[lo - 1].allocation) == list(baseline_alloc):
        lo -= 1
    while hi < len(pts) - 1 and list(pts[hi + 1].allocation) == list(baseline_alloc):
        hi += 1
    return [pts[lo].percent, pts[hi].percent]


def run_sweep(domain, parameter, grid, method="maxexp", workers=1, seed=None) -> SweepReport:
    field_name, path = resolve_parameter(domain, parameter)
    perturbed_params(domain.params, field_name, path, 0.0)  # type check before any search
    baseline = run_method(domain, method, workers, seed)
    points, reports = [], []
    for pct in grid:
        params, value = perturbed_params(domain.params, field_name, path, pct)
        try:
            pdomain = domain.rebuild(params)
        except ModelError as exc:
            raise InputError(f"perturbation {pct}% gives an invalid model: {exc}") from None
        rep = run_method(pdomain, method, workers, seed)
        leaf = domain.leaf_by_vector(rep.best_allocation)
        original = _evaluate_leaf(domain, leaf).value
        points.append(SweepPoint(pct, value, list(rep.best_allocation), rep.best_value, original))
        reports.append(rep)
    return SweepReport(domain.name, parameter, method, baseline, points,
                       stability_range(points, baseline.best_allocation), reports)


# ---------------------------------------------------------------- output

def _stem(out: Path) -> Path:
    return out.with_suffix("") if out.suffix else out


def _format(args, out):
    if args.report:
        return args.report
    return "csv" if out is not None and out.suffix.lower() == ".csv" else "json"


def _emit(text: str, out):
    if out is None:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")
    else:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text if text.endswith("\n") else text + "\n", encoding="utf-8")


def cmd_search(args) -> int:
    methods = parse_methods(args.method)
    agent_list = parse_agents(args.agents) if args.agents is not None else [None]
    reports = []
    for n in agent_list:
        domain = load_domain(args, n)
        for method in methods:
            with _evaluating():
                rep = run_method(domain, method, args.threads, args.seed)
            log.info("%s agents=%d %s: best %s value %.10g, %d leaf + %d bound evaluations",
                     domain.name, rep.agents, method, rep.best_allocation, rep.best_value,
                     rep.stats["leaf_evaluations"], rep.stats["parent_bound_evaluations"])
            reports.append(rep)
        exact = [r.best_value for r in reports if r.agents == _agents_of(domain) and r.method != "mdp-baseline"]
        if exact and max(exact) - min(exact) > 1e-9:
            log.warning("methods disagree on the best value for %d agents: %s", _agents_of(domain), exact)
    out = Path(args.out) if args.out else None
    if _format(args, out) == "csv":
        text = reports_csv(reports)
    elif len(reports) == 1:
        text = reports[0].to_json()
    else:
        text = json.dumps([r.to_dict() for r in reports], indent=2)
    _emit(text, out)
    if out is not None and not args.no_figures:
        from .plots import plot_search
        for path in plot_search(reports, _stem(out)):
            log.info("wrote %s", path)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    if args.alloc is None:
        raise InputError("evaluate needs --alloc")
    agents = _single_agents(args)
    domain = load_domain(args, agents)
    with _evaluating():
        result = evaluate_allocation(domain, parse_vector(args.alloc), args.mode, args.mc_runs,
                                     args.seed if args.seed is not None else 0)
    out = Path(args.out) if args.out else None
    if _format(args, out) == "csv":
        mc = result["monte_carlo"] or {}
        head = "domain,agents,allocation,mode,value,node_expansions,mc_runs,mc_mean,mc_stderr\n"
        row = (f"{result['domain']},{result['agents']},{' '.join(map(str, result['allocation']))},"
               f"{result['mode']},{result['value']!r},{result['node_expansions']},"
               f"{mc.get('runs', 0)},{mc.get('mean', '')!r},{mc.get('stderr', '')!r}\n")
        text = head + row
    else:
        text = json.dumps(result, indent=2)
    if out is None:
        _emit(text, None)
    else:
        _emit(text, out)
        print(f"value {result['value']!r}")
        if result["monte_carlo"]:
            mc = result["monte_carlo"]
            print(f"monte carlo {mc['mean']!r} +/- {mc['stderr']!r} ({mc['runs']} runs, seed {mc['seed']})")
    return EXIT_OK


def _single_agents(args):
    if args.agents is None:
        return None
    agents = parse_agents(args.agents)
    if len(agents) != 1:
        raise InputError("this command takes a single --agents value")
    return agents[0]


def cmd_sweep(args) -> int:
    if not args.sweep:
        raise InputError("sweep needs --sweep param:min%:max%:step")
    methods = parse_methods(args.method)
    if len(methods) != 1:
        raise InputError("sweep takes a single --method")
    name, grid = parse_sweep(args.sweep)
    domain = load_domain(args, _single_agents(args))
    if domain.builder is None:
        raise InputError(f"domain {domain.name!r} has no parameters to sweep")
    with _evaluating():  # invalid perturbed parameters are already input errors
        sweep = run_sweep(domain, name, grid, methods[0], args.threads, args.seed)
    out = Path(args.out) if args.out else None
    _emit(sweep.csv_text() if _format(args, out) == "csv" else sweep.to_json(), out)
    if out is not None and not args.no_figures:
        from .plots import plot_sweep
        for path in plot_sweep(sweep, _stem(out)):
            log.info("wrote %s", path)
    log.info("stability range %s%%", sweep.stability_range)
    return EXIT_OK


# ---------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    src = common.add_argument_group("domain")
    src.add_argument("--builtin", help="mission-rehearsal or rescue-scaled")
    src.add_argument("--spec", help="domain-spec file")
    src.add_argument("--agents", help="agent count; search also takes lists (2,4) and ranges (2-6)")
    src.add_argument("--horizon", type=int)
    run = common.add_argument_group("run")
    run.add_argument("--method", default="maxexp", help=f"comma list of {', '.join(METHODS)}")
    run.add_argument("--mode", choices=("belief", "history"), default="belief")
    run.add_argument("--alloc", help="allocation counts vector, e.g. 1,0,0,2")
    run.add_argument("--mc-runs", type=int, default=0)
    run.add_argument("--seed", type=int)
    run.add_argument("--threads", type=int, default=1)
    run.add_argument("--sweep", help="param:min%%:max%%:step")
    outg = common.add_argument_group("output")
    outg.add_argument("--report", choices=("json", "csv"))
    outg.add_argument("--out", help="report file; figures are written next to it")
    outg.add_argument("--no-figures", action="store_true")
    outg.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="rmtdp", description="Role allocation search for team plans.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("search", parents=[common], help="find the best role allocation").set_defaults(fn=cmd_search)
    sub.add_parser("evaluate", parents=[common], help="value of one allocation").set_defaults(fn=cmd_evaluate)
    sub.add_parser("sweep", parents=[common], help="parameter-error sensitivity").set_defaults(fn=cmd_sweep)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    if args.threads < 1:
        parser.error("--threads must be at least 1")
    if args.mc_runs < 0:
        parser.error("--mc-runs must be non-negative")
    try:
        return args.fn(args)
    except (EvaluationError, PolicyError, CompletenessError) as exc:
        print(f"rmtdp: evaluation error: {exc}", file=sys.stderr)
        return EXIT_EVAL
    except (InputError, SpecError, ModelError, TopError, ReportError, SearchError) as exc:
        print(f"rmtdp: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"rmtdp: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
