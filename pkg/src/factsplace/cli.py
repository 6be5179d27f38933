"""Command-line front end.

Exit codes: 0 success (or feasible), 1 domain infeasibility (placement not
solved, overloads found, no feasible dispatch), 2 input error.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, figures, report
from .errors import DataError, FactsError, ParseError, PowerFlowError, ValidationError
from .grid import GridModel, Scenario, parse_matpower, read_grid, to_native
from .optimizer import (
    PlacementOptions, PlacementStatus, Strategy, ViolationMove, base_opf, detect_jumps, n1_scenarios,
    naive_combination, place, scale_scenario, sweep, verify, warm_start_variant,
)
from .powerflow import alpha_c, dc_flows

logger = logging.getLogger("factsplace")

THREADS_ENV = "FACTSPLACE_THREADS"
FORMATS = ("report-json", "table-csv", "graph-dot", "figure-png")
EXIT_OK, EXIT_INFEASIBLE, EXIT_INPUT = 0, 1, 2


class InputError(Exception):
    """Bad command-line input; maps to exit code 2."""


@dataclass
class RunConfig:
    command: str
    grid: Path | None
    output_dir: Path | None = None
    formats: tuple[str, ...] = ("report-json",)
    threads: int = 1
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.grid is not None and not self.grid.is_file():
            raise InputError(f"no such file: {self.grid}")
        bad = [f for f in self.formats if f not in FORMATS]
        if bad:
            raise InputError(f"unknown output format(s) {', '.join(bad)}; choose from {', '.join(FORMATS)}")
        if self.threads < 1:
            raise InputError("--threads must be at least 1")
        for key in ("ratio", "alpha"):
            v = self.params.get(key)
            if v is not None and not v > 0:
                raise InputError(f"--{key} must be positive")
        for path in self.params.get("scenario") or []:
            if not Path(path).is_file():
                raise InputError(f"no such file: {path}")


def _default_threads() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise InputError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None


def _ratio_list(text: str) -> list[float]:
    """``"1.0:2.0:0.01"`` (inclusive range) or ``"1.1,1.4,1.9"``."""
    try:
        if ":" in text:
            start, stop, step = (float(x) for x in text.split(":"))
            if not step > 0 or stop < start:
                raise ValueError
            n = int(round((stop - start) / step)) + 1
            return [round(start + i * step, 10) for i in range(n)]
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected START:STOP:STEP or a comma list, got {text!r}") from None


# --------------------------------------------------------------------------
# argument parsing


def _common(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("output")
    g.add_argument("--config", type=Path, help="JSON file of default values for any long option")
    g.add_argument("--output-dir", type=Path, help="write files here instead of printing the JSON report")
    g.add_argument("--formats", type=lambda s: tuple(x for x in s.split(",") if x),
                   help=f"comma list from {{{', '.join(FORMATS)}}} (default report-json)")
    g.add_argument("--threads", type=int, help=f"worker threads for sweeps (default ${THREADS_ENV} or 1)")
    g.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")


def _stress(p: argparse.ArgumentParser, ratio_required: bool = False) -> None:
    g = p.add_argument_group("stress")
    g.add_argument("--dispatch", default="opf",
                   help="base injections: 'opf' (least-cost dispatch), 'base' (as in the grid file) "
                        "or a scenario JSON file (default opf)")
    if ratio_required is not None:
        x = g.add_mutually_exclusive_group()
        x.add_argument("--ratio", type=float, help="scale the dispatch to ratio * alpha_c")
        x.add_argument("--alpha", type=float, help="scale the dispatch by alpha")


def _placement(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("placement")
    d = PlacementOptions()
    g.add_argument("--strategy", choices=[s.value for s in Strategy], default=d.strategy.value)
    g.add_argument("--max-iters", type=int, default=d.max_outer_iters, dest="max_outer_iters")
    g.add_argument("--violation-move", choices=[v.value for v in ViolationMove], default=d.violation_move.value)
    g.add_argument("--beta-lower", type=float, default=d.beta_lower, help="floor on every susceptance")
    g.add_argument("--beta-upper", type=float, default=None, help="cap on every susceptance")
    g.add_argument("--beta-tolerance", type=float, default=None, help="convergence test on max |step|")
    g.add_argument("--feasibility-tolerance", type=float, default=d.feasibility_tolerance)
    g.add_argument("--proximal", type=float, default=d.proximal, help="price of |beta - beta_k|_1 in each LP")
    g.add_argument("--no-trust-region", dest="trust_region", action="store_false")
    g.add_argument("--no-elastic", dest="elastic", action="store_false")
    g.add_argument("--no-polish", dest="polish", action="store_false")
    g.add_argument("--no-capacity-check", dest="capacity_check", action="store_false")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="factsplace", description="Least-cost susceptance corrections "
                                     "that clear DC line overloads.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("import", help="convert a MatPower case to the native JSON grid format")
    p.add_argument("case", type=Path)
    p.add_argument("-o", "--output", type=Path, help="native grid file (default: CASE with .json)")
    p.add_argument("--drop-transformers", action="store_true", help="remove off-nominal tap / shifter branches")
    _common(p)

    p = sub.add_parser("pf", help="DC power flow for a dispatch or scenario")
    p.add_argument("grid", type=Path)
    p.add_argument("--scenario", type=Path, action="append", help="scenario JSON (overrides --dispatch)")
    p.add_argument("--beta", type=Path, help="susceptance file or placement report")
    _stress(p)
    _common(p)

    p = sub.add_parser("opf", help="least-cost base dispatch")
    p.add_argument("grid", type=Path)
    p.add_argument("--save-scenario", type=Path, help="also write the dispatch as a scenario file")
    _common(p)

    p = sub.add_parser("alpha-c", help="critical uniform scaling of a dispatch")
    p.add_argument("grid", type=Path)
    _stress(p, ratio_required=None)
    _common(p)

    p = sub.add_parser("place", help="place corrections for one stressed scenario")
    p.add_argument("grid", type=Path)
    p.add_argument("--scenario", type=Path, action="append", help="scenario JSON (overrides --ratio/--alpha)")
    p.add_argument("--start", type=Path, help="susceptances to start from (cost still measured from the grid)")
    _stress(p)
    _placement(p)
    _common(p)

    p = sub.add_parser("sweep", help="placement cost over a range of scalings")
    p.add_argument("grid", type=Path)
    p.add_argument("--ratios", type=_ratio_list, help="START:STOP:STEP or comma list of alpha/alpha_c")
    p.add_argument("--alphas", type=_ratio_list, help="START:STOP:STEP or comma list of absolute alpha")
    p.add_argument("--warm-start", action="store_true", help="start each point at the previous optimum")
    p.add_argument("--forced-zero", type=int, help="remove this line from every topology first")
    p.add_argument("--jump-factor", type=float, default=3.0, help="flag cost changes above this x median")
    _stress(p, ratio_required=None)
    _placement(p)
    _common(p)

    p = sub.add_parser("robust", help="one placement clearing several scenarios at once")
    p.add_argument("grid", type=Path)
    p.add_argument("--scenario", type=Path, action="append", help="scenario JSON (give two or more)")
    _placement(p)
    _common(p)

    p = sub.add_parser("n1", help="robust placement over the stressed base case and its single-line outages")
    p.add_argument("grid", type=Path)
    p.add_argument("--lines", type=lambda s: [int(x) for x in s.split(",")], help="only these outages")
    _stress(p)
    _placement(p)
    _common(p)

    p = sub.add_parser("verify", help="check line limits for susceptances against scenarios")
    p.add_argument("grid", type=Path)
    p.add_argument("--beta", type=Path, help="susceptance file or placement report (default: grid values)")
    p.add_argument("--scenario", type=Path, action="append", help="scenario JSON (default: stressed dispatch)")
    p.add_argument("--tolerance", type=float, default=1e-6, help="relative slack on every limit")
    _stress(p)
    _common(p)

    p = sub.add_parser("export-dot", help="DOT graph of a grid, optionally colored by a placement report")
    p.add_argument("grid", type=Path)
    p.add_argument("--report", type=Path, help="placement report to color overloaded/modified lines")
    p.add_argument("-o", "--output", type=Path, help="DOT file (default: stdout)")
    _common(p)
    return parser


def parse_args(argv: list[str] | None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config is not None:
        try:
            config = json.loads(Path(args.config).read_text())
        except FileNotFoundError:
            raise InputError(f"no such file: {args.config}") from None
        except json.JSONDecodeError as exc:
            raise InputError(f"{args.config}: not valid JSON ({exc.msg}, line {exc.lineno})") from None
        if not isinstance(config, dict):
            raise InputError(f"{args.config}: expected a JSON object")
        known = vars(args)
        unknown = sorted(k for k in config if k.replace("-", "_") not in known)
        if unknown:
            raise InputError(f"{args.config}: unknown option(s) {', '.join(unknown)}")
        # explicit flags beat the config file: re-parse with config values as defaults
        sub = parser._subparsers._group_actions[0].choices[args.command]
        defaults = {}
        for k, v in config.items():
            k = k.replace("-", "_")
            if k in ("grid", "case", "scenario", "beta", "start", "report", "output", "output_dir", "save_scenario"):
                v = ([Path(x) for x in v] if isinstance(v, list) else Path(v)) if v is not None else None
            if k == "formats" and isinstance(v, list):
                v = tuple(v)
            defaults[k] = v
        sub.set_defaults(**defaults)
        args = parser.parse_args(argv)
    return args


# --------------------------------------------------------------------------
# helpers


def _load_json(path: Path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise InputError(f"no such file: {path}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: not valid JSON ({exc.msg}, line {exc.lineno})") from None


def _scenario(path: Path, model: GridModel) -> Scenario:
    sc = Scenario.from_dict(_load_json(path))
    if not sc.label:
        sc.label = Path(path).stem
    model.check_scenario(sc)
    return sc


def _dispatch(args, model: GridModel) -> np.ndarray:
    choice = getattr(args, "dispatch", "opf")
    if choice == "opf":
        return base_opf(model)
    if choice == "base":
        return model.base_injections.copy()
    return _scenario(Path(choice), model).injections


def _stressed(args, model: GridModel) -> tuple[Scenario, float, float]:
    """Scenario from --dispatch scaled by --alpha or --ratio; returns (scenario, alpha, alpha_c)."""
    p = _dispatch(args, model)
    ac, _ = alpha_c(model, p)
    if getattr(args, "alpha", None) is not None:
        alpha = args.alpha
    elif getattr(args, "ratio", None) is not None:
        alpha = args.ratio * ac
    else:
        alpha = 1.0
    label = f"ratio={alpha / ac:.6g}" if getattr(args, "ratio", None) is not None else f"alpha={alpha:.6g}"
    return scale_scenario(p, alpha, label), alpha, ac


def _options(args) -> PlacementOptions:
    return PlacementOptions(
        strategy=args.strategy, beta_tolerance=args.beta_tolerance, max_outer_iters=args.max_outer_iters,
        violation_move=args.violation_move, beta_lower=args.beta_lower, beta_upper=args.beta_upper,
        feasibility_tolerance=args.feasibility_tolerance, proximal=args.proximal,
        trust_region=args.trust_region, elastic=args.elastic, polish=args.polish,
        capacity_check=args.capacity_check,
    )


class Output:
    """Collects artifacts for one command and writes (or prints) them."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.files: list[Path] = []

    def wants(self, fmt: str) -> bool:
        return fmt in self.cfg.formats

    def _path(self, name: str) -> Path:
        self.cfg.output_dir.mkdir(parents=True, exist_ok=True)
        return self.cfg.output_dir / name

    def emit(self, kind: str, payload: dict, *, csv_text: str | None = None, dot_text: str | None = None,
             figs=(), extra: dict[str, str] | None = None) -> None:
        doc = report.envelope(kind, payload)
        text = report.dumps(doc)
        if self.cfg.output_dir is None:
            if self.wants("report-json"):
                sys.stdout.write(text)
            if self.wants("table-csv") and csv_text is not None:
                sys.stdout.write(csv_text)
            if self.wants("graph-dot") and dot_text is not None:
                sys.stdout.write(dot_text)
            return
        stem = kind.replace("-", "_")
        if self.wants("report-json"):
            self._write(f"{stem}.json", text)
        if self.wants("table-csv") and csv_text is not None:
            self._write(f"{stem}.csv", csv_text)
        if self.wants("graph-dot") and dot_text is not None:
            self._write(f"{stem}.dot", dot_text)
        for name, text_ in (extra or {}).items():
            self._write(name, text_)
        if self.wants("figure-png"):
            for suffix, draw in figs:
                path = self._path(f"{stem}_{suffix}.png")
                draw(path)
                self.files.append(path)
        for path in self.files:
            print(path)

    def _write(self, name: str, text: str) -> None:
        path = self._path(name)
        path.write_text(text)
        self.files.append(path)


# --------------------------------------------------------------------------
# commands


def cmd_import(args, out: Output) -> int:
    try:
        text = Path(args.case).read_text()
    except FileNotFoundError:
        raise InputError(f"no such file: {args.case}") from None
    model = parse_matpower(text, drop_transformers=args.drop_transformers, name=Path(args.case).stem)
    target = args.output or Path(args.case).with_suffix(".json")
    target.write_text(to_native(model))
    print(f"{model.name}: {model.N} buses, {model.M} lines, slack bus {model.slack} -> {target}")
    return EXIT_OK


def cmd_pf(args, model: GridModel, out: Output) -> int:
    beta = report.read_beta(_load_json(args.beta), model.M) if args.beta else None
    if args.scenario:
        sc = _scenario(args.scenario[0], model)
    else:
        sc, _, _ = _stressed(args, model)
    flows = dc_flows(model, sc.injections, beta, sc.outaged_lines)
    payload = report.analysis_payload(model, sc.injections, flows)
    payload["scenario"] = sc.label
    out.emit("pf", payload, csv_text=report.lines_csv(model, flows, beta))
    return EXIT_OK


def cmd_opf(args, model: GridModel, out: Output) -> int:
    p = base_opf(model)
    flows = dc_flows(model, p)
    ac, line = alpha_c(model, p)
    if args.save_scenario:
        args.save_scenario.write_text(report.dumps(Scenario(p, frozenset(), "opf").to_dict()))
    out.emit("opf", report.analysis_payload(model, p, flows, ac, line), csv_text=report.lines_csv(model, flows))
    return EXIT_OK


def cmd_alpha_c(args, model: GridModel, out: Output) -> int:
    p = _dispatch(args, model)
    ac, line = alpha_c(model, p)
    flows = dc_flows(model, p)
    out.emit("alpha-c", report.analysis_payload(model, p, flows, ac, line),
             csv_text=report.lines_csv(model, flows))
    return EXIT_OK


def _placement_outputs(out: Output, kind: str, model: GridModel, scenarios, result, options,
                       extra_payload: dict | None = None) -> int:
    payload = report.placement_payload(model, result, options.feasibility_tolerance)
    payload["scenarios"] = [sc.label for sc in scenarios]
    payload.update(extra_payload or {})
    dot = report.placement_dot(model, result, scenarios[0] if len(scenarios) == 1 else None)
    beta_doc = report.dumps(report.beta_document(result.beta_opt, kind))
    out.emit(kind, payload, csv_text=report.lines_csv(model, dc_flows(
                 model, scenarios[0].injections, result.beta_opt, scenarios[0].outaged_lines), result.beta_opt),
             dot_text=dot, extra={f"{kind.replace('-', '_')}_beta.json": beta_doc},
             figs=[("convergence", lambda p: figures.convergence_figure(result, p)),
                   ("utilization", lambda p: figures.utilization_figure(result.checks, p))])
    logger.info("%s: %s, cost %.6g, %d iterations", kind, result.status.value, result.cost, result.outer_iterations)
    return EXIT_OK if result.solved else EXIT_INFEASIBLE


def cmd_place(args, model: GridModel, out: Output) -> int:
    options = _options(args)
    if args.scenario:
        scenarios = [_scenario(p, model) for p in args.scenario]
        extra = {}
    else:
        sc, alpha, ac = _stressed(args, model)
        scenarios = [sc]
        extra = {"alpha": alpha, "alpha_c": ac, "ratio": alpha / ac}
    start = report.read_beta(_load_json(args.start), model.M) if args.start else None
    result = place(model, scenarios, options, start=start)
    return _placement_outputs(out, "place", model, scenarios, result, options, extra)


def cmd_sweep(args, model: GridModel, out: Output) -> int:
    options = _options(args)
    options.warm_start = args.warm_start
    p = _dispatch(args, model)
    outaged = {args.forced_zero} if args.forced_zero is not None else set()
    ac, _ = alpha_c(model, p, outaged=outaged)
    if args.alphas:
        alphas = args.alphas
    else:
        alphas = [r * ac for r in (args.ratios or _ratio_list("1.0:2.0:0.01"))]
    if args.forced_zero is not None:
        points = warm_start_variant(model, p, alphas, options, args.forced_zero, threads=out.cfg.threads)
    else:
        points = sweep(model, p, alphas, options, threads=out.cfg.threads)
    jumps = detect_jumps(points, args.jump_factor)
    for j in jumps:
        logger.info("cost jump between alpha/alpha_c %.4g and %.4g (%+.4g)", j.ratio_before, j.ratio_after, j.delta)
    payload = report.sweep_payload(points, jumps, ac)
    payload["forced_zero"] = args.forced_zero
    charged = args.forced_zero is not None
    out.emit("sweep", payload, csv_text=report.sweep_csv(points),
             figs=[("cost", lambda path: figures.sweep_figure(points, path, jumps, charged=charged))])
    return EXIT_OK


def cmd_robust(args, model: GridModel, out: Output) -> int:
    if not args.scenario or len(args.scenario) < 2:
        raise InputError("robust needs at least two --scenario files")
    options = _options(args)
    scenarios = [_scenario(p, model) for p in args.scenario]
    singles = [place(model, [sc], options) for sc in scenarios]
    result = place(model, scenarios, options)
    extra = {"single": [{"label": sc.label, "status": r.status.value, "cost": r.cost,
                         "modified_lines": r.modified_lines} for sc, r in zip(scenarios, singles)]}
    if all(r.solved for r in singles):
        combined, naive_cost = naive_combination(singles)
        checks = verify(model, scenarios, combined, options.feasibility_tolerance)
        extra["naive_combination"] = {"cost": naive_cost, "feasible": all(c.feasible for c in checks)}
    return _placement_outputs(out, "robust", model, scenarios, result, options, extra)


def cmd_n1(args, model: GridModel, out: Output) -> int:
    options = _options(args)
    base, alpha, ac = _stressed(args, model)
    contingencies, warnings = n1_scenarios(model, base)
    if args.lines is not None:
        keep = set(args.lines)
        contingencies = [sc for sc in contingencies if next(iter(sc.outaged_lines - base.outaged_lines)) in keep]
    for w in warnings:
        logger.warning(w)
    scenarios = [base] + contingencies
    result = place(model, scenarios, options)
    extra = {"alpha": alpha, "alpha_c": ac, "warnings": warnings}
    return _placement_outputs(out, "n1", model, scenarios, result, options, extra)


def cmd_verify(args, model: GridModel, out: Output) -> int:
    beta = report.read_beta(_load_json(args.beta), model.M) if args.beta else model.susceptances.copy()
    if args.scenario:
        scenarios = [_scenario(p, model) for p in args.scenario]
    else:
        scenarios = [_stressed(args, model)[0]]
    checks = verify(model, scenarios, beta, args.tolerance)
    ok = all(c.feasible for c in checks)
    for c in checks:
        for l in c.overloaded:
            logger.warning("%s: line %d at %.4f of its limit", c.label, l, c.utilization[l])
    payload = {"grid": model.name, "status": "feasible" if ok else "overloaded",
               "verification": report.checks_payload(checks, args.tolerance)}
    out.emit("verify", payload, csv_text=report.utilization_csv(checks),
             figs=[("utilization", lambda p: figures.utilization_figure(checks, p))])
    return EXIT_OK if ok else EXIT_INFEASIBLE


def cmd_export_dot(args, model: GridModel, out: Output) -> int:
    if args.report:
        doc = _load_json(args.report)
        beta = report.read_beta(doc, model.M)
        text = report.to_dot(model, overloaded=doc.get("overloaded_before", []),
                             modified=doc.get("modified_lines", []), beta=beta)
    else:
        text = report.to_dot(model)
    if args.output:
        args.output.write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


COMMANDS = {
    "pf": cmd_pf, "opf": cmd_opf, "alpha-c": cmd_alpha_c, "place": cmd_place, "sweep": cmd_sweep,
    "robust": cmd_robust, "n1": cmd_n1, "verify": cmd_verify, "export-dot": cmd_export_dot,
}


def _setup_logging(verbose: int) -> None:
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def main(argv: list[str] | None = None) -> int:
    try:
        args = parse_args(argv)
    except SystemExit as exc:  # argparse usage errors
        return int(exc.code) if isinstance(exc.code, int) else EXIT_INPUT
    except InputError as exc:
        print(f"factsplace: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    _setup_logging(args.verbose)
    try:
        grid_path = getattr(args, "grid", None)
        cfg = RunConfig(args.command, grid_path, args.output_dir, args.formats or ("report-json",),
                        args.threads if args.threads is not None else _default_threads(),
                        {k: v for k, v in vars(args).items()})
        out = Output(cfg)
        if args.command == "import":
            return cmd_import(args, out)
        model = read_grid(grid_path)
        return COMMANDS[args.command](args, model, out)
    except (InputError, ParseError, ValidationError, DataError) as exc:
        print(f"factsplace: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (PowerFlowError, FactsError) as exc:
        print(f"factsplace: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
