"""Serializable reports: JSON documents, CSV tables and DOT graphs.

Everything here is a pure function of its inputs, so identical runs give
byte-identical files. Non-finite floats become JSON ``null``.
"""

from __future__ import annotations

import csv
import io
import json
import math
from typing import Iterable, Sequence

import numpy as np

from .grid import BusKind, GridModel, Scenario, _validate
from .optimizer import Jump, PlacementResult, ScenarioCheck, SweepPoint

REPORT_FORMAT = "factsplace-report"
REPORT_VERSION = 1
BETA_FORMAT = "factsplace-beta"

EDGE_COLORS = {"overloaded": "red", "modified": "green", "both": "blue", "plain": "gray40"}
NODE_COLORS = {BusKind.CONTROLLABLE: "lightblue", BusKind.UNCONTROLLABLE: "lightyellow"}


def clean(obj):
    """Recursively convert numpy scalars/arrays and non-finite floats for JSON."""
    if isinstance(obj, dict):
        return {str(k): clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [clean(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def dumps(doc: dict) -> str:
    return json.dumps(clean(doc), indent=2, sort_keys=True) + "\n"


def envelope(kind: str, payload: dict) -> dict:
    doc = {"format": REPORT_FORMAT, "version": REPORT_VERSION, "kind": kind}
    doc.update(payload)
    _validate(clean(doc), "report")
    return doc


def percent_change(beta_opt, beta0) -> np.ndarray:
    """``100 * (beta_opt - beta0) / beta0`` per line."""
    beta_opt = np.asarray(beta_opt, dtype=float)
    beta0 = np.asarray(beta0, dtype=float)
    return 100.0 * (beta_opt - beta0) / beta0


# --------------------------------------------------------------------------
# JSON payloads


def checks_payload(checks: Sequence[ScenarioCheck], tolerance: float) -> list[dict]:
    return [
        {
            "label": c.label,
            "feasible": c.feasible,
            "max_utilization": c.max_utilization,
            "overloaded": c.overloaded,
            "utilization": c.utilization,
            "tolerance": tolerance,
        }
        for c in checks
    ]


def analysis_payload(model: GridModel, injections, flows, alpha_c: float | None = None,
                     critical_line: int | None = None) -> dict:
    limits = model.limits
    util = np.where(np.isfinite(limits), np.abs(flows) / np.where(np.isfinite(limits), limits, 1.0), 0.0)
    doc = {
        "grid": model.name,
        "buses": model.N,
        "lines": model.M,
        "injections": np.asarray(injections, dtype=float),
        "flows": np.asarray(flows, dtype=float),
        "utilization": util,
    }
    if alpha_c is not None:
        doc["alpha_c"] = float(alpha_c)
        doc["critical_line"] = int(critical_line)
    return doc


def placement_payload(model: GridModel, result: PlacementResult, tolerance: float) -> dict:
    pct = percent_change(result.beta_opt, result.beta0)
    return {
        "grid": model.name,
        "strategy": result.strategy.value,
        "status": result.status.value,
        "message": result.message,
        "cost": result.cost,
        "outer_iterations": result.outer_iterations,
        "overloaded_before": result.overloaded_before,
        "modified_lines": result.modified_lines,
        "corrections": [
            {"line": l, "from": model.lines[l].from_bus, "to": model.lines[l].to_bus,
             "beta0": float(result.beta0[l]), "beta": float(result.beta_opt[l]),
             "delta": float(result.delta[l]), "percent": float(pct[l])}
            for l in result.modified_lines
        ],
        "beta_opt": result.beta_opt,
        "iterations": [
            {"iteration": r.iteration, "cost": r.cost, "included": r.included, "added": r.added,
             "max_violation": r.max_violation, "step": r.step, "accepted": r.accepted,
             "radius": r.radius, "elastic": r.elastic, "polished": r.polished}
            for r in result.iterations
        ],
        "active_set": [list(c) for c in result.active_set],
        "verification": checks_payload(result.checks, tolerance),
    }


def sweep_payload(points: Sequence[SweepPoint], jumps: Sequence[Jump], alpha_c: float) -> dict:
    return {
        "alpha_c": alpha_c,
        "points": [
            {"alpha": p.alpha, "ratio": p.ratio, "cost": p.cost, "charged_cost": p.charged_cost,
             "status": p.status.value, "overloaded_lines": p.overloaded_lines,
             "modified_lines": p.modified_lines, "iterations": p.iterations,
             "final_beta": {str(k): v for k, v in sorted(p.per_line_final_beta.items())},
             "message": p.message}
            for p in points
        ],
        "jumps": [
            {"index": j.index, "ratio_before": j.ratio_before, "ratio_after": j.ratio_after,
             "alpha_before": j.alpha_before, "alpha_after": j.alpha_after, "delta": j.delta,
             "typical": j.typical}
            for j in jumps
        ],
    }


def beta_document(beta, label: str = "") -> dict:
    return {"format": BETA_FORMAT, "version": 1, "label": label, "susceptances": clean(np.asarray(beta, float))}


def read_beta(doc: dict, M: int) -> np.ndarray:
    """Susceptances from a beta document or from a placement report."""
    if doc.get("format") == REPORT_FORMAT and doc.get("kind") in ("place", "robust", "n1"):
        values = doc.get("beta_opt")
    else:
        _validate(doc, "beta")
        values = doc["susceptances"]
    beta = np.array(values, dtype=float)
    if beta.shape != (M,):
        from .errors import ValidationError

        raise ValidationError(f"expected {M} susceptances, got {beta.shape[0]}", "susceptances")
    return beta


# --------------------------------------------------------------------------
# CSV tables


def _csv(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow(["" if isinstance(v, float) and not math.isfinite(v) else
                    (repr(float(v)) if isinstance(v, (float, np.floating)) else v) for v in row])
    return buf.getvalue()


def _ids(lines: Iterable[int]) -> str:
    return " ".join(str(l) for l in lines)


def sweep_csv(points: Sequence[SweepPoint]) -> str:
    """One row per scaling: the overloaded/modified table plus costs."""
    return _csv(
        ["alpha", "ratio", "status", "cost", "charged_cost", "iterations", "overloaded_lines", "modified_lines"],
        [(p.alpha, p.ratio, p.status.value, p.cost, p.charged_cost, p.iterations,
          _ids(p.overloaded_lines), _ids(p.modified_lines)) for p in points],
    )


def lines_csv(model: GridModel, flows, beta=None, beta0=None) -> str:
    beta = model.susceptances if beta is None else np.asarray(beta, float)
    beta0 = model.susceptances if beta0 is None else np.asarray(beta0, float)
    limits = model.limits
    return _csv(
        ["line", "from", "to", "beta0", "beta", "percent", "flow", "limit", "utilization"],
        [(ln.index, ln.from_bus, ln.to_bus, float(beta0[ln.index]), float(beta[ln.index]),
          float(percent_change(beta[ln.index], beta0[ln.index])), float(flows[ln.index]),
          float(limits[ln.index]),
          float(abs(flows[ln.index]) / limits[ln.index]) if ln.limited else math.nan)
         for ln in model.lines],
    )


def utilization_csv(checks: Sequence[ScenarioCheck]) -> str:
    return _csv(["scenario", "line", "utilization"],
                [(c.label, l, float(u)) for c in checks for l, u in enumerate(c.utilization)])


def iterations_csv(result: PlacementResult) -> str:
    return _csv(["iteration", "cost", "included", "added", "max_violation", "step", "accepted", "elastic", "polished"],
                [(r.iteration, r.cost, r.included, r.added, r.max_violation, r.step, int(r.accepted),
                  int(r.elastic), int(r.polished)) for r in result.iterations])


# --------------------------------------------------------------------------
# DOT


def edge_class(line: int, overloaded: set[int], modified: set[int]) -> str:
    if line in overloaded and line in modified:
        return "both"
    if line in overloaded:
        return "overloaded"
    if line in modified:
        return "modified"
    return "plain"


def _quote(s: str) -> str:
    return '"' + str(s).replace("\\", "\\\\").replace('"', '\\"') + '"'


def to_dot(model: GridModel, *, overloaded: Iterable[int] = (), modified: Iterable[int] = (),
           beta=None, outaged: Iterable[int] = (), name: str | None = None) -> str:
    """Undirected DOT graph of ``model``.

    Generator buses and load buses get distinct fills; edges are colored by
    class (overloaded red, modified green, both blue) and modified edges are
    labelled with the percent susceptance change. Outaged lines are left out.
    """
    overloaded, modified, out = set(overloaded), set(modified), set(outaged)
    beta = model.susceptances if beta is None else np.asarray(beta, float)
    pct = percent_change(beta, model.susceptances)
    title = name if name is not None else (model.name or "grid")
    lines = [f"graph {_quote(title)} {{",
             "  graph [overlap=false];",
             "  node [shape=circle style=filled fontname=Helvetica];"]
    for b in model.buses:
        kind = "generator" if b.kind is BusKind.CONTROLLABLE else "load"
        lines.append(f"  b{b.id} [label={_quote(b.id + 1)} fillcolor={NODE_COLORS[b.kind]} kind={kind}];")
    for ln in model.lines:
        if ln.index in out:
            continue
        cls = edge_class(ln.index, overloaded, modified)
        attrs = [f"color={_quote(EDGE_COLORS[cls])}", f"class={cls}", f"line={ln.index}"]
        if cls in ("modified", "both"):
            attrs.append(f"label={_quote(f'{pct[ln.index]:+.1f}%')}")
            attrs.append("penwidth=2.5")
        elif cls == "overloaded":
            attrs.append("penwidth=2.5")
        lines.append(f"  b{ln.from_bus} -- b{ln.to_bus} [{' '.join(attrs)}];")
    lines.append("}")
    return "\n".join(lines) + "\n"


def placement_dot(model: GridModel, result: PlacementResult, scenario: Scenario | None = None) -> str:
    outaged = scenario.outaged_lines if scenario is not None else ()
    return to_dot(model, overloaded=result.overloaded_before, modified=result.modified_lines,
                  beta=result.beta_opt, outaged=outaged)
