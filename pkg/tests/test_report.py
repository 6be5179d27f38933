from __future__ import annotations

import json
import math

import numpy as np
import pydot
import pytest

from factsplace import figures, report
from factsplace.errors import ValidationError
from factsplace.grid import case30, load_schema
from factsplace.optimizer import detect_jumps, sweep
from factsplace.synthetic import congested_triangle


def parse_dot(text):
    graphs = pydot.graph_from_dot_data(text)
    assert graphs and len(graphs) == 1
    g = graphs[0]
    nodes = [n for n in g.get_nodes() if n.get_name() not in ("node", "graph", "edge")]
    return g, nodes, g.get_edges()


def test_clean_and_dumps():
    doc = {"a": np.float64(1.5), "b": np.arange(3), "c": math.inf, "d": (np.bool_(True), np.int64(2))}
    assert report.clean(doc) == {"a": 1.5, "b": [0, 1, 2], "c": None, "d": [True, 2]}
    text = report.dumps({"z": 1, "a": [math.nan]})
    assert text == '{\n  "a": [\n    null\n  ],\n  "z": 1\n}\n'


def test_percent_change():
    assert report.percent_change([2.0, 0.5, 1.0], [1.0, 1.0, 1.0]).tolist() == [100.0, -50.0, 0.0]


def test_envelope_validates():
    doc = report.envelope("verify", {"status": "feasible"})
    assert doc["format"] == report.REPORT_FORMAT
    with pytest.raises(ValidationError):
        report.envelope("nonsense", {})
    with pytest.raises(ValidationError):
        report.envelope("place", {"status": "maybe"})


def test_dot_classes_and_labels(grid30, placed30):
    sc, res = placed30(1.4)
    text = report.placement_dot(grid30, res, sc)
    g, nodes, edges = parse_dot(text)
    assert len(edges) == grid30.M
    assert len(nodes) == grid30.N
    kinds = {n.get_name(): n.get_attributes()["kind"] for n in nodes}
    assert sum(k == "generator" for k in kinds.values()) == 6
    by_line = {int(e.get_attributes()["line"]): e.get_attributes() for e in edges}
    over, mod = set(res.overloaded_before), set(res.modified_lines)
    for l, attrs in by_line.items():
        cls = attrs["class"]
        assert cls == report.edge_class(l, over, mod)
        assert attrs["color"].strip('"') == report.EDGE_COLORS[cls]
        if l in mod:
            pct = 100 * (res.beta_opt[l] - grid30.susceptances[l]) / grid30.susceptances[l]
            assert attrs["label"].strip('"') == f"{pct:+.1f}%"
        else:
            assert "label" not in attrs


def test_dot_drops_outaged_lines(grid30):
    text = report.to_dot(grid30, outaged={0, 5})
    _, _, edges = parse_dot(text)
    assert len(edges) == grid30.M - 2
    assert report.to_dot(grid30, name='a "quoted" name').startswith('graph "a \\"quoted\\" name" {')


def test_placement_payload_matches_result(grid30, placed30):
    sc, res = placed30(1.4)
    doc = report.envelope("place", report.placement_payload(grid30, res, 1e-6))
    back = json.loads(report.dumps(doc))
    assert back["cost"] == res.cost
    assert back["modified_lines"] == res.modified_lines
    assert [c["line"] for c in back["corrections"]] == res.modified_lines
    assert len(back["iterations"]) == res.outer_iterations
    assert np.array_equal(report.read_beta(back, grid30.M), res.beta_opt)


def test_beta_document_roundtrip():
    beta = np.array([1.0, 2.5, 0.0])
    doc = json.loads(report.dumps(report.beta_document(beta, "x")))
    assert np.array_equal(report.read_beta(doc, 3), beta)
    with pytest.raises(ValidationError):
        report.read_beta(doc, 4)
    bad = dict(doc, susceptances=[1.0, -1.0, 0.0])
    with pytest.raises(ValidationError):
        report.read_beta(bad, 3)


def test_sweep_table_one_row_per_alpha():
    g = congested_triangle()
    p = g.base_injections
    alphas = [0.9, 0.95, 1.0, 1.02, 1.05, 1.1]
    pts = sweep(g, p, alphas)
    text = report.sweep_csv(pts)
    rows = text.strip().split("\n")
    assert len(rows) == len(alphas) + 1
    assert rows[0].split(",")[:4] == ["alpha", "ratio", "status", "cost"]
    payload = report.sweep_payload(pts, detect_jumps(pts), 0.96)
    report.envelope("sweep", payload)
    infeasible = [r for r in rows[1:] if "infeasible" in r]
    assert len(infeasible) == 1  # 1.1 is beyond the triangle's transfer capacity
    assert infeasible[0].split(",")[3] == ""  # non-finite cost is left blank


def test_lines_and_utilization_tables(grid30, placed30):
    from factsplace.powerflow import dc_flows

    sc, res = placed30(1.4)
    flows = dc_flows(grid30, sc.injections, res.beta_opt)
    rows = report.lines_csv(grid30, flows, res.beta_opt).strip().split("\n")
    assert len(rows) == grid30.M + 1
    util = report.utilization_csv(res.checks).strip().split("\n")
    assert len(util) == grid30.M + 1
    its = report.iterations_csv(res).strip().split("\n")
    assert len(its) == res.outer_iterations + 1


def test_schemas_are_valid_documents():
    import jsonschema

    for name in ("grid", "scenario", "beta", "report"):
        jsonschema.Draft202012Validator.check_schema(load_schema(name))


def test_figures_written_and_deterministic(tmp_path, grid30, placed30):
    sc, res = placed30(1.4)
    a, b = tmp_path / "a.png", tmp_path / "b.png"
    figures.convergence_figure(res, a)
    figures.convergence_figure(res, b)
    assert a.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
    assert a.read_bytes() == b.read_bytes()
    figures.utilization_figure(res.checks, tmp_path / "u.png")
    g = congested_triangle()
    pts = sweep(g, g.base_injections, [0.9, 1.0, 1.02, 1.05])
    figures.sweep_figure(pts, tmp_path / "s.png", detect_jumps(pts))
    assert (tmp_path / "u.png").stat().st_size > 0 and (tmp_path / "s.png").stat().st_size > 0
