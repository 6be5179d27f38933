"""Grid data model, MatPower case ingestion and the native JSON grid format.

Powers are in MW throughout; susceptances are per unit on ``base_mva``.
A line with an unknown or zero thermal rating carries ``limit = inf`` and
is never constrained.
"""

from __future__ import annotations

import enum
import json
import math
import re
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .errors import DataError, ParseError, ValidationError

NATIVE_FORMAT = "factsplace-grid"
NATIVE_VERSION = 1
SCENARIO_FORMAT = "factsplace-scenario"

# MatPower column indices (0-based).
_BUS_I, _BUS_TYPE, _PD = 0, 1, 2
_GEN_BUS, _PG, _GEN_STATUS, _PMAX, _PMIN = 0, 1, 7, 8, 9
_F_BUS, _T_BUS, _BR_X, _RATE_A, _TAP, _SHIFT, _BR_STATUS = 0, 1, 3, 5, 8, 9, 10
_REF, _ISOLATED = 3, 4


class BusKind(str, enum.Enum):
    CONTROLLABLE = "controllable"
    UNCONTROLLABLE = "uncontrollable"


@dataclass(frozen=True)
class Bus:
    id: int
    kind: BusKind
    injection_base: float
    gen_min: float
    gen_max: float
    cost_linear: float = 0.0
    source_id: int | None = None

    def __post_init__(self):
        if self.gen_min > self.gen_max:
            raise ValidationError(
                f"gen_min {self.gen_min} > gen_max {self.gen_max}", f"buses[{self.id}]"
            )


@dataclass(frozen=True)
class Line:
    index: int
    from_bus: int
    to_bus: int
    susceptance: float
    limit: float = math.inf
    source_rows: tuple[int, ...] = ()
    transformer: bool = False

    def __post_init__(self):
        where = f"lines[{self.index}]"
        if self.from_bus == self.to_bus:
            raise ValidationError("self-loop", where)
        if not self.susceptance > 0:
            raise ValidationError(f"susceptance must be positive, got {self.susceptance}", where)
        if not self.limit > 0:
            raise ValidationError(f"limit must be positive, got {self.limit}", where)

    @property
    def limited(self) -> bool:
        return math.isfinite(self.limit)


@dataclass(frozen=True)
class GridModel:
    """Immutable network: buses, lines, slack bus and MVA base.

    Construction validates dense ids, one line per bus pair and
    connectivity. Array views (``susceptances``, ``limits``, ...) are
    cached and must be treated as read-only.
    """

    buses: tuple[Bus, ...]
    lines: tuple[Line, ...]
    slack: int
    base_mva: float = 100.0
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "buses", tuple(self.buses))
        object.__setattr__(self, "lines", tuple(self.lines))
        n = len(self.buses)
        if n < 2:
            raise ValidationError("a grid needs at least two buses", "buses")
        for i, bus in enumerate(self.buses):
            if bus.id != i:
                raise ValidationError(f"bus ids must be dense 0..N-1, found {bus.id}", f"buses[{i}]")
        if not 0 <= self.slack < n:
            raise ValidationError(f"slack {self.slack} out of range", "slack")
        if not self.base_mva > 0:
            raise ValidationError("base_mva must be positive", "base_mva")
        pairs = set()
        for i, line in enumerate(self.lines):
            where = f"lines[{i}]"
            if line.index != i:
                raise ValidationError(f"line indices must be dense 0..M-1, found {line.index}", where)
            for b in (line.from_bus, line.to_bus):
                if not 0 <= b < n:
                    raise ValidationError(f"unknown bus {b}", where)
            key = frozenset((line.from_bus, line.to_bus))
            if key in pairs:
                raise ValidationError("parallel line; merge before construction", where)
            pairs.add(key)
        if not self.is_connected():
            raise ValidationError("grid graph is not connected", "lines")

    @property
    def N(self) -> int:
        return len(self.buses)

    @property
    def M(self) -> int:
        return len(self.lines)

    @cached_property
    def from_buses(self) -> np.ndarray:
        return _readonly(np.array([ln.from_bus for ln in self.lines], dtype=np.int64))

    @cached_property
    def to_buses(self) -> np.ndarray:
        return _readonly(np.array([ln.to_bus for ln in self.lines], dtype=np.int64))

    @cached_property
    def susceptances(self) -> np.ndarray:
        return _readonly(np.array([ln.susceptance for ln in self.lines], dtype=float))

    @cached_property
    def limits(self) -> np.ndarray:
        return _readonly(np.array([ln.limit for ln in self.lines], dtype=float))

    @cached_property
    def base_injections(self) -> np.ndarray:
        return _readonly(np.array([b.injection_base for b in self.buses], dtype=float))

    @cached_property
    def controllable(self) -> np.ndarray:
        return _readonly(
            np.array([b.kind is BusKind.CONTROLLABLE for b in self.buses], dtype=bool)
        )

    def is_connected(self, outaged: Iterable[int] = (), weights: np.ndarray | None = None) -> bool:
        """True when the buses form one component after removing ``outaged``
        lines and any line whose entry in ``weights`` is zero."""
        keep = np.ones(self.M, dtype=bool)
        keep[list(outaged)] = False
        if weights is not None:
            keep &= np.asarray(weights) > 0
        f = np.array([ln.from_bus for ln in self.lines], dtype=np.int64)[keep]
        t = np.array([ln.to_bus for ln in self.lines], dtype=np.int64)[keep]
        adj = sp.coo_matrix((np.ones(len(f)), (f, t)), shape=(self.N, self.N))
        ncomp, _ = connected_components(adj, directed=False)
        return ncomp == 1

    def with_susceptances(self, beta: Sequence[float]) -> GridModel:
        beta = np.asarray(beta, dtype=float)
        if beta.shape != (self.M,):
            raise ValidationError(f"expected {self.M} susceptances, got {beta.shape}")
        lines = [
            Line(ln.index, ln.from_bus, ln.to_bus, float(b), ln.limit, ln.source_rows, ln.transformer)
            for ln, b in zip(self.lines, beta)
        ]
        return GridModel(self.buses, tuple(lines), self.slack, self.base_mva, self.name)

    def check_scenario(self, scenario: Scenario) -> None:
        if scenario.injections.shape != (self.N,):
            raise ValidationError(
                f"expected {self.N} injections, got {scenario.injections.shape[0]}",
                "injections",
            )
        bad = [i for i in scenario.outaged_lines if not 0 <= i < self.M]
        if bad:
            raise ValidationError(f"unknown outaged lines {bad}", "outaged_lines")
        if not self.is_connected(scenario.outaged_lines):
            raise ValidationError(
                f"outage of lines {sorted(scenario.outaged_lines)} islands the grid",
                "outaged_lines",
            )


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def balance_tolerance(p: np.ndarray) -> float:
    return 1e-6 * (float(np.max(np.abs(p))) if len(p) else 0.0)


@dataclass(eq=False)
class Scenario:
    """One stressed configuration: bus injections plus an optional outage set."""

    injections: np.ndarray
    outaged_lines: frozenset[int] = field(default_factory=frozenset)
    label: str = ""

    def __post_init__(self):
        self.injections = np.asarray(self.injections, dtype=float)
        self.outaged_lines = frozenset(int(i) for i in self.outaged_lines)
        imbalance = float(np.sum(self.injections))
        if abs(imbalance) > balance_tolerance(self.injections):
            raise ValidationError(f"injections unbalanced by {imbalance:.6g} MW", "injections")

    def to_dict(self) -> dict:
        return {
            "format": SCENARIO_FORMAT,
            "version": NATIVE_VERSION,
            "label": self.label,
            "injections": [float(x) for x in self.injections],
            "outaged_lines": sorted(self.outaged_lines),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> Scenario:
        _validate(doc, "scenario")
        return cls(np.array(doc["injections"], dtype=float), frozenset(doc.get("outaged_lines", [])),
                   doc.get("label", ""))


# --------------------------------------------------------------------------
# MatPower ingestion

_TABLE_RE = re.compile(r"mpc\.(\w+)\s*=\s*\[")
_SCALAR_RE = re.compile(r"mpc\.baseMVA\s*=\s*([-+0-9.eE]+)\s*;")


def _strip_comment(line: str) -> str:
    # MatPower case files use '%' only for comments; strings never contain it.
    pos = line.find("%")
    return line if pos < 0 else line[:pos]


def _read_tables(text: str) -> dict[str, tuple[np.ndarray, int]]:
    """Return {name: (matrix, first line number)} for every ``mpc.name = [...]``."""
    lines = text.splitlines()
    tables: dict[str, tuple[np.ndarray, int]] = {}
    i = 0
    while i < len(lines):
        code = _strip_comment(lines[i])
        m = _TABLE_RE.search(code)
        if not m:
            i += 1
            continue
        name, start = m.group(1), i + 1
        body = [(i + 1, code[m.end():])]
        while "]" not in body[-1][1]:
            i += 1
            if i >= len(lines):
                raise ParseError(f"unterminated table mpc.{name}", start)
            body.append((i + 1, _strip_comment(lines[i])))
        last_no, last = body[-1]
        body[-1] = (last_no, last[: last.index("]")])

        rows: list[tuple[int, list[float]]] = []
        row: list[float] = []
        row_line = start

        def flush():
            nonlocal row
            if row:
                rows.append((row_line, row))
                row = []

        for lineno, chunk in body:
            stripped = chunk.rstrip()
            continued = stripped.endswith("...")
            if continued:
                chunk = stripped[:-3]
            for j, part in enumerate(chunk.split(";")):
                if j:
                    flush()
                for tok in part.replace(",", " ").split():
                    if not row:
                        row_line = lineno
                    try:
                        row.append(float(tok))
                    except ValueError:
                        raise ParseError(f"non-numeric entry {tok!r} in mpc.{name}", lineno) from None
            if not continued:
                flush()
        flush()
        if rows:
            width = len(rows[0][1])
            for lineno, r in rows:
                if len(r) != width:
                    raise ParseError(
                        f"ragged table mpc.{name}: {len(r)} columns, expected {width}", lineno
                    )
        tables[name] = (np.array([r for _, r in rows], dtype=float) if rows else np.zeros((0, 0)), start)
        i += 1
    return tables


def _linear_cost(row: np.ndarray) -> float:
    model, n = int(row[0]), int(row[3])
    coeffs = row[4:]
    if model == 2:
        # polynomial c(n-1) ... c1 c0
        return float(coeffs[n - 2]) if n >= 2 else 0.0
    if model == 1 and n >= 2:
        x0, y0, x1, y1 = coeffs[:4]
        return float((y1 - y0) / (x1 - x0)) if x1 != x0 else 0.0
    return 0.0


def parse_matpower(text: str, *, drop_transformers: bool = False, name: str = "") -> GridModel:
    """Build a :class:`GridModel` from MatPower case text.

    Only the numeric ``bus``, ``gen``, ``branch`` (and optional ``gencost``)
    matrices are read. Out-of-service branches and generators are dropped,
    parallel branches are merged (susceptances and ratings summed), several
    generators at one bus are merged, taps and phase shifts are ignored.
    With ``drop_transformers`` every branch with a nonzero tap ratio or
    phase shift is removed instead.
    """
    tables = _read_tables(text)
    for required in ("bus", "gen", "branch"):
        if required not in tables:
            raise ParseError(f"missing table mpc.{required}")
    bus, bus_line = tables["bus"]
    gen, gen_line = tables["gen"]
    branch, br_line = tables["branch"]
    if bus.shape[1] < 3:
        raise ParseError("bus table needs at least 3 columns", bus_line)
    if gen.size and gen.shape[1] < 10:
        raise ParseError("gen table needs at least 10 columns", gen_line)
    if branch.shape[1] < 11:
        raise ParseError("branch table needs at least 11 columns", br_line)
    m = _SCALAR_RE.search(text)
    base_mva = float(m.group(1)) if m else 100.0

    bus = bus[bus[:, _BUS_TYPE] != _ISOLATED]
    index_of = {int(b): i for i, b in enumerate(bus[:, _BUS_I])}
    if len(index_of) != len(bus):
        raise DataError("duplicate bus numbers")
    refs = np.flatnonzero(bus[:, _BUS_TYPE] == _REF)
    if not len(refs):
        raise DataError("case has no reference bus")
    slack = int(refs[0])

    n = len(bus)
    pd = bus[:, _PD].astype(float)
    pg = np.zeros(n)
    pmin = np.zeros(n)
    pmax = np.zeros(n)
    has_gen = np.zeros(n, dtype=bool)
    cost_num = np.zeros(n)
    cost_w = np.zeros(n)
    gencost = tables.get("gencost", (None, 0))[0]
    for k, row in enumerate(gen):
        if row[_GEN_STATUS] <= 0:
            continue
        b = index_of.get(int(row[_GEN_BUS]))
        if b is None:
            raise DataError(f"generator {k + 1} at unknown bus {int(row[_GEN_BUS])}")
        has_gen[b] = True
        pg[b] += row[_PG]
        pmax[b] += row[_PMAX]
        pmin[b] += row[_PMIN]
        c = _linear_cost(gencost[k]) if gencost is not None and k < len(gencost) else 1.0
        w = max(row[_PMAX], 1e-9)
        cost_num[b] += c * w
        cost_w[b] += w

    buses = []
    for i in range(n):
        if has_gen[i]:
            buses.append(Bus(i, BusKind.CONTROLLABLE, float(pg[i] - pd[i]), float(pmin[i] - pd[i]),
                             float(pmax[i] - pd[i]), float(cost_num[i] / cost_w[i]), int(bus[i, _BUS_I])))
        else:
            buses.append(Bus(i, BusKind.UNCONTROLLABLE, float(-pd[i]), float(-pd[i]), float(-pd[i]),
                             0.0, int(bus[i, _BUS_I])))

    groups: dict[tuple[int, int], list[tuple[int, float, float, bool]]] = {}
    for r, row in enumerate(branch):
        if row[_BR_STATUS] <= 0:
            continue
        fb, tb = index_of.get(int(row[_F_BUS])), index_of.get(int(row[_T_BUS]))
        if fb is None or tb is None:
            continue  # touches an isolated bus
        x = row[_BR_X]
        if not x > 0:
            raise DataError(f"branch {r + 1} ({int(row[_F_BUS])}-{int(row[_T_BUS])}) has nonpositive reactance {x}")
        tap, shift = row[_TAP], row[_SHIFT]
        is_xfmr = (tap not in (0.0, 1.0)) or shift != 0.0
        if drop_transformers and is_xfmr:
            continue
        rate = row[_RATE_A]
        key = (min(fb, tb), max(fb, tb))
        groups.setdefault(key, []).append((r + 1, 1.0 / x, rate if rate > 0 else math.inf, is_xfmr))

    # first-appearance order keeps line numbering close to the source file
    lines = []
    for idx, ((fb, tb), members) in enumerate(sorted(groups.items(), key=lambda kv: min(m[0] for m in kv[1]))):
        beta = math.fsum(m[1] for m in members)
        limit = math.inf if any(math.isinf(m[2]) for m in members) else math.fsum(m[2] for m in members)
        lines.append(Line(idx, fb, tb, beta, limit, tuple(sorted(m[0] for m in members)),
                          any(m[3] for m in members)))
    return GridModel(tuple(buses), tuple(lines), slack, base_mva, name)


def load_matpower(path, **kwargs) -> GridModel:
    with open(path) as fh:
        text = fh.read()
    kwargs.setdefault("name", str(path).rsplit("/", 1)[-1].rsplit(".", 1)[0])
    return parse_matpower(text, **kwargs)


def case30() -> GridModel:
    """The MatPower 30-bus case shipped with the package."""
    text = resources.files("factsplace").joinpath("data/case30.m").read_text()
    return parse_matpower(text, name="case30")


# --------------------------------------------------------------------------
# native format

_SCHEMAS: dict[str, dict] = {}


def load_schema(name: str) -> dict:
    if name not in _SCHEMAS:
        text = resources.files("factsplace").joinpath(f"schemas/{name}.schema.json").read_text()
        _SCHEMAS[name] = json.loads(text)
    return _SCHEMAS[name]


def _validate(doc, schema_name: str) -> None:
    import jsonschema

    validator = jsonschema.Draft202012Validator(load_schema(schema_name))
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        path = "/".join(str(p) for p in err.absolute_path) or "<root>"
        raise ValidationError(err.message, path)


def to_dict(model: GridModel) -> dict:
    return {
        "format": NATIVE_FORMAT,
        "version": NATIVE_VERSION,
        "name": model.name,
        "base_mva": model.base_mva,
        "slack": model.slack,
        "buses": [
            {
                "id": b.id,
                "kind": b.kind.value,
                "injection_base": b.injection_base,
                "gen_min": b.gen_min,
                "gen_max": b.gen_max,
                "cost_linear": b.cost_linear,
                "source_id": b.source_id,
            }
            for b in model.buses
        ],
        "lines": [
            {
                "index": ln.index,
                "from": ln.from_bus,
                "to": ln.to_bus,
                "susceptance": ln.susceptance,
                "limit": ln.limit if ln.limited else None,
                "source_rows": list(ln.source_rows),
                "transformer": ln.transformer,
            }
            for ln in model.lines
        ],
    }


def from_dict(doc: dict) -> GridModel:
    _validate(doc, "grid")
    buses = tuple(
        Bus(b["id"], BusKind(b["kind"]), float(b["injection_base"]), float(b["gen_min"]),
            float(b["gen_max"]), float(b.get("cost_linear", 0.0)), b.get("source_id"))
        for b in doc["buses"]
    )
    lines = tuple(
        Line(ln["index"], ln["from"], ln["to"], float(ln["susceptance"]),
             math.inf if ln.get("limit") is None else float(ln["limit"]),
             tuple(ln.get("source_rows", ())), bool(ln.get("transformer", False)))
        for ln in doc["lines"]
    )
    return GridModel(buses, lines, doc["slack"], float(doc["base_mva"]), doc.get("name", ""))


def to_native(model: GridModel) -> str:
    return json.dumps(to_dict(model), indent=1) + "\n"


def from_native(text: str) -> GridModel:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"not valid JSON: {exc.msg}", f"line {exc.lineno}") from None
    return from_dict(doc)


def read_grid(path) -> GridModel:
    """Load a grid from a native ``.json`` file or a MatPower ``.m`` file."""
    path = str(path)
    with open(path) as fh:
        text = fh.read()
    if path.endswith(".m"):
        return parse_matpower(text, name=path.rsplit("/", 1)[-1][:-2])
    return from_native(text)
