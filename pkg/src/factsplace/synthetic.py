"""Synthetic grids for tests, examples and timing runs."""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from .grid import Bus, BusKind, GridModel, Line
from .optimizer import bridges
from .powerflow import dc_flows


def random_grid(n_buses: int, n_lines: int | None = None, *, seed: int = 0, gen_fraction: float = 0.2,
                margin: tuple[float, float] = (1.3, 3.0), locality: int = 8, name: str = "") -> GridModel:
    """Connected random grid whose base injections respect every line limit.

    A random tree (each bus attaches to one of the ``locality`` previous
    buses) is topped up with extra local lines until ``n_lines`` exist.
    Generators share the total load in proportion to capacity; each limit
    is the base flow magnitude times a draw from ``margin``, tripled on
    bridges (whose flow no susceptance change can move).
    """
    if n_buses < 2:
        raise ValueError("need at least two buses")
    rng = np.random.default_rng(seed)
    n_lines = n_lines if n_lines is not None else int(1.4 * n_buses)
    if n_lines < n_buses - 1:
        raise ValueError("too few lines for a connected grid")
    edges: list[tuple[int, int]] = []
    seen: set[tuple[int, int]] = set()
    for b in range(1, n_buses):
        a = int(rng.integers(max(0, b - locality), b))
        edges.append((a, b))
        seen.add((a, b))
    max_edges = n_buses * (n_buses - 1) // 2
    if n_lines > max_edges:
        raise ValueError("more lines than bus pairs")
    span = max(locality, 2)
    while len(edges) < n_lines:
        a = int(rng.integers(0, n_buses))
        b = int(rng.integers(max(0, a - span), min(n_buses, a + span + 1)))
        if len(edges) > 0.9 * max_edges or n_buses <= 2 * span:
            b = int(rng.integers(0, n_buses))
        key = (min(a, b), max(a, b))
        if a == b or key in seen:
            continue
        seen.add(key)
        edges.append(key)

    n_gen = max(1, int(round(gen_fraction * n_buses)))
    gens = np.sort(rng.choice(n_buses, size=n_gen, replace=False))
    load = -rng.uniform(1.0, 20.0, size=n_buses)
    load[gens] = 0.0
    cap = rng.uniform(20.0, 120.0, size=n_gen)
    total = -load.sum()
    scale = total / cap.sum()
    if scale > 0.9:
        cap *= scale / 0.9
    p = load.copy()
    p[gens] = cap * total / cap.sum()
    p[gens[0]] -= p.sum()

    beta = rng.uniform(2.0, 30.0, size=len(edges))
    buses = []
    gen_set = set(int(g) for g in gens)
    for i in range(n_buses):
        if i in gen_set:
            c = float(cap[np.searchsorted(gens, i)])
            buses.append(Bus(i, BusKind.CONTROLLABLE, float(p[i]), 0.0, c, float(rng.uniform(1.0, 4.0))))
        else:
            buses.append(Bus(i, BusKind.UNCONTROLLABLE, float(p[i]), float(p[i]), float(p[i])))
    unlimited = [Line(k, a, b, float(beta[k])) for k, (a, b) in enumerate(edges)]
    draft = GridModel(tuple(buses), tuple(unlimited), int(gens[0]), 100.0, name)
    flows = np.abs(dc_flows(draft, p))
    factor = rng.uniform(*margin, size=len(edges))
    factor[sorted(bridges(draft))] *= 3.0
    lim = np.maximum(flows * factor, 1.0)
    lines = tuple(replace(ln, limit=float(lim[ln.index])) for ln in unlimited)
    return GridModel(tuple(buses), lines, int(gens[0]), 100.0, name or f"random-{n_buses}-{len(edges)}-{seed}")


def triangle(p1: float = 1.0, p2: float = 0.5, b12: float = 1.0, b13: float = 1.0, b23: float = 1.0,
             limits=(np.inf, np.inf, np.inf), name: str = "triangle") -> GridModel:
    """Three buses, lines 1-2, 1-3, 2-3 (indices 0, 1, 2); bus 3 is the slack and balances."""
    p3 = -p1 - p2
    buses = (
        Bus(0, BusKind.UNCONTROLLABLE, p1, p1, p1),
        Bus(1, BusKind.UNCONTROLLABLE, p2, p2, p2),
        Bus(2, BusKind.CONTROLLABLE, p3, p3 - abs(p3), p3 + abs(p3) + 1.0),
    )
    lines = (Line(0, 0, 1, b12, limits[0]), Line(1, 0, 2, b13, limits[1]), Line(2, 1, 2, b23, limits[2]))
    return GridModel(buses, lines, 2, 1.0, name)


def perturb_loads(model: GridModel, rng: np.random.Generator, spread: float = 0.7) -> GridModel:
    """Copy of ``model`` with each load multiplied by ``1 + X``, ``X ~ U(-spread, spread)``.

    Controllable buses keep their limits shifted by the change in local
    load; base injections are left for a fresh dispatch to rebalance.
    """
    buses = []
    for b in model.buses:
        if b.kind is BusKind.UNCONTROLLABLE:
            p = b.injection_base * (1.0 + float(rng.uniform(-spread, spread)))
            buses.append(replace(b, injection_base=p, gen_min=p, gen_max=p))
        else:
            buses.append(b)
    load = sum(b.injection_base for b in buses if b.kind is BusKind.UNCONTROLLABLE)
    ctrl = [i for i, b in enumerate(buses) if b.kind is BusKind.CONTROLLABLE]
    room = sum(buses[i].gen_max for i in ctrl)
    # split the new total over controllable buses by capacity so the model stays balanced
    for i in ctrl:
        b = buses[i]
        share = -load * (b.gen_max / room if room > 0 else 1.0 / len(ctrl))
        buses[i] = replace(b, injection_base=float(np.clip(share, b.gen_min, b.gen_max)))
    return replace(model, buses=tuple(buses), name=f"{model.name}-perturbed")


def congested_triangle() -> GridModel:
    """Triangle at unit susceptances with line 1-3 overloaded (limits 0.4, 0.8, 0.8).

    Feasible corrections need 0.2 <= p12 <= 0.3, a non-convex region of
    susceptance space; the second critical scaling is 16/15.
    """
    return triangle(limits=(0.4, 0.8, 0.8), name="triangle-congested")
