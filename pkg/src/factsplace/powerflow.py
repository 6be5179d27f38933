"""DC power flow on the susceptance-weighted graph Laplacian.

The Laplacian is grounded at the slack bus (slack row and column removed),
which fixes the phase gauge and gives the same line flows as the
pseudo-inverse for a connected graph. Phases are in radians, injections
and flows in MW; ``base_mva`` converts between the two.
"""

from __future__ import annotations

import threading
from collections import OrderedDict
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import PowerFlowError
from .grid import GridModel, balance_tolerance


@dataclass(frozen=True)
class FlowSolution:
    phases: np.ndarray
    flows: np.ndarray


class LaplacianSystem:
    """Assembled Laplacian plus the factorization of its grounded block.

    Immutable once built; ``solve`` may be called concurrently.
    """

    def __init__(self, matrix: sp.csr_matrix, slack: int, beta: np.ndarray,
                 from_buses: np.ndarray, to_buses: np.ndarray, base_mva: float,
                 outaged: frozenset[int]):
        self.matrix = matrix
        self.slack = slack
        self.beta = beta
        self.from_buses = from_buses
        self.to_buses = to_buses
        self.base_mva = base_mva
        self.outaged = outaged
        n = matrix.shape[0]
        self._keep = np.delete(np.arange(n), slack)
        reduced = matrix[self._keep][:, self._keep].tocsc()
        try:
            # symmetric mode: no row pivoting, so U's diagonal holds the LDL^T pivots
            self._lu = splu(reduced, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                            options={"SymmetricMode": True})
        except RuntimeError as exc:
            raise PowerFlowError(f"grounded Laplacian is singular: {exc}") from None
        self.pivots = self._lu.U.diagonal()
        if np.any(self.pivots <= 0):
            raise PowerFlowError("grounded Laplacian is not positive definite")

    @property
    def N(self) -> int:
        return self.matrix.shape[0]

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Grounded solve ``L x = rhs``; returns full-length x with x[slack] = 0.

        ``rhs`` may be a vector or an N x k matrix; the slack row is ignored.
        """
        rhs = np.asarray(rhs, dtype=float)
        out = np.zeros_like(rhs)
        out[self._keep] = self._lu.solve(np.ascontiguousarray(rhs[self._keep]))
        return out

    def incidence_solves(self, lines: Sequence[int]) -> np.ndarray:
        """Columns ``L^+ (e_from - e_to)`` for the given lines, shape N x k."""
        lines = np.asarray(lines, dtype=np.int64)
        rhs = np.zeros((self.N, len(lines)))
        cols = np.arange(len(lines))
        rhs[self.from_buses[lines], cols] += 1.0
        rhs[self.to_buses[lines], cols] -= 1.0
        return self.solve(rhs) if len(lines) else rhs

    def line_differences(self, x: np.ndarray) -> np.ndarray:
        """x[from] - x[to] per line (rows of a vector or matrix)."""
        return x[self.from_buses] - x[self.to_buses]


def effective_susceptances(model: GridModel, susceptances=None, outaged: Iterable[int] = ()) -> np.ndarray:
    beta = np.array(model.susceptances if susceptances is None else susceptances, dtype=float)
    if beta.shape != (model.M,):
        raise PowerFlowError(f"expected {model.M} susceptances, got shape {beta.shape}")
    if np.any(beta < 0) or not np.all(np.isfinite(beta)):
        raise PowerFlowError("susceptances must be finite and nonnegative")
    beta[list(outaged)] = 0.0
    return beta


def assemble(model: GridModel, susceptances=None, outaged: Iterable[int] = ()) -> LaplacianSystem:
    """Build and factor the Laplacian for ``susceptances`` with ``outaged`` lines removed."""
    outaged = frozenset(int(i) for i in outaged)
    beta = effective_susceptances(model, susceptances, outaged)
    if not model.is_connected(outaged, weights=beta):
        raise PowerFlowError(
            f"network is disconnected with outages {sorted(outaged)} and zero-susceptance lines"
        )
    f, t, n = model.from_buses, model.to_buses, model.N
    rows = np.concatenate([f, t, f, t])
    cols = np.concatenate([t, f, f, t])
    vals = np.concatenate([-beta, -beta, beta, beta])
    matrix = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    matrix.sum_duplicates()
    beta.setflags(write=False)
    return LaplacianSystem(matrix, model.slack, beta, f, t, model.base_mva, outaged)


class SystemCache:
    """LRU of factorized systems keyed on (outage set, exact susceptance bytes)."""

    def __init__(self, maxsize: int = 64):
        self.maxsize = maxsize
        self._items: OrderedDict = OrderedDict()
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def get(self, model: GridModel, susceptances=None, outaged: Iterable[int] = ()) -> LaplacianSystem:
        outaged = frozenset(int(i) for i in outaged)
        beta = np.asarray(model.susceptances if susceptances is None else susceptances, dtype=float)
        key = (model.from_buses.tobytes(), model.to_buses.tobytes(), model.slack, model.base_mva,
               outaged, beta.tobytes())
        with self._lock:
            system = self._items.get(key)
            if system is not None:
                self._items.move_to_end(key)
                self.hits += 1
                return system
        system = assemble(model, beta, outaged)
        with self._lock:
            self.misses += 1
            self._items[key] = system
            while len(self._items) > self.maxsize:
                self._items.popitem(last=False)
        return system


def solve_flows(system: LaplacianSystem, injections) -> FlowSolution:
    p = np.asarray(injections, dtype=float)
    if p.shape != (system.N,):
        raise PowerFlowError(f"expected {system.N} injections, got shape {p.shape}")
    imbalance = float(np.sum(p))
    if abs(imbalance) > balance_tolerance(p):
        raise PowerFlowError(f"injections unbalanced by {imbalance:.6g} MW")
    theta = system.solve(p / system.base_mva)
    residual = system.base_mva * (system.matrix @ theta) - p
    # the slack row absorbs the tolerated imbalance
    residual[system.slack] += imbalance
    scale = max(1.0, float(np.max(np.abs(p))))
    if np.max(np.abs(residual)) > 1e-8 * scale:
        raise PowerFlowError("Laplacian solve failed to meet residual tolerance")
    flows = system.base_mva * system.beta * system.line_differences(theta)
    return FlowSolution(theta, flows)


def dc_flows(model: GridModel, injections, susceptances=None, outaged: Iterable[int] = ()) -> np.ndarray:
    return solve_flows(assemble(model, susceptances, outaged), injections).flows


def alpha_c(model: GridModel, base_injections, susceptances=None,
            outaged: Iterable[int] = ()) -> tuple[float, int]:
    """Smallest uniform scaling of ``base_injections`` that loads some line to its limit.

    Returns ``(alpha_c, critical_line)``. Unlimited lines, outaged lines and
    lines carrying (numerically) zero flow are skipped.
    """
    flows = dc_flows(model, base_injections, susceptances, outaged)
    mag = np.abs(flows)
    limits = model.limits
    tiny = 1e-12 * max(1.0, float(np.max(mag)) if len(mag) else 0.0)
    mask = np.isfinite(limits) & (mag > tiny)
    mask[list(outaged)] = False
    if not mask.any():
        raise PowerFlowError("unstressable: no limited line carries flow")
    ratios = np.full(model.M, np.inf)
    ratios[mask] = limits[mask] / mag[mask]
    line = int(np.argmin(ratios))
    return float(ratios[line]), line


# --------------------------------------------------------------------------
# closed forms for the three-bus loop (buses 1, 2, 3; lines 12, 13, 23)

def _triangle_denominator(b12, b13, b23):
    if min(b12, b13, b23) <= 0:
        raise ValueError("triangle susceptances must be positive")
    return b12 * b13 + b12 * b23 + b13 * b23


def triangle_flow(p1: float, p2: float, b12: float, b13: float, b23: float) -> float:
    """Flow 1 -> 2 on the loop when bus 3 balances ``p1 + p2``."""
    return b12 * (p1 * b23 - p2 * b13) / _triangle_denominator(b12, b13, b23)


def triangle_flows(p1, p2, b12, b13, b23) -> tuple[float, float, float]:
    """All three loop flows (1->2, 1->3, 2->3)."""
    d = _triangle_denominator(b12, b13, b23)
    p3 = -p1 - p2
    f12 = b12 * (p1 * b23 - p2 * b13) / d
    f13 = b13 * (p1 * b23 - p3 * b12) / d
    f23 = b23 * (p2 * b13 - p3 * b12) / d
    return f12, f13, f23


def triangle_sensitivities(p1, p2, b12, b13, b23) -> tuple[float, float]:
    """(d f12 / d b12, d f12 / d b23) at fixed injections."""
    d = _triangle_denominator(b12, b13, b23)
    f12, _, f23 = triangle_flows(p1, p2, b12, b13, b23)
    return b13 * b23 * f12 / (b12 * d), b12 * b13 * f23 / (b23 * d)
