"""Linear programs: ``min c^T x  s.t.  A x <= b,  lower <= x <= upper``.

The solve path is backed by HiGHS through :func:`scipy.optimize.linprog`
(dual simplex, deterministic). Every Optimal answer is re-checked against
the original rows before it is returned.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .errors import LpError

FEAS_TOL = 1e-8
_HIGHS_OPTIONS = {
    "primal_feasibility_tolerance": 1e-10,
    "dual_feasibility_tolerance": 1e-10,
    "presolve": True,
}


class LpStatus(str, enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


@dataclass
class LpProblem:
    num_vars: int
    objective: np.ndarray | None = None
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    names: list[str] | None = None
    _blocks: list = field(default_factory=list, repr=False)
    _rhs: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        n = self.num_vars
        self.objective = np.zeros(n) if self.objective is None else np.asarray(self.objective, float)
        self.lower = np.zeros(n) if self.lower is None else np.asarray(self.lower, float)
        self.upper = np.full(n, np.inf) if self.upper is None else np.asarray(self.upper, float)
        if self.objective.shape != (n,) or self.lower.shape != (n,) or self.upper.shape != (n,):
            raise ValueError("objective and bounds must have length num_vars")
        if np.any(self.lower > self.upper):
            raise ValueError("lower bound exceeds upper bound")

    def add_constraint(self, indices, values, rhs: float) -> None:
        """Add the row ``sum(values[k] * x[indices[k]]) <= rhs``."""
        indices = np.asarray(indices, dtype=np.int64)
        values = np.asarray(values, dtype=float)
        row = sp.csr_matrix((values, (np.zeros(len(indices), dtype=np.int64), indices)),
                            shape=(1, self.num_vars))
        self.add_rows(row, [rhs])

    def add_rows(self, matrix, rhs) -> None:
        """Add a block of rows ``matrix @ x <= rhs`` (dense or sparse)."""
        block = sp.csr_matrix(matrix, dtype=float)
        rhs = np.atleast_1d(np.asarray(rhs, dtype=float))
        if block.shape != (len(rhs), self.num_vars):
            raise ValueError(f"row block shape {block.shape} does not match rhs/num_vars")
        if not np.all(np.isfinite(block.data)) or not np.all(np.isfinite(rhs)):
            raise ValueError("constraint coefficients must be finite")
        self._blocks.append(block)
        self._rhs.append(rhs)

    @property
    def num_constraints(self) -> int:
        return int(sum(len(r) for r in self._rhs))

    def matrix(self) -> sp.csr_matrix:
        if not self._blocks:
            return sp.csr_matrix((0, self.num_vars))
        return sp.vstack(self._blocks, format="csr")

    def rhs(self) -> np.ndarray:
        return np.concatenate(self._rhs) if self._rhs else np.zeros(0)


@dataclass
class LpSolution:
    status: LpStatus
    x: np.ndarray | None = None
    objective_value: float = math.nan
    message: str = ""
    duals: np.ndarray | None = None  # row multipliers, >= 0 for "<=" rows

    @property
    def optimal(self) -> bool:
        return self.status is LpStatus.OPTIMAL


def _run_highs(c, A, b, bounds):
    kwargs = {"bounds": bounds, "method": "highs-ds", "options": _HIGHS_OPTIONS}
    if A.shape[0]:
        kwargs.update(A_ub=A, b_ub=b)
    return linprog(c, **kwargs)


def solve(problem: LpProblem) -> LpSolution:
    A, b = problem.matrix(), problem.rhs()
    c = problem.objective
    bounds = list(zip(np.where(np.isfinite(problem.lower), problem.lower, None),
                      np.where(np.isfinite(problem.upper), problem.upper, None)))
    res = _run_highs(c, A, b, bounds)
    ambiguous = "infeasible or unbounded" in res.message.lower()
    if res.status == 2 and not ambiguous:
        return LpSolution(LpStatus.INFEASIBLE, message=res.message)
    if res.status == 3 or ambiguous:
        # HiGHS may report unboundedness before establishing feasibility
        probe = _run_highs(np.zeros_like(c), A, b, bounds)
        if probe.status == 2:
            return LpSolution(LpStatus.INFEASIBLE, message=probe.message)
        if probe.status != 0:
            raise LpError(f"LP backend failed while classifying: {probe.message}")
        return LpSolution(LpStatus.UNBOUNDED, message=res.message)
    if res.status != 0:
        raise LpError(f"LP backend failed: {res.message}")

    x = np.asarray(res.x, dtype=float)
    if A.shape[0]:
        slack = A @ x - b
        # scale by the size of the terms being summed, not just the right-hand side
        tol = FEAS_TOL * (1.0 + np.abs(b) + abs(A) @ np.abs(x))
        worst = float(np.max(slack - tol))
        if worst > 0:
            raise LpError(f"solution violates a row by {worst:.3g} beyond tolerance")
    with np.errstate(invalid="ignore"):
        lo_tol = FEAS_TOL * (1.0 + np.abs(np.nan_to_num(problem.lower, posinf=0, neginf=0)))
        hi_tol = FEAS_TOL * (1.0 + np.abs(np.nan_to_num(problem.upper, posinf=0, neginf=0)))
        if np.any(problem.lower - x > lo_tol) or np.any(x - problem.upper > hi_tol):
            raise LpError("solution violates variable bounds")
    # clip bound noise so downstream exact comparisons see clean vertices
    x = np.clip(x, problem.lower, problem.upper)
    duals = None
    if A.shape[0] and getattr(res, "ineqlin", None) is not None:
        duals = -np.asarray(res.ineqlin.marginals, dtype=float)
    return LpSolution(LpStatus.OPTIMAL, x, float(c @ x), res.message, duals)


@dataclass(frozen=True)
class L1Embedding:
    """Split ``beta = center + u - v`` with ``u, v >= 0`` and cost ``sum(u + v)``.

    Variables are laid out ``[u_0..u_{M-1}, v_0..v_{M-1}]`` starting at
    ``offset``. Box limits on beta become bounds on u and v; at an LP
    optimum ``min(u_i, v_i) = 0`` so ``sum(u + v) = |beta - center|_1``.
    """

    center: np.ndarray
    offset: int = 0

    @property
    def M(self) -> int:
        return len(self.center)

    @property
    def num_vars(self) -> int:
        return 2 * self.M

    def beta(self, x: np.ndarray) -> np.ndarray:
        u = x[self.offset:self.offset + self.M]
        v = x[self.offset + self.M:self.offset + 2 * self.M]
        return self.center + u - v

    def split(self, beta: np.ndarray) -> np.ndarray:
        d = np.asarray(beta, dtype=float) - self.center
        return np.concatenate([np.maximum(d, 0.0), np.maximum(-d, 0.0)])

    def bounds(self, lo, hi) -> tuple[np.ndarray, np.ndarray]:
        """Bounds on ``(u, v)`` equivalent to the box ``lo <= beta <= hi``.

        Valid at an LP optimum (where ``min(u, v) = 0``) even when the box
        does not contain ``center``.
        """
        c = self.center
        lo = np.broadcast_to(np.asarray(lo, float), c.shape)
        hi = np.broadcast_to(np.asarray(hi, float), c.shape)
        if np.any(lo > hi):
            raise ValueError("empty susceptance box")
        u_lo = np.maximum(lo - c, 0.0)
        u_hi = np.maximum(hi - c, 0.0)
        v_lo = np.maximum(c - hi, 0.0)
        v_hi = np.maximum(c - lo, 0.0)
        return np.concatenate([u_lo, v_lo]), np.concatenate([u_hi, v_hi])

    def columns(self, G) -> np.ndarray:
        """Coefficients on (u, v) for the linear form ``G @ beta`` (constant ``G @ center`` dropped)."""
        G = np.atleast_2d(np.asarray(G, dtype=float))
        return np.hstack([G, -G])


def l1_embed(center, var_count: int | None = None, lower=None, upper=None) -> tuple[LpProblem, L1Embedding]:
    """LP fragment minimizing ``|beta - center|_1`` with optional box ``lower <= beta <= upper``."""
    center = np.asarray(center, dtype=float)
    if var_count is not None and var_count != len(center):
        raise ValueError(f"center has {len(center)} entries, expected {var_count}")
    m = len(center)
    emb = L1Embedding(center)
    lo = np.full(m, -np.inf) if lower is None else np.broadcast_to(np.asarray(lower, float), (m,))
    hi = np.full(m, np.inf) if upper is None else np.broadcast_to(np.asarray(upper, float), (m,))
    if np.any(center < lo) or np.any(center > hi):
        raise ValueError("center lies outside the susceptance box")
    lb, ub = emb.bounds(lo, hi)
    problem = LpProblem(2 * m, objective=np.ones(2 * m), lower=lb, upper=ub,
                        names=[f"up_{i}" for i in range(m)] + [f"dn_{i}" for i in range(m)])
    return problem, emb


def to_lp_format(problem: LpProblem) -> str:
    """Render ``problem`` in CPLEX LP text format (for debugging with external solvers)."""
    names = problem.names or [f"x{i}" for i in range(problem.num_vars)]

    def expr(coeffs):
        terms = [f"{'-' if v < 0 else '+'} {abs(v):.17g} {names[i]}" for i, v in coeffs if v != 0]
        text = " ".join(terms) if terms else "0 " + names[0]
        return text[2:] if text.startswith("+ ") else text

    out = ["\\ generated by factsplace", "Minimize", " obj: " + expr(enumerate(problem.objective)),
           "Subject To"]
    A, b = problem.matrix().tocsr(), problem.rhs()
    for r in range(A.shape[0]):
        lo, hi = A.indptr[r], A.indptr[r + 1]
        out.append(f" c{r}: {expr(zip(A.indices[lo:hi], A.data[lo:hi]))} <= {b[r]:.17g}")
    out.append("Bounds")
    for i, name in enumerate(names):
        lo, hi = problem.lower[i], problem.upper[i]
        if np.isinf(lo) and np.isinf(hi):
            out.append(f" {name} free")
        else:
            lo_s = "-inf" if np.isinf(lo) else f"{lo:.17g}"
            hi_s = "+inf" if np.isinf(hi) else f"{hi:.17g}"
            out.append(f" {lo_s} <= {name} <= {hi_s}")
    out.append("End")
    return "\n".join(out) + "\n"
