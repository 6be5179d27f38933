"""Base dispatch, stress scenarios and least-cost susceptance placement.

Placement minimizes ``sum |beta - beta0|`` subject to ``|flow_l(beta)| <= f_l``
for every line of every scenario. The flow constraints are nonconvex in
beta, so they are linearized about the current iterate and the resulting
LP is solved repeatedly (sequential LP). The ``improved`` strategy keeps
only an active subset of the one-sided constraints in the LP and grows it
with constraints found violated by an exact re-solve after each step; the
``direct`` strategy linearizes every constraint every iteration.
"""

from __future__ import annotations

import enum
import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import networkx as nx
import numpy as np
import scipy.sparse as sp
from scipy.optimize import minimize

from .errors import FactsError, PowerFlowError, ValidationError
from .grid import GridModel, Scenario, balance_tolerance
from .linearize import flow_jacobian
from .lp import FEAS_TOL, LpProblem, LpStatus, l1_embed, solve as lp_solve
from .powerflow import SystemCache, alpha_c as _alpha_c, solve_flows

logger = logging.getLogger(__name__)


class Strategy(str, enum.Enum):
    DIRECT = "direct"
    IMPROVED = "improved"


class ViolationMove(str, enum.Enum):
    MOST_VIOLATED = "most-violated"
    ALL_VIOLATED = "all-violated"


class PlacementStatus(str, enum.Enum):
    SOLVED = "solved"
    INFEASIBLE_LP = "infeasible-lp"
    ITER_LIMIT = "iter-limit"


@dataclass
class PlacementOptions:
    strategy: Strategy = Strategy.IMPROVED
    beta_tolerance: float | None = None  # None -> 1e-8 * max(beta0)
    max_outer_iters: int = 50
    violation_move: ViolationMove = ViolationMove.ALL_VIOLATED
    beta_lower: float = 0.0
    beta_upper: float | Sequence[float] | None = None
    feasibility_tolerance: float = 1e-6
    report_threshold: float = 1e-6  # |delta| / beta0 above which a line counts as modified
    warm_start: bool = False  # sweeps only: start each point from the previous optimum
    trust_region: bool = True
    penalty: float = 1.0  # initial weight on relative overloads in the step-acceptance merit
    proximal: float = 1e-3  # weight of |beta - beta_k|_1 added to each LP objective
    elastic: bool = True
    elastic_penalty: float = 1e3  # price of relative constraint slack in restoration LPs
    polish: bool = True
    capacity_check: bool = True  # stop early when no flow within limits exists

    def __post_init__(self):
        self.strategy = Strategy(self.strategy)
        self.violation_move = ViolationMove(self.violation_move)
        if self.beta_tolerance is not None and not self.beta_tolerance > 0:
            raise ValueError("beta_tolerance must be positive")
        if self.max_outer_iters < 1:
            raise ValueError("max_outer_iters must be at least 1")
        if self.beta_lower < 0:
            raise ValueError("beta_lower must be nonnegative")
        if self.feasibility_tolerance < 0:
            raise ValueError("feasibility_tolerance must be nonnegative")


# (scenario index, line index, sigma) ; sigma = +1 bounds flow from above, -1 from below
Constraint = tuple[int, int, int]


class ActiveSet:
    """Included one-sided constraints. Only ever grows during a run."""

    def __init__(self, initial: Iterable[Constraint] = ()):
        self._included: set[Constraint] = set()
        self.add(initial)

    def add(self, constraints: Iterable[Constraint]) -> list[Constraint]:
        new = sorted(set(constraints) - self._included)
        self._included.update(new)
        return new

    def __contains__(self, c: Constraint) -> bool:
        return c in self._included

    def __len__(self) -> int:
        return len(self._included)

    def __iter__(self):
        return iter(sorted(self._included))

    def lines_for(self, scenario: int) -> list[int]:
        return sorted({l for s, l, _ in self._included if s == scenario})


@dataclass
class IterationRecord:
    iteration: int
    cost: float
    included: int
    added: int
    max_violation: float  # worst relative overload of exact flows at the trial point
    step: float  # max |beta_trial - beta_old|
    accepted: bool = True
    radius: float = math.inf  # step box half-width in force after this iteration
    elastic: bool = False  # step came from the slack-priced LP
    polished: bool = False  # trial point was refined on its support


@dataclass
class ScenarioCheck:
    label: str
    utilization: np.ndarray  # |flow| / limit, 0 for unlimited or outaged lines
    overloaded: list[int]

    @property
    def max_utilization(self) -> float:
        return float(np.max(self.utilization)) if len(self.utilization) else 0.0

    @property
    def feasible(self) -> bool:
        return not self.overloaded


@dataclass
class PlacementResult:
    beta_opt: np.ndarray
    beta0: np.ndarray
    status: PlacementStatus
    iterations: list[IterationRecord]
    modified_lines: list[int]
    overloaded_before: list[int]
    active_set: list[Constraint]
    checks: list[ScenarioCheck]
    strategy: Strategy = Strategy.IMPROVED
    message: str = ""

    @property
    def delta(self) -> np.ndarray:
        return self.beta_opt - self.beta0

    @property
    def cost(self) -> float:
        return math.fsum(np.abs(self.delta))

    @property
    def solved(self) -> bool:
        return self.status is PlacementStatus.SOLVED

    @property
    def outer_iterations(self) -> int:
        return len(self.iterations)


# --------------------------------------------------------------------------
# base case and stress


def base_opf(model: GridModel, *, max_rounds: int = 100) -> np.ndarray:
    """Least-cost DC dispatch of the controllable buses respecting line limits.

    Uses linear costs ``cost_linear * p`` and generation bounds; line limits
    are generated lazily (only lines found overloaded enter the LP).
    """
    ctrl = np.flatnonzero(model.controllable)
    if not len(ctrl):
        raise FactsError("no controllable bus to dispatch")
    fixed = np.flatnonzero(~model.controllable)
    p_fixed = model.base_injections[fixed]
    lo = np.array([model.buses[i].gen_min for i in ctrl])
    hi = np.array([model.buses[i].gen_max for i in ctrl])
    cost = np.array([model.buses[i].cost_linear for i in ctrl])

    problem = LpProblem(len(ctrl), objective=cost, lower=lo, upper=hi)
    need = -math.fsum(p_fixed)
    ones = np.ones((1, len(ctrl)))
    problem.add_rows(ones, [need])
    problem.add_rows(-ones, [-need])

    system = SystemCache(maxsize=1).get(model)
    included: set[int] = set()
    limits = model.limits
    for _ in range(max_rounds):
        sol = lp_solve(problem)
        if not sol.optimal:
            raise FactsError(f"no feasible base dispatch ({sol.status.value})")
        p = np.zeros(model.N)
        p[ctrl] = sol.x
        p[fixed] = p_fixed
        # put the LP's balance residual on the largest controllable unit
        p[ctrl[np.argmax(hi - lo)]] -= math.fsum(p)
        flows = solve_flows(system, p).flows
        over = [l for l in np.flatnonzero(np.isfinite(limits) & (np.abs(flows) > limits * (1 + 1e-9)))
                if l not in included]
        if not over:
            return p
        W = system.incidence_solves(over)  # N x k
        H = (model.susceptances[over][:, None] * W.T)  # flow_l = H[l] @ p for balanced p
        f = limits[over]
        Hc, Hf = H[:, ctrl] / f[:, None], (H[:, fixed] @ p_fixed) / f
        problem.add_rows(Hc, 1.0 - Hf)
        problem.add_rows(-Hc, 1.0 + Hf)
        included.update(int(l) for l in over)
    raise FactsError("base dispatch did not settle within the round limit")


def scale_scenario(p_star, alpha: float, label: str | None = None) -> Scenario:
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    return Scenario(alpha * np.asarray(p_star, dtype=float), frozenset(),
                    label if label is not None else f"alpha={alpha:.6g}")


def line_graph(model: GridModel, outaged: Iterable[int] = ()) -> nx.Graph:
    g = nx.Graph()
    g.add_nodes_from(range(model.N))
    out = set(outaged)
    for ln in model.lines:
        if ln.index not in out:
            g.add_edge(ln.from_bus, ln.to_bus, index=ln.index)
    return g


def bridges(model: GridModel, outaged: Iterable[int] = ()) -> set[int]:
    g = line_graph(model, outaged)
    return {g.edges[u, v]["index"] for u, v in nx.bridges(g)}


def n1_scenarios(model: GridModel, base: Scenario) -> tuple[list[Scenario], list[str]]:
    """One scenario per single-line outage that keeps the grid connected.

    Returns ``(scenarios, warnings)``; each bridge line yields a warning
    instead of a scenario.
    """
    model.check_scenario(base)
    cut = bridges(model, base.outaged_lines)
    scenarios, warnings = [], []
    for ln in model.lines:
        if ln.index in base.outaged_lines:
            continue
        if ln.index in cut:
            warnings.append(f"line {ln.index} ({ln.from_bus}-{ln.to_bus}) is a bridge; outage skipped")
            continue
        label = f"{base.label} N-1 line {ln.index}".strip()
        scenarios.append(Scenario(base.injections.copy(), base.outaged_lines | {ln.index}, label))
    return scenarios, warnings


# --------------------------------------------------------------------------
# exact checks


def _limited_lines(model: GridModel, scenario: Scenario) -> np.ndarray:
    mask = np.isfinite(model.limits)
    mask[list(scenario.outaged_lines)] = False
    return mask


def exact_flows(model: GridModel, scenarios: Sequence[Scenario], beta, cache: SystemCache | None = None):
    cache = cache or SystemCache(maxsize=len(scenarios))
    return [solve_flows(cache.get(model, beta, s.outaged_lines), s.injections).flows for s in scenarios]


def violations(model: GridModel, scenarios: Sequence[Scenario], flows: Sequence[np.ndarray],
               tolerance: float) -> list[tuple[Constraint, float]]:
    """One-sided constraints with ``sigma * flow > limit * (1 + tolerance)``, in index order,
    paired with their relative excess ``(sigma * flow - limit) / limit``."""
    out = []
    f = model.limits
    for s, (sc, fl) in enumerate(zip(scenarios, flows)):
        mask = _limited_lines(model, sc)
        for sigma in (1, -1):
            excess = np.where(mask, (sigma * fl - f) / np.where(mask, f, 1.0), -np.inf)
            for l in np.flatnonzero(excess > tolerance):
                out.append(((s, int(l), sigma), float(excess[l])))
    out.sort(key=lambda item: item[0])
    return out


def verify(model: GridModel, scenarios: Sequence[Scenario], beta, tolerance: float = 1e-6,
           cache: SystemCache | None = None) -> list[ScenarioCheck]:
    """Exact per-scenario utilization of every limited line at ``beta``."""
    checks = []
    for sc, fl in zip(scenarios, exact_flows(model, scenarios, beta, cache)):
        mask = _limited_lines(model, sc)
        util = np.zeros(model.M)
        util[mask] = np.abs(fl[mask]) / model.limits[mask]
        over = [int(l) for l in np.flatnonzero(util > 1.0 + tolerance)]
        checks.append(ScenarioCheck(sc.label, util, over))
    return checks


def transfer_feasible(model: GridModel, scenario: Scenario) -> bool:
    """Whether some line flows within the limits deliver the scenario's injections.

    Any DC flow with nonnegative susceptances is such a flow, so False
    proves that no placement can clear the scenario. With unbounded
    susceptances the converse also holds: a feasible flow can be made
    acyclic and then realized by potentials.
    """
    live = np.array([l.index not in scenario.outaged_lines for l in model.lines])
    cols = np.flatnonzero(live)
    lim = model.limits[cols]
    inc = sp.csr_matrix((np.concatenate([np.ones(len(cols)), -np.ones(len(cols))]),
                         (np.concatenate([model.from_buses[cols], model.to_buses[cols]]),
                          np.tile(np.arange(len(cols)), 2))), shape=(model.N, len(cols)))
    problem = LpProblem(len(cols), lower=-lim, upper=lim)
    p = scenario.injections
    tol = balance_tolerance(p) + FEAS_TOL * (1.0 + np.abs(p))
    problem.add_rows(inc, p + tol)
    problem.add_rows(-inc, -p + tol)
    return lp_solve(problem).optimal


# --------------------------------------------------------------------------
# placement


def _all_constraints(model: GridModel, scenarios: Sequence[Scenario]) -> list[Constraint]:
    out = []
    for s, sc in enumerate(scenarios):
        for l in np.flatnonzero(_limited_lines(model, sc)):
            out.extend([(s, int(l), 1), (s, int(l), -1)])
    return out


def _linearized_rows(model, scenarios, beta_k, constraints, cache):
    """Rows ``H @ (beta - beta_k) <= r`` of the constraints linearized about ``beta_k``.

    Each row is one-sided and scaled by the line limit, so ``r`` is the
    relative headroom ``1 - sigma * flow / limit`` at ``beta_k``.
    """
    H = np.zeros((len(constraints), model.M))
    r = np.zeros(len(constraints))
    limits = model.limits
    by_scenario: dict[int, list[int]] = {}
    for i, (s, _, _) in enumerate(constraints):
        by_scenario.setdefault(s, []).append(i)
    for s, idx in sorted(by_scenario.items()):
        sc = scenarios[s]
        lines = [constraints[i][1] for i in idx]
        lin = flow_jacobian(model, beta_k, sc, rows=lines, system=cache.get(model, beta_k, sc.outaged_lines))
        row_of = {int(l): j for j, l in enumerate(lin.rows)}
        for i in idx:
            _, l, sigma = constraints[i]
            H[i] = sigma * lin.jacobian[row_of[l]] / limits[l]
            r[i] = 1.0 - sigma * lin.flows[l] / limits[l]
    return H, r


@dataclass
class _StepSolution:
    beta: np.ndarray
    slack: float  # sum of elastic slacks; 0 for the hard LP
    duals: np.ndarray | None


def _step_lp(emb, base_problem, beta_k, H, r, box=None, proximal=0.0, elastic=None):
    """Solve one linearized LP; returns None when the hard LP is infeasible.

    Variables are ``(u, v)`` of the l1 split, then ``(a, b)`` with
    ``beta - beta_k = a - b`` when ``proximal > 0``, then one slack per row
    priced at ``elastic`` when that is given.
    """
    m, k = emb.M, len(r)
    lower, upper = (base_problem.lower, base_problem.upper) if box is None else emb.bounds(*box)
    objective = [base_problem.objective]
    lo, hi = [lower], [upper]
    if proximal > 0:
        objective.append(np.full(2 * m, proximal))
        lo.append(np.zeros(2 * m))
        hi.append(np.full(2 * m, np.inf))
    if elastic is not None:
        objective.append(np.full(k, elastic))
        lo.append(np.zeros(k))
        hi.append(np.full(k, np.inf))
    problem = LpProblem(sum(len(c) for c in objective), np.concatenate(objective),
                        np.concatenate(lo), np.concatenate(hi))
    n = problem.num_vars
    shift = emb.center - beta_k
    extra = 0
    if proximal > 0:
        eye = sp.identity(m, format="csr")
        link = sp.hstack([eye, -eye, -eye, eye, sp.csr_matrix((m, n - 4 * m))], format="csr")
        problem.add_rows(link, -shift)
        problem.add_rows(-link, shift)
        extra = 2 * m
    blocks = [sp.csr_matrix(emb.columns(H)) if k else sp.csr_matrix((0, 2 * m))]
    if proximal > 0:
        blocks.append(sp.csr_matrix((k, 2 * m)))
    if elastic is not None:
        blocks.append(-sp.identity(k, format="csr"))
    if k:
        problem.add_rows(sp.hstack(blocks, format="csr"), r - H @ shift)
    sol = lp_solve(problem)
    if sol.status is LpStatus.INFEASIBLE:
        return None
    if not sol.optimal:
        raise FactsError(f"linearized LP is {sol.status.value}")
    slack = math.fsum(sol.x[n - k:]) if elastic is not None else 0.0
    duals = None if sol.duals is None else sol.duals[extra:]
    return _StepSolution(emb.beta(sol.x), slack, duals)


def _polish(model, scenarios, beta, beta0, constraints, lower, upper, cache):
    """Minimize the l1 cost over the current support with the signs of ``beta - beta0`` fixed.

    On that piece the cost is linear and the flow limits are smooth, so a
    quasi-Newton SQP (SLSQP) converges where sequential LP only zigzags.
    Returns the improved susceptances or None.
    """
    scale = max(float(np.max(beta0)), 1.0)
    support = np.flatnonzero(np.abs(beta - beta0) > 1e-9 * scale)
    if not len(support) or not constraints:
        return None
    side = np.sign(beta - beta0)[support]
    lo = np.where(side > 0, beta0[support], lower[support])
    hi = np.where(side > 0, upper[support], beta0[support])
    bounds = [(a, b if math.isfinite(b) else None) for a, b in zip(lo, hi)]

    def full(z):
        b = beta.copy()
        b[support] = np.clip(z, lo, hi)
        return b

    def headroom(z):
        H, r = _linearized_rows(model, scenarios, full(z), constraints, cache)
        return r, -H[:, support]

    memo = {}

    def evaluate(z):
        key = z.tobytes()
        if key not in memo:
            memo.clear()
            memo[key] = headroom(z)
        return memo[key]

    try:
        with warnings.catch_warnings():
            # SLSQP clips its own trial points to the bounds and says so
            warnings.simplefilter("ignore", RuntimeWarning)
            res = minimize(lambda z: float(side @ z), beta[support], jac=lambda z: side, method="SLSQP",
                           bounds=bounds,
                           constraints=[{"type": "ineq", "fun": lambda z: evaluate(z)[0],
                                         "jac": lambda z: evaluate(z)[1]}],
                           options={"maxiter": 200, "ftol": 1e-13})
    except PowerFlowError:
        return None
    return full(np.asarray(res.x, dtype=float))


def _excess(viol, keep=None) -> float:
    return math.fsum(e for c, e in viol if keep is None or keep(c))


def place(model: GridModel, scenarios: Sequence[Scenario], options: PlacementOptions | None = None,
          *, start=None, center=None, cache: SystemCache | None = None) -> PlacementResult:
    """Find susceptances of least l1 change that clear every scenario's overloads.

    ``center`` is the pre-correction susceptance vector the cost is measured
    from (the model's susceptances by default); ``start`` is the first
    linearization point (``center`` by default).

    Each outer iteration solves the LP linearized about the current iterate
    over the active constraints. Safeguards, each switchable in ``options``:

    * ``trust_region``: a step is kept only if it lowers the exact merit
      ``cost + mu * (sum of relative overloads)`` by a fair share of the
      predicted amount; otherwise the step box around the iterate is halved.
      The box starts unbounded.
    * ``proximal``: a small ``|beta - beta_k|_1`` price breaks LP ties
      toward the iterate, so the loop stops once no step pays for itself.
    * ``elastic``: when the linearized LP is infeasible even over all
      constraints, an LP with priced constraint slacks gives the step.
    * ``polish``: each trial point is refined by SLSQP on its support; the
      refinement is kept when it is exactly feasible and beats the merit of
      the trial (or, for a rejected trial, of the current iterate).
    """
    options = options or PlacementOptions()
    scenarios = list(scenarios)
    if not scenarios:
        raise ValueError("place needs at least one scenario")
    for sc in scenarios:
        model.check_scenario(sc)
    beta0 = np.array(model.susceptances if center is None else center, dtype=float)
    beta_k = np.maximum(beta0.copy() if start is None else np.array(start, dtype=float), 0.0)
    tol_beta = options.beta_tolerance or 1e-8 * float(np.max(beta0))
    feas = options.feasibility_tolerance
    upper = np.full(beta0.shape, np.inf) if options.beta_upper is None else np.broadcast_to(
        np.asarray(options.beta_upper, float), beta0.shape)
    lower = np.minimum(options.beta_lower, beta0)
    beta_k = np.clip(beta_k, lower, upper)
    base_problem, emb = l1_embed(beta0, len(beta0), lower, upper)
    cache = cache or SystemCache(maxsize=3 * len(scenarios) + 2)

    everything = _all_constraints(model, scenarios)
    flows_k = exact_flows(model, scenarios, beta_k, cache)
    viol_k = violations(model, scenarios, flows_k, feas)
    if start is None:
        viol0 = viol_k
    else:
        viol0 = violations(model, scenarios, exact_flows(model, scenarios, beta0, cache), feas)
    overloaded_before = sorted({l for (_, l, _), _ in viol0})
    if options.strategy is Strategy.DIRECT:
        active = ActiveSet(everything)
    else:
        active = ActiveSet(c for c, _ in viol_k)

    def cost_of(beta):
        return math.fsum(np.abs(beta - beta0))

    radius = math.inf
    mu = options.penalty
    if options.capacity_check and viol_k:
        blocked = [sc.label for sc in scenarios if not transfer_feasible(model, sc)]
        if blocked:
            msg = f"injections exceed the network's transfer capacity in {', '.join(blocked)}"
            return PlacementResult(beta_k, beta0, PlacementStatus.INFEASIBLE_LP, [],
                                   [int(l) for l in np.flatnonzero(
                                       np.abs(beta_k - beta0) > options.report_threshold * np.maximum(beta0, 1e-12))],
                                   overloaded_before, list(active), verify(model, scenarios, beta_k, feas, cache),
                                   options.strategy, msg)
    records: list[IterationRecord] = []
    status = PlacementStatus.ITER_LIMIT
    message = ""
    infeasible_at: int | None = None  # last iteration whose hard LP had no solution
    for k in range(1, options.max_outer_iters + 1):
        box = None if math.isinf(radius) else (np.maximum(beta_k - radius, lower), np.minimum(beta_k + radius, upper))
        cons = list(active)
        H, r = _linearized_rows(model, scenarios, beta_k, cons, cache)
        step_sol = _step_lp(emb, base_problem, beta_k, H, r, box, options.proximal)
        if step_sol is None and len(active) < len(everything):
            logger.info("iteration %d: LP infeasible on active set, retrying with all constraints", k)
            H_all, r_all = _linearized_rows(model, scenarios, beta_k, everything, cache)
            step_sol = _step_lp(emb, base_problem, beta_k, H_all, r_all, box, options.proximal)
            if step_sol is not None:
                active.add(everything)
                cons, H, r = list(active), H_all, r_all
        elastic = step_sol is None
        if elastic:
            infeasible_at = k
            if not options.elastic:
                status = PlacementStatus.INFEASIBLE_LP
                message = f"linearized LP infeasible at iteration {k}"
                break
            # SLP restoration: the hard LP is infeasible even over all constraints
            mu = max(mu, options.elastic_penalty)
            step_sol = _step_lp(emb, base_problem, beta_k, H, r, box, options.proximal, elastic=mu)
        else:
            infeasible_at = None
            if step_sol.duals is not None and len(step_sol.duals):
                mu = max(mu, 2.0 * float(np.max(step_sol.duals)))
        beta_new = np.clip(step_sol.beta, lower, upper)
        step = float(np.max(np.abs(beta_new - beta_k))) if len(beta_k) else 0.0
        try:
            flows_new = exact_flows(model, scenarios, beta_new, cache)
        except PowerFlowError:
            flows_new = None
        polished = False
        if flows_new is None:
            viol, accepted = [], False
        else:
            viol = violations(model, scenarios, flows_new, feas)
            accepted = True
            if options.trust_region and step > tol_beta:
                in_active = set(active)
                over_k = violations(model, scenarios, flows_k, 0.0)
                phi_k = cost_of(beta_k) + mu * _excess(over_k)
                phi_new = cost_of(beta_new) + mu * _excess(violations(model, scenarios, flows_new, 0.0))
                predicted = (cost_of(beta_k) - cost_of(beta_new)
                             + mu * (_excess(over_k, lambda c: c in in_active) - step_sol.slack))
                actual = phi_k - phi_new
                slack = 1e-12 * (1.0 + abs(phi_k))
                accepted = actual >= 0.1 * predicted - slack if predicted > slack else actual >= -slack
                if accepted and predicted > slack and actual >= 0.75 * predicted and step >= 0.9 * radius:
                    radius *= 2.0
        pending = [(c, e) for c, e in viol if c not in active]
        if options.violation_move is ViolationMove.MOST_VIOLATED and pending:
            pending = [max(pending, key=lambda item: (item[1], tuple(-x for x in item[0])))]
        added = active.add(c for c, _ in pending)
        if options.polish and flows_new is not None and step > tol_beta:
            phi_new = cost_of(beta_new) + mu * _excess(violations(model, scenarios, flows_new, 0.0))
            # a rejected trial still names a support; a feasible point on it beating
            # the current merit is taken instead of shrinking the step box
            bar = phi_new if accepted else cost_of(beta_k) + mu * _excess(violations(model, scenarios, flows_k, 0.0))
            refined = _polish(model, scenarios, beta_new, beta0, list(active), lower, upper, cache)
            if refined is not None and cost_of(refined) < bar - 1e-12 * (1.0 + bar):
                try:
                    flows_ref = exact_flows(model, scenarios, refined, cache)
                except PowerFlowError:
                    flows_ref = None
                if flows_ref is not None:
                    viol_ref = violations(model, scenarios, flows_ref, feas)
                    if viol_ref:
                        added += active.add(c for c, _ in viol_ref)
                    else:
                        beta_new, flows_new, viol, polished, accepted = refined, flows_ref, viol_ref, True, True
        records.append(IterationRecord(k, cost_of(beta_new), len(active), len(added),
                                       max((e for _, e in viol), default=math.inf if flows_new is None else 0.0),
                                       step, accepted, radius, elastic, polished))
        logger.debug("iteration %d: cost %.6g, step %.3g, %s%s%s, active %d (+%d)", k, records[-1].cost,
                     step, "accepted" if accepted else "rejected", ", elastic" if elastic else "",
                     ", polished" if polished else "", len(active), len(added))
        if not accepted:
            radius = 0.5 * step
            if radius < 10 * tol_beta:
                message = "step box collapsed without reaching a fixed point"
                break
            continue
        beta_k, flows_k, viol_k = beta_new, flows_new, viol
        if step <= tol_beta and not added and not polished:
            if elastic and viol:
                status = PlacementStatus.INFEASIBLE_LP
                message = f"stalled at an overloaded point whose linearized LP is infeasible (iteration {k})"
            else:
                status = PlacementStatus.SOLVED
            break

    checks = verify(model, scenarios, beta_k, feas, cache)
    if status is PlacementStatus.SOLVED and not all(c.feasible for c in checks):
        status = PlacementStatus.ITER_LIMIT
        message = "converged iterate failed exact verification"
    if status is PlacementStatus.ITER_LIMIT and infeasible_at is not None:
        status = PlacementStatus.INFEASIBLE_LP
        message = f"linearized LP infeasible at iteration {infeasible_at}; " + (message or "no feasible fixed point")
    if status is PlacementStatus.ITER_LIMIT and not message:
        message = f"no fixed point within {options.max_outer_iters} iterations"
    modified = [int(l) for l in np.flatnonzero(np.abs(beta_k - beta0) > options.report_threshold * np.maximum(beta0, 1e-12))]
    result = PlacementResult(beta_k, beta0, status, records, modified, overloaded_before,
                             list(active), checks, options.strategy, message)
    logger.info("placement %s after %d iterations: cost %.6g, %d modified vs %d overloaded lines",
                status.value, len(records), result.cost, len(modified), len(overloaded_before))
    return result


def excluded_violations(model: GridModel, scenarios: Sequence[Scenario], result: PlacementResult,
                        tolerance: float = 1e-6) -> list[Constraint]:
    """Constraints outside the final active set violated at ``result.beta_opt``."""
    active = set(result.active_set)
    viol = violations(model, scenarios, exact_flows(model, scenarios, result.beta_opt), tolerance)
    return [c for c, _ in viol if c not in active]


# --------------------------------------------------------------------------
# stress analysis


def alpha_c_prime(model: GridModel, p_star, options: PlacementOptions | None = None,
                  lo: float | None = None, hi: float | None = None, tol: float = 1e-3) -> float:
    """Largest uniform scaling (within ``tol``) at which placement still succeeds.

    Bisection between ``lo`` (default alpha_c, must be Solved) and ``hi``
    (default doubled until placement fails).
    """
    options = options or PlacementOptions()
    ac, _ = _alpha_c(model, p_star)
    lo = ac if lo is None else lo

    def ok(alpha):
        return place(model, [scale_scenario(p_star, alpha)], options).solved

    if not ok(lo):
        raise FactsError(f"placement already fails at lower bracket alpha={lo:.6g}")
    if hi is None:
        hi = 2.0 * lo
        for _ in range(30):
            if not ok(hi):
                break
            lo, hi = hi, 2.0 * hi
        else:
            raise FactsError("placement never fails; no second critical scaling found")
    elif ok(hi):
        raise FactsError(f"placement still succeeds at upper bracket alpha={hi:.6g}")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return lo


@dataclass
class SweepPoint:
    alpha: float
    ratio: float  # alpha / alpha_c
    cost: float
    status: PlacementStatus
    overloaded_lines: list[int]
    modified_lines: list[int]
    per_line_final_beta: dict[int, float] = field(default_factory=dict)
    iterations: int = 0
    removal_cost: float = 0.0  # beta0 of a line forced out (warm_start_variant), else 0
    message: str = ""

    @property
    def charged_cost(self) -> float:
        """Cost with a forced removal charged at its original susceptance."""
        return self.cost + self.removal_cost


def _sweep_point(model, p_star, alpha, ac, options, outaged=frozenset(), start=None) -> tuple[SweepPoint, np.ndarray | None]:
    scenario = Scenario(alpha * np.asarray(p_star, float), outaged, f"alpha={alpha:.6g}")
    try:
        res = place(model, [scenario], options, start=start)
    except FactsError as exc:
        return SweepPoint(alpha, alpha / ac, math.nan, PlacementStatus.INFEASIBLE_LP, [], [], message=str(exc)), None
    cost = res.cost if res.solved else math.nan
    finals = {l: float(res.beta_opt[l]) for l in res.modified_lines}
    return SweepPoint(alpha, alpha / ac, cost, res.status, res.overloaded_before, res.modified_lines,
                      finals, res.outer_iterations, message=res.message), res.beta_opt


def sweep(model: GridModel, p_star, alphas: Sequence[float], options: PlacementOptions | None = None,
          *, threads: int = 1, outaged: Iterable[int] = ()) -> list[SweepPoint]:
    """Independent placements at each scaling ``alpha * p_star``.

    Every point starts from the unmodified susceptances unless
    ``options.warm_start`` is set, in which case points run sequentially and
    each starts from the previous optimum.
    """
    options = options or PlacementOptions()
    alphas = [float(a) for a in alphas]
    if any(b < a for a, b in zip(alphas, alphas[1:])):
        raise ValueError("alphas must be sorted ascending")
    outaged = frozenset(outaged)
    ac, _ = _alpha_c(model, p_star, outaged=outaged)
    if options.warm_start:
        points, start = [], None
        for a in alphas:
            pt, beta = _sweep_point(model, p_star, a, ac, options, outaged, start)
            points.append(pt)
            if beta is not None and pt.status is PlacementStatus.SOLVED:
                start = beta
        return points
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return [pt for pt, _ in pool.map(lambda a: _sweep_point(model, p_star, a, ac, options, outaged), alphas)]
    return [_sweep_point(model, p_star, a, ac, options, outaged)[0] for a in alphas]


@dataclass
class Jump:
    index: int  # jump between points[index] and points[index + 1]
    alpha_before: float
    alpha_after: float
    ratio_before: float
    ratio_after: float
    delta: float
    typical: float


def detect_jumps(points: Sequence[SweepPoint], factor: float = 3.0) -> list[Jump]:
    """Flag consecutive solved points whose cost change exceeds ``factor`` times the
    median absolute change over the supercritical part of the sweep."""
    pairs = []
    for i in range(len(points) - 1):
        a, b = points[i], points[i + 1]
        if not (math.isfinite(a.cost) and math.isfinite(b.cost)):
            continue
        if a.cost == 0 and b.cost == 0:
            continue
        pairs.append((i, b.cost - a.cost))
    if len(pairs) < 3:
        return []
    typical = float(np.median([abs(d) for _, d in pairs]))
    scale = max(abs(p.cost) for p in points if math.isfinite(p.cost))
    floor = 1e-9 * max(scale, 1e-300)
    jumps = []
    for i, d in pairs:
        if abs(d) > factor * typical and abs(d) > floor:
            a, b = points[i], points[i + 1]
            jumps.append(Jump(i, a.alpha, b.alpha, a.ratio, b.ratio, d, typical))
    return jumps


def warm_start_variant(model: GridModel, p_star, alphas: Sequence[float], options: PlacementOptions | None = None,
                       forced_zero: int = 0, *, threads: int = 1) -> list[SweepPoint]:
    """Sweep with line ``forced_zero`` removed from every topology.

    ``cost`` counts the removal as free; ``charged_cost`` adds the removed
    line's original susceptance.
    """
    if forced_zero in bridges(model):
        raise ValidationError(f"line {forced_zero} is a bridge; removing it islands the grid")
    points = sweep(model, p_star, alphas, options, threads=threads, outaged={forced_zero})
    removal = float(model.susceptances[forced_zero])
    return [replace(pt, removal_cost=removal) for pt in points]


# --------------------------------------------------------------------------
# robust placement helpers


def naive_combination(results: Sequence[PlacementResult]) -> tuple[np.ndarray, float]:
    """Per line, keep the largest-magnitude correction among independent solutions.

    Returns ``(beta, cost)`` where cost is the sum over lines of the maximum
    |delta|.
    """
    deltas = np.array([r.delta for r in results])
    pick = np.argmax(np.abs(deltas), axis=0)
    combined = deltas[pick, np.arange(deltas.shape[1])]
    return results[0].beta0 + combined, math.fsum(np.max(np.abs(deltas), axis=0))
