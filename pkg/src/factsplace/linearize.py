"""First-order sensitivity of line flows to line susceptances.

With phases ``theta = L(beta)^+ p`` and flow ``F_l = S * beta_l * (theta_a - theta_b)``
for line ``l = (a, b)``, differentiating ``L theta = p`` gives
``d theta / d beta_m = -L^+ (e_c - e_d) (theta_c - theta_d)`` for line ``m = (c, d)``,
hence::

    dF_l / d beta_m = S * [delta_lm * (theta_a - theta_b)
                           - beta_l * (theta_c - theta_d) * R_lm]

with ``R_lm = (e_a - e_b)^T L^+ (e_c - e_d)``. Row ``l`` costs one grounded
solve, so only the rows of interest are materialized.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .grid import GridModel, Scenario
from .powerflow import LaplacianSystem, assemble, solve_flows


@dataclass(frozen=True)
class Linearization:
    """Flows and flow Jacobian about ``base_point``.

    ``jacobian[i]`` is the gradient of flow ``rows[i]`` with respect to all
    M susceptances. Outaged lines have zero rows and zero columns.
    """

    base_point: np.ndarray
    flows: np.ndarray
    jacobian: np.ndarray
    rows: np.ndarray
    phases: np.ndarray
    scenario_label: str = ""

    def predict(self, beta: np.ndarray) -> np.ndarray:
        """Linearized flows on ``rows`` at ``beta``."""
        return self.flows[self.rows] + self.jacobian @ (np.asarray(beta) - self.base_point)


def flow_jacobian(model: GridModel, susceptances, scenario: Scenario,
                  rows: Sequence[int] | None = None,
                  system: LaplacianSystem | None = None) -> Linearization:
    """Linearize every line flow of ``scenario`` about ``susceptances``.

    ``rows`` restricts the Jacobian to selected lines (all lines when None).
    A prebuilt ``system`` for the same point and outage set may be passed
    to skip refactorization.
    """
    beta_star = np.array(model.susceptances if susceptances is None else susceptances, dtype=float)
    if system is None:
        system = assemble(model, beta_star, scenario.outaged_lines)
    sol = solve_flows(system, scenario.injections)
    rows = np.arange(model.M) if rows is None else np.asarray(sorted(set(int(r) for r in rows)), dtype=np.int64)

    S = system.base_mva
    beta = system.beta  # outaged entries already zeroed
    dtheta = system.line_differences(sol.phases)
    # R[m, i] = (e_c - e_d)^T L^+ (e_a - e_b) for row line i = (a, b), column line m = (c, d)
    R = system.line_differences(system.incidence_solves(rows))
    jac = -S * (beta[rows][:, None] * R.T) * dtheta[None, :]
    jac[np.arange(len(rows)), rows] += S * dtheta[rows]
    out = sorted(system.outaged)
    if out:
        jac[:, out] = 0.0
        jac[np.isin(rows, out)] = 0.0
    return Linearization(beta_star, sol.flows, jac, rows, sol.phases, scenario.label)
