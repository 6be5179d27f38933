from __future__ import annotations

import numpy as np
import pytest

from factsplace.grid import Scenario
from factsplace.linearize import flow_jacobian
from factsplace.powerflow import assemble, dc_flows, solve_flows, triangle_sensitivities
from factsplace.synthetic import random_grid, triangle
from oracles import dense_flows, dense_laplacian, fd_jacobian


def sensitivity_models(count, seed):
    rng = np.random.default_rng(seed)
    for k in range(count):
        n = int(rng.integers(3, 31))
        m = int(rng.integers(n - 1, min(2 * n, n * (n - 1) // 2) + 1))
        g = random_grid(n, m, seed=seed * 10000 + k, locality=4)
        beta = g.susceptances * rng.uniform(0.5, 2.0, size=g.M)
        yield g, beta


def assert_matches_fd(J, fd, flows, beta):
    """|J - fd| <= 1e-5 * max(|fd|, s_m), relative with a scale floor.

    Column m is measured in units of max|flow| / beta_m; entries below one
    percent of that unit (exact zeros on trees and bridges, where the
    difference quotient is pure rounding noise) are held to the floor.
    """
    unit = np.max(np.abs(flows)) / np.asarray(beta)
    bound = 1e-5 * np.maximum(np.abs(fd), 1e-2 * unit[None, :])
    err = np.abs(J - fd)
    assert np.all(err <= bound), float(np.max(err / bound))


def test_jacobian_matches_finite_differences():
    for g, beta in sensitivity_models(40, seed=1):
        p = g.base_injections
        lin = flow_jacobian(g, beta, Scenario(p))
        assert_matches_fd(lin.jacobian, fd_jacobian(g, p, beta), lin.flows, beta)


def test_flows_equal_solver():
    for g, beta in sensitivity_models(10, seed=2):
        lin = flow_jacobian(g, beta, Scenario(g.base_injections))
        exact = dc_flows(g, g.base_injections, beta)
        assert np.allclose(lin.flows, exact, rtol=1e-10, atol=1e-10)


def test_triangle_column_equals_closed_form():
    rng = np.random.default_rng(3)
    for _ in range(100):
        p1, p2 = rng.uniform(-2, 2, size=2)
        b = rng.uniform(0.2, 5, size=3)
        g = triangle(p1, p2, *b)
        lin = flow_jacobian(g, b, Scenario([p1, p2, -p1 - p2]))
        d12, d23 = triangle_sensitivities(p1, p2, *b)
        scale = max(1.0, abs(d12), abs(d23))
        assert lin.jacobian[0, 0] == pytest.approx(d12, abs=1e-10 * scale)
        assert lin.jacobian[0, 2] == pytest.approx(d23, abs=1e-10 * scale)


def test_scaling_injections_scales_linearization():
    g = random_grid(20, 30, seed=4)
    p = g.base_injections
    a = flow_jacobian(g, None, Scenario(p))
    b = flow_jacobian(g, None, Scenario(2.5 * p))
    assert np.allclose(b.flows, 2.5 * a.flows, rtol=1e-12, atol=1e-12)
    assert np.allclose(b.jacobian, 2.5 * a.jacobian, rtol=1e-12, atol=1e-12 * np.max(np.abs(a.jacobian)))


def test_prediction_error_is_second_order():
    rng = np.random.default_rng(5)
    for seed in range(5):
        g = random_grid(25, 40, seed=seed)
        p = g.base_injections
        beta = g.susceptances
        lin = flow_jacobian(g, beta, Scenario(p))
        d = rng.standard_normal(g.M)
        d *= 1e-3 * np.linalg.norm(beta) / np.linalg.norm(d)
        errs = []
        for step in (d, d / 2):
            errs.append(np.linalg.norm(lin.predict(beta + step) - dc_flows(g, p, beta + step)))
        assert errs[0] / errs[1] >= 3.5


def test_diagonal_delta_term_is_phase_difference():
    g = random_grid(15, 22, seed=6)
    p = g.base_injections
    lin = flow_jacobian(g, None, Scenario(p))
    Lp = np.linalg.pinv(dense_laplacian(g))
    theta = Lp @ (p / g.base_mva)
    S, beta = g.base_mva, g.susceptances
    f, t = g.from_buses, g.to_buses
    for l in range(g.M):
        dtheta = theta[f[l]] - theta[t[l]]
        R_ll = Lp[f[l], f[l]] - 2 * Lp[f[l], t[l]] + Lp[t[l], t[l]]
        delta_term = lin.jacobian[l, l] + S * beta[l] * dtheta * R_ll
        assert delta_term == pytest.approx(S * dtheta, rel=1e-9, abs=1e-12)


def test_row_subset_and_outages():
    g = random_grid(12, 18, seed=7)
    p = g.base_injections
    full = flow_jacobian(g, None, Scenario(p))
    part = flow_jacobian(g, None, Scenario(p), rows=[5, 2, 5])
    assert part.rows.tolist() == [2, 5]
    assert np.allclose(part.jacobian, full.jacobian[[2, 5]], rtol=1e-13, atol=1e-13)
    from factsplace.optimizer import bridges

    out = next(k for k in range(g.M) if k not in bridges(g))
    lin = flow_jacobian(g, None, Scenario(p, frozenset({out})))
    assert not lin.jacobian[:, out].any() and not lin.jacobian[out].any()
    beta = g.susceptances.copy()
    beta[out] = 0.0
    live = [k for k in range(g.M) if k != out]
    ref = np.zeros((g.M, g.M))
    for m in live:
        h = 1e-6 * beta[m]
        up, dn = beta.copy(), beta.copy()
        up[m] += h
        dn[m] -= h
        ref[:, m] = (dense_flows(g, p, up, {out}) - dense_flows(g, p, dn, {out})) / (2 * h)
    assert_matches_fd(lin.jacobian[np.ix_(live, live)], ref[np.ix_(live, live)], lin.flows, beta[live])


def test_prebuilt_system_is_reused():
    g = triangle()
    system = assemble(g)
    lin = flow_jacobian(g, None, Scenario(g.base_injections), system=system)
    assert np.array_equal(lin.flows, solve_flows(system, g.base_injections).flows)
