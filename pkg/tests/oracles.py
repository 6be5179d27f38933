"""Independent reference computations used by the tests.

Nothing here touches the sparse factorization or the LP backend of the
package: flows come from a dense pseudo-inverse, connectivity from a plain
breadth-first search and LPs from vertex enumeration.
"""

from __future__ import annotations

import itertools
from collections import deque

import numpy as np


def dense_laplacian(model, beta=None, outaged=()):
    beta = model.susceptances if beta is None else np.asarray(beta, float)
    L = np.zeros((model.N, model.N))
    for ln in model.lines:
        if ln.index in outaged:
            continue
        a, b, w = ln.from_bus, ln.to_bus, beta[ln.index]
        L[a, a] += w
        L[b, b] += w
        L[a, b] -= w
        L[b, a] -= w
    return L


def dense_flows(model, p, beta=None, outaged=()):
    beta = model.susceptances if beta is None else np.asarray(beta, float)
    theta = np.linalg.pinv(dense_laplacian(model, beta, outaged)) @ (np.asarray(p, float) / model.base_mva)
    flows = model.base_mva * beta * (theta[model.from_buses] - theta[model.to_buses])
    flows[list(outaged)] = 0.0
    return flows


def fd_jacobian(model, p, beta=None, rel_step=1e-6):
    """Central differences of dense flows with respect to each susceptance."""
    beta = model.susceptances.copy() if beta is None else np.asarray(beta, float).copy()
    J = np.zeros((model.M, model.M))
    for m in range(model.M):
        h = rel_step * beta[m]
        up, dn = beta.copy(), beta.copy()
        up[m] += h
        dn[m] -= h
        J[:, m] = (dense_flows(model, p, up) - dense_flows(model, p, dn)) / (2 * h)
    return J


def bisect_alpha_c(model, p, iters=200):
    """Largest alpha with every limited line within its limit, by bisection on full re-solves."""
    lim = model.limits

    def ok(a):
        f = np.abs(dense_flows(model, a * np.asarray(p, float)))
        return bool(np.all(f[np.isfinite(lim)] <= lim[np.isfinite(lim)]))

    lo, hi = 0.0, 1.0
    while ok(hi):
        lo, hi = hi, 2 * hi
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        lo, hi = (mid, hi) if ok(mid) else (lo, mid)
    return lo


def bfs_connected(n, edges):
    adj = [[] for _ in range(n)]
    for a, b in edges:
        adj[a].append(b)
        adj[b].append(a)
    seen = {0}
    queue = deque([0])
    while queue:
        for v in adj[queue.popleft()]:
            if v not in seen:
                seen.add(v)
                queue.append(v)
    return len(seen) == n


def brute_bridges(model):
    edges = [(ln.from_bus, ln.to_bus) for ln in model.lines]
    return {k for k in range(model.M) if not bfs_connected(model.N, edges[:k] + edges[k + 1:])}


def triangle_p12(p1, p2, b12, b13, b23):
    d = b12 * b13 + b12 * b23 + b13 * b23
    return b12 * (p1 * b23 - p2 * b13) / d


# --------------------------------------------------------------------------
# vertex enumeration


def _vertex_optimum(c, G, h):
    """min c.x over {G x <= h} (assumed bounded, pointed) by enumerating vertices.

    Returns None when no vertex exists (empty set). G must have integer
    entries so that singular bases are recognized exactly by determinant.
    """
    m, n = G.shape
    subsets = np.array(list(itertools.combinations(range(m), n)))
    if not len(subsets):
        return None
    Gs = G[subsets]
    det = np.linalg.det(Gs)
    keep = np.abs(det) > 0.5
    if not keep.any():
        return None
    xs = np.linalg.solve(Gs[keep], h[subsets[keep]][..., None])[..., 0]
    slack = xs @ G.T - h
    scale = 1e-11 * (1.0 + np.abs(h) + np.abs(xs) @ np.abs(G).T)
    feas = np.all(slack <= scale, axis=1)
    if not feas.any():
        return None
    vals = xs[feas] @ c
    return float(vals.min())


def vertex_lp(c, A, b, lower, upper, box=1e6):
    """Reference ``(status, value)`` for ``min c.x, A x <= b, lower <= x <= upper``.

    The region is intersected with ``|x_i| <= box`` so it has vertices; an
    optimum that improves when the box is doubled means the LP is unbounded.
    """
    c = np.asarray(c, float)
    n = len(c)
    A = np.asarray(A, float).reshape(-1, n)
    eye = np.eye(n)

    def boxed(R):
        lo = np.where(np.isfinite(lower), lower, -R)
        hi = np.where(np.isfinite(upper), upper, R)
        G = np.vstack([A, -eye, eye])
        h = np.concatenate([np.asarray(b, float), -lo, hi])
        return _vertex_optimum(c, G, h)

    v1 = boxed(box)
    if v1 is None:
        return "infeasible", None
    v2 = boxed(2 * box)
    if v2 < v1 - 1e-6 * (1 + abs(v1)):
        return "unbounded", None
    return "optimal", v1
