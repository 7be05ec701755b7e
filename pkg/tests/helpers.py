"""Shared test utilities: cached solves of the bundled problems."""

from functools import lru_cache

import numpy as np

from ccop.classify import classify
from ccop.model import bundled_problem
from ccop.stationarity import SolveConfig, solve_all

FIXTURES = ("instability", "so_ss", "stability", "stability_compact", "sphere_sparse")


@lru_cache(maxsize=None)
def solved(name: str):
    """(problem, pairs, classifications) for a bundled problem, computed once per session."""
    p = bundled_problem(name)
    pairs = list(solve_all(p, SolveConfig()))
    return p, pairs, [classify(p, q) for q in pairs]


def pair_at(name: str, x):
    p, pairs, cls = solved(name)
    for q, c in zip(pairs, cls):
        if np.allclose(q.x, x, atol=1e-8):
            return p, q, c
    raise KeyError(f"no stationary point at {x} in {name}")


def grid_local_minima(p, num: int = 121, gtol: float = 1e-9):
    """Local minima of f on a grid graph of the feasible set (problems without equalities).

    Nodes are grid points of the coordinate planes of all supports of size s
    that satisfy g >= -gtol; two nodes are adjacent when their index vectors
    differ by one in a single coordinate. Returns the coordinates of nodes whose
    value does not exceed any neighbour's.
    """
    import itertools

    assert p.n_eq == 0
    grids = []
    for lo, hi in p.box:
        t = np.linspace(lo, hi, num)
        if lo <= 0 <= hi:
            t[np.argmin(np.abs(t))] = 0.0
        grids.append(t)
    zero = [int(np.argmin(np.abs(t))) for t in grids]
    values = {}
    for J in itertools.combinations(range(p.n), p.s):
        for idx in itertools.product(range(num), repeat=len(J)):
            key = list(zero)
            for j, i in zip(J, idx):
                key[j] = i
            key = tuple(key)
            if key in values:
                continue
            x = [grids[i][key[i]] for i in range(p.n)]
            if all(g.value(x) >= -gtol for g in p.g):
                values[key] = p.f.value(x)
    minima = []
    for key, v in values.items():
        nbrs = []
        for i in range(p.n):
            for d in (-1, 1):
                k2 = list(key)
                k2[i] += d
                if tuple(k2) in values:
                    nbrs.append(values[tuple(k2)])
        if nbrs and all(v <= w for w in nbrs):
            minima.append(np.array([grids[i][key[i]] for i in range(p.n)]))
    step = max((hi - lo) / (num - 1) for lo, hi in p.box)
    return minima, step


def grid_local_min_at(p, x, radius: float = 0.05, num: int = 21, slack: float = 1e-10):
    """True when no feasible grid node within ``radius`` of ``x`` has a smaller objective.

    A ``num``-per-axis grid of offsets is laid on every support plane of size s
    containing supp(x); for equality-constrained problems each node is moved
    onto h = 0 inside its plane by Gauss-Newton steps.
    """
    import itertools

    from ccop.model import feasible

    x = np.asarray(x, dtype=float)
    supp = set(np.flatnonzero(np.abs(x) > 1e-12).tolist())
    f0 = p.f.value(list(x))
    t = np.linspace(-radius, radius, num)
    for J in itertools.combinations(range(p.n), p.s):
        if not supp <= set(J):
            continue
        J = list(J)
        for off in itertools.product(t, repeat=len(J)):
            y = x.copy()
            y[J] += off
            for _ in range(30):
                if not p.n_eq:
                    break
                hv = np.array([h.value(list(y)) for h in p.h])
                if np.max(np.abs(hv)) < 1e-14:
                    break
                Jh = np.array([h.bundle(list(y)).gradient for h in p.h])[:, J]
                y[J] -= np.linalg.lstsq(Jh, hv, rcond=None)[0]
            if np.linalg.norm(y - x) > radius or not feasible(p, y, 1e-12):
                continue
            if p.f.value(list(y)) < f0 - slack:
                return False
    return True
