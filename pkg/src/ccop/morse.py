"""Connected components of lower level sets on the sparsity variety, level sweeps,
attached cells and the mountain-pass count."""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field
from math import comb

import numpy as np
from scipy import ndimage

from .classify import Classification, DegenerateError, Tri
from .model import MStationaryPair, Problem
from .numlin import DEFAULT_TOL


class GridTooCoarseWarning(UserWarning):
    """A lower level set component was resolved by fewer than three grid nodes."""


class NotCompactError(ValueError):
    """The problem does not assert a compact feasible set."""


class UnionFind:
    def __init__(self):
        self.parent: dict = {}

    def add(self, a):
        self.parent.setdefault(a, a)

    def find(self, a):
        root = a
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[a] != root:
            self.parent[a], a = root, self.parent[a]
        return root

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            # smaller key wins so roots are deterministic
            if rb < ra:
                ra, rb = rb, ra
            self.parent[rb] = ra

    def roots(self):
        return {self.find(a) for a in self.parent}


def axis_grid(lo: float, hi: float, num: int) -> tuple[np.ndarray, int | None]:
    """Uniform grid on [lo, hi] with the node nearest to 0 moved onto 0.

    Returns the grid and the index of the zero node (None if 0 is outside).
    """
    t = np.linspace(lo, hi, num)
    if not lo <= 0.0 <= hi:
        return t, None
    z = int(np.argmin(np.abs(t)))
    t[z] = 0.0
    return t, z


@dataclass
class ComponentCount:
    count: int
    sizes: list[int]
    nodes: int


def _broadcast(v, shape):
    return np.broadcast_to(np.asarray(v, dtype=float), shape)


def _support_mask(p: Problem, J, grids, level: float, band_factor: float, connectivity: str):
    """Kept nodes of the support grid ``J``.

    Nodes within the constraint band are accepted, and the objective is read
    at their first-order projection onto each violated constraint surface
    (within the support plane), so the band does not bias level values.
    """
    shape = tuple(len(grids[j]) for j in J)
    mesh = np.meshgrid(*[grids[j] for j in J], indexing="ij") if J else []
    coords = [0.0] * p.n
    for axis, j in enumerate(J):
        coords[j] = mesh[axis]
    step = max((grids[j][-1] - grids[j][0]) / max(len(grids[j]) - 1, 1) for j in J) if J else 0.0
    fval = _broadcast(p.f.value_grid(coords), shape).copy()
    fgrad = [_broadcast(d, shape) for d in p.f.gradient_grid(coords)]
    mask = np.ones(shape, dtype=bool)
    for c, lower_only in [(h, False) for h in p.h] + [(g, True) for g in p.g]:
        val = _broadcast(c.value_grid(coords), shape)
        grad = [_broadcast(d, shape) for d in c.gradient_grid(coords)]
        gsq = sum(grad[j] ** 2 for j in J) if J else np.zeros(shape)
        band = band_factor * step * np.sqrt(gsq)
        mask &= (val >= -band) if lower_only else (np.abs(val) <= band)
        viol = np.minimum(val, 0.0) if lower_only else val
        with np.errstate(divide="ignore", invalid="ignore"):
            shift = np.where(gsq > 0, viol / gsq, 0.0)
        if J:
            fval -= shift * sum(fgrad[j] * grad[j] for j in J)
    mask &= fval <= level
    return np.asarray(mask)


def lower_level_component_count(
    p: Problem,
    level: float,
    grid_per_axis: int = 201,
    tol: float = DEFAULT_TOL,
    band_factor: float = 2.0,
    connectivity: str = "face",
) -> ComponentCount:
    """Components of ``{x feasible : f(x) <= level}`` on a grid of the box.

    Each support ``J`` with ``|J| = s`` is gridded on the coordinate plane
    ``x_i = 0 (i not in J)``; smaller supports are the zero-coordinate faces of
    these grids, so nodes with identical full index vectors are glued across
    planes. Constraints are thresholded with a node-wise band
    ``band_factor * step * |grad|``.
    """
    if not p.compact_feasible:
        raise NotCompactError("lower level set counting requires compact_feasible = true")
    grids, zeros = zip(*(axis_grid(lo, hi, grid_per_axis) for lo, hi in p.box))
    uf = UnionFind()
    sizes: dict = {}
    total = 0
    for J in itertools.combinations(range(p.n), p.s):
        if any(zeros[i] is None for i in range(p.n) if i not in J):
            continue
        mask = _support_mask(p, J, grids, level, band_factor, connectivity)
        if not J:
            if mask:
                key = ("node", tuple(zeros))
                uf.add(key)
                sizes[key] = sizes.get(key, 0) + 1
                total += 1
            continue
        structure = np.ones((3,) * len(J)) if connectivity == "full" else None
        labels, nlab = ndimage.label(mask, structure=structure)
        total += int(mask.sum())
        counts = np.bincount(labels.ravel(), minlength=nlab + 1)
        for lab in range(1, nlab + 1):
            key = ("comp", J, lab)
            uf.add(key)
            sizes[key] = int(counts[lab])
        # nodes on zero faces are shared with other supports
        for axis, j in enumerate(J):
            sl = [slice(None)] * len(J)
            sl[axis] = zeros[j]
            face = labels[tuple(sl)]
            idxs = [()] if face.ndim == 0 and face else zip(*np.nonzero(face)) if face.ndim else []
            for idx in idxs:
                full = list(zeros)
                k = 0
                for a2, j2 in enumerate(J):
                    if a2 == axis:
                        continue
                    full[j2] = int(idx[k])
                    k += 1
                node = ("node", tuple(full))
                uf.add(node)
                uf.union(("comp", J, int(face[idx])), node)
    comp_sizes: dict = {}
    for key, size in sizes.items():
        r = uf.find(key)
        comp_sizes[r] = comp_sizes.get(r, 0) + size
    sizes_list = sorted(comp_sizes.values())
    return ComponentCount(len(comp_sizes), sizes_list, total)


def lower_level_components(
    p: Problem, level: float, grid_per_axis: int = 201, tol: float = DEFAULT_TOL
) -> int:
    """Number of connected components of the lower level set at ``level``."""
    if p.n > 4:
        raise ValueError("grid component counting is limited to n <= 4")
    res = lower_level_component_count(p, level, grid_per_axis, tol)
    if any(s < 3 for s in res.sizes):
        warnings.warn(
            f"level {level}: component with {min(res.sizes)} grid nodes; refine the grid",
            GridTooCoarseWarning,
            stacklevel=2,
        )
    return res.count


# ------------------------------------------------------------ level sweep


def predicted_deltas(c: Classification, n: int, s: int) -> set[int]:
    """Allowed change of the component count when crossing the value of one point."""
    if c.m_index == 0:
        return {1}
    if c.m_index == 1 and c.k == s:
        return {0, -1}
    if c.m_index == 1 and c.k == s - 1:
        return set(range(-(n - s), 1))
    return {0}


def _minkowski(sets) -> set[int]:
    out = {0}
    for s in sets:
        out = {a + b for a in out for b in s}
    return out


@dataclass
class Crossing:
    value: float
    points: list[int]
    level_below: float | None
    level_above: float | None
    predicted: list[int]
    observed: int | None
    coincident: bool
    status: str  # ok | violation | indeterminate | unsampled

    @property
    def matches(self) -> bool | None:
        return None if self.observed is None else self.observed in self.predicted


@dataclass
class LevelSweepReport:
    levels: list[float]
    beta0: list[int]
    crossings: list[Crossing]
    grid: int
    violations: list[str] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    @property
    def indeterminate(self) -> bool:
        return any(c.status == "indeterminate" for c in self.crossings)


def _value_groups(values: np.ndarray, tol: float):
    order = np.argsort(values, kind="stable")
    groups: list[list[int]] = []
    for i in order:
        if groups and abs(values[i] - values[groups[-1][-1]]) <= 100 * tol * max(1.0, abs(values[i])):
            groups[-1].append(int(i))
        else:
            groups.append([int(i)])
    return groups


def auto_levels(values) -> list[float]:
    """Levels at 1/4, 1/2, 3/4 of every gap plus two margins on either side."""
    v = sorted(set(float(x) for x in values))
    if not v:
        return [0.0]
    margin = 0.5 * min(np.diff(v)) if len(v) > 1 else 0.5
    levels = [v[0] - margin, v[0] - 0.5 * margin]
    for a, b in zip(v, v[1:]):
        levels += [a + 0.25 * (b - a), a + 0.5 * (b - a), a + 0.75 * (b - a)]
    levels += [v[-1] + 0.5 * margin, v[-1] + margin]
    return levels


def level_sweep(
    p: Problem,
    pairs: list[MStationaryPair],
    classifications: list[Classification],
    grid: int = 201,
    tol: float = DEFAULT_TOL,
    levels=None,
) -> LevelSweepReport:
    """beta0 across levels and the transition rule check at each stationary value.

    Coincident stationary values are grouped: the prediction is the sum of the
    individual rules, and the crossing is marked ``indeterminate`` because the
    individual contributions cannot be separated.
    """
    if len(pairs) != len(classifications):
        raise ValueError("one classification per pair is required")
    for pair, c in zip(pairs, classifications):
        if c.nondegenerate is not Tri.HOLDS:
            raise DegenerateError(f"point {pair.x} is not nondegenerate")
    values = np.array([p.f.value(list(pair.x)) for pair in pairs], dtype=float)
    groups = _value_groups(values, tol)
    group_values = [float(np.mean(values[g])) for g in groups]
    if levels is None:
        levels = auto_levels(group_values)
    levels = sorted(float(l) for l in levels)
    if any(b <= a for a, b in zip(levels, levels[1:])):
        raise ValueError("levels must be distinct")
    notes = []
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", GridTooCoarseWarning)
        beta0 = [lower_level_components(p, lv, grid, tol) for lv in levels]
    notes += sorted({str(w.message) for w in caught if issubclass(w.category, GridTooCoarseWarning)})

    crossings, violations = [], []
    for lo_i in range(-1, len(levels)):
        lo = levels[lo_i] if lo_i >= 0 else -np.inf
        hi = levels[lo_i + 1] if lo_i + 1 < len(levels) else np.inf
        inside = [g for g, v in zip(groups, group_values) if lo < v <= hi]
        if not inside:
            continue
        members = [i for g in inside for i in g]
        predicted = sorted(_minkowski(predicted_deltas(classifications[i], p.n, p.s) for i in members))
        coincident = any(len(g) > 1 for g in inside)
        if np.isfinite(lo) and np.isfinite(hi):
            observed = beta0[lo_i + 1] - beta0[lo_i]
            ok = observed in predicted
            status = "indeterminate" if coincident else ("ok" if ok else "violation")
            if not ok:
                violations.append(f"crossing between levels {lo} and {hi}: delta {observed} not in {predicted}")
        else:
            observed, status = None, "unsampled"
        value = float(np.mean([values[i] for i in members]))
        crossings.append(
            Crossing(
                value,
                sorted(members),
                lo if np.isfinite(lo) else None,
                hi if np.isfinite(hi) else None,
                predicted,
                observed,
                coincident,
                status,
            )
        )
    # beta0 must not change between consecutive stationary values
    for a in range(len(levels) - 1):
        if beta0[a] != beta0[a + 1] and not any(levels[a] < v <= levels[a + 1] for v in group_values):
            violations.append(f"component count changed between {levels[a]} and {levels[a + 1]} without a stationary value")
    return LevelSweepReport(levels, beta0, crossings, grid, violations, notes)


# ------------------------------------------------------- cells and counts


@dataclass(frozen=True)
class CellAttachment:
    count: int
    dim: int
    simplex_supports: tuple[tuple[int, ...], ...]


def attached_cells(c: Classification, n: int, s: int) -> CellAttachment:
    """Cells attached when passing a nondegenerate point: their number, dimension and simplex supports.

    Supports are subsets of ``{0, ..., n-k-1}`` containing 0 with ``s-k+1`` elements.
    """
    if c.nondegenerate is not Tri.HOLDS:
        raise DegenerateError("cell attachment needs a nondegenerate point")
    u, v = n - c.k, s - c.k
    supports = tuple((0,) + rest for rest in itertools.combinations(range(1, u), v))
    count = comb(u - 1, v)
    assert count == len(supports)
    return CellAttachment(count, v + c.QI, supports)


@dataclass(frozen=True)
class MountainPass:
    r: int
    r1: int
    r2: int
    lhs: int
    rhs: int
    holds: bool


def mountain_pass_check(classifications: list[Classification], n: int, s: int) -> MountainPass:
    """Counts of minimizers (r) and index-one saddles with k = s (r1) and k = s-1 (r2)."""
    if any(c.nondegenerate is not Tri.HOLDS for c in classifications):
        raise DegenerateError("mountain-pass count needs nondegenerate points only")
    r = sum(c.m_index == 0 for c in classifications)
    r1 = sum(c.m_index == 1 and c.k == s for c in classifications)
    r2 = sum(c.m_index == 1 and c.k == s - 1 for c in classifications)
    lhs, rhs = r1 + (n - s) * r2, r - 1
    return MountainPass(r, r1, r2, lhs, rhs, lhs >= rhs)
