"""CC-LICQ, multiplier recovery, M-stationarity and an enumerative search for M-stationary points."""

from __future__ import annotations

import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import qmc

from . import exprcore
from .exprcore import Const, EvaluationError, Var
from .model import (
    ActiveData,
    MStationaryPair,
    Problem,
    active_data,
    feasibility_residual,
    feasible,
    gradients,
)
from .numlin import DEFAULT_TOL

log = logging.getLogger(__name__)


# ----------------------------------------------------------------- CC-LICQ


@dataclass(frozen=True)
class CCLicqReport:
    holds: bool
    gradient_matrix: np.ndarray
    min_singular_value: float | None  # None when there are no rows
    max_singular_value: float | None

    @property
    def margin(self) -> float:
        """``sigma_min / max(1, sigma_max)``; infinite for an empty row set."""
        if self.min_singular_value is None:
            return float("inf")
        if self.gradient_matrix.shape[0] > self.gradient_matrix.shape[1]:
            return 0.0
        return self.min_singular_value / max(1.0, self.max_singular_value)


def cc_licq_rows(p: Problem, active: ActiveData) -> np.ndarray:
    _, dh, dg = gradients(p, active.x)
    parts = [dh, dg[list(active.Q0)], np.eye(p.n)[list(active.I0)]]
    return np.vstack(parts).reshape(-1, p.n)


def check_cc_licq(
    p: Problem, x, tol: float = DEFAULT_TOL, tol_zero: float = DEFAULT_TOL, tol_act: float = DEFAULT_TOL
) -> CCLicqReport:
    """Linear independence of the equality gradients, active inequality gradients and e_i, i in I0."""
    active = active_data(p, x, tol_zero, tol_act)
    rows = cc_licq_rows(p, active)
    if rows.shape[0] == 0:
        return CCLicqReport(True, rows, None, None)
    sv = np.linalg.svd(rows, compute_uv=False)
    smin = float(sv[-1]) if rows.shape[0] <= rows.shape[1] else 0.0
    smax = float(sv[0])
    report = CCLicqReport(False, rows, smin, smax)
    holds = rows.shape[0] <= p.n and report.margin > tol
    return CCLicqReport(holds, rows, smin, smax)


# ------------------------------------------------------------- multipliers


@dataclass(frozen=True)
class NoCertificate:
    """Multiplier equation M1 has no solution within tolerance."""

    residual: float
    active: ActiveData

    def __bool__(self):
        return False


def multiplier_matrix(p: Problem, active: ActiveData) -> np.ndarray:
    """Columns: Dh_p (p in P), Dg_q (q in Q0), e_i (i in I0)."""
    _, dh, dg = gradients(p, active.x)
    cols = [dh.T, dg[list(active.Q0)].T, np.eye(p.n)[:, list(active.I0)]]
    return np.hstack(cols).reshape(p.n, -1)


def _unpack(p: Problem, active: ActiveData, z: np.ndarray):
    lam = z[: p.n_eq].copy()
    mu = np.zeros(p.n_ineq)
    mu[list(active.Q0)] = z[p.n_eq : p.n_eq + len(active.Q0)]
    gamma = np.zeros(p.n)
    gamma[list(active.I0)] = z[p.n_eq + len(active.Q0) :]
    return lam, mu, gamma


def multipliers(
    p: Problem, x, tol: float = DEFAULT_TOL, tol_zero: float = DEFAULT_TOL, tol_act: float = DEFAULT_TOL
) -> MStationaryPair | NoCertificate:
    """Least-squares solution of M1 over the columns for P, Q0(x) and I0(x).

    Sign of mu is not checked here.
    """
    x = np.asarray(x, dtype=float)
    active = active_data(p, x, tol_zero, tol_act)
    A = multiplier_matrix(p, active)
    df = gradients(p, x)[0]
    if A.shape[1]:
        z = np.linalg.lstsq(A, df, rcond=None)[0]
        r = df - A @ z
    else:
        z = np.zeros(0)
        r = df
    residual = float(np.max(np.abs(r))) if r.size else 0.0
    if residual > tol:
        return NoCertificate(residual, active)
    lam, mu, gamma = _unpack(p, active, z)
    return MStationaryPair(x.copy(), lam, mu, gamma, residual, feasibility_residual(p, x), active)


@dataclass(frozen=True)
class MStationarity:
    ok: bool
    pair: MStationaryPair | None = None
    reason: str = ""

    def __bool__(self):
        return self.ok


def check_m_stationarity(
    p: Problem, x, tol: float = DEFAULT_TOL, tol_zero: float = DEFAULT_TOL, tol_act: float = DEFAULT_TOL
) -> MStationarity:
    x = np.asarray(x, dtype=float)
    try:
        if not feasible(p, x, tol, tol_zero):
            return MStationarity(False, reason="infeasible")
        pair = multipliers(p, x, tol, tol_zero, tol_act)
    except EvaluationError as err:
        return MStationarity(False, reason=f"evaluation error: {err}")
    if not pair:
        return MStationarity(False, reason=f"no multipliers (residual {pair.residual:.3g})")
    Q0 = list(pair.active.Q0)
    if Q0 and float(np.min(pair.mu[Q0])) < -tol:
        return MStationarity(False, pair, reason=f"negative inequality multiplier (mu = {np.min(pair.mu[Q0]):.6g})")
    return MStationarity(True, pair)


# ------------------------------------------------------------------ search


@dataclass(frozen=True)
class SolveConfig:
    seeds_per_system: int = 64
    max_newton_iters: int = 100
    newton_tol: float = 1e-10
    cluster_radius: float = 1e-6
    rng_seed: int = 0
    n_jobs: int = 1

    def __post_init__(self):
        for name in ("seeds_per_system", "max_newton_iters", "n_jobs"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.newton_tol <= 0 or self.cluster_radius <= 0 or self.rng_seed < 0:
            raise ValueError("newton_tol and cluster_radius must be positive, rng_seed nonnegative")


class SolveResult(list):
    """List of M-stationary pairs with per-system solver statistics in ``stats``."""

    def __init__(self, pairs=(), stats=None):
        super().__init__(pairs)
        self.stats = stats or {}


@dataclass
class _System:
    support: tuple[int, ...]
    active: tuple[int, ...]
    roots: list = field(default_factory=list)
    runs: int = 0
    converged: int = 0


def _residual_and_jacobian(p: Problem, system: _System, z: np.ndarray, want_jac: bool = True):
    I1 = list(system.support)
    A = list(system.active)
    k = len(I1)
    x = np.zeros(p.n)
    x[I1] = z[:k]
    lam = z[k : k + p.n_eq]
    mu = z[k + p.n_eq :]
    xs = list(x)
    fb = p.f.bundle(xs)
    hb = [h.bundle(xs) for h in p.h]
    gb = [p.g[q].bundle(xs) for q in A]
    dh = np.array([b.gradient for b in hb]).reshape(p.n_eq, p.n)
    dg = np.array([b.gradient for b in gb]).reshape(len(A), p.n)
    r1 = fb.gradient[I1] - dh[:, I1].T @ lam - dg[:, I1].T @ mu
    F = np.concatenate([r1, [b.value for b in hb], [b.value for b in gb]])
    if not want_jac:
        return F, None
    HL = fb.hessian.copy()
    for l, b in zip(lam, hb):
        HL -= l * b.hessian
    for m_, b in zip(mu, gb):
        HL -= m_ * b.hessian
    size = k + p.n_eq + len(A)
    J = np.zeros((size, size))
    J[:k, :k] = HL[np.ix_(I1, I1)]
    J[:k, k : k + p.n_eq] = -dh[:, I1].T
    J[:k, k + p.n_eq :] = -dg[:, I1].T
    J[k : k + p.n_eq, :k] = dh[:, I1]
    J[k + p.n_eq :, :k] = dg[:, I1]
    return F, J


def _newton(p: Problem, system: _System, z0: np.ndarray, cfg: SolveConfig, width: float):
    """Damped Newton (least-squares steps, Armijo backtracking on ||F||)."""
    z = z0
    try:
        F, J = _residual_and_jacobian(p, system, z)
    except EvaluationError:
        return None
    norm = float(np.linalg.norm(F))
    k = len(system.support)
    for _ in range(cfg.max_newton_iters):
        if float(np.max(np.abs(F), initial=0.0)) <= cfg.newton_tol:
            return z
        step = np.linalg.lstsq(J, -F, rcond=None)[0]
        # no predicted decrease: stuck at a least-squares point of an inconsistent system
        if float(np.linalg.norm(F + J @ step)) > 0.99 * norm:
            return None
        t = 1.0
        while t >= 1e-10:
            trial = z + t * step
            try:
                F_new, _ = _residual_and_jacobian(p, system, trial, want_jac=False)
            except EvaluationError:
                t *= 0.5
                continue
            norm_new = float(np.linalg.norm(F_new))
            if np.isfinite(norm_new) and norm_new <= (1.0 - 1e-4 * t) * norm:
                break
            t *= 0.5
        else:
            return z if float(np.max(np.abs(F), initial=0.0)) <= cfg.newton_tol else None
        z = trial
        if np.any(np.abs(z[:k]) > 10.0 * width + 1e3):
            return None
        F, J = _residual_and_jacobian(p, system, z)
        norm = float(np.linalg.norm(F))
    return z if float(np.max(np.abs(F), initial=0.0)) <= cfg.newton_tol else None


def _initial_multipliers(p: Problem, system: _System, x: np.ndarray) -> np.ndarray:
    I1 = list(system.support)
    df, dh, dg = gradients(p, x)
    cols = np.vstack([dh, dg[list(system.active)]]).reshape(-1, p.n)[:, I1].T
    if cols.shape[1] == 0:
        return np.zeros(0)
    return np.linalg.lstsq(cols, df[I1], rcond=None)[0]


def _solve_system(p: Problem, system: _System, cfg: SolveConfig) -> _System:
    I1 = list(system.support)
    k = len(I1)
    if k == 0:
        system.runs = 1
        system.converged = 1
        system.roots.append(np.zeros(p.n))
        return system
    lo, hi = p.lower[I1], p.upper[I1]
    width = float(np.max(hi - lo)) if k else 1.0
    sampler = qmc.Halton(d=k, scramble=True, seed=cfg.rng_seed)
    seeds = qmc.scale(sampler.random(cfg.seeds_per_system), lo, hi) if np.all(hi > lo) else np.tile(lo, (cfg.seeds_per_system, 1))
    for seed in seeds:
        system.runs += 1
        x = np.zeros(p.n)
        x[I1] = seed
        try:
            z0 = np.concatenate([seed, _initial_multipliers(p, system, x)])
        except EvaluationError:
            continue
        if z0.size < k + p.n_eq + len(system.active):
            z0 = np.concatenate([z0, np.zeros(k + p.n_eq + len(system.active) - z0.size)])
        z = _newton(p, system, z0, cfg, width)
        if z is None:
            continue
        system.converged += 1
        x = np.zeros(p.n)
        x[I1] = z[:k]
        system.roots.append(x)
    return system


def _cluster(points: list[np.ndarray], radius: float) -> list[np.ndarray]:
    clusters: list[list[np.ndarray]] = []
    for x in points:
        for members in clusters:
            if np.max(np.abs(members[0] - x)) <= radius:
                members.append(x)
                break
        else:
            clusters.append([x])
    return [np.median(np.array(members), axis=0) for members in clusters]


def _sort_key(pair: MStationaryPair):
    return (pair.active.k, pair.active.I1, tuple(pair.x))


def solve_all(
    p: Problem,
    cfg: SolveConfig | None = None,
    tol: float = DEFAULT_TOL,
    tol_zero: float = DEFAULT_TOL,
    tol_act: float = DEFAULT_TOL,
) -> SolveResult:
    """All M-stationary points found in the box, by enumeration of (support, active set) systems.

    For every support I1 with |I1| <= s and every A subset of Q, a damped Newton
    method is run on the square system stationarity-on-I1 / h = 0 / g_A = 0 /
    x_I0 = 0 from deterministic Halton seeds in the box. Roots are verified with
    :func:`check_m_stationarity`, clustered, and returned sorted by
    ``(|I1|, I1, coordinates)``.
    """
    cfg = cfg or SolveConfig()
    systems = [
        _System(support, active)
        for size in range(p.s + 1)
        for support in itertools.combinations(range(p.n), size)
        for r in range(p.n_ineq + 1)
        for active in itertools.combinations(range(p.n_ineq), r)
    ]
    if cfg.n_jobs > 1:
        with ThreadPoolExecutor(max_workers=cfg.n_jobs) as pool:
            systems = list(pool.map(lambda s: _solve_system(p, s, cfg), systems))
    else:
        systems = [_solve_system(p, s, cfg) for s in systems]

    candidates = []
    lo, hi = p.lower, p.upper
    for system in systems:
        for x in system.roots:
            x = np.where(np.abs(x) <= tol_zero, 0.0, x)
            if np.any(x < lo - tol) or np.any(x > hi + tol):
                continue
            if check_m_stationarity(p, x, tol, tol_zero, tol_act):
                candidates.append(x)
    candidates.sort(key=tuple)
    pairs = []
    for rep in _cluster(candidates, cfg.cluster_radius):
        rep = np.where(np.abs(rep) <= tol_zero, 0.0, rep)
        verdict = check_m_stationarity(p, rep, tol, tol_zero, tol_act)
        if verdict:
            pairs.append(verdict.pair)
        else:  # pragma: no cover - the median of verified roots failed verification
            log.warning("cluster representative %s failed verification: %s", rep, verdict.reason)
    pairs.sort(key=_sort_key)
    stats = {
        "systems": len(systems),
        "newton_runs": sum(s.runs for s in systems),
        "converged_runs": sum(s.converged for s in systems),
        "verified_roots": len(candidates),
        "points": len(pairs),
        "per_system": [
            {
                "support": list(s.support),
                "active": list(s.active),
                "runs": s.runs,
                "converged": s.converged,
            }
            for s in systems
        ],
    }
    return SolveResult(pairs, stats)


# ----------------------------------------------------- perturbation studies


def perturbed_problem(p: Problem, linear: Sequence[float], epsilon: float, quadratic_shift: float | None = None) -> Problem:
    """The problem with objective ``f + epsilon * c.x`` (plus ``epsilon^2 * shift``)."""
    if len(linear) != p.n:
        raise ValueError(f"linear perturbation must have length {p.n}")
    obj = p.objective
    for i, c in enumerate(linear):
        coef = float(epsilon) * float(c)
        if coef != 0.0:
            obj = exprcore.add(obj, exprcore.mul(Const(coef), Var(i)))
    if quadratic_shift:
        obj = exprcore.add(obj, Const(float(epsilon) ** 2 * float(quadratic_shift)))
    return p.with_objective(obj)


def perturb_experiment(
    p: Problem,
    linear: Sequence[float],
    epsilons: Sequence[float],
    quadratic_shift: float | None = None,
    reference: Sequence[Sequence[float]] | None = None,
    radius: float = 0.5,
    cfg: SolveConfig | None = None,
    tol: float = DEFAULT_TOL,
) -> list[dict]:
    """Re-solve ``f + eps * c.x`` for each eps and compare with the unperturbed stationary set.

    Reference points default to the unperturbed M-stationary points. A row
    reports a bifurcation when some reference point does not have exactly
    one perturbed M-stationary point within ``radius``.
    """
    from .classify import classify, summary

    cfg = cfg or SolveConfig()
    base = solve_all(p, cfg, tol)
    base_cls = [summary(classify(p, pair, tol)) for pair in base]
    refs = [np.asarray(r, dtype=float) for r in reference] if reference is not None else [q.x for q in base]
    rows = []
    for eps in epsilons:
        pp = perturbed_problem(p, linear, eps, quadratic_shift)
        pairs = base if eps == 0 else solve_all(pp, cfg, tol)
        counts = [int(sum(np.linalg.norm(q.x - r) < radius for q in pairs)) for r in refs]
        points = []
        for q in pairs:
            full = classify(pp, q, tol)
            cls = summary(full)
            deltas = []
            if base:
                nearest = int(np.argmin([np.linalg.norm(q.x - b.x) for b in base]))
                deltas = sorted(key for key, val in cls.items() if base_cls[nearest].get(key) != val)
                nearest_x = base[nearest].x
            else:
                nearest_x = None
            points.append({"pair": q, "classification": full, "nearest_reference": nearest_x, "changed": deltas})
        rows.append(
            {
                "epsilon": float(eps),
                "points": points,
                "counts_near_reference": counts,
                "bifurcation": any(c != 1 for c in counts),
            }
        )
    return rows


def genericity_probe(
    p: Problem,
    trials: int,
    magnitude: float,
    rng_seed: int = 0,
    tol: float = DEFAULT_TOL,
    cfg: SolveConfig | None = None,
) -> dict:
    """Fraction of random linear tilts ``f + c.x`` whose M-stationary points are all nondegenerate.

    ``c`` is drawn uniformly from ``[-magnitude, magnitude]^n``. Each trial is
    labelled ``nondegenerate``, ``degenerate`` or ``indeterminate`` (some
    sign decision fell inside the tolerance band).
    """
    from .classify import Tri, check_nondegeneracy

    if trials < 1:
        raise ValueError("trials must be >= 1")
    cfg = cfg or SolveConfig()
    rng = np.random.default_rng(rng_seed)
    statuses = []
    licq_ok = 0
    for _ in range(trials):
        c = rng.uniform(-magnitude, magnitude, size=p.n)
        pp = perturbed_problem(p, c, 1.0)
        pairs = solve_all(pp, cfg, tol)
        verdicts = [check_nondegeneracy(pp, q, tol) for q in pairs]
        if all(v.nd1 is Tri.HOLDS for v in verdicts):
            licq_ok += 1
        if all(v.nondegenerate is Tri.HOLDS for v in verdicts):
            statuses.append("nondegenerate")
        elif any(v.nondegenerate is Tri.FAILS for v in verdicts):
            statuses.append("degenerate")
        else:
            statuses.append("indeterminate")
    return {
        "trials": trials,
        "magnitude": float(magnitude),
        "rng_seed": rng_seed,
        "nondegenerate_fraction": statuses.count("nondegenerate") / trials,
        "cc_licq_fraction": licq_ok / trials,
        "degenerate_trials": statuses.count("degenerate"),
        "indeterminate_trials": statuses.count("indeterminate"),
        "statuses": statuses,
    }
