"""CCOP instances, index sets at a point, multiplier pairs and the Lagrangian Hessian."""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

from . import exprcore
from .exprcore import CompiledExpr, Expr, ExprSyntaxError
from .numlin import DEFAULT_TOL, Subspace, nullspace

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib


class ProblemFormatError(ValueError):
    """Invalid problem file or problem data."""


_KEYS = {"n", "s", "objective", "equalities", "inequalities", "box", "compact_feasible"}


@dataclass(frozen=True, eq=False)
class Problem:
    """min f(x) s.t. h(x) = 0, g(x) >= 0, ||x||_0 <= s, searched inside ``box``."""

    n: int
    s: int
    objective: Expr
    equalities: tuple[Expr, ...] = ()
    inequalities: tuple[Expr, ...] = ()
    box: tuple[tuple[float, float], ...] = ()
    compact_feasible: bool = False

    def __post_init__(self):
        if self.n < 1:
            raise ProblemFormatError("n must be >= 1")
        if not 0 <= self.s < self.n:
            raise ProblemFormatError("s must be < n" if self.s >= self.n else "s must be >= 0")
        if len(self.box) != self.n:
            raise ProblemFormatError(f"box must have {self.n} intervals, got {len(self.box)}")
        for lo, hi in self.box:
            if not lo <= hi:
                raise ProblemFormatError(f"empty box interval [{lo}, {hi}]")
        for e in (self.objective, *self.equalities, *self.inequalities):
            if exprcore.max_variable_index(e) >= self.n:
                raise ProblemFormatError(
                    f"expression '{exprcore.to_string(e)}' uses a variable beyond n = {self.n}"
                )

    @property
    def n_eq(self) -> int:
        return len(self.equalities)

    @property
    def n_ineq(self) -> int:
        return len(self.inequalities)

    @cached_property
    def f(self) -> CompiledExpr:
        return exprcore.compile_expr(self.objective, self.n)

    @cached_property
    def h(self) -> tuple[CompiledExpr, ...]:
        return tuple(exprcore.compile_expr(e, self.n) for e in self.equalities)

    @cached_property
    def g(self) -> tuple[CompiledExpr, ...]:
        return tuple(exprcore.compile_expr(e, self.n) for e in self.inequalities)

    @property
    def lower(self) -> np.ndarray:
        return np.array([lo for lo, _ in self.box], dtype=float)

    @property
    def upper(self) -> np.ndarray:
        return np.array([hi for _, hi in self.box], dtype=float)

    def with_objective(self, objective: Expr) -> "Problem":
        return Problem(
            self.n, self.s, objective, self.equalities, self.inequalities, self.box, self.compact_feasible
        )

    def to_toml(self) -> str:
        """Canonical problem text, used as the echo in reports."""

        def q(e):
            return '"' + exprcore.to_string(e) + '"'

        def num(v):
            return repr(float(v))

        lines = [
            f"n = {self.n}",
            f"s = {self.s}",
            f"objective = {q(self.objective)}",
            "equalities = [" + ", ".join(q(e) for e in self.equalities) + "]",
            "inequalities = [" + ", ".join(q(e) for e in self.inequalities) + "]",
            "box = [" + ", ".join(f"[{num(lo)}, {num(hi)}]" for lo, hi in self.box) + "]",
            f"compact_feasible = {'true' if self.compact_feasible else 'false'}",
        ]
        return "\n".join(lines) + "\n"


def problem_from_dict(data: dict) -> Problem:
    unknown = set(data) - _KEYS
    if unknown:
        raise ProblemFormatError(f"unknown keys: {', '.join(sorted(unknown))}")
    for key in ("n", "s", "objective", "box"):
        if key not in data:
            raise ProblemFormatError(f"missing key '{key}'")
    n, s = data["n"], data["s"]
    if not isinstance(n, int) or not isinstance(s, int) or isinstance(n, bool) or isinstance(s, bool):
        raise ProblemFormatError("n and s must be integers")
    if n < 1:
        raise ProblemFormatError("n must be >= 1")
    if s >= n:
        raise ProblemFormatError("s must be < n")
    if s < 0:
        raise ProblemFormatError("s must be >= 0")

    def expr(text, where):
        if not isinstance(text, str):
            raise ProblemFormatError(f"{where}: expected a string expression")
        try:
            return exprcore.parse(text, n)
        except ExprSyntaxError as err:
            raise ProblemFormatError(f"{where}: {err}") from err

    def expr_list(key):
        items = data.get(key, [])
        if not isinstance(items, list):
            raise ProblemFormatError(f"{key} must be a list of strings")
        return tuple(expr(t, f"{key}[{i}]") for i, t in enumerate(items))

    box = data["box"]
    if not isinstance(box, list) or not all(isinstance(b, list) and len(b) == 2 for b in box):
        raise ProblemFormatError("box must be a list of [lo, hi] pairs")
    try:
        box = tuple((float(lo), float(hi)) for lo, hi in box)
    except (TypeError, ValueError) as err:
        raise ProblemFormatError(f"box bounds must be numbers: {err}") from err
    compact = data.get("compact_feasible", False)
    if not isinstance(compact, bool):
        raise ProblemFormatError("compact_feasible must be a boolean")
    return Problem(
        n=n,
        s=s,
        objective=expr(data["objective"], "objective"),
        equalities=expr_list("equalities"),
        inequalities=expr_list("inequalities"),
        box=box,
        compact_feasible=compact,
    )


def load_problem(path) -> Problem:
    """Read a problem file (TOML key/value format, see docs/problem-format.md)."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as err:
        raise ProblemFormatError(f"cannot read {path}: {err}") from err
    try:
        data = tomllib.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, tomllib.TOMLDecodeError) as err:
        raise ProblemFormatError(f"{path}: {err}") from err
    return problem_from_dict(data)


def bundled_problem(name: str) -> Problem:
    """Load one of the example problems shipped in ``ccop/fixtures``."""
    path = Path(__file__).with_name("fixtures") / f"{name}.toml"
    if not path.exists():
        raise ProblemFormatError(f"no bundled problem named '{name}'")
    return load_problem(path)


def loads_problem(text: str) -> Problem:
    try:
        return problem_from_dict(tomllib.loads(text))
    except tomllib.TOMLDecodeError as err:
        raise ProblemFormatError(str(err)) from err


# ------------------------------------------------------------- active data


@dataclass(frozen=True)
class ActiveData:
    x: np.ndarray
    I0: tuple[int, ...]
    I1: tuple[int, ...]
    Q0: tuple[int, ...]
    n_eq: int

    @property
    def k(self) -> int:
        return len(self.I1)

    @property
    def m(self) -> int:
        return self.n_eq + len(self.Q0)

    @property
    def ell(self) -> int:
        return self.m + len(self.I0)


def active_data(p: Problem, x, tol_zero: float = DEFAULT_TOL, tol_act: float = DEFAULT_TOL) -> ActiveData:
    """Zero coordinates, support and active inequality constraints at ``x``."""
    x = np.asarray(x, dtype=float)
    I0 = tuple(int(i) for i in np.flatnonzero(np.abs(x) <= tol_zero))
    I1 = tuple(int(i) for i in np.flatnonzero(np.abs(x) > tol_zero))
    xs = list(x)
    Q0 = tuple(q for q, g in enumerate(p.g) if abs(g.value(xs)) <= tol_act)
    return ActiveData(x.copy(), I0, I1, Q0, p.n_eq)


def constraint_values(p: Problem, x) -> tuple[np.ndarray, np.ndarray]:
    xs = [float(v) for v in x]
    return (
        np.array([h.value(xs) for h in p.h], dtype=float),
        np.array([g.value(xs) for g in p.g], dtype=float),
    )


def feasibility_residual(p: Problem, x) -> float:
    hv, gv = constraint_values(p, x)
    r = 0.0
    if hv.size:
        r = max(r, float(np.max(np.abs(hv))))
    if gv.size:
        r = max(r, float(np.max(-gv)))
    return r


def feasible(p: Problem, x, tol: float = DEFAULT_TOL, tol_zero: float = DEFAULT_TOL) -> bool:
    x = np.asarray(x, dtype=float)
    if int(np.sum(np.abs(x) > tol_zero)) > p.s:
        return False
    return feasibility_residual(p, x) <= tol


# ------------------------------------------------------------- multipliers


@dataclass(frozen=True)
class MStationaryPair:
    """A point with multipliers (lambda over P, mu over Q, gamma over coordinates)."""

    x: np.ndarray
    lam: np.ndarray
    mu: np.ndarray
    gamma: np.ndarray
    stationarity_residual: float
    feasibility_residual: float
    active: ActiveData = field(repr=False)


def gradients(p: Problem, x) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradient of f and Jacobians of h and g at ``x`` (rows = constraints)."""
    xs = [float(v) for v in x]
    df = p.f.bundle(xs).gradient
    dh = np.array([h.bundle(xs).gradient for h in p.h]).reshape(p.n_eq, p.n)
    dg = np.array([g.bundle(xs).gradient for g in p.g]).reshape(p.n_ineq, p.n)
    return df, dh, dg


def stationarity_residual(p: Problem, x, lam, mu, gamma) -> float:
    """``|| Df - sum lam Dh - sum mu Dg - gamma ||_inf``."""
    df, dh, dg = gradients(p, x)
    r = df - dh.T @ np.asarray(lam, dtype=float) - dg.T @ np.asarray(mu, dtype=float) - np.asarray(gamma, dtype=float)
    return float(np.max(np.abs(r))) if r.size else 0.0


def lagrangian_hessian(p: Problem, pair: MStationaryPair) -> np.ndarray:
    """``D^2 f - sum lam_p D^2 h_p - sum mu_q D^2 g_q``.

    This is the Hessian of ``L = f - lam.h - mu.g - gamma.x``, whose gradient
    vanishes exactly when the stationarity residual does.
    """
    if len(pair.x) != p.n or len(pair.lam) != p.n_eq or len(pair.mu) != p.n_ineq:
        raise ValueError("pair dimensions do not match the problem")
    xs = [float(v) for v in pair.x]
    H = p.f.bundle(xs).hessian.copy()
    for lam, h in zip(pair.lam, p.h):
        if lam != 0.0:
            H -= lam * h.bundle(xs).hessian
    for mu, g in zip(pair.mu, p.g):
        if mu != 0.0:
            H -= mu * g.bundle(xs).hessian
    return H


def lagrangian_value(p: Problem, pair: MStationaryPair, x) -> float:
    xs = [float(v) for v in x]
    val = p.f.value(xs)
    val -= sum(l * h.value(xs) for l, h in zip(pair.lam, p.h))
    val -= sum(m * g.value(xs) for m, g in zip(pair.mu, p.g))
    val -= float(np.dot(pair.gamma, xs))
    return float(val)


# --------------------------------------------------------- tangent spaces


@dataclass(frozen=True)
class TangentFamily:
    base: ActiveData
    Qstar: tuple[int, ...]
    space: Subspace


def tangent_rows(p: Problem, x, Qstar: Sequence[int], I0: Sequence[int]) -> np.ndarray:
    _, dh, dg = gradients(p, x)
    rows = [dh]
    if len(Qstar):
        rows.append(dg[list(Qstar)])
    if len(I0):
        rows.append(np.eye(p.n)[list(I0)])
    return np.vstack(rows) if rows else np.zeros((0, p.n))


def tangent_space(p: Problem, active: ActiveData, Qstar: Sequence[int], tol: float = DEFAULT_TOL) -> TangentFamily:
    """Tangent space of ``{h = 0, g_q = 0 (q in Qstar), x_i = 0 (i in I0)}`` at the base point."""
    if not set(Qstar) <= set(active.Q0):
        raise ValueError("Qstar must be a subset of the active set Q0")
    rows = tangent_rows(p, active.x, tuple(Qstar), active.I0)
    return TangentFamily(active, tuple(sorted(Qstar)), nullspace(rows, p.n, tol))
