"""Classification of M-stationary pairs.

Sign decisions are three-valued: a quantity that should be nonzero is
*decided* only when its magnitude is outside the band ``[tol, 10 tol]``
(relative to the matrix scale for eigenvalues); inside the band the verdict
is ``indeterminate``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .model import MStationaryPair, Problem, gradients, lagrangian_hessian, tangent_space
from .numlin import DEFAULT_TOL, eigenvalue_scale, inertia_and_detsign, nullspace, restrict_form
from .stationarity import check_cc_licq

BAND = 10.0


class Tri(str, Enum):
    HOLDS = "holds"
    FAILS = "fails"
    INDETERMINATE = "indeterminate"


class DegenerateError(ValueError):
    """Operation requires a nondegenerate M-stationary pair."""


def decide_positive(value: float, tol: float, scale: float = 1.0) -> Tri:
    """Is ``value > 0``? Clean answers only outside ``[tol, 10 tol] * scale``."""
    if value > BAND * tol * scale:
        return Tri.HOLDS
    if value < tol * scale:
        return Tri.FAILS
    return Tri.INDETERMINATE


def _all(verdicts) -> Tri:
    verdicts = list(verdicts)
    if all(v is Tri.HOLDS for v in verdicts):
        return Tri.HOLDS
    if any(v is Tri.FAILS for v in verdicts):
        return Tri.FAILS
    return Tri.INDETERMINATE


@dataclass(frozen=True)
class StabilityVerdict:
    status: str  # holds | fails | indeterminate | hypothesis_unmet
    witness: dict | None = None
    signs: tuple = ()  # ((Qstar, sign or None), ...) in binary-counter order


@dataclass(frozen=True)
class SoscVerdict:
    status: str  # holds_exact | fails_with_witness | holds_sampled | indeterminate
    witness: np.ndarray | None = None
    samples_used: int = 0
    min_value: float | None = None

    @property
    def holds(self) -> bool:
        return self.status in ("holds_exact", "holds_sampled")


@dataclass
class Classification:
    nd1: Tri
    nd2: Tri
    nd3: Tri
    nd4: Tri
    nondegenerate: Tri
    k: int
    QI: int | None
    m_index: int | None
    acc: bool
    sc: bool
    restricted_eigenvalues: np.ndarray = field(repr=False, default=None)
    strong_stability: StabilityVerdict | None = None
    ss_minimizer: str | None = None
    sosc_bs: SoscVerdict | None = None
    sosc_pan: SoscVerdict | None = None


# ----------------------------------------------------------- nondegeneracy


def _restricted_eigs(p: Problem, pair: MStationaryPair, Qstar, tol: float) -> np.ndarray:
    T = tangent_space(p, pair.active, Qstar, tol)
    R = restrict_form(lagrangian_hessian(p, pair), T.space)
    return np.linalg.eigvalsh(R) if R.size else np.zeros(0)


def _nd3(pair: MStationaryPair, s: int, tol: float) -> Tri:
    if pair.active.k == s:
        return Tri.HOLDS
    I0 = list(pair.active.I0)
    return decide_positive(float(np.min(np.abs(pair.gamma[I0]))), tol)


def check_nondegeneracy(p: Problem, pair: MStationaryPair, tol: float = DEFAULT_TOL) -> Classification:
    """ND1 (CC-LICQ), ND2 (mu > 0 on Q0), ND3 (gamma != 0 on I0 unless k = s), ND4, QI and M-index."""
    if len(pair.x) != p.n:
        raise ValueError("pair dimension does not match the problem")
    active = pair.active
    licq = check_cc_licq(p, pair.x, tol)
    nd1 = decide_positive(licq.margin, tol)
    Q0 = list(active.Q0)
    nd2 = decide_positive(float(np.min(pair.mu[Q0])), tol) if Q0 else Tri.HOLDS
    nd3 = _nd3(pair, p.s, tol)
    w = _restricted_eigs(p, pair, active.Q0, tol)
    if w.size:
        nd4 = decide_positive(float(np.min(np.abs(w))), tol, eigenvalue_scale(w))
    else:
        nd4 = Tri.HOLDS
    QI = int(np.sum(w < 0)) if nd4 is Tri.HOLDS else None
    nondegenerate = _all([nd1, nd2, nd3, nd4])
    m_index = p.s - active.k + QI if nondegenerate is Tri.HOLDS else None
    sc = bool(np.all(pair.mu[Q0] > tol)) if Q0 else True
    return Classification(
        nd1, nd2, nd3, nd4, nondegenerate, active.k, QI, m_index, active.k == p.s, sc, restricted_eigenvalues=w
    )


def is_local_min_nd(p: Problem, pair: MStationaryPair, tol: float = DEFAULT_TOL) -> bool:
    """Local minimality of a nondegenerate pair: M-index zero, cross-checked against CC-LICQ/SC/ACC/SOSC."""
    c = check_nondegeneracy(p, pair, tol)
    if c.nondegenerate is not Tri.HOLDS:
        raise DegenerateError(f"pair at {pair.x} is not nondegenerate ({c.nondegenerate.value})")
    by_index = c.m_index == 0
    w = c.restricted_eigenvalues
    pd = bool(np.all(w > 0)) if w.size else True
    by_conditions = c.nd1 is Tri.HOLDS and c.sc and c.acc and pd
    assert by_index == by_conditions, "M-index route and SC/ACC/SOSC route disagree"
    return by_index


# -------------------------------------------------------- strong stability


def _decide_sign(w: np.ndarray, tol: float):
    """Determinant sign of a restricted form; None inside the band."""
    if w.size == 0:
        return 1
    scale = eigenvalue_scale(w)
    d = decide_positive(float(np.min(np.abs(w))), tol, scale)
    if d is Tri.INDETERMINATE:
        return None
    if d is Tri.FAILS:
        return 0
    return inertia_and_detsign(np.diag(w), tol)[1]


def positive_multiplier_set(pair: MStationaryPair, tol: float = DEFAULT_TOL) -> tuple[int, ...]:
    return tuple(q for q in pair.active.Q0 if pair.mu[q] > tol)


def check_strong_stability(p: Problem, pair: MStationaryPair, tol: float = DEFAULT_TOL) -> StabilityVerdict:
    """ND3 plus nonsingular restricted Hessians of equal determinant sign on every
    tangent space with Q+ subset Qstar subset Q0. Requires CC-LICQ."""
    if not check_cc_licq(p, pair.x, tol).holds:
        return StabilityVerdict("hypothesis_unmet", {"reason": "cc_licq"})
    Q0 = pair.active.Q0
    unsure_qplus = any(decide_positive(pair.mu[q], tol) is Tri.INDETERMINATE for q in Q0)
    qplus = positive_multiplier_set(pair, tol)
    free = [q for q in Q0 if q not in qplus]
    nd3 = _nd3(pair, p.s, tol)
    if nd3 is Tri.FAILS:
        I0 = pair.active.I0
        return StabilityVerdict(
            "fails", {"reason": "nd3", "indices": [i for i in I0 if abs(pair.gamma[i]) < BAND * tol]}
        )
    signs = []
    for bits in range(2 ** len(free)):
        Qstar = tuple(sorted(qplus + tuple(q for j, q in enumerate(free) if bits >> j & 1)))
        signs.append((Qstar, _decide_sign(_restricted_eigs(p, pair, Qstar, tol), tol)))
    signs = tuple(signs)
    for Qstar, sg in signs:
        if sg == 0:
            return StabilityVerdict("fails", {"reason": "singular", "subsets": [list(Qstar)]}, signs)
    decided = [(Q, sg) for Q, sg in signs if sg is not None]
    for (Qa, sa), (Qb, sb) in itertools.combinations(decided, 2):
        if sa != sb:
            return StabilityVerdict("fails", {"reason": "sign_mismatch", "subsets": [list(Qa), list(Qb)]}, signs)
    if unsure_qplus or nd3 is Tri.INDETERMINATE or len(decided) < len(signs):
        return StabilityVerdict("indeterminate", None, signs)
    return StabilityVerdict("holds", None, signs)


def check_ss_minimizer(
    p: Problem, pair: MStationaryPair, tol: float = DEFAULT_TOL, stability: StabilityVerdict | None = None
) -> str:
    """For a strongly stable pair: local minimizer iff ACC and D^2L positive definite on T M_+."""
    stability = stability or check_strong_stability(p, pair, tol)
    if stability.status != "holds":
        return "precondition_unmet"
    if pair.active.k != p.s:
        return Tri.FAILS.value
    w = _restricted_eigs(p, pair, positive_multiplier_set(pair, tol), tol)
    if w.size == 0:
        return Tri.HOLDS.value
    return decide_positive(float(np.min(w)), tol, eigenvalue_scale(w)).value


# ------------------------------------------------------------------- cones


@dataclass(frozen=True)
class ConeDescription:
    """``{xi : E xi = 0, G xi >= 0, xi_i = 0 (i in zero_coords)}``, intersected with the
    union over ``pieces`` of ``{xi : xi_i = 0 for i not in J}`` when pieces are given."""

    n: int
    equalities: np.ndarray
    inequalities: np.ndarray
    zero_coords: tuple[int, ...] = ()
    pieces: tuple[tuple[int, ...], ...] = ()

    def contains(self, xi, tol: float = 1e-9) -> bool:
        xi = np.asarray(xi, dtype=float)
        eps = tol * max(1.0, float(np.linalg.norm(xi)))
        if self.equalities.size and np.max(np.abs(self.equalities @ xi)) > eps:
            return False
        if self.inequalities.size and np.min(self.inequalities @ xi) < -eps:
            return False
        if self.zero_coords and np.max(np.abs(xi[list(self.zero_coords)])) > eps:
            return False
        if self.pieces:
            off = np.abs(xi) > eps
            return any(not np.any(np.delete(off, list(J))) for J in self.pieces)
        return True

    def piece_systems(self):
        """(equality rows, inequality rows) per piece, coordinate restrictions folded in."""
        eye = np.eye(self.n)
        base = [self.equalities.reshape(-1, self.n), eye[list(self.zero_coords)]]
        pieces = self.pieces or (tuple(range(self.n)),)
        for J in pieces:
            off = [i for i in range(self.n) if i not in J]
            yield np.vstack(base + [eye[off]]), self.inequalities.reshape(-1, self.n)


def _rows(*blocks, n):
    blocks = [np.asarray(b, dtype=float).reshape(-1, n) for b in blocks]
    return np.vstack(blocks) if blocks else np.zeros((0, n))


def critical_cone(p: Problem, pair: MStationaryPair, tol: float = DEFAULT_TOL) -> ConeDescription:
    """Definitional critical cone: linearization cone with the cardinality count, and Df xi <= 0."""
    df, dh, dg = gradients(p, pair.x)
    I0 = pair.active.I0
    drop = p.n - p.s
    pieces = tuple(
        tuple(i for i in range(p.n) if i not in Z) for Z in itertools.combinations(I0, drop)
    )
    return ConeDescription(p.n, dh, _rows(dg[list(pair.active.Q0)], -df, n=p.n), (), pieces)


def critical_cone_representation(p: Problem, pair: MStationaryPair, tol: float = DEFAULT_TOL) -> ConeDescription:
    """Constraint-only description of the critical cone; equals :func:`critical_cone` under ACC."""
    _, dh, dg = gradients(p, pair.x)
    qplus = positive_multiplier_set(pair, tol)
    rest = [q for q in pair.active.Q0 if q not in qplus]
    return ConeDescription(p.n, _rows(dh, dg[list(qplus)], n=p.n), _rows(dg[rest], n=p.n), pair.active.I0)


def tangent_cone_bouligand(p: Problem, pair: MStationaryPair) -> ConeDescription:
    """Bouligand tangent cone of ``{||x||_0 <= s}``: union of coordinate subspaces."""
    I1 = pair.active.I1
    if pair.active.k < p.s:
        others = [i for i in range(p.n) if i not in I1]
        pieces = tuple(
            tuple(sorted(I1 + extra)) for extra in itertools.combinations(others, p.s - len(I1))
        )
    else:
        pieces = (tuple(I1),)
    empty = np.zeros((0, p.n))
    return ConeDescription(p.n, empty, empty, (), pieces)


def linearization_cone_qplus(p: Problem, pair: MStationaryPair, tol: float = DEFAULT_TOL) -> ConeDescription:
    _, dh, dg = gradients(p, pair.x)
    qplus = positive_multiplier_set(pair, tol)
    rest = [q for q in pair.active.Q0 if q not in qplus]
    return ConeDescription(p.n, _rows(dh, dg[list(qplus)], n=p.n), _rows(dg[rest], n=p.n))


def pan_cone(p: Problem, pair: MStationaryPair, tol: float = DEFAULT_TOL) -> ConeDescription:
    """Linearization cone w.r.t. Q+ intersected with the Bouligand cone."""
    lin = linearization_cone_qplus(p, pair, tol)
    tb = tangent_cone_bouligand(p, pair)
    return ConeDescription(p.n, lin.equalities, lin.inequalities, (), tb.pieces)


# -------------------------------------------------------------------- SOSC


def _face_candidates(R: np.ndarray, G: np.ndarray, max_rows: int = 12):
    """Eigenvectors of R restricted to each face span of ``{G y >= 0}`` that lie in the cone.

    The minimum of ``y^T R y`` over the cone and unit sphere is attained at
    one of these (KKT points of a linearly constrained problem).
    """
    m, d = G.shape
    if m > max_rows:
        return
    for r in range(m + 1):
        for face in itertools.combinations(range(m), r):
            N = nullspace(G[list(face)], d).basis
            if N.shape[1] == 0:
                continue
            w, V = np.linalg.eigh(N.T @ R @ N)
            for lam, v in zip(w, V.T):
                for y in (N @ v, -(N @ v)):
                    if np.all(G @ y >= -1e-12):
                        yield float(lam), y


def check_sosc(
    H, cone: ConeDescription, tol: float = DEFAULT_TOL, samples: int = 10_000, rng_seed: int = 0
) -> SoscVerdict:
    """Strict positivity of ``xi^T H xi`` on the nonzero vectors of ``cone``.

    Pieces that are linear subspaces (or on whose subspace H is positive
    definite) get exact verdicts from the restricted inertia. Genuine
    polyhedral pieces are searched for a witness by directional sampling plus
    enumeration of face eigenvectors; a positive outcome there is reported as
    ``holds_sampled``.
    """
    H = np.asarray(H, dtype=float)
    scale = max(1.0, float(np.linalg.norm(H, 2)))
    rng = np.random.default_rng(rng_seed)
    statuses, used = [], 0
    worst_val, worst_vec = np.inf, None
    for eq_rows, ineq_rows in cone.piece_systems():
        S = nullspace(eq_rows, cone.n, tol)
        if S.dim == 0:
            statuses.append("holds_exact")
            continue
        B = S.basis
        R = restrict_form(H, S)
        G = ineq_rows @ B
        G = G[np.linalg.norm(G, axis=1) > 1e-12 * max(1.0, float(np.max(np.abs(ineq_rows), initial=0)))]
        w, V = np.linalg.eigh(R)
        if decide_positive(float(w[0]), tol, scale) is Tri.HOLDS:
            statuses.append("holds_exact")
            if w[0] < worst_val:
                worst_val = float(w[0])
            continue
        if G.shape[0] == 0:
            val, y = float(w[0]), V[:, 0]
            kind = "exact"
        else:
            kind = "sampled"
            val, y = np.inf, None
            dirs = rng.standard_normal((samples, S.dim))
            used += samples
            ok = np.all(dirs @ G.T >= 0, axis=1)
            if np.any(ok):
                cand = dirs[ok] / np.linalg.norm(dirs[ok], axis=1, keepdims=True)
                vals = np.einsum("ij,jk,ik->i", cand, R, cand)
                j = int(np.argmin(vals))
                val, y = float(vals[j]), cand[j]
            for lam, yy in _face_candidates(R, G):
                if lam < val:
                    val, y = lam, yy / np.linalg.norm(yy)
        if y is None:
            statuses.append("holds_sampled")
            continue
        if val < worst_val:
            worst_val, worst_vec = val, B @ y
        d = decide_positive(val, tol, scale)
        if d is Tri.FAILS:
            statuses.append("fails_with_witness")
        elif d is Tri.INDETERMINATE:
            statuses.append("indeterminate")
        else:
            statuses.append("holds_exact" if kind == "exact" else "holds_sampled")
    min_value = None if not np.isfinite(worst_val) else worst_val
    if "fails_with_witness" in statuses:
        xi = worst_vec / np.linalg.norm(worst_vec)
        return SoscVerdict("fails_with_witness", xi, used, float(xi @ H @ xi))
    if "indeterminate" in statuses:
        return SoscVerdict("indeterminate", None, used, min_value)
    if all(s == "holds_exact" for s in statuses):
        return SoscVerdict("holds_exact", None, used, min_value)
    return SoscVerdict("holds_sampled", None, used, min_value)


def sosc_bs(p: Problem, pair: MStationaryPair, tol: float = DEFAULT_TOL, samples: int = 10_000) -> SoscVerdict:
    """Second-order condition on the critical cone."""
    return check_sosc(lagrangian_hessian(p, pair), critical_cone(p, pair, tol), tol, samples)


def sosc_pan(p: Problem, pair: MStationaryPair, tol: float = DEFAULT_TOL, samples: int = 10_000) -> SoscVerdict:
    """Second-order condition on the Q+ linearization cone intersected with the Bouligand cone."""
    return check_sosc(lagrangian_hessian(p, pair), pan_cone(p, pair, tol), tol, samples)


# ------------------------------------------------------- brute-force oracle


def sample_directions(n: int, rows: np.ndarray, count: int, rng: np.random.Generator) -> np.ndarray:
    """Random directions biased toward measure-zero cone pieces.

    Each draw zeroes a random coordinate subset and then, with probability
    one half, projects onto the nullspace of a random subset of ``rows``.
    """
    rows = np.asarray(rows, dtype=float).reshape(-1, n)
    out = np.empty((count, n))
    for t in range(count):
        xi = rng.standard_normal(n)
        zero = rng.random(n) < rng.random()
        xi[zero] = 0.0
        if rows.shape[0] and rng.random() < 0.5:
            pick = rows[rng.random(rows.shape[0]) < 0.5]
            fixed = np.vstack([pick, np.eye(n)[zero]]) if pick.size or zero.any() else np.zeros((0, n))
            B = nullspace(fixed, n).basis
            xi = B @ (B.T @ xi)
        out[t] = xi
    return out


def critical_form_oracle(
    p: Problem, pair: MStationaryPair, tol: float = DEFAULT_TOL, samples: int = 20_000, rng_seed: int = 0
) -> dict:
    """Brute-force minimum of ``xi^T D^2L xi / |xi|^2`` over sampled critical-cone members."""
    H = lagrangian_hessian(p, pair)
    cone = critical_cone(p, pair, tol)
    rows = np.vstack([cone.equalities.reshape(-1, p.n), cone.inequalities.reshape(-1, p.n)])
    dirs = sample_directions(p.n, rows, samples, np.random.default_rng(rng_seed))
    best, members = None, 0
    for xi in dirs:
        norm = np.linalg.norm(xi)
        if norm < 1e-12 or not cone.contains(xi):
            continue
        members += 1
        val = float(xi @ H @ xi) / norm**2
        best = val if best is None else min(best, val)
    return {"min_value": best, "members": members, "samples": samples}


# ------------------------------------------------------------- full verdict


def classify(p: Problem, pair: MStationaryPair, tol: float = DEFAULT_TOL, samples: int = 10_000) -> Classification:
    """Nondegeneracy, M-index, strong stability, strongly-stable-minimizer test and both SOSC variants."""
    c = check_nondegeneracy(p, pair, tol)
    c.strong_stability = check_strong_stability(p, pair, tol)
    c.ss_minimizer = check_ss_minimizer(p, pair, tol, c.strong_stability)
    c.sosc_bs = sosc_bs(p, pair, tol, samples)
    c.sosc_pan = sosc_pan(p, pair, tol, samples)
    return c


def has_indeterminate(c: Classification) -> bool:
    tri = [c.nd1, c.nd2, c.nd3, c.nd4, c.nondegenerate]
    if any(t is Tri.INDETERMINATE for t in tri):
        return True
    others = [
        c.strong_stability.status if c.strong_stability else None,
        c.ss_minimizer,
        c.sosc_bs.status if c.sosc_bs else None,
        c.sosc_pan.status if c.sosc_pan else None,
    ]
    return "indeterminate" in others


def summary(c: Classification) -> dict:
    """Flat, JSON-friendly view of a classification."""
    out = {
        "nd1": c.nd1.value,
        "nd2": c.nd2.value,
        "nd3": c.nd3.value,
        "nd4": c.nd4.value,
        "nondegenerate": c.nondegenerate.value,
        "k": c.k,
        "QI": c.QI,
        "m_index": c.m_index,
        "acc": c.acc,
        "sc": c.sc,
    }
    if c.strong_stability is not None:
        out["strong_stability"] = c.strong_stability.status
    if c.ss_minimizer is not None:
        out["ss_minimizer"] = c.ss_minimizer
    if c.sosc_bs is not None:
        out["sosc_bs"] = c.sosc_bs.status
    if c.sosc_pan is not None:
        out["sosc_pan"] = c.sosc_pan.status
    return out
