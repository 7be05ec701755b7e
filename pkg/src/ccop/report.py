"""Report assembly and deterministic serialization (JSON and plain text)."""

from __future__ import annotations

import json
import math
from enum import Enum

import numpy as np

from . import __version__
from .classify import BAND, Classification, Tri, critical_form_oracle, summary
from .model import MStationaryPair, Problem
from .morse import LevelSweepReport, MountainPass, attached_cells

TOOL = "ccop"


# ----------------------------------------------------------- serialization


def format_float(v: float) -> str | None:
    """17 significant digits; None for non-finite values."""
    v = float(v)
    if not math.isfinite(v):
        return None
    text = "%.17g" % v
    if not any(c in text for c in ".eEn"):
        text += ".0"
    return text


def _plain(obj):
    """Convert numpy scalars/arrays, enums and tuples to plain JSON-able values."""
    if isinstance(obj, Enum):
        return obj.value
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    return obj


def _emit(obj, indent: int, level: int) -> str:
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if obj is None:
        return "null"
    if obj is True:
        return "true"
    if obj is False:
        return "false"
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        text = format_float(obj)
        return "null" if text is None else text
    if isinstance(obj, str):
        return json.dumps(obj, ensure_ascii=False)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(k)}: {_emit(v, indent, level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, list):
        if not obj:
            return "[]"
        if all(isinstance(v, (int, float)) and not isinstance(v, bool) or v is None for v in obj):
            return "[" + ", ".join(_emit(v, indent, level + 1) for v in obj) + "]"
        items = [pad + _emit(v, indent, level + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(report: dict, indent: int = 2) -> str:
    """Deterministic JSON text; key order is insertion order."""
    return _emit(_plain(report), indent, 0) + "\n"


# ----------------------------------------------------------------- records


def point_record(
    p: Problem, pair: MStationaryPair, c: Classification, oracle: dict | None = None
) -> dict:
    a = pair.active
    cls = summary(c)
    cls["strong_stability"] = {
        "status": c.strong_stability.status,
        "witness": c.strong_stability.witness,
    }
    for name in ("sosc_bs", "sosc_pan"):
        v = getattr(c, name)
        cls[name] = {
            "status": v.status,
            "witness": None if v.witness is None else v.witness,
            "samples_used": v.samples_used,
            "min_value": v.min_value,
        }
    cls["restricted_eigenvalues"] = c.restricted_eigenvalues
    rec = {
        "x": pair.x,
        "objective_value": p.f.value(list(pair.x)),
        "multipliers": {"lambda": pair.lam, "mu": pair.mu, "gamma": pair.gamma},
        "residuals": {
            "stationarity": pair.stationarity_residual,
            "feasibility": pair.feasibility_residual,
        },
        "active": {"I0": list(a.I0), "I1": list(a.I1), "Q0": list(a.Q0), "k": a.k, "m": a.m, "ell": a.ell},
        "classification": cls,
    }
    if c.nondegenerate is Tri.HOLDS:
        cells = attached_cells(c, p.n, p.s)
        rec["cells"] = {"count": cells.count, "dim": cells.dim, "simplex_supports": cells.simplex_supports}
    if oracle is not None:
        rec["critical_form_oracle"] = oracle
    return rec


def oracle_notes(records: list[dict], tol: float = 1e-8) -> list[str]:
    notes = []
    for i, rec in enumerate(records):
        o = rec.get("critical_form_oracle")
        if o is None:
            continue
        if o["min_value"] is None:
            notes.append(f"point {i}: no nonzero critical direction found by sampling")
            continue
        v = o["min_value"]
        if v > BAND * tol:
            sign = "strictly positive, so the form does not vanish on nonzero critical directions"
        elif v < -BAND * tol:
            sign = "negative"
        else:
            sign = "zero within tolerance"
        notes.append(
            f"point {i}: sampled minimum of xi^T D2L xi / |xi|^2 over nonzero critical directions "
            f"is {format_float(v)} ({o['members']} of {o['samples']} samples in the cone): {sign}"
        )
    return notes


def base_report(command: str, p: Problem, config: dict) -> dict:
    return {
        "tool": TOOL,
        "tool_version": __version__,
        "command": command,
        "problem_echo": p.to_toml(),
        "config_echo": config,
    }


def analysis_section(p: Problem, pairs, classifications, oracle_samples: int = 4000, tol: float = 1e-8) -> dict:
    records = []
    for pair, c in zip(pairs, classifications):
        oracle = critical_form_oracle(p, pair, tol, samples=oracle_samples) if oracle_samples else None
        records.append(point_record(p, pair, c, oracle))
    return {"points": records, "notes": oracle_notes(records, tol)}


def morse_section(sweep: LevelSweepReport, mp: MountainPass | None) -> dict:
    return {
        "grid": sweep.grid,
        "levels": sweep.levels,
        "beta0": sweep.beta0,
        "crossings": [
            {
                "value": c.value,
                "points": c.points,
                "level_below": c.level_below,
                "level_above": c.level_above,
                "predicted": c.predicted,
                "observed": c.observed,
                "coincident": c.coincident,
                "matches": c.matches,
                "status": c.status,
            }
            for c in sweep.crossings
        ],
        "violations": sweep.violations,
        "notes": sweep.notes,
        "indeterminate": sweep.indeterminate,
        "mountain_pass": None
        if mp is None
        else {"r": mp.r, "r1": mp.r1, "r2": mp.r2, "lhs": mp.lhs, "rhs": mp.rhs, "holds": mp.holds},
    }


# -------------------------------------------------------------------- text


def to_text(report: dict) -> str:
    """Human-readable rendering of a report dictionary."""
    rep = _plain(report)
    out = [f"{rep['tool']} {rep['tool_version']} {rep['command']}", "", "problem:"]
    out += ["  " + line for line in rep["problem_echo"].splitlines()]

    def fmt_vec(v):
        return "(" + ", ".join("%.10g" % x for x in v) + ")"

    def points_block(points, indent="  "):
        lines = []
        for i, pt in enumerate(points):
            c = pt["classification"]
            lines.append(f"{indent}[{i}] x = {fmt_vec(pt['x'])}  f = {'%.10g' % pt['objective_value']}")
            m = pt["multipliers"]
            lines.append(
                f"{indent}    lambda = {fmt_vec(m['lambda'])}  mu = {fmt_vec(m['mu'])}  gamma = {fmt_vec(m['gamma'])}"
            )
            lines.append(
                f"{indent}    nd1..nd4 = {c['nd1']}/{c['nd2']}/{c['nd3']}/{c['nd4']}  nondegenerate = {c['nondegenerate']}"
                f"  k = {c['k']}  QI = {c['QI']}  m_index = {c['m_index']}"
            )
            ss = c["strong_stability"]
            wit = f" witness {ss['witness']}" if ss["witness"] else ""
            lines.append(
                f"{indent}    strong_stability = {ss['status']}{wit}  ss_minimizer = {c['ss_minimizer']}"
                f"  sosc_bs = {c['sosc_bs']['status']}  sosc_pan = {c['sosc_pan']['status']}"
            )
        return lines

    if "points" in rep:
        out += ["", f"M-stationary points: {len(rep['points'])}"]
        out += points_block(rep["points"])
    for note in rep.get("notes", []):
        out.append(f"note: {note}")
    if "morse" in rep:
        mo = rep["morse"]
        out += ["", f"level sweep (grid {mo['grid']}):"]
        out += [f"  level {'%.6g' % lv}: beta0 = {b}" for lv, b in zip(mo["levels"], mo["beta0"])]
        for cr in mo["crossings"]:
            out.append(
                f"  crossing at {'%.10g' % cr['value']}: observed {cr['observed']} predicted {cr['predicted']} [{cr['status']}]"
            )
        mp = mo["mountain_pass"]
        if mp:
            out.append(
                f"  mountain pass: r = {mp['r']}, r1 = {mp['r1']}, r2 = {mp['r2']}: {mp['lhs']} >= {mp['rhs']} "
                f"{'holds' if mp['holds'] else 'fails'}"
            )
        out += [f"  violation: {v}" for v in mo["violations"]]
    if "perturb" in rep:
        out += ["", "perturbation:"]
        for row in rep["perturb"]:
            out.append(
                f"  epsilon = {'%.6g' % row['epsilon']}: {len(row['points'])} points, counts near reference "
                f"{row['counts_near_reference']}, bifurcation = {row['bifurcation']}"
            )
            out += points_block(row["points"], "    ")
    if "probe" in rep:
        pr = rep["probe"]
        out += [
            "",
            f"probe: {pr['trials']} trials, magnitude {pr['magnitude']}: nondegenerate fraction "
            f"{pr['nondegenerate_fraction']}, degenerate {pr['degenerate_trials']}, indeterminate {pr['indeterminate_trials']}",
        ]
    return "\n".join(out) + "\n"
