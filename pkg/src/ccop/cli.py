"""Command-line interface: ``ccop analyze | morse | perturb | probe``.

Exit codes: 0 success, 2 usage or parse error, 3 numerical borderline
(indeterminate verdict or degenerate point where nondegeneracy is required),
4 Morse analysis without the compactness flag.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .classify import DegenerateError, classify, has_indeterminate
from .model import ProblemFormatError, load_problem
from .morse import level_sweep, mountain_pass_check
from .report import analysis_section, base_report, dumps, morse_section, point_record, to_text
from .stationarity import SolveConfig, genericity_probe, perturb_experiment, solve_all

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_NOT_COMPACT = 0, 2, 3, 4

log = logging.getLogger("ccop")


class UsageError(Exception):
    pass


def parse_vector(text: str, name: str) -> list[float]:
    try:
        vals = [float(t) for t in text.split(",") if t.strip()]
    except ValueError as err:
        raise UsageError(f"--{name}: malformed number list '{text}'") from err
    if not vals:
        raise UsageError(f"--{name}: empty list")
    return vals


def _common(sp: argparse.ArgumentParser):
    sp.add_argument("--problem", required=True, help="problem file (TOML key/value format)")
    sp.add_argument("--tol", type=float, default=1e-8)
    sp.add_argument("--seeds", type=int, default=64, help="Newton seeds per (support, active set) system")
    sp.add_argument("--rng-seed", type=int, default=0)
    sp.add_argument("--jobs", type=int, default=1, help="worker threads for the solver")
    sp.add_argument("--out", default=None, help="output path (default: standard output)")
    sp.add_argument("--format", choices=("json", "text"), default="json")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ccop", description="Analyze cardinality-constrained optimization problems.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("analyze", help="find and classify all M-stationary points")
    _common(sp)

    sp = sub.add_parser("morse", help="lower level set sweep and mountain-pass count")
    _common(sp)
    sp.add_argument("--grid", type=int, default=201, help="grid nodes per axis")
    sp.add_argument("--levels", default="auto", help="'auto' or a comma-separated list of levels")

    sp = sub.add_parser("perturb", help="re-solve under linear objective perturbations")
    _common(sp)
    sp.add_argument("--linear", required=True, help="direction c as 'c1,...,cn'")
    sp.add_argument("--epsilons", required=True, help="comma-separated perturbation sizes")
    sp.add_argument("--quadratic-shift", type=float, default=None)
    sp.add_argument("--radius", type=float, default=0.5, help="neighbourhood radius for bifurcation counts")

    sp = sub.add_parser("probe", help="genericity probe with random linear tilts")
    _common(sp)
    sp.add_argument("--trials", type=int, default=100)
    sp.add_argument("--magnitude", type=float, default=1e-2)
    return ap


def _config(args) -> SolveConfig:
    try:
        return SolveConfig(seeds_per_system=args.seeds, rng_seed=args.rng_seed, n_jobs=args.jobs)
    except ValueError as err:
        raise UsageError(str(err)) from err


def _config_echo(args, **extra) -> dict:
    # thread count is deliberately absent: reports must not depend on it
    echo = {"tol": args.tol, "seeds": args.seeds, "rng_seed": args.rng_seed}
    echo.update(extra)
    return echo


def _analyze(args, p):
    cfg = _config(args)
    pairs = solve_all(p, cfg, args.tol)
    cls = [classify(p, q, args.tol) for q in pairs]
    report = base_report("analyze", p, _config_echo(args))
    report.update(analysis_section(p, pairs, cls, tol=args.tol))
    report["solve_stats"] = {k: v for k, v in pairs.stats.items() if k != "per_system"}
    code = EXIT_NUMERIC if any(has_indeterminate(c) for c in cls) else EXIT_OK
    return report, code


def _morse(args, p):
    if not p.compact_feasible:
        print("ccop: morse requires 'compact_feasible = true' in the problem file", file=sys.stderr)
        return None, EXIT_NOT_COMPACT
    if args.grid < 3:
        raise UsageError("--grid must be at least 3")
    levels = None if args.levels.strip() == "auto" else parse_vector(args.levels, "levels")
    cfg = _config(args)
    pairs = solve_all(p, cfg, args.tol)
    cls = [classify(p, q, args.tol) for q in pairs]
    report = base_report("morse", p, _config_echo(args, grid=args.grid, levels=args.levels))
    report.update(analysis_section(p, pairs, cls, tol=args.tol))
    code = EXIT_NUMERIC if any(has_indeterminate(c) for c in cls) else EXIT_OK
    try:
        sweep = level_sweep(p, list(pairs), cls, args.grid, args.tol, levels)
        mp = mountain_pass_check(cls, p.n, p.s)
    except DegenerateError as err:
        report["morse"] = None
        report["notes"].append(f"morse analysis refused: {err}")
        return report, EXIT_NUMERIC
    except ValueError as err:
        raise UsageError(str(err)) from err
    report["morse"] = morse_section(sweep, mp)
    if sweep.indeterminate:
        code = EXIT_NUMERIC
    return report, code


def _perturb(args, p):
    linear = parse_vector(args.linear, "linear")
    if len(linear) != p.n:
        raise UsageError(f"--linear must have {p.n} entries, got {len(linear)}")
    eps = parse_vector(args.epsilons, "epsilons")
    cfg = _config(args)
    rows = perturb_experiment(p, linear, eps, args.quadratic_shift, None, args.radius, cfg, args.tol)
    report = base_report(
        "perturb",
        p,
        _config_echo(args, linear=linear, epsilons=eps, quadratic_shift=args.quadratic_shift, radius=args.radius),
    )
    out_rows, indeterminate = [], False
    from .stationarity import perturbed_problem

    for row in rows:
        pp = perturbed_problem(p, linear, row["epsilon"], args.quadratic_shift)
        points = []
        for entry in row["points"]:
            rec = point_record(pp, entry["pair"], entry["classification"])
            rec["nearest_reference"] = entry["nearest_reference"]
            rec["changed"] = entry["changed"]
            points.append(rec)
            indeterminate |= has_indeterminate(entry["classification"])
        out_rows.append(
            {
                "epsilon": row["epsilon"],
                "points": points,
                "counts_near_reference": row["counts_near_reference"],
                "bifurcation": row["bifurcation"],
            }
        )
    report["perturb"] = out_rows
    return report, EXIT_NUMERIC if indeterminate else EXIT_OK


def _probe(args, p):
    if args.trials < 1:
        raise UsageError("--trials must be >= 1")
    if args.magnitude < 0:
        raise UsageError("--magnitude must be >= 0")
    cfg = _config(args)
    stats = genericity_probe(p, args.trials, args.magnitude, args.rng_seed, args.tol, cfg)
    report = base_report("probe", p, _config_echo(args, trials=args.trials, magnitude=args.magnitude))
    report["probe"] = stats
    return report, EXIT_NUMERIC if stats["indeterminate_trials"] else EXIT_OK


COMMANDS = {"analyze": _analyze, "morse": _morse, "perturb": _perturb, "probe": _probe}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors, 0 on --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        p = load_problem(args.problem)
        report, code = COMMANDS[args.command](args, p)
    except (ProblemFormatError, UsageError) as err:
        print(f"ccop: {err}", file=sys.stderr)
        return EXIT_USAGE
    if report is None:
        return code
    text = dumps(report) if args.format == "json" else to_text(report)
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return code


def cmd_analyze(args: list[str]) -> int:
    return main(["analyze", *args])


def cmd_morse(args: list[str]) -> int:
    return main(["morse", *args])


def cmd_perturb(args: list[str]) -> int:
    return main(["perturb", *args])


def cmd_probe(args: list[str]) -> int:
    return main(["probe", *args])


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
