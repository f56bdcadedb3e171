"""Command line front end.

Subcommands::

    patterngraph graph validate   --graph FILE [--mode regular|acyclic]
    patterngraph graph count      --d K
    patterngraph graph neighbors  --graph FILE
    patterngraph graph equiv-move --graph FILE --s P --r P
    patterngraph estimate --graph FILE --data FILE --method ipw|ra|aipw|tree ...
    patterngraph simulate --config FILE --out DIR

Exit codes: 0 success, 2 configuration error, 3 data or graph validation
failure, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .data import DataError, PositivityError, load_dataset, write_dataset
from .estimators import make_estimator
from .functionals import FunctionalError, parse_functional
from .graph import (ACYCLIC, REGULAR, EquivalenceMoveError, GraphError, count_regular_graphs,
                    equivalence_move, format_graph, load_graph, perturbation_neighborhood, validate)
from .imputation import DensityFitError, ImputationError
from .inference import BootstrapError, bootstrap_ci, graph_sweep, parse_grid, point_report, tilt_sweep
from .odds import OddsFitError

EXIT_OK, EXIT_CONFIG, EXIT_INVALID, EXIT_NUMERIC = 0, 2, 3, 4


class ConfigError(ValueError):
    pass


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8", newline="")


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()


def _manifest(args, extra: dict | None = None) -> str:
    items = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    items.update(extra or {})
    return "".join(f"{k} = {'' if v is None else v}\n" for k, v in items.items())


# ---------------------------------------------------------------------------
# graph


def cmd_graph(args) -> int:
    out = Path(args.out) if args.out else None
    if args.action == "count":
        if args.d is None:
            raise ConfigError("graph count needs --d")
        m = count_regular_graphs(args.d)
        print(m)
        if out:
            _write(out / "count.csv", _csv(["d", "count"], [(args.d, m)]))
        return EXIT_OK
    if not args.graph:
        raise ConfigError(f"graph {args.action} needs --graph")
    g = load_graph(args.graph)
    if args.action == "validate":
        rep = validate(g, args.mode)
        print(rep)
        if out:
            _write(out / "validation.csv", _csv(["condition", "detail"],
                                                [(v.condition, v.detail) for v in rep.violations]))
        return EXIT_OK if rep.valid else EXIT_INVALID
    if args.action == "neighbors":
        rep = validate(g, REGULAR)
        if not rep.valid:
            print(rep)
            return EXIT_INVALID
        nb = perturbation_neighborhood(g)
        print(f"{len(nb.additions)} addition(s), {len(nb.deletions)} deletion(s)")
        rows = []
        for s, r in nb.additions:
            print(f"  + {s} -> {r}")
            rows.append(("add", str(s), str(r)))
        for s, r in nb.deletions:
            print(f"  - {s} -> {r}")
            rows.append(("delete", str(s), str(r)))
        if out:
            _write(out / "neighbors.csv", _csv(["change", "from", "to"], rows))
        return EXIT_OK
    if args.action == "equiv-move":
        if not (args.s and args.r):
            raise ConfigError("equiv-move needs --s and --r")
        try:
            moved = equivalence_move(g, args.s, args.r)
        except EquivalenceMoveError as e:
            print(f"move rejected ({e.condition}): {e}")
            return EXIT_INVALID
        text = format_graph(moved)
        sys.stdout.write(text)
        if out:
            _write(out / "moved.graph", text)
            _write(out / "edges.csv", _csv(["from", "to"], [(str(a), str(b)) for a, b in moved.edges()]))
        return EXIT_OK
    raise ConfigError(f"unknown graph action {args.action!r}")


# ---------------------------------------------------------------------------
# estimate


def _diagnostics_text(report, args, ds) -> str:
    lines = [f"method: {report.method}", f"n: {ds.n}"]
    idx = ds.index
    for p in idx.patterns:
        lines.append(f"pattern {p}: {idx.count(p)} rows")
    for k, v in report.diagnostics.items():
        if k == "method":
            continue
        if isinstance(v, list):
            lines.append(f"{k}:" if v else f"{k}: none")
            lines.extend(f"  {item}" for item in v)
        else:
            lines.append(f"{k}: {v}")
    return "\n".join(lines) + "\n"


def cmd_estimate(args) -> int:
    if not args.graph or not args.data:
        raise ConfigError("estimate needs --graph and --data")
    if args.boot and args.boot < 100:
        raise ConfigError("--boot must be 0 (no interval) or at least 100")
    if not 0 < args.alpha < 1:
        raise ConfigError("--alpha must lie in (0, 1)")
    seed = args.seed if args.seed is not None else int(np.random.SeedSequence().generate_state(1)[0])
    args.seed = seed
    g = load_graph(args.graph)
    ds = load_dataset(args.data, args.missing_token)
    if ds.d != g.d:
        raise DataError(f"data has {ds.d} columns but the graph has patterns of length {g.d}")
    try:
        theta = parse_functional(args.theta, args.indicator, ds.d, ds.column_names)
    except FunctionalError as e:
        raise ConfigError(str(e)) from None
    est = make_estimator(args.method, g, theta, n_imputations=args.impute, random_state=seed,
                         min_count=args.min_count, strict=args.strict)
    out = Path(args.out)

    if args.boot:
        report = bootstrap_ci(est, ds, B=args.boot, alpha=args.alpha, seed=seed, threads=args.threads)
    else:
        report = point_report(est, ds)
    fitted = est.fit(ds)
    _write(out / "estimate.csv", _csv(["param", "estimate", "ci_lo", "ci_hi", "failed_reps"],
                                      [(theta.label(), report.estimate, report.ci_lo, report.ci_hi,
                                        report.failed_reps)]))
    _write(out / "diagnostics.txt", _diagnostics_text(report, args, ds))
    if args.method == "ipw":
        w = fitted.weights_
        _write(out / "weights.csv", _csv(["row_id", "pi", "weight"],
                                         [(int(i), float(p), float(1.0 / p)) for i, p in w]))
    if args.method == "aipw":
        _write(out / "influence.csv", _csv(["row_id", "influence"],
                                           [(i, float(v)) for i, v in enumerate(fitted.influence_)]))
    sweep = None
    if args.sensitivity:
        kind = args.sensitivity
        if kind == "graph":
            sweep = graph_sweep(est, ds, B=args.boot, alpha=args.alpha, seed=seed, threads=args.threads)
        else:
            if not args.tilt_grid:
                raise ConfigError("--sensitivity odds|pmm needs --tilt-grid")
            grid = parse_grid(args.tilt_grid)
            want = {"odds": "ipw", "pmm": "ra"}[kind]
            if args.method != want:
                raise ConfigError(f"--sensitivity {kind} requires --method {want}")
            sweep = tilt_sweep(est, ds, kind, grid, B=args.boot, alpha=args.alpha, seed=seed,
                               threads=args.threads)
        _write(out / "sweep.csv", sweep.to_csv())
    _write(out / "manifest.txt", _manifest(args, {"version": __version__}))
    print(f"{args.method} estimate of {theta.label()}: {report.estimate!r}")
    if args.boot:
        print(f"{100 * (1 - args.alpha):g}% interval: [{report.ci_lo!r}, {report.ci_hi!r}]")
    return EXIT_OK


# ---------------------------------------------------------------------------
# simulate


def cmd_simulate(args) -> int:
    from .simulation import load_mechanism
    try:
        spec, sim = load_mechanism(args.config)
    except (KeyError, ValueError) as e:
        if isinstance(e, GraphError):
            raise
        raise ConfigError(f"bad mechanism config: {e}") from None
    n = args.n if args.n is not None else sim.get("n")
    seed = args.seed if args.seed is not None else sim.get("seed", 0)
    if not n:
        raise ConfigError("sample size missing: give --n or [simulate] n")
    args.n, args.seed = n, seed
    from .simulation import simulate_dataset
    ds, truth = simulate_dataset(spec, n, seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_dataset(ds, out / "data.csv")
    _write(out / "truth.csv", _csv(["functional", "theta0"], [(spec.theta.label(), truth.theta0)]))
    _write(out / "manifest.txt", _manifest(args, {"version": __version__}))
    print(f"wrote {n} rows to {out / 'data.csv'}; theta0 = {truth.theta0!r}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="patterngraph", description="Pattern graph missing-data analysis")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    pg = sub.add_parser("graph", help="validate and inspect pattern graphs")
    pg.add_argument("action", choices=["validate", "count", "neighbors", "equiv-move"])
    pg.add_argument("--graph")
    pg.add_argument("--mode", choices=[REGULAR, ACYCLIC], default=REGULAR)
    pg.add_argument("--d", type=int)
    pg.add_argument("--s")
    pg.add_argument("--r")
    pg.add_argument("--out")
    pg.set_defaults(func=cmd_graph)

    pe = sub.add_parser("estimate", help="estimate a mean functional")
    pe.add_argument("--graph", required=True)
    pe.add_argument("--data", required=True)
    pe.add_argument("--missing-token", action="append", default=None,
                    help="token marking a missing cell (repeatable; default: empty and NA)")
    pe.add_argument("--method", choices=["ipw", "ra", "aipw", "tree"], default="ipw")
    th = pe.add_mutually_exclusive_group()
    th.add_argument("--theta", help="coefficients a1,a2,... of the linear functional")
    th.add_argument("--indicator", help="col,c for the mean of I(L_col <= c)")
    pe.add_argument("--boot", type=int, default=0, help="bootstrap replicates (0 for none)")
    pe.add_argument("--impute", type=int, default=20, help="imputations per row")
    pe.add_argument("--alpha", type=float, default=0.05)
    pe.add_argument("--seed", type=int)
    pe.add_argument("--sensitivity", choices=["odds", "pmm", "graph"])
    pe.add_argument("--tilt-grid")
    pe.add_argument("--min-count", type=int, default=5)
    pe.add_argument("--strict", action="store_true")
    pe.add_argument("--threads", type=int, default=1)
    pe.add_argument("--out", default=".")
    pe.set_defaults(func=cmd_estimate)

    ps = sub.add_parser("simulate", help="draw a dataset from a mechanism config")
    ps.add_argument("--config", required=True)
    ps.add_argument("--n", type=int)
    ps.add_argument("--seed", type=int)
    ps.add_argument("--out", default=".")
    ps.set_defaults(func=cmd_simulate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FunctionalError, FileNotFoundError, IsADirectoryError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except PositivityError as e:
        print(f"positivity failure:\n{e}", file=sys.stderr)
        return EXIT_INVALID
    except (GraphError, DataError) as e:
        print(f"validation failure: {e}", file=sys.stderr)
        return EXIT_INVALID
    except (OddsFitError, DensityFitError, ImputationError, BootstrapError, np.linalg.LinAlgError,
            FloatingPointError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
