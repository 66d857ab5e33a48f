"""Command-line entry point: ``couettelab <subcommand>``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__

log = logging.getLogger("couettelab")


def _dump(obj, out: str | None) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True, default=float)
    if out:
        Path(out).write_text(text + "\n")
    print(text)


def _read_json(path: str) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise SystemExit(f"cannot read config {path}: {exc}")
    except json.JSONDecodeError as exc:
        raise SystemExit(f"invalid JSON in {path}: {exc}")


# --- verify-multipliers -------------------------------------------------------------


def cmd_verify_multipliers(args) -> int:
    from .multipliers import MultiplierContext, verify_multipliers

    reports = []
    for nu in args.nu:
        ctx = MultiplierContext(nu, args.kappa, args.tol)
        reports.append(verify_multipliers(ctx, points=args.grid, fd_points=args.fd_points, seed=args.seed).to_dict())
    _dump(reports if len(reports) > 1 else reports[0], args.out)
    return 0 if all(r["within_bounds"] for r in reports) else 1


# --- verify-estimates ------------------------------------------------------------------


def cmd_verify_estimates(args) -> int:
    from .estimates import CHECKERS, scan
    from .freq import PhysParams

    params = PhysParams(delta=args.delta, epsilon=args.epsilon, kappa=args.kappa)
    names = args.names or list(CHECKERS)
    rows = []
    for name in names:
        base = scan(name, params, refine=args.refine, points=args.points)
        row = base.to_dict()
        if args.check_refinement:
            fine = scan(name, params, refine=args.refine + 1, points=args.points)
            row["refined_sup_ratio"] = fine.sup_ratio
            row["refinement_change"] = abs(fine.sup_ratio - base.sup_ratio) / base.sup_ratio
        rows.append(row)
    _dump(rows, args.out)
    return 0


# --- simulate -----------------------------------------------------------------------------


def _simulation_from_config(cfg: dict):
    from .freq import FrequencyGrid, PhysParams
    from .initial import InitialDataSpec
    from .solver import SolverConfig

    grid = FrequencyGrid(**cfg.get("grid", {"nx": 64, "ny": 64}))
    params = PhysParams(**cfg.get("params", {}))
    solver = SolverConfig(
        params,
        dt=float(cfg["dt"]),
        t_end=float(cfg["t_end"]),
        dealias_fraction=float(cfg.get("dealias_fraction", 2.0 / 3.0)),
        remap_interval=cfg.get("remap_interval"),
        nonlinear=bool(cfg.get("nonlinear", True)),
        diag_every=float(cfg.get("diag_every", 0.1)),
        check_invariants=bool(cfg.get("check_invariants", False)),
    )
    init = cfg.get("initial", {})
    spec = InitialDataSpec.from_dict({k: v for k, v in init.items() if k not in ("a_omega", "a_theta")})
    a_omega = float(init.get("a_omega", 1e-3))
    a_theta = float(init.get("a_theta", a_omega**2))
    return grid, params, solver, spec.build(grid, a_omega, a_theta)


def cmd_simulate(args) -> int:
    from .diagnostics import functional_observer, running_max, short_long_split_time
    from .plotting import plot_series
    from .solver import run, save_state

    cfg = _read_json(args.config)
    grid, params, solver, init = _simulation_from_config(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        res = run(init, solver, [functional_observer(params)])
    for w in caught:
        log.warning("%s", w.message)

    series = res.series
    series["F_running_max"] = list(running_max(series["F"]))
    keys = list(series.keys())
    with open(out / "series.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(keys)
        for row in zip(*(series[k] for k in keys)):
            w.writerow([repr(float(v)) for v in row])
    stride = max(1, int(round(float(cfg.get("snapshot_every", solver.t_end or 1.0)) / solver.diag_every)))
    snaps = res.snapshots[::stride]
    if res.snapshots and snaps[-1] is not res.snapshots[-1]:
        snaps.append(res.snapshots[-1])
    for i, st in enumerate(snaps):
        save_state(out / "snapshots" / f"s{i:04d}", st)
    save_state(out / "final", res.final, {"aborted": res.aborted})
    markers = {"T0": short_long_split_time(params.nu)} if params.nu > 0 else {}
    plot_series(series["t"], {"F": series["F"], "F_omega": series["F_omega"], "F_theta": series["F_theta"]}, out / "functional.png", markers=markers)
    summary = {
        "steps": res.n_steps,
        "t_final": res.final.time,
        "aborted": res.aborted,
        "wall_time": res.wall_time,
        "F0": series["F"][0],
        "F_max": max(series["F"]),
        "F_final": series["F"][-1],
        "snapshots": len(snaps),
    }
    _dump(summary, str(out / "summary.json"))
    return 0 if res.aborted is None else 2


# --- fit ----------------------------------------------------------------------------------------


def _load_series(run_dir: Path) -> dict:
    with open(run_dir / "series.csv") as fh:
        rows = list(csv.reader(fh))
    head, body = rows[0], np.array(rows[1:], dtype=float)
    return {h: body[:, i] for i, h in enumerate(head)}


def cmd_fit(args) -> int:
    from .diagnostics import enhanced_dissipation_timescale, fit_decay_exponent, shell_norm
    from .solver import load_state

    results = []
    long_rows = []
    for rd in args.runs:
        run_dir = Path(rd)
        series = _load_series(run_dir)
        t = series["t"]
        snaps = [load_state(p) for p in sorted((run_dir / "snapshots").glob("s*"))]
        entry = {"run": str(run_dir)}
        for q in args.quantities:
            if q not in series:
                raise SystemExit(f"{run_dir}: no series named {q!r}")
            v = series[q]
            win = tuple(args.window) if args.window else (float(t[0]), float(t[-1]))
            pos = v > 0
            try:
                fit = fit_decay_exponent(t[pos], v[pos], win, args.mode)
                entry[q] = fit._asdict()
            except ValueError as exc:
                entry[q] = {"error": str(exc)}
            long_rows += [(str(run_dir), float(a), q, float(b)) for a, b in zip(t, v)]
        if snaps:
            entry["shell_timescale"] = enhanced_dissipation_timescale(snaps, args.k)
            for s in snaps:
                long_rows.append((str(run_dir), s.time, f"shell_k{args.k:g}", shell_norm(s, args.k)))
        results.append(entry)
    out = Path(args.out) if args.out else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "plot_data.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["run", "t", "quantity", "value"])
            for r in long_rows:
                w.writerow([r[0], repr(r[1]), r[2], repr(r[3])])
        with open(out / "fits.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["run", "quantity", "exponent", "residual", "stderr"])
            for e in results:
                for q in args.quantities:
                    f = e[q]
                    w.writerow([e["run"], q, f.get("exponent", ""), f.get("residual", ""), f.get("stderr", "")])
    _dump(results, str(out / "fits.json") if out else None)
    return 0


# --- scan / report ---------------------------------------------------------------------------


def cmd_scan(args) -> int:
    from .harness import ScanConfig, default_output_root, export_report, scan_thresholds

    cfg = ScanConfig.from_dict(_read_json(args.config))
    out = Path(args.out) if args.out else default_output_root() / "scan"
    result = scan_thresholds(cfg, workers=args.workers)
    paths = export_report(result, out, figures=not args.no_figures)
    sys.stdout.write(paths["summary"].read_text())
    print(json.dumps({"slope": result.slope, "slope_ci95": result.slope_ci95, "out": str(out)}, default=float))
    return 0


def cmd_report(args) -> int:
    from .harness import export_report, load_scan

    src = Path(args.run)
    result = load_scan(src)
    out = Path(args.out) if args.out else src
    paths = export_report(result, out, figures=not args.no_figures)
    sys.stdout.write(paths["summary"].read_text())
    return 0


# --- parser -----------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="couettelab", description="Couette-Boussinesq numerical laboratory")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    m = sub.add_parser("verify-multipliers", help="certify multiplier bounds and identities on a grid")
    m.add_argument("--kappa", type=float, default=0.1)
    m.add_argument("--nu", type=float, nargs="+", default=[1.0, 1e-3])
    m.add_argument("--grid", type=int, default=33, help="points per axis (odd)")
    m.add_argument("--tol", type=float, default=1e-8, help="quadrature relative tolerance")
    m.add_argument("--fd-points", type=int, default=100)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--out")
    m.set_defaults(func=cmd_verify_multipliers)

    e = sub.add_parser("verify-estimates", help="grid sup of the pointwise symbol inequalities")
    e.add_argument("--names", nargs="*")
    e.add_argument("--refine", type=int, default=0)
    e.add_argument("--points", type=int)
    e.add_argument("--delta", type=float, default=0.2)
    e.add_argument("--epsilon", type=float, default=0.45)
    e.add_argument("--kappa", type=float, default=0.1)
    e.add_argument("--check-refinement", action="store_true")
    e.add_argument("--out")
    e.set_defaults(func=cmd_verify_estimates)

    s = sub.add_parser("simulate", help="run the nonlinear solver from a JSON config")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("fit", help="fit decay exponents and timescales from run directories")
    f.add_argument("runs", nargs="+")
    f.add_argument("--quantities", nargs="+", default=["F_omega"])
    f.add_argument("--mode", choices=["algebraic", "exponential"], default="exponential")
    f.add_argument("--window", type=float, nargs=2)
    f.add_argument("--k", type=float, default=1.0)
    f.add_argument("--out")
    f.set_defaults(func=cmd_fit)

    c = sub.add_parser("scan", help="threshold scan over (nu, amplitude)")
    c.add_argument("--config", required=True)
    c.add_argument("--workers", type=int, default=1)
    c.add_argument("--out")
    c.add_argument("--no-figures", action="store_true")
    c.set_defaults(func=cmd_scan)

    r = sub.add_parser("report", help="regenerate summaries and figures from a stored scan")
    r.add_argument("run")
    r.add_argument("--out")
    r.add_argument("--no-figures", action="store_true")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    return int(args.func(args) or 0)


if __name__ == "__main__":
    sys.exit(main())
