"""
Threshold scans over (nu, amplitude): run, classify, bisect, fit and export.

For each viscosity the amplitude ladder is run first; the largest stable
amplitude below the first non-stable rung is then refined by geometric
bisection. Runs are independent tasks; results are merged in config order so
output files do not depend on the worker count.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import platform
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from .diagnostics import functional_observer
from .freq import FrequencyGrid, PhysParams
from .initial import InitialDataSpec, active_k_max
from .solver import SolverConfig, resolvable_horizon, run

__all__ = [
    "OUTPUT_ROOT_ENV",
    "default_output_root",
    "ClassifierSpec",
    "ScanConfig",
    "RunRecord",
    "NuResult",
    "ScanResult",
    "classify_run",
    "run_single",
    "scan_thresholds",
    "fit_threshold_slope",
    "export_report",
    "load_scan",
]

log = logging.getLogger(__name__)

OUTPUT_ROOT_ENV = "COUETTELAB_OUTPUT_ROOT"
STABLE, INCONCLUSIVE, UNSTABLE = "stable", "inconclusive", "unstable"
_ORDER = {STABLE: 0, INCONCLUSIVE: 1, UNSTABLE: 2}


def default_output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "couettelab-output"))


@dataclass(frozen=True)
class ClassifierSpec:
    """stable: F stays <= growth_factor * F(0) and ends below final_factor * F(0)."""

    growth_factor: float = 10.0
    final_factor: float = 1.0

    def __post_init__(self):
        if not self.growth_factor > 1.0:
            raise ValueError("growth_factor must exceed 1")
        if not 0 < self.final_factor <= self.growth_factor:
            raise ValueError("final_factor must lie in (0, growth_factor]")


@dataclass(frozen=True)
class ScanConfig:
    """Threshold scan definition.

    ``amplitude_ladder`` holds A_omega; A_theta = A_omega ** coupling_exponent.
    ``params`` supplies delta, epsilon, kappa, c (nu and mu are set per rung,
    mu = nu). ``t_end`` overrides the horizon rule min(horizon_factor *
    nu^(-1/3), resolvable shift). ``mock_threshold`` = (a, p) replaces the
    solver by the rule "stable iff A_omega < a nu^p" (harness self-test).
    """

    nu_ladder: tuple[float, ...]
    amplitude_ladder: tuple[float, ...]
    grid: FrequencyGrid = field(default_factory=lambda: FrequencyGrid(256, 256))
    params: PhysParams = field(default_factory=PhysParams)
    dt: float = 0.02
    dealias_fraction: float = 2.0 / 3.0
    diag_every: float = 0.1
    coupling_exponent: float = 2.0
    horizon_factor: float = 5.0
    t_end: float | None = None
    initial: InitialDataSpec = field(default_factory=InitialDataSpec)
    classify: ClassifierSpec = field(default_factory=ClassifierSpec)
    bisection_depth: int = 6
    mock_threshold: tuple[float, float] | None = None

    def __post_init__(self):
        object.__setattr__(self, "nu_ladder", tuple(float(v) for v in self.nu_ladder))
        object.__setattr__(self, "amplitude_ladder", tuple(float(v) for v in self.amplitude_ladder))
        for name in ("nu_ladder", "amplitude_ladder"):
            lad = getattr(self, name)
            if not lad:
                raise ValueError(f"{name} must be nonempty")
            d = np.diff(lad)
            if not (np.all(d > 0) or np.all(d < 0)):
                raise ValueError(f"{name} must be strictly monotone")
        if any(v <= 0 or v > 1 for v in self.nu_ladder):
            raise ValueError("viscosities must lie in (0, 1]")
        if any(a <= 0 for a in self.amplitude_ladder):
            raise ValueError("amplitudes must be positive")
        if self.bisection_depth < 0:
            raise ValueError("bisection_depth must be >= 0")
        if self.mock_threshold is not None:
            object.__setattr__(self, "mock_threshold", tuple(float(v) for v in self.mock_threshold))

    @property
    def amplitudes_ascending(self) -> tuple[float, ...]:
        return tuple(sorted(self.amplitude_ladder))

    def params_for(self, nu: float) -> PhysParams:
        return PhysParams(**{**self.params.to_dict(), "nu": nu, "mu": nu})

    def to_dict(self) -> dict:
        return {
            "nu_ladder": list(self.nu_ladder),
            "amplitude_ladder": list(self.amplitude_ladder),
            "grid": self.grid.to_dict(),
            "params": self.params.to_dict(),
            "dt": self.dt,
            "dealias_fraction": self.dealias_fraction,
            "diag_every": self.diag_every,
            "coupling_exponent": self.coupling_exponent,
            "horizon_factor": self.horizon_factor,
            "t_end": self.t_end,
            "initial": self.initial.to_dict(),
            "classify": asdict(self.classify),
            "bisection_depth": self.bisection_depth,
            "mock_threshold": None if self.mock_threshold is None else list(self.mock_threshold),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScanConfig":
        d = dict(d)
        d["grid"] = FrequencyGrid(**d["grid"])
        d["params"] = PhysParams(**d["params"])
        d["initial"] = InitialDataSpec.from_dict(d["initial"])
        d["classify"] = ClassifierSpec(**d["classify"])
        if d.get("mock_threshold") is not None:
            d["mock_threshold"] = tuple(d["mock_threshold"])
        return cls(**d)


@dataclass
class RunRecord:
    nu: float
    a_omega: float
    a_theta: float
    config: dict
    series: dict
    classification: str
    aborted: str | None = None
    wall_time: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        return cls(**d)


def classify_run(record: RunRecord, spec: ClassifierSpec) -> str:
    """Apply the growth/final-level rule to the record's functional series."""
    if record.aborted and record.aborted.startswith("blowup"):
        return UNSTABLE
    f = np.asarray(record.series.get("F", []), dtype=float)
    if f.size == 0:
        return INCONCLUSIVE
    f0 = f[0]
    if not np.all(np.isfinite(f)):
        return UNSTABLE
    if f0 == 0.0:
        return STABLE if np.all(f == 0.0) else UNSTABLE
    if f.max() > spec.growth_factor * f0:
        return UNSTABLE
    if f[-1] < spec.final_factor * f0:
        return STABLE
    return INCONCLUSIVE


def _horizon(cfg: ScanConfig, nu: float, initial) -> float:
    if cfg.t_end is not None:
        return cfg.t_end
    kmax = max(active_k_max(initial.omega), active_k_max(initial.theta))
    cap = resolvable_horizon(cfg.grid, cfg.dealias_fraction, kmax)
    t = min(cfg.horizon_factor * nu ** (-1.0 / 3.0), cap)
    # whole number of steps
    return cfg.dt * math.floor(t / cfg.dt + 1e-9)


def run_single(cfg: ScanConfig, nu: float, a_omega: float) -> RunRecord:
    """One classified run at (nu, A_omega)."""
    a_theta = a_omega**cfg.coupling_exponent
    snap = {"nu": nu, "a_omega": a_omega, "a_theta": a_theta}
    if cfg.mock_threshold is not None:
        a, p = cfg.mock_threshold
        cls_ = STABLE if a_omega < a * nu**p else UNSTABLE
        return RunRecord(nu, a_omega, a_theta, {**snap, "mock": True}, {"t": [], "F": []}, cls_)
    params = cfg.params_for(nu)
    init = cfg.initial.build(cfg.grid, a_omega, a_theta)
    t_end = _horizon(cfg, nu, init)
    scfg = SolverConfig(
        params, cfg.dt, t_end, cfg.dealias_fraction, None, True, cfg.diag_every, keep_snapshots=False, cfl_check=True
    )
    growth = cfg.classify.growth_factor
    f0: list[float] = []

    def abort_if(row):
        if not f0:
            f0.append(row["F"])
            return None
        if f0[0] > 0 and row["F"] > growth * f0[0]:
            return "growth"
        return None

    res = run(init, scfg, [functional_observer(params)], abort_if)
    series = {k: [float(x) for x in v] for k, v in res.series.items()}
    rec = RunRecord(nu, a_omega, a_theta, {**snap, "solver": scfg.to_dict()}, series, INCONCLUSIVE, res.aborted, res.wall_time)
    rec.classification = classify_run(rec, cfg.classify)
    log.info("nu=%.3g A=%.4g -> %s (%.1fs)", nu, a_omega, rec.classification, res.wall_time)
    return rec


@dataclass
class NuResult:
    nu: float
    a_star: float | None
    censored: str  # "", "above" (all stable) or "below" (none stable)
    monotone: bool
    records: list[RunRecord]

    @property
    def status(self) -> str:
        return "ok" if self.monotone else "inconclusive"


def _search_nu(cfg: ScanConfig, nu: float, ladder_records: list[RunRecord]) -> NuResult:
    """Threshold for one viscosity given its (ascending) ladder runs; bisects sequentially."""
    classes = [_ORDER[r.classification] for r in ladder_records]
    monotone = all(a <= b for a, b in zip(classes, classes[1:]))
    records = list(ladder_records)
    amps = [r.a_omega for r in ladder_records]
    first_bad = next((i for i, c in enumerate(classes) if c > 0), None)
    if first_bad is None:
        return NuResult(nu, amps[-1], "above", monotone, records)
    if first_bad == 0:
        return NuResult(nu, None, "below", monotone, records)
    lo, hi = amps[first_bad - 1], amps[first_bad]
    for _ in range(cfg.bisection_depth):
        mid = math.sqrt(lo * hi)
        rec = run_single(cfg, nu, mid)
        records.append(rec)
        if rec.classification == STABLE:
            lo = mid
        else:
            hi = mid
    return NuResult(nu, lo, "", monotone, records)


def _ladder_task(args):
    cfg, nu, a = args
    return run_single(cfg, nu, a)


def _search_task(args):
    cfg, nu, recs = args
    return _search_nu(cfg, nu, recs)


@dataclass
class ScanResult:
    config: ScanConfig
    per_nu: list[NuResult]
    slope: float | None
    intercept: float | None
    slope_stderr: float | None
    slope_ci95: tuple[float, float] | None

    @property
    def monotone(self) -> bool:
        return all(r.monotone for r in self.per_nu)

    def a_star_nonincreasing_as_nu_decreases(self) -> bool | None:
        pts = sorted((r.nu, r.a_star) for r in self.per_nu if r.a_star is not None)
        if len(pts) < 2:
            return None
        return all(b[1] >= a[1] for a, b in zip(pts, pts[1:]))


def fit_threshold_slope(nus, a_stars):
    """Least-squares slope of log A* against log nu with a 95% t-interval."""
    x = np.log(np.asarray(nus, dtype=float))
    y = np.log(np.asarray(a_stars, dtype=float))
    if x.size < 2:
        return None, None, None, None
    res = stats.linregress(x, y)
    if x.size > 2:
        half = float(stats.t.ppf(0.975, x.size - 2)) * float(res.stderr)
        ci = (float(res.slope) - half, float(res.slope) + half)
        se = float(res.stderr)
    else:
        se, ci = math.inf, (-math.inf, math.inf)
    return float(res.slope), float(res.intercept), se, ci


def scan_thresholds(cfg: ScanConfig, workers: int = 1) -> ScanResult:
    """Ladder every nu, bisect each threshold, fit log A* vs log nu."""
    if workers < 1:
        raise ValueError("workers must be >= 1")
    amps = cfg.amplitudes_ascending
    tasks = [(cfg, nu, a) for nu in cfg.nu_ladder for a in amps]
    if workers == 1:
        ladder = [_ladder_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            ladder = list(pool.map(_ladder_task, tasks))
    n = len(amps)
    search = [(cfg, nu, ladder[i * n : (i + 1) * n]) for i, nu in enumerate(cfg.nu_ladder)]
    if workers == 1:
        per_nu = [_search_task(s) for s in search]
    else:
        with ProcessPoolExecutor(max_workers=min(workers, len(search))) as pool:
            per_nu = list(pool.map(_search_task, search))
    pts = [(r.nu, r.a_star) for r in per_nu if r.a_star is not None and not r.censored and r.monotone]
    slope, icpt, se, ci = fit_threshold_slope([p[0] for p in pts], [p[1] for p in pts]) if pts else (None,) * 4
    return ScanResult(cfg, per_nu, slope, icpt, se, ci)


# --- persistence and reporting --------------------------------------------------


def _versions() -> dict:
    import matplotlib
    import numba
    import scipy

    from . import __version__

    return {
        "couettelab": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "numba": numba.__version__,
        "matplotlib": matplotlib.__version__,
    }


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _summary_csv(result: ScanResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["nu", "A_star", "censored", "monotone", "status", "n_runs"])
    for r in result.per_nu:
        w.writerow([_fmt(r.nu), _fmt(r.a_star), r.censored, int(r.monotone), r.status, len(r.records)])
    return buf.getvalue()


def _fit_dict(result: ScanResult) -> dict:
    return {
        "slope": result.slope,
        "intercept": result.intercept,
        "slope_stderr": result.slope_stderr,
        "slope_ci95": None if result.slope_ci95 is None else list(result.slope_ci95),
        "monotone": result.monotone,
        "a_star_nonincreasing_as_nu_decreases": result.a_star_nonincreasing_as_nu_decreases(),
    }


def _write(path: Path, text: str) -> None:
    try:
        path.write_text(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def export_report(result: ScanResult, out, figures: bool = True) -> dict[str, Path]:
    """Write manifest, per-run records and CSVs, summary, fit, plot data and figures."""
    out = Path(out)
    runs_dir = out / "runs"
    try:
        runs_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create report directory {out}: {exc}") from exc
    paths: dict[str, Path] = {}

    manifest = {"config": result.config.to_dict(), "versions": _versions(), "seeds": {"initial": result.config.initial.seed}}
    paths["manifest"] = out / "manifest.json"
    _write(paths["manifest"], json.dumps(manifest, indent=2, sort_keys=True))

    long_rows = io.StringIO()
    lw = csv.writer(long_rows, lineterminator="\n")
    lw.writerow(["run", "nu", "a_omega", "t", "quantity", "value"])
    for i, nr in enumerate(result.per_nu):
        for j, rec in enumerate(nr.records):
            name = f"nu{i:02d}_run{j:03d}"
            _write(runs_dir / f"{name}.json", json.dumps(rec.to_dict(), sort_keys=True))
            buf = io.StringIO()
            w = csv.writer(buf, lineterminator="\n")
            keys = list(rec.series.keys())
            w.writerow(keys)
            for row in zip(*(rec.series[k] for k in keys)):
                w.writerow([_fmt(float(v)) for v in row])
            _write(runs_dir / f"{name}.csv", buf.getvalue())
            ts = rec.series.get("t", [])
            for key in keys:
                if key == "t":
                    continue
                for t, v in zip(ts, rec.series[key]):
                    lw.writerow([name, _fmt(rec.nu), _fmt(rec.a_omega), _fmt(float(t)), key, _fmt(float(v))])

    paths["summary"] = out / "summary.csv"
    _write(paths["summary"], _summary_csv(result))
    paths["fit"] = out / "fit.json"
    _write(paths["fit"], json.dumps(_fit_dict(result), indent=2, sort_keys=True))
    paths["plot_data"] = out / "plot_data.csv"
    _write(paths["plot_data"], long_rows.getvalue())
    if figures:
        from .plotting import plot_functionals, plot_thresholds

        paths["fig_threshold"] = plot_thresholds(result, out / "threshold.png")
        paths["fig_functional"] = plot_functionals(result, out / "functional.png")
    return paths


def load_scan(out) -> ScanResult:
    """Rebuild a ScanResult from an exported directory (reclassifying every run)."""
    out = Path(out)
    manifest = json.loads((out / "manifest.json").read_text())
    cfg = ScanConfig.from_dict(manifest["config"])
    by_nu: dict[int, list[tuple[int, RunRecord]]] = {}
    for p in sorted((out / "runs").glob("nu*_run*.json")):
        i = int(p.stem[2:4])
        j = int(p.stem.split("run")[1])
        rec = RunRecord.from_dict(json.loads(p.read_text()))
        if rec.series.get("F"):
            rec.classification = classify_run(rec, cfg.classify)
        by_nu.setdefault(i, []).append((j, rec))
    n = len(cfg.amplitude_ladder)
    per_nu = []
    for i, nu in enumerate(cfg.nu_ladder):
        recs = [r for _, r in sorted(by_nu.get(i, []), key=lambda x: x[0])]
        per_nu.append(_replay(cfg, nu, recs[:n], recs[n:]))
    pts = [(r.nu, r.a_star) for r in per_nu if r.a_star is not None and not r.censored and r.monotone]
    slope, icpt, se, ci = fit_threshold_slope([p[0] for p in pts], [p[1] for p in pts]) if pts else (None,) * 4
    return ScanResult(cfg, per_nu, slope, icpt, se, ci)


def _replay(cfg: ScanConfig, nu: float, ladder: list[RunRecord], bisect: list[RunRecord]) -> NuResult:
    """Recompute the threshold from stored records without running the solver."""
    classes = [_ORDER[r.classification] for r in ladder]
    monotone = all(a <= b for a, b in zip(classes, classes[1:]))
    first_bad = next((i for i, c in enumerate(classes) if c > 0), None)
    records = ladder + bisect
    if first_bad is None:
        return NuResult(nu, ladder[-1].a_omega if ladder else None, "above", monotone, records)
    if first_bad == 0:
        return NuResult(nu, None, "below", monotone, records)
    lo = ladder[first_bad - 1].a_omega
    for rec in bisect:
        if rec.classification == STABLE:
            lo = max(lo, rec.a_omega)
    return NuResult(nu, lo, "", monotone, records)
