"""Figures for reports. Uses the non-interactive Agg backend and a small publication style."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.family": "serif",
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 9,
    "legend.fontsize": 7,
    "xtick.direction": "in",
    "ytick.direction": "in",
    "lines.linewidth": 1.2,
    "figure.figsize": (3.4, 2.6),
    "figure.dpi": 150,
    "savefig.bbox": "tight",
    "savefig.dpi": 200,
}


def _save(fig, path) -> Path:
    path = Path(path)
    try:
        fig.savefig(path)
    except OSError as exc:
        raise OSError(f"cannot write figure {path}: {exc}") from exc
    finally:
        plt.close(fig)
    return path


def plot_thresholds(result, path) -> Path:
    """log A* against log nu with the fitted line; censored points hollow."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for r in result.per_nu:
            if r.a_star is None:
                continue
            hollow = bool(r.censored) or not r.monotone
            ax.loglog(r.nu, r.a_star, "o", mfc="none" if hollow else "k", mec="k")
        if result.slope is not None:
            nus = np.array(sorted(r.nu for r in result.per_nu))
            ax.loglog(nus, np.exp(result.intercept) * nus**result.slope, "k--", label=f"slope {result.slope:.3f}")
            ax.legend(frameon=False)
        ax.set_xlabel(r"$\nu$")
        ax.set_ylabel(r"$A^*$")
        return _save(fig, path)


def plot_functionals(result, path) -> Path:
    """F(t)/F(0) for every solver run, coloured by viscosity."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        cmap = plt.get_cmap("viridis")
        n = max(len(result.per_nu) - 1, 1)
        for i, r in enumerate(result.per_nu):
            for rec in r.records:
                f = np.asarray(rec.series.get("F", []), dtype=float)
                if f.size < 2 or f[0] == 0:
                    continue
                ax.semilogy(rec.series["t"], f / f[0], color=cmap(i / n), alpha=0.6, lw=0.8)
        ax.axhline(1.0, color="0.5", lw=0.6)
        ax.set_xlabel("$t$")
        ax.set_ylabel(r"$F(t)/F(0)$")
        return _save(fig, path)


def plot_series(t, series: dict, path, logy: bool = True, markers: dict | None = None) -> Path:
    """Generic time-series figure; ``markers`` maps labels to vertical-line times."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for name, v in series.items():
            (ax.semilogy if logy else ax.plot)(t, v, label=name)
        for name, x in (markers or {}).items():
            ax.axvline(x, color="0.5", ls=":", lw=0.8)
            ax.annotate(name, (x, 1), xycoords=("data", "axes fraction"), fontsize=7, va="top")
        ax.set_xlabel("$t$")
        ax.legend(frameon=False)
        return _save(fig, path)


def plot_envelope(env, path) -> Path:
    """|omega|, |phi|, |theta| along one characteristic, log-log in <t>."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        x = np.sqrt(1 + env.t**2)
        ax.loglog(x, env.abs_omega, label=r"$|\hat\omega|$")
        if env.abs_phi is not None:
            ax.loglog(x, env.abs_phi, label=r"$|\hat\phi|$")
        ax.loglog(x, env.abs_theta, label=r"$|\hat\theta|$")
        ax.set_xlabel(r"$\langle t\rangle$")
        ax.legend(frameon=False)
        return _save(fig, path)
