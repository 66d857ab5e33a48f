"""
Dealiased pseudo-spectral solver for the Boussinesq perturbation system in shearing coordinates.

The state holds moving-frame coefficients w(k, eta), th(k, eta): the
stationary vertical frequency is xi = eta - k tau with tau = t - frame_origin,
so the Couette transport y d_x is absorbed exactly and the evolution is

    d_t w + nu (k^2 + xi^2) w = i k th - FT[u . grad omega]
    d_t th + mu (k^2 + xi^2) th = - FT[u . grad theta]

The viscous factor is integrated exactly between stage times (heat_phase) in
a Lawson (integrating-factor) classical RK4 step; buoyancy and advection are
explicit. Internally the solver works on the rfft half spectrum (eta >= 0).
"""

from __future__ import annotations

import logging
import math
import time as _time
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import fft as sfft

from .freq import (
    FrequencyGrid,
    PhysParams,
    SpectralField,
    hermitian_error,
    load_field,
    save_field,
    stationary_xi,
)
from .linear import heat_phase

__all__ = [
    "SolverConfig",
    "FlowState",
    "SolverBlowup",
    "CFLWarning",
    "moving_frame_gradient_symbol",
    "biot_savart",
    "nonlinear_term",
    "step",
    "run",
    "RunResult",
    "dealias_mask",
    "resolvable_horizon",
    "remap",
    "save_state",
    "load_state",
]

log = logging.getLogger(__name__)


class SolverBlowup(RuntimeError):
    """Non-finite values appeared in the state."""


class CFLWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class SolverConfig:
    params: PhysParams
    dt: float
    t_end: float
    dealias_fraction: float = 2.0 / 3.0
    remap_interval: float | None = None
    nonlinear: bool = True
    diag_every: float = 0.1
    check_invariants: bool = False
    keep_snapshots: bool = True
    cfl_check: bool = True

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.t_end >= 0:
            raise ValueError("t_end must be nonnegative")
        if not 0.5 < self.dealias_fraction < 1.0:
            raise ValueError("dealias_fraction must lie in (1/2, 1)")
        if self.remap_interval is not None and not self.remap_interval > 0:
            raise ValueError("remap_interval must be positive")
        if not self.diag_every > 0:
            raise ValueError("diag_every must be positive")

    def to_dict(self) -> dict:
        return {
            "params": self.params.to_dict(),
            "dt": self.dt,
            "t_end": self.t_end,
            "dealias_fraction": self.dealias_fraction,
            "remap_interval": self.remap_interval,
            "nonlinear": self.nonlinear,
            "diag_every": self.diag_every,
        }


@dataclass(frozen=True, eq=False)
class FlowState:
    """Moving-frame vorticity and temperature spectra at simulation time ``time``."""

    omega: SpectralField
    theta: SpectralField
    time: float = 0.0
    frame_origin: float = 0.0

    def __post_init__(self):
        if self.omega.grid != self.theta.grid:
            raise ValueError("omega and theta must share a grid")
        if self.time < 0:
            raise ValueError("time must be nonnegative")

    @property
    def grid(self) -> FrequencyGrid:
        return self.omega.grid

    @property
    def frame_time(self) -> float:
        return self.time - self.frame_origin

    def stationary_xi(self) -> np.ndarray:
        k, eta = self.grid.mesh()
        return stationary_xi(k, eta, self.frame_time)

    def label_eta(self) -> np.ndarray:
        """Moving-frame label xi + k t measured from t = 0 (undoes remaps)."""
        k, eta = self.grid.mesh()
        return eta + k * self.frame_origin

    @classmethod
    def zeros(cls, grid: FrequencyGrid) -> "FlowState":
        return cls(SpectralField.zeros(grid), SpectralField.zeros(grid))


# --- symbols -------------------------------------------------------------------


def moving_frame_gradient_symbol(k, eta, t):
    """(d_x, d_y) symbols on moving-frame coefficients: (i k, i (eta - k t))."""
    k = np.asarray(k, dtype=float)
    return 1j * k, 1j * stationary_xi(k, np.asarray(eta, dtype=float), t)


def dealias_mask(grid: FrequencyGrid, fraction: float = 2.0 / 3.0, half: bool = False) -> np.ndarray:
    """Sharp cutoff keeping |j| <= fraction*nx/2 and |m| <= fraction*ny/2 (moving-frame indices)."""
    j = np.fft.fftfreq(grid.nx, d=1.0 / grid.nx)
    m = np.fft.rfftfreq(grid.ny, d=1.0 / grid.ny) if half else np.fft.fftfreq(grid.ny, d=1.0 / grid.ny)
    jx = np.floor(fraction * grid.nx / 2 + 1e-12)
    my = np.floor(fraction * grid.ny / 2 + 1e-12)
    return (np.abs(j)[:, None] <= jx) & (np.abs(m)[None, :] <= my)


def resolvable_horizon(grid: FrequencyGrid, fraction: float, k_max_active: float) -> float:
    """Largest time before the sheared frequency of the active band leaves the dealiased range."""
    if k_max_active <= 0:
        return math.inf
    return fraction * (grid.ny / 2) * (2 * np.pi / grid.ly) / k_max_active


def biot_savart(omega: SpectralField, t: float):
    """Velocity spectra (u1, u2) = (-d_y, d_x)(-Lap)^(-1) omega in the moving frame at frame time t."""
    k, eta = omega.grid.mesh()
    xi = stationary_xi(k, eta, t)
    lap = k * k + xi * xi
    with np.errstate(divide="ignore", invalid="ignore"):
        psi = np.where(lap > 0, omega.coeffs / np.where(lap > 0, lap, 1.0), 0.0)
    return SpectralField(omega.grid, -1j * xi * psi), SpectralField(omega.grid, 1j * k * psi)


# --- half-spectrum operator ------------------------------------------------------


class _Operator:
    """Precomputed arrays for one grid on the rfft half spectrum."""

    def __init__(self, grid: FrequencyGrid, fraction: float):
        self.grid = grid
        self.nx, self.ny = grid.shape
        self.nh = self.ny // 2 + 1
        self.k = grid.kx[:, None] * np.ones((1, self.nh))
        self.eta = np.ones((self.nx, 1)) * (2 * np.pi * np.fft.rfftfreq(self.ny, d=grid.ly / self.ny))[None, :]
        self.mask = dealias_mask(grid, fraction, half=True)
        self.norm = float(self.nx * self.ny)
        self.dx = min(grid.lx / self.nx, grid.ly / self.ny)
        self.ik = 1j * self.k

    def to_half(self, f: SpectralField) -> np.ndarray:
        return np.array(f.coeffs[:, : self.nh])

    def to_full(self, h: np.ndarray) -> SpectralField:
        full = np.empty((self.nx, self.ny), dtype=np.complex128)
        full[:, : self.nh] = h
        # negative eta from the Hermitian partner: c(j, -m) = conj(c(-j, m))
        m = np.arange(1, self.ny - self.nh + 1)
        jneg = (-np.arange(self.nx)) % self.nx
        full[:, self.ny - m] = np.conj(h[jneg][:, m])
        return SpectralField(self.grid, full)

    def to_phys(self, h):
        return sfft.irfft2(h * self.norm, s=(self.nx, self.ny))

    def to_spec(self, f):
        return sfft.rfft2(f) / self.norm

    def increment(self, tau_a: float, tau_b: float) -> np.ndarray:
        """int_{tau_a}^{tau_b} k^2 + (eta - k s)^2 ds for every mode."""
        return heat_phase(self.k, stationary_xi(self.k, self.eta, tau_b), tau_b - tau_a)

    def rhs(self, w, th, tau, nonlinear: bool, want_u: bool = False):
        """Explicit right-hand side (buoyancy + advection) on half spectra."""
        dw = self.ik * th
        dth = None
        umax = 0.0
        if nonlinear:
            xi = self.eta - self.k * tau
            ixi = 1j * xi
            lap = self.k * self.k + xi * xi
            lap[0, 0] = 1.0
            psi = w / lap
            psi[0, 0] = 0.0
            u1 = self.to_phys(-ixi * psi)
            u2 = self.to_phys(self.ik * psi)
            wx = self.to_phys(self.ik * w)
            wy = self.to_phys(ixi * w)
            tx = self.to_phys(self.ik * th)
            ty = self.to_phys(ixi * th)
            n_w = self.to_spec(u1 * wx + u2 * wy) * self.mask
            n_th = self.to_spec(u1 * tx + u2 * ty) * self.mask
            dw = dw - n_w
            dth = -n_th
            if want_u:
                with np.errstate(over="ignore", invalid="ignore"):
                    umax = float(np.sqrt(np.max(u1 * u1 + u2 * u2)))
        else:
            dth = np.zeros_like(th)
        return dw, dth, umax


_OPS: dict[tuple, _Operator] = {}


def _operator(grid: FrequencyGrid, fraction: float) -> _Operator:
    key = (grid, fraction)
    if key not in _OPS:
        if len(_OPS) > 8:
            _OPS.clear()
        _OPS[key] = _Operator(grid, fraction)
    return _OPS[key]


def nonlinear_term(state: FlowState, fraction: float = 2.0 / 3.0):
    """Dealiased spectra of u . grad omega and u . grad theta for ``state``."""
    op = _operator(state.grid, fraction)
    w, th = op.to_half(state.omega), op.to_half(state.theta)
    dw, dth, _ = op.rhs(w, np.zeros_like(th), state.frame_time, True)
    return op.to_full(-dw), op.to_full(-op.rhs(w, th, state.frame_time, True)[1])


# --- time stepping -----------------------------------------------------------------


def _lawson_rk4(op: _Operator, w, th, tau, dt, nu, mu, nonlinear, want_u=False):
    """One integrating-factor RK4 step on half spectra; returns (w, th, max |u| at stage 1)."""
    g1 = op.increment(tau, tau + 0.5 * dt)
    g2 = op.increment(tau + 0.5 * dt, tau + dt)
    e1w, e2w = np.exp(-nu * g1), np.exp(-nu * g2)
    if mu == nu:
        e1t, e2t = e1w, e2w
    else:
        e1t, e2t = np.exp(-mu * g1), np.exp(-mu * g2)
    efw, eft = e1w * e2w, e1t * e2t
    h = dt

    k1w, k1t, umax = op.rhs(w, th, tau, nonlinear, want_u)
    w2 = e1w * (w + 0.5 * h * k1w)
    t2 = e1t * (th + 0.5 * h * k1t)
    k2w, k2t, _ = op.rhs(w2, t2, tau + 0.5 * h, nonlinear)
    w3 = e1w * w + 0.5 * h * k2w
    t3 = e1t * th + 0.5 * h * k2t
    k3w, k3t, _ = op.rhs(w3, t3, tau + 0.5 * h, nonlinear)
    w4 = efw * w + h * e2w * k3w
    t4 = eft * th + h * e2t * k3t
    k4w, k4t, _ = op.rhs(w4, t4, tau + h, nonlinear)
    w_new = efw * w + (h / 6.0) * (efw * k1w + 2.0 * e2w * (k2w + k3w) + k4w)
    t_new = eft * th + (h / 6.0) * (eft * k1t + 2.0 * e2t * (k2t + k3t) + k4t)
    return w_new, t_new, umax


def _check_finite(w, th, t):
    if not (np.all(np.isfinite(w)) and np.all(np.isfinite(th))):
        raise SolverBlowup(f"non-finite spectrum at t={t:.6g}")


def step(state: FlowState, config: SolverConfig) -> FlowState:
    """Advance ``state`` by one step of size ``config.dt``."""
    op = _operator(state.grid, config.dealias_fraction)
    p = config.params
    w, th, umax = _lawson_rk4(
        op, op.to_half(state.omega), op.to_half(state.theta), state.frame_time, config.dt, p.nu, p.mu, config.nonlinear, config.cfl_check
    )
    t_new = state.time + config.dt
    _check_finite(w, th, t_new)
    if config.cfl_check and umax * config.dt / op.dx > 1.0:
        warnings.warn(f"CFL heuristic exceeded at t={t_new:.4g}: |u|dt/dx = {umax * config.dt / op.dx:.3g}", CFLWarning)
    return FlowState(op.to_full(w), op.to_full(th), t_new, state.frame_origin)


def remap(state: FlowState) -> FlowState:
    """Re-grid the sheared spectrum so the frame time restarts at zero.

    Valid when frame_time * ly / lx is an integer n: then coefficient (j, m)
    moves to (j, m - j n); modes leaving the lattice are dropped.
    """
    g = state.grid
    n_real = state.frame_time * g.ly / g.lx
    n = int(round(n_real))
    if abs(n_real - n) > 1e-9:
        raise ValueError(f"remap needs frame_time * ly/lx integral, got {n_real}")
    j = np.fft.fftfreq(g.nx, d=1.0 / g.nx).astype(int)
    m = np.fft.fftfreq(g.ny, d=1.0 / g.ny).astype(int)

    def shift(c):
        out = np.zeros_like(c)
        for a, jj in enumerate(j):
            src = m + jj * n  # new index m' takes old index m' + j n
            ok = (src >= -(g.ny // 2)) & (src < g.ny // 2)
            out[a, ok] = c[a, src[ok] % g.ny]
        return out

    return FlowState(
        SpectralField(g, shift(state.omega.coeffs)),
        SpectralField(g, shift(state.theta.coeffs)),
        state.time,
        state.frame_origin + n * g.lx / g.ly,
    )


@dataclass
class RunResult:
    """Trajectory handle: snapshots at the diagnostic cadence plus scalar series."""

    config: SolverConfig
    snapshots: list[FlowState] = field(default_factory=list)
    series: dict[str, list[float]] = field(default_factory=dict)
    final: FlowState | None = None
    aborted: str | None = None
    wall_time: float = 0.0
    max_divergence: float = 0.0
    max_hermitian_error: float = 0.0
    n_steps: int = 0

    def times(self) -> np.ndarray:
        return np.asarray(self.series.get("t", []))


Observer = Callable[[FlowState], dict]


def _basic_observer(state: FlowState) -> dict:
    return {"omega_l2": state.omega.l2_norm(), "theta_l2": state.theta.l2_norm()}


def _divergence_error(op: _Operator, w, tau) -> float:
    """max |i k u1 + i xi u2| relative to max |k u|, evaluated on the half spectrum."""
    xi = op.eta - op.k * tau
    lap = op.k * op.k + xi * xi
    lap[0, 0] = 1.0
    psi = w / lap
    psi[0, 0] = 0.0
    u1 = -1j * xi * psi
    u2 = op.ik * psi
    div = op.ik * u1 + 1j * xi * u2
    scale = float(np.max(np.abs(op.k * u1)) + np.max(np.abs(xi * u2)))
    return float(np.max(np.abs(div))) / scale if scale > 0 else 0.0


def _half_hermitian_error(h: np.ndarray) -> float:
    """Hermitian defect on the eta = 0 column, the only one not implied by the rfft layout."""
    col = h[:, 0]
    partner = np.conj(col[(-np.arange(col.size)) % col.size])
    scale = float(np.max(np.abs(h)))
    return float(np.max(np.abs(col - partner))) / scale if scale > 0 else 0.0


def run(initial: FlowState, config: SolverConfig, observers: list[Observer] | None = None, abort_if: Callable[[dict], str | None] | None = None) -> RunResult:
    """Integrate from ``initial`` to ``config.t_end``.

    The initial spectra are projected onto the dealiased set. Observers are
    called at t = initial.time and then every ``diag_every`` time units; their
    dict outputs are appended to ``result.series``. ``abort_if`` may inspect
    each diagnostic row and return a reason string to stop early.
    """
    op = _operator(initial.grid, config.dealias_fraction)
    p = config.params
    observers = [_basic_observer] + list(observers or [])
    result = RunResult(config)
    start = _time.perf_counter()

    w = op.to_half(initial.omega) * op.mask
    th = op.to_half(initial.theta) * op.mask
    t = float(initial.time)
    origin = float(initial.frame_origin)
    n_total = int(round((config.t_end - t) / config.dt))
    diag_stride = max(1, int(round(config.diag_every / config.dt)))
    remap_stride = None
    if config.remap_interval is not None:
        remap_stride = int(round(config.remap_interval / config.dt))
        if abs(remap_stride * config.dt - config.remap_interval) > 1e-9 * config.remap_interval:
            raise ValueError("remap_interval must be a multiple of dt")

    def record(state: FlowState):
        row = {"t": state.time}
        for obs in observers:
            row.update(obs(state))
        for key, val in row.items():
            result.series.setdefault(key, []).append(val)
        if config.keep_snapshots:
            result.snapshots.append(state)
        return row

    state = FlowState(op.to_full(w), op.to_full(th), t, origin)
    row = record(state)
    if abort_if is not None and (reason := abort_if(row)):
        result.aborted = reason
    cfl_warned = False
    for n in range(1, n_total + 1):
        if result.aborted:
            break
        try:
            w_new, th_new, umax = _lawson_rk4(op, w, th, t - origin, config.dt, p.nu, p.mu, config.nonlinear, config.cfl_check)
            _check_finite(w_new, th_new, t + config.dt)
        except (SolverBlowup, FloatingPointError) as exc:
            result.aborted = f"blowup: {exc}"
            break
        w, th, t = w_new, th_new, t + config.dt
        if config.cfl_check and not cfl_warned and umax * config.dt / op.dx > 1.0:
            warnings.warn(f"CFL heuristic exceeded at t={t:.4g}: |u|dt/dx = {umax * config.dt / op.dx:.3g}", CFLWarning)
            cfl_warned = True
        if config.check_invariants:
            result.max_divergence = max(result.max_divergence, _divergence_error(op, w, t - origin))
            result.max_hermitian_error = max(result.max_hermitian_error, _half_hermitian_error(w), _half_hermitian_error(th))
        if remap_stride and n % remap_stride == 0:
            st = remap(FlowState(op.to_full(w), op.to_full(th), t, origin))
            w, th, origin = op.to_half(st.omega), op.to_half(st.theta), st.frame_origin
        if n % diag_stride == 0 or n == n_total:
            state = FlowState(op.to_full(w), op.to_full(th), t, origin)
            row = record(state)
            if abort_if is not None and (reason := abort_if(row)):
                result.aborted = reason
        result.n_steps = n
    result.final = FlowState(op.to_full(w), op.to_full(th), t, origin)
    if config.check_invariants:
        result.max_hermitian_error = max(
            result.max_hermitian_error, hermitian_error(result.final.omega.coeffs), hermitian_error(result.final.theta.coeffs)
        )
    result.wall_time = _time.perf_counter() - start
    log.debug("run finished: %d steps in %.2fs (aborted=%s)", result.n_steps, result.wall_time, result.aborted)
    return result


# --- persistence ------------------------------------------------------------------


def save_state(directory, state: FlowState, extra: dict | None = None) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    meta = {"time": repr(state.time), "frame_origin": repr(state.frame_origin)}
    meta.update(extra or {})
    save_field(d / "omega.bin", state.omega, {"field": "omega", **meta})
    save_field(d / "theta.bin", state.theta, {"field": "theta", **meta})
    return d


def load_state(directory) -> FlowState:
    d = Path(directory)
    omega, meta = load_field(d / "omega.bin")
    theta, _ = load_field(d / "theta.bin")
    return FlowState(omega, theta, float(meta["time"]), float(meta.get("frame_origin", "0.0")))

