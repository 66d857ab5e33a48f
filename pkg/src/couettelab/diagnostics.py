"""
Weighted norms, the stability functional, linear/nonlinear splitting and decay fits.

Fields are moving-frame spectra as stored in ``FlowState``: the stationary
frequency of coefficient (k, eta) at time t is xi = eta - k (t - frame_origin)
and its time-zero label is xi + k t = eta + k frame_origin.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .freq import FrequencyGrid, PhysParams, SpectralField, japanese_bracket, lambda_rate, stationary_xi
from .linear import LinearSolution, propagate_omega_linear, propagate_theta_linear
from .multipliers import MultiplierContext, eval_m_total, eval_upsilon
from .solver import FlowState, RunResult

__all__ = [
    "WeightSpec",
    "mode_weight",
    "weighted_l2_norm",
    "zero_column_norm",
    "stability_functional",
    "functional_observer",
    "running_max",
    "short_long_split_time",
    "data_norm",
    "lattice_profile",
    "linear_solution_for",
    "linear_state",
    "linear_trajectory",
    "SplitPoint",
    "split_linear_nonlinear",
    "DecayFit",
    "fit_decay_exponent",
    "shell_norm",
    "enhanced_dissipation_timescale",
]


@dataclass(frozen=True)
class WeightSpec:
    """Per-mode weight

        e^{c nu^(1/3) lambda(k) t} <k>^a <1/k>^e |k|^s <k, xi + k t>^b [M] [sqrt(Upsilon)]

    With ``lambda_on`` false the exponential uses rate c nu^(1/3) for every mode.
    """

    exp_rate_c: float = 0.0
    lambda_on: bool = True
    bracket_k_power: float = 0.0
    inv_bracket_power: float = 0.0
    extra_abs_k_power: float = 0.0
    shear_bracket_power: float = 0.0
    multiplier_M: bool = False
    upsilon_sqrt: bool = False

    def __post_init__(self):
        for name in ("exp_rate_c", "bracket_k_power", "inv_bracket_power", "extra_abs_k_power", "shear_bracket_power"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")

    @property
    def skips_zero_column(self) -> bool:
        return self.inv_bracket_power != 0.0

    @classmethod
    def stability_omega(cls, params: PhysParams) -> "WeightSpec":
        """e^{c nu^(1/3) lambda t} <D_x> <1/D_x>^eps, the vorticity weight of the stability estimate."""
        return cls(exp_rate_c=params.c, bracket_k_power=1.0, inv_bracket_power=params.epsilon)

    @classmethod
    def stability_theta(cls, params: PhysParams) -> "WeightSpec":
        """Same with the extra <D_x>^(1/3) of the temperature channel."""
        return cls(exp_rate_c=params.c, bracket_k_power=4.0 / 3.0, inv_bracket_power=params.epsilon)


def mode_weight(spec: WeightSpec, k, xi, label, t: float, params: PhysParams) -> np.ndarray:
    """Weight of each mode given stationary ``xi`` and time-zero label ``label`` = xi + k t.

    Entries with k = 0 are NaN when the weight carries a <1/k> factor.
    """
    k = np.asarray(k, dtype=float)
    w = np.ones(np.broadcast(k, xi).shape)
    if spec.exp_rate_c:
        rate = lambda_rate(k) if spec.lambda_on else 1.0
        w = w * np.exp(spec.exp_rate_c * params.nu ** (1.0 / 3.0) * rate * t)
    if spec.bracket_k_power:
        w = w * japanese_bracket(k) ** spec.bracket_k_power
    if spec.inv_bracket_power:
        with np.errstate(divide="ignore", invalid="ignore"):
            w = w * np.where(k == 0, np.nan, np.sqrt(1.0 + 1.0 / np.where(k == 0, 1.0, k * k)) ** spec.inv_bracket_power)
    if spec.extra_abs_k_power:
        w = w * np.abs(k) ** spec.extra_abs_k_power
    if spec.shear_bracket_power:
        w = w * japanese_bracket(k, label) ** spec.shear_bracket_power
    return w


def _frame_arrays(grid: FrequencyGrid, t: float, frame_origin: float):
    k, eta = grid.mesh()
    return k, stationary_xi(k, eta, t - frame_origin), eta + k * frame_origin


def _multiplier_factor(spec, coeffs, k, xi, t, params):
    """M and/or sqrt(Upsilon) on the nonzero coefficients only (quadrature is per point)."""
    f = np.ones(coeffs.shape)
    if not (spec.multiplier_M or spec.upsilon_sqrt):
        return f
    ctx = MultiplierContext.from_params(params)
    nz = coeffs != 0
    tt = np.full(int(nz.sum()), float(t))
    if spec.multiplier_M:
        f[nz] *= eval_m_total(ctx, tt, k[nz], xi[nz])
    if spec.upsilon_sqrt:
        f[nz] *= np.sqrt(eval_upsilon(ctx, tt, k[nz], xi[nz]))
    return f


def weighted_l2_norm(field: SpectralField, t: float, spec: WeightSpec, params: PhysParams, frame_origin: float = 0.0) -> float:
    """L^2 norm (Parseval normalization) of the weighted spectrum.

    When the weight contains <1/k> the k = 0 column is excluded; see
    ``zero_column_norm`` for its separate report.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    k, xi, label = _frame_arrays(field.grid, t, frame_origin)
    c = np.array(field.coeffs)
    if spec.skips_zero_column:
        c[0, :] = 0.0
    w = mode_weight(spec, k, xi, label, t, params)
    w = np.where(np.isnan(w), 0.0, w) * _multiplier_factor(spec, c, k, xi, t, params)
    return math.sqrt(field.grid.area * float(np.sum(np.abs(w * c) ** 2)))


def zero_column_norm(field: SpectralField, t: float, spec: WeightSpec, params: PhysParams, frame_origin: float = 0.0) -> float:
    """Weighted norm of the k = 0 column with the <1/k> factor dropped."""
    plain = WeightSpec(**{**spec.__dict__, "inv_bracket_power": 0.0})
    col = np.zeros(field.grid.shape, dtype=complex)
    col[0, :] = field.coeffs[0, :]
    return weighted_l2_norm(SpectralField(field.grid, col), t, plain, params, frame_origin)


def stability_functional(state: FlowState, params: PhysParams) -> dict:
    """Instantaneous value of the stability functional and its parts.

    F = ||W omega|| + nu^(-1/3-delta) ||W <D_x>^(1/3) theta||, k = 0 column excluded.
    """
    so, st = WeightSpec.stability_omega(params), WeightSpec.stability_theta(params)
    fo = weighted_l2_norm(state.omega, state.time, so, params, state.frame_origin)
    ft = weighted_l2_norm(state.theta, state.time, st, params, state.frame_origin)
    scale = params.nu ** (-1.0 / 3.0 - params.delta) if params.nu > 0 else 1.0
    return {
        "F": fo + scale * ft,
        "F_omega": fo,
        "F_theta": scale * ft,
        "omega_k0": zero_column_norm(state.omega, state.time, so, params, state.frame_origin),
        "theta_k0": zero_column_norm(state.theta, state.time, st, params, state.frame_origin),
    }


def functional_observer(params: PhysParams):
    """Observer for ``solver.run`` recording the stability functional."""

    def observe(state: FlowState) -> dict:
        return stability_functional(state, params)

    return observe


def running_max(values: Iterable[float]) -> np.ndarray:
    """L^infinity-in-time functional sampled at snapshot times."""
    return np.maximum.accumulate(np.asarray(list(values), dtype=float))


def short_long_split_time(nu: float) -> float:
    """Marker T0 = nu^(-1/6) separating the short- and long-time regimes (informational only)."""
    if nu <= 0:
        raise ValueError("nu must be positive")
    return nu ** (-1.0 / 6.0)


def data_norm(field: SpectralField, extra_k_power: float = 0.0) -> float:
    """||<D_x, D_y>^6 <1/D_x>^4 <D_x>^a f||_{L^2} + ||...||_{L^1} for initial data.

    The k = 0 column must vanish (its <1/k> weight is infinite).
    """
    if np.any(field.coeffs[0, :] != 0):
        raise ValueError("initial data must have no k = 0 content")
    k, eta = field.grid.mesh()
    with np.errstate(divide="ignore"):
        inv = np.where(k == 0, 0.0, np.sqrt(1.0 + 1.0 / np.where(k == 0, 1.0, k * k)))
    w = japanese_bracket(k, eta) ** 6 * inv**4 * japanese_bracket(k) ** extra_k_power
    g = field.grid
    weighted = w * field.coeffs
    l2 = math.sqrt(g.area * float(np.sum(np.abs(weighted) ** 2)))
    phys = np.real(np.fft.ifft2(weighted) * (g.nx * g.ny))
    l1 = float(np.mean(np.abs(phys))) * g.area
    return l2 + l1


# --- linear reference ------------------------------------------------------------


def lattice_profile(field: SpectralField, frame_origin: float = 0.0):
    """Profile (k, xi0) -> coefficient of ``field`` at that lattice point (0 off-lattice).

    ``field`` holds moving-frame coefficients with frame origin ``frame_origin``;
    the returned profile is indexed by time-zero labels.
    """
    g = field.grid
    coeffs = np.array(field.coeffs)

    def profile(k, xi0):
        k = np.asarray(k, dtype=float)
        eta = np.asarray(xi0, dtype=float) - k * frame_origin
        j = k * g.lx / (2 * np.pi)
        m = eta * g.ly / (2 * np.pi)
        jr, mr = np.rint(j), np.rint(m)
        ok = (np.abs(j - jr) < 1e-9) & (np.abs(m - mr) < 1e-9)
        ok &= (jr >= -(g.nx // 2)) & (jr < g.nx // 2) & (mr >= -(g.ny // 2)) & (mr < g.ny // 2)
        ji = np.where(ok, jr, 0).astype(int) % g.nx
        mi = np.where(ok, mr, 0).astype(int) % g.ny
        return np.where(ok, coeffs[ji, mi], 0.0)

    return profile


def linear_solution_for(state: FlowState, params: PhysParams) -> LinearSolution:
    """Linear evolution of ``state`` treated as initial data at time 0."""
    if state.time != 0.0:
        raise ValueError("linear reference needs a time-zero state")
    return LinearSolution(params, lattice_profile(state.omega), lattice_profile(state.theta))


def linear_state(sol: LinearSolution, grid: FrequencyGrid, t: float, frame_origin: float = 0.0) -> FlowState:
    """Linear solution at time t written as moving-frame coefficients on ``grid``."""
    k, xi, _ = _frame_arrays(grid, t, frame_origin)
    tt = np.full(k.shape, float(t))
    om = propagate_omega_linear(sol, tt, k, xi)
    th = propagate_theta_linear(sol, tt, k, xi)
    return FlowState(SpectralField(grid, om), SpectralField(grid, th), float(t), frame_origin)


def linear_trajectory(sol: LinearSolution, grid: FrequencyGrid, times: Sequence[float]) -> list[FlowState]:
    return [linear_state(sol, grid, t) for t in times]


def _states(trajectory) -> list[FlowState]:
    if isinstance(trajectory, RunResult):
        if not trajectory.snapshots:
            raise ValueError("run kept no snapshots")
        return list(trajectory.snapshots)
    return list(trajectory)


class SplitPoint(NamedTuple):
    t: float
    omega_linear: SpectralField
    omega_nonlinear: SpectralField
    theta_linear: SpectralField
    theta_nonlinear: SpectralField


def split_linear_nonlinear(trajectory, linear: LinearSolution) -> list[SplitPoint]:
    """omega^NL = omega - omega^L (same for theta) at every snapshot."""
    out = []
    for st in _states(trajectory):
        lin = linear_state(linear, st.grid, st.time, st.frame_origin)
        out.append(SplitPoint(st.time, lin.omega, st.omega - lin.omega, lin.theta, st.theta - lin.theta))
    return out


# --- fits --------------------------------------------------------------------------


class DecayFit(NamedTuple):
    """Least-squares slope with RMS log residual and the slope's standard error."""

    exponent: float
    residual: float
    stderr: float


def fit_decay_exponent(times, values, window: tuple[float, float] | None = None, mode: str = "algebraic") -> DecayFit:
    """Slope of log(value) against log<t> ("algebraic") or t ("exponential")."""
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    if t.shape != v.shape:
        raise ValueError("times and values differ in length")
    if window is not None:
        lo, hi = window
        if lo < t.min() - 1e-12 or hi > t.max() + 1e-12:
            raise ValueError(f"window {window} outside series range [{t.min()}, {t.max()}]")
        sel = (t >= lo) & (t <= hi)
        t, v = t[sel], v[sel]
    if t.size < 3:
        raise ValueError("need at least three points to fit")
    if np.any(v <= 0):
        raise ValueError("values must be positive")
    if mode == "algebraic":
        x = np.log(japanese_bracket(t))
    elif mode == "exponential":
        x = t
    else:
        raise ValueError(f"unknown mode {mode!r}")
    y = np.log(v)
    a = np.vstack([x, np.ones_like(x)]).T
    coef, *_ = np.linalg.lstsq(a, y, rcond=None)
    res = y - a @ coef
    dof = max(t.size - 2, 1)
    sxx = float(np.sum((x - x.mean()) ** 2))
    stderr = math.sqrt(float(res @ res) / dof / sxx) if sxx > 0 else math.inf
    return DecayFit(float(coef[0]), float(np.sqrt(np.mean(res**2))), stderr)


def shell_norm(state: FlowState, k: float) -> float:
    """l^2 norm of the vorticity coefficients with |k_j| = |k|."""
    kx = np.abs(state.grid.kx)
    sel = np.isclose(kx, abs(k), rtol=0, atol=1e-9)
    if not sel.any():
        raise ValueError(f"no lattice column with |k| = {k}")
    return math.sqrt(float(np.sum(np.abs(state.omega.coeffs[sel, :]) ** 2)))


def enhanced_dissipation_timescale(trajectory, k: float) -> float | None:
    """First time the mode-k shell norm falls below 1/e of its initial value.

    Crossings are located by log-linear interpolation between snapshots.
    Returns None for a zero shell or when no crossing occurs.
    """
    states = _states(trajectory)
    t = np.array([s.time for s in states])
    a = np.array([shell_norm(s, k) for s in states])
    if a[0] == 0:
        return None
    target = a[0] / math.e
    below = np.nonzero(a < target)[0]
    if below.size == 0:
        return None
    i = int(below[0])
    if i == 0:
        return float(t[0])
    y0, y1 = math.log(a[i - 1]), math.log(max(a[i], 1e-300))
    frac = (math.log(target) - y0) / (y1 - y0)
    return float(t[i - 1] + frac * (t[i] - t[i - 1]))
