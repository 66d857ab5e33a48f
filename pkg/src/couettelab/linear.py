"""
Closed-form Kelvin solutions of the linearized Boussinesq system around Couette flow.

In stationary Fourier variables (k, xi) the linear system reads

    d_t theta - k d_xi theta + mu (k^2 + xi^2) theta = 0
    d_t omega - k d_xi omega + nu (k^2 + xi^2) omega = i k theta

whose characteristics are xi(s) = xi0 - k s, with xi0 = xi + k t the
moving-frame label of the mode. Every public function takes stationary
(k, xi); use ``freq.stationary_xi`` to convert from the moving frame.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq

from .freq import PhysParams, japanese_bracket, moving_eta, stationary_xi

__all__ = [
    "heat_phase",
    "heat_phase_quadrature",
    "LinearSolution",
    "propagate_theta_linear",
    "propagate_omega_linear",
    "Envelope",
    "linear_decay_envelope",
    "decay_time",
    "QuadratureError",
]

DUHAMEL_RTOL = 1e-10
DUHAMEL_LIMIT = 10_000


class QuadratureError(RuntimeError):
    """Adaptive quadrature failed to reach the requested tolerance."""

    def __init__(self, message: str, achieved: float):
        super().__init__(f"{message} (achieved abs error estimate {achieved:.3e})")
        self.achieved = achieved


def heat_phase(k, xi, t):
    """Integral of k^2 + (xi + k (t - tau))^2 over tau in [0, t], in closed form.

    Returns k^2 t + k^2 t^3 / 12 + (xi + k t / 2)^2 t. Broadcasts over arrays.
    """
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0):
        raise ValueError("heat_phase requires t >= 0")
    k = np.asarray(k, dtype=float)
    xi = np.asarray(xi, dtype=float)
    mid = xi + 0.5 * k * t_arr
    out = k * k * t_arr + k * k * t_arr**3 / 12.0 + mid * mid * t_arr
    return float(out) if np.ndim(out) == 0 else out


def heat_phase_quadrature(k: float, xi: float, t: float) -> float:
    """Adaptive-quadrature evaluation of the same integral (independent check)."""
    if t < 0:
        raise ValueError("heat_phase requires t >= 0")
    val, _ = quad(lambda tau: k * k + (xi + k * (t - tau)) ** 2, 0.0, t, epsabs=0.0, epsrel=1e-13, limit=200)
    return val


Profile = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class LinearSolution:
    """Linear evolution of given initial spectra.

    ``omega_in`` and ``theta_in`` map (k, xi) arrays to complex arrays.
    ``sobolev_shift`` is the integer a of the weight <k, xi + k t>^a carried
    along characteristics; the propagators return the weighted values.
    """

    params: PhysParams
    omega_in: Profile
    theta_in: Profile
    sobolev_shift: int = 0

    def __post_init__(self):
        if int(self.sobolev_shift) != self.sobolev_shift or not 0 <= self.sobolev_shift <= 6:
            raise ValueError("sobolev_shift must be an integer in [0, 6]")


def _weight(sol: LinearSolution, k, xi0):
    if sol.sobolev_shift == 0:
        return 1.0
    return japanese_bracket(k, xi0) ** sol.sobolev_shift


def _check_t(t):
    if np.any(np.asarray(t) < 0):
        raise ValueError("propagation requires t >= 0")


def propagate_theta_linear(sol: LinearSolution, t, k, xi):
    """Weighted temperature spectrum <k, xi+kt>^a theta_L(t, k, xi)."""
    _check_t(t)
    k = np.asarray(k, dtype=float)
    xi0 = moving_eta(k, np.asarray(xi, dtype=float), t)
    decay = np.exp(-sol.params.mu * heat_phase(k, xi, t))
    out = _weight(sol, k, xi0) * np.asarray(sol.theta_in(k, xi0), dtype=complex) * decay
    return complex(out) if np.ndim(out) == 0 else out


def _duhamel_factor(nu: float, mu: float, k: float, xi0: float, t: float) -> complex:
    """int_0^t exp(-nu (Phi(t) - Phi(s)) - mu Phi(s)) ds along the characteristic from xi0."""
    phi_t = heat_phase(k, xi0 - k * t, t)

    def phase(s):
        return heat_phase(k, xi0 - k * s, s)

    def integrand(s):
        return math.exp(-nu * (phi_t - phase(s)) - mu * phase(s))

    val, err = quad(integrand, 0.0, t, epsabs=0.0, epsrel=DUHAMEL_RTOL, limit=DUHAMEL_LIMIT, full_output=0)
    if not math.isfinite(val) or err > max(1e-8 * abs(val), 1e-300):
        raise QuadratureError("Duhamel integral did not converge", err)
    return val


def propagate_omega_linear(sol: LinearSolution, t, k, xi):
    """Weighted vorticity spectrum <k, xi+kt>^a omega_L(t, k, xi).

    For nu == mu the buoyancy forcing integrates in closed form: along a
    characteristic theta decays with the same phase as the vorticity
    semigroup, so the Duhamel term is i k t theta_in(k, xi+kt) exp(-nu Phi).
    Otherwise the Duhamel integral is evaluated by adaptive quadrature.
    """
    _check_t(t)
    p = sol.params
    k_a, xi_a, t_a = np.broadcast_arrays(np.asarray(k, float), np.asarray(xi, float), np.asarray(t, float))
    xi0 = moving_eta(k_a, xi_a, t_a)
    phi = heat_phase(k_a, xi_a, t_a)
    w_in = np.asarray(sol.omega_in(k_a, xi0), dtype=complex)
    th_in = np.asarray(sol.theta_in(k_a, xi0), dtype=complex)
    if p.nu == p.mu:
        out = (w_in + 1j * k_a * t_a * th_in) * np.exp(-p.nu * phi)
    else:
        forcing = np.empty(k_a.shape, dtype=float)
        for idx in np.ndindex(k_a.shape):
            forcing[idx] = _duhamel_factor(p.nu, p.mu, float(k_a[idx]), float(xi0[idx]), float(t_a[idx]))
        out = w_in * np.exp(-p.nu * phi) + 1j * k_a * th_in * forcing
    out = _weight(sol, k_a, xi0) * out
    return complex(out) if np.ndim(out) == 0 else out


@dataclass
class Envelope:
    """Moduli along one characteristic (moving-frame label k, eta)."""

    k: float
    eta: float
    t: np.ndarray
    abs_omega: np.ndarray
    abs_phi: np.ndarray | None
    abs_theta: np.ndarray

    def to_csv(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "abs_omega", "abs_phi", "abs_theta"])
            phi = self.abs_phi if self.abs_phi is not None else np.full_like(self.t, np.nan)
            for row in zip(self.t, self.abs_omega, phi, self.abs_theta):
                w.writerow([repr(float(v)) for v in row])
        return path


def linear_decay_envelope(sol: LinearSolution, k: float, eta: float, times, stream: bool = True) -> Envelope:
    """Track |omega_L|, |phi_L| and |theta_L| of the mode labelled (k, eta).

    ``eta`` is the moving-frame frequency: the stationary frequency at time t
    is xi = eta - k t, and the stream function is phi = -omega / (k^2 + xi^2).
    """
    times = np.asarray(times, dtype=float)
    if stream and k == 0:
        raise ValueError("stream-function envelope requires k != 0")
    xi = stationary_xi(k, eta, times)
    om = np.abs(propagate_omega_linear(sol, times, np.full_like(times, k), xi))
    th = np.abs(propagate_theta_linear(sol, times, np.full_like(times, k), xi))
    phi = om / (k * k + xi * xi) if stream else None
    return Envelope(float(k), float(eta), times, np.atleast_1d(om), None if phi is None else np.atleast_1d(phi), np.atleast_1d(th))


def decay_time(nu: float, k: float, eta: float, level: float = 1.0) -> float:
    """Time at which nu * Phi reaches ``level`` along the characteristic labelled (k, eta)."""
    if nu <= 0:
        raise ValueError("decay_time needs nu > 0")

    def f(t):
        return nu * heat_phase(k, stationary_xi(k, eta, t), t) - level

    hi = 1.0
    while f(hi) < 0:
        hi *= 2.0
    return brentq(f, 0.0, hi, xtol=1e-14, rtol=1e-14)
