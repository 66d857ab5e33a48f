"""
Initial-data profiles: a Gaussian spectral bump and seeded random phases.

Both are normalized by the initial-data norm of the stability estimate,
||<D>^6 <1/D_x>^4 f||_{L^2 cap L^1} (with one extra <D_x> for theta), so an
amplitude A means data of exactly that size. The k = 0 column is left empty
because its <1/k> weight is infinite.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .diagnostics import data_norm
from .freq import FrequencyGrid, SpectralField, enforce_hermitian, japanese_bracket
from .solver import FlowState

__all__ = ["gaussian_bump", "random_phase_field", "InitialDataSpec", "active_k_max"]


def gaussian_bump(grid: FrequencyGrid, center=(1.0, 0.0), width: float = 0.5) -> SpectralField:
    """Hermitian sum of Gaussians at +-center (unnormalized shape)."""
    if width <= 0:
        raise ValueError("width must be positive")
    k, eta = grid.mesh()
    k0, e0 = center
    c = np.exp(-((k - k0) ** 2 + (eta - e0) ** 2) / (2 * width**2)) + np.exp(-((k + k0) ** 2 + (eta + e0) ** 2) / (2 * width**2))
    c = c.astype(complex)
    c[0, :] = 0.0
    return SpectralField(grid, c)


def random_phase_field(grid: FrequencyGrid, seed: int, decay: float = 2.0, k_cut: float | None = None) -> SpectralField:
    """Random phases under the envelope <k, eta>^(-6 - decay) <1/k>^(-4), Hermitian.

    ``k_cut`` (default: a quarter of the horizontal band) zeroes |k| and |eta|
    beyond it so the data sits well inside the dealiased set.
    """
    rng = np.random.default_rng(seed)
    k, eta = grid.mesh()
    if k_cut is None:
        k_cut = 0.25 * min(np.abs(grid.kx).max(), np.abs(grid.ky).max())
    with np.errstate(divide="ignore"):
        inv = np.where(k == 0, np.inf, np.sqrt(1.0 + 1.0 / np.where(k == 0, 1.0, k * k)))
    env = japanese_bracket(k, eta) ** (-6.0 - decay) * inv ** (-4.0)
    env[(np.abs(k) > k_cut) | (np.abs(eta) > k_cut)] = 0.0
    phase = np.exp(2j * np.pi * rng.random(grid.shape))
    c = enforce_hermitian(env * phase)
    c[0, :] = 0.0
    return SpectralField(grid, c)


def active_k_max(field: SpectralField, rel: float = 1e-6) -> float:
    """Largest |k| carrying a coefficient above ``rel`` times the maximum."""
    a = np.abs(field.coeffs)
    top = a.max()
    if top == 0:
        return 0.0
    cols = np.nonzero((a > rel * top).any(axis=1))[0]
    return float(np.abs(field.grid.kx[cols]).max())


@dataclass(frozen=True)
class InitialDataSpec:
    """Shape of the initial vorticity and temperature.

    kind: "gaussian" (bumps at ``omega_center``/``theta_center`` of common
    ``width``) or "random" (seeded phases, seeds ``seed`` and ``seed + 1``).
    """

    kind: str = "gaussian"
    omega_center: tuple[float, float] = (1.0, 0.0)
    theta_center: tuple[float, float] = (1.0, 0.0)
    width: float = 0.5
    seed: int = 0
    decay: float = 2.0

    def __post_init__(self):
        if self.kind not in ("gaussian", "random"):
            raise ValueError(f"unknown initial-data kind {self.kind!r}")
        object.__setattr__(self, "omega_center", tuple(float(v) for v in self.omega_center))
        object.__setattr__(self, "theta_center", tuple(float(v) for v in self.theta_center))

    def shapes(self, grid: FrequencyGrid) -> tuple[SpectralField, SpectralField]:
        if self.kind == "gaussian":
            return gaussian_bump(grid, self.omega_center, self.width), gaussian_bump(grid, self.theta_center, self.width)
        return random_phase_field(grid, self.seed, self.decay), random_phase_field(grid, self.seed + 1, self.decay)

    def build(self, grid: FrequencyGrid, a_omega: float, a_theta: float) -> FlowState:
        """Data with ||omega_in|| = a_omega and ||theta_in|| = a_theta in the data norm."""
        w, th = self.shapes(grid)
        nw, nt = data_norm(w), data_norm(th, extra_k_power=1.0)
        return FlowState(w.scaled(a_omega / nw if nw else 0.0), th.scaled(a_theta / nt if nt else 0.0))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["omega_center"] = list(self.omega_center)
        d["theta_center"] = list(self.theta_center)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "InitialDataSpec":
        return cls(**d)
