"""
Frequency lattice, spectral fields and physical parameters.

The whole plane is approximated by a periodic box of size Lx x Ly. A field is
stored by its full complex Fourier coefficient array ``coeffs[j, m]`` where
``j`` indexes the horizontal wavenumber k_j = 2*pi*j/Lx and ``m`` the vertical
wavenumber eta_m = 2*pi*m/Ly, both in numpy ``fftfreq`` order.

Normalization: the forward transform carries 1/(Nx*Ny), so that

    f(x, y) = sum_{j,m} coeffs[j, m] * exp(i (k_j x + eta_m y))

and mean(|f|^2) = sum |coeffs|^2.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "FrequencyGrid",
    "SpectralField",
    "PhysParams",
    "japanese_bracket",
    "lambda_rate",
    "to_physical",
    "to_spectral",
    "stationary_xi",
    "moving_eta",
    "hermitian_partner",
    "enforce_hermitian",
    "hermitian_error",
    "save_field",
    "load_field",
]


def japanese_bracket(*values):
    """Return sqrt(1 + sum(v**2)); accepts scalars or broadcastable arrays."""
    total = 1.0
    for v in values:
        v = np.asarray(v, dtype=float)
        if not np.all(np.isfinite(v)):
            raise ValueError("japanese_bracket requires finite input")
        total = total + v * v
    out = np.sqrt(total)
    return float(out) if np.ndim(out) == 0 else out


def lambda_rate(k):
    """Enhanced-dissipation rate profile min(1, |k|^(2/3))."""
    out = np.minimum(1.0, np.abs(np.asarray(k, dtype=float)) ** (2.0 / 3.0))
    return float(out) if np.ndim(out) == 0 else out


def stationary_xi(k, eta, t):
    """Map a moving-frame vertical frequency to the stationary frame: xi = eta - k t.

    This is the single owner of the frame convention; the propagator, the
    solver and the diagnostics all go through it (or ``moving_eta``).
    """
    return eta - k * t


def moving_eta(k, xi, t):
    """Inverse of ``stationary_xi``: eta = xi + k t."""
    return xi + k * t


@dataclass(frozen=True)
class FrequencyGrid:
    """Discrete Fourier lattice on a periodic Lx x Ly box.

    Parameters
    ----------
    nx, ny : int
        Mode counts; even and at least 8.
    lx, ly : float
        Box lengths. The default 2*pi makes the lowest nonzero |k| equal 1.
    """

    nx: int
    ny: int
    lx: float = 2.0 * np.pi
    ly: float = 2.0 * np.pi

    def __post_init__(self):
        for name, n in (("nx", self.nx), ("ny", self.ny)):
            if int(n) != n or n < 8 or n % 2:
                raise ValueError(f"{name} must be an even integer >= 8, got {n}")
        if not (self.lx > 0 and self.ly > 0 and math.isfinite(self.lx) and math.isfinite(self.ly)):
            raise ValueError("box lengths must be positive and finite")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nx, self.ny)

    @property
    def kx(self) -> np.ndarray:
        """Horizontal wavenumbers k_j, fftfreq order."""
        return 2.0 * np.pi * np.fft.fftfreq(self.nx, d=self.lx / self.nx)

    @property
    def ky(self) -> np.ndarray:
        """Vertical wavenumbers eta_m, fftfreq order."""
        return 2.0 * np.pi * np.fft.fftfreq(self.ny, d=self.ly / self.ny)

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        """(K, ETA) arrays of shape (nx, ny)."""
        return np.meshgrid(self.kx, self.ky, indexing="ij")

    def zero_column(self) -> np.ndarray:
        """Boolean mask of the k = 0 column (the shear-average channel)."""
        mask = np.zeros(self.shape, dtype=bool)
        mask[0, :] = True
        return mask

    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        """Physical sample points (X, Y), shape (nx, ny)."""
        x = np.arange(self.nx) * (self.lx / self.nx)
        y = np.arange(self.ny) * (self.ly / self.ny)
        return np.meshgrid(x, y, indexing="ij")

    @property
    def area(self) -> float:
        return self.lx * self.ly

    def to_dict(self) -> dict:
        return {"nx": self.nx, "ny": self.ny, "lx": self.lx, "ly": self.ly}


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Fourier coefficients of one scalar field on ``grid``."""

    grid: FrequencyGrid
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=np.complex128)
        if c.shape != self.grid.shape:
            raise ValueError(f"coeff shape {c.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(c)):
            raise ValueError("spectral field contains non-finite values")
        c = c.copy()
        c.flags.writeable = False
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def zeros(cls, grid: FrequencyGrid) -> "SpectralField":
        return cls(grid, np.zeros(grid.shape, dtype=np.complex128))

    def l2_norm(self) -> float:
        """L^2(box) norm via Parseval."""
        return math.sqrt(self.grid.area * float(np.sum(np.abs(self.coeffs) ** 2)))

    def __add__(self, other: "SpectralField") -> "SpectralField":
        _same_grid(self, other)
        return SpectralField(self.grid, self.coeffs + other.coeffs)

    def __sub__(self, other: "SpectralField") -> "SpectralField":
        _same_grid(self, other)
        return SpectralField(self.grid, self.coeffs - other.coeffs)

    def scaled(self, factor: float) -> "SpectralField":
        return SpectralField(self.grid, factor * self.coeffs)


def _same_grid(a: SpectralField, b: SpectralField) -> None:
    if a.grid != b.grid:
        raise ValueError("fields live on different grids")


def hermitian_partner(coeffs: np.ndarray) -> np.ndarray:
    """Array whose [j, m] entry is coeffs[-j, -m] (indices mod N)."""
    return np.roll(np.flip(coeffs, axis=(0, 1)), shift=(1, 1), axis=(0, 1))


def enforce_hermitian(coeffs: np.ndarray) -> np.ndarray:
    return 0.5 * (coeffs + np.conj(hermitian_partner(coeffs)))


def hermitian_error(coeffs: np.ndarray) -> float:
    """max |c(k, eta) - conj(c(-k, -eta))| relative to max |c| (0 for a zero field)."""
    scale = float(np.max(np.abs(coeffs)))
    if scale == 0.0:
        return 0.0
    return float(np.max(np.abs(coeffs - np.conj(hermitian_partner(coeffs))))) / scale


def to_physical(field: SpectralField) -> np.ndarray:
    """Real samples of ``field`` on the grid's physical points."""
    nx, ny = field.grid.shape
    return np.real(np.fft.ifft2(field.coeffs) * (nx * ny))


def to_spectral(samples, grid: FrequencyGrid) -> SpectralField:
    """Forward transform (carries 1/(nx*ny)); output is Hermitian-symmetrized."""
    samples = np.asarray(samples)
    if samples.shape != grid.shape:
        raise ValueError(f"sample shape {samples.shape} does not match grid {grid.shape}")
    coeffs = np.fft.fft2(np.real(samples)) / (grid.nx * grid.ny)
    return SpectralField(grid, enforce_hermitian(coeffs))


@dataclass(frozen=True)
class PhysParams:
    """Viscosity/diffusivity and the parameters of the weighted stability estimate.

    ``nu = 0`` (and ``mu = 0``) is accepted as the inviscid limit used by the
    damping checks; positive values must not exceed 1.
    """

    nu: float = 1e-3
    mu: float | None = None
    delta: float = 0.2
    epsilon: float = 0.45
    kappa: float = 0.1
    c: float = 0.01
    c0: float = 0.01

    def __post_init__(self):
        if self.mu is None:
            object.__setattr__(self, "mu", self.nu)
        for name in ("nu", "mu"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if not (0.0 < self.delta < 1.0):
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")
        if not ((1.0 - self.delta) / 2.0 < self.epsilon < 0.5):
            raise ValueError(
                f"epsilon must lie in ((1-delta)/2, 1/2) = ({(1 - self.delta) / 2}, 0.5), got {self.epsilon}"
            )
        kmax = self.kappa_max
        if not (0.0 < self.kappa < kmax):
            raise ValueError(f"kappa must lie in (0, {kmax:.6g}), got {self.kappa}")
        if not (0.0 < self.c0 < 1.0 / (16.0 * np.pi)):
            raise ValueError(f"c0 must lie in (0, 1/(16 pi)), got {self.c0}")
        if not (0.0 < self.c < 1.0):
            raise ValueError(f"c must lie in (0, 1), got {self.c}")

    @property
    def kappa_max(self) -> float:
        return 2.0 * self.epsilon / (1.0 - self.delta) - 1.0

    @property
    def alpha(self) -> float:
        """Exponent of the auxiliary low-frequency integral in the M3 kernel bound."""
        return (2.0 * self.epsilon - (1.0 - self.delta) * (1.0 + self.kappa)) / self.delta

    @property
    def coupled(self) -> bool:
        return self.nu == self.mu

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("nu", "mu", "delta", "epsilon", "kappa", "c", "c0")}


# --- flat binary snapshots -------------------------------------------------

_HEADER = struct.Struct("<4d")


def save_field(path, field: SpectralField, metadata: dict | None = None) -> Path:
    """Write ``field`` as header (nx, ny, lx, ly as float64) + row-major (re, im) pairs.

    A JSON sidecar with the same stem and ``.json`` suffix carries metadata.
    """
    path = Path(path)
    g = field.grid
    payload = np.ascontiguousarray(field.coeffs, dtype="<c16")
    try:
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(g.nx, g.ny, g.lx, g.ly))
            fh.write(payload.tobytes(order="C"))
        side = {"grid": g.to_dict(), "layout": "header<4d nx,ny,lx,ly> + <c16 row-major (k, eta)>"}
        side.update(metadata or {})
        path.with_suffix(".json").write_text(json.dumps(side, indent=2, sort_keys=True))
    except OSError as exc:
        raise OSError(f"failed writing spectral snapshot {path}: {exc}") from exc
    return path


def load_field(path) -> tuple[SpectralField, dict]:
    path = Path(path)
    raw = path.read_bytes()
    nx, ny, lx, ly = _HEADER.unpack_from(raw, 0)
    grid = FrequencyGrid(int(nx), int(ny), lx, ly)
    coeffs = np.frombuffer(raw, dtype="<c16", offset=_HEADER.size)
    if coeffs.size != grid.nx * grid.ny:
        raise ValueError(f"{path}: payload size {coeffs.size} != {grid.nx}x{grid.ny}")
    side = path.with_suffix(".json")
    meta = json.loads(side.read_text()) if side.exists() else {}
    return SpectralField(grid, coeffs.reshape(grid.shape)), meta

