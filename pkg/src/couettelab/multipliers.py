"""
Ghost-weight Fourier multipliers M1, M2, M3, their sum M and the dissipation symbol Upsilon.

M3 and Upsilon are line integrals over an auxiliary frequency l against the
kernel <1/l>^(-1/3-kappa) |l|^(-4/3) = |l|^(kappa-1) (1+l^2)^(-(1/3+kappa)/2).
The real line is split into |l| <= 1 and |l| >= 1 on each side of zero. The
inner panels use l = s^(1/kappa), which maps the |l|^(kappa-1) endpoint
singularity to a bounded integrand; the outer panels use l = v^(-3), which
maps the |l|^(-4/3) tail onto a bounded integrand on (0, 1]. Both integrands
are compiled with numba and handed to QUADPACK as low-level callables.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np
from numba import types
from numba.types import CPointer, float64, intc
from scipy import LowLevelCallable
from scipy.integrate import quad

from .freq import PhysParams

__all__ = [
    "MultiplierContext",
    "eval_m1",
    "eval_m2",
    "eval_m3",
    "eval_upsilon",
    "eval_m_total",
    "c3_bound",
    "c_kappa",
    "m1_transport",
    "m2_transport",
    "m3_transport_fd",
    "CoercivityReport",
    "check_coercivity",
    "MultiplierQuadratureError",
    "c_kappa_rigorous",
    "default_multiplier_grid",
    "MultiplierReport",
    "verify_multipliers",
]


class MultiplierQuadratureError(RuntimeError):
    pass


@dataclass(frozen=True)
class MultiplierContext:
    nu: float
    kappa: float
    quadrature_tol: float = 1e-8

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")
        if not self.nu > 0:
            raise ValueError("nu must be positive for the multipliers")
        if not 0 < self.quadrature_tol < 1:
            raise ValueError("quadrature_tol must lie in (0, 1)")

    @classmethod
    def from_params(cls, params: PhysParams, quadrature_tol: float = 1e-8) -> "MultiplierContext":
        return cls(params.nu, params.kappa, quadrature_tol)


# --- M1, M2 -----------------------------------------------------------------


def eval_m1(ctx: MultiplierContext, k, xi):
    """arctan(nu^(1/3) |k|^(-1/3) sgn(k) xi) + pi/2; pi/2 on the k = 0 column."""
    k = np.asarray(k, dtype=float)
    xi = np.asarray(xi, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        arg = ctx.nu ** (1 / 3) * np.abs(k) ** (-1 / 3) * np.sign(k) * xi
    out = np.where(k == 0, 0.5 * np.pi, np.arctan(np.where(k == 0, 0.0, arg)) + 0.5 * np.pi)
    return float(out) if out.ndim == 0 else out


def eval_m2(ctx: MultiplierContext, k, xi):
    """arctan(xi / k) + pi/2; pi/2 on the k = 0 column."""
    k = np.asarray(k, dtype=float)
    xi = np.asarray(xi, dtype=float)
    safe_k = np.where(k == 0, 1.0, k)
    out = np.where(k == 0, 0.5 * np.pi, np.arctan(xi / safe_k) + 0.5 * np.pi)
    return float(out) if out.ndim == 0 else out


def m1_transport(ctx: MultiplierContext, k, xi):
    """Closed form of k d_xi M1 = nu^(1/3)|k|^(2/3) / (1 + nu^(2/3)|k|^(-2/3) xi^2)."""
    k = np.abs(np.asarray(k, dtype=float))
    xi = np.asarray(xi, dtype=float)
    return ctx.nu ** (1 / 3) * k ** (2 / 3) / (1.0 + ctx.nu ** (2 / 3) * k ** (-2 / 3) * xi * xi)


def m2_transport(k, xi):
    """Closed form of k d_xi M2 = k^2 / (k^2 + xi^2)."""
    k = np.asarray(k, dtype=float)
    xi = np.asarray(xi, dtype=float)
    return k * k / (k * k + xi * xi)


# --- compiled integrands ----------------------------------------------------
# xx[0]: integration variable; xx[1]: panel (0 inner, 1 outer); xx[2]: side (+1/-1);
# xx[3]: t; xx[4]: k; xx[5]: xi; xx[6]: kappa; xx[7]: which (0 kernel only, 1 M3, 2 Upsilon)

_SIG = types.double(intc, CPointer(float64))


@numba.njit(cache=True)
def _panel_point(u, panel, side, kappa):
    """Return (l, weight) so that kernel(l) dl = weight du on the given panel."""
    q = 0.5 * (1.0 / 3.0 + kappa)
    if panel == 0.0:
        s_pow = u ** (1.0 / kappa)
        l = side * s_pow
        w = (1.0 / kappa) * (1.0 + s_pow * s_pow) ** (-q)
    else:
        # keep |l| <= 1e300 so the symbols below stay finite near u = 0
        l = side * max(u, 1e-100) ** (-3.0)
        w = 3.0 * (1.0 + u**6) ** (-q)
    return l, w


@numba.njit(cache=True)
def _symbol(l, t, k, xi, which):
    if which == 0.0:
        return 1.0
    d = 1.0 + abs(k - l) + abs(l)
    n = xi + t * (k - l)
    if which == 1.0:
        sg = 1.0 if l > 0 else (-1.0 if l < 0 else 0.0)
        return sg * math.atan(n / d) + 0.5 * math.pi
    r = n / d
    return (abs(l) / d) / (1.0 + r * r)


@numba.cfunc(_SIG, cache=True)
def _integrand(n, xx):
    u = xx[0]
    l, w = _panel_point(u, xx[1], xx[2], xx[6])
    return w * _symbol(l, xx[3], xx[4], xx[5], xx[7])


_LLC = LowLevelCallable(_integrand.ctypes)


def _panel_breaks(points, side, panel, kappa):
    out = []
    for p in points:
        if p == 0 or np.sign(p) != side or not math.isfinite(p):
            continue
        a = abs(p)
        if panel == 0 and a < 1:
            out.append(a**kappa)
        elif panel == 1 and a > 1:
            out.append(a ** (-1 / 3))
    merged: list[float] = []
    for u in sorted(u for u in out if 1e-12 < u < 1 - 1e-12):
        # coincident breakpoints would leave a sliver interval QUADPACK cannot resolve
        if not merged or u - merged[-1] > 1e-8:
            merged.append(u)
    return merged


def _line_integral(which: int, t: float, k: float, xi: float, kappa: float, tol: float) -> float:
    points = [k]
    if which != 0 and t > 0:
        points.append(k + xi / t)
    total = 0.0
    for side in (1.0, -1.0):
        for panel in (0, 1):
            brk = _panel_breaks(points, side, panel, kappa)
            args = (float(panel), side, t, k, xi, kappa, float(which))
            val, err, info = _quad(args, brk, tol)
            total += val
            if not math.isfinite(val):
                raise MultiplierQuadratureError(f"non-finite panel value at t={t}, k={k}, xi={xi}")
    return total


def _quad(args, brk, tol):
    kw = dict(epsabs=1e-15, epsrel=tol, limit=500)
    if brk:
        kw["points"] = brk
    res = quad(_LLC, 0.0, 1.0, args=args, full_output=1, **kw)
    val, err = res[0], res[1]
    if len(res) > 3 and err > 10 * max(tol * abs(val), 1e-14):
        raise MultiplierQuadratureError(f"quadrature failed ({res[3]!r}); error estimate {err:.3e} for args {args}")
    return val, err, res[2]


def _vectorize(fn, *arrays):
    arrs = np.broadcast_arrays(*[np.asarray(a, dtype=float) for a in arrays])
    out = np.empty(arrs[0].shape, dtype=float)
    for idx in np.ndindex(out.shape):
        out[idx] = fn(*(float(a[idx]) for a in arrs))
    return float(out) if out.ndim == 0 else out


def eval_m3(ctx: MultiplierContext, t, k, xi):
    """Echo-absorbing multiplier M3(t, k, xi) by panelled adaptive quadrature."""
    if np.any(np.asarray(t) < 0):
        raise ValueError("eval_m3 requires t >= 0")
    return _vectorize(lambda a, b, c: _line_integral(1, a, b, c, ctx.kappa, ctx.quadrature_tol), t, k, xi)


def eval_upsilon(ctx: MultiplierContext, t, k, xi):
    """Upsilon = (-d_t + k d_xi) M3, integrated from its explicit formula."""
    if np.any(np.asarray(t) < 0):
        raise ValueError("eval_upsilon requires t >= 0")
    return _vectorize(lambda a, b, c: _line_integral(2, a, b, c, ctx.kappa, ctx.quadrature_tol), t, k, xi)


_C3_CACHE: dict[tuple[float, float], float] = {}


def c3_bound(kappa: float, tol: float = 1e-12) -> float:
    """C3(kappa) = pi * int_0^inf <1/l>^(-1/3-kappa) l^(-4/3) dl, by quadrature."""
    key = (float(kappa), float(tol))
    if key not in _C3_CACHE:
        # the kernel-only integral over the whole line is twice the half-line one
        _C3_CACHE[key] = 0.5 * math.pi * _line_integral(0, 0.0, 0.0, 0.0, float(kappa), tol)
    return _C3_CACHE[key]


def c_kappa(kappa: float) -> float:
    """Computable upper bound 1 + 2 pi + C3(kappa) reported for M."""
    return 1.0 + 2.0 * math.pi + c3_bound(kappa)


def eval_m_total(ctx: MultiplierContext, t, k, xi):
    """M = M1 + M2 + M3 + 1."""
    return eval_m1(ctx, k, xi) + eval_m2(ctx, k, xi) + eval_m3(ctx, t, k, xi) + 1.0


# --- cross-validation by finite differences ----------------------------------


def _m3_shifted(ctx, t, k, xi, s, tol):
    """M3 at (t - s, k, xi + k s); the formula is smooth in t, so t - s < 0 is allowed here."""
    return _line_integral(1, t - s, k, xi + k * s, ctx.kappa, tol)


def m3_transport_fd(ctx: MultiplierContext, t: float, k: float, xi: float, h: float | None = None, tol: float = 1e-13) -> float:
    """(-d_t + k d_xi) M3 by Richardson-extrapolated central differences along the characteristic.

    The derivative is d/ds M3(t - s, k, xi + k s) at s = 0.
    """
    if h is None:
        h = 1e-3 * (1.0 + abs(t))

    def central(step):
        return (_m3_shifted(ctx, t, k, xi, step, tol) - _m3_shifted(ctx, t, k, xi, -step, tol)) / (2 * step)

    d1, d2, d3 = central(h), central(h / 2), central(h / 4)
    r1 = (4 * d2 - d1) / 3
    r2 = (4 * d3 - d2) / 3
    return (16 * r2 - r1) / 15


# --- pointwise coercivity certification -----------------------------------


@dataclass
class CoercivityReport:
    n_points: int
    min_m1_slack: float
    max_m2_identity_err: float
    min_upsilon: float
    argmin_m1_slack: tuple


def check_coercivity(ctx: MultiplierContext, t, k, xi, upsilon=None, fd_step: float = 1e-4) -> CoercivityReport:
    """Pointwise transport inequalities on a sample of (t, k != 0, xi).

    * k d_xi M1 >= nu^(1/3)|k|^(2/3)/4 - nu xi^2 / 2   (slack reported)
    * k d_xi M2 == k^2/(k^2+xi^2)                     (max abs error of a
      Richardson central difference of eval_m2 against the closed form)
    * Upsilon > 0                                     (min reported)

    ``upsilon`` may be passed when already evaluated on the same sample.
    """
    t, k, xi = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (t, k, xi)))
    keep = k != 0
    t, k, xi = t[keep], k[keep], xi[keep]

    lhs = m1_transport(ctx, k, xi)
    rhs = 0.25 * ctx.nu ** (1 / 3) * np.abs(k) ** (2 / 3) - 0.5 * ctx.nu * xi * xi
    slack = lhs - rhs
    i_min = int(np.argmin(slack)) if slack.size else 0

    h = fd_step * (1.0 + np.abs(xi))

    def cd(step):
        return k * (eval_m2(ctx, k, xi + step) - eval_m2(ctx, k, xi - step)) / (2 * step)

    fd = (4 * cd(h / 2) - cd(h)) / 3
    m2_err = np.abs(fd - m2_transport(k, xi))

    if upsilon is None:
        upsilon = eval_upsilon(ctx, t, k, xi)
    else:
        upsilon = np.asarray(upsilon, dtype=float).ravel()[keep.ravel()] if np.size(upsilon) == keep.size else np.asarray(upsilon)
    return CoercivityReport(
        n_points=int(k.size),
        min_m1_slack=float(slack.min()) if slack.size else math.inf,
        max_m2_identity_err=float(m2_err.max()) if m2_err.size else 0.0,
        min_upsilon=float(np.min(upsilon)) if np.size(upsilon) else math.inf,
        argmin_m1_slack=(float(t[i_min]), float(k[i_min]), float(xi[i_min])) if slack.size else (),
    )


def c_kappa_rigorous(kappa: float) -> float:
    """1 + 2 pi + 2 C3(kappa): a bound that M provably respects.

    M3 alone can exceed C3 (at t = 0 the arctan pairing of l and -l does not
    cancel when xi > 0), so the reported bound 1 + 2 pi + C3 is not always met;
    bounding the arctan bracket by pi on each half-line gives 2 C3.
    """
    return 1.0 + 2.0 * math.pi + 2.0 * c3_bound(kappa)


# --- grid certification ------------------------------------------------------

T_RANGE = (0.0, 64.0)
FREQ_RANGE = (2.0**-6, 2.0**6)


def _signed_log_axis(n: int) -> np.ndarray:
    half = (n - 1) // 2
    p = np.exp2(np.linspace(math.log2(FREQ_RANGE[0]), math.log2(FREQ_RANGE[1]), half))
    return np.concatenate([-p[::-1], [0.0], p])


def default_multiplier_grid(points: int = 33):
    """(t, k, xi) open mesh: t linear on [0, 64]; k, xi signed-log on 2^-6..2^6 plus 0."""
    if points < 5 or points % 2 == 0:
        raise ValueError("points must be odd and >= 5")
    t = np.linspace(*T_RANGE, points)
    k = _signed_log_axis(points)
    return np.meshgrid(t, k, k, indexing="ij", sparse=True)


@dataclass
class MultiplierReport:
    nu: float
    kappa: float
    n_points: int
    c_kappa: float
    c_kappa_rigorous: float
    min_M: float
    max_M: float
    argmax_M: tuple
    min_upsilon: float
    min_m1_slack: float
    max_m2_identity_err: float
    max_m3_upsilon_err: float
    n_fd_points: int

    @property
    def within_bounds(self) -> bool:
        return self.min_M >= 1.0 and self.max_M <= self.c_kappa

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["argmax_M"] = list(self.argmax_M)
        d["within_bounds"] = self.within_bounds
        return d


def verify_multipliers(ctx: MultiplierContext, points: int = 33, fd_points: int = 100, seed: int = 0) -> MultiplierReport:
    """Evaluate the bound, positivity and transport identities on the default grid.

    The finite-difference check of (-d_t + k d_xi) M3 against Upsilon uses
    ``fd_points`` seeded random points (t in [0, 64], |k|, |xi| log-uniform in
    2^-6..2^6 with random signs).
    """
    t, k, xi = (np.broadcast_to(a, (points,) * 3) for a in default_multiplier_grid(points))
    m3 = eval_m3(ctx, t, k, xi)
    ups = eval_upsilon(ctx, t, k, xi)
    m = eval_m1(ctx, k, xi) + eval_m2(ctx, k, xi) + m3 + 1.0
    i_max = np.unravel_index(int(np.argmax(m)), m.shape)
    coerc = check_coercivity(ctx, t, k, xi, upsilon=ups[k != 0])

    rng = np.random.default_rng(seed)
    lo, hi = math.log2(FREQ_RANGE[0]), math.log2(FREQ_RANGE[1])
    ts = rng.uniform(*T_RANGE, fd_points)
    ks = rng.choice([-1.0, 1.0], fd_points) * np.exp2(rng.uniform(lo, hi, fd_points))
    xs = rng.choice([-1.0, 1.0], fd_points) * np.exp2(rng.uniform(lo, hi, fd_points))
    fd_err = 0.0
    for a, b, c in zip(ts, ks, xs):
        exact = _line_integral(2, a, b, c, ctx.kappa, 1e-13)
        fd_err = max(fd_err, abs(m3_transport_fd(ctx, a, b, c) - exact) / abs(exact))

    return MultiplierReport(
        nu=ctx.nu,
        kappa=ctx.kappa,
        n_points=int(m.size),
        c_kappa=c_kappa(ctx.kappa),
        c_kappa_rigorous=c_kappa_rigorous(ctx.kappa),
        min_M=float(m.min()),
        max_M=float(m.max()),
        argmax_M=(float(t[i_max]), float(k[i_max]), float(xi[i_max])),
        min_upsilon=float(ups.min()),
        min_m1_slack=coerc.min_m1_slack,
        max_m2_identity_err=coerc.max_m2_identity_err,
        max_m3_upsilon_err=float(fd_err),
        n_fd_points=fd_points,
    )
