"""
Grid-scan certifiers for the scalar frequency inequalities behind the energy estimates.

Each inequality "A <~ B" is turned into a ratio A/B that is evaluated on a
sample set; the empirical supremum is the implicit constant. ``scan`` runs a
checker on a tensor grid, then polishes the best grid points with a bounded
Nelder-Mead search so that the reported supremum does not depend on where the
grid nodes happen to fall.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numba
import numpy as np
from numba import types
from numba.types import CPointer, float64, intc
from scipy import LowLevelCallable
from scipy.integrate import quad
from scipy.optimize import minimize

from .freq import PhysParams, japanese_bracket
from .multipliers import MultiplierContext, eval_upsilon

__all__ = [
    "ConfigError",
    "Axis",
    "ScanGrid",
    "SupResult",
    "ratio_inviscid_damping",
    "ratio_frequency_growth",
    "ratio_low_freq_interpolation",
    "ratio_commutator",
    "ratio_riesz",
    "check_pointwise_inviscid_damping",
    "check_frequency_growth",
    "check_low_freq_interpolation",
    "check_commutator",
    "check_riesz_bound",
    "check_m3_kernel_bound",
    "m3_kernel_integral",
    "m3_kernel_integral_nested",
    "CHECKERS",
    "default_grid",
    "scan",
    "verify_estimates",
]

ZERO_TOL = 1e-12
FREQ_RANGE = (2.0**-6, 2.0**6)
T_RANGE = (0.0, 64.0)
POINTS_PER_AXIS = 33


class ConfigError(ValueError):
    """Inadmissible analysis parameters."""


def _safe_ratio(num, den):
    """num/den with the removable-singularity convention 0/0 := 0 (both below ZERO_TOL)."""
    num = np.asarray(num, dtype=float)
    den = np.asarray(den, dtype=float)
    both_zero = (np.abs(num) < ZERO_TOL) & (np.abs(den) < ZERO_TOL)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(both_zero, 0.0, num / np.where(both_zero, 1.0, den))
    return r


# --- ratio kernels ------------------------------------------------------------


def ratio_inviscid_damping(l, eta, t):
    """[1/(l^2+eta^2)] / [<l, eta+lt>^2 / (l^4 <t>^2)]."""
    l, eta, t = (np.asarray(a, dtype=float) for a in (l, eta, t))
    return _safe_ratio(l**4 * japanese_bracket(t) ** 2, (l * l + eta * eta) * japanese_bracket(l, eta + l * t) ** 2)


def ratio_frequency_growth(a, b, t):
    """(|a|+|b|) / (<t> <a, b + a t>) with a = k-l, b = xi-eta."""
    a, b, t = (np.asarray(v, dtype=float) for v in (a, b, t))
    return (np.abs(a) + np.abs(b)) / (japanese_bracket(t) * japanese_bracket(a, b + a * t))


def ratio_low_freq_interpolation(l, eta, t, delta):
    """(|l|+|eta+lt|) / (<l, eta+lt>^(1-delta) <t>^delta (|l|+|eta|)^delta)."""
    l, eta, t = (np.asarray(v, dtype=float) for v in (l, eta, t))
    s = eta + l * t
    num = np.abs(l) + np.abs(s)
    den = japanese_bracket(l, s) ** (1 - delta) * japanese_bracket(t) ** delta * (np.abs(l) + np.abs(eta)) ** delta
    return _safe_ratio(num, den)


def ratio_commutator(k, xi, l, eta, t, order: int = 3):
    """|<k, xi+kt>^n - <k-l, xi-eta+(k-l)t>^n| / ((|l|+|eta+lt|)(<l, eta+lt>^2 + <k-l, ...>^2))."""
    k, xi, l, eta, t = (np.asarray(v, dtype=float) for v in (k, xi, l, eta, t))
    x1, x2 = l, eta + l * t
    y1, y2 = k - l, xi - eta + (k - l) * t
    bx = japanese_bracket(x1, x2)
    by = japanese_bracket(y1, y2)
    num = np.abs(japanese_bracket(x1 + y1, x2 + y2) ** order - by**order)
    den = (np.abs(x1) + np.abs(x2)) * (bx * bx + by * by)
    return _safe_ratio(num, den)


def ratio_riesz(l, eta):
    """|l|(|l|+|eta|)/(l^2+eta^2)."""
    l, eta = (np.asarray(v, dtype=float) for v in (l, eta))
    return _safe_ratio(np.abs(l) * (np.abs(l) + np.abs(eta)), l * l + eta * eta)


# --- M3 kernel bound ----------------------------------------------------------

_SIG = types.double(intc, CPointer(float64))


@numba.cfunc(_SIG, cache=True)
def _poisson_outer(n, xx):
    # xx: u, side, t, k, xi, eps, panel ; l = side*u^(1/(2 eps)) on panel 0, side/u on panel 1
    u, side, t, k, xi, eps, panel = xx[0], xx[1], xx[2], xx[3], xx[4], xx[5], xx[6]
    if panel == 0.0:
        a = u ** (1.0 / (2.0 * eps))
        jac_w = 1.0 / (2.0 * eps)  # |l|^(2 eps - 1) dl = du/(2 eps)
    else:
        a = 1.0 / u
        jac_w = a ** (2.0 * eps - 1.0) * a * a  # dl = du/u^2
    l = side * a
    big_a = math.sqrt(1.0 + (k - l) ** 2)
    b = xi + (k - l) * t
    s = a + big_a
    inner = math.pi * s / (big_a * (s * s + b * b))
    return jac_w * (1.0 + a * a) ** (-eps) * inner


_OUTER = LowLevelCallable(_poisson_outer.ctypes)


def _merge_breaks(brk):
    out: list[float] = []
    for u in sorted(u for u in brk if 1e-12 < u < 1 - 1e-12):
        if not out or u - out[-1] > 1e-8:
            out.append(u)
    return out


def m3_kernel_integral(t: float, k: float, xi: float, epsilon: float, tol: float = 1e-10) -> float:
    """int int <1/l>^(-2 eps) / ((l^2+eta^2) <k-l, xi-eta+(k-l)t>^2) deta dl.

    The eta-integral of two Cauchy kernels is done in closed form
    (pi (|l|+A) / (|l| A ((|l|+A)^2 + B^2)), A = <k-l>, B = xi+(k-l)t); the
    remaining l-integral is adaptive quadrature with the |l|^(2 eps - 1)
    singularity at l = 0 removed by substitution.
    """
    total = 0.0
    for side in (1.0, -1.0):
        brk_in, brk_out = [], []
        for p in (k, k + xi / t if t > 0 else k):
            if p * side > 0:
                a = abs(p)
                if a < 1:
                    brk_in.append(a ** (2 * epsilon))
                elif a > 1:
                    brk_out.append(1.0 / a)
        for panel, brk in ((0.0, brk_in), (1.0, brk_out)):
            kw = dict(epsabs=1e-15, epsrel=tol, limit=500)
            brk = _merge_breaks(brk)
            if brk:
                kw["points"] = brk
            total += quad(_OUTER, 0.0, 1.0, args=(side, t, k, xi, epsilon, panel), **kw)[0]
    return total


def m3_kernel_integral_nested(t: float, k: float, xi: float, epsilon: float, l_max: float = 1e4, eta_max: float = 1e6, tol: float = 1e-9) -> float:
    """Same double integral by nested adaptive quadrature on |l| <= l_max, |eta| <= eta_max."""

    def inner(l):
        # eta = |l| tan(theta) flattens the 1/(l^2+eta^2) spike; the truncation |eta| <= eta_max maps to |theta| <= theta_max
        a = abs(l)
        a2 = 1.0 + (k - l) ** 2
        b = xi + (k - l) * t
        th_max = math.atan(eta_max / a)
        th_b = math.atan(b / a)

        def g(th):
            eta = a * math.tan(th)
            return 1.0 / (a * (a2 + (b - eta) ** 2))

        pts = [th_b] if -th_max < th_b < th_max else None
        # full_output silences QUADPACK's roundoff notice; the value is cross-checked against the closed form in tests
        return quad(g, -th_max, th_max, points=pts, epsabs=0.0, epsrel=tol, limit=500, full_output=1)[0]

    def outer_panel(side, lo, hi):
        # l = side * u^(1/(2 eps)) removes the |l|^(2 eps - 1) endpoint singularity at l = 0
        p = 1.0 / (2.0 * epsilon)

        def f(u):
            a = u**p
            return p * u ** (p - 1) * a ** (2 * epsilon) * (1 + a * a) ** (-epsilon) * inner(side * a)

        return quad(f, lo ** (2 * epsilon), hi ** (2 * epsilon), epsabs=0.0, epsrel=tol, limit=500)[0]

    total = 0.0
    for side in (1.0, -1.0):
        cuts = [0.0, 1.0]
        for p in (k, k + xi / t if t > 0 else k):
            if p * side > 0 and abs(p) < l_max:
                cuts.append(abs(p))
        cuts = sorted(set(cuts + [l_max]))
        for lo, hi in zip(cuts[:-1], cuts[1:]):
            total += outer_panel(side, lo, hi)
    return total


def _check_admissible(delta, epsilon, kappa):
    if not 0 < delta < 1:
        raise ConfigError(f"delta must lie in (0, 1), got {delta}")
    if not (1 - delta) / 2 < epsilon < 0.5:
        raise ConfigError(f"epsilon must lie in ((1-delta)/2, 1/2), got {epsilon}")
    alpha = (2 * epsilon - (1 - delta) * (1 + kappa)) / delta
    if not (kappa > 0 and alpha > 0):
        raise ConfigError(f"inadmissible kappa={kappa}: need 0 < kappa < {2 * epsilon / (1 - delta) - 1:.6g} (alpha={alpha:.3g})")
    return alpha


def ratio_m3_kernel(t, k, xi, kappa, delta, epsilon, tol: float = 1e-10, nested: bool = False):
    """Double-integral kernel divided by Upsilon(t, k, xi)^(1-delta)."""
    _check_admissible(delta, epsilon, kappa)
    ctx = MultiplierContext(1.0, kappa, tol)
    t, k, xi = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (t, k, xi)))
    num = np.empty(t.shape)
    fn = m3_kernel_integral_nested if nested else m3_kernel_integral
    for idx in np.ndindex(t.shape):
        num[idx] = fn(float(t[idx]), float(k[idx]), float(xi[idx]), epsilon)
    ups = np.asarray(eval_upsilon(ctx, t, k, xi))
    return num / ups ** (1 - delta)


# --- results, grids, scans ---------------------------------------------------


@dataclass
class SupResult:
    name: str
    sup_ratio: float
    argmax: dict
    grid_spec: dict
    grid_sup: float = math.nan
    n_points: int = 0

    def to_dict(self) -> dict:
        return {
            "inequality_name": self.name,
            "sup_ratio": self.sup_ratio,
            "grid_sup": self.grid_sup,
            "argmax": self.argmax,
            "grid_spec": self.grid_spec,
            "n_points": self.n_points,
        }


def _sup(name, ratio, arrays: dict) -> SupResult:
    ratio = np.asarray(ratio, dtype=float)
    if ratio.size == 0:
        return SupResult(name, 0.0, {}, {})
    flat = np.nan_to_num(ratio.ravel(), nan=-np.inf)
    i = int(np.argmax(flat))
    arg = {key: float(np.broadcast_to(v, ratio.shape).ravel()[i]) for key, v in arrays.items()}
    return SupResult(name, float(flat[i]), arg, {}, grid_sup=float(flat[i]), n_points=int(ratio.size))


def check_pointwise_inviscid_damping(l, eta, t) -> SupResult:
    l = np.asarray(l, dtype=float)
    if np.any(l == 0):
        raise ValueError("inviscid damping check requires l != 0")
    return _sup("inviscid_damping", ratio_inviscid_damping(l, eta, t), {"l": l, "eta": eta, "t": t})


def check_frequency_growth(a, b, t) -> SupResult:
    return _sup("frequency_growth", ratio_frequency_growth(a, b, t), {"a": a, "b": b, "t": t})


def check_low_freq_interpolation(l, eta, t, delta: float) -> SupResult:
    l, eta, t = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (l, eta, t)))
    keep = (l * l + eta * eta < 1.0) & ((l != 0) | (eta != 0))
    r = ratio_low_freq_interpolation(l[keep], eta[keep], t[keep], delta)
    return _sup("low_freq_interpolation", r, {"l": l[keep], "eta": eta[keep], "t": t[keep]})


def check_commutator(k, xi, l, eta, t, weight_order: int = 3) -> SupResult:
    r = ratio_commutator(k, xi, l, eta, t, weight_order)
    return _sup("commutator", r, {"k": k, "xi": xi, "l": l, "eta": eta, "t": t})


def check_riesz_bound(l, eta) -> SupResult:
    l = np.asarray(l, dtype=float)
    if np.any(l == 0):
        raise ValueError("Riesz check requires l != 0")
    return _sup("riesz", ratio_riesz(l, eta), {"l": l, "eta": eta})


def check_m3_kernel_bound(t, k, xi, kappa: float, delta: float, epsilon: float, nested: bool = False) -> SupResult:
    r = ratio_m3_kernel(t, k, xi, kappa, delta, epsilon, nested=nested)
    if not np.all(np.isfinite(r)):
        raise ArithmeticError("M3 kernel ratio is not finite on the sample")
    return _sup("m3_kernel", r, {"t": t, "k": k, "xi": xi})


@dataclass(frozen=True)
class Axis:
    """One scan axis: 'log' (positive, log-spaced), 'slog' (signed log with 0), 'lin'."""

    name: str
    kind: str
    lo: float
    hi: float
    n: int

    def values(self) -> np.ndarray:
        if self.kind == "lin":
            return np.linspace(self.lo, self.hi, self.n)
        if self.kind == "log":
            return np.exp2(np.linspace(np.log2(self.lo), np.log2(self.hi), self.n))
        if self.kind == "slog":
            half = (self.n - 1) // 2
            p = np.exp2(np.linspace(np.log2(self.lo), np.log2(self.hi), half))
            return np.concatenate([-p[::-1], [0.0], p])
        raise ValueError(f"unknown axis kind {self.kind!r}")

    def refined(self) -> "Axis":
        if self.kind == "slog":
            half = (self.n - 1) // 2
            return Axis(self.name, self.kind, self.lo, self.hi, 2 * (2 * half - 1) + 1)
        return Axis(self.name, self.kind, self.lo, self.hi, 2 * self.n - 1)

    # polishing works in a coordinate where the axis is uniform
    def to_u(self, x):
        if self.kind == "lin":
            return x
        if self.kind == "log":
            return math.log2(x)
        return math.copysign(math.log2(abs(x)) - math.log2(self.lo) + 1.0, x) if x != 0 else 0.0

    def from_u(self, u):
        if self.kind == "lin":
            return u
        if self.kind == "log":
            return 2.0**u
        if abs(u) < 1.0:
            return 0.0 if u == 0 else math.copysign(self.lo * abs(u), u)
        return math.copysign(2.0 ** (abs(u) - 1.0 + math.log2(self.lo)), u)

    def u_bounds(self):
        if self.kind == "slog":
            b = math.log2(self.hi) - math.log2(self.lo) + 1.0
            return (-b, b)
        return (self.to_u(self.lo), self.to_u(self.hi))


@dataclass
class ScanGrid:
    axes: list[Axis]
    fixed: dict = field(default_factory=dict)

    def refined(self) -> "ScanGrid":
        return ScanGrid([a.refined() for a in self.axes], dict(self.fixed))

    def mesh(self) -> dict:
        vals = np.meshgrid(*[a.values() for a in self.axes], indexing="ij", sparse=True)
        return {a.name: v for a, v in zip(self.axes, vals)}

    def spec(self) -> dict:
        return {
            "axes": [{"name": a.name, "kind": a.kind, "lo": a.lo, "hi": a.hi, "n": a.n} for a in self.axes],
            "fixed": self.fixed,
        }


def _freq(name, signed=False, lo=FREQ_RANGE[0], hi=FREQ_RANGE[1], n=POINTS_PER_AXIS):
    return Axis(name, "slog" if signed else "log", lo, hi, n)


def _time(n=POINTS_PER_AXIS):
    return Axis("t", "lin", T_RANGE[0], T_RANGE[1], n)


@dataclass(frozen=True)
class Checker:
    name: str
    ratio: Callable
    grid: Callable[[], ScanGrid]
    domain: Callable | None = None


def _ratio_commutator_reduced(x1, x2, y1, y2):
    # t = 0 slice; the ratio depends on (l, eta+lt, k-l, xi-eta+(k-l)t) only
    return ratio_commutator(x1 + y1, x2 + y2, x1, x2, 0.0)


def _lfi_domain(l, eta, t):
    return (l * l + eta * eta < 1.0) & ((l != 0) | (eta != 0))


def _checkers(params: PhysParams) -> dict[str, Checker]:
    delta = params.delta
    return {
        "inviscid_damping": Checker(
            "inviscid_damping",
            lambda l, eta, t: ratio_inviscid_damping(l, eta, t),
            lambda: ScanGrid([_freq("l"), _freq("eta", signed=True), _time()]),
        ),
        "frequency_growth": Checker(
            "frequency_growth",
            lambda a, b, t: ratio_frequency_growth(a, b, t),
            lambda: ScanGrid([_freq("a"), _freq("b", signed=True), _time()]),
        ),
        "low_freq_interpolation": Checker(
            "low_freq_interpolation",
            lambda l, eta, t: ratio_low_freq_interpolation(l, eta, t, delta),
            lambda: ScanGrid([_freq("l", hi=1.0), _freq("eta", signed=True, hi=1.0), _time()], {"delta": delta}),
            _lfi_domain,
        ),
        "commutator": Checker(
            "commutator",
            _ratio_commutator_reduced,
            lambda: ScanGrid(
                [_freq("x1"), _freq("x2", signed=True), _freq("y1", signed=True), _freq("y2", signed=True)],
                {"t": 0.0, "order": 3, "x1": "l", "x2": "eta+l*t", "y1": "k-l", "y2": "xi-eta+(k-l)*t"},
            ),
        ),
        "riesz": Checker(
            "riesz",
            lambda l, eta: ratio_riesz(l, eta),
            lambda: ScanGrid([_freq("l"), _freq("eta", signed=True)]),
        ),
        "m3_kernel": Checker(
            "m3_kernel",
            lambda t, k, xi: ratio_m3_kernel(t, k, xi, params.kappa, params.delta, params.epsilon),
            lambda: ScanGrid(
                [_time(), _freq("k"), _freq("xi", signed=True)],
                {"kappa": params.kappa, "delta": params.delta, "epsilon": params.epsilon},
            ),
        ),
    }


CHECKERS = tuple(_checkers(PhysParams()).keys())


def default_grid(name: str, params: PhysParams | None = None, refine: int = 0, points: int | None = None) -> ScanGrid:
    chk = _checkers(params or PhysParams())[name]
    grid = chk.grid()
    if points is not None:
        grid = ScanGrid([Axis(a.name, a.kind, a.lo, a.hi, points) for a in grid.axes], grid.fixed)
    for _ in range(refine):
        grid = grid.refined()
    return grid


def _evaluate_chunked(fn, axes: list[Axis], domain=None, chunk: int = 2_000_000, top: int = 5):
    """Evaluate fn on the tensor grid in chunks along the first axis.

    Returns (grid maximum, up to ``top`` best points in decreasing order, number of points).
    """
    vals = [a.values() for a in axes]
    rest = int(np.prod([len(v) for v in vals[1:]])) if len(vals) > 1 else 1
    step = max(1, chunk // max(rest, 1))
    cands: list[tuple[float, list[float]]] = []
    n = 0
    for start in range(0, len(vals[0]), step):
        sub = [vals[0][start : start + step], *vals[1:]]
        mesh = np.meshgrid(*sub, indexing="ij", sparse=True)
        r = np.broadcast_to(fn(*mesh), tuple(len(v) for v in sub)).astype(float)
        if domain is not None:
            r = np.where(np.broadcast_to(domain(*mesh), r.shape), r, -np.inf)
        r = np.nan_to_num(r, nan=-np.inf).ravel()
        n += int(np.isfinite(r).sum())
        m = min(top, r.size)
        for i in np.argpartition(-r, m - 1)[:m]:
            if np.isfinite(r[i]):
                idx = np.unravel_index(int(i), tuple(len(v) for v in sub))
                cands.append((float(r[i]), [float(s[j]) for s, j in zip(sub, idx)]))
        cands = sorted(cands, key=lambda c: -c[0])[:top]
    best = cands[0][0] if cands else -np.inf
    return best, [c[1] for c in cands], n


def _polish(fn, axes: list[Axis], x0, domain=None, maxiter: int = 2000):
    bounds = [a.u_bounds() for a in axes]
    u0 = [a.to_u(x) for a, x in zip(axes, x0)]

    def point(u):
        return [a.from_u(float(np.clip(ui, lo, hi))) for a, ui, (lo, hi) in zip(axes, u, bounds)]

    def obj(u):
        x = point(u)
        if domain is not None and not bool(domain(*x)):
            return np.inf
        v = float(np.asarray(fn(*x)))
        return -v if math.isfinite(v) else np.inf

    res = minimize(obj, u0, method="Nelder-Mead", bounds=bounds, options={"xatol": 1e-12, "fatol": 1e-15, "maxiter": maxiter})
    return -float(res.fun), point(res.x)


def scan(name: str, params: PhysParams | None = None, refine: int = 0, points: int | None = None, polish: bool = True) -> SupResult:
    """Grid supremum of checker ``name`` followed by local polishing of the grid maximiser."""
    params = params or PhysParams()
    chk = _checkers(params)[name]
    grid = default_grid(name, params, refine, points)
    best, starts, n = _evaluate_chunked(chk.ratio, grid.axes, chk.domain)
    sup, arg = best, (starts[0] if starts else None)
    if polish:
        for pt in starts[: 2 if name == "m3_kernel" else 5]:
            p_val, p_pt = _polish(chk.ratio, grid.axes, pt, chk.domain, maxiter=300 if name == "m3_kernel" else 2000)
            if p_val > sup:
                sup, arg = p_val, p_pt
    return SupResult(
        name,
        float(sup),
        {a.name: float(x) for a, x in zip(grid.axes, arg)} if arg else {},
        grid.spec(),
        grid_sup=float(best),
        n_points=n,
    )


def verify_estimates(params: PhysParams | None = None, refine: int = 0, names=None, points: int | None = None) -> list[SupResult]:
    return [scan(n, params, refine, points) for n in (names or CHECKERS)]
