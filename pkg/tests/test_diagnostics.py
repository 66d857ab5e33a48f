import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from couettelab.diagnostics import (
    WeightSpec,
    data_norm,
    enhanced_dissipation_timescale,
    fit_decay_exponent,
    linear_solution_for,
    linear_trajectory,
    mode_weight,
    running_max,
    short_long_split_time,
    split_linear_nonlinear,
    stability_functional,
    weighted_l2_norm,
    zero_column_norm,
)
from couettelab.freq import FrequencyGrid, PhysParams, SpectralField, enforce_hermitian
from couettelab.linear import decay_time
from couettelab.multipliers import c_kappa, c_kappa_rigorous
from couettelab.solver import FlowState, SolverConfig, run

G = FrequencyGrid(16, 16)
P = PhysParams(nu=1e-3)


def random_field(grid, seed, zero_column=True):
    rng = np.random.default_rng(seed)
    c = enforce_hermitian(rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape))
    if zero_column:
        c[0, :] = 0
    return SpectralField(grid, c)


def single_mode(grid, j, m, value=1.0):
    c = np.zeros(grid.shape, complex)
    c[j % grid.nx, m % grid.ny] = value
    return SpectralField(grid, c)


def test_identity_spec_is_parseval():
    f = random_field(G, 1, zero_column=False)
    assert weighted_l2_norm(f, 0.7, WeightSpec(), P) == pytest.approx(f.l2_norm(), rel=1e-14)


def test_single_mode_bracket_weight():
    f = single_mode(G, 1, 0)
    eps = P.epsilon
    spec = WeightSpec(bracket_k_power=1.0, inv_bracket_power=eps)
    expect = math.sqrt(2) * math.sqrt(2) ** eps * f.l2_norm()
    assert weighted_l2_norm(f, 0.0, spec, P) == pytest.approx(expect, rel=1e-14)


def test_weight_spec_rejects_nonfinite():
    with pytest.raises(ValueError):
        WeightSpec(bracket_k_power=math.inf)
    with pytest.raises(ValueError):
        weighted_l2_norm(single_mode(G, 1, 0), -1.0, WeightSpec(), P)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31), st.floats(0, 3), st.floats(0, 3), st.floats(0, 20))
def test_norm_monotone_in_powers(seed, a, b, t):
    f = random_field(G, seed)
    for field in ("bracket_k_power", "inv_bracket_power", "shear_bracket_power"):
        lo = weighted_l2_norm(f, t, WeightSpec(**{field: a}), P)
        hi = weighted_l2_norm(f, t, WeightSpec(**{field: a + b}), P)
        assert hi >= lo * (1 - 1e-14)


def test_zero_column_reported_separately():
    c = np.zeros(G.shape, complex)
    c[0, 1], c[0, -1] = 2.0, 2.0
    c[1, 0], c[-1, 0] = 1.0, 1.0
    f = SpectralField(G, c)
    spec = WeightSpec.stability_omega(P)
    only_k = SpectralField(G, np.where(np.arange(16)[:, None] == 0, 0, c))
    assert weighted_l2_norm(f, 0.0, spec, P) == pytest.approx(weighted_l2_norm(only_k, 0.0, spec, P))
    assert zero_column_norm(f, 0.0, spec, P) == pytest.approx(math.sqrt(G.area * 8.0))
    w = mode_weight(spec, np.array([0.0, 1.0]), np.zeros(2), np.zeros(2), 0.0, P)
    assert np.isnan(w[0]) and np.isfinite(w[1])


@pytest.mark.parametrize("t", [0.0, 5.0])
def test_multiplier_weighted_norm_bounds(t):
    g = FrequencyGrid(8, 8)
    f = random_field(g, 3)
    base = f.l2_norm()
    m = weighted_l2_norm(f, t, WeightSpec(multiplier_M=True), P)
    # at nu = 1e-3 the multiplier stays below the stated constant on this range
    assert base <= m <= c_kappa(P.kappa) * base
    assert m <= c_kappa_rigorous(P.kappa) * base
    u = weighted_l2_norm(f, t, WeightSpec(upsilon_sqrt=True), P)
    assert 0 < u


def test_stability_functional_parts():
    s = FlowState(single_mode(G, 1, 0), single_mode(G, 2, 1, 0.5))
    d = stability_functional(s, P)
    assert d["F"] == pytest.approx(d["F_omega"] + d["F_theta"])
    scale = P.nu ** (-1 / 3 - P.delta)
    w_theta = 5 ** (2 / 3) * math.sqrt(1.25) ** P.epsilon * 0.5 * math.sqrt(G.area)
    assert d["F_theta"] == pytest.approx(scale * w_theta, rel=1e-13)
    assert d["omega_k0"] == 0 and d["theta_k0"] == 0


def test_running_max_and_marker():
    assert list(running_max([1, 3, 2, 5, 4])) == [1, 3, 3, 5, 5]
    assert short_long_split_time(1e-6) == pytest.approx(10.0)
    with pytest.raises(ValueError):
        short_long_split_time(0.0)


def test_data_norm_requires_empty_zero_column():
    with pytest.raises(ValueError):
        data_norm(random_field(G, 0, zero_column=False))
    f = single_mode(G, 1, 0, 1.0) + single_mode(G, -1, 0, 1.0)
    # weighted field is 64 cos(x) on the (2 pi)^2 box
    l2 = 32 * math.sqrt(2 * G.area)
    x = np.arange(G.nx) * 2 * np.pi / G.nx
    l1 = float(np.mean(np.abs(64 * np.cos(x)))) * G.area
    assert data_norm(f) == pytest.approx(l2 + l1, rel=1e-12)


def _small_state(amp):
    g = FrequencyGrid(32, 32)
    k, eta = g.mesh()
    c = amp * np.exp(-((np.abs(k) - 1) ** 2 + eta**2))
    c[0, :] = 0
    return FlowState(SpectralField(g, c.astype(complex)), SpectralField(g, 0.5 * c.astype(complex)))


def test_split_zero_at_start_and_reassembles():
    p = PhysParams(nu=1e-2)
    s0 = _small_state(1.0)
    res = run(s0, SolverConfig(p, 0.02, 1.0, diag_every=0.5))
    lin = linear_solution_for(res.snapshots[0], p)
    split = split_linear_nonlinear(res, lin)
    assert split[0].t == 0.0
    assert not np.any(split[0].omega_nonlinear.coeffs) and not np.any(split[0].theta_nonlinear.coeffs)
    for sp, snap in zip(split, res.snapshots):
        back = sp.omega_linear + sp.omega_nonlinear
        assert np.max(np.abs(back.coeffs - snap.omega.coeffs)) <= 1e-13 * np.max(np.abs(snap.omega.coeffs))
    assert np.max(np.abs(split[-1].omega_nonlinear.coeffs)) > 0


def test_split_linear_run_is_small():
    p = PhysParams(nu=1e-2)
    s0 = _small_state(1.0)
    res = run(s0, SolverConfig(p, 0.01, 1.0, diag_every=0.5, nonlinear=False))
    split = split_linear_nonlinear(res, linear_solution_for(res.snapshots[0], p))
    assert max(np.max(np.abs(s.omega_nonlinear.coeffs)) for s in split) < 1e-9


def test_fit_synthetic_series():
    t = np.linspace(0, 100, 400)
    fit = fit_decay_exponent(t, (1 + t**2) ** -1.0, mode="algebraic")
    assert fit.exponent == pytest.approx(-2.0, abs=1e-6) and fit.residual < 1e-10
    fit = fit_decay_exponent(t, 3 * np.exp(-0.3 * t), mode="exponential")
    assert fit.exponent == pytest.approx(-0.3, abs=1e-12)
    fit = fit_decay_exponent(t, 3 * np.exp(-0.3 * t), window=(10, 50), mode="exponential")
    assert fit.exponent == pytest.approx(-0.3, abs=1e-12)


def test_fit_errors():
    t = np.linspace(0, 1, 5)
    with pytest.raises(ValueError):
        fit_decay_exponent(t, -np.ones(5))
    with pytest.raises(ValueError):
        fit_decay_exponent(t, np.ones(5), window=(0, 2))
    with pytest.raises(ValueError):
        fit_decay_exponent(t, np.ones(5), mode="power")


def test_fit_noisy_confidence_coverage():
    rng = np.random.default_rng(7)
    t = np.linspace(1, 50, 60)
    hits = 0
    n = 400
    for _ in range(n):
        v = (1 + t**2) ** -1.0 * np.exp(0.05 * rng.standard_normal(t.size))
        f = fit_decay_exponent(t, v)
        hits += abs(f.exponent + 2.0) <= 1.96 * f.stderr
    assert 0.92 <= hits / n <= 0.98


def test_pure_heat_timescale():
    # shell amplitude exp(-nu k^2 t) as pure heat decay of a shear-free mode
    nu, k = 1e-2, 2.0
    times = np.linspace(0, 50, 501)
    traj = [FlowState(single_mode(G, 2, 0, math.exp(-nu * k * k * t)), SpectralField.zeros(G), time=float(t)) for t in times]
    assert enhanced_dissipation_timescale(traj, k) == pytest.approx(1 / (nu * k * k), rel=1e-12)


def test_kelvin_mode_timescale():
    g = FrequencyGrid(8, 4096, ly=2 * np.pi * 64)
    s0 = FlowState(single_mode(g, 1, 0) + single_mode(g, -1, 0), SpectralField.zeros(g))
    sol = linear_solution_for(s0, PhysParams(nu=1e-3))
    target = decay_time(1e-3, 1.0, 0.0)
    traj = linear_trajectory(sol, g, np.arange(0.0, 20.0, 0.01))
    assert enhanced_dissipation_timescale(traj, 1.0) == pytest.approx(target, rel=1e-6)


def test_zero_shell_has_no_timescale():
    traj = [FlowState.zeros(G), FlowState(SpectralField.zeros(G), SpectralField.zeros(G), time=1.0)]
    assert enhanced_dissipation_timescale(traj, 1.0) is None
    with pytest.raises(ValueError):
        enhanced_dissipation_timescale(traj, 0.5)


def test_enhanced_dissipation_scaling():
    g = FrequencyGrid(8, 256, ly=32 * np.pi)
    k, eta = g.mesh()
    c = np.where(np.abs(k) == 1, np.exp(-(eta**2) / 2), 0).astype(complex)
    s0 = FlowState(SpectralField(g, c), SpectralField.zeros(g))
    nus = np.array([1e-2, 1e-3, 1e-4])
    taus = []
    for nu in nus:
        sol = linear_solution_for(s0, PhysParams(nu=nu))
        traj = linear_trajectory(sol, g, np.arange(0, 5 * nu ** (-1 / 3), 0.02))
        taus.append(enhanced_dissipation_timescale(traj, 1.0))
    slope = np.polyfit(np.log(nus), np.log(taus), 1)[0]
    assert -0.38 <= slope <= -0.28
