import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from couettelab.diagnostics import linear_solution_for, linear_state
from couettelab.freq import FrequencyGrid, PhysParams, SpectralField, enforce_hermitian, hermitian_error, hermitian_partner
from couettelab.linear import heat_phase
from couettelab.solver import (
    CFLWarning,
    FlowState,
    SolverBlowup,
    SolverConfig,
    biot_savart,
    dealias_mask,
    load_state,
    moving_frame_gradient_symbol,
    nonlinear_term,
    remap,
    resolvable_horizon,
    run,
    save_state,
    step,
)


def bump(grid, k0, e0, width, amp, phase=0.0):
    k, eta = grid.mesh()
    c = amp * np.exp(1j * phase) * np.exp(-((k - k0) ** 2 + (eta - e0) ** 2) / (2 * width**2))
    c = c + np.conj(hermitian_partner(c))
    c[0, :] = 0.0
    return SpectralField(grid, c)


def mode(grid, j, m, value):
    c = np.zeros(grid.shape, complex)
    c[j % grid.nx, m % grid.ny] += value
    c[-j % grid.nx, -m % grid.ny] += np.conj(value)
    return SpectralField(grid, c)


G32 = FrequencyGrid(32, 32)


def test_gradient_symbol():
    dx, dy = moving_frame_gradient_symbol(1.0, 0.0, 2.0)
    assert dx == 1j and dy == -2j
    dx0, dy0 = moving_frame_gradient_symbol(3.0, -1.5, 0.0)
    assert dx0 == 3j and dy0 == -1.5j


def test_gradient_symbol_matches_direct_differentiation():
    # moving-frame mode exp(i (k X + eta Y)) with X = x - t y is exp(i (k x + (eta - k t) y))
    k, eta, t, x, y, h = 2.0, 1.0, 0.7, 0.3, -0.4, 1e-5

    def f(x, y):
        return np.exp(1j * (k * (x - t * y) + eta * y))

    ddx = (f(x + h, y) - f(x - h, y)) / (2 * h)
    ddy = (f(x, y + h) - f(x, y - h)) / (2 * h)
    sx, sy = moving_frame_gradient_symbol(k, eta, t)
    assert ddx == pytest.approx(sx * f(x, y), rel=1e-9)
    assert ddy == pytest.approx(sy * f(x, y), rel=1e-9)


def test_biot_savart_examples():
    w = mode(G32, 1, 0, 0.5)
    u1, u2 = biot_savart(w, 0.0)
    assert u2.coeffs[1, 0] == pytest.approx(0.5j) and u1.coeffs[1, 0] == 0
    u1, u2 = biot_savart(mode(G32, 1, 0, 1.0), 2.0)
    assert u1.coeffs[1, 0] == pytest.approx(2j / 5, rel=1e-15)
    c = np.zeros(G32.shape, complex)
    c[0, 0] = 3.0
    u1, u2 = biot_savart(SpectralField(G32, c), 1.0)
    assert u1.coeffs[0, 0] == 0 and u2.coeffs[0, 0] == 0


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31), st.floats(0, 30))
def test_biot_savart_divergence_free(seed, t):
    rng = np.random.default_rng(seed)
    w = SpectralField(G32, enforce_hermitian(rng.standard_normal(G32.shape) + 1j * rng.standard_normal(G32.shape)))
    u1, u2 = biot_savart(w, t)
    k, eta = G32.mesh()
    sx, sy = moving_frame_gradient_symbol(k, eta, t)
    div = sx * u1.coeffs + sy * u2.coeffs
    scale = np.max(np.abs(sx * u1.coeffs)) + np.max(np.abs(sy * u2.coeffs))
    assert np.max(np.abs(div)) <= 1e-14 * scale


def test_nonlinear_term_trivial_cases():
    st_ = FlowState(SpectralField.zeros(G32), bump(G32, 1, 0, 1.0, 1.0))
    nw, nt = nonlinear_term(st_)
    assert not np.any(nw.coeffs) and not np.any(nt.coeffs)
    c = np.zeros(G32.shape, complex)
    c[0, 0] = 2.0
    nw, nt = nonlinear_term(FlowState(bump(G32, 2, 1, 1.0, 0.1), SpectralField(G32, c)))
    assert np.max(np.abs(nt.coeffs)) < 1e-17


@pytest.mark.parametrize("t", [0.0, 0.75])
def test_nonlinear_term_two_mode_beats(t):
    a, b = 0.3 - 0.2j, 0.1 + 0.4j
    P, Q = (1, 2), (2, -3)
    state = FlowState(mode(G32, *P, a), mode(G32, *Q, b), time=t)
    _, nt = nonlinear_term(state)
    expect = np.zeros(G32.shape, complex)
    for sp in (1, -1):
        p = (sp * P[0], sp * P[1])
        wp = a if sp == 1 else np.conj(a)
        xi_p = p[1] - p[0] * t
        psi = wp / (p[0] ** 2 + xi_p**2)
        u1, u2 = -1j * xi_p * psi, 1j * p[0] * psi
        for sq in (1, -1):
            q = (sq * Q[0], sq * Q[1])
            tq = b if sq == 1 else np.conj(b)
            xi_q = q[1] - q[0] * t
            expect[(p[0] + q[0]) % 32, (p[1] + q[1]) % 32] += (u1 * 1j * q[0] + u2 * 1j * xi_q) * tq
    assert np.max(np.abs(nt.coeffs - expect)) <= 1e-12 * np.max(np.abs(expect))
    assert hermitian_error(nt.coeffs) < 1e-14


def test_dealias_mask_two_thirds():
    m = dealias_mask(FrequencyGrid(256, 256))
    j = np.fft.fftfreq(256, 1 / 256)
    kept = j[m[:, 0]]
    assert kept.max() == 85 and kept.min() == -85
    assert resolvable_horizon(FrequencyGrid(256, 256), 2 / 3, 3.0) == pytest.approx(2 / 3 * 128 / 3)


def test_config_validation():
    p = PhysParams()
    for kw in (dict(dt=0.0), dict(dealias_fraction=0.5), dict(dealias_fraction=1.0), dict(t_end=-1.0)):
        base = dict(params=p, dt=0.01, t_end=1.0)
        base.update(kw)
        with pytest.raises(ValueError):
            SolverConfig(**base)


def _linear_exact(state0, p, t):
    return linear_state(linear_solution_for(state0, p), state0.grid, t)


@pytest.mark.parametrize("coupled", [False, True])
def test_single_step_matches_propagator(coupled):
    p = PhysParams(nu=0.05)
    w0 = bump(G32, 1, 0, 1.0, 1.0)
    th0 = bump(G32, 2, 1, 1.0, 0.5 if coupled else 0.0)
    s0 = FlowState(w0, th0)
    errs = []
    for dt in (0.2, 0.1):
        s1 = step(s0, SolverConfig(p, dt, dt, nonlinear=False))
        ex = _linear_exact(s0, p, s1.time)
        errs.append(np.max(np.abs(s1.omega.coeffs - ex.omega.coeffs)))
    # buoyancy with nu = mu is integrated exactly in the integrating-factor variables
    assert max(errs) < 1e-13


def test_zero_state_stays_zero():
    res = run(FlowState.zeros(G32), SolverConfig(PhysParams(nu=1e-2), 0.05, 1.0))
    assert not np.any(res.final.omega.coeffs) and not np.any(res.final.theta.coeffs)


def test_linear_run_matches_propagator_and_invariants():
    p = PhysParams(nu=1e-2)
    s0 = FlowState(bump(G32, 1, 1, 1.0, 0.3), bump(G32, 1, -1, 1.0, 0.2, 0.4))
    res = run(s0, SolverConfig(p, 1e-2, 3.0, nonlinear=False, check_invariants=True, diag_every=1.0))
    ex = _linear_exact(FlowState(s0.omega, s0.theta), p, res.final.time)
    mask = dealias_mask(G32)
    scale = np.max(np.abs(ex.omega.coeffs))
    assert np.max(np.abs(res.final.omega.coeffs - ex.omega.coeffs * mask)) <= 1e-6 * scale
    assert res.max_divergence <= 1e-13 and res.max_hermitian_error <= 1e-13
    assert [round(t, 9) for t in res.times()] == [0.0, 1.0, 2.0, 3.0]


def test_inviscid_enstrophy_conserved():
    g = FrequencyGrid(128, 128)
    p = PhysParams(nu=0.0)
    s0 = FlowState(bump(g, 2, 1, 1.5, 0.05) + bump(g, 1, -2, 1.0, 0.05, 1.0), SpectralField.zeros(g))
    res = run(s0, SolverConfig(p, 1e-3, 1.0, diag_every=1.0))
    l2 = res.series["omega_l2"]
    assert abs(l2[-1] - l2[0]) / l2[0] <= 1e-8


def test_restart_is_bit_identical(tmp_path):
    p = PhysParams(nu=1e-2)
    s0 = FlowState(bump(G32, 1, 0, 1.0, 2.0), bump(G32, 1, 1, 1.0, 1.0))
    full = run(s0, SolverConfig(p, 0.01, 1.0, diag_every=0.5))
    mid = full.snapshots[1]
    save_state(tmp_path / "mid", mid)
    back = load_state(tmp_path / "mid")
    assert back.time == mid.time and np.array_equal(back.omega.coeffs, mid.omega.coeffs)
    rest = run(back, SolverConfig(p, 0.01, 1.0, diag_every=0.5))
    assert np.array_equal(rest.final.omega.coeffs, full.final.omega.coeffs)
    assert np.array_equal(rest.final.theta.coeffs, full.final.theta.coeffs)


def test_run_is_deterministic():
    p = PhysParams(nu=1e-2)
    s0 = FlowState(bump(G32, 1, 0, 1.0, 2.0), bump(G32, 1, 1, 1.0, 1.0))
    a = run(s0, SolverConfig(p, 0.02, 1.0))
    b = run(s0, SolverConfig(p, 0.02, 1.0))
    assert a.series == b.series


def test_remap_preserves_stationary_spectrum():
    g = FrequencyGrid(16, 64)
    p = PhysParams(nu=1e-2)
    s0 = FlowState(bump(g, 1, 0, 0.7, 0.3), bump(g, 1, 1, 0.7, 0.1))
    lin = linear_solution_for(s0, p)
    res = run(s0, SolverConfig(p, 0.05, 3.0, nonlinear=False, remap_interval=1.0))
    fin = res.final
    assert fin.frame_origin == pytest.approx(3.0) and fin.frame_time == pytest.approx(0.0, abs=1e-12)
    ex = linear_state(lin, g, fin.time, fin.frame_origin)
    assert np.max(np.abs(fin.omega.coeffs - ex.omega.coeffs)) <= 1e-10 * np.max(np.abs(ex.omega.coeffs))
    with pytest.raises(ValueError):
        remap(FlowState(s0.omega, s0.theta, time=0.5))


def test_blowup_and_cfl_reporting():
    p = PhysParams(nu=1e-3)
    s0 = FlowState(bump(G32, 1, 0, 1.0, 1e4), bump(G32, 1, 1, 1.0, 1e4))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        res = run(s0, SolverConfig(p, 0.5, 50.0))
    assert any(issubclass(w.category, CFLWarning) for w in caught)
    assert res.aborted and res.aborted.startswith("blowup")
    with pytest.raises(SolverBlowup):
        for _ in range(200):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                s0 = step(s0, SolverConfig(p, 0.5, 0.5))
