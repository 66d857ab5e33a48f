import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from couettelab.freq import (
    FrequencyGrid,
    PhysParams,
    SpectralField,
    enforce_hermitian,
    hermitian_error,
    japanese_bracket,
    lambda_rate,
    load_field,
    moving_eta,
    save_field,
    stationary_xi,
    to_physical,
    to_spectral,
)

finite = st.floats(-1e6, 1e6, allow_nan=False)


def random_hermitian(grid, seed):
    rng = np.random.default_rng(seed)
    c = rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape)
    return SpectralField(grid, enforce_hermitian(c))


@pytest.mark.parametrize("args, expected", [((0.0,), 1.0), ((1.0, 0.0), math.sqrt(2)), ((3.0, 4.0), math.sqrt(26))])
def test_japanese_bracket_examples(args, expected):
    assert japanese_bracket(*args) == pytest.approx(expected, rel=1e-15)


@given(finite)
def test_japanese_bracket_dominates(x):
    assert japanese_bracket(x) >= max(1.0, abs(x))


def test_japanese_bracket_rejects_nonfinite():
    with pytest.raises(ValueError):
        japanese_bracket(float("nan"))
    with pytest.raises(ValueError):
        japanese_bracket(1.0, np.array([0.0, np.inf]))


def test_lambda_rate_examples():
    assert lambda_rate(2.0) == 1.0
    assert lambda_rate(0.0) == 0.0
    assert lambda_rate(1 / 8) == pytest.approx(0.25, rel=1e-14)
    ks = np.linspace(0, 3, 301)
    assert np.all(np.diff(lambda_rate(ks)) >= 0)


def test_frame_maps_are_inverse():
    assert stationary_xi(2.0, 1.0, 3.0) == -5.0
    assert moving_eta(2.0, stationary_xi(2.0, 1.0, 3.0), 3.0) == 1.0


@pytest.mark.parametrize("nx, ny", [(6, 8), (8, 7), (9, 8), (8, 0)])
def test_grid_rejects_bad_sizes(nx, ny):
    with pytest.raises(ValueError):
        FrequencyGrid(nx, ny)


def test_grid_wavenumbers():
    g = FrequencyGrid(8, 16, lx=4 * np.pi)
    assert np.allclose(g.kx, 0.5 * np.array([0, 1, 2, 3, -4, -3, -2, -1]))
    assert g.ky.min() == pytest.approx(-8) and g.ky.max() == pytest.approx(7)
    assert g.zero_column()[0].all() and not g.zero_column()[1:].any()


def test_spectral_field_validation_and_immutability():
    g = FrequencyGrid(8, 8)
    with pytest.raises(ValueError):
        SpectralField(g, np.zeros((8, 6)))
    with pytest.raises(ValueError):
        SpectralField(g, np.full((8, 8), np.nan))
    f = SpectralField.zeros(g)
    with pytest.raises(ValueError):
        f.coeffs[0, 0] = 1.0


def test_single_mode_is_cosine_stripe():
    g = FrequencyGrid(16, 8)
    c = np.zeros(g.shape, complex)
    c[1, 0] = c[-1, 0] = 0.5
    x, _ = g.coords()
    assert np.allclose(to_physical(SpectralField(g, c)), np.cos(x), atol=1e-14)


def test_zero_field_round_trip():
    g = FrequencyGrid(8, 8)
    assert not to_physical(SpectralField.zeros(g)).any()


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.sampled_from([(8, 8), (16, 32), (32, 8)]))
def test_round_trip_and_parseval(seed, shape):
    g = FrequencyGrid(*shape, lx=3.0, ly=5.0)
    f = random_hermitian(g, seed)
    phys = to_physical(f)
    back = to_spectral(phys, g)
    assert np.max(np.abs(back.coeffs - f.coeffs)) <= 1e-12 * np.max(np.abs(f.coeffs))
    l2_phys = math.sqrt(np.mean(phys**2) * g.area)
    assert l2_phys == pytest.approx(f.l2_norm(), rel=1e-10)
    assert hermitian_error(back.coeffs) < 1e-15


def test_to_spectral_dimension_mismatch():
    with pytest.raises(ValueError):
        to_spectral(np.zeros((8, 10)), FrequencyGrid(8, 8))


def test_snapshot_round_trip(tmp_path):
    g = FrequencyGrid(8, 16, lx=2.5, ly=7.0)
    f = random_hermitian(g, 1)
    path = save_field(tmp_path / "w.bin", f, {"time": 1.5})
    raw = path.read_bytes()
    assert len(raw) == 4 * 8 + 16 * 8 * 16
    g2, meta = load_field(path)
    assert g2.grid == g and np.array_equal(g2.coeffs, f.coeffs)
    assert meta["time"] == 1.5 and meta["grid"]["ly"] == 7.0


def test_snapshot_write_error_has_path(tmp_path):
    with pytest.raises(OSError, match="missing"):
        save_field(tmp_path / "missing" / "w.bin", SpectralField.zeros(FrequencyGrid(8, 8)))


def test_phys_params_defaults_and_validation():
    p = PhysParams()
    assert p.mu == p.nu and p.coupled
    assert 0 < p.kappa < p.kappa_max
    bad = [
        dict(nu=2.0),
        dict(nu=-1.0),
        dict(delta=0.0),
        dict(epsilon=0.39),
        dict(epsilon=0.5),
        dict(kappa=0.2),
        dict(c0=0.02),
        dict(c=1.0),
    ]
    for kw in bad:
        with pytest.raises(ValueError):
            PhysParams(**kw)
    assert not PhysParams(nu=1e-3, mu=1e-2).coupled
