import numpy as np
import pytest

from semibs import (
    ConstVol,
    FnVol,
    MarketModel,
    PathSample,
    black_scholes_model,
    derive_rng,
    lognormal_step,
    sample_euler,
    sample_exact,
)


def test_const_vol_validation():
    with pytest.raises(ValueError):
        ConstVol(np.ones((2, 3)))
    with pytest.raises(ValueError):
        ConstVol(np.array([[np.nan]]))
    with pytest.raises(ValueError):
        MarketModel(r=0.06, d=2, vol=ConstVol(np.array([[0.2]])))
    with pytest.raises(ValueError):
        MarketModel(r=0.06, d=0, vol=ConstVol(np.array([[0.2]])))


def test_black_scholes_model_basics():
    m = black_scholes_model(0.06, 0.4)
    assert m.d == 1 and m.is_const_vol
    assert m.sigma_bar()[0, 0] == 0.4
    cov = m.vol.covariance()
    assert np.isclose(cov[0, 0], 0.16)


def test_fnvol_model_has_no_const_sigma():
    m = MarketModel(r=0.0, d=1, vol=FnVol(lambda t, x: np.array([[0.2]]), dim=1))
    assert not m.is_const_vol
    with pytest.raises(TypeError):
        m.sigma_bar()


def test_lognormal_step_martingale_and_logvariance():
    m = black_scholes_model(0.06, 0.3)
    rng = derive_rng(123)
    n = 200_000
    z = rng.standard_normal((n, 1))
    xT = lognormal_step(m, np.array([40.0]), 0.7, z)[:, 0]
    disc = np.exp(-0.06 * 0.7) * xT
    se = disc.std(ddof=1) / np.sqrt(n)
    assert abs(disc.mean() - 40.0) < 4 * se
    lv = np.log(xT).var(ddof=1)
    assert abs(lv - 0.09 * 0.7) < 4 * lv * np.sqrt(2.0 / (n - 1))


def test_lognormal_step_broadcasts_dt_array():
    m = black_scholes_model(0.06, 0.3)
    z = np.zeros((3, 1))
    dt = np.array([0.1, 0.5, 1.0])
    out = lognormal_step(m, np.array([10.0]), dt, z)[:, 0]
    expect = 10.0 * np.exp((0.06 - 0.045) * dt)
    assert np.allclose(out, expect)


def test_sample_exact_positive_and_validated():
    m = black_scholes_model(0.06, 0.4)
    path = sample_exact(m, 0.0, 40.0, np.linspace(0.1, 1.0, 10), derive_rng(7))
    assert np.all(path.states > 0)
    assert path.states.shape == (10, 1)
    with pytest.raises(ValueError):
        sample_exact(m, 0.5, 40.0, np.array([0.4, 0.6]), derive_rng(7))
    with pytest.raises(ValueError):
        sample_exact(m, 0.0, -1.0, np.array([1.0]), derive_rng(7))


def test_euler_matches_exact_for_constant_vol():
    # in log coordinates the Euler step with constant sigma IS the exact
    # transition, so the two samplers agree path by path on the same stream
    m = black_scholes_model(0.06, 0.4)
    grid = np.linspace(0.25, 1.0, 4)
    a = sample_exact(m, 0.0, 40.0, grid, derive_rng(99))
    b = sample_euler(m, 0.0, 40.0, grid, derive_rng(99))
    keep = b.times >= grid[0]
    assert np.allclose(a.states, b.states[keep], rtol=1e-12)


def test_euler_handles_state_dependent_vol():
    vol = FnVol(lambda t, x: np.array([[0.1 + 0.1 * np.tanh(x[0] / 40.0)]]), dim=1)
    m = MarketModel(r=0.02, d=1, vol=vol)
    path = sample_euler(m, 0.0, 40.0, np.linspace(0.01, 1.0, 100), derive_rng(5))
    assert np.all(path.states > 0)


def test_derive_rng_streams_are_stable_and_distinct():
    a = derive_rng(42, 1, 2).standard_normal(4)
    b = derive_rng(42, 1, 2).standard_normal(4)
    c = derive_rng(42, 1, 3).standard_normal(4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_path_sample_validation():
    with pytest.raises(ValueError):
        PathSample(times=np.array([0.2, 0.1]), states=np.ones((2, 1)))
    with pytest.raises(ValueError):
        PathSample(times=np.array([0.1, 0.2]), states=np.array([[1.0], [-1.0]]))
