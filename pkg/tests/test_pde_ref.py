import numpy as np
import pytest

from semibs import (
    FDGrid,
    PayoffSpec,
    ValueSurface,
    black_scholes_model,
    bs_closed_form_put,
    early_exercise_premium,
    eval_payoff,
    solve_american_fd,
    solve_european_fd,
)
from semibs.pde_ref import SCHEME_PROJECTED
from _oracles import bs_put_quadrature

MODEL = black_scholes_model(0.06, 0.4)
PUT40 = PayoffSpec.put(40)


def test_closed_form_against_quadrature():
    xs = np.array([20.0, 30.0, 40.0, 55.0, 70.0])
    cf = bs_closed_form_put(MODEL, 40.0, 1.0, xs)
    quad = bs_put_quadrature(0.06, 0.4, 40.0, 1.0, xs)
    assert np.max(np.abs(cf - quad)) < 1e-8


def test_closed_form_degenerate_limits():
    m0 = black_scholes_model(0.06, 0.0)
    assert bs_closed_form_put(m0, 40.0, 1.0, 30.0) == pytest.approx(
        np.exp(-0.06) * 40.0 - 30.0
    )
    assert bs_closed_form_put(m0, 40.0, 1.0, 45.0) == 0.0
    assert bs_closed_form_put(MODEL, 40.0, 0.0, 30.0) == pytest.approx(10.0)
    with pytest.raises(ValueError):
        bs_closed_form_put(MODEL, 40.0, 1.0, -5.0)


def test_fd_grid_validation():
    with pytest.raises(ValueError):
        FDGrid(x_min=0.0, x_max=80.0, n_space=100, n_time=100)
    with pytest.raises(ValueError):
        FDGrid(x_min=5.0, x_max=80.0, n_space=1, n_time=100)
    with pytest.raises(ValueError):
        FDGrid(x_min=5.0, x_max=80.0, n_space=100, n_time=100, scheme="explicit")


def test_european_fd_matches_closed_form():
    grid = FDGrid(x_min=2.0, x_max=160.0, n_space=800, n_time=800)
    surf = solve_european_fd(MODEL, PUT40, grid)
    xs = surf.xs
    band = (xs >= 15.0) & (xs <= 70.0)
    ref = bs_closed_form_put(MODEL, 40.0, 1.0, xs[band])
    rel = np.abs(surf.values[0][band] - ref) / ref
    assert np.max(rel) < 1e-3


def test_american_fd_dominates_and_satisfies_complementarity():
    grid = FDGrid(x_min=2.0, x_max=160.0, n_space=500, n_time=500)
    am = solve_american_fd(MODEL, PUT40, grid)
    eu = solve_european_fd(MODEL, PUT40, grid)
    g = eval_payoff(PUT40, am.xs)
    assert np.all(am.values >= g - 1e-12)
    assert np.all(am.values - eu.values >= -1e-12)
    assert am.meta["complementarity_residual"] < 1e-8
    prem = early_exercise_premium(am, eu)
    assert np.all(prem >= -1e-12)
    assert prem[0][np.argmin(np.abs(am.xs - 40.0))] > 0.2


def test_american_projected_scheme_cross_check():
    kw = dict(x_min=2.0, x_max=160.0, n_space=500, n_time=500)
    a = solve_american_fd(MODEL, PUT40, FDGrid(**kw))
    b = solve_american_fd(MODEL, PUT40, FDGrid(scheme=SCHEME_PROJECTED, **kw))
    assert np.max(np.abs(a.values[0] - b.values[0])) < 0.01


def test_european_call_put_parity():
    grid = FDGrid(x_min=2.0, x_max=200.0, n_space=1000, n_time=500)
    call = solve_european_fd(MODEL, PayoffSpec.call(40), grid)
    put = solve_european_fd(MODEL, PUT40, grid)
    xs = grid.xs()
    band = (xs >= 20.0) & (xs <= 70.0)
    lhs = call.values[0][band] - put.values[0][band]
    rhs = xs[band] - 40.0 * np.exp(-0.06)
    assert np.max(np.abs(lhs - rhs)) < 0.02


def test_strangle_fd_runs_and_dominates_payoff():
    payoff = PayoffSpec.strangle(25, 27)
    m = black_scholes_model(0.06, 0.2)
    grid = FDGrid(x_min=5.0, x_max=150.0, n_space=400, n_time=400)
    am = solve_american_fd(m, payoff, grid)
    g = eval_payoff(payoff, am.xs)
    assert np.all(am.values >= g - 1e-12)


def test_fd_rejects_unsupported_setups():
    from semibs import ConstVol, MarketModel

    m2 = MarketModel(r=0.06, d=2, vol=ConstVol(0.2 * np.eye(2)))
    grid = FDGrid(x_min=5.0, x_max=80.0, n_space=50, n_time=50)
    with pytest.raises(ValueError):
        solve_american_fd(m2, PayoffSpec.arith_basket_put(25), grid)


def test_premium_requires_matching_grids():
    g1 = FDGrid(x_min=5.0, x_max=80.0, n_space=50, n_time=50)
    g2 = FDGrid(x_min=5.0, x_max=80.0, n_space=60, n_time=50)
    am = solve_american_fd(MODEL, PUT40, g1)
    eu = solve_european_fd(MODEL, PUT40, g2)
    with pytest.raises(ValueError):
        early_exercise_premium(am, eu)
