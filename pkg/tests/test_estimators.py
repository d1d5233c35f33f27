import numpy as np
import pytest
from sklearn.base import clone
from sklearn.pipeline import make_pipeline

from conftest import tent
from weakkam import GridTorus, SolverParams, ValueField, free_particle, lax_oleinik_apply, pendulum
from weakkam.estimators import (ExponentialRateRegressor, LaxOleinikTransformer,
                                PeriodicWeakKAMSolution)
from weakkam.exceptions import InsufficientData, ValidationError

GRID = GridTorus(1, 64)
PEND = pendulum()
PARAMS = SolverParams.for_model(PEND, GRID, 64)


def test_transformer_matches_semigroup(rng):
    X = rng.normal(size=(3, GRID.n_nodes))
    est = LaxOleinikTransformer(PEND, GRID, horizon=0.5, params=PARAMS).fit()
    out = est.transform(X)
    for row, got in zip(X, out):
        ref = lax_oleinik_apply(ValueField(GRID, row), PEND, 0.0, 0.5, PARAMS)
        np.testing.assert_array_equal(got, ref.values)


def test_transformer_renormalizes_and_clones(rng):
    est = LaxOleinikTransformer(PEND, GRID, horizon=0.25, params=PARAMS, renormalize=True)
    twin = clone(est)
    assert twin.get_params()["horizon"] == 0.25
    out = twin.fit_transform(rng.normal(size=(2, GRID.n_nodes)))
    np.testing.assert_array_equal(out.min(axis=1), 0.0)
    # two transformers in a row compose like one over the summed horizon
    chain = make_pipeline(LaxOleinikTransformer(PEND, GRID, 0.25, params=PARAMS),
                          LaxOleinikTransformer(PEND, GRID, 0.25, t0=0.25, params=PARAMS))
    one = LaxOleinikTransformer(PEND, GRID, 0.5, params=PARAMS)
    X = rng.normal(size=(2, GRID.n_nodes))
    np.testing.assert_array_equal(chain.fit_transform(X), one.fit_transform(X))


def test_transformer_validation():
    with pytest.raises(ValidationError):
        LaxOleinikTransformer(PEND, GRID, horizon=0.0, params=PARAMS).fit()
    with pytest.raises(ValidationError):
        LaxOleinikTransformer(PEND, GRID, horizon=0.3 / 64, params=PARAMS).fit()
    est = LaxOleinikTransformer(PEND, GRID, horizon=0.5, params=PARAMS).fit()
    with pytest.raises(ValidationError):
        est.transform(np.zeros((2, GRID.n_nodes + 1)))


def test_periodic_solution_predicts_tent():
    grid = GridTorus(1, 128)
    est = PeriodicWeakKAMSolution(pendulum(), grid, n_slices=4,
                                  params=SolverParams.for_model(pendulum(), grid, 128)).fit()
    x = np.linspace(0, 1, 17, endpoint=False)
    pts = np.column_stack([x, np.full_like(x, 0.25)])
    np.testing.assert_allclose(est.predict(pts), tent(x), atol=1e-2)
    assert est.residual_ <= 1e-2


def test_periodic_solution_free_is_zero():
    est = PeriodicWeakKAMSolution(free_particle(), GRID, n_slices=2,
                                  params=SolverParams.for_model(free_particle(), GRID, 32)).fit()
    assert np.all(est.predict([[0.3, 0.0], [0.7, 0.5]]) == 0.0)


def test_rate_regressor_recovers_synthetic_rate():
    n = np.arange(2, 16)
    reg = ExponentialRateRegressor().fit(n, 3.0 * np.exp(-0.7 * n))
    assert reg.rate_ == pytest.approx(0.7, rel=1e-12)
    assert reg.constant_ == pytest.approx(3.0, rel=1e-10)
    assert reg.r_squared_ == pytest.approx(1.0)
    np.testing.assert_allclose(reg.predict([20, 30]), 3.0 * np.exp(-0.7 * np.array([20, 30])),
                               rtol=1e-9)
    assert reg.score(n, 3.0 * np.exp(-0.7 * n)) == pytest.approx(1.0)


def test_rate_regressor_floor():
    n = np.arange(10)
    gaps = np.maximum(np.exp(-n), 1e-3)
    reg = ExponentialRateRegressor(floor=1e-2, min_epochs=3).fit(n, gaps)
    assert list(reg.used_) == [0, 1, 2, 3, 4]
    assert reg.rate_ == pytest.approx(1.0, rel=1e-12)
    with pytest.raises(InsufficientData) as err:
        ExponentialRateRegressor(floor=0.1, min_epochs=4).fit(n, gaps)
    assert err.value.quantities["usable"] == 3
