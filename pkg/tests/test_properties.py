import numpy as np
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from qrfx.explain import ice_1d, shap_exact
from qrfx.forest import QuantileForestRegressor
from qrfx.impute import KNNImputer, MeanImputer
from qrfx.l1_quantile import quantile_intercept
from qrfx.metrics import pinball

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)
taus = st.floats(0.01, 0.99)
SETTINGS = settings(max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])


@SETTINGS
@given(arrays(float, st.integers(1, 30), elements=finite), taus)
def test_pinball_nonnegative_and_mirror(u, tau):
    assert pinball(u, tau) >= 0
    assert np.isclose(pinball(u, tau), pinball(-u, 1 - tau), rtol=1e-12, atol=1e-12)


@SETTINGS
@given(arrays(float, st.integers(1, 25), elements=finite), taus, finite)
def test_quantile_intercept_is_optimal(y, tau, c):
    q = quantile_intercept(y, tau)
    assert q in y
    assert pinball(y - q, tau) <= pinball(y - c, tau) + 1e-9 * (1 + np.abs(y).max())


@SETTINGS
@given(st.integers(0, 2**31), st.integers(1, 5), st.integers(2, 12))
def test_shapley_efficiency_for_random_tables(seed, p, nb):
    g = np.random.default_rng(seed)
    W = g.normal(size=(p, p))
    fn = lambda Z: np.tanh(Z @ W).sum(axis=1) + np.prod(Z > 0, axis=1)
    bg = g.normal(size=(nb, p))
    x = g.normal(size=p)
    phi, base = shap_exact(fn, x, bg)
    assert np.isclose(base + phi.sum(), fn(x[None])[0], atol=1e-10)


@SETTINGS
@given(st.integers(0, 2**31), st.integers(5, 30), st.integers(1, 4), taus)
def test_forest_quantile_within_training_range(seed, n, p, tau):
    g = np.random.default_rng(seed)
    X = g.normal(size=(n, p))
    y = g.normal(size=n)
    m = QuantileForestRegressor(n_estimators=5, max_depth=3, tau=tau, random_state=seed).fit(X, y)
    Xq = g.normal(size=(7, p)) * 3
    q = m.predict(Xq)
    assert np.all(np.isin(q, y))
    assert np.all(m.predict_quantile(Xq, min(tau + 0.005, 0.999)) >= q)


@SETTINGS
@given(st.integers(0, 2**31), st.integers(3, 20), st.integers(2, 15))
def test_pdp_equals_mean_ice(seed, n, G):
    g = np.random.default_rng(seed)
    X = g.normal(size=(n, 3))
    fn = lambda Z: np.sin(Z[:, 0] * Z[:, 1]) + Z[:, 2]
    ice = ice_1d(fn, X, 0, grid_size=G)
    assert np.max(np.abs(ice.pdp - ice.curves.sum(axis=0) / n)) <= 1e-12


@SETTINGS
@given(st.integers(0, 2**31), st.floats(0.0, 0.5))
def test_imputers_keep_observed_cells(seed, rate):
    g = np.random.default_rng(seed)
    X = g.normal(size=(15, 4))
    M = g.random(X.shape) < rate
    M[0] = False
    Xm = np.where(M, np.nan, X)
    for imp in (MeanImputer(), KNNImputer(n_neighbors=3)):
        out = imp.fit_transform(Xm)
        assert not np.isnan(out).any()
        assert np.array_equal(out[~M], X[~M])
