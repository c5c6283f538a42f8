import numpy as np
import pytest
from scipy.optimize import linprog
from sklearn.linear_model import Lasso

from qrfx.l1_quantile import (L1QuantileRegressor, L1SquaredRegressor, fit_l1_pinball, fit_l1_squared, fit_path,
                              lambda_grid, lambda_max, select_features_xy, standardize_stats)
from qrfx.utils.validation import ValidationError


def _problem(seed, n=30, p=4):
    g = np.random.default_rng(seed)
    X = g.normal(size=(n, p)) * np.array([1.0, 3.0, 0.5, 2.0])[:p]
    y = 1.0 + X[:, 0] - 0.5 * X[:, 1] + 0.3 * g.standard_t(3, size=n)
    return X, y


def _lp_oracle(Z, y, tau, lam):
    """Optimal value of the penalised pinball problem as a linear program."""
    n, p = Z.shape
    # variables: b0+, b0-, beta+ (p), beta- (p), u+ (n), u- (n)
    c = np.concatenate([[0, 0], lam * np.ones(2 * p), tau / n * np.ones(n), (1 - tau) / n * np.ones(n)])
    A = np.hstack([np.ones((n, 1)), -np.ones((n, 1)), Z, -Z, np.eye(n), -np.eye(n)])
    res = linprog(c, A_eq=A, b_eq=y, bounds=(0, None), method="highs")
    assert res.status == 0
    beta = res.x[2:2 + p] - res.x[2 + p:2 + 2 * p]
    return res.fun, beta


@pytest.mark.parametrize("tau", [0.1, 0.5, 0.9])
@pytest.mark.parametrize("lam", [0.0, 0.01, 0.1])
def test_pinball_lasso_matches_lp(tau, lam):
    X, y = _problem(int(tau * 10))
    m = fit_l1_pinball(X, y, tau, lam)
    mu, sd = standardize_stats(X)
    want, _ = _lp_oracle((X - mu) / sd, y, tau, lam)
    assert m.objective(X, y) == pytest.approx(want, abs=1e-9)


def test_pinball_cd_solver_close_to_lp():
    X, y = _problem(4)
    m = fit_l1_pinball(X, y, 0.5, 0.02, solver="cd")
    mu, sd = standardize_stats(X)
    want, _ = _lp_oracle((X - mu) / sd, y, 0.5, 0.02)
    assert m.objective(X, y) <= want + 1e-3


def test_squared_lasso_matches_sklearn():
    X, y = _problem(5)
    mu, sd = standardize_stats(X)
    for lam in (0.001, 0.05, 0.3):
        m = fit_l1_squared(X, y, lam)
        ref = Lasso(alpha=lam, tol=1e-12, max_iter=100000).fit((X - mu) / sd, y)
        assert np.allclose(m.beta, ref.coef_, atol=1e-6)
        assert m.beta0 == pytest.approx(ref.intercept_, abs=1e-6)


def test_lasso_toy_grid_search_oracle():
    """Two standardized features: brute-force the objective on a 1e-3 grid."""
    g = np.random.default_rng(9)
    X = g.normal(size=(40, 2))
    y = 0.8 * X[:, 0] - 0.3 * X[:, 1] + 0.2 * g.normal(size=40)
    lam = 0.1
    m = fit_l1_squared(X, y, lam)
    mu, sd = standardize_stats(X)
    Z = (X - mu) / sd
    Zc, yc = Z - Z.mean(0), y - y.mean()
    grid = np.round(np.arange(-1.5, 1.5005, 1e-3), 3)
    best = (np.inf, None)
    for b1 in grid:
        r = yc[:, None] - Zc[:, [0]] * b1 - Zc[:, [1]] * grid[None, :]
        obj = 0.5 * np.mean(r ** 2, axis=0) + lam * (abs(b1) + np.abs(grid))
        k = int(np.argmin(obj))
        if obj[k] < best[0]:
            best = (obj[k], (b1, grid[k]))
    assert np.allclose(m.beta, best[1], atol=1e-3)


@pytest.mark.parametrize("loss,tau", [("pinball", 0.9), ("pinball", 0.3), ("squared", None)])
def test_lambda_max_is_threshold(loss, tau):
    X, y = _problem(6)
    lm = lambda_max(X, y, tau, loss)
    fit = (lambda lam: fit_l1_pinball(X, y, tau, lam)) if loss == "pinball" else \
        (lambda lam: fit_l1_squared(X, y, lam))
    assert np.all(np.abs(fit(lm * 1.0001).beta) < 1e-8)
    # with zero residuals at the intercept fit the bound may sit above the exact threshold
    below = 0.9 if loss == "squared" else 0.5
    assert np.any(np.abs(fit(lm * below).beta) > 1e-8)


def test_path_sparsity_grows():
    X, y = _problem(7, p=4)
    lams = lambda_grid(lambda_max(X, y, loss="squared"), 8, 1e-2)
    counts = [m.nonzero().size for m in fit_path(X, y, lams, loss="squared")]
    assert counts[0] == 0 and counts[-1] == 4


def test_selection_result_shape():
    X, y = _problem(8, n=36, p=4)
    sel = select_features_xy(X, y, ["a", "b", "c", "d"], tau=0.9, repeats=2, folds=3, seed=0, n_lambda=12)
    assert len(sel.path) == 12
    assert [pt.lam for pt in sel.path] == sorted([pt.lam for pt in sel.path], reverse=True)
    assert sel.path[0].nonzero_count <= sel.path[-1].nonzero_count
    assert sel.best.mean_cv_loss == min(pt.mean_cv_loss for pt in sel.path)
    assert sel.features == sel.features_at(sel.best_index)
    assert {"a", "b"} <= set(sel.features)
    assert sel.fold_losses.shape == (12, 6)
    rows = sel.to_rows()
    assert set(rows[0]) == {"lambda", "s", "mean_loss", "nonzero_count", "a", "b", "c", "d"}
    again = select_features_xy(X, y, ["a", "b", "c", "d"], tau=0.9, repeats=2, folds=3, seed=0, n_lambda=12)
    assert np.array_equal(sel.fold_losses, again.fold_losses)


def test_sparsest_nonempty():
    X, y = _problem(8, n=36, p=4)
    sel = select_features_xy(X, y, list("abcd"), loss="squared", tau=None, repeats=1, folds=3, n_lambda=10)
    i = sel.sparsest_nonempty()
    assert sel.path[i].nonzero_count > 0
    assert all(pt.nonzero_count == 0 for pt in sel.path[:i])


def test_sklearn_wrappers():
    X, y = _problem(10)
    q = L1QuantileRegressor(tau=0.5, alpha=0.0).fit(X, y)
    s = L1SquaredRegressor(alpha=0.0).fit(X, y)
    assert q.predict(X).shape == (30,)
    assert np.allclose(s.coef_, np.linalg.lstsq(np.c_[np.ones(30), X], y, rcond=None)[0][1:], atol=1e-5)
    assert np.allclose(s.predict(X), s.intercept_ + X @ s.coef_)


def test_input_validation():
    X, y = _problem(11)
    with pytest.raises(ValidationError):
        select_features_xy(X, y, list("abcd"), loss="hinge")
    with pytest.raises(ValueError):
        fit_l1_pinball(X, y, 1.5, 0.1)
    Xn = X.copy()
    Xn[0, 0] = np.nan
    with pytest.raises(ValueError):
        fit_l1_squared(Xn, y, 0.1)
