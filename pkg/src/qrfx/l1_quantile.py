"""L1-penalised linear regression under pinball or squared loss.

Both solvers minimise the penalised form on z-scored features,

    (1/n) sum_i loss(y_i - b0 - x_i . beta) + lam * ||beta||_1

with ``loss`` the pinball function (``fit_l1_pinball``) or half the squared
error (``fit_l1_squared``).  The L1 budget of a fit is reported as
``l1_norm``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ._seeding import derive_seed, make_rng
from .cv import make_folds
from .metrics import pinball
from .utils.validation import (ValidationError, check_finite_X, check_finite_y, check_nonneg,
                               check_tau)

SMOOTHING = (1e-2, 1e-3, 1e-4, 1e-5, 1e-6)
NONZERO_TOL = 1e-8


# -- kernels ---------------------------------------------------------------

@njit(cache=True)
def _pinball_coord(a, c, tau, h, lam, pos, slope_delta):
    """argmin_b (1/n) sum rho_h(c_i - a_i b) + lam |b| for the smoothed loss.

    The derivative of the smooth part is piecewise linear in b with at most
    2n kinks, so the root is found exactly by sweeping sorted kinks.
    """
    n = a.shape[0]
    half = tau - 0.5
    g0 = 0.0
    for i in range(n):
        u = c[i] / h
        if u > 1.0:
            u = 1.0
        elif u < -1.0:
            u = -1.0
        g0 -= a[i] * (half + 0.5 * u)
    g0 /= n
    if abs(g0) <= lam:
        return 0.0
    target = -lam if g0 < 0 else lam
    m = 0
    val = 0.0
    for i in range(n):
        ai = a[i]
        if ai == 0.0:
            continue
        lo = (c[i] - h) / ai
        hi = (c[i] + h) / ai
        if lo > hi:
            lo, hi = hi, lo
        val -= ai * half + 0.5 * abs(ai)
        s = ai * ai / (2.0 * h * n)
        pos[m] = lo
        slope_delta[m] = s
        pos[m + 1] = hi
        slope_delta[m + 1] = -s
        m += 2
    val /= n
    order = np.argsort(pos[:m], kind="mergesort")
    slope = 0.0
    x = -np.inf
    for k in order:
        p = pos[k]
        if slope > 0.0:
            nxt = val + slope * (p - x)
            if nxt >= target:
                return x + (target - val) / slope
            val = nxt
        x = p
        slope += slope_delta[k]
    return x


@njit(cache=True)
def _pinball_cd(X, y, tau, lam, h, beta0, beta, max_sweeps, tol):
    n, p = X.shape
    r = y - beta0[0] - X @ beta
    ones = np.ones(n)
    c = np.empty(n)
    pos = np.empty(2 * n)
    sd = np.empty(2 * n)
    col = np.empty(n)
    for sweep in range(max_sweeps):
        delta = 0.0
        for i in range(n):
            c[i] = r[i] + beta0[0]
        b = _pinball_coord(ones, c, tau, h, 0.0, pos, sd)
        if b != beta0[0]:
            delta = max(delta, abs(b - beta0[0]))
            for i in range(n):
                r[i] = c[i] - b
            beta0[0] = b
        for j in range(p):
            bj = beta[j]
            for i in range(n):
                col[i] = X[i, j]
                c[i] = r[i] + X[i, j] * bj
            b = _pinball_coord(col, c, tau, h, lam, pos, sd)
            if b != bj:
                delta = max(delta, abs(b - bj))
                for i in range(n):
                    r[i] = c[i] - X[i, j] * b
                beta[j] = b
        if delta <= tol:
            return sweep + 1
    return max_sweeps


@njit(cache=True)
def _lasso_cd(X, y, lam, beta, col_sq, max_sweeps, tol):
    """Cyclic soft-thresholding on column-centred X and centred y."""
    n, p = X.shape
    r = y - X @ beta
    for sweep in range(max_sweeps):
        delta = 0.0
        for j in range(p):
            if col_sq[j] == 0.0:
                continue
            bj = beta[j]
            rho = 0.0
            for i in range(n):
                rho += X[i, j] * r[i]
            rho = rho / n + col_sq[j] * bj
            if rho > lam:
                b = (rho - lam) / col_sq[j]
            elif rho < -lam:
                b = (rho + lam) / col_sq[j]
            else:
                b = 0.0
            if b != bj:
                d = b - bj
                for i in range(n):
                    r[i] -= X[i, j] * d
                beta[j] = b
                delta = max(delta, abs(d))
        if delta <= tol:
            return sweep + 1
    return max_sweeps


# -- interior point ---------------------------------------------------------

def _rq_ipm(A, y, w, tau, tol=1e-12, max_iter=100):
    """Weighted quantile regression ``min_theta sum w_i rho_tau(y_i - A_i theta)``.

    Primal-dual predictor-corrector on the bounded dual
    ``max y'z  s.t.  A'z = (1 - tau) A'w,  0 <= z <= w``; the equality
    multipliers are the regression coefficients.  Each step solves a
    k x k system with k = A.shape[1].
    """
    N, k = A.shape
    z = (1.0 - tau) * w
    s = w - z
    b = A.T @ z
    theta = np.linalg.lstsq(A * np.sqrt(w)[:, None], y * np.sqrt(w), rcond=None)[0]
    r = y - A @ theta
    scale = max(float(np.mean(np.abs(r))), 1e-8)
    g = np.maximum(r, 0.0) + 0.1 * scale
    f = np.maximum(-r, 0.0) + 0.1 * scale

    def step_len(v, dv):
        neg = dv < 0
        return min(1.0, float(np.min(-v[neg] / dv[neg]))) if neg.any() else 1.0

    for _ in range(max_iter):
        gap = float(z @ f + s @ g)
        if gap <= tol * (1.0 + abs(float(y @ z))):
            break
        r_p = b - A.T @ z
        r_d = y - A @ theta - g + f
        Qi = 1.0 / (f / z + g / s)
        M = (A * Qi[:, None]).T @ A

        def direction(cz, cs):
            # cz, cs: right-hand sides of the two complementarity rows
            q = r_d - cs / s + cz / z
            dth = np.linalg.solve(M, A.T @ (Qi * q) - r_p)
            dz = Qi * (q - A @ dth)
            ds = -dz
            df = (cz - f * dz) / z
            dg = (cs - g * ds) / s
            return dz, ds, dth, df, dg

        dz, ds, dth, df, dg = direction(-z * f, -s * g)
        ap = min(step_len(z, dz), step_len(s, ds))
        ad = min(step_len(f, df), step_len(g, dg))
        mu = gap / (2 * N)
        mu_aff = float((z + ap * dz) @ (f + ad * df) + (s + ap * ds) @ (g + ad * dg)) / (2 * N)
        sigma = (mu_aff / mu) ** 3
        dz, ds, dth, df, dg = direction(sigma * mu - z * f - dz * df, sigma * mu - s * g - ds * dg)
        ap = 0.99995 * min(step_len(z, dz), step_len(s, ds))
        ad = 0.99995 * min(step_len(f, df), step_len(g, dg))
        z = z + ap * dz
        s = s + ap * ds
        theta = theta + ad * dth
        f = f + ad * df
        g = g + ad * dg
    return theta


def _crossover(Z, y, tau, lam, theta):
    """Snap an interior solution to the nearest basic solution, if no worse."""
    n, p = Z.shape
    k = p + 1
    rows = np.c_[np.ones(n), Z]
    cand = rows
    targets = y
    if lam > 0:
        cand = np.vstack([rows, np.c_[np.zeros(p), np.eye(p)]])
        targets = np.r_[y, np.zeros(p)]
    if cand.shape[0] < k:
        return theta
    res = np.abs(targets - cand @ theta)
    basis = np.argsort(res, kind="mergesort")[:k]
    B = cand[basis]
    if np.linalg.cond(B) > 1e10:
        return theta
    snapped = np.linalg.solve(B, targets[basis])
    snapped[1 + basis[basis >= n] - n] = 0.0  # pseudo-rows pin these slopes at zero
    return snapped


def _pinball_exact(Z, y, tau, lam):
    """Exact penalised fit: each |beta_j| becomes two zero-target pseudo-rows of weight lam."""
    n, p = Z.shape
    A = np.c_[np.ones(n), Z]
    t = y
    w = np.full(n, 1.0 / n)
    if lam > 0:
        eye = np.c_[np.zeros(p), np.eye(p)]
        A = np.vstack([A, eye, -eye])
        t = np.r_[y, np.zeros(2 * p)]
        w = np.r_[w, np.full(2 * p, lam)]
    theta = _rq_ipm(A, t, w, tau)
    obj = _pinball_objective(Z, y, tau, lam, theta[0], theta[1:])
    snapped = _crossover(Z, y, tau, lam, theta)
    if _pinball_objective(Z, y, tau, lam, snapped[0], snapped[1:]) <= obj + 1e-13 * (1.0 + obj):
        theta = snapped
    return float(theta[0]), np.ascontiguousarray(theta[1:])


# -- model -----------------------------------------------------------------

def standardize_stats(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Column means and population SDs; constant columns get SD 1."""
    mean = X.mean(axis=0)
    sd = X.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    return mean, sd


def quantile_intercept(residuals: np.ndarray, tau: float) -> float:
    """Order statistic ``r_(ceil(n tau))``, the lower minimiser of the pinball sum."""
    r = np.sort(np.asarray(residuals, dtype=float))
    k = max(1, int(math.ceil(r.shape[0] * tau - 1e-9)))
    return float(r[k - 1])


@dataclass
class LinearQuantileModel:
    """Affine predictor on standardized features.

    ``beta0`` and ``beta`` act on ``(x - mean) / scale``; ``coef`` and
    ``intercept`` give the same predictor on raw features.
    """

    beta0: float
    beta: np.ndarray
    tau: float | None
    lam: float
    mean: np.ndarray
    scale: np.ndarray
    loss: str = "pinball"
    feature_names: list[str] | None = None
    n_sweeps: int = 0

    @property
    def l1_norm(self) -> float:
        return float(np.sum(np.abs(self.beta)))

    @property
    def coef(self) -> np.ndarray:
        return self.beta / self.scale

    @property
    def intercept(self) -> float:
        return float(self.beta0 - np.dot(self.mean, self.coef))

    def nonzero(self, tol: float = NONZERO_TOL) -> np.ndarray:
        return np.flatnonzero(np.abs(self.beta) > tol)

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return self.beta0 + ((X - self.mean) / self.scale) @ self.beta

    def objective(self, X, y) -> float:
        """Penalised training objective of this fit on raw ``X``."""
        u = np.asarray(y, dtype=float) - self.predict(X)
        pen = self.lam * self.l1_norm
        if self.loss == "pinball":
            return pinball(u, self.tau) + pen
        return 0.5 * float(np.mean(u ** 2)) + pen


def _prepare(X, y, standardize):
    X = check_finite_X(X)
    y = check_finite_y(y, X.shape[0])
    if standardize:
        mean, scale = standardize_stats(X)
    else:
        mean, scale = np.zeros(X.shape[1]), np.ones(X.shape[1])
    Z = np.ascontiguousarray((X - mean) / scale)
    return Z, y, mean, scale


def _anneal(Z, y, tau, lam, beta0, beta, smoothing, max_sweeps, tol):
    b0 = np.array([beta0], dtype=float)
    sweeps = 0
    for h in smoothing:
        sweeps += _pinball_cd(Z, y, tau, lam, h, b0, beta, max_sweeps, tol)
    b0 = quantile_intercept(y - Z @ beta, tau)
    return b0, sweeps


def _pinball_objective(Z, y, tau, lam, b0, beta):
    return pinball(y - b0 - Z @ beta, tau) + lam * float(np.sum(np.abs(beta)))


def fit_l1_pinball(X, y, tau: float, lam: float, seed: int = 0, *, standardize: bool = True,
                   solver: str = "ipm", restarts: int = 0, smoothing=SMOOTHING,
                   max_sweeps: int = 500, tol: float = 1e-10, init: np.ndarray | None = None,
                   feature_names=None) -> LinearQuantileModel:
    """L1-penalised quantile regression.

    Parameters
    ----------
    solver : {"ipm", "cd"}
        ``"ipm"`` solves the linear program exactly with an interior-point
        method followed by a snap to the nearest vertex, so inactive slopes
        are exactly zero.  ``"cd"`` runs coordinate descent on a
        Huber-smoothed pinball loss whose width is annealed through
        ``smoothing``; it is cheap per sweep but can stall short of the
        optimum when the width gets small.
    restarts : int
        ``"cd"`` only: extra runs from random starts drawn from ``seed``,
        keeping the lowest objective.
    init : array, optional
        ``"cd"`` only: starting slopes on the standardized scale.

    Either way the intercept is finally reset to the exact pinball
    minimiser given the slopes.
    """
    tau = check_tau(tau)
    lam = check_nonneg("lam", lam)
    Z, y, mean, scale = _prepare(X, y, standardize)
    p = Z.shape[1]
    sweeps = 0
    if solver == "ipm":
        _, beta = _pinball_exact(Z, y, tau, lam)
        b0 = quantile_intercept(y - Z @ beta, tau)
    elif solver == "cd":
        beta = np.zeros(p) if init is None else np.array(init, dtype=float)
        b0, sweeps = _anneal(Z, y, tau, lam, quantile_intercept(y, tau), beta, smoothing,
                             max_sweeps, tol)
        best = (_pinball_objective(Z, y, tau, lam, b0, beta), b0, beta)
        for r in range(int(restarts)):
            rng = make_rng(seed, "l1-restart", r)
            start = rng.normal(scale=float(np.std(y)) or 1.0, size=p)
            b0r, _ = _anneal(Z, y, tau, lam, float(rng.normal(np.mean(y))), start, smoothing,
                             max_sweeps, tol)
            obj = _pinball_objective(Z, y, tau, lam, b0r, start)
            if obj < best[0]:
                best = (obj, b0r, start)
        _, b0, beta = best
    else:
        raise ValidationError(f"unknown solver {solver!r}")
    return LinearQuantileModel(beta0=b0, beta=beta, tau=tau, lam=lam, mean=mean, scale=scale,
                               loss="pinball", feature_names=feature_names, n_sweeps=sweeps)


def fit_l1_squared(X, y, lam: float, seed: int = 0, *, standardize: bool = True,
                   max_sweeps: int = 100_000, tol: float = 1e-8, init=None,
                   feature_names=None) -> LinearQuantileModel:
    """Lasso by cyclic coordinate descent (``seed`` is accepted for API symmetry)."""
    del seed
    lam = check_nonneg("lam", lam)
    Z, y, mean, scale = _prepare(X, y, standardize)
    zc = Z.mean(axis=0)
    yc = float(y.mean())
    Zc = np.ascontiguousarray(Z - zc)
    col_sq = (Zc ** 2).mean(axis=0)
    beta = np.zeros(Z.shape[1]) if init is None else np.array(init, dtype=float)
    sweeps = _lasso_cd(Zc, y - yc, lam, beta, col_sq, max_sweeps, tol)
    beta0 = yc - float(zc @ beta)
    return LinearQuantileModel(beta0=beta0, beta=beta, tau=None, lam=lam, mean=mean, scale=scale,
                               loss="squared", feature_names=feature_names, n_sweeps=sweeps)


def lambda_max(X, y, tau: float | None = None, loss: str = "pinball", standardize: bool = True) -> float:
    """Smallest penalty at which the all-zero slope vector is optimal.

    For pinball loss, residuals that are exactly zero at the intercept-only
    fit may take any subgradient in ``[tau - 1, tau]``; both extremes are
    checked, which gives a value at or slightly above the exact threshold.
    """
    Z, y, _, _ = _prepare(X, y, standardize)
    n = Z.shape[0]
    if loss == "squared":
        return float(np.max(np.abs(Z.T @ (y - y.mean()))) / n)
    tau = check_tau(tau)
    r = y - quantile_intercept(y, tau)
    g = np.where(r > 0, tau, tau - 1.0)
    zero = r == 0
    g_hi = np.where(zero, tau, g)
    g_lo = np.where(zero, tau - 1.0, g)
    return float(max(np.max(np.abs(Z.T @ g_hi)), np.max(np.abs(Z.T @ g_lo))) / n)


def lambda_grid(lam_max: float, n_points: int = 60, ratio: float = 1e-3) -> np.ndarray:
    if lam_max <= 0:
        lam_max = 1e-12
    return np.geomspace(lam_max, lam_max * ratio, int(n_points))


def fit_path(X, y, lambdas, loss: str = "pinball", tau: float | None = None,
             standardize: bool = True, **kw) -> list[LinearQuantileModel]:
    """One fit per penalty; squared-loss fits warm-start from the previous one."""
    out = []
    init = None
    for lam in lambdas:
        if loss == "pinball":
            m = fit_l1_pinball(X, y, tau, lam, standardize=standardize, **kw)
        elif loss == "squared":
            m = fit_l1_squared(X, y, lam, standardize=standardize, init=init, **kw)
        else:
            raise ValidationError(f"unknown loss {loss!r}")
        init = m.beta.copy()
        out.append(m)
    return out


# -- selection -------------------------------------------------------------

@dataclass
class PathPoint:
    lam: float
    s: float
    mean_cv_loss: float
    mean_coefficients: np.ndarray
    nonzero_count: int

    @property
    def mean_cv_pinball(self) -> float:
        return self.mean_cv_loss


@dataclass
class SelectionResult:
    path: list[PathPoint]
    best_index: int
    features: list[str]
    feature_names: list[str]
    loss: str
    tau: float | None
    fold_losses: np.ndarray = field(repr=False, default=None)

    @property
    def best(self) -> PathPoint:
        return self.path[self.best_index]

    def features_at(self, index: int) -> list[str]:
        coef = self.path[index].mean_coefficients
        return [n for n, c in zip(self.feature_names, coef) if abs(c) > NONZERO_TOL]

    def sparsest_nonempty(self) -> int | None:
        """Index of the largest penalty that keeps at least one feature."""
        return next((i for i, pt in enumerate(self.path) if pt.nonzero_count > 0), None)

    def to_rows(self) -> list[dict]:
        rows = []
        for pt in self.path:
            row = {"lambda": pt.lam, "s": pt.s, "mean_loss": pt.mean_cv_loss,
                   "nonzero_count": pt.nonzero_count}
            row.update({name: float(c) for name, c in zip(self.feature_names, pt.mean_coefficients)})
            rows.append(row)
        return rows


def select_features_xy(X, y, feature_names, tau: float | None = 0.9, loss: str = "pinball",
                       grid=None, repeats: int = 10, folds: int = 3, seed: int = 0,
                       n_lambda: int = 60, ratio: float = 1e-3) -> SelectionResult:
    """Repeated k-fold CV over a penalty grid; see :func:`select_features`."""
    X = check_finite_X(X)
    y = check_finite_y(y, X.shape[0])
    if loss not in ("pinball", "squared"):
        raise ValidationError(f"unknown loss {loss!r}")
    if loss == "pinball":
        tau = check_tau(tau)
    if grid is None:
        grid = lambda_grid(lambda_max(X, y, tau, loss), n_lambda, ratio)
    lambdas = np.sort(np.asarray(grid, dtype=float))[::-1]
    if lambdas.size == 0:
        raise ValidationError("penalty grid is empty")
    if np.any(lambdas < 0) or not np.all(np.isfinite(lambdas)):
        raise ValidationError("penalties must be finite and non-negative")
    L, p = lambdas.shape[0], X.shape[1]
    losses = np.zeros((L, repeats * folds))
    coefs = np.zeros((L, p))
    fit_no = 0
    for r in range(repeats):
        plan = make_folds(X.shape[0], folds, derive_seed(seed, "select", r))
        for tr, te in plan:
            models = fit_path(X[tr], y[tr], lambdas, loss=loss, tau=tau)
            for li, m in enumerate(models):
                u = y[te] - m.predict(X[te])
                losses[li, fit_no] = pinball(u, tau) if loss == "pinball" else float(np.mean(u ** 2))
                coefs[li] += m.beta
            fit_no += 1
    coefs /= fit_no
    mean_loss = losses.mean(axis=1)
    path = []
    for li in range(L):
        c = coefs[li]
        path.append(PathPoint(lam=float(lambdas[li]), s=float(np.sum(np.abs(c))),
                              mean_cv_loss=float(mean_loss[li]), mean_coefficients=c,
                              nonzero_count=int(np.sum(np.abs(c) > NONZERO_TOL))))
    best = int(np.argmin(mean_loss))
    chosen = [feature_names[j] for j in np.flatnonzero(np.abs(coefs[best]) > NONZERO_TOL)]
    return SelectionResult(path=path, best_index=best, features=chosen,
                           feature_names=list(feature_names), loss=loss,
                           tau=tau if loss == "pinball" else None, fold_losses=losses)


def select_features(d, target: str, tau: float | None = 0.9, loss: str = "pinball", grid=None,
                    repeats: int = 10, folds: int = 3, seed: int = 0, **kw) -> SelectionResult:
    """Pick features at the penalty with the lowest repeated-CV loss.

    For every penalty the held-out loss (mean pinball, or MSE for squared
    loss) is averaged over ``repeats`` x ``folds`` fits, as are the
    standardized coefficients.  The chosen features are those whose
    averaged coefficient is nonzero at the best penalty.  ``d`` must have
    no missing feature or target cells.
    """
    names = [n for n in d.feature_names]
    if d.missing[:, [d.index(n) for n in names + [target]]].any():
        raise ValidationError("select_features needs a fully imputed dataset")
    X = d.to_array(names)
    y = d.column(target)
    return select_features_xy(X, y, names, tau=tau, loss=loss, grid=grid, repeats=repeats,
                              folds=folds, seed=seed, **kw)


# -- estimators ------------------------------------------------------------

class L1QuantileRegressor(RegressorMixin, BaseEstimator):
    """sklearn wrapper around :func:`fit_l1_pinball`.

    Parameters
    ----------
    tau : float, default=0.9
    alpha : float, default=0.01
        L1 penalty on the standardized slopes.
    standardize : bool, default=True
    """

    def __init__(self, tau=0.9, alpha=0.01, standardize=True):
        self.tau = tau
        self.alpha = alpha
        self.standardize = standardize

    def fit(self, X, y):
        self.model_ = fit_l1_pinball(X, y, self.tau, self.alpha, standardize=self.standardize)
        self.coef_ = self.model_.coef
        self.intercept_ = self.model_.intercept
        self.n_features_in_ = self.coef_.shape[0]
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        return self.model_.predict(check_finite_X(X))


class L1SquaredRegressor(RegressorMixin, BaseEstimator):
    """Lasso on standardized features (:func:`fit_l1_squared`)."""

    def __init__(self, alpha=0.01, standardize=True):
        self.alpha = alpha
        self.standardize = standardize

    def fit(self, X, y):
        self.model_ = fit_l1_squared(X, y, self.alpha, standardize=self.standardize)
        self.coef_ = self.model_.coef
        self.intercept_ = self.model_.intercept
        self.n_features_in_ = self.coef_.shape[0]
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        return self.model_.predict(check_finite_X(X))
